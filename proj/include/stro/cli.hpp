#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace stro {

/// `git describe` of the build, or "unknown".
const char* version();

inline constexpr const char* kAggregateCsvSchema = "stro_aggregate_v1";
inline constexpr const char* kTraceCsvSchema = "tabular_trace_v1";

/// Exit codes: 0 success, 1 a check failed, 2 bad input.
int cmd_tabular(const std::string& config_path, const std::string& out_dir, bool check_lemmas, std::ostream& out,
                std::ostream& err);

struct StroRunOptions {
  std::string config_path;
  std::optional<std::vector<std::uint64_t>> seeds;  ///< overrides the config's seed list
  std::string out_dir = "out";
};
int cmd_stro(const StroRunOptions& options, std::ostream& out, std::ostream& err);

int cmd_verify(bool mutate_gae, std::ostream& out);

/// "1,2,3" -> {1, 2, 3}; throws std::invalid_argument on malformed input.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

int run_cli(int argc, char** argv);

}  // namespace stro
