#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace stro {

struct VerifyOptions {
  bool mutate_gae = false;  ///< inject a sign flip into GAE; the GAE oracle must then fail
  std::uint64_t seed = 7;
};

struct CheckResult {
  std::string name;
  double tolerance = 0.0;
  double observed = 0.0;  ///< worst error (or violation) seen
  bool pass = false;
  std::string detail;
};

/// Property and oracle checks over every module.
std::vector<CheckResult> run_verification(const VerifyOptions& options = {});

/// One row per check: name, tolerance, observed, PASS/FAIL, detail.
void print_check_table(std::ostream& out, const std::vector<CheckResult>& checks);

}  // namespace stro
