#include "stro/cli.hpp"

#include "stro/envs.hpp"
#include "stro/serialization.hpp"
#include "stro/stro.hpp"
#include "stro/tabular_tr.hpp"
#include "stro/verification.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#ifndef STRO_VERSION
#define STRO_VERSION "unknown"
#endif

namespace fs = std::filesystem;

namespace stro {

const char* version() { return STRO_VERSION; }

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("malformed seed list: '" + text + "'");
    }
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  return seeds;
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) throw std::invalid_argument(what + ": unknown key '" + item.key() + "'");
  }
}

Mdp tabular_mdp_from_config(const json& cfg) {
  int sources = 0;
  for (const char* k : {"mdp", "env", "random_mdp"}) sources += cfg.contains(k) ? 1 : 0;
  if (sources != 1) throw std::invalid_argument("config needs exactly one of 'mdp', 'env', 'random_mdp'");
  if (cfg.contains("mdp")) return mdp_from_json(cfg.at("mdp"));
  if (cfg.contains("env")) {
    const auto env = make_env(env_config_from_json(cfg.at("env")));
    return env->exact_mdp();
  }
  const json& r = cfg.at("random_mdp");
  check_keys(r, {"n_states", "n_actions", "discount", "seed"}, "random_mdp");
  return random_mdp(r.at("n_states").get<Index>(), r.at("n_actions").get<Index>(), r.at("discount").get<double>(),
                    r.value("seed", std::uint64_t{0}));
}

using RecordColumn = std::function<double(const IterationRecord&)>;

const std::map<std::string, RecordColumn>& record_columns() {
  static const std::map<std::string, RecordColumn> cols = {
      {"eta_hat_old", [](const IterationRecord& r) { return r.eta_hat_old; }},
      {"eta_hat_trial", [](const IterationRecord& r) { return r.eta_hat_trial; }},
      {"sigma_eta", [](const IterationRecord& r) { return r.sigma_eta; }},
      {"L_improvement", [](const IterationRecord& r) { return r.L_improvement; }},
      {"ratio", [](const IterationRecord& r) { return r.ratio; }},
      {"mu", [](const IterationRecord& r) { return r.mu; }},
      {"delta", [](const IterationRecord& r) { return r.delta; }},
      {"grad_norm", [](const IterationRecord& r) { return r.grad_norm; }},
      {"entropy", [](const IterationRecord& r) { return r.entropy; }},
      {"kl_trial", [](const IterationRecord& r) { return r.kl_trial; }},
      {"buffer_size", [](const IterationRecord& r) { return static_cast<double>(r.buffer_size); }},
      {"env_steps", [](const IterationRecord& r) { return static_cast<double>(r.env_steps); }},
      {"exact_eta", [](const IterationRecord& r) { return r.exact_eta; }},
      {"exact_eta_next", [](const IterationRecord& r) { return r.exact_eta_next; }},
  };
  return cols;
}

const std::vector<std::string> kDefaultAggregateColumns = {"eta_hat_old", "exact_eta", "ratio", "mu",
                                                           "delta",       "entropy",   "env_steps"};

void write_aggregate_csv(const std::string& path, const std::vector<std::vector<IterationRecord>>& runs,
                         const std::vector<std::string>& columns) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "iter,n_seeds";
  for (const auto& c : columns) out << ",mean_" << c << ",std_" << c;
  out << '\n' << std::setprecision(17);
  std::size_t longest = 0;
  for (const auto& r : runs) longest = std::max(longest, r.size());
  for (std::size_t k = 0; k < longest; ++k) {
    std::vector<const IterationRecord*> rows;
    for (const auto& r : runs)
      if (k < r.size()) rows.push_back(&r[k]);
    out << k << ',' << rows.size();
    for (const auto& c : columns) {
      const auto& get = record_columns().at(c);
      double mean = 0.0;
      for (const auto* row : rows) mean += get(*row);
      mean /= static_cast<double>(rows.size());
      double sd = std::numeric_limits<double>::quiet_NaN();
      if (rows.size() > 1) {
        double ss = 0.0;
        for (const auto* row : rows) ss += (get(*row) - mean) * (get(*row) - mean);
        sd = std::sqrt(ss / static_cast<double>(rows.size() - 1));
      }
      out << ',' << mean << ',' << sd;
    }
    out << '\n';
  }
}

}  // namespace

int cmd_tabular(const std::string& config_path, const std::string& out_dir, bool check, std::ostream& out,
                std::ostream& err) {
  Mdp mdp = random_mdp(1, 1, 0.5, 0);
  TrConfig config;
  TabularPolicy init = TabularPolicy::uniform(1, 1);
  try {
    const json cfg = read_json_file(config_path);
    check_keys(cfg, {"mdp", "env", "random_mdp", "tabular", "init", "init_seed"}, "config");
    mdp = tabular_mdp_from_config(cfg);
    if (cfg.contains("tabular")) config = tr_config_from_json(cfg.at("tabular"));
    const std::string init_kind = cfg.value("init", std::string("uniform"));
    if (init_kind == "uniform") {
      init = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    } else if (init_kind == "random") {
      init = random_policy(mdp.n_states(), mdp.n_actions(), cfg.value("init_seed", std::uint64_t{0}));
    } else {
      throw std::invalid_argument("init: expected 'uniform' or 'random'");
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  const TrTrace trace = run(mdp, init, config);
  const double eta_star = value_iteration(mdp).eta_star;
  fs::create_directories(out_dir);
  {
    std::ofstream csv(fs::path(out_dir) / "trace.csv");
    write_trace_csv(csv, trace);
  }
  out << std::setprecision(12) << "eta=" << trace.final_eta << " eta_star=" << eta_star
      << " Astar=" << trace.final_Astar << " iterations=" << trace.records.size()
      << " converged=" << (trace.converged ? "yes" : "no") << '\n';

  if (!check) return 0;
  int failures = 0;
  out << "iter  improvement_slack  ratio_slack  feasibility_slack  result\n";
  for (const auto& c : check_lemmas(mdp, trace)) {
    out << std::setw(4) << c.iter << "  " << std::setw(17) << c.improvement_slack << "  " << std::setw(11)
        << c.ratio_slack << "  " << std::setw(17) << c.feasibility_slack << "  " << (c.ok ? "PASS" : "FAIL") << '\n';
    failures += c.ok ? 0 : 1;
  }
  out << "lemma checks: " << (failures == 0 ? "all pass" : std::to_string(failures) + " violations") << '\n';
  return failures == 0 ? 0 : 1;
}

int cmd_stro(const StroRunOptions& options, std::ostream& out, std::ostream& err) {
  EnvConfig env_cfg;
  StroConfig base;
  std::vector<std::uint64_t> seeds{0};
  int checkpoint_every = 0;
  std::vector<std::string> columns = kDefaultAggregateColumns;
  json snapshot;
  try {
    const json cfg = read_json_file(options.config_path);
    check_keys(cfg, {"env", "stro", "seeds", "checkpoint_every", "aggregate_columns"}, "config");
    if (cfg.contains("env")) env_cfg = env_config_from_json(cfg.at("env"));
    if (cfg.contains("stro")) base = stro_config_from_json(cfg.at("stro"));
    if (cfg.contains("seeds")) seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
    if (options.seeds) seeds = *options.seeds;
    if (seeds.empty()) throw std::invalid_argument("seed list is empty");
    checkpoint_every = cfg.value("checkpoint_every", 0);
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be nonnegative");
    if (cfg.contains("aggregate_columns")) columns = cfg.at("aggregate_columns").get<std::vector<std::string>>();
    for (const auto& c : columns) {
      if (record_columns().count(c) == 0) throw std::invalid_argument("unknown aggregate column '" + c + "'");
    }
    snapshot = {{"env", env_config_to_json(env_cfg)},
                {"stro", stro_config_to_json(base)},
                {"checkpoint_every", checkpoint_every},
                {"aggregate_columns", columns}};
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  const auto env = make_env(env_cfg);
  const auto family = default_policy_family(*env, base);
  const VectorXd theta0 = default_initial_theta(*family, base);
  const auto eta_star = env->optimal_eta();
  const fs::path root(options.out_dir);
  fs::create_directories(root);

  json manifest = {{"version", version()},
                   {"config", snapshot},
                   {"seeds", seeds},
                   {"schemas", {{"run_csv", kRunCsvSchema}, {"aggregate_csv", kAggregateCsvSchema}}},
                   {"layout",
                    {{"run_csv", "seed_<seed>/run.csv"},
                     {"checkpoints", "seed_<seed>/checkpoint_<iter>.json"},
                     {"final_policy", "seed_<seed>/final.json"},
                     {"aggregate_csv", "aggregate.csv"}}}};
  write_json_file((root / "manifest.json").string(), manifest);

  std::vector<std::vector<IterationRecord>> runs;
  for (const auto seed : seeds) {
    StroConfig config = base;
    config.seed = seed;
    const fs::path dir = root / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    std::ofstream csv(dir / "run.csv");
    write_run_csv_header(csv);
    const StroResult res = run_stro(*env, *family, theta0, config, [&](const IterationRecord& rec, const VectorXd& theta) {
      write_run_csv_row(csv, rec);
      if (checkpoint_every > 0 && (rec.iter + 1) % checkpoint_every == 0) {
        write_json_file((dir / ("checkpoint_" + std::to_string(rec.iter) + ".json")).string(),
                        checkpoint_to_json(*family, theta));
      }
    });
    write_json_file((dir / "final.json").string(), checkpoint_to_json(*family, res.final_theta));
    out << std::setprecision(10) << "seed " << seed << ": iterations=" << res.records.size()
        << " env_steps=" << res.env_steps << " initial_eta=" << res.initial_exact_eta
        << " final_eta=" << res.final_exact_eta;
    if (eta_star) out << " eta_star=" << *eta_star;
    out << '\n';
    runs.push_back(res.records);
  }
  write_aggregate_csv((root / "aggregate.csv").string(), runs, columns);
  return 0;
}

int cmd_verify(bool mutate_gae, std::ostream& out) {
  VerifyOptions options;
  options.mutate_gae = mutate_gae;
  const auto checks = run_verification(options);
  print_check_table(out, checks);
  int failed = 0;
  for (const auto& c : checks) failed += c.pass ? 0 : 1;
  out << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << '\n';
  return failed == 0 ? 0 : 1;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Trust-region policy optimization: exact tabular track and sampled STRO track"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string seeds_text;
  bool check_lemmas_flag = false;
  bool mutate_gae = false;

  auto* tab = app.add_subcommand("tabular", "Run the exact tabular trust-region method");
  tab->add_option("--config", config_path, "JSON config file")->required();
  tab->add_option("--out", out_dir, "Output directory");
  tab->add_flag("--check-lemmas", check_lemmas_flag, "Verify the per-iteration bounds");

  auto* sto = app.add_subcommand("stro", "Run the sampled trust-region method over a seed list");
  sto->add_option("--config", config_path, "JSON config file")->required();
  sto->add_option("--seeds", seeds_text, "Comma-separated seeds, overriding the config");
  sto->add_option("--out", out_dir, "Output directory");

  auto* ver = app.add_subcommand("verify", "Run the property and oracle checks");
  ver->add_flag("--mutate-gae", mutate_gae, "Inject a sign error into GAE (the GAE check must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*tab) return cmd_tabular(config_path, out_dir, check_lemmas_flag, std::cout, std::cerr);
    if (*sto) {
      StroRunOptions options;
      options.config_path = config_path;
      options.out_dir = out_dir;
      if (!seeds_text.empty()) options.seeds = parse_seed_list(seeds_text);
      return cmd_stro(options, std::cout, std::cerr);
    }
    return cmd_verify(mutate_gae, std::cout);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace stro
