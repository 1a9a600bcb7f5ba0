// phylova command-line tool: fit | simulate | ordering-scan | benchmark

#include <CLI11.hpp>
#include <iostream>

#include "phylova/cli.hpp"
#include "phylova/error.hpp"
#include "phylova/parallel.hpp"

using namespace phylova;

namespace {

struct FitFlags {
  std::string rule = "nngp";
  std::string ordering = "tips";
  std::string ar = "unstructured";
};

void add_fit_flags(CLI::App* app, FitConfig& cfg, FitFlags& flags) {
  app->add_option("--nn", cfg.nn, "Neighbours per species")->capture_default_str();
  app->add_option("--rule", flags.rule, "Conditioning rule")
      ->check(CLI::IsMember({"nngp", "band"}))
      ->capture_default_str();
  app->add_option("--ordering", flags.ordering, "Species ordering")
      ->check(CLI::IsMember({"tips", "alphabetical", "distance", "root", "eigen", "sumsq", "identity"}))
      ->capture_default_str();
  app->add_option("--rank", cfg.rank, "Rank d of the variational species covariance")->capture_default_str();
  app->add_option("--ar", flags.ar, "Variational covariate covariance")
      ->check(CLI::IsMember({"unstructured", "diagonal"}))
      ->capture_default_str();
  app->add_flag("--shared-signal,!--no-shared-signal", cfg.shared_signal, "One rho for all covariates");
  app->add_flag("--sr-identity", cfg.sr_identity, "Fix the covariate correlation at I");
  app->add_flag("--repulsion", cfg.repulsion, "Use the normalised inverse of C");
  app->add_option("--max-iter", cfg.max_iterations, "Optimizer iteration limit")->capture_default_str();
  app->add_option("--grad-tol", cfg.grad_tol, "Gradient tolerance (times parameter count)")->capture_default_str();
  app->add_option("--rel-tol", cfg.rel_tol, "Relative objective tolerance")->capture_default_str();
  app->add_option("--memory", cfg.memory, "L-BFGS memory")->capture_default_str();
}

void apply_fit_flags(FitConfig& cfg, const FitFlags& flags, std::uint64_t seed) {
  cfg.rule = parse_rule(flags.rule);
  cfg.ordering = parse_ordering(flags.ordering);
  cfg.ar = flags.ar == "diagonal" ? ArStructure::diagonal : ArStructure::unstructured;
  cfg.seed = seed;
}

const std::vector<std::string> kFamilies{"bernoulli", "poisson"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phylogenetic mixed models fitted with sparse variational approximations"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Key-value configuration file; command-line flags take precedence");
  std::uint64_t seed = 1;
  int threads = 1;
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  // fit
  FitOptions fit_opts;
  FitFlags fit_flags;
  std::string fit_family = "bernoulli";
  auto* fit = app.add_subcommand("fit", "Fit a model to community data");
  fit->add_option("--y", fit_opts.y_path, "Responses CSV (sites x species)")->required();
  fit->add_option("--x", fit_opts.x_path, "Covariates CSV (sites x covariates)")->required();
  fit->add_option("--traits", fit_opts.traits_path, "Traits CSV (species x traits)");
  fit->add_option("--tree", fit_opts.tree_path, "Newick tree")->required();
  fit->add_option("--out", fit_opts.out_dir, "Output directory")->capture_default_str();
  fit->add_option("--family", fit_family, "Response family")->check(CLI::IsMember(kFamilies))->capture_default_str();
  fit->add_option("--link", fit_opts.link, "Link function (probit, logit, log)");
  fit->add_flag("--intercept,!--no-intercept", fit_opts.intercept, "Prepend an intercept column (default on)");
  fit->add_flag("--standard-errors", fit_opts.fit.standard_errors, "Compute Hessian standard errors");
  add_fit_flags(fit, fit_opts.fit, fit_flags);

  // ordering-scan
  ScanOptions scan_opts;
  auto* scan = app.add_subcommand("ordering-scan", "Approximation error across orderings, rules and nn");
  scan->add_option("--tree", scan_opts.tree_path, "Newick tree (default: simulated)");
  scan->add_option("--tips", scan_opts.simulate_tips, "Tips of the simulated tree")->capture_default_str();
  scan->add_option("--nn", scan_opts.nn_values, "nn grid")->delimiter(',');
  scan->add_flag("--full,!--no-full", scan_opts.include_full, "Add full conditioning, nn = m - 1 (default on)");
  scan->add_option("--out", scan_opts.out_dir, "Output directory")->capture_default_str();

  // simulate
  SimulateOptions sim_opts;
  sim_opts.study.replicates = 30;
  sim_opts.study.fit.shared_signal = true;
  FitFlags sim_flags;
  std::string sim_family = "bernoulli";
  std::vector<std::string> sim_ar{"unstructured"};
  std::vector<std::string> sim_rules{"nngp"};
  auto* sim = app.add_subcommand("simulate", "Simulation study of signal recovery");
  auto& proto = sim_opts.study.protocol;
  sim->add_option("--n", proto.n, "Sites")->capture_default_str();
  sim->add_option("--p", proto.p, "Slope covariates")->capture_default_str();
  sim->add_option("--rho", proto.rho, "True signal")->capture_default_str();
  sim->add_option("--wishart-scale", proto.wishart_scale, "Wishart scale multiplier")->capture_default_str();
  sim->add_flag("--intercept", proto.intercept, "Include an intercept column");
  sim->add_option("--family", sim_family, "Response family")->check(CLI::IsMember(kFamilies))->capture_default_str();
  sim->add_option("--m", sim_opts.study.m_values, "Species grid")->delimiter(',');
  sim->add_option("--nn-grid", sim_opts.study.nn_values, "nn grid")->delimiter(',');
  sim->add_option("--ranks", sim_opts.study.rank_values, "Rank grid")->delimiter(',');
  sim->add_option("--ar-grid", sim_ar, "Ar structures")->delimiter(',');
  sim->add_option("--rules", sim_rules, "Conditioning rules")->delimiter(',');
  sim->add_option("--replicates", sim_opts.study.replicates, "Replicates per condition")->capture_default_str();
  sim->add_option("--out", sim_opts.out_dir, "Output directory")->capture_default_str();
  add_fit_flags(sim, sim_opts.study.fit, sim_flags);

  // benchmark
  BenchmarkOptions bench_opts;
  bench_opts.fit.shared_signal = true;
  FitFlags bench_flags;
  std::string bench_family = "bernoulli";
  std::vector<std::string> bench_ar{"unstructured"};
  auto* bench = app.add_subcommand("benchmark", "Fit timing across variational ranks");
  bench->add_option("--n", bench_opts.protocol.n, "Sites")->capture_default_str();
  bench->add_option("--m", bench_opts.protocol.m, "Species")->capture_default_str();
  bench->add_option("--p", bench_opts.protocol.p, "Slope covariates")->capture_default_str();
  bench->add_option("--rho", bench_opts.protocol.rho, "True signal")->capture_default_str();
  bench->add_option("--family", bench_family, "Response family")->check(CLI::IsMember(kFamilies))->capture_default_str();
  bench->add_option("--ranks", bench_opts.ranks, "Rank grid")->delimiter(',');
  bench->add_option("--ar-grid", bench_ar, "Ar structures")->delimiter(',');
  bench->add_option("--replicates", bench_opts.replicates, "Replicates per rank")->capture_default_str();
  bench->add_option("--out", bench_opts.out_dir, "Output directory")->capture_default_str();
  add_fit_flags(bench, bench_opts.fit, bench_flags);

  CLI11_PARSE(app, argc, argv);
  set_num_threads(threads);

  auto ar_list = [](const std::vector<std::string>& names) {
    std::vector<ArStructure> out;
    for (const auto& s : names) {
      if (s != "unstructured" && s != "diagonal") throw InvalidArgument("unknown Ar structure '" + s + "'");
      out.push_back(s == "diagonal" ? ArStructure::diagonal : ArStructure::unstructured);
    }
    return out;
  };

  try {
    if (*fit) {
      apply_fit_flags(fit_opts.fit, fit_flags, seed);
      fit_opts.family = parse_family(fit_family);
      return cmd_fit(fit_opts, std::cerr);
    }
    if (*scan) {
      scan_opts.seed = seed;
      return cmd_ordering_scan(scan_opts, std::cerr);
    }
    if (*sim) {
      apply_fit_flags(sim_opts.study.fit, sim_flags, seed);
      proto.family = parse_family(sim_family);
      proto.link = default_link(proto.family);
      proto.seed = seed;
      sim_opts.study.ar_values = ar_list(sim_ar);
      sim_opts.study.rules.clear();
      for (const auto& r : sim_rules) sim_opts.study.rules.push_back(parse_rule(r));
      return cmd_simulate(sim_opts, std::cerr);
    }
    if (*bench) {
      apply_fit_flags(bench_opts.fit, bench_flags, seed);
      bench_opts.protocol.family = parse_family(bench_family);
      bench_opts.protocol.link = default_link(bench_opts.protocol.family);
      bench_opts.protocol.seed = seed;
      bench_opts.ar_values = ar_list(bench_ar);
      return cmd_benchmark(bench_opts, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDataMismatch;
  }
  return kExitFailure;
}
