#include "phylova/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "phylova/csv.hpp"
#include "phylova/error.hpp"
#include "phylova/parallel.hpp"
#include "phylova/simd.hpp"

namespace phylova {

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + items[i];
  return s;
}

std::map<std::string, Eigen::Index> index_labels(const std::vector<std::string>& labels, const std::string& what) {
  std::map<std::string, Eigen::Index> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!out.emplace(labels[i], static_cast<Eigen::Index>(i)).second)
      throw DimensionError("duplicate " + what + " '" + labels[i] + "'");
  return out;
}

// Labels of `want` missing from `have`.
std::vector<std::string> missing_from(const std::vector<std::string>& want, const std::map<std::string, Eigen::Index>& have) {
  std::vector<std::string> out;
  for (const auto& w : want)
    if (!have.count(w)) out.push_back(w);
  return out;
}

std::ofstream open_output(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / name).string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

const char* ar_name(ArStructure ar) { return ar == ArStructure::diagonal ? "diagonal" : "unstructured"; }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const FormatError*>(&e) || dynamic_cast<const std::filesystem::filesystem_error*>(&e))
    return kExitIo;
  if (dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const InvalidArgument*>(&e)) return kExitDataMismatch;
  return kExitFailure;
}

template <class Fn>
int guarded(std::ostream& log, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace

LoadedData load_data(const FitOptions& options) {
  LoadedData out;
  const LabeledMatrix y = read_labeled_matrix(options.y_path);
  const LabeledMatrix x = read_labeled_matrix(options.x_path);
  out.tree = read_newick_file(options.tree_path);
  out.corr = correlation_matrix(out.tree);

  const auto sites = index_labels(y.row_labels, "site");
  const auto x_sites = index_labels(x.row_labels, "site");
  const auto y_species = index_labels(y.col_labels, "species");
  const auto tips = index_labels(out.corr.labels, "tip");
  {
    const auto no_x = missing_from(y.row_labels, x_sites);
    const auto no_y = missing_from(x.row_labels, sites);
    if (!no_x.empty() || !no_y.empty())
      throw DimensionError("site mismatch between Y and X; without covariates: [" + join(no_x) +
                           "]; without responses: [" + join(no_y) + "]");
    const auto not_in_tree = missing_from(y.col_labels, tips);
    const auto no_data = missing_from(out.corr.labels, y_species);
    if (!not_in_tree.empty() || !no_data.empty())
      throw DimensionError("species mismatch between Y and the tree; not in tree: [" + join(not_in_tree) +
                           "]; tips without data: [" + join(no_data) + "]");
  }
  if (!x.complete()) throw InvalidArgument("X contains missing values");

  const auto n = static_cast<Eigen::Index>(y.row_labels.size());
  const auto m = static_cast<Eigen::Index>(out.corr.labels.size());
  ModelData& d = out.data;
  d.family = options.family;
  d.link = options.link.empty() ? default_link(options.family) : parse_link(options.link);
  d.species = out.corr.labels;
  d.y.resize(n, m);
  d.observed.resize(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::Index src = y_species.at(out.corr.labels[static_cast<std::size_t>(j)]);
    d.y.col(j) = y.values.col(src);
    d.observed.col(j) = y.present.col(src);
  }
  // replace missing responses by 0 so that every stored value is finite
  d.y = d.observed.select(d.y, 0.0);
  if (d.observed.all()) d.observed.resize(0, 0);

  const Eigen::Index px = static_cast<Eigen::Index>(x.col_labels.size());
  const Eigen::Index offset = options.intercept ? 1 : 0;
  d.x.resize(n, px + offset);
  if (options.intercept) {
    d.x.col(0).setOnes();
    d.covariates.push_back("intercept");
  }
  for (Eigen::Index i = 0; i < n; ++i) d.x.row(i).tail(px) = x.values.row(x_sites.at(y.row_labels[static_cast<std::size_t>(i)]));
  d.covariates.insert(d.covariates.end(), x.col_labels.begin(), x.col_labels.end());

  d.traits.resize(m, 0);
  if (!options.traits_path.empty()) {
    const LabeledMatrix t = read_labeled_matrix(options.traits_path);
    const auto t_species = index_labels(t.row_labels, "species");
    const auto absent = missing_from(out.corr.labels, t_species);
    if (!absent.empty()) throw DimensionError("species without traits: [" + join(absent) + "]");
    if (!t.complete()) throw InvalidArgument("T contains missing values");
    d.traits.resize(m, static_cast<Eigen::Index>(t.col_labels.size()));
    for (Eigen::Index j = 0; j < m; ++j) d.traits.row(j) = t.values.row(t_species.at(out.corr.labels[static_cast<std::size_t>(j)]));
    d.trait_names = t.col_labels;
  }
  d.validate();
  return out;
}

std::string display_rho(double rho) { return rho <= 0.05 ? std::string() : format_number(rho); }

nlohmann::json fit_to_json(const FitResult& fit, const ModelData& data, const FitConfig& config) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto mat = [&](const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec(m.row(i).transpose()));
    return rows;
  };
  const auto& est = fit.estimates;
  json j;
  j["converged"] = fit.converged;
  j["message"] = fit.message;
  j["warnings"] = fit.warnings;
  j["iterations"] = fit.iterations;
  j["evaluations"] = fit.evaluations;
  j["initial_elbo"] = fit.initial_elbo;
  j["elbo"] = fit.elbo;
  j["wall_time_s"] = fit.wall_time;
  j["config"] = {{"nn", fit.nn},
                 {"rule", rule_name(fit.rule)},
                 {"ordering", ordering_name(config.ordering)},
                 {"rank", fit.spec.rank},
                 {"ar", ar_name(fit.spec.ar)},
                 {"shared_signal", fit.spec.shared_signal},
                 {"sr_identity", fit.spec.sr_identity},
                 {"repulsion", config.repulsion},
                 {"family", family_name(data.family)},
                 {"link", link_name(data.link)},
                 {"simd", simd::isa_name(simd::active_kernels().isa)},
                 {"threads", num_threads()}};
  j["species"] = data.species;
  j["covariates"] = data.covariates;
  j["traits"] = data.trait_names;
  std::vector<std::string> order;
  for (int s : fit.ordering.order) order.push_back(data.species[static_cast<std::size_t>(s)]);
  j["ordering"] = order;
  j["estimates"] = {{"beta_x", vec(est.fixed.beta_x)},
                    {"b_tx", mat(est.fixed.b_tx)},
                    {"sigma", vec(est.signal.sigma)},
                    {"rho", vec(est.signal.rho)},
                    {"rho_reported", vec(fit.reported_rho())},
                    {"sr", mat(est.sr)}};
  j["variational"] = {{"a", mat(fit.species_means())},
                      {"ar", mat(est.state.ar)},
                      {"am_diagonal", vec(fit.species_variances())},
                      {"rank", est.state.rank()}};
  if (fit.standard_errors) {
    const auto& se = *fit.standard_errors;
    json s = {{"available", se.available}, {"message", se.message}};
    if (se.available) {
      s["beta_x"] = vec(se.beta_x);
      s["b_tx"] = mat(se.b_tx);
      s["sigma"] = vec(se.sigma);
      s["rho"] = vec(se.rho);
      s["sr_params"] = vec(se.sr_params);
    }
    j["standard_errors"] = s;
  }
  j["trace"] = fit.trace;
  return j;
}

void write_signal_csv(std::ostream& out, const FitResult& fit, const ModelData& data) {
  CsvTable t;
  t.header = {"ordering", "nn", "time_s", "covariate", "sigma", "rho", "rho_display"};
  const Eigen::VectorXd rho = fit.reported_rho();
  for (Eigen::Index k = 0; k < rho.size(); ++k) {
    t.rows.push_back({ordering_name(fit.ordering.method), std::to_string(fit.nn), format_number(fit.wall_time),
                      data.covariates[static_cast<std::size_t>(k)], format_number(fit.estimates.signal.sigma(k)),
                      format_number(rho(k)), display_rho(rho(k))});
  }
  write_csv(out, t);
}

void write_effects_csv(std::ostream& out, const std::vector<EffectRow>& rows) {
  CsvTable t;
  t.header = {"species", "covariate", "community_mean", "deviation", "effect", "sd",
              "effect_lower", "effect_upper", "deviation_lower", "deviation_upper", "covers_zero"};
  for (const auto& r : rows)
    t.rows.push_back({r.species, r.covariate, format_number(r.community_mean), format_number(r.deviation),
                      format_number(r.effect), format_number(r.sd), format_number(r.effect_lower),
                      format_number(r.effect_upper), format_number(r.lower), format_number(r.upper),
                      r.covers_zero ? "true" : "false"});
  write_csv(out, t);
}

std::vector<ScanRow> ordering_scan(const PhyloCorrelation& corr, const PhyloTree& tree, const ScanOptions& options) {
  const int m = static_cast<int>(corr.matrix.rows());
  std::vector<int> grid;
  for (int nn : options.nn_values)
    if (nn >= 1 && nn <= std::max(1, m - 1)) grid.push_back(nn);
  if (options.include_full && m > 1 && std::find(grid.begin(), grid.end(), m - 1) == grid.end()) grid.push_back(m - 1);
  if (grid.empty()) throw InvalidArgument("no valid nn values for " + std::to_string(m) + " species");

  std::vector<ScanRow> rows;
  for (auto method : options.orderings)
    for (auto rule : options.rules)
      for (int nn : grid) rows.push_back({method, rule, nn, 0.0});
  std::map<OrderingMethod, Ordering> orderings;
  for (auto method : options.orderings) orderings.emplace(method, make_ordering(corr, tree, method));
  const Eigen::MatrixXd& c = corr.matrix;
  const CovarianceAccessor kernel = [&c](int a, int b) { return c(a, b); };
  parallel_for(rows.size(), [&](std::size_t i) {
    ScanRow& r = rows[i];
    const NeighborSets sets = neighbor_sets(c, orderings.at(r.ordering), r.nn, r.rule);
    r.error = approx_error(c, build_factor(kernel, sets));
  });
  return rows;
}

void write_scan_csv(std::ostream& out, const std::vector<ScanRow>& rows) {
  CsvTable t;
  t.header = {"ordering", "rule", "nn", "frobenius_error"};
  for (const auto& r : rows)
    t.rows.push_back({ordering_name(r.ordering), rule_name(r.rule), std::to_string(r.nn), format_number(r.error)});
  write_csv(out, t);
}

namespace {
std::vector<std::string> condition_cells(const SimCondition& c, Family family) {
  return {std::to_string(c.m), std::to_string(c.nn), std::to_string(c.rank), rule_name(c.rule), ar_name(c.ar),
          family_name(family)};
}
const std::vector<std::string> kConditionHeader{"m", "nn", "rank", "rule", "ar", "family"};
}  // namespace

void write_replicates_csv(std::ostream& out, const std::vector<ReplicateResult>& results, Family family) {
  CsvTable t;
  t.header = kConditionHeader;
  for (const char* h : {"replicate", "rho_true", "rho_hat", "abs_error", "elbo", "iterations", "converged", "time_s"})
    t.header.push_back(h);
  for (const auto& r : results) {
    auto row = condition_cells(r.condition, family);
    for (auto s : {std::to_string(r.replicate), format_number(r.rho_true), format_number(r.rho_hat),
                   format_number(std::abs(r.rho_hat - r.rho_true)), format_number(r.elbo), std::to_string(r.iterations),
                   std::string(r.converged ? "true" : "false"), format_number(r.time)})
      row.push_back(s);
    t.rows.push_back(std::move(row));
  }
  write_csv(out, t);
}

void write_summary_csv(std::ostream& out, const std::vector<RecoverySummary>& summary, Family family) {
  CsvTable t;
  t.header = kConditionHeader;
  for (const char* h : {"replicates", "converged", "mae_rho"}) t.header.push_back(h);
  for (const auto& s : summary) {
    auto row = condition_cells(s.condition, family);
    row.push_back(std::to_string(s.replicates));
    row.push_back(std::to_string(s.converged));
    row.push_back(format_number(s.mae));
    t.rows.push_back(std::move(row));
  }
  write_csv(out, t);
}

void write_timing_csv(std::ostream& out, const std::vector<RecoverySummary>& summary, Family family) {
  CsvTable t;
  t.header = kConditionHeader;
  for (const char* h : {"replicates", "time_median_s", "time_p025_s", "time_p975_s"}) t.header.push_back(h);
  for (const auto& s : summary) {
    auto row = condition_cells(s.condition, family);
    row.push_back(std::to_string(s.replicates));
    row.push_back(format_number(s.time_median));
    row.push_back(format_number(s.time_p025));
    row.push_back(format_number(s.time_p975));
    t.rows.push_back(std::move(row));
  }
  write_csv(out, t);
}

int cmd_fit(const FitOptions& options, std::ostream& log) {
  return guarded(log, [&] {
    const LoadedData loaded = load_data(options);
    const ModelData& data = loaded.data;
    log << "fitting " << data.num_sites() << " sites x " << data.num_species() << " species, "
        << data.num_covariates() << " covariates (" << family_name(data.family) << "/" << link_name(data.link) << ")\n";
    const FitResult fit = fit_model(data, loaded.corr, loaded.tree, options.fit);
    {
      auto out = open_output(options.out_dir, "fit.json");
      out << fit_to_json(fit, data, options.fit).dump(2) << '\n';
    }
    {
      auto out = open_output(options.out_dir, "signal.csv");
      write_signal_csv(out, fit, data);
    }
    {
      auto out = open_output(options.out_dir, "effects.csv");
      write_effects_csv(out, predict_effects(fit, data));
    }
    log << (fit.converged ? "converged" : "did not converge") << " after " << fit.iterations
        << " iterations (" << fit.message << "), elbo " << format_number(fit.elbo) << ", "
        << format_number(fit.wall_time) << " s\n";
    for (const auto& w : fit.warnings) log << "warning: " << w << '\n';
    return fit.converged ? kExitOk : kExitNotConverged;
  });
}

int cmd_ordering_scan(const ScanOptions& options, std::ostream& log) {
  return guarded(log, [&] {
    const PhyloTree tree = options.tree_path.empty() ? simulate_tree(options.simulate_tips, options.seed)
                                                     : read_newick_file(options.tree_path);
    const PhyloCorrelation corr = correlation_matrix(tree);
    const auto rows = ordering_scan(corr, tree, options);
    auto out = open_output(options.out_dir, "ordering_scan.csv");
    write_scan_csv(out, rows);
    log << "wrote " << rows.size() << " rows for " << corr.labels.size() << " species\n";
    return kExitOk;
  });
}

int cmd_simulate(const SimulateOptions& options, std::ostream& log) {
  return guarded(log, [&] {
    const auto results = run_study(options.study);
    const auto summary = recovery_metrics(results);
    const Family family = options.study.protocol.family;
    {
      auto out = open_output(options.out_dir, "sim_replicates.csv");
      write_replicates_csv(out, results, family);
    }
    {
      auto out = open_output(options.out_dir, "sim_summary.csv");
      write_summary_csv(out, summary, family);
    }
    {
      auto out = open_output(options.out_dir, "sim_timing.csv");
      write_timing_csv(out, summary, family);
    }
    for (const auto& s : summary)
      log << "m=" << s.condition.m << " nn=" << s.condition.nn << " d=" << s.condition.rank
          << " mae=" << format_number(s.mae) << " converged " << s.converged << "/" << s.replicates << '\n';
    return kExitOk;
  });
}

int cmd_benchmark(const BenchmarkOptions& options, std::ostream& log) {
  return guarded(log, [&] {
    SimStudy study;
    study.protocol = options.protocol;
    study.fit = options.fit;
    study.m_values = {options.protocol.m};
    study.nn_values = {options.fit.nn};
    study.rules = {options.fit.rule};
    study.rank_values = options.ranks;
    study.ar_values = options.ar_values;
    study.replicates = options.replicates;
    const auto results = run_study(study);
    const auto summary = recovery_metrics(results);
    auto out = open_output(options.out_dir, "timing.csv");
    write_timing_csv(out, summary, options.protocol.family);
    for (const auto& s : summary)
      log << "d=" << s.condition.rank << " ar=" << ar_name(s.condition.ar) << " median "
          << format_number(s.time_median) << " s\n";
    return kExitOk;
  });
}

}  // namespace phylova
