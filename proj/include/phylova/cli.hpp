#pragma once

// Subcommand implementations and output writers for the phylova tool.

#include <iosfwd>
#include "json.hpp"
#include <string>
#include <vector>

#include "phylova/fit.hpp"
#include "phylova/simulate.hpp"

namespace phylova {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitNotConverged = 2, kExitDataMismatch = 3, kExitIo = 4 };

struct FitOptions {
  std::string y_path;
  std::string x_path;
  std::string traits_path;  // optional
  std::string tree_path;
  std::string out_dir = ".";
  Family family = Family::bernoulli;
  std::string link;  // empty: family default
  bool intercept = true;
  FitConfig fit;
};

struct ScanOptions {
  std::string tree_path;  // empty: simulate a tree with `simulate_tips` tips
  int simulate_tips = 100;
  std::uint64_t seed = 1;
  std::vector<int> nn_values{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  bool include_full = true;  // adds nn = m - 1
  std::vector<OrderingMethod> orderings = heuristic_orderings();
  std::vector<NeighborRule> rules{NeighborRule::nngp, NeighborRule::band};
  std::string out_dir = ".";
};

struct SimulateOptions {
  SimStudy study;
  std::string out_dir = ".";
};

struct BenchmarkOptions {
  SimProtocol protocol;
  FitConfig fit;
  std::vector<int> ranks{0, 1};
  std::vector<ArStructure> ar_values{ArStructure::unstructured};
  int replicates = 3;
  std::string out_dir = ".";
};

// --- data assembly ------------------------------------------------------------

struct LoadedData {
  ModelData data;  // species columns aligned to tree tip order
  PhyloTree tree;
  PhyloCorrelation corr;
};

/// Reads and aligns Y, X, optional T and the tree. Throws DimensionError
/// listing offending labels when the species sets disagree.
LoadedData load_data(const FitOptions& options);

// --- outputs --------------------------------------------------------------------

/// Table display of a signal estimate: blank at or below 0.05.
std::string display_rho(double rho);

nlohmann::json fit_to_json(const FitResult& fit, const ModelData& data, const FitConfig& config);
void write_signal_csv(std::ostream& out, const FitResult& fit, const ModelData& data);
void write_effects_csv(std::ostream& out, const std::vector<EffectRow>& rows);

struct ScanRow {
  OrderingMethod ordering;
  NeighborRule rule;
  int nn;
  double error;
};

std::vector<ScanRow> ordering_scan(const PhyloCorrelation& corr, const PhyloTree& tree, const ScanOptions& options);
void write_scan_csv(std::ostream& out, const std::vector<ScanRow>& rows);

void write_replicates_csv(std::ostream& out, const std::vector<ReplicateResult>& results, Family family);
/// Deterministic recovery columns only.
void write_summary_csv(std::ostream& out, const std::vector<RecoverySummary>& summary, Family family);
/// Wall-time columns.
void write_timing_csv(std::ostream& out, const std::vector<RecoverySummary>& summary, Family family);

// --- subcommands ----------------------------------------------------------------

int cmd_fit(const FitOptions& options, std::ostream& log);
int cmd_ordering_scan(const ScanOptions& options, std::ostream& log);
int cmd_simulate(const SimulateOptions& options, std::ostream& log);
int cmd_benchmark(const BenchmarkOptions& options, std::ostream& log);

}  // namespace phylova
