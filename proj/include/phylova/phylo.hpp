#pragma once

// Phylogenies: Newick ingestion, simulation, and the species-level matrices
// derived from them (shared branch length, correlation, patristic distance),
// plus the species orderings used by the sparse precision approximation.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace phylova {

struct PhyloNode {
  int parent = -1;             // -1 for the root
  double length = 0.0;         // branch length to the parent
  std::string label;           // tips: unique, non-empty; internal: optional
  std::vector<int> children;
};

/// Rooted tree stored as a node array. `tips()` lists tip node indices in
/// left-to-right order as written in the source; that order defines the
/// species index used by every derived matrix.
class PhyloTree {
 public:
  PhyloTree() = default;
  PhyloTree(std::vector<PhyloNode> nodes, int root);

  const std::vector<PhyloNode>& nodes() const { return nodes_; }
  int root() const { return root_; }
  const std::vector<int>& tips() const { return tips_; }
  std::size_t num_tips() const { return tips_.size(); }
  std::vector<std::string> tip_labels() const;

  /// Root-to-node path length for every node (root length excluded).
  std::vector<double> node_depths() const;

 private:
  void validate() const;

  std::vector<PhyloNode> nodes_;
  int root_ = -1;
  std::vector<int> tips_;
};

PhyloTree parse_newick(std::string_view text);
std::string to_newick(const PhyloTree& tree);

PhyloTree read_newick_file(const std::string& path);

/// Random bifurcating tree grown by splitting a uniformly chosen tip until
/// `num_tips` tips exist; every branch length is Uniform(0, 1). Tips are
/// labelled s0001, s0002, ... left to right.
PhyloTree simulate_tree(int num_tips, std::uint64_t seed);

/// Matrix of root-to-MRCA shared branch lengths, tips in tree order.
Eigen::MatrixXd shared_branch_lengths(const PhyloTree& tree);

struct PhyloCorrelation {
  Eigen::MatrixXd matrix;           // unit diagonal
  std::vector<std::string> labels;  // row/column labels
};

PhyloCorrelation correlation_matrix(const PhyloTree& tree);

/// Patristic distances S_jj + S_ll - 2 S_jl.
Eigen::MatrixXd evolutionary_distances(const PhyloTree& tree);

enum class OrderingMethod {
  phylogeny_tips,
  alphabetical,
  sum_pairwise_distance,
  root_distance,
  first_eigenvector,
  sum_squared_covariance,
  identity,
};

const char* ordering_name(OrderingMethod method);
OrderingMethod parse_ordering(std::string_view name);
/// The six heuristics (identity excluded).
const std::vector<OrderingMethod>& heuristic_orderings();

/// order[pos] is the species index placed at position pos.
struct Ordering {
  std::vector<int> order;
  OrderingMethod method = OrderingMethod::identity;

  std::size_t size() const { return order.size(); }
  /// position[species] = pos
  std::vector<int> positions() const;
};

Ordering identity_ordering(std::size_t m);

Ordering make_ordering(const PhyloCorrelation& corr, const PhyloTree& tree, OrderingMethod method);

bool is_permutation(const std::vector<int>& order);

}  // namespace phylova
