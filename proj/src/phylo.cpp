#include "phylova/phylo.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "phylova/error.hpp"

namespace phylova {

PhyloTree::PhyloTree(std::vector<PhyloNode> nodes, int root) : nodes_(std::move(nodes)), root_(root) {
  validate();
  // left-to-right tip order by explicit-stack preorder
  std::vector<int> stack{root_};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    const auto& kids = nodes_[v].children;
    if (kids.empty()) {
      tips_.push_back(v);
    } else {
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
    }
  }
}

void PhyloTree::validate() const {
  const int n = static_cast<int>(nodes_.size());
  if (n == 0 || root_ < 0 || root_ >= n) throw InvalidArgument("tree has no root");
  if (nodes_[root_].parent != -1) throw InvalidArgument("root node has a parent");
  std::vector<int> seen(n, 0);
  std::vector<int> stack{root_};
  std::unordered_set<std::string> labels;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (seen[v]++) throw InvalidArgument("tree contains a cycle");
    const auto& node = nodes_[v];
    if (v != root_ && !(node.length >= 0.0)) throw InvalidArgument("negative branch length");
    if (node.children.empty()) {
      if (node.label.empty()) throw InvalidArgument("tip without a label");
      if (!labels.insert(node.label).second) throw InvalidArgument("duplicate tip label '" + node.label + "'");
    }
    for (int c : node.children) {
      if (c < 0 || c >= n || nodes_[c].parent != v) throw InvalidArgument("inconsistent parent links");
      stack.push_back(c);
    }
  }
  for (int v = 0; v < n; ++v) {
    if (!seen[v]) throw InvalidArgument("tree is not connected");
  }
}

std::vector<std::string> PhyloTree::tip_labels() const {
  std::vector<std::string> out;
  out.reserve(tips_.size());
  for (int t : tips_) out.push_back(nodes_[t].label);
  return out;
}

std::vector<double> PhyloTree::node_depths() const {
  std::vector<double> depth(nodes_.size(), 0.0);
  std::vector<int> stack{root_};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int c : nodes_[v].children) {
      depth[c] = depth[v] + nodes_[c].length;
      stack.push_back(c);
    }
  }
  return depth;
}

// ---------------------------------------------------------------------------
// Newick

namespace {

class NewickParser {
 public:
  explicit NewickParser(std::string_view text) : text_(text) {}

  PhyloTree parse() {
    skip_space();
    const int root = parse_subtree(-1);
    skip_space();
    if (peek() == ':') {
      ++pos_;
      nodes_[root].length = parse_length();
      skip_space();
    }
    if (peek() != ';') fail(peek() == ')' ? "unbalanced parentheses" : "expected ';'");
    ++pos_;
    skip_space();
    if (pos_ != text_.size()) fail("trailing characters after ';'");
    return PhyloTree(std::move(nodes_), root);
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_space() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (c == '[') {
        const auto close = text_.find(']', pos_);
        if (close == std::string_view::npos) fail("unterminated comment");
        pos_ = close + 1;
      } else {
        break;
      }
    }
  }

  int new_node(int parent) {
    nodes_.push_back(PhyloNode{});
    nodes_.back().parent = parent;
    return static_cast<int>(nodes_.size()) - 1;
  }

  int parse_subtree(int parent) {
    const int v = new_node(parent);
    if (peek() == '(') {
      ++pos_;
      while (true) {
        skip_space();
        const int child = parse_subtree(v);
        nodes_[v].children.push_back(child);
        skip_space();
        if (peek() != ':') fail("missing branch length");
        ++pos_;
        nodes_[child].length = parse_length();
        skip_space();
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        if (peek() == ')') {
          ++pos_;
          break;
        }
        fail(pos_ >= text_.size() ? "unbalanced parentheses" : "expected ',' or ')'");
      }
      skip_space();
      nodes_[v].label = parse_label();
    } else {
      nodes_[v].label = parse_label();
      if (nodes_[v].label.empty()) fail("empty tip label");
      if (!labels_.insert(nodes_[v].label).second) fail("duplicate tip label '" + nodes_[v].label + "'");
    }
    return v;
  }

  std::string parse_label() {
    std::string out;
    if (peek() == '\'') {
      ++pos_;
      while (true) {
        if (pos_ >= text_.size()) fail("unterminated quoted label");
        const char c = text_[pos_++];
        if (c == '\'') {
          if (peek() == '\'') {
            out.push_back('\'');
            ++pos_;
            continue;
          }
          break;
        }
        out.push_back(c);
      }
      return out;
    }
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '(' || c == ')' || c == ',' || c == ':' || c == ';' || c == '[' ||
          std::isspace(static_cast<unsigned char>(c)))
        break;
      out.push_back(c);
      ++pos_;
    }
    return out;
  }

  double parse_length() {
    skip_space();
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr == begin) fail("invalid branch length");
    if (value < 0.0) fail("negative branch length");
    if (!std::isfinite(value)) fail("non-finite branch length");
    pos_ += static_cast<std::size_t>(ptr - begin);
    return value;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::vector<PhyloNode> nodes_;
  std::unordered_set<std::string> labels_;
};

bool needs_quotes(const std::string& label) {
  for (char c : label) {
    if (c == '(' || c == ')' || c == ',' || c == ':' || c == ';' || c == '[' || c == ']' || c == '\'' ||
        std::isspace(static_cast<unsigned char>(c)))
      return true;
  }
  return false;
}

std::string format_length(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_node(const PhyloTree& tree, int v, std::string& out) {
  const auto& node = tree.nodes()[v];
  if (!node.children.empty()) {
    out.push_back('(');
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      if (i) out.push_back(',');
      write_node(tree, node.children[i], out);
    }
    out.push_back(')');
  }
  if (needs_quotes(node.label)) {
    out.push_back('\'');
    for (char c : node.label) {
      if (c == '\'') out.push_back('\'');
      out.push_back(c);
    }
    out.push_back('\'');
  } else {
    out += node.label;
  }
  if (v != tree.root()) {
    out.push_back(':');
    out += format_length(node.length);
  }
}

}  // namespace

PhyloTree parse_newick(std::string_view text) {
  try {
    return NewickParser(text).parse();
  } catch (const ParseError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), text.size());
  }
}

std::string to_newick(const PhyloTree& tree) {
  std::string out;
  write_node(tree, tree.root(), out);
  out.push_back(';');
  return out;
}

PhyloTree read_newick_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tree file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_newick(buf.str());
}

PhyloTree simulate_tree(int num_tips, std::uint64_t seed) {
  if (num_tips < 2) throw InvalidArgument("simulate_tree needs at least 2 tips");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto branch = [&] {
    double x = 0.0;
    while (x <= 0.0) x = unif(rng);
    return x;
  };
  std::vector<PhyloNode> nodes(1);
  std::vector<int> leaves;
  auto add_child = [&](int parent) {
    PhyloNode child;
    child.parent = parent;
    child.length = branch();
    nodes.push_back(child);
    const int id = static_cast<int>(nodes.size()) - 1;
    nodes[parent].children.push_back(id);
    return id;
  };
  leaves.push_back(add_child(0));
  leaves.push_back(add_child(0));
  while (static_cast<int>(leaves.size()) < num_tips) {
    std::uniform_int_distribution<std::size_t> pick(0, leaves.size() - 1);
    const std::size_t k = pick(rng);
    const int v = leaves[k];
    const int left = add_child(v);
    const int right = add_child(v);
    leaves[k] = left;
    leaves.push_back(right);
  }
  // label left to right
  PhyloTree unlabeled = [&] {
    auto tmp = nodes;
    for (int leaf : leaves) tmp[leaf].label = "tmp" + std::to_string(leaf);
    return PhyloTree(std::move(tmp), 0);
  }();
  int counter = 0;
  for (int leaf : unlabeled.tips()) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%04d", ++counter);
    nodes[leaf].label = buf;
  }
  return PhyloTree(std::move(nodes), 0);
}

// ---------------------------------------------------------------------------
// Derived matrices

Eigen::MatrixXd shared_branch_lengths(const PhyloTree& tree) {
  const auto& nodes = tree.nodes();
  const auto depth = tree.node_depths();
  const std::size_t m = tree.num_tips();
  std::vector<int> tip_index(nodes.size(), -1);
  for (std::size_t i = 0; i < m; ++i) tip_index[tree.tips()[i]] = static_cast<int>(i);

  Eigen::MatrixXd shared = Eigen::MatrixXd::Zero(m, m);
  // post-order: collect descendant tips; pairs split across children meet at v
  std::vector<std::vector<int>> below(nodes.size());
  std::vector<std::pair<int, bool>> stack{{tree.root(), false}};
  while (!stack.empty()) {
    auto [v, expanded] = stack.back();
    stack.pop_back();
    if (!expanded) {
      stack.push_back({v, true});
      for (int c : nodes[v].children) stack.push_back({c, false});
      continue;
    }
    if (nodes[v].children.empty()) {
      const int j = tip_index[v];
      shared(j, j) = depth[v];
      below[v] = {j};
      continue;
    }
    std::vector<int> acc;
    for (int c : nodes[v].children) {
      for (int a : acc) {
        for (int b : below[c]) {
          shared(a, b) = depth[v];
          shared(b, a) = depth[v];
        }
      }
      acc.insert(acc.end(), below[c].begin(), below[c].end());
      std::vector<int>().swap(below[c]);
    }
    below[v] = std::move(acc);
  }
  return shared;
}

PhyloCorrelation correlation_matrix(const PhyloTree& tree) {
  const Eigen::MatrixXd shared = shared_branch_lengths(tree);
  const auto m = shared.rows();
  Eigen::VectorXd scale(m);
  const auto labels = tree.tip_labels();
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!(shared(j, j) > 0.0)) throw InvalidArgument("tip '" + labels[j] + "' has zero root-to-tip depth");
    scale(j) = 1.0 / std::sqrt(shared(j, j));
  }
  PhyloCorrelation out;
  out.matrix = scale.asDiagonal() * shared * scale.asDiagonal();
  out.matrix.diagonal().setOnes();
  out.labels = labels;
  return out;
}

Eigen::MatrixXd evolutionary_distances(const PhyloTree& tree) {
  const Eigen::MatrixXd shared = shared_branch_lengths(tree);
  const auto m = shared.rows();
  Eigen::MatrixXd d(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index l = 0; l < m; ++l) d(j, l) = shared(j, j) + shared(l, l) - 2.0 * shared(j, l);
    d(j, j) = 0.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Orderings

namespace {
struct OrderingEntry {
  OrderingMethod method;
  const char* name;
};
constexpr OrderingEntry kOrderingNames[] = {
    {OrderingMethod::phylogeny_tips, "tips"},
    {OrderingMethod::alphabetical, "alphabetical"},
    {OrderingMethod::sum_pairwise_distance, "distance"},
    {OrderingMethod::root_distance, "root"},
    {OrderingMethod::first_eigenvector, "eigen"},
    {OrderingMethod::sum_squared_covariance, "sumsq"},
    {OrderingMethod::identity, "identity"},
};

std::vector<int> stable_argsort(const std::vector<double>& key) {
  std::vector<int> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return key[a] < key[b]; });
  return idx;
}
}  // namespace

const char* ordering_name(OrderingMethod method) {
  for (const auto& e : kOrderingNames) {
    if (e.method == method) return e.name;
  }
  return "unknown";
}

OrderingMethod parse_ordering(std::string_view name) {
  for (const auto& e : kOrderingNames) {
    if (name == e.name) return e.method;
  }
  throw InvalidArgument("unknown ordering method '" + std::string(name) + "'");
}

const std::vector<OrderingMethod>& heuristic_orderings() {
  static const std::vector<OrderingMethod> all = {
      OrderingMethod::phylogeny_tips,        OrderingMethod::alphabetical,
      OrderingMethod::sum_pairwise_distance, OrderingMethod::root_distance,
      OrderingMethod::first_eigenvector,     OrderingMethod::sum_squared_covariance};
  return all;
}

std::vector<int> Ordering::positions() const {
  std::vector<int> pos(order.size());
  for (std::size_t p = 0; p < order.size(); ++p) pos[order[p]] = static_cast<int>(p);
  return pos;
}

Ordering identity_ordering(std::size_t m) {
  Ordering o;
  o.order.resize(m);
  std::iota(o.order.begin(), o.order.end(), 0);
  o.method = OrderingMethod::identity;
  return o;
}

bool is_permutation(const std::vector<int>& order) {
  std::vector<char> hit(order.size(), 0);
  for (int v : order) {
    if (v < 0 || static_cast<std::size_t>(v) >= order.size() || hit[v]) return false;
    hit[v] = 1;
  }
  return true;
}

Ordering make_ordering(const PhyloCorrelation& corr, const PhyloTree& tree, OrderingMethod method) {
  const std::size_t m = corr.labels.size();
  if (static_cast<std::size_t>(corr.matrix.rows()) != m || tree.num_tips() != m)
    throw DimensionError("correlation matrix and tree disagree on the number of species");
  std::unordered_map<std::string, int> index;
  for (std::size_t j = 0; j < m; ++j) index[corr.labels[j]] = static_cast<int>(j);
  // tree tip i -> correlation index
  std::vector<int> tree_to_corr(m);
  const auto tree_labels = tree.tip_labels();
  for (std::size_t i = 0; i < m; ++i) {
    auto it = index.find(tree_labels[i]);
    if (it == index.end()) throw InvalidArgument("tip '" + tree_labels[i] + "' missing from correlation labels");
    tree_to_corr[i] = it->second;
  }

  Ordering out;
  out.method = method;
  std::vector<double> key(m, 0.0);
  switch (method) {
    case OrderingMethod::identity:
      return identity_ordering(m);
    case OrderingMethod::phylogeny_tips:
      out.order = tree_to_corr;
      return out;
    case OrderingMethod::alphabetical: {
      out.order.resize(m);
      std::iota(out.order.begin(), out.order.end(), 0);
      std::stable_sort(out.order.begin(), out.order.end(),
                       [&](int a, int b) { return corr.labels[a] < corr.labels[b]; });
      return out;
    }
    case OrderingMethod::sum_pairwise_distance: {
      const Eigen::MatrixXd d = evolutionary_distances(tree);
      for (std::size_t i = 0; i < m; ++i) key[tree_to_corr[i]] = d.row(i).sum();
      break;
    }
    case OrderingMethod::root_distance: {
      const Eigen::MatrixXd s = shared_branch_lengths(tree);
      for (std::size_t i = 0; i < m; ++i) key[tree_to_corr[i]] = s(i, i);
      break;
    }
    case OrderingMethod::first_eigenvector: {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr.matrix);
      if (eig.info() != Eigen::Success) throw NumericalError("eigen decomposition failed");
      Eigen::VectorXd v = eig.eigenvectors().col(m - 1);
      for (std::size_t j = 0; j < m; ++j) {
        if (std::abs(v(j)) > 1e-12) {
          if (v(j) < 0) v = -v;
          break;
        }
      }
      for (std::size_t j = 0; j < m; ++j) key[j] = v(j);
      break;
    }
    case OrderingMethod::sum_squared_covariance:
      for (std::size_t j = 0; j < m; ++j) key[j] = corr.matrix.row(j).squaredNorm();
      break;
  }
  out.order = stable_argsort(key);
  return out;
}

}  // namespace phylova
