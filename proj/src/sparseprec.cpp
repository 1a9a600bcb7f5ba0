#include "phylova/sparseprec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "phylova/error.hpp"
#include "phylova/parallel.hpp"

namespace phylova {

const char* rule_name(NeighborRule rule) { return rule == NeighborRule::nngp ? "nngp" : "band"; }

NeighborRule parse_rule(std::string_view name) {
  if (name == "nngp") return NeighborRule::nngp;
  if (name == "band") return NeighborRule::band;
  throw InvalidArgument("unknown neighbour rule '" + std::string(name) + "'");
}

bool NeighborSets::full_conditioning() const {
  for (std::size_t j = 0; j < sets.size(); ++j) {
    if (sets[j].size() != j) return false;
  }
  return true;
}

namespace {

void check_nn(int nn, std::size_t m) {
  const int upper = std::max<int>(1, static_cast<int>(m) - 1);
  if (nn < 1 || nn > upper)
    throw InvalidArgument("number of neighbours " + std::to_string(nn) + " outside [1, " +
                          std::to_string(upper) + "]");
  if (nn > kMaxNeighbors && nn != upper)
    throw InvalidArgument("number of neighbours above " + std::to_string(kMaxNeighbors) +
                          " is only allowed for full conditioning");
}

// score(pos_j, pos_q): larger is closer
template <typename Score>
NeighborSets select_sets(const Ordering& ordering, int nn, NeighborRule rule, Score score) {
  const std::size_t m = ordering.size();
  check_nn(nn, m);
  NeighborSets out;
  out.ordering = ordering;
  out.rule = rule;
  out.nn = nn;
  out.sets.resize(m);
  for (std::size_t j = 1; j < m; ++j) {
    const std::size_t take = std::min<std::size_t>(j, static_cast<std::size_t>(nn));
    auto& set = out.sets[j];
    if (rule == NeighborRule::band || take == j) {
      for (std::size_t q = j - take; q < j; ++q) set.push_back(static_cast<int>(q));
      continue;
    }
    std::vector<int> cand(j);
    std::iota(cand.begin(), cand.end(), 0);
    std::stable_sort(cand.begin(), cand.end(),
                     [&](int a, int b) { return score(j, a) > score(j, b); });
    set.assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(set.begin(), set.end());
  }
  return out;
}

}  // namespace

NeighborSets neighbor_sets(const Eigen::MatrixXd& similarity, const Ordering& ordering, int nn,
                           NeighborRule rule) {
  if (static_cast<std::size_t>(similarity.rows()) != ordering.size() || similarity.rows() != similarity.cols())
    throw DimensionError("similarity matrix does not match the ordering");
  const auto& ord = ordering.order;
  return select_sets(ordering, nn, rule,
                     [&](std::size_t j, int q) { return similarity(ord[j], ord[q]); });
}

NeighborSets neighbor_sets_by_distance(const Eigen::MatrixXd& distances, const Ordering& ordering, int nn) {
  if (static_cast<std::size_t>(distances.rows()) != ordering.size() || distances.rows() != distances.cols())
    throw DimensionError("distance matrix does not match the ordering");
  const auto& ord = ordering.order;
  return select_sets(ordering, nn, NeighborRule::nngp,
                     [&](std::size_t j, int q) { return -distances(ord[j], ord[q]); });
}

SparseInvChol::SparseInvChol(Ordering ordering, std::vector<std::size_t> offsets, std::vector<int> neighbors,
                             std::vector<double> weights, std::vector<double> cond_var)
    : ordering_(std::move(ordering)),
      offsets_(std::move(offsets)),
      neighbors_(std::move(neighbors)),
      weights_(std::move(weights)),
      cond_var_(std::move(cond_var)) {
  if (offsets_.size() != cond_var_.size() + 1 || neighbors_.size() != weights_.size() ||
      offsets_.back() != neighbors_.size() || ordering_.size() != cond_var_.size())
    throw DimensionError("inconsistent sparse factor layout");
}

Eigen::VectorXd SparseInvChol::apply_U(std::span<const double> v) const {
  const std::size_t m = size();
  if (v.size() != m) throw DimensionError("apply_U: vector length mismatch");
  Eigen::VectorXd out(m);
  for (std::size_t j = 0; j < m; ++j) {
    double acc = v[j];
    const auto nb = neighbors(j);
    const auto w = weights(j);
    for (std::size_t r = 0; r < nb.size(); ++r) acc -= w[r] * v[nb[r]];
    out[j] = acc / std::sqrt(cond_var_[j]);
  }
  return out;
}

Eigen::VectorXd SparseInvChol::apply_Ut(std::span<const double> v) const {
  const std::size_t m = size();
  if (v.size() != m) throw DimensionError("apply_Ut: vector length mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double s = v[j] / std::sqrt(cond_var_[j]);
    out[j] += s;
    const auto nb = neighbors(j);
    const auto w = weights(j);
    for (std::size_t r = 0; r < nb.size(); ++r) out[nb[r]] -= w[r] * s;
  }
  return out;
}

Eigen::MatrixXd SparseInvChol::dense_U() const {
  const std::size_t m = size();
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    const double s = 1.0 / std::sqrt(cond_var_[j]);
    u(j, j) = s;
    const auto nb = neighbors(j);
    const auto w = weights(j);
    for (std::size_t r = 0; r < nb.size(); ++r) u(j, nb[r]) = -w[r] * s;
  }
  return u;
}

SparseInvChol build_factor(const CovarianceAccessor& kernel, const NeighborSets& sets) {
  const std::size_t m = sets.size();
  const auto& ord = sets.ordering.order;
  std::vector<std::size_t> offsets(m + 1, 0);
  for (std::size_t j = 0; j < m; ++j) offsets[j + 1] = offsets[j] + sets.sets[j].size();
  std::vector<int> neighbors(offsets.back());
  std::vector<double> weights(offsets.back());
  std::vector<double> cond_var(m);

  parallel_for(m, [&](std::size_t j) {
    const auto& a = sets.sets[j];
    const std::size_t k = a.size();
    const int sj = ord[j];
    const double kjj = kernel(sj, sj);
    std::copy(a.begin(), a.end(), neighbors.begin() + static_cast<std::ptrdiff_t>(offsets[j]));
    if (k == 0) {
      if (!(kjj > 0.0)) throw ConditioningError("non-positive variance", j);
      cond_var[j] = kjj;
      return;
    }
    Eigen::MatrixXd kaa(k, k);
    Eigen::VectorXd kaj(k);
    for (std::size_t r = 0; r < k; ++r) {
      const int sr = ord[a[r]];
      kaj(r) = kernel(sr, sj);
      for (std::size_t c = 0; c <= r; ++c) {
        kaa(r, c) = kernel(sr, ord[a[c]]);
        kaa(c, r) = kaa(r, c);
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(kaa);
    if (llt.info() != Eigen::Success) throw ConditioningError("neighbour covariance block is not positive definite", j);
    const Eigen::VectorXd b = llt.solve(kaj);
    const double f = kjj - kaj.dot(b);
    if (!(f > 1e-12 * kjj)) throw ConditioningError("conditional variance collapsed", j);
    std::copy(b.data(), b.data() + k, weights.begin() + static_cast<std::ptrdiff_t>(offsets[j]));
    cond_var[j] = f;
  });
  return SparseInvChol(sets.ordering, std::move(offsets), std::move(neighbors), std::move(weights),
                       std::move(cond_var));
}

double logdet_approx_cov(const SparseInvChol& factor) {
  double s = 0.0;
  for (double f : factor.cond_var_data()) s += std::log(f);
  return s;
}

double approx_error(const Eigen::MatrixXd& corr, const SparseInvChol& factor) {
  const std::size_t m = factor.size();
  if (static_cast<std::size_t>(corr.rows()) != m || corr.rows() != corr.cols())
    throw DimensionError("approx_error: correlation matrix does not match the factor");
  const auto& ord = factor.ordering().order;
  Eigen::MatrixXd permuted(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < m; ++l) permuted(i, l) = corr(ord[i], ord[l]);
  const Eigen::MatrixXd u = factor.dense_U();
  Eigen::MatrixXd r = u.transpose() * (u * permuted);
  r.diagonal().array() -= 1.0;
  return r.norm();
}

void write_factor_csv(std::ostream& out, const SparseInvChol& factor) {
  out << "position,species,neighbors,weights,cond_var\n";
  const auto& ord = factor.ordering().order;
  char buf[64];
  for (std::size_t j = 0; j < factor.size(); ++j) {
    out << j << ',' << ord[j] << ',';
    const auto nb = factor.neighbors(j);
    const auto w = factor.weights(j);
    for (std::size_t r = 0; r < nb.size(); ++r) out << (r ? ";" : "") << nb[r];
    out << ',';
    for (std::size_t r = 0; r < w.size(); ++r) {
      std::snprintf(buf, sizeof(buf), "%.6g", w[r]);
      out << (r ? ";" : "") << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.6g", factor.cond_var(j));
    out << ',' << buf << '\n';
  }
}

}  // namespace phylova
