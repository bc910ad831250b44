#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "eqsel/csv.hpp"
#include "eqsel/learning_rules.hpp"

namespace eqsel {

/// A row-stochastic matrix given by sparse rows: rows[i] = {(j, P(i -> j))}.
struct SparseChain {
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;

  std::size_t size() const { return rows.size(); }

  static SparseChain from_dense(const std::vector<std::vector<double>>& P) {
    SparseChain c;
    c.rows.resize(P.size());
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (P[i].size() != P.size()) throw std::invalid_argument("transition matrix must be square");
      for (std::size_t j = 0; j < P.size(); ++j)
        if (P[i][j] != 0.0) c.rows[i].push_back({j, P[i][j]});
    }
    return c;
  }

  static SparseChain from_kernel(const KernelMatrix& K) {
    SparseChain c;
    c.rows.resize(K.size());
    for (std::size_t i = 0; i < K.size(); ++i)
      for (const auto& e : K.rows[i]) c.rows[i].push_back({e.to, e.probability});
    return c;
  }

  void check_stochastic(double tol = 1e-12) const {
    for (std::size_t i = 0; i < size(); ++i) {
      double s = 0.0;
      for (auto [j, p] : rows[i]) {
        if (j >= size()) throw std::invalid_argument("transition target out of range");
        if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("transition probabilities must be >= 0");
        s += p;
      }
      if (std::abs(s - 1.0) > tol)
        throw std::invalid_argument("row " + std::to_string(i) + " sums to " + format_double(s) + ", expected 1");
    }
  }
};

struct StationaryDistribution {
  std::vector<double> probability;          // per node
  std::vector<std::size_t> node_action;     // joint action of each node
  std::size_t n_joint = 0;

  double operator[](std::size_t node) const { return probability[node]; }

  /// pi(a) = sum over hidden states of pi(a, xi).
  std::vector<double> marginal() const {
    std::vector<double> m(n_joint, 0.0);
    for (std::size_t k = 0; k < probability.size(); ++k) m[node_action[k]] += probability[k];
    return m;
  }
};

inline double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("l1_distance: size mismatch");
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += std::abs(a[k] - b[k]);
  return d;
}

/// ||pi P - pi||_1.
inline double stationary_residual(const SparseChain& P, const std::vector<double>& pi) {
  std::vector<double> out(P.size(), 0.0);
  for (std::size_t i = 0; i < P.size(); ++i)
    for (auto [j, p] : P.rows[i]) out[j] += pi[i] * p;
  return l1_distance(out, pi);
}

enum class StationaryMethod { gth, lu };

inline constexpr double kResidualTol = 1e-10;

namespace detail {

inline void require_irreducible(const SparseChain& P) {
  std::vector<std::vector<std::size_t>> adj(P.size());
  for (std::size_t i = 0; i < P.size(); ++i)
    for (auto [j, p] : P.rows[i])
      if (p > 0.0) adj[i].push_back(j);
  std::size_t nc = 0;
  strongly_connected_components(adj, nc);
  if (nc != 1)
    throw std::domain_error("chain is not irreducible (" + std::to_string(nc) +
                            " communicating classes); no unique stationary distribution");
}

/// Grassmann-Taksar-Heyman elimination. Uses no subtractions, so tiny
/// transition probabilities keep full relative accuracy.
inline std::vector<double> gth(const SparseChain& P) {
  const std::size_t N = P.size();
  std::vector<double> a(N * N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (auto [j, p] : P.rows[i]) a[i * N + j] += p;
  std::vector<std::size_t> col, row;
  for (std::size_t n = N; n-- > 1;) {
    double s = 0.0;
    row.clear();
    col.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (a[n * N + j] != 0.0) {
        s += a[n * N + j];
        row.push_back(j);
      }
    if (!(s > 0.0))
      throw std::domain_error("stationary solve lost irreducibility in floating point; epsilon is too small");
    for (std::size_t i = 0; i < n; ++i)
      if (a[i * N + n] != 0.0) {
        a[i * N + n] /= s;
        col.push_back(i);
      }
    for (std::size_t i : col) {
      const double f = a[i * N + n];
      double* ri = &a[i * N];
      const double* rn = &a[n * N];
      for (std::size_t j : row) ri[j] += f * rn[j];
    }
  }
  std::vector<double> x(N, 0.0);
  x[0] = 1.0;
  for (std::size_t n = 1; n < N; ++n) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += x[i] * a[i * N + n];
    x[n] = v;
  }
  double total = 0.0;
  for (double v : x) total += v;
  for (double& v : x) v /= total;
  return x;
}

/// pi (P - I) = 0 with the last equation replaced by sum(pi) = 1, solved by a
/// pivoting LU factorization.
inline std::vector<double> lu(const SparseChain& P) {
  const std::size_t N = P.size();
  const Eigen::Index n = static_cast<Eigen::Index>(N);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  Eigen::VectorXd x;
  if (N <= 2000) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < N; ++i)
      for (auto [j, p] : P.rows[i]) A(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) += p;
    A.diagonal().array() -= 1.0;
    A.row(n - 1).setOnes();
    Eigen::FullPivLU<Eigen::MatrixXd> f(A);
    if (!f.isInvertible()) throw std::domain_error("stationary linear system is singular");
    x = f.solve(b);
  } else {
    std::vector<Eigen::Triplet<double>> t;
    for (std::size_t i = 0; i < N; ++i) {
      if (static_cast<Eigen::Index>(i) == n - 1) continue;
      t.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i), -1.0);
    }
    for (std::size_t i = 0; i < N; ++i)
      for (auto [j, p] : P.rows[i])
        if (static_cast<Eigen::Index>(j) != n - 1)
          t.emplace_back(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i), p);
    for (Eigen::Index i = 0; i < n; ++i) t.emplace_back(n - 1, i, 1.0);
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(t.begin(), t.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> f;
    f.compute(A);
    if (f.info() != Eigen::Success) throw std::domain_error("stationary linear system is singular");
    x = f.solve(b);
  }
  std::vector<double> out(N);
  for (std::size_t i = 0; i < N; ++i) out[i] = std::max(0.0, x(static_cast<Eigen::Index>(i)));
  double total = 0.0;
  for (double v : out) total += v;
  for (double& v : out) v /= total;
  return out;
}

}  // namespace detail

inline std::vector<double> stationary_vector(const SparseChain& P, StationaryMethod method = StationaryMethod::gth) {
  if (P.size() == 0) throw std::invalid_argument("empty chain");
  P.check_stochastic(1e-9);
  detail::require_irreducible(P);
  auto pi = method == StationaryMethod::gth ? detail::gth(P) : detail::lu(P);
  const double res = stationary_residual(P, pi);
  if (!(res < kResidualTol))
    throw std::runtime_error("stationary solve residual " + format_double(res) + " exceeds tolerance");
  return pi;
}

inline StationaryDistribution stationary_linear(const KernelMatrix& K, StationaryMethod method = StationaryMethod::gth) {
  std::size_t nc = 0;
  detail::strongly_connected_components(K.support(), nc);
  if (nc != 1) throw std::domain_error("kernel is not ergodic: its support has " + std::to_string(nc) + " classes");
  StationaryDistribution d;
  try {
    d.probability = stationary_vector(SparseChain::from_kernel(K), method);
  } catch (const std::domain_error& e) {
    throw std::domain_error(std::string("epsilon is too small for double precision: ") + e.what());
  }
  d.n_joint = K.codec.size();
  for (const auto& c : K.nodes) d.node_action.push_back(c.action);
  return d;
}

inline StationaryDistribution stationary_linear(const std::vector<std::vector<double>>& P,
                                                StationaryMethod method = StationaryMethod::gth) {
  StationaryDistribution d;
  d.probability = stationary_vector(SparseChain::from_dense(P), method);
  d.n_joint = P.size();
  for (std::size_t k = 0; k < P.size(); ++k) d.node_action.push_back(k);
  return d;
}

// ---------------------------------------------------------------------------
// Tree formula: mu(v) = sum over spanning in-trees rooted at v of the product
// of their edge probabilities.

inline constexpr std::size_t kTreeFormulaGuard = 8;

inline std::vector<double> tree_formula_vector(const SparseChain& P) {
  const std::size_t N = P.size();
  if (N == 0) throw std::invalid_argument("empty chain");
  if (N > kTreeFormulaGuard)
    throw std::length_error("tree formula enumeration is limited to " + std::to_string(kTreeFormulaGuard) + " nodes");
  std::vector<std::vector<std::pair<std::size_t, double>>> out(N);
  for (std::size_t i = 0; i < N; ++i)
    for (auto [j, p] : P.rows[i])
      if (j != i && p > 0.0) out[i].push_back({j, p});

  std::vector<double> mu(N, 0.0);
  std::vector<std::size_t> succ(N);
  for (std::size_t root = 0; root < N; ++root) {
    double total = 0.0;
    // Depth-first choice of one successor per non-root node; partial
    // products of zero are never formed because only positive edges are
    // offered.
    auto leads_to_root = [&](std::size_t upto) {
      for (std::size_t v = 0; v <= upto; ++v) {
        if (v == root) continue;
        std::size_t x = v, steps = 0;
        while (x != root && x <= upto && steps <= N) {
          x = succ[x];
          ++steps;
        }
        if (steps > N) return false;
      }
      return true;
    };
    auto rec = [&](auto&& self, std::size_t v, double prod) -> void {
      if (v == N) {
        total += prod;
        return;
      }
      if (v == root) {
        succ[v] = v;
        self(self, v + 1, prod);
        return;
      }
      for (auto [j, p] : out[v]) {
        succ[v] = j;
        if (!leads_to_root(v)) continue;
        self(self, v + 1, prod * p);
      }
    };
    rec(rec, 0, 1.0);
    mu[root] = total;
  }
  double z = 0.0;
  for (double v : mu) z += v;
  if (!(z > 0.0)) throw std::domain_error("no spanning in-tree exists; chain is not irreducible");
  for (double& v : mu) v /= z;
  return mu;
}

inline StationaryDistribution stationary_tree_formula(const KernelMatrix& K) {
  StationaryDistribution d;
  d.probability = tree_formula_vector(SparseChain::from_kernel(K));
  d.n_joint = K.codec.size();
  for (const auto& c : K.nodes) d.node_action.push_back(c.action);
  return d;
}

inline StationaryDistribution stationary_tree_formula(const std::vector<std::vector<double>>& P) {
  StationaryDistribution d;
  d.probability = tree_formula_vector(SparseChain::from_dense(P));
  d.n_joint = P.size();
  for (std::size_t k = 0; k < P.size(); ++k) d.node_action.push_back(k);
  return d;
}

inline void write_distribution_csv(std::ostream& os, const KernelMatrix& K, const StationaryDistribution& d) {
  os << "node,action_tuple,hidden_desc,probability\n";
  for (std::size_t k = 0; k < K.size(); ++k)
    write_csv_row(os, {std::to_string(k), format_action_tuple(K.codec.decode(K.nodes[k].action)),
                       hidden_desc(K.rule, K.nodes[k]), format_double(d.probability[k])});
}

// ---------------------------------------------------------------------------
// Empirical occupancy

class OccupancyTracker {
 public:
  /// window = 0 keeps every visit; otherwise only the most recent `window`.
  explicit OccupancyTracker(std::size_t n_nodes, std::size_t window = 0) : counts_(n_nodes, 0), window_(window) {}

  void track(std::size_t node) {
    if (node >= counts_.size()) throw std::out_of_range("occupancy node out of range");
    ++counts_[node];
    ++total_;
    if (window_ > 0) {
      recent_.push_back(node);
      if (recent_.size() > window_) {
        --counts_[recent_.front()];
        --total_;
        recent_.pop_front();
      }
    }
  }

  std::size_t total() const { return total_; }
  std::size_t window() const { return window_; }
  const std::vector<std::size_t>& counts() const { return counts_; }

  std::vector<double> empirical() const {
    if (total_ == 0) throw std::logic_error("occupancy is undefined before any visit");
    std::vector<double> out(counts_.size());
    for (std::size_t k = 0; k < counts_.size(); ++k)
      out[k] = static_cast<double>(counts_[k]) / static_cast<double>(total_);
    return out;
  }

 private:
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
  std::size_t window_;
  std::deque<std::size_t> recent_;
};

}  // namespace eqsel
