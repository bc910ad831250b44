#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace eqsel {

struct WeightedEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double weight = 0.0;
};

/// Spanning in-tree: every node except the root has one outgoing tree edge
/// and follows a unique path to the root.
struct InTree {
  std::size_t root = 0;
  double cost = 0.0;
  std::vector<std::size_t> successor;  // successor[root] == root
  std::vector<std::size_t> edge_index;  // index into the input edge list, root entry unused
};

namespace detail {

class RollbackUnionFind {
 public:
  explicit RollbackUnionFind(std::size_t n) : e_(n, -1) {}
  int find(int x) const {
    while (e_[static_cast<std::size_t>(x)] >= 0) x = e_[static_cast<std::size_t>(x)];
    return x;
  }
  std::size_t time() const { return st_.size(); }
  void rollback(std::size_t t) {
    for (std::size_t i = st_.size(); i-- > t;) e_[static_cast<std::size_t>(st_[i].first)] = st_[i].second;
    st_.resize(t);
  }
  bool join(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (e_[static_cast<std::size_t>(a)] > e_[static_cast<std::size_t>(b)]) std::swap(a, b);
    st_.push_back({a, e_[static_cast<std::size_t>(a)]});
    st_.push_back({b, e_[static_cast<std::size_t>(b)]});
    e_[static_cast<std::size_t>(a)] += e_[static_cast<std::size_t>(b)];
    e_[static_cast<std::size_t>(b)] = a;
    return true;
  }

 private:
  std::vector<int> e_;
  std::vector<std::pair<int, int>> st_;
};

struct HeapEdge {
  int a, b;
  double w;
  std::size_t id;
};

struct HeapNode {
  HeapEdge key;
  HeapNode* l = nullptr;
  HeapNode* r = nullptr;
  double delta = 0.0;
  void prop() {
    key.w += delta;
    if (l) l->delta += delta;
    if (r) r->delta += delta;
    delta = 0.0;
  }
};

inline HeapNode* merge(HeapNode* a, HeapNode* b) {
  if (!a || !b) return a ? a : b;
  a->prop();
  b->prop();
  if (a->key.w > b->key.w) std::swap(a, b);
  HeapNode* merged = merge(b, a->r);
  a->r = a->l;
  a->l = merged;
  return a;
}

inline void pop(HeapNode*& a) {
  a->prop();
  a = merge(a->l, a->r);
}

}  // namespace detail

/// Minimum-cost spanning in-tree rooted at `root`, by the contraction-based
/// optimum branching algorithm (Tarjan's O(E log V) form with mergeable
/// heaps) run on the reversed graph. Self-loops are ignored. Returns nullopt
/// when some node cannot reach the root.
inline std::optional<InTree> min_arborescence(std::size_t n, const std::vector<WeightedEdge>& edges, std::size_t root) {
  if (root >= n) throw std::out_of_range("arborescence root out of range");
  // Out-branching from root over reversed edges: edge u->v becomes v->u, so
  // each non-root node u picks the incoming reversed edge (its own out-edge).
  std::vector<detail::HeapNode> pool;
  pool.reserve(edges.size());
  std::vector<detail::HeapNode*> heap(n, nullptr);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    if (e.from >= n || e.to >= n) throw std::out_of_range("edge endpoint out of range");
    if (e.from == e.to) continue;
    if (!(e.weight >= 0.0) && !(e.weight < 0.0)) throw std::invalid_argument("edge weight is NaN");
    pool.push_back({{static_cast<int>(e.to), static_cast<int>(e.from), e.weight, k}});
    heap[e.from] = detail::merge(heap[e.from], &pool.back());
  }

  detail::RollbackUnionFind uf(n);
  std::vector<int> seen(n, -1), path(n);
  seen[root] = static_cast<int>(root);
  std::vector<detail::HeapEdge> Q(n), in(n, {-1, -1, 0.0, 0});
  struct Cycle {
    int u;
    std::size_t time;
    std::vector<detail::HeapEdge> comp;
  };
  std::deque<Cycle> cycles;
  for (std::size_t s = 0; s < n; ++s) {
    int u = static_cast<int>(s);
    std::size_t qi = 0;
    while (seen[static_cast<std::size_t>(u)] < 0) {
      auto& hu = heap[static_cast<std::size_t>(u)];
      if (!hu) return std::nullopt;
      hu->prop();
      const detail::HeapEdge e = hu->key;
      hu->delta -= e.w;
      detail::pop(hu);
      Q[qi] = e;
      path[qi++] = u;
      seen[static_cast<std::size_t>(u)] = static_cast<int>(s);
      u = uf.find(e.a);
      if (seen[static_cast<std::size_t>(u)] == static_cast<int>(s)) {
        detail::HeapNode* cyc = nullptr;
        const std::size_t end = qi, time = uf.time();
        int w;
        do {
          w = path[--qi];
          cyc = detail::merge(cyc, heap[static_cast<std::size_t>(w)]);
        } while (uf.join(u, w));
        u = uf.find(u);
        heap[static_cast<std::size_t>(u)] = cyc;
        seen[static_cast<std::size_t>(u)] = -1;
        cycles.push_front({u, time, std::vector<detail::HeapEdge>(Q.begin() + static_cast<std::ptrdiff_t>(qi),
                                                                  Q.begin() + static_cast<std::ptrdiff_t>(end))});
      }
    }
    for (std::size_t i = 0; i < qi; ++i) in[static_cast<std::size_t>(uf.find(Q[i].b))] = Q[i];
  }
  for (auto& c : cycles) {
    uf.rollback(c.time);
    const detail::HeapEdge in_edge = in[static_cast<std::size_t>(c.u)];
    for (const auto& e : c.comp) in[static_cast<std::size_t>(uf.find(e.b))] = e;
    in[static_cast<std::size_t>(uf.find(in_edge.b))] = in_edge;
  }

  InTree t;
  t.root = root;
  t.successor.assign(n, root);
  t.edge_index.assign(n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    if (v == root) continue;
    const auto& e = in[v];
    t.successor[v] = static_cast<std::size_t>(e.a);
    t.edge_index[v] = e.id;
    t.cost += edges[e.id].weight;
  }
  return t;
}

/// True when `successor` describes a spanning in-tree to `root`.
inline bool is_in_tree(const std::vector<std::size_t>& successor, std::size_t root) {
  const std::size_t n = successor.size();
  if (root >= n || successor[root] != root) return false;
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t x = v, steps = 0;
    while (x != root) {
      if (successor[x] >= n || ++steps > n) return false;
      x = successor[x];
    }
  }
  return true;
}

}  // namespace eqsel
