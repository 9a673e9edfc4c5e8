#pragma once

// Class hierarchy DAG and the algorithms run on it: leaf spans, sampling
// eligibility, the smallest covering span cap, split cuts and LCA height.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fewshot/catalog.hpp"
#include "fewshot/error.hpp"

namespace fewshot {

/// Fixed-size bitset over leaf indices.
class LeafSet {
 public:
  LeafSet() = default;
  explicit LeafSet(std::size_t n) : words_((n + 63) / 64, 0), size_(n) {}

  void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1U; }
  LeafSet& operator|=(const LeafSet& o) {
    for (std::size_t w = 0; w < words_.size(); ++w) words_[w] |= o.words_[w];
    return *this;
  }
  bool intersects(const LeafSet& o) const {
    for (std::size_t w = 0; w < words_.size(); ++w)
      if (words_[w] & o.words_[w]) return true;
    return false;
  }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(__builtin_popcountll(w));
    return c;
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      auto bits = words_[w];
      while (bits) {
        fn(w * 64 + static_cast<std::size_t>(__builtin_ctzll(bits)));
        bits &= bits - 1;
      }
    }
  }
  std::size_t universe() const { return size_; }

 private:
  std::vector<std::uint64_t> words_;
  std::size_t size_ = 0;
};

struct EligibilityBounds {
  std::size_t min_span = 5;
  std::size_t max_span = 392;
};

/// Immutable DAG over string node ids. Leaves are nodes without children.
class ClassDag {
 public:
  using NodeIndex = std::size_t;

  ClassDag() = default;

  /// Node order follows first appearance in `edges`, then `extra_nodes`.
  explicit ClassDag(std::span<const std::pair<std::string, std::string>> edges,
                    std::span<const std::string> extra_nodes = {}) {
    for (const auto& [p, c] : edges) {
      const auto pi = intern(p);
      const auto ci = intern(c);
      children_[pi].push_back(ci);
      parents_[ci].push_back(pi);
    }
    for (const auto& n : extra_nodes) intern(n);
    for (auto& ch : children_) {
      std::sort(ch.begin(), ch.end());
      ch.erase(std::unique(ch.begin(), ch.end()), ch.end());
    }
    for (auto& pa : parents_) {
      std::sort(pa.begin(), pa.end());
      pa.erase(std::unique(pa.begin(), pa.end()), pa.end());
    }
    build();
  }

  static ClassDag from_catalog(const Catalog& catalog, std::string_view dataset_id) {
    const auto edges = catalog.edges_of(dataset_id);
    return ClassDag(edges);
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(NodeIndex v) const { return names_[v]; }
  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }
  NodeIndex index(std::string_view id) const {
    const auto it = index_.find(std::string(id));
    if (it == index_.end()) throw ValidationError("unknown node '" + std::string(id) + "'");
    return it->second;
  }
  const std::vector<NodeIndex>& children(NodeIndex v) const { return children_[v]; }
  const std::vector<NodeIndex>& parents(NodeIndex v) const { return parents_[v]; }
  bool is_leaf(NodeIndex v) const { return children_[v].empty(); }

  /// Leaves in node order; leaf_ordinal maps a node to its position here.
  const std::vector<NodeIndex>& leaves() const { return leaves_; }
  std::size_t leaf_ordinal(NodeIndex v) const { return leaf_ordinal_[v]; }
  const std::vector<NodeIndex>& topological_order() const { return topo_; }

  const LeafSet& span(NodeIndex v) const { return span_[v]; }
  std::size_t span_size(NodeIndex v) const { return span_size_[v]; }

  /// Leaf ids reachable from `node`, in leaf order. A leaf spans itself.
  std::vector<std::string> leaves_spanned(std::string_view node) const {
    std::vector<std::string> out;
    span(index(node)).for_each([&](std::size_t ord) { out.push_back(names_[leaves_[ord]]); });
    return out;
  }

  std::vector<NodeIndex> leaves_spanned_indices(NodeIndex v) const {
    std::vector<NodeIndex> out;
    out.reserve(span_size_[v]);
    span(v).for_each([&](std::size_t ord) { out.push_back(leaves_[ord]); });
    return out;
  }

  /// Keeps exactly the target leaves and their ancestors.
  ClassDag induce(std::span<const std::string> target_leaves) const {
    std::vector<char> keep(size(), 0);
    std::vector<NodeIndex> stack;
    for (const auto& id : target_leaves) {
      const auto v = index(id);
      if (!is_leaf(v)) throw ValidationError("'" + id + "' is not a leaf");
      if (!keep[v]) {
        keep[v] = 1;
        stack.push_back(v);
      }
    }
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (auto p : parents_[v])
        if (!keep[p]) {
          keep[p] = 1;
          stack.push_back(p);
        }
    }
    std::vector<std::pair<std::string, std::string>> edges;
    std::vector<std::string> isolated;
    for (NodeIndex v = 0; v < size(); ++v) {
      if (!keep[v]) continue;
      bool any = !parents_[v].empty();
      for (auto c : children_[v])
        if (keep[c]) {
          edges.emplace_back(names_[v], names_[c]);
          any = true;
        }
      if (!any) isolated.push_back(names_[v]);
    }
    return ClassDag(edges, isolated);
  }

 private:
  NodeIndex intern(const std::string& id) {
    const auto [it, inserted] = index_.emplace(id, names_.size());
    if (inserted) {
      names_.push_back(id);
      children_.emplace_back();
      parents_.emplace_back();
    }
    return it->second;
  }

  void build() {
    const std::size_t n = names_.size();
    // Kahn's algorithm, parents before children, ties by node index.
    std::vector<std::size_t> indegree(n, 0);
    for (NodeIndex v = 0; v < n; ++v) indegree[v] = parents_[v].size();
    std::vector<NodeIndex> ready;
    for (NodeIndex v = n; v-- > 0;)
      if (indegree[v] == 0) ready.push_back(v);
    topo_.clear();
    while (!ready.empty()) {
      const auto v = ready.back();
      ready.pop_back();
      topo_.push_back(v);
      for (auto it = children_[v].rbegin(); it != children_[v].rend(); ++it)
        if (--indegree[*it] == 0) ready.push_back(*it);
    }
    if (topo_.size() != n) throw ValidationError("hierarchy contains a cycle");

    leaf_ordinal_.assign(n, std::numeric_limits<std::size_t>::max());
    leaves_.clear();
    for (NodeIndex v = 0; v < n; ++v)
      if (children_[v].empty()) {
        leaf_ordinal_[v] = leaves_.size();
        leaves_.push_back(v);
      }
    span_.assign(n, LeafSet(leaves_.size()));
    span_size_.assign(n, 0);
    for (auto it = topo_.rbegin(); it != topo_.rend(); ++it) {
      const auto v = *it;
      if (children_[v].empty()) span_[v].set(leaf_ordinal_[v]);
      for (auto c : children_[v]) span_[v] |= span_[c];
      span_size_[v] = span_[v].count();
    }
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, NodeIndex> index_;
  std::vector<std::vector<NodeIndex>> children_;
  std::vector<std::vector<NodeIndex>> parents_;
  std::vector<NodeIndex> topo_;
  std::vector<NodeIndex> leaves_;
  std::vector<std::size_t> leaf_ordinal_;
  std::vector<LeafSet> span_;
  std::vector<std::size_t> span_size_;
};

/// Internal nodes whose span size lies in [min_span, max_span], in node order.
inline std::vector<ClassDag::NodeIndex> eligible_internal_nodes(const ClassDag& dag, EligibilityBounds bounds) {
  std::vector<ClassDag::NodeIndex> out;
  for (ClassDag::NodeIndex v = 0; v < dag.size(); ++v) {
    if (dag.is_leaf(v)) continue;
    const auto s = dag.span_size(v);
    if (s >= bounds.min_span && s <= bounds.max_span) out.push_back(v);
  }
  return out;
}

/// Smallest max_span for which eligible internal nodes jointly span every leaf.
inline std::size_t smallest_cover_cap(const ClassDag& dag, std::size_t min_span) {
  // Each leaf needs its smallest qualifying ancestor; the cap is the largest
  // of those minima.
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> best(dag.leaves().size(), kNone);
  for (ClassDag::NodeIndex v = 0; v < dag.size(); ++v) {
    if (dag.is_leaf(v) || dag.span_size(v) < min_span) continue;
    const auto s = dag.span_size(v);
    dag.span(v).for_each([&](std::size_t ord) { best[ord] = std::min(best[ord], s); });
  }
  std::size_t cap = 0;
  for (std::size_t ord = 0; ord < best.size(); ++ord) {
    if (best[ord] == kNone)
      throw ValidationError("leaf '" + dag.name(dag.leaves()[ord]) + "' is not spanned by any internal node with span >= " +
                            std::to_string(min_span));
    cap = std::max(cap, best[ord]);
  }
  if (best.empty()) throw ValidationError("hierarchy has no leaves");
  return cap;
}

/// Leaves under valid_root -> valid, under test_root -> test, all else train.
inline std::map<std::string, Split> cut_splits(const ClassDag& dag, std::string_view valid_root,
                                               std::string_view test_root) {
  const auto vr = dag.index(valid_root);
  const auto tr = dag.index(test_root);
  if (dag.is_leaf(vr) || dag.is_leaf(tr)) throw ValidationError("split roots must be internal nodes");
  if (dag.span(vr).intersects(dag.span(tr)))
    throw ValidationError("split roots '" + std::string(valid_root) + "' and '" + std::string(test_root) +
                          "' share a leaf");
  std::map<std::string, Split> out;
  for (std::size_t ord = 0; ord < dag.leaves().size(); ++ord) {
    const auto& name = dag.name(dag.leaves()[ord]);
    out[name] = dag.span(vr).test(ord) ? Split::kValid : dag.span(tr).test(ord) ? Split::kTest : Split::kTrain;
  }
  return out;
}

namespace detail {

/// Longest path length from every ancestor of `target` down to `target`;
/// -1 for nodes that do not reach it.
inline std::vector<long> longest_paths_to(const ClassDag& dag, ClassDag::NodeIndex target) {
  std::vector<long> dist(dag.size(), -1);
  dist[target] = 0;
  const auto& topo = dag.topological_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const auto v = *it;
    if (v == target) continue;
    long best = -1;
    for (auto c : dag.children(v))
      if (dist[c] >= 0) best = std::max(best, dist[c] + 1);
    dist[v] = best;
  }
  return dist;
}

}  // namespace detail

/// Height of the lowest common ancestor of two leaves: over all common
/// ancestors, the minimum of the longest path to either leaf.
inline std::size_t lca_height(const ClassDag& dag, std::string_view leaf_a, std::string_view leaf_b) {
  const auto a = dag.index(leaf_a);
  const auto b = dag.index(leaf_b);
  if (a == b) throw ValidationError("lca_height needs two distinct leaves");
  if (!dag.is_leaf(a) || !dag.is_leaf(b)) throw ValidationError("lca_height is defined on leaves");
  const auto da = detail::longest_paths_to(dag, a);
  const auto db = detail::longest_paths_to(dag, b);
  long best = -1;
  for (ClassDag::NodeIndex v = 0; v < dag.size(); ++v) {
    if (da[v] < 0 || db[v] < 0) continue;
    const long h = std::max(da[v], db[v]);
    if (best < 0 || h < best) best = h;
  }
  if (best < 0)
    throw ValidationError("leaves '" + std::string(leaf_a) + "' and '" + std::string(leaf_b) +
                          "' have no common ancestor");
  return static_cast<std::size_t>(best);
}

}  // namespace fewshot
