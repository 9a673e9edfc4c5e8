#include <gtest/gtest.h>

#include "fewshot/hierarchy.hpp"
#include "test_support.hpp"

using namespace fewshot;
using fewshot::fixtures::BruteGraph;
using fewshot::fixtures::Edges;

namespace {

/// Full binary tree of the given depth; leaves named L0..L(2^depth - 1).
Edges binary_tree(int depth) {
  Edges e;
  std::vector<std::string> level{"root"};
  int leaf = 0;
  for (int d = 0; d < depth; ++d) {
    std::vector<std::string> next;
    for (const auto& p : level)
      for (int k = 0; k < 2; ++k) {
        const auto c = d + 1 == depth ? "L" + std::to_string(leaf++) : p + std::to_string(k);
        e.emplace_back(p, c);
        next.push_back(c);
      }
    level = next;
  }
  return e;
}

Edges star(const std::string& center, const std::string& prefix, int leaves) {
  Edges e;
  for (int i = 0; i < leaves; ++i) e.emplace_back(center, prefix + std::to_string(i));
  return e;
}

std::set<std::string> names(const ClassDag& dag, const std::vector<ClassDag::NodeIndex>& v) {
  std::set<std::string> out;
  for (auto i : v) out.insert(dag.name(i));
  return out;
}

}  // namespace

TEST(LeavesSpanned, BaseCases) {
  const ClassDag dag(binary_tree(3));
  EXPECT_EQ(dag.leaves_spanned("L5"), std::vector<std::string>{"L5"});
  EXPECT_EQ(dag.leaves_spanned("root").size(), 8u);
  EXPECT_THROW(dag.leaves_spanned("missing"), ValidationError);
}

TEST(LeavesSpanned, MatchesDfsOracleOnRandomDags) {
  CounterRng rng(SeedContext{1, 0}, StreamTag::kInit);
  for (int trial = 0; trial < 20; ++trial) {
    const auto edges = fixtures::random_dag(rng, 200, 0.02);
    if (edges.empty()) continue;
    const ClassDag dag(edges);
    const BruteGraph brute(edges);
    for (const auto& [v, _] : brute.children) {
      const auto got = dag.leaves_spanned(v);
      const auto want = brute.span(v);
      EXPECT_EQ(std::set<std::string>(got.begin(), got.end()), want);
    }
  }
}

TEST(LeavesSpanned, MonotoneAlongEdges) {
  CounterRng rng(SeedContext{2, 0}, StreamTag::kInit);
  const auto edges = fixtures::random_dag(rng, 120, 0.05);
  const ClassDag dag(edges);
  for (const auto& [p, c] : edges) {
    const auto& sp = dag.span(dag.index(p));
    dag.span(dag.index(c)).for_each([&](std::size_t ord) { EXPECT_TRUE(sp.test(ord)); });
  }
}

TEST(Eligibility, ChainAndStar) {
  const ClassDag chain(Edges{{"a", "b"}, {"b", "leaf"}});
  EXPECT_TRUE(eligible_internal_nodes(chain, {5, 392}).empty());
  const ClassDag s(star("hub", "x", 6));
  EXPECT_EQ(names(s, eligible_internal_nodes(s, {5, 392})), std::set<std::string>{"hub"});
}

TEST(Eligibility, MatchesBruteForce) {
  CounterRng rng(SeedContext{3, 0}, StreamTag::kInit);
  for (int trial = 0; trial < 200; ++trial) {
    const auto edges = fixtures::random_dag(rng, 30, 0.15);
    if (edges.empty()) continue;
    const ClassDag dag(edges);
    const BruteGraph brute(edges);
    const std::size_t lo = 1 + rng.uniform_index(4);
    const std::size_t hi = lo + rng.uniform_index(10);
    EXPECT_EQ(names(dag, eligible_internal_nodes(dag, {lo, hi})), brute.eligible(lo, hi));
  }
}

TEST(CoverCap, TwoStarsUnderRoot) {
  Edges e = star("s5", "a", 5);
  const auto big = star("s7", "b", 7);
  e.insert(e.end(), big.begin(), big.end());
  e.emplace_back("root", "s5");
  e.emplace_back("root", "s7");
  const ClassDag dag(e);
  EXPECT_EQ(smallest_cover_cap(dag, 5), 7u);
}

TEST(CoverCap, ErrorsWhenSomeLeafIsOnlyUnderSmallNodes) {
  const ClassDag dag(star("tiny", "t", 3));
  EXPECT_THROW(smallest_cover_cap(dag, 5), ValidationError);
}

TEST(CoverCap, MatchesLinearScanAndIsTight) {
  CounterRng rng(SeedContext{4, 0}, StreamTag::kInit);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto edges = fixtures::random_dag(rng, 25, 0.2);
    if (edges.empty()) continue;
    const ClassDag dag(edges);
    const BruteGraph brute(edges);
    const std::size_t min_span = 1 + rng.uniform_index(3);
    const long want = brute.cover_cap(min_span);
    if (want < 0) {
      EXPECT_THROW(smallest_cover_cap(dag, min_span), ValidationError);
      continue;
    }
    const auto cap = smallest_cover_cap(dag, min_span);
    EXPECT_EQ(static_cast<long>(cap), want);
    // cap - 1 must leave something uncovered.
    if (cap > min_span) {
      std::set<std::string> covered;
      for (auto v : eligible_internal_nodes(dag, {min_span, cap - 1}))
        for (const auto& l : dag.leaves_spanned(dag.name(v))) covered.insert(l);
      EXPECT_LT(covered.size(), dag.leaves().size());
    }
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(CutSplits, SyntheticTenLeaves) {
  Edges e;
  for (auto l : {"a", "b", "c"}) e.emplace_back("vroot", l);
  for (auto l : {"d", "e"}) e.emplace_back("troot", l);
  e.emplace_back("top", "vroot");
  e.emplace_back("top", "troot");
  for (auto l : {"f", "g", "h", "i", "j"}) e.emplace_back("top", l);
  const ClassDag dag(e);
  const auto cut = cut_splits(dag, "vroot", "troot");
  std::map<Split, int> n;
  for (const auto& [_, s] : cut) ++n[s];
  EXPECT_EQ(n[Split::kTrain], 5);
  EXPECT_EQ(n[Split::kValid], 3);
  EXPECT_EQ(n[Split::kTest], 2);
}

TEST(CutSplits, SharedLeafIsAnError) {
  const ClassDag dag(Edges{{"v", "a"}, {"v", "shared"}, {"t", "shared"}, {"t", "b"}});
  EXPECT_THROW(cut_splits(dag, "v", "t"), ValidationError);
  EXPECT_THROW(cut_splits(dag, "v", "a"), ValidationError);
}

TEST(LcaHeight, SiblingsAndBinaryTree) {
  const ClassDag sib(Edges{{"p", "x"}, {"p", "y"}});
  EXPECT_EQ(lca_height(sib, "x", "y"), 1u);
  const ClassDag tree(binary_tree(3));
  EXPECT_EQ(lca_height(tree, "L0", "L7"), 3u);
  EXPECT_EQ(lca_height(tree, "L0", "L1"), 1u);
  EXPECT_EQ(lca_height(tree, "L0", "L3"), 2u);
}

TEST(LcaHeight, NoCommonAncestorIsAnError) {
  const ClassDag dag(Edges{{"p", "x"}, {"q", "y"}});
  EXPECT_THROW(lca_height(dag, "x", "y"), ValidationError);
  EXPECT_THROW(lca_height(dag, "x", "x"), ValidationError);
}

TEST(LcaHeight, MatchesPathEnumerationAndIsSymmetric) {
  CounterRng rng(SeedContext{5, 0}, StreamTag::kInit);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto edges = fixtures::random_dag(rng, 16, 0.25);
    if (edges.empty()) continue;
    const ClassDag dag(edges);
    const BruteGraph brute(edges);
    const auto leaves = brute.leaves();
    for (const auto& a : leaves)
      for (const auto& b : leaves) {
        if (a >= b) continue;
        const long want = brute.lca_height(a, b);
        if (want < 0) {
          EXPECT_THROW(lca_height(dag, a, b), ValidationError);
          continue;
        }
        EXPECT_EQ(static_cast<long>(lca_height(dag, a, b)), want);
        EXPECT_EQ(lca_height(dag, a, b), lca_height(dag, b, a));
        ++checked;
      }
  }
  EXPECT_GT(checked, 200);
}

TEST(Induce, KeepsExactlyAncestorsOfTargets) {
  const ClassDag tree(binary_tree(3));
  const std::vector<std::string> targets{"L0", "L1", "L6"};
  const auto sub = tree.induce(targets);
  EXPECT_EQ(sub.leaves().size(), 3u);
  // root, root0, root00, root1, root11 plus three leaves
  EXPECT_EQ(sub.size(), 8u);
  EXPECT_EQ(sub.leaves_spanned("root").size(), 3u);
  EXPECT_FALSE(sub.contains("L2"));
  EXPECT_FALSE(sub.contains("root01"));
}

TEST(ClassDag, RejectsCycles) {
  EXPECT_THROW(ClassDag(Edges{{"a", "b"}, {"b", "c"}, {"c", "a"}}), ValidationError);
}
