#include <gtest/gtest.h>

#include <map>

#include "fewshot/sampler.hpp"
#include "sampling_oracle.hpp"
#include "test_support.hpp"

using namespace fewshot;

namespace {

Catalog flat_catalog(std::size_t classes, std::size_t examples, std::size_t datasets = 1) {
  Catalog cat;
  for (std::size_t d = 0; d < datasets; ++d) {
    const auto id = "ds" + std::to_string(d);
    cat.datasets.push_back({id, id, DatasetKind::kFlat, false});
    for (std::size_t c = 0; c < classes; ++c)
      cat.classes.push_back({id, id + "_c" + std::to_string(c), Split::kTrain, examples, {}, {}});
  }
  return cat;
}

}  // namespace

TEST(QuerySize, Formula) {
  EXPECT_EQ(compute_query_size(std::vector<std::size_t>{20, 20, 20}), 10u);
  EXPECT_EQ(compute_query_size(std::vector<std::size_t>{7, 30}), 3u);
  EXPECT_EQ(compute_query_size(std::vector<std::size_t>{2, 100}), 1u);
}

TEST(SupportSize, Formula) {
  EXPECT_EQ(compute_support_size(1.0, std::vector<std::size_t>(5, 200), 10), 500u);
  EXPECT_EQ(compute_support_size(0.3, std::vector<std::size_t>(2, 30), 10), 12u);
  EXPECT_EQ(compute_support_size(0.001, std::vector<std::size_t>(5, 50), 5), 5u);
}

TEST(SupportSize, MonotoneInBeta) {
  CounterRng rng(SeedContext{8, 0}, StreamTag::kInit);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::size_t> sizes(5 + rng.uniform_index(46));
    for (auto& s : sizes) s = 2 + rng.uniform_index(1500);
    const auto q = compute_query_size(sizes);
    const double b1 = 1.0 - rng.uniform_unit();
    const double b2 = 1.0 - rng.uniform_unit();
    const auto [lo, hi] = std::minmax(b1, b2);
    EXPECT_LE(compute_support_size(lo, sizes, q), compute_support_size(hi, sizes, q));
  }
}

TEST(Shots, EqualSizesAndAlphasGiveUniformProportions) {
  const std::vector<double> alphas(4, 0.3);
  const std::vector<std::size_t> sizes(4, 50);
  for (double r : compute_shot_proportions(alphas, sizes)) EXPECT_DOUBLE_EQ(r, 0.25);
}

TEST(Shots, FormulaExamples) {
  // R_c = 0.5 for both classes.
  auto shots = compute_shots(std::vector<double>{0.0, 0.0}, std::vector<std::size_t>{100, 100}, 11, 10);
  EXPECT_EQ(shots[0], 5u);
  // R_0 = 0.9: sizes 20 and ~2.2 are not integral, so scale alphas instead:
  // exp(a0)*20 / (exp(a0)*20 + 4 * exp(a1)*20) = 0.9 with a1 = 0 -> exp(a0) = 36.
  shots = compute_shots(std::vector<double>{std::log(36.0), 0.0, 0.0, 0.0, 0.0},
                        std::vector<std::size_t>(5, 20), 100, 5);
  EXPECT_EQ(shots[0], 15u);  // min(floor(0.9 * 95) + 1 = 86, 20 - 5)
}

TEST(Shots, MatchOracleOnRandomTuples) {
  CounterRng rng(SeedContext{9, 0}, StreamTag::kInit);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 5 + rng.uniform_index(46);
    std::vector<std::size_t> sizes(n);
    std::vector<long> im(n);
    std::vector<double> alphas(n);
    for (std::size_t c = 0; c < n; ++c) {
      sizes[c] = 2 + rng.uniform_index(rng.uniform_index(2) ? 40 : 1500);
      im[c] = static_cast<long>(sizes[c]);
      alphas[c] = std::log(0.5) + rng.uniform_unit() * (std::log(2.0) - std::log(0.5));
    }
    const double beta = 1.0 - rng.uniform_unit();
    const auto want = fixtures::oracle_sizes(beta, alphas, im);
    const auto q = compute_query_size(sizes);
    const auto s = compute_support_size(beta, sizes, q);
    ASSERT_EQ(static_cast<long>(q), want.q);
    ASSERT_EQ(static_cast<long>(s), want.support);
    const auto shots = compute_shots(alphas, sizes, s, q);
    for (std::size_t c = 0; c < n; ++c) ASSERT_EQ(static_cast<long>(shots[c]), want.shots[c]);
  }
}

TEST(SampleDataset, SingleEligibleDataset) {
  const auto cat = flat_catalog(10, 20);
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  for (std::uint64_t i = 0; i < 50; ++i) EXPECT_EQ(sampler.sample_dataset({1, i}), 0u);
}

TEST(SampleDataset, UniformOverEightDatasets) {
  const auto cat = flat_catalog(6, 20, 8);
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  std::vector<int> hist(8, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++hist[sampler.sample_dataset({3, static_cast<std::uint64_t>(i)})];
  double chi2 = 0.0;
  for (int h : hist) {
    EXPECT_NEAR(static_cast<double>(h) / draws, 0.125, 0.005);
    chi2 += (h - draws / 8.0) * (h - draws / 8.0) / (draws / 8.0);
  }
  EXPECT_LT(chi2, 24.3);  // chi-square(7) at p = 0.001
}

TEST(SampleDataset, OnlyReservedDatasetsInTrainIsAnError) {
  Catalog cat;
  cat.datasets.push_back({"r", "r", DatasetKind::kFlat, true});
  for (int c = 0; c < 10; ++c) cat.classes.push_back({"r", "c" + std::to_string(c), Split::kTest, 20, {}, {}});
  const EpisodeSampler train(cat, {}, Split::kTrain);
  EXPECT_THROW(train.sample_dataset({0, 0}), ValidationError);
  const EpisodeSampler test(cat, {}, Split::kTest);
  EXPECT_EQ(test.sample_dataset({0, 0}), 0u);
}

TEST(SampleDataset, DatasetsTooSmallForAnEpisodeAreSkipped) {
  auto cat = flat_catalog(10, 20);
  cat.datasets.push_back({"tiny", "tiny", DatasetKind::kFlat, false});
  for (int c = 0; c < 4; ++c) cat.classes.push_back({"tiny", "t" + std::to_string(c), Split::kTrain, 20, {}, {}});
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  EXPECT_EQ(sampler.plans().size(), 1u);
}

TEST(SampleClassSet, FiveClassFlatDatasetUsesAll) {
  const auto cat = flat_catalog(5, 20);
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  for (std::uint64_t i = 0; i < 20; ++i) {
    auto classes = sampler.sample_class_set(0, {4, i});
    std::sort(classes.begin(), classes.end());
    EXPECT_EQ(classes, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  }
}

TEST(SampleClassSet, DagNodeWithSixLeaves) {
  Catalog cat;
  cat.datasets.push_back({"g", "g", DatasetKind::kImagenetDag, false});
  for (int i = 0; i < 6; ++i) {
    const auto leaf = "leaf" + std::to_string(i);
    cat.hierarchy_edges.push_back({"g", "six", leaf});
    cat.classes.push_back({"g", leaf, Split::kTrain, 20, {}, {}});
  }
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  auto classes = sampler.sample_class_set(0, {0, 0});
  std::sort(classes.begin(), classes.end());
  EXPECT_EQ(classes, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(SampleClassSet, DagNodeWithEightyLeavesSubsamplesFiftyUniformly) {
  Catalog cat;
  cat.datasets.push_back({"g", "g", DatasetKind::kImagenetDag, false});
  for (int i = 0; i < 80; ++i) {
    const auto leaf = "leaf" + std::to_string(i);
    cat.hierarchy_edges.push_back({"g", "wide", leaf});
    cat.classes.push_back({"g", leaf, Split::kTrain, 20, {}, {}});
  }
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  std::vector<int> hits(80, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto classes = sampler.sample_class_set(0, {5, static_cast<std::uint64_t>(i)});
    ASSERT_EQ(classes.size(), 50u);
    for (auto c : classes) ++hits[c];
  }
  // Binomial(10^4, 0.625): sd ~ 48.4; allow 5 sd.
  for (int h : hits) EXPECT_NEAR(h, draws * 50.0 / 80.0, 242.0);
}

TEST(SampleClassSet, OmniglotStaysWithinOneAlphabet) {
  CounterRng rng(SeedContext{6, 0}, StreamTag::kInit);
  Catalog cat;
  fixtures::add_alphabet_dataset(cat, "om", 10, rng);
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  for (std::uint64_t i = 0; i < 500; ++i) {
    const auto classes = sampler.sample_class_set(0, {7, i});
    std::set<std::string> alphabets;
    for (auto c : classes) alphabets.insert(*cat.classes[c].alphabet_id);
    EXPECT_EQ(alphabets.size(), 1u);
    EXPECT_GE(classes.size(), 5u);
  }
}

TEST(SampleEpisode, InvariantsHoldOnMixedCatalog) {
  const auto cat = fixtures::mixed_catalog(11);
  const SamplerConfig config;
  for (auto split : {Split::kTrain, Split::kValid, Split::kTest}) {
    const EpisodeSampler sampler(cat, config, split);
    for (std::uint64_t i = 0; i < 2000; ++i) {
      const auto ep = sampler.sample_episode({12, i});
      const auto bad = check_episode(ep, cat, config);
      ASSERT_TRUE(bad.empty()) << bad.front();
    }
  }
}

TEST(SampleEpisode, SameSeedGivesIdenticalStream) {
  const auto cat = fixtures::mixed_catalog(2);
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  std::string a, b;
  for (std::uint64_t i = 0; i < 200; ++i) {
    a += episode_to_json(sampler.sample_episode({99, i}), cat).dump() + "\n";
    b += episode_to_json(sample_episode(cat, {}, Split::kTrain, {99, i}), cat).dump() + "\n";
  }
  EXPECT_EQ(a, b);
}

TEST(SampleEpisode, WaysOnSixtyClassFlatDatasetAreUniform) {
  const auto cat = flat_catalog(60, 30);
  const EpisodeSampler sampler(cat, {}, Split::kTrain);
  std::map<std::size_t, int> hist;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i)
    ++hist[sampler.sample_class_set(0, {13, static_cast<std::uint64_t>(i)}).size()];
  ASSERT_EQ(hist.size(), 46u);
  EXPECT_EQ(hist.begin()->first, 5u);
  EXPECT_EQ(hist.rbegin()->first, 50u);
  double chi2 = 0.0;
  const double expected = draws / 46.0;
  for (const auto& [_, h] : hist) chi2 += (h - expected) * (h - expected) / expected;
  EXPECT_LT(chi2, 80.1);  // chi-square(45) at p = 0.001
}

TEST(SampleEpisode, JsonRoundTrip) {
  const auto cat = fixtures::mixed_catalog(3);
  const EpisodeSampler sampler(cat, {}, Split::kTest);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto ep = sampler.sample_episode({1, i});
    const auto j = nlohmann::json::parse(episode_to_json(ep, cat).dump());
    EXPECT_EQ(episode_from_json(j, cat), ep);
  }
}

TEST(SampleEpisode, FixedShape) {
  const auto cat = flat_catalog(20, 30);
  SamplerConfig config;
  config.fixed_ways = 5;
  config.fixed_shots = 5;
  config.fixed_query = 10;
  const EpisodeSampler sampler(cat, config, Split::kTrain);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto ep = sampler.sample_episode({1, i});
    EXPECT_EQ(ep.ways(), 5u);
    EXPECT_EQ(ep.support.size(), 25u);
    EXPECT_EQ(ep.query.size(), 50u);
    EXPECT_TRUE(check_episode(ep, cat, config).empty());
  }
}

TEST(SamplerConfig, RejectsBadIntervals) {
  SamplerConfig c;
  c.min_ways = 1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.beta_low = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.max_support_total = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}
