#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "fewshot/eval.hpp"
#include "fewshot/rng.hpp"

using namespace fewshot;

namespace {

std::string read_fixture(const std::string& name) {
  std::ifstream in(std::string(FEWSHOT_FIXTURE_DIR) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Expected ranks straight from the fixture's fifth column.
std::map<std::pair<std::string, std::string>, double> printed_ranks(const std::string& csv) {
  std::map<std::pair<std::string, std::string>, double> out;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string x;
    while (std::getline(ls, x, ',')) f.push_back(x);
    out[{f[0], f[1]}] = std::stod(f[4]);
  }
  return out;
}

std::map<std::string, double> printed_average(const std::string& csv) {
  std::map<std::string, double> out;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    out[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  return out;
}

EpisodeResult result(std::string ds, std::vector<std::size_t> shots, std::vector<bool> correct,
                     std::vector<double> precision) {
  EpisodeResult r;
  r.dataset_id = std::move(ds);
  r.way = shots.size();
  r.shots = std::move(shots);
  r.correct = std::move(correct);
  r.per_class_precision = std::move(precision);
  return r;
}

}  // namespace

TEST(Aggregate, PerfectEpisodes) {
  const std::vector<double> acc(10, 1.0);
  const auto c = aggregate(acc);
  EXPECT_EQ(c.mean, 100.0);
  EXPECT_EQ(c.ci, 0.0);
  EXPECT_EQ(c.n, 10u);
}

TEST(Aggregate, AlternatingMatchesTextbookFormula) {
  std::vector<double> acc;
  for (int i = 0; i < 400; ++i) acc.push_back(i % 2);
  const auto c = aggregate(acc);
  // Sample variance of 200 zeros and 200 ones: 400 * 0.25 / 399.
  const long double sd = std::sqrt(100.0L / 399.0L);
  const long double half = 1.96L * 100.0L * sd / 20.0L;
  EXPECT_DOUBLE_EQ(c.mean, 50.0);
  EXPECT_NEAR(c.ci, static_cast<double>(half), 1e-12);
}

TEST(Aggregate, SingleEpisodeIsRejected) {
  const std::vector<double> acc{0.5};
  EXPECT_THROW(aggregate(acc), ValidationError);
}

TEST(Rank, IdenticalCellsShareRank) {
  const std::vector<AggregateCell> cells{{70.0, 1.0, 600}, {70.0, 1.0, 600}};
  EXPECT_EQ(rank_methods(cells), (std::vector<double>{1.5, 1.5}));
  const std::vector<AggregateCell> exact{{70.0, 0.0, 600}, {70.0, 0.0, 600}};
  EXPECT_EQ(rank_methods(exact), (std::vector<double>{1.5, 1.5}));
}

TEST(Rank, IlsvrcRowImagenetTrained) {
  // k-NN, Finetune, MatchingNet, ProtoNet, fo-MAML, RelationNet, Proto-MAML
  const std::vector<AggregateCell> row{{41.03, 1.01, 600}, {45.78, 1.10, 600}, {45.00, 1.10, 600}, {50.50, 1.08, 600},
                                       {45.51, 1.11, 600}, {34.69, 1.01, 600}, {49.53, 1.05, 600}};
  EXPECT_EQ(rank_methods(row), (std::vector<double>{6, 4, 4, 1.5, 4, 7, 1.5}));
}

TEST(Rank, TexturesRowThreeWayTie) {
  const std::vector<AggregateCell> row{{66.36, 0.75, 600}, {69.05, 0.90, 600}, {64.15, 0.85, 600}, {66.56, 0.83, 600},
                                       {68.04, 0.81, 600}, {52.97, 0.69, 600}, {66.49, 0.83, 600}};
  EXPECT_EQ(rank_methods(row), (std::vector<double>{4, 1.5, 6, 4, 1.5, 7, 4}));
}

TEST(Rank, SingleMethodRanksFirst) {
  const std::vector<AggregateCell> one{{12.0, 3.0, 10}};
  EXPECT_EQ(rank_methods(one), std::vector<double>{1.0});
}

TEST(Rank, PropertiesOnRandomTables) {
  CounterRng rng(SeedContext{30, 0}, StreamTag::kInit);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t m = 2 + rng.uniform_index(9);
    std::vector<AggregateCell> cells(m);
    for (auto& c : cells) c = {40.0 + 10.0 * rng.uniform_unit(), 2.0 * rng.uniform_unit(), 600};
    const auto ranks = rank_methods(cells);
    double total = 0.0;
    for (double r : ranks) total += r;
    EXPECT_DOUBLE_EQ(total, static_cast<double>(m * (m + 1)) / 2.0);

    // Reverse and rotate: each method keeps its rank.
    std::vector<std::size_t> perm(m);
    for (std::size_t i = 0; i < m; ++i) perm[i] = (m - 1 - i + t) % m;
    std::vector<AggregateCell> shuffled(m);
    for (std::size_t i = 0; i < m; ++i) shuffled[i] = cells[perm[i]];
    const auto r2 = rank_methods(shuffled);
    for (std::size_t i = 0; i < m; ++i) EXPECT_EQ(r2[i], ranks[perm[i]]);

    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) EXPECT_EQ(ties(cells[i], cells[j]), ties(cells[j], cells[i]));
  }
}

class PrintedTable : public ::testing::TestWithParam<std::string> {};

TEST_P(PrintedTable, ReproducesEveryRankAndAverage) {
  const auto csv = read_fixture("table_" + GetParam() + ".csv");
  ASSERT_FALSE(csv.empty());
  const auto cells = parse_cells_csv(csv);
  ASSERT_EQ(cells.size(), 70u);
  const auto table = build_rank_table(cells);
  const auto expected = printed_ranks(csv);
  for (std::size_t m = 0; m < table.methods.size(); ++m)
    for (std::size_t d = 0; d < table.datasets.size(); ++d)
      EXPECT_EQ(table.ranks[m][d], expected.at({table.methods[m], table.datasets[d]}))
          << table.methods[m] << " on " << table.datasets[d];
  const auto avg = average_rank(table);
  const auto printed = printed_average(read_fixture("avg_rank_" + GetParam() + ".csv"));
  for (std::size_t m = 0; m < table.methods.size(); ++m)
    EXPECT_NEAR(avg[m], printed.at(table.methods[m]), 1e-9) << table.methods[m];
}

INSTANTIATE_TEST_SUITE_P(Appendix, PrintedTable, ::testing::Values("imagenet_trained", "all_trained"));

TEST(AverageRank, SingleDatasetEqualsItsRank) {
  const std::vector<NamedCell> cells{{"a", "d", {50, 1, 600}}, {"b", "d", {60, 1, 600}}};
  const auto t = build_rank_table(cells);
  EXPECT_EQ(average_rank(t), (std::vector<double>{2.0, 1.0}));
}

TEST(AverageRank, MissingCellIsRejected) {
  const std::vector<NamedCell> cells{{"a", "d1", {50, 1, 600}}, {"b", "d1", {60, 1, 600}}, {"a", "d2", {50, 1, 600}}};
  EXPECT_THROW(build_rank_table(cells), ValidationError);
}

TEST(Bins, SingleWayGivesGlobalMean) {
  std::vector<EpisodeResult> rs;
  std::vector<double> acc;
  CounterRng rng(31);
  for (int i = 0; i < 50; ++i) {
    std::vector<bool> correct(10);
    for (auto&& b : correct) b = rng.uniform_unit() < 0.6;
    rs.push_back(result("d", {2, 2, 2, 2, 2}, correct, {1, 1, 1, 1, 1}));
    acc.push_back(rs.back().accuracy());
  }
  const auto rep = bin_reports(rs, BinAxis::kWay);
  ASSERT_EQ(rep.bins.size(), 1u);
  EXPECT_EQ(rep.bins[0].key, 5u);
  EXPECT_DOUBLE_EQ(rep.bins[0].cell.mean, aggregate(acc).mean);
}

TEST(Bins, ReciprocalWayAccuracy) {
  std::vector<EpisodeResult> rs;
  for (std::size_t way = 2; way <= 10; ++way)
    for (int rep = 0; rep < 3; ++rep) {
      std::vector<bool> correct(way * way, false);
      for (std::size_t i = 0; i < way; ++i) correct[i] = true;
      rs.push_back(result("d", std::vector<std::size_t>(way, 1), correct, std::vector<double>(way, 0.0)));
    }
  const auto rep = bin_reports(rs, BinAxis::kWay);
  ASSERT_EQ(rep.bins.size(), 9u);
  for (const auto& b : rep.bins) EXPECT_NEAR(b.cell.mean, 100.0 / static_cast<double>(b.key), 1e-12);
}

TEST(Bins, MatchGroupByOracle) {
  CounterRng rng(SeedContext{32, 0}, StreamTag::kInit);
  std::vector<EpisodeResult> rs;
  for (int i = 0; i < 500; ++i) {
    const std::size_t way = 2 + rng.uniform_index(6);
    std::vector<std::size_t> shots(way);
    std::vector<double> prec(way);
    for (std::size_t c = 0; c < way; ++c) {
      shots[c] = 1 + rng.uniform_index(8);
      prec[c] = rng.uniform_unit();
    }
    std::vector<bool> correct(way * 2);
    for (auto&& b : correct) b = rng.uniform_unit() < 0.5;
    auto r = result("d", shots, correct, prec);
    if (way == 2) r.lca_height = 1 + rng.uniform_index(4);
    rs.push_back(r);
  }
  // Oracle: sums and sums of squares per key.
  auto check = [&](BinAxis axis, auto key_values) {
    std::map<std::size_t, std::vector<double>> g;
    for (const auto& r : rs) key_values(r, g);
    const auto rep = bin_reports(rs, axis);
    std::size_t i = 0;
    for (const auto& [key, vals] : g) {
      if (vals.size() < 2) continue;
      long double s = 0, s2 = 0;
      for (double v : vals) {
        s += v;
        s2 += static_cast<long double>(v) * v;
      }
      const long double n = vals.size();
      const long double mean = s / n;
      const long double var = (s2 - n * mean * mean) / (n - 1);
      ASSERT_LT(i, rep.bins.size());
      EXPECT_EQ(rep.bins[i].key, key);
      EXPECT_NEAR(rep.bins[i].cell.mean, static_cast<double>(100 * mean), 1e-12);
      EXPECT_NEAR(rep.bins[i].cell.ci, static_cast<double>(100 * 1.96L * std::sqrt(var / n)), 1e-10);
      ++i;
    }
    EXPECT_EQ(i, rep.bins.size());
  };
  check(BinAxis::kWay, [](const EpisodeResult& r, auto& g) { g[r.way].push_back(r.accuracy()); });
  check(BinAxis::kShot, [](const EpisodeResult& r, auto& g) {
    for (std::size_t c = 0; c < r.way; ++c) g[r.shots[c]].push_back(r.per_class_precision[c]);
  });
  check(BinAxis::kLcaHeight, [](const EpisodeResult& r, auto& g) {
    if (r.lca_height) g[*r.lca_height].push_back(r.accuracy());
  });
}

TEST(Bins, SmallBinsAreOmittedAndReported) {
  std::vector<EpisodeResult> rs{result("d", {1, 1}, {true, false}, {1, 0}), result("d", {1, 1}, {true, true}, {1, 1}),
                                result("d", {1, 1, 1}, {true, true, true}, {1, 1, 1})};
  const auto rep = bin_reports(rs, BinAxis::kWay);
  ASSERT_EQ(rep.bins.size(), 1u);
  ASSERT_EQ(rep.omitted.size(), 1u);
  EXPECT_EQ(rep.omitted[0], (std::pair<std::size_t, std::size_t>{3, 1}));
}

TEST(Bins, UnknownAxisIsRejected) { EXPECT_THROW(parse_bin_axis("depth"), ValidationError); }

TEST(Results, JsonRoundTrip) {
  auto r = make_episode_result("ds", std::vector<std::size_t>{3, 1}, std::vector<int>{0, 0, 1, 1},
                               std::vector<int>{0, 1, 1, 1});
  r.method = "protonet";
  r.lca_height = 2;
  EXPECT_EQ(r.per_class_precision, (std::vector<double>{1.0, 2.0 / 3.0}));
  EXPECT_EQ(result_from_json(nlohmann::json::parse(result_to_json(r).dump())), r);
  r.method.clear();
  r.lca_height.reset();
  const auto j = result_to_json(r);
  EXPECT_FALSE(j.contains("method"));
  EXPECT_EQ(result_from_json(nlohmann::json::parse(j.dump())), r);
}

TEST(Results, NeverPredictedClassHasZeroPrecision) {
  const auto r = make_episode_result("ds", std::vector<std::size_t>{1, 1}, std::vector<int>{0, 1},
                                     std::vector<int>{0, 0});
  EXPECT_EQ(r.per_class_precision, (std::vector<double>{0.5, 0.0}));
}

TEST(Results, MalformedRecordsAreRejected) {
  EXPECT_THROW(result_from_json(nlohmann::json::parse(R"({"dataset":"d","way":2})")), ValidationError);
  EXPECT_THROW(result_from_json(nlohmann::json::parse(
                   R"({"dataset":"d","way":2,"shots":[1],"correct":[1,0],"per_class_precision":[1,0]})")),
               ValidationError);
  EXPECT_THROW(result_from_json(nlohmann::json::parse(
                   R"({"dataset":"d","way":2,"shots":[1,1],"correct":[1,2],"per_class_precision":[1,0]})")),
               ValidationError);
}

TEST(Delta, IdenticalSetsGiveZero) {
  const auto cells = parse_cells_csv(read_fixture("table_imagenet_trained.csv"));
  for (const auto& d : trainsource_delta(cells, cells)) EXPECT_EQ(d.delta(), 0.0);
}

TEST(Csv, RankTableRoundTripsThroughReader) {
  const auto cells = parse_cells_csv(read_fixture("table_all_trained.csv"));
  const auto csv = rank_table_csv(build_rank_table(cells));
  const auto again = build_rank_table(parse_cells_csv(csv));
  EXPECT_EQ(rank_table_csv(again), csv);
  EXPECT_NE(csv.find("fo_proto_maml,average,,,1.5\n"), std::string::npos);
}

TEST(Csv, ReaderRejectsBadInput) {
  EXPECT_THROW(parse_cells_csv("m,d,x\n"), ParseError);
  EXPECT_THROW(parse_cells_csv("method,dataset,mean,ci\na,b,1.0x,2\n"), ParseError);
  EXPECT_THROW(parse_cells_csv("method,dataset,mean,ci\na,b,1.0,-2\n"), ParseError);
}
