#pragma once

// Episode results, confidence intervals, tie-aware ranks and binned curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/error.hpp"
#include "json.hpp"

namespace fewshot {

struct EpisodeResult {
  std::string dataset_id;
  std::size_t way = 0;
  std::vector<std::size_t> shots;  // per class
  std::vector<bool> correct;       // per query, way * q entries
  std::vector<double> per_class_precision;
  std::string method;                   // optional in the record format
  std::optional<std::size_t> lca_height;  // binary episodes from a hierarchy

  double accuracy() const {
    if (correct.empty()) return 0.0;
    return static_cast<double>(std::count(correct.begin(), correct.end(), true)) / static_cast<double>(correct.size());
  }

  bool operator==(const EpisodeResult&) const = default;
};

/// Per-class precision TP_k / #predicted_k; a class never predicted gets 0.
inline EpisodeResult make_episode_result(std::string dataset_id, std::span<const std::size_t> shots,
                                         std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ValidationError("prediction count does not match query count");
  EpisodeResult r;
  r.dataset_id = std::move(dataset_id);
  r.way = shots.size();
  r.shots.assign(shots.begin(), shots.end());
  std::vector<double> tp(r.way, 0.0), pred(r.way, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    r.correct.push_back(truth[i] == predicted[i]);
    pred[static_cast<std::size_t>(predicted[i])] += 1.0;
    if (truth[i] == predicted[i]) tp[static_cast<std::size_t>(truth[i])] += 1.0;
  }
  for (std::size_t k = 0; k < r.way; ++k) r.per_class_precision.push_back(pred[k] > 0.0 ? tp[k] / pred[k] : 0.0);
  return r;
}

inline nlohmann::ordered_json result_to_json(const EpisodeResult& r) {
  nlohmann::ordered_json j;
  if (!r.method.empty()) j["method"] = r.method;
  j["dataset"] = r.dataset_id;
  j["way"] = r.way;
  j["shots"] = r.shots;
  std::vector<int> bits(r.correct.begin(), r.correct.end());
  j["correct"] = bits;
  j["per_class_precision"] = r.per_class_precision;
  if (r.lca_height) j["lca_height"] = *r.lca_height;
  return j;
}

inline EpisodeResult result_from_json(const nlohmann::json& j) {
  EpisodeResult r;
  try {
    r.dataset_id = j.at("dataset").get<std::string>();
    r.way = j.at("way").get<std::size_t>();
    r.shots = j.at("shots").get<std::vector<std::size_t>>();
    for (int b : j.at("correct").get<std::vector<int>>()) {
      if (b != 0 && b != 1) throw ValidationError("correct bits must be 0 or 1");
      r.correct.push_back(b == 1);
    }
    r.per_class_precision = j.at("per_class_precision").get<std::vector<double>>();
    if (j.contains("method")) r.method = j.at("method").get<std::string>();
    if (j.contains("lca_height")) r.lca_height = j.at("lca_height").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed episode result: ") + e.what());
  }
  if (r.shots.size() != r.way || r.per_class_precision.size() != r.way)
    throw ValidationError("episode result arrays do not match its way");
  if (r.correct.empty() || r.correct.size() % r.way != 0)
    throw ValidationError("correct bits must be a positive multiple of the way");
  for (double p : r.per_class_precision)
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("precision outside [0, 1]");
  return r;
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateCell {
  double mean = 0.0;  // percent
  double ci = 0.0;    // 95% halfwidth, percent
  std::size_t n = 0;
};

inline constexpr double kCiZ = 1.96;

/// Values are fractions in [0, 1]; output is in percent.
inline AggregateCell aggregate(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw ValidationError("aggregation needs at least 2 episodes, got " + std::to_string(n));
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {100.0 * mean, 100.0 * kCiZ * sd / std::sqrt(static_cast<double>(n)), n};
}

inline AggregateCell aggregate(std::span<const EpisodeResult> results) {
  std::vector<double> acc;
  acc.reserve(results.size());
  for (const auto& r : results) acc.push_back(r.accuracy());
  return aggregate(acc);
}

// ---------------------------------------------------------------------------
// Ranks

/// Zero mean difference is not rejected at 95%.
inline bool ties(const AggregateCell& a, const AggregateCell& b) {
  return std::abs(a.mean - b.mean) <= std::sqrt(a.ci * a.ci + b.ci * b.ci);
}

/// Ranks aligned with `cells`. Methods are sorted by mean descending; each
/// group starts at the best unranked method and takes every later method that
/// ties with it. A group gets the average of the positions it occupies.
inline std::vector<double> rank_methods(std::span<const AggregateCell> cells) {
  std::vector<std::size_t> order(cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cells[a].mean != cells[b].mean) return cells[a].mean > cells[b].mean;
    return cells[a].ci > cells[b].ci;
  });
  std::vector<double> ranks(cells.size(), 0.0);
  std::vector<bool> done(cells.size(), false);
  std::size_t next_position = 1;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (done[order[i]]) continue;
    std::vector<std::size_t> group{order[i]};
    for (std::size_t j = i + 1; j < order.size(); ++j)
      if (!done[order[j]] && ties(cells[order[i]], cells[order[j]])) group.push_back(order[j]);
    const double first = static_cast<double>(next_position);
    const double last = static_cast<double>(next_position + group.size() - 1);
    for (auto m : group) {
      ranks[m] = (first + last) / 2.0;
      done[m] = true;
    }
    next_position += group.size();
  }
  return ranks;
}

struct RankTable {
  std::vector<std::string> methods;   // first-seen order
  std::vector<std::string> datasets;  // first-seen order
  std::vector<std::vector<AggregateCell>> cells;  // [method][dataset]
  std::vector<std::vector<double>> ranks;         // [method][dataset]
};

struct NamedCell {
  std::string method;
  std::string dataset;
  AggregateCell cell;
};

inline RankTable build_rank_table(std::span<const NamedCell> input) {
  RankTable t;
  std::map<std::pair<std::string, std::string>, AggregateCell> by_key;
  for (const auto& c : input) {
    if (std::find(t.methods.begin(), t.methods.end(), c.method) == t.methods.end()) t.methods.push_back(c.method);
    if (std::find(t.datasets.begin(), t.datasets.end(), c.dataset) == t.datasets.end()) t.datasets.push_back(c.dataset);
    if (!by_key.emplace(std::pair{c.method, c.dataset}, c.cell).second)
      throw ValidationError("duplicate cell for " + c.method + " on " + c.dataset);
  }
  t.cells.assign(t.methods.size(), std::vector<AggregateCell>(t.datasets.size()));
  t.ranks.assign(t.methods.size(), std::vector<double>(t.datasets.size(), 0.0));
  for (std::size_t m = 0; m < t.methods.size(); ++m)
    for (std::size_t d = 0; d < t.datasets.size(); ++d) {
      const auto it = by_key.find({t.methods[m], t.datasets[d]});
      if (it == by_key.end()) throw ValidationError("missing cell for " + t.methods[m] + " on " + t.datasets[d]);
      t.cells[m][d] = it->second;
    }
  for (std::size_t d = 0; d < t.datasets.size(); ++d) {
    std::vector<AggregateCell> column;
    for (std::size_t m = 0; m < t.methods.size(); ++m) column.push_back(t.cells[m][d]);
    const auto r = rank_methods(column);
    for (std::size_t m = 0; m < t.methods.size(); ++m) t.ranks[m][d] = r[m];
  }
  return t;
}

inline std::vector<double> average_rank(const RankTable& t) {
  if (t.datasets.empty()) throw ValidationError("rank table has no datasets");
  std::vector<double> out;
  for (const auto& row : t.ranks) {
    if (row.size() != t.datasets.size()) throw ValidationError("rank table is incomplete");
    double s = 0.0;
    for (double r : row) s += r;
    out.push_back(s / static_cast<double>(row.size()));
  }
  return out;
}

/// Per (method, dataset) cells of a result set; empty method maps to "-".
inline std::vector<NamedCell> cells_from_results(std::span<const EpisodeResult> results) {
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : results) {
    std::pair key{r.method.empty() ? std::string("-") : r.method, r.dataset_id};
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.push_back(r.accuracy());
  }
  std::vector<NamedCell> out;
  for (const auto& key : order) out.push_back({key.first, key.second, aggregate(groups[key])});
  return out;
}

// ---------------------------------------------------------------------------
// Binned curves

enum class BinAxis { kWay, kShot, kLcaHeight };

inline std::string_view to_string(BinAxis a) {
  switch (a) {
    case BinAxis::kWay: return "way";
    case BinAxis::kShot: return "shot";
    case BinAxis::kLcaHeight: return "lca_height";
  }
  return "?";
}

inline BinAxis parse_bin_axis(std::string_view s) {
  if (s == "way") return BinAxis::kWay;
  if (s == "shot") return BinAxis::kShot;
  if (s == "lca_height") return BinAxis::kLcaHeight;
  throw ValidationError("unknown bin axis '" + std::string(s) + "'");
}

struct Bin {
  std::size_t key = 0;
  AggregateCell cell;
};

struct BinReport {
  BinAxis axis = BinAxis::kWay;
  std::vector<Bin> bins;                                   // ascending key
  std::vector<std::pair<std::size_t, std::size_t>> omitted;  // (key, n) with n < 2
};

/// way: episode accuracy per way. shot: per-class precision keyed by that
/// class's shots. lca_height: episode accuracy of results carrying a height.
inline BinReport bin_reports(std::span<const EpisodeResult> results, BinAxis axis) {
  std::map<std::size_t, std::vector<double>> groups;
  for (const auto& r : results) {
    switch (axis) {
      case BinAxis::kWay:
        groups[r.way].push_back(r.accuracy());
        break;
      case BinAxis::kShot:
        for (std::size_t c = 0; c < r.way; ++c) groups[r.shots[c]].push_back(r.per_class_precision[c]);
        break;
      case BinAxis::kLcaHeight:
        if (r.lca_height) groups[*r.lca_height].push_back(r.accuracy());
        break;
    }
  }
  BinReport rep;
  rep.axis = axis;
  for (const auto& [key, values] : groups) {
    if (values.size() < 2)
      rep.omitted.emplace_back(key, values.size());
    else
      rep.bins.push_back({key, aggregate(values)});
  }
  return rep;
}

struct TrainSourceDelta {
  std::string method;
  std::string dataset;
  double baseline = 0.0;
  double other = 0.0;
  double delta() const { return other - baseline; }
};

/// Pairs cells by (method, dataset); both sides must cover the same keys.
inline std::vector<TrainSourceDelta> trainsource_delta(std::span<const NamedCell> baseline,
                                                       std::span<const NamedCell> other) {
  std::map<std::pair<std::string, std::string>, double> rhs;
  for (const auto& c : other) rhs[{c.method, c.dataset}] = c.cell.mean;
  if (rhs.size() != baseline.size()) throw ValidationError("result sets cover different method/dataset pairs");
  std::vector<TrainSourceDelta> out;
  for (const auto& c : baseline) {
    const auto it = rhs.find({c.method, c.dataset});
    if (it == rhs.end()) throw ValidationError("no counterpart for " + c.method + " on " + c.dataset);
    out.push_back({c.method, c.dataset, c.cell.mean, it->second});
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

/// Reads `method,dataset,mean,ci[,...]` rows. Comment lines ('#'), the header
/// and rows with an empty mean (average-rank rows) are skipped.
inline std::vector<NamedCell> parse_cells_csv(std::string_view text) {
  std::vector<NamedCell> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == ',') {
        f.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    if (!header_seen) {
      header_seen = true;
      if (f.size() < 4 || f[0] != "method" || f[1] != "dataset" || f[2] != "mean" || f[3] != "ci")
        throw ParseError(line_no, "expected header method,dataset,mean,ci");
      continue;
    }
    if (f.size() < 4) throw ParseError(line_no, "expected at least 4 fields");
    if (f[2].empty()) continue;
    NamedCell c{f[0], f[1], {}};
    try {
      std::size_t used = 0;
      c.cell.mean = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
      c.cell.ci = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(line_no, "mean and ci must be numbers");
    }
    if (!(c.cell.ci >= 0.0)) throw ParseError(line_no, "ci must be nonnegative");
    out.push_back(std::move(c));
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Rows `method,dataset,mean,ci,rank`, then one `method,average,,,avg` row per method.
inline std::string rank_table_csv(const RankTable& t) {
  std::string out = "method,dataset,mean,ci,rank\n";
  for (std::size_t m = 0; m < t.methods.size(); ++m)
    for (std::size_t d = 0; d < t.datasets.size(); ++d)
      out += t.methods[m] + "," + t.datasets[d] + "," + format_fixed(t.cells[m][d].mean, 2) + "," +
             format_fixed(t.cells[m][d].ci, 2) + "," + format_number(t.ranks[m][d]) + "\n";
  const auto avg = average_rank(t);
  for (std::size_t m = 0; m < t.methods.size(); ++m)
    out += t.methods[m] + ",average,,," + format_number(avg[m]) + "\n";
  return out;
}

inline std::string bin_report_csv(const BinReport& rep) {
  std::string out = "axis,bin,mean,ci,n\n";
  const std::string axis(to_string(rep.axis));
  for (const auto& b : rep.bins)
    out += axis + "," + std::to_string(b.key) + "," + format_fixed(b.cell.mean, 4) + "," + format_fixed(b.cell.ci, 4) +
           "," + std::to_string(b.cell.n) + "\n";
  return out;
}

inline std::string delta_csv(std::span<const TrainSourceDelta> deltas) {
  std::string out = "method,dataset,baseline,other,delta\n";
  for (const auto& d : deltas)
    out += d.method + "," + d.dataset + "," + format_fixed(d.baseline, 4) + "," + format_fixed(d.other, 4) + "," +
           format_fixed(d.delta(), 4) + "\n";
  return out;
}

}  // namespace fewshot
