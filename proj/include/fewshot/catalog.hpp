#pragma once

// Dataset/class manifest: types, parser, serializer and split assignment.
//
// Manifest grammar (UTF-8, one record per line, tab-separated, '#' comments):
//   D <dataset_id> <name> <kind> <reserved 0|1>
//   C <dataset_id> <class_id> <example_count> <split train|valid|test|-> <alphabet_id|->
//   E <dataset_id> <parent_node_id> <child_node_id>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

enum class DatasetKind { kFlat, kImagenetDag, kOmniglotAlphabets };
enum class Split { kTrain, kValid, kTest, kUnassigned };

inline std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kFlat: return "flat";
    case DatasetKind::kImagenetDag: return "imagenet_dag";
    case DatasetKind::kOmniglotAlphabets: return "omniglot_alphabets";
  }
  return "flat";
}

inline std::optional<DatasetKind> parse_dataset_kind(std::string_view s) {
  if (s == "flat") return DatasetKind::kFlat;
  if (s == "imagenet_dag") return DatasetKind::kImagenetDag;
  if (s == "omniglot_alphabets") return DatasetKind::kOmniglotAlphabets;
  return std::nullopt;
}

inline std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "-";
  }
  return "-";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid") return Split::kValid;
  if (s == "test") return Split::kTest;
  if (s == "-" || s == "unassigned") return Split::kUnassigned;
  return std::nullopt;
}

struct DatasetRecord {
  std::string dataset_id;
  std::string display_name;
  DatasetKind kind = DatasetKind::kFlat;
  bool reserved_for_eval = false;

  bool operator==(const DatasetRecord&) const = default;
};

struct ClassRecord {
  std::string dataset_id;
  std::string class_id;
  Split split = Split::kUnassigned;
  std::size_t example_count = 0;
  std::optional<std::string> alphabet_id;
  /// Explicit example ids; when empty they are synthesized as "class_id/000".
  std::vector<std::string> example_ids;

  std::string example_id(std::size_t index) const {
    if (!example_ids.empty()) return example_ids.at(index);
    std::string digits = std::to_string(index);
    const std::size_t width = std::max<std::size_t>(3, std::to_string(example_count ? example_count - 1 : 0).size());
    if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    return class_id + "/" + digits;
  }

  bool operator==(const ClassRecord&) const = default;
};

struct HierarchyEdge {
  std::string dataset_id;
  std::string parent;
  std::string child;

  bool operator==(const HierarchyEdge&) const = default;
};

/// Immutable after construction; all lookups are const.
struct Catalog {
  std::vector<DatasetRecord> datasets;
  std::vector<ClassRecord> classes;
  std::vector<HierarchyEdge> hierarchy_edges;

  bool operator==(const Catalog&) const = default;

  const DatasetRecord* find_dataset(std::string_view id) const {
    for (const auto& d : datasets)
      if (d.dataset_id == id) return &d;
    return nullptr;
  }

  std::vector<std::size_t> class_indices(std::string_view dataset_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i].dataset_id == dataset_id) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> class_indices(std::string_view dataset_id, Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i].dataset_id == dataset_id && classes[i].split == split) out.push_back(i);
    return out;
  }

  std::vector<std::pair<std::string, std::string>> edges_of(std::string_view dataset_id) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : hierarchy_edges)
      if (e.dataset_id == dataset_id) out.emplace_back(e.parent, e.child);
    return out;
  }
};

struct ParseIssue {
  std::size_t line = 0;
  std::string message;
};

struct ParseReport {
  std::optional<Catalog> catalog;
  std::vector<ParseIssue> issues;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool valid_id(std::string_view s) {
  if (s.empty()) return false;
  return std::none_of(s.begin(), s.end(), [](char c) {
    return c == '\t' || c == '\n' || c == '\r' || c == '\0';
  });
}

inline bool has_cycle(const std::unordered_map<std::string, std::vector<std::string>>& children) {
  enum Color { kWhite, kGrey, kBlack };
  std::unordered_map<std::string, Color> color;
  for (const auto& [start, _] : children) {
    if (color[start] != kWhite) continue;
    std::vector<std::pair<std::string, std::size_t>> stack{{start, 0}};
    color[start] = kGrey;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      auto it = children.find(node);
      if (it == children.end() || next >= it->second.size()) {
        color[node] = kBlack;
        stack.pop_back();
        continue;
      }
      const std::string child = it->second[next++];
      const Color c = color[child];
      if (c == kGrey) return true;
      if (c == kWhite) {
        color[child] = kGrey;
        stack.emplace_back(child, 0);
      }
    }
  }
  return false;
}

}  // namespace detail

/// Parses a manifest, collecting every problem found rather than stopping at
/// the first. `catalog` is set only when `issues` is empty.
inline ParseReport parse_catalog_report(std::string_view text) {
  ParseReport report;
  Catalog cat;
  auto issue = [&](std::size_t line, std::string msg) {
    report.issues.push_back({line, std::move(msg)});
  };

  std::vector<std::size_t> dataset_lines, class_lines, edge_lines;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos || line[first] == '#') {
      if (end == text.size()) break;
      continue;
    }
    const auto fields = detail::split_tabs(line);
    const std::string_view tag = fields[0];
    auto check_ids = [&](std::size_t from) {
      for (std::size_t i = from; i < fields.size(); ++i)
        if (!detail::valid_id(fields[i])) {
          issue(line_no, "empty field " + std::to_string(i + 1));
          return false;
        }
      return true;
    };
    if (tag == "D") {
      if (fields.size() != 5) {
        issue(line_no, "dataset record needs 5 fields, got " + std::to_string(fields.size()));
      } else if (check_ids(1)) {
        const auto kind = parse_dataset_kind(fields[3]);
        if (!kind) {
          issue(line_no, "unknown dataset kind '" + std::string(fields[3]) + "'");
        } else if (fields[4] != "0" && fields[4] != "1") {
          issue(line_no, "reserved flag must be 0 or 1");
        } else {
          cat.datasets.push_back({std::string(fields[1]), std::string(fields[2]), *kind, fields[4] == "1"});
          dataset_lines.push_back(line_no);
        }
      }
    } else if (tag == "C") {
      if (fields.size() != 6) {
        issue(line_no, "class record needs 6 fields, got " + std::to_string(fields.size()));
      } else if (check_ids(1)) {
        std::size_t count = 0;
        const auto* b = fields[3].data();
        const auto* e = b + fields[3].size();
        const auto [ptr, ec] = std::from_chars(b, e, count);
        const auto split = parse_split(fields[4]);
        if (ec != std::errc() || ptr != e) {
          issue(line_no, "example_count is not a nonnegative integer: '" + std::string(fields[3]) + "'");
        } else if (count < 2) {
          issue(line_no, "class '" + std::string(fields[2]) + "' has example_count " + std::to_string(count) +
                             " (< 2)");
        } else if (!split) {
          issue(line_no, "unknown split '" + std::string(fields[4]) + "'");
        } else {
          ClassRecord c;
          c.dataset_id = fields[1];
          c.class_id = fields[2];
          c.example_count = count;
          c.split = *split;
          if (fields[5] != "-") c.alphabet_id = std::string(fields[5]);
          cat.classes.push_back(std::move(c));
          class_lines.push_back(line_no);
        }
      }
    } else if (tag == "E") {
      if (fields.size() != 4) {
        issue(line_no, "edge record needs 4 fields, got " + std::to_string(fields.size()));
      } else if (check_ids(1)) {
        if (fields[2] == fields[3]) {
          issue(line_no, "self edge on '" + std::string(fields[2]) + "'");
        } else {
          cat.hierarchy_edges.push_back({std::string(fields[1]), std::string(fields[2]), std::string(fields[3])});
          edge_lines.push_back(line_no);
        }
      }
    } else {
      issue(line_no, "unknown record tag '" + std::string(tag.substr(0, 16)) + "'");
    }
    if (end == text.size()) break;
  }

  // Cross-record checks.
  std::unordered_map<std::string, std::size_t> dataset_index;
  for (std::size_t i = 0; i < cat.datasets.size(); ++i) {
    if (!dataset_index.emplace(cat.datasets[i].dataset_id, i).second)
      issue(dataset_lines[i], "duplicate dataset id '" + cat.datasets[i].dataset_id + "'");
  }
  std::set<std::pair<std::string, std::string>> class_keys;
  for (std::size_t i = 0; i < cat.classes.size(); ++i) {
    const auto& c = cat.classes[i];
    const auto it = dataset_index.find(c.dataset_id);
    if (it == dataset_index.end()) {
      issue(class_lines[i], "class '" + c.class_id + "' references undeclared dataset '" + c.dataset_id + "'");
      continue;
    }
    const auto& d = cat.datasets[it->second];
    if (!class_keys.emplace(c.dataset_id, c.class_id).second)
      issue(class_lines[i], "duplicate class id '" + c.class_id + "' in dataset '" + c.dataset_id + "'");
    const bool omniglot = d.kind == DatasetKind::kOmniglotAlphabets;
    if (omniglot && !c.alphabet_id) issue(class_lines[i], "class '" + c.class_id + "' needs an alphabet id");
    if (!omniglot && c.alphabet_id)
      issue(class_lines[i], "class '" + c.class_id + "' has an alphabet id but dataset is not omniglot_alphabets");
    if (d.reserved_for_eval && (c.split == Split::kTrain || c.split == Split::kValid))
      issue(class_lines[i], "class '" + c.class_id + "' of reserved dataset assigned to " +
                                std::string(to_string(c.split)));
  }

  std::map<std::string, std::unordered_map<std::string, std::vector<std::string>>> children;
  std::map<std::string, std::size_t> first_edge_line;
  std::set<std::tuple<std::string, std::string, std::string>> seen_edges;
  for (std::size_t i = 0; i < cat.hierarchy_edges.size(); ++i) {
    const auto& e = cat.hierarchy_edges[i];
    const auto it = dataset_index.find(e.dataset_id);
    if (it == dataset_index.end()) {
      issue(edge_lines[i], "edge references undeclared dataset '" + e.dataset_id + "'");
      continue;
    }
    if (cat.datasets[it->second].kind != DatasetKind::kImagenetDag) {
      issue(edge_lines[i], "edge on dataset '" + e.dataset_id + "' which is not imagenet_dag");
      continue;
    }
    if (!seen_edges.emplace(e.dataset_id, e.parent, e.child).second) {
      issue(edge_lines[i], "duplicate edge " + e.parent + " -> " + e.child);
      continue;
    }
    children[e.dataset_id][e.parent].push_back(e.child);
    children[e.dataset_id].try_emplace(e.child);
    first_edge_line.try_emplace(e.dataset_id, edge_lines[i]);
  }
  for (const auto& d : cat.datasets) {
    if (d.kind != DatasetKind::kImagenetDag) continue;
    auto& adj = children[d.dataset_id];
    const std::size_t anchor = first_edge_line.count(d.dataset_id) ? first_edge_line[d.dataset_id]
                                                                    : dataset_lines[dataset_index[d.dataset_id]];
    if (detail::has_cycle(adj)) {
      issue(anchor, "hierarchy of '" + d.dataset_id + "' contains a cycle");
      continue;
    }
    std::unordered_set<std::string> class_ids;
    for (std::size_t i = 0; i < cat.classes.size(); ++i) {
      const auto& c = cat.classes[i];
      if (c.dataset_id != d.dataset_id) continue;
      class_ids.insert(c.class_id);
      const auto it = adj.find(c.class_id);
      if (it == adj.end())
        issue(class_lines[i], "class '" + c.class_id + "' is not a node of the hierarchy");
      else if (!it->second.empty())
        issue(class_lines[i], "class '" + c.class_id + "' is not a leaf of the hierarchy");
    }
    for (std::size_t i = 0; i < cat.hierarchy_edges.size(); ++i) {
      const auto& e = cat.hierarchy_edges[i];
      if (e.dataset_id != d.dataset_id) continue;
      const auto it = adj.find(e.child);
      if (it != adj.end() && it->second.empty() && !class_ids.count(e.child))
        issue(edge_lines[i], "dangling edge: leaf '" + e.child + "' is not a declared class");
    }
  }

  if (report.issues.empty()) {
    report.catalog = std::move(cat);
  } else {
    std::stable_sort(report.issues.begin(), report.issues.end(),
                     [](const ParseIssue& a, const ParseIssue& b) { return a.line < b.line; });
  }
  return report;
}

/// Parses a manifest or throws ParseError naming the first offending line.
inline Catalog parse_catalog(std::string_view text) {
  auto report = parse_catalog_report(text);
  if (!report.issues.empty()) throw ParseError(report.issues.front().line, report.issues.front().message);
  return std::move(*report.catalog);
}

inline std::string serialize_catalog(const Catalog& cat) {
  std::string out;
  for (const auto& d : cat.datasets) {
    out += "D\t" + d.dataset_id + "\t" + d.display_name + "\t" + std::string(to_string(d.kind)) + "\t" +
           (d.reserved_for_eval ? "1" : "0") + "\n";
  }
  for (const auto& c : cat.classes) {
    out += "C\t" + c.dataset_id + "\t" + c.class_id + "\t" + std::to_string(c.example_count) + "\t" +
           std::string(to_string(c.split)) + "\t" + (c.alphabet_id ? *c.alphabet_id : std::string("-")) + "\n";
  }
  for (const auto& e : cat.hierarchy_edges) out += "E\t" + e.dataset_id + "\t" + e.parent + "\t" + e.child + "\n";
  return out;
}

struct SplitFractions {
  double train = 0.70;
  double valid = 0.15;
  double test = 0.15;
};

/// Seeded shuffle then contiguous partition: round(train*n) train,
/// round(valid*n) valid, remainder test. Result is aligned with `classes`.
inline std::vector<Split> assign_flat_splits(std::span<const ClassRecord> classes, SplitFractions fractions,
                                             std::uint64_t seed) {
  if (std::abs(fractions.train + fractions.valid + fractions.test - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");
  if (classes.size() < 3) throw ValidationError("flat split needs at least 3 classes");
  for (const auto& c : classes)
    if (c.split != Split::kUnassigned) throw ValidationError("class '" + c.class_id + "' is already assigned");

  const std::size_t n = classes.size();
  auto round_half_up = [](double x) { return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9)); };
  const std::size_t n_train = std::min(n, round_half_up(fractions.train * static_cast<double>(n)));
  const std::size_t n_valid = std::min(n - n_train, round_half_up(fractions.valid * static_cast<double>(n)));

  CounterRng rng(SeedContext{seed, 0}, StreamTag::kSplits);
  const auto order = rng.sample_without_replacement(n, n);
  std::vector<Split> out(n, Split::kTest);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      out[order[i]] = Split::kTrain;
    else if (i < n_train + n_valid)
      out[order[i]] = Split::kValid;
  }
  return out;
}

/// Evaluation alphabets go to test, the five smallest background alphabets
/// (ties by alphabet id) to valid, the rest of background to train.
inline std::vector<Split> assign_omniglot_splits(std::span<const ClassRecord> classes,
                                                 const std::set<std::string>& background,
                                                 const std::set<std::string>& evaluation,
                                                 std::size_t num_valid_alphabets = 5) {
  for (const auto& a : background)
    if (evaluation.count(a)) throw ValidationError("alphabet '" + a + "' is both background and evaluation");
  std::map<std::string, std::size_t> size;
  for (const auto& c : classes) {
    if (!c.alphabet_id) throw ValidationError("class '" + c.class_id + "' has no alphabet id");
    const auto& a = *c.alphabet_id;
    if (!background.count(a) && !evaluation.count(a))
      throw ValidationError("alphabet '" + a + "' is neither background nor evaluation");
    ++size[a];
  }
  std::vector<std::pair<std::size_t, std::string>> bg;
  for (const auto& a : background)
    if (size.count(a)) bg.emplace_back(size[a], a);
  if (bg.size() < num_valid_alphabets + 1)
    throw ValidationError("need at least " + std::to_string(num_valid_alphabets + 1) + " background alphabets, got " +
                          std::to_string(bg.size()));
  std::sort(bg.begin(), bg.end());
  std::set<std::string> valid;
  for (std::size_t i = 0; i < num_valid_alphabets; ++i) valid.insert(bg[i].second);

  std::vector<Split> out;
  out.reserve(classes.size());
  for (const auto& c : classes) {
    const auto& a = *c.alphabet_id;
    out.push_back(evaluation.count(a) ? Split::kTest : valid.count(a) ? Split::kValid : Split::kTrain);
  }
  return out;
}

}  // namespace fewshot
