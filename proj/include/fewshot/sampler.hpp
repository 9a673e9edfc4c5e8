#pragma once

// Episode generation.
//
// Step 0 picks a dataset uniformly among those able to form an episode in the
// requested split. Step 1 picks the class set (flat, hierarchy-aware or
// alphabet-aware depending on the dataset kind). Step 2 sizes the query set,
// the total support set and the per-class shots, then draws example ids.
//
// Random draws come from independent counter streams, one per step, in the
// fixed order dataset -> classes -> beta -> alphas -> query ids -> support ids.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fewshot/catalog.hpp"
#include "fewshot/error.hpp"
#include "fewshot/hierarchy.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

struct SamplerConfig {
  std::size_t min_ways = 5;
  std::size_t max_ways = 50;
  std::size_t max_support_total = 500;
  std::size_t max_support_per_class = 100;
  std::size_t max_query_per_class = 10;
  /// beta is drawn from (beta_low, beta_high].
  double beta_low = 0.0;
  double beta_high = 1.0;
  /// alpha is drawn from [alpha_low, alpha_high).
  double alpha_low = std::log(0.5);
  double alpha_high = std::log(2.0);
  EligibilityBounds bounds{};

  /// Fixed-shape episodes (standard N-way K-shot evaluation). When set, the
  /// way is fixed and classes are drawn flat from the split regardless of the
  /// dataset kind; shots and query size are fixed for every class.
  std::optional<std::size_t> fixed_ways;
  std::optional<std::size_t> fixed_shots;
  std::optional<std::size_t> fixed_query;

  void validate() const {
    if (min_ways < 2) throw ValidationError("min_ways must be >= 2");
    if (max_ways < min_ways) throw ValidationError("max_ways must be >= min_ways");
    if (max_support_total == 0 || max_support_per_class == 0 || max_query_per_class == 0)
      throw ValidationError("sampler caps must be positive");
    if (!(beta_low >= 0.0) || !(beta_high > beta_low) || !(beta_high <= 1.0))
      throw ValidationError("beta interval must satisfy 0 <= low < high <= 1");
    if (!(alpha_high > alpha_low)) throw ValidationError("alpha interval is empty");
    if (bounds.min_span < 1 || bounds.max_span < bounds.min_span)
      throw ValidationError("eligibility bounds must satisfy 1 <= min_span <= max_span");
    if (fixed_shots.has_value() != fixed_query.has_value())
      throw ValidationError("fixed_shots and fixed_query must be given together");
    if (fixed_ways && *fixed_ways < 2) throw ValidationError("fixed_ways must be >= 2");
    if (fixed_shots && (*fixed_shots == 0 || *fixed_query == 0))
      throw ValidationError("fixed shots and query must be positive");
  }

  std::size_t episode_min_ways() const { return fixed_ways ? *fixed_ways : min_ways; }
};

struct ExampleRef {
  std::size_t class_index = 0;    // position in EpisodeSpec::class_ids
  std::size_t example_index = 0;  // position within the class's examples

  bool operator==(const ExampleRef&) const = default;
};

struct EpisodeSpec {
  std::string dataset_id;
  std::vector<std::string> class_ids;
  std::vector<std::size_t> catalog_classes;  // indices into Catalog::classes
  std::vector<std::size_t> shots;
  std::size_t query_per_class = 0;
  std::vector<ExampleRef> support;
  std::vector<ExampleRef> query;

  std::size_t ways() const { return class_ids.size(); }
  std::size_t support_size() const { return std::accumulate(shots.begin(), shots.end(), std::size_t{0}); }

  bool operator==(const EpisodeSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Step 2 formulas.

/// q = min(max_query, min_c floor(|Im(c)| / 2)).
inline std::size_t compute_query_size(std::span<const std::size_t> class_sizes, std::size_t max_query = 10) {
  std::size_t q = max_query;
  for (auto s : class_sizes) q = std::min(q, s / 2);
  return q;
}

/// |S| = min(max_total, sum_c ceil(beta * min(max_per_class, |Im(c)| - q))).
inline std::size_t compute_support_size(double beta, std::span<const std::size_t> class_sizes, std::size_t q,
                                        std::size_t max_total = 500, std::size_t max_per_class = 100) {
  std::size_t total = 0;
  for (auto s : class_sizes) {
    const auto available = static_cast<double>(std::min(max_per_class, s - q));
    total += static_cast<std::size_t>(std::ceil(beta * available));
  }
  return std::min(max_total, total);
}

/// R_c = exp(alpha_c)|Im(c)| / sum_c' exp(alpha_c')|Im(c')|.
inline std::vector<double> compute_shot_proportions(std::span<const double> alphas,
                                                    std::span<const std::size_t> class_sizes) {
  if (alphas.size() != class_sizes.size()) throw ValidationError("need one alpha per class");
  std::vector<double> weight(alphas.size());
  double total = 0.0;
  for (std::size_t c = 0; c < alphas.size(); ++c) {
    weight[c] = std::exp(alphas[c]) * static_cast<double>(class_sizes[c]);
    total += weight[c];
  }
  for (auto& w : weight) w /= total;
  return weight;
}

/// k_c = min(floor(R_c (|S| - |C|)) + 1, |Im(c)| - q).
inline std::vector<std::size_t> compute_shots(std::span<const double> alphas, std::span<const std::size_t> class_sizes,
                                              std::size_t support_size, std::size_t q) {
  const auto ratio = compute_shot_proportions(alphas, class_sizes);
  const auto n = class_sizes.size();
  if (support_size < n) throw ValidationError("support size smaller than the number of classes");
  const auto spare = static_cast<double>(support_size - n);
  std::vector<std::size_t> shots(n);
  for (std::size_t c = 0; c < n; ++c) {
    const auto share = static_cast<std::size_t>(std::floor(ratio[c] * spare)) + 1;
    shots[c] = std::min(share, class_sizes[c] - q);
  }
  return shots;
}

// ---------------------------------------------------------------------------

/// Precomputed per-split sampling plan for a catalog. Immutable once built;
/// sample_* members are const and safe to call concurrently.
class EpisodeSampler {
 public:
  struct DatasetPlan {
    std::size_t dataset_index = 0;
    DatasetKind kind = DatasetKind::kFlat;
    std::vector<std::size_t> classes;  // catalog indices in split
    // imagenet_dag
    ClassDag dag;
    std::vector<ClassDag::NodeIndex> eligible_nodes;
    std::vector<std::size_t> leaf_to_class;  // dag node -> catalog index
    // omniglot_alphabets, alphabets ordered by id; only those with >= min_ways
    std::vector<std::vector<std::size_t>> alphabets;
  };

  EpisodeSampler(const Catalog& catalog, SamplerConfig config, Split split)
      : catalog_(&catalog), config_(std::move(config)), split_(split) {
    config_.validate();
    if (split == Split::kUnassigned) throw ValidationError("cannot sample from the unassigned split");
    for (std::size_t d = 0; d < catalog.datasets.size(); ++d) {
      const auto& ds = catalog.datasets[d];
      if (ds.reserved_for_eval && split != Split::kTest) continue;
      if (auto plan = make_plan(d)) plans_.push_back(std::move(*plan));
    }
  }

  const Catalog& catalog() const { return *catalog_; }
  const SamplerConfig& config() const { return config_; }
  Split split() const { return split_; }
  const std::vector<DatasetPlan>& plans() const { return plans_; }

  /// Step 0: uniform over eligible datasets. Returns an index into plans().
  std::size_t sample_dataset(const SeedContext& ctx) const {
    if (plans_.empty())
      throw ValidationError("no dataset can form an episode in split '" + std::string(to_string(split_)) + "'");
    CounterRng rng(ctx, StreamTag::kDataset);
    return static_cast<std::size_t>(rng.uniform_index(plans_.size()));
  }

  /// Step 1: ordered catalog class indices.
  std::vector<std::size_t> sample_class_set(std::size_t plan_index, const SeedContext& ctx) const {
    const auto& plan = plans_.at(plan_index);
    CounterRng rng(ctx, StreamTag::kClasses);
    if (config_.fixed_ways || plan.kind == DatasetKind::kFlat) return sample_flat(plan.classes, rng);
    if (plan.kind == DatasetKind::kImagenetDag) {
      const auto node = plan.eligible_nodes[rng.uniform_index(plan.eligible_nodes.size())];
      const auto leaves = plan.dag.leaves_spanned_indices(node);
      std::vector<std::size_t> out;
      if (leaves.size() <= config_.max_ways) {
        for (auto l : leaves) out.push_back(plan.leaf_to_class[l]);
      } else {
        for (auto i : rng.sample_without_replacement(leaves.size(), config_.max_ways))
          out.push_back(plan.leaf_to_class[leaves[i]]);
      }
      return out;
    }
    const auto& alphabet = plan.alphabets[rng.uniform_index(plan.alphabets.size())];
    return sample_flat(alphabet, rng);
  }

  EpisodeSpec sample_episode(const SeedContext& ctx) const {
    const auto plan_index = sample_dataset(ctx);
    const auto& plan = plans_[plan_index];
    EpisodeSpec ep;
    ep.dataset_id = catalog_->datasets[plan.dataset_index].dataset_id;
    ep.catalog_classes = sample_class_set(plan_index, ctx);
    std::vector<std::size_t> sizes;
    for (auto ci : ep.catalog_classes) {
      ep.class_ids.push_back(catalog_->classes[ci].class_id);
      sizes.push_back(catalog_->classes[ci].example_count);
    }
    const auto n = sizes.size();

    if (config_.fixed_shots) {
      ep.query_per_class = *config_.fixed_query;
      ep.shots.assign(n, *config_.fixed_shots);
      for (std::size_t c = 0; c < n; ++c)
        if (sizes[c] < ep.shots[c] + ep.query_per_class)
          throw ValidationError("class '" + ep.class_ids[c] + "' has too few examples for a fixed-shape episode");
    } else {
      ep.query_per_class = compute_query_size(sizes, config_.max_query_per_class);
      CounterRng beta_rng(ctx, StreamTag::kBeta);
      double beta;
      do {
        beta = config_.beta_high - beta_rng.uniform_unit() * (config_.beta_high - config_.beta_low);
      } while (!(beta > config_.beta_low && beta <= config_.beta_high));
      const auto support_size = compute_support_size(beta, sizes, ep.query_per_class, config_.max_support_total,
                                                     config_.max_support_per_class);
      CounterRng alpha_rng(ctx, StreamTag::kAlphas);
      std::vector<double> alphas(n);
      for (auto& a : alphas) {
        do {
          a = config_.alpha_low + alpha_rng.uniform_unit() * (config_.alpha_high - config_.alpha_low);
        } while (!(a >= config_.alpha_low && a < config_.alpha_high));
      }
      ep.shots = compute_shots(alphas, sizes, support_size, ep.query_per_class);
    }

    CounterRng query_rng(ctx, StreamTag::kQuery);
    CounterRng support_rng(ctx, StreamTag::kSupport);
    std::vector<PartialShuffle> shuffles;
    shuffles.reserve(n);
    for (std::size_t c = 0; c < n; ++c) {
      shuffles.emplace_back(sizes[c]);
      for (std::size_t i = 0; i < ep.query_per_class; ++i) ep.query.push_back({c, shuffles[c].draw(query_rng)});
    }
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t i = 0; i < ep.shots[c]; ++i) ep.support.push_back({c, shuffles[c].draw(support_rng)});
    return ep;
  }

 private:
  std::vector<std::size_t> sample_flat(const std::vector<std::size_t>& pool, CounterRng& rng) const {
    std::size_t way;
    if (config_.fixed_ways) {
      way = *config_.fixed_ways;
    } else {
      const auto hi = std::min(config_.max_ways, pool.size());
      way = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(config_.min_ways),
                                                     static_cast<std::int64_t>(hi)));
    }
    std::vector<std::size_t> out;
    out.reserve(way);
    for (auto i : rng.sample_without_replacement(pool.size(), way)) out.push_back(pool[i]);
    return out;
  }

  std::optional<DatasetPlan> make_plan(std::size_t d) const {
    const auto& ds = catalog_->datasets[d];
    DatasetPlan plan;
    plan.dataset_index = d;
    plan.kind = ds.kind;
    plan.classes = catalog_->class_indices(ds.dataset_id, split_);
    const auto need = config_.episode_min_ways();
    if (plan.classes.size() < need) return std::nullopt;
    if (config_.fixed_ways) return plan;

    if (ds.kind == DatasetKind::kImagenetDag) {
      const auto full = ClassDag::from_catalog(*catalog_, ds.dataset_id);
      std::vector<std::string> leaves;
      for (auto ci : plan.classes) leaves.push_back(catalog_->classes[ci].class_id);
      plan.dag = full.induce(leaves);
      plan.leaf_to_class.assign(plan.dag.size(), 0);
      for (auto ci : plan.classes) plan.leaf_to_class[plan.dag.index(catalog_->classes[ci].class_id)] = ci;
      EligibilityBounds bounds = config_.bounds;
      bounds.min_span = std::max(bounds.min_span, config_.min_ways);
      plan.eligible_nodes = eligible_internal_nodes(plan.dag, bounds);
      if (plan.eligible_nodes.empty()) return std::nullopt;
    } else if (ds.kind == DatasetKind::kOmniglotAlphabets) {
      std::map<std::string, std::vector<std::size_t>> by_alphabet;
      for (auto ci : plan.classes) by_alphabet[*catalog_->classes[ci].alphabet_id].push_back(ci);
      for (auto& [_, members] : by_alphabet)
        if (members.size() >= config_.min_ways) plan.alphabets.push_back(std::move(members));
      if (plan.alphabets.empty()) return std::nullopt;
    }
    return plan;
  }

  const Catalog* catalog_;
  SamplerConfig config_;
  Split split_;
  std::vector<DatasetPlan> plans_;
};

/// One-shot convenience; builds the sampling plan on every call.
inline EpisodeSpec sample_episode(const Catalog& catalog, const SamplerConfig& config, Split split,
                                  const SeedContext& ctx) {
  return EpisodeSampler(catalog, config, split).sample_episode(ctx);
}

/// Every violated episode invariant, as human-readable strings.
inline std::vector<std::string> check_episode(const EpisodeSpec& ep, const Catalog& catalog,
                                              const SamplerConfig& config) {
  std::vector<std::string> bad;
  const auto n = ep.ways();
  const auto lo = config.fixed_ways ? *config.fixed_ways : config.min_ways;
  const auto hi = config.fixed_ways ? *config.fixed_ways : config.max_ways;
  if (n < lo || n > hi) bad.push_back("way " + std::to_string(n) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  if (ep.shots.size() != n || ep.catalog_classes.size() != n) {
    bad.push_back("shots/classes length mismatch");
    return bad;
  }
  if (!config.fixed_shots && ep.support_size() > config.max_support_total)
    bad.push_back("support size " + std::to_string(ep.support_size()) + " exceeds cap");
  if (!config.fixed_shots && ep.query_per_class > config.max_query_per_class) bad.push_back("query size exceeds cap");
  if (ep.query_per_class < 1) bad.push_back("empty query set");
  std::vector<std::size_t> seen_support(n, 0), seen_query(n, 0);
  std::vector<std::vector<char>> used(n);
  for (std::size_t c = 0; c < n; ++c) {
    const auto& rec = catalog.classes.at(ep.catalog_classes[c]);
    if (rec.class_id != ep.class_ids[c] || rec.dataset_id != ep.dataset_id) bad.push_back("class id mismatch");
    if (ep.shots[c] < 1) bad.push_back("class " + ep.class_ids[c] + " has zero shots");
    if (ep.shots[c] + ep.query_per_class > rec.example_count)
      bad.push_back("class " + ep.class_ids[c] + " over-subscribed");
    used[c].assign(rec.example_count, 0);
  }
  std::vector<std::size_t> sorted = ep.catalog_classes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) bad.push_back("duplicate class");
  auto visit = [&](const ExampleRef& r, std::vector<std::size_t>& count, const char* what) {
    if (r.class_index >= n || r.example_index >= used[r.class_index].size()) {
      bad.push_back(std::string(what) + " reference out of range");
      return;
    }
    if (used[r.class_index][r.example_index]++) bad.push_back(std::string(what) + " example reused");
    ++count[r.class_index];
  };
  for (const auto& r : ep.query) visit(r, seen_query, "query");
  for (const auto& r : ep.support) visit(r, seen_support, "support");
  for (std::size_t c = 0; c < n; ++c) {
    if (seen_query[c] != ep.query_per_class) bad.push_back("query not class-balanced");
    if (seen_support[c] != ep.shots[c]) bad.push_back("support count differs from shots");
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Episode stream encoding: one JSON object per line.

inline nlohmann::ordered_json episode_to_json(const EpisodeSpec& ep, const Catalog& catalog) {
  nlohmann::ordered_json j;
  j["dataset"] = ep.dataset_id;
  j["classes"] = ep.class_ids;
  j["shots"] = ep.shots;
  j["q"] = ep.query_per_class;
  auto refs = [&](const std::vector<ExampleRef>& list) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : list)
      arr.push_back({r.class_index, catalog.classes[ep.catalog_classes[r.class_index]].example_id(r.example_index)});
    return arr;
  };
  j["support"] = refs(ep.support);
  j["query"] = refs(ep.query);
  return j;
}

inline EpisodeSpec episode_from_json(const nlohmann::json& j, const Catalog& catalog) {
  EpisodeSpec ep;
  try {
    ep.dataset_id = j.at("dataset").get<std::string>();
    ep.class_ids = j.at("classes").get<std::vector<std::string>>();
    ep.shots = j.at("shots").get<std::vector<std::size_t>>();
    ep.query_per_class = j.at("q").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed episode: ") + e.what());
  }
  std::map<std::string, std::size_t> lookup;
  for (auto ci : catalog.class_indices(ep.dataset_id)) lookup[catalog.classes[ci].class_id] = ci;
  for (const auto& id : ep.class_ids) {
    const auto it = lookup.find(id);
    if (it == lookup.end()) throw ValidationError("episode references unknown class '" + id + "'");
    ep.catalog_classes.push_back(it->second);
  }
  auto refs = [&](const nlohmann::json& arr) {
    std::vector<ExampleRef> out;
    for (const auto& item : arr) {
      const auto c = item.at(0).get<std::size_t>();
      const auto id = item.at(1).get<std::string>();
      if (c >= ep.catalog_classes.size()) throw ValidationError("class index out of range");
      const auto& rec = catalog.classes[ep.catalog_classes[c]];
      const auto slash = id.rfind('/');
      std::size_t idx = 0;
      const auto* b = id.data() + (slash == std::string::npos ? 0 : slash + 1);
      const auto [ptr, ec] = std::from_chars(b, id.data() + id.size(), idx);
      if (ec != std::errc() || idx >= rec.example_count || rec.example_id(idx) != id)
        throw ValidationError("unknown example id '" + id + "'");
      out.push_back({c, idx});
    }
    return out;
  };
  ep.support = refs(j.at("support"));
  ep.query = refs(j.at("query"));
  return ep;
}

}  // namespace fewshot
