#pragma once

// Experiment configuration: one `key = value` per line, '#' comments.
//
// The canonical form lists every field with its effective value in a fixed
// order; its FNV-1a hash identifies the configuration in snapshots and
// manifests.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/error.hpp"
#include "fewshot/learners/heads.hpp"
#include "fewshot/learners/optim.hpp"
#include "fewshot/learners/task_family.hpp"

namespace fewshot {

enum class LearnerKind { kKnn, kFinetune, kProtoNet, kMatchingNet, kRelationNet, kFoMaml, kFoProtoMaml };

inline std::string_view to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::kKnn: return "knn";
    case LearnerKind::kFinetune: return "finetune";
    case LearnerKind::kProtoNet: return "protonet";
    case LearnerKind::kMatchingNet: return "matchingnet";
    case LearnerKind::kRelationNet: return "relationnet";
    case LearnerKind::kFoMaml: return "fo_maml";
    case LearnerKind::kFoProtoMaml: return "fo_proto_maml";
  }
  return "?";
}

inline bool is_maml_family(LearnerKind k) { return k == LearnerKind::kFoMaml || k == LearnerKind::kFoProtoMaml; }
inline bool is_baseline(LearnerKind k) { return k == LearnerKind::kKnn || k == LearnerKind::kFinetune; }

struct LearnerConfig {
  LearnerKind kind = LearnerKind::kProtoNet;
  bool inference_only = false;  // `<kind>_inference`: non-episodic embedding, episodic evaluation

  std::vector<std::size_t> hidden{64, 64};
  std::size_t embedding_dim = 16;
  std::size_t relation_hidden = 8;

  std::optional<double> inner_lr;  // default by kind, see effective_inner_lr()
  std::size_t inner_steps = 5;
  std::size_t extra_eval_steps = 0;

  Distance distance = Distance::kEuclidean;
  bool cosine_classifier = false;
  bool weight_norm = false;
  bool finetune_embedding = false;
  OptimizerKind finetune_optimizer = OptimizerKind::kAdam;
  double finetune_lr = 0.01;
  std::size_t finetune_steps = 100;

  double outer_lr = 1e-3;
  std::size_t train_episodes = 2000;
  std::size_t validate_every = 250;
  std::size_t valid_episodes = 100;

  std::size_t pretrain_steps = 1000;
  std::size_t pretrain_batch = 64;
  double pretrain_lr = 1e-3;
  std::optional<std::string> pretrained_init;

  double effective_inner_lr() const {
    if (inner_lr) return *inner_lr;
    return kind == LearnerKind::kFoProtoMaml ? 0.005 : 0.1;
  }

  /// True when the embedding comes from non-episodic training.
  bool trains_nonepisodically() const { return is_baseline(kind) || inference_only; }

  std::string kind_name() const { return std::string(to_string(kind)) + (inference_only ? "_inference" : ""); }

  void validate() const {
    if (embedding_dim == 0) throw ValidationError("embedding_dim must be positive");
    for (auto h : hidden)
      if (h == 0) throw ValidationError("hidden widths must be positive");
    if (inner_lr && !(*inner_lr > 0.0)) throw ValidationError("inner_lr must be positive");
    if (!(outer_lr > 0.0) || !(finetune_lr > 0.0) || !(pretrain_lr > 0.0))
      throw ValidationError("learning rates must be positive");
    if (inference_only && (is_baseline(kind) || kind == LearnerKind::kRelationNet))
      throw ValidationError("no inference-only variant of " + std::string(to_string(kind)));
    if (relation_hidden == 0) throw ValidationError("relation_hidden must be positive");
    if (validate_every == 0 || valid_episodes < 2) throw ValidationError("validation needs validate_every > 0 and >= 2 episodes");
    if (pretrain_batch == 0) throw ValidationError("pretrain_batch must be positive");
  }
};

struct EvalShape {
  std::optional<std::size_t> ways, shots, query;
};

struct ExperimentConfig {
  LearnerConfig learner;

  // Data: either a synthetic family over `datasets`, or a catalog plus a feature table.
  SyntheticOptions features{};
  std::vector<SyntheticDataset> datasets{{"synthetic", 200, 40, false, 6, false}};
  std::optional<std::string> catalog_path;
  std::optional<std::string> feature_table;
  std::optional<std::string> proxy_dataset;  // validation source; unset: first non-reserved dataset

  EvalShape train_shape;  // unset fields mean variable-shape episodes
  EvalShape eval_shape;
  std::size_t test_episodes = 600;
  std::size_t finegrain_episodes = 0;  // binary episodes per hierarchy test source
  std::size_t threads = 1;

  void validate() const {
    learner.validate();
    if (catalog_path.has_value() != feature_table.has_value())
      throw ValidationError("catalog and features must be given together");
    if (!catalog_path && datasets.empty()) throw ValidationError("no datasets configured");
    if (test_episodes < 2) throw ValidationError("test_episodes must be >= 2");
    if (threads == 0) throw ValidationError("threads must be >= 1");
    for (const auto* s : {&train_shape, &eval_shape})
      if (s->shots.has_value() != s->query.has_value())
        throw ValidationError("episode shots and query must be given together");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::size_t parse_count(const std::string& v, std::size_t line) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ParseError(line, "expected a nonnegative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& v, std::size_t line) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ParseError(line, "expected a real number, got '" + v + "'");
}

inline bool parse_bool(const std::string& v, std::size_t line) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ParseError(line, "expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_counts(const std::string& v, std::size_t line) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "-") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_count(trim(item), line));
  return out;
}

inline std::string join_counts(const std::vector<std::size_t>& v) {
  if (v.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string opt_count(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : "-"; }

inline std::optional<std::size_t> parse_opt_count(const std::string& v, std::size_t line) {
  if (v == "-") return std::nullopt;
  return parse_count(v, line);
}

}  // namespace detail

inline LearnerKind parse_learner_kind(std::string_view s, bool& inference) {
  inference = false;
  std::string base(s);
  constexpr std::string_view suffix = "_inference";
  if (base.size() > suffix.size() && base.ends_with(suffix)) {
    inference = true;
    base.resize(base.size() - suffix.size());
  }
  for (auto k : {LearnerKind::kKnn, LearnerKind::kFinetune, LearnerKind::kProtoNet, LearnerKind::kMatchingNet,
                 LearnerKind::kRelationNet, LearnerKind::kFoMaml, LearnerKind::kFoProtoMaml})
    if (to_string(k) == base) return k;
  throw ValidationError("unknown learner kind '" + std::string(s) + "'");
}

/// Parses `key = value` lines. A `dataset` line replaces the default dataset
/// list on first use; later ones append:
///   dataset = <id> <classes> <examples_per_class> [flat|hierarchy|reserved] [groups]
inline ExperimentConfig parse_config(std::string_view text) {
  using namespace detail;
  ExperimentConfig cfg;
  auto& L = cfg.learner;
  bool datasets_given = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto v = trim(line.substr(eq + 1));
    const auto n = line_no;
    try {
      if (key == "kind") L.kind = parse_learner_kind(v, L.inference_only);
      else if (key == "hidden") L.hidden = parse_counts(v, n);
      else if (key == "embedding_dim") L.embedding_dim = parse_count(v, n);
      else if (key == "relation_hidden") L.relation_hidden = parse_count(v, n);
      else if (key == "inner_lr") L.inner_lr = parse_real(v, n);
      else if (key == "inner_steps") L.inner_steps = parse_count(v, n);
      else if (key == "extra_eval_steps") L.extra_eval_steps = parse_count(v, n);
      else if (key == "distance") {
        if (v == "euclidean") L.distance = Distance::kEuclidean;
        else if (v == "cosine") L.distance = Distance::kCosine;
        else throw ParseError(n, "distance must be euclidean or cosine");
      } else if (key == "cosine_classifier") L.cosine_classifier = parse_bool(v, n);
      else if (key == "weight_norm") L.weight_norm = parse_bool(v, n);
      else if (key == "finetune_embedding") L.finetune_embedding = parse_bool(v, n);
      else if (key == "finetune_optimizer") {
        if (v == "sgd") L.finetune_optimizer = OptimizerKind::kSgd;
        else if (v == "adam") L.finetune_optimizer = OptimizerKind::kAdam;
        else throw ParseError(n, "finetune_optimizer must be sgd or adam");
      } else if (key == "finetune_lr") L.finetune_lr = parse_real(v, n);
      else if (key == "finetune_steps") L.finetune_steps = parse_count(v, n);
      else if (key == "outer_lr") L.outer_lr = parse_real(v, n);
      else if (key == "train_episodes") L.train_episodes = parse_count(v, n);
      else if (key == "validate_every") L.validate_every = parse_count(v, n);
      else if (key == "valid_episodes") L.valid_episodes = parse_count(v, n);
      else if (key == "pretrain_steps") L.pretrain_steps = parse_count(v, n);
      else if (key == "pretrain_batch") L.pretrain_batch = parse_count(v, n);
      else if (key == "pretrain_lr") L.pretrain_lr = parse_real(v, n);
      else if (key == "pretrained_init") L.pretrained_init = v == "-" ? std::nullopt : std::optional<std::string>(v);
      else if (key == "feature_dim") cfg.features.dim = parse_count(v, n);
      else if (key == "feature_sigma") cfg.features.sigma = parse_real(v, n);
      else if (key == "nuisance_dims") cfg.features.nuisance_dims = parse_count(v, n);
      else if (key == "nuisance_sigma") cfg.features.nuisance_sigma = parse_real(v, n);
      else if (key == "hierarchy_coarse") cfg.features.coarse = parse_real(v, n);
      else if (key == "hierarchy_fine") cfg.features.fine = parse_real(v, n);
      else if (key == "dataset") {
        if (!datasets_given) cfg.datasets.clear();
        datasets_given = true;
        std::istringstream ds(v);
        SyntheticDataset d;
        std::string classes, examples, kind = "flat", groups;
        if (!(ds >> d.id >> classes >> examples)) throw ParseError(n, "dataset needs <id> <classes> <examples>");
        ds >> kind >> groups;
        d.classes = parse_count(classes, n);
        d.examples_per_class = parse_count(examples, n);
        if (kind == "hierarchy") d.hierarchy = true;
        else if (kind == "reserved") d.reserved = true;
        else if (kind != "flat") throw ParseError(n, "dataset kind must be flat, hierarchy or reserved");
        if (!groups.empty()) d.groups = parse_count(groups, n);
        cfg.datasets.push_back(d);
      } else if (key == "catalog") cfg.catalog_path = v == "-" ? std::nullopt : std::optional<std::string>(v);
      else if (key == "features") cfg.feature_table = v == "-" ? std::nullopt : std::optional<std::string>(v);
      else if (key == "proxy_dataset") cfg.proxy_dataset = v == "-" ? std::nullopt : std::optional<std::string>(v);
      else if (key == "train_ways") cfg.train_shape.ways = parse_opt_count(v, n);
      else if (key == "train_shots") cfg.train_shape.shots = parse_opt_count(v, n);
      else if (key == "train_query") cfg.train_shape.query = parse_opt_count(v, n);
      else if (key == "eval_ways") cfg.eval_shape.ways = parse_opt_count(v, n);
      else if (key == "eval_shots") cfg.eval_shape.shots = parse_opt_count(v, n);
      else if (key == "eval_query") cfg.eval_shape.query = parse_opt_count(v, n);
      else if (key == "test_episodes") cfg.test_episodes = parse_count(v, n);
      else if (key == "finegrain_episodes") cfg.finegrain_episodes = parse_count(v, n);
      else if (key == "threads") cfg.threads = parse_count(v, n);
      else throw ParseError(n, "unknown key '" + key + "'");
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(n, e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Every field with its effective value. `threads` is excluded: it never
/// changes results.
inline std::string canonical_config(const ExperimentConfig& cfg) {
  using namespace detail;
  const auto& L = cfg.learner;
  std::string out;
  auto put = [&](std::string_view k, const std::string& v) { out += std::string(k) + " = " + v + "\n"; };
  put("kind", L.kind_name());
  put("hidden", join_counts(L.hidden));
  put("embedding_dim", std::to_string(L.embedding_dim));
  put("relation_hidden", std::to_string(L.relation_hidden));
  put("inner_lr", real(L.effective_inner_lr()));
  put("inner_steps", std::to_string(L.inner_steps));
  put("extra_eval_steps", std::to_string(L.extra_eval_steps));
  put("distance", L.distance == Distance::kEuclidean ? "euclidean" : "cosine");
  put("cosine_classifier", L.cosine_classifier ? "true" : "false");
  put("weight_norm", L.weight_norm ? "true" : "false");
  put("finetune_embedding", L.finetune_embedding ? "true" : "false");
  put("finetune_optimizer", std::string(to_string(L.finetune_optimizer)));
  put("finetune_lr", real(L.finetune_lr));
  put("finetune_steps", std::to_string(L.finetune_steps));
  put("outer_lr", real(L.outer_lr));
  put("train_episodes", std::to_string(L.train_episodes));
  put("validate_every", std::to_string(L.validate_every));
  put("valid_episodes", std::to_string(L.valid_episodes));
  put("pretrain_steps", std::to_string(L.pretrain_steps));
  put("pretrain_batch", std::to_string(L.pretrain_batch));
  put("pretrain_lr", real(L.pretrain_lr));
  put("pretrained_init", L.pretrained_init.value_or("-"));
  put("feature_dim", std::to_string(cfg.features.dim));
  put("feature_sigma", real(cfg.features.sigma));
  put("nuisance_dims", std::to_string(cfg.features.nuisance_dims));
  put("nuisance_sigma", real(cfg.features.nuisance_sigma));
  put("hierarchy_coarse", real(cfg.features.coarse));
  put("hierarchy_fine", real(cfg.features.fine));
  for (const auto& d : cfg.datasets)
    put("dataset", d.id + " " + std::to_string(d.classes) + " " + std::to_string(d.examples_per_class) + " " +
                       (d.hierarchy ? "hierarchy" : d.reserved ? "reserved" : "flat") + " " + std::to_string(d.groups));
  put("catalog", cfg.catalog_path.value_or("-"));
  put("features", cfg.feature_table.value_or("-"));
  put("proxy_dataset", cfg.proxy_dataset.value_or("-"));
  put("train_ways", opt_count(cfg.train_shape.ways));
  put("train_shots", opt_count(cfg.train_shape.shots));
  put("train_query", opt_count(cfg.train_shape.query));
  put("eval_ways", opt_count(cfg.eval_shape.ways));
  put("eval_shots", opt_count(cfg.eval_shape.shots));
  put("eval_query", opt_count(cfg.eval_shape.query));
  put("test_episodes", std::to_string(cfg.test_episodes));
  put("finegrain_episodes", std::to_string(cfg.finegrain_episodes));
  return out;
}

inline std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(canonical_config(cfg)); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace fewshot
