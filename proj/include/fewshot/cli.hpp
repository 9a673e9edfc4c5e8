#pragma once

// Commands behind the `fewshot` tool. Every command is a pure function of its
// inputs and seed; thread counts change wall time only.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fewshot/catalog.hpp"
#include "fewshot/error.hpp"
#include "fewshot/eval.hpp"
#include "fewshot/hierarchy.hpp"
#include "fewshot/learners/config.hpp"
#include "fewshot/learners/snapshot.hpp"
#include "fewshot/learners/task_family.hpp"
#include "fewshot/learners/training.hpp"
#include "fewshot/parallel.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/sampler.hpp"

namespace fewshot::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Run manifest

/// Identity of a command invocation. hash() covers what determines the primary
/// outputs (command, content hashes, seed, parameters) and nothing else, so
/// output paths, thread counts and the timestamp do not perturb output bytes.
struct RunManifest {
  std::string command;
  std::uint64_t config_hash = 0;
  std::uint64_t catalog_hash = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> parameters;
  std::vector<std::pair<std::string, std::string>> artifacts;  // role, path
  std::optional<std::string> timestamp;

  std::uint64_t hash() const {
    std::string key = "fewshot " + std::string(kToolVersion) + "\n" + command + "\n" + hex64(config_hash) + "\n" +
                      hex64(catalog_hash) + "\n" + std::to_string(seed) + "\n";
    for (const auto& [k, v] : parameters) key += k + "=" + v + "\n";
    return fnv1a64(key);
  }

  std::string producer() const { return "fewshot " + std::string(kToolVersion) + " manifest=" + hex64(hash()); }
  std::string header_line() const { return "# " + producer() + "\n"; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tool"] = "fewshot " + std::string(kToolVersion);
    j["command"] = command;
    j["manifest_hash"] = hex64(hash());
    j["config_hash"] = hex64(config_hash);
    j["catalog_hash"] = hex64(catalog_hash);
    j["seed"] = seed;
    auto params = nlohmann::ordered_json::object();
    for (const auto& [k, v] : parameters) params[k] = v;
    j["parameters"] = params;
    auto arts = nlohmann::ordered_json::object();
    for (const auto& [k, v] : artifacts) arts[k] = v;
    j["artifacts"] = arts;
    j["timestamp"] = timestamp ? nlohmann::ordered_json(*timestamp) : nlohmann::ordered_json(nullptr);
    return j;
  }
};

/// SOURCE_DATE_EPOCH when set; otherwise no timestamp. The wall clock is never read.
inline std::optional<std::string> reproducible_timestamp() {
  const char* v = std::getenv("SOURCE_DATE_EPOCH");
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

inline void write_manifest(RunManifest m, const std::string& path) {
  m.timestamp = reproducible_timestamp();
  write_file(path, m.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// validate

struct ValidateOptions {
  std::string catalog;
  std::optional<std::string> out;
};

/// Report text for a manifest; clean iff the catalog has no issues.
struct ValidateOutcome {
  bool clean = false;
  std::string report;
  RunManifest manifest;
};

inline ValidateOutcome validate_catalog(const ValidateOptions& opt) {
  const auto text = read_file(opt.catalog);
  ValidateOutcome o;
  o.manifest.command = "validate";
  o.manifest.catalog_hash = fnv1a64(text);
  const auto rep = parse_catalog_report(text);
  o.report = o.manifest.header_line();
  o.clean = rep.issues.empty();
  if (!o.clean) {
    for (const auto& i : rep.issues) o.report += opt.catalog + ":" + std::to_string(i.line) + ": " + i.message + "\n";
    o.report += std::to_string(rep.issues.size()) + " issue(s)\n";
    return o;
  }
  const auto& cat = *rep.catalog;
  for (const auto& d : cat.datasets) {
    o.report += "dataset " + d.dataset_id + " " + std::string(to_string(d.kind));
    for (auto s : {Split::kTrain, Split::kValid, Split::kTest, Split::kUnassigned})
      o.report += " " + std::string(to_string(s)) + "=" + std::to_string(cat.class_indices(d.dataset_id, s).size());
    o.report += "\n";
  }
  o.report += "ok: " + std::to_string(cat.datasets.size()) + " datasets, " + std::to_string(cat.classes.size()) +
              " classes, " + std::to_string(cat.hierarchy_edges.size()) + " edges\n";
  return o;
}

// ---------------------------------------------------------------------------
// sample

struct SampleOptions {
  std::string catalog;
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  std::string out;
  std::size_t threads = 1;
  EvalShape shape;  // unset fields sample variable-shape episodes
};

inline RunManifest cmd_sample(const SampleOptions& opt) {
  const auto text = read_file(opt.catalog);
  const auto catalog = parse_catalog(text);
  RunManifest m;
  m.command = "sample";
  m.catalog_hash = fnv1a64(text);
  m.seed = opt.seed;
  m.parameters = {{"split", std::string(to_string(opt.split))},
                  {"episodes", std::to_string(opt.episodes)},
                  {"ways", fewshot::detail::opt_count(opt.shape.ways)},
                  {"shots", fewshot::detail::opt_count(opt.shape.shots)},
                  {"query", fewshot::detail::opt_count(opt.shape.query)}};
  m.artifacts = {{"episodes", opt.out}};

  std::vector<std::string> lines(opt.episodes);
  if (opt.episodes > 0) {
    const EpisodeSampler sampler(catalog, sampler_config(opt.shape), opt.split);
    parallel_for(opt.episodes, opt.threads, [&](std::size_t i) {
      lines[i] = episode_to_json(sampler.sample_episode(SeedContext{opt.seed, i}), catalog).dump();
    });
  }
  std::string body = m.header_line();
  for (const auto& l : lines) body += l + "\n";
  write_file(opt.out, body);
  write_manifest(m, opt.out + ".manifest.json");
  return m;
}

/// Episode stream reader; '#' lines are headers.
inline std::vector<EpisodeSpec> read_episode_stream(std::string_view text, const Catalog& catalog) {
  std::vector<EpisodeSpec> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty() || line[0] == '#') continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line), catalog));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(no, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(no, e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::optional<std::size_t> episodes;  // overrides test_episodes
  std::optional<std::size_t> threads;   // overrides the config's threads
};

struct RunSummary {
  RunManifest manifest;
  std::vector<EpisodeResult> results;
  std::vector<NamedCell> cells;
};

inline std::string results_path(const std::string& dir) { return (std::filesystem::path(dir) / "results.jsonl").string(); }
inline std::string snapshot_path(const std::string& dir) { return (std::filesystem::path(dir) / "snapshot.bin").string(); }
inline std::string train_log_path(const std::string& dir) { return (std::filesystem::path(dir) / "train_log.csv").string(); }
inline std::string manifest_path(const std::string& dir) { return (std::filesystem::path(dir) / "manifest.json").string(); }

namespace detail {

inline std::string resolve(const std::string& base_file, const std::string& path) {
  const std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base_file).parent_path() / p).string();
}

inline std::uint64_t source_seed(std::uint64_t seed, std::string_view purpose, std::string_view dataset) {
  return splitmix64_mix(seed ^ fnv1a64(std::string(purpose) + "/" + std::string(dataset)));
}

}  // namespace detail

/// Evaluation over every test source: `episodes` episodes per dataset that can
/// form one, then binary fine-grainedness episodes on hierarchy datasets.
inline std::vector<EpisodeResult> evaluate_sources(const Learner& l, const Catalog& catalog,
                                                   const FeatureProvider& features, const ExperimentConfig& cfg,
                                                   std::uint64_t seed, std::size_t episodes, std::size_t threads) {
  std::vector<EpisodeResult> all;
  for (const auto& ds : catalog.datasets) {
    const auto sub = dataset_subcatalog(catalog, ds.dataset_id);
    const EpisodeSampler sampler(sub, sampler_config(cfg.eval_shape), Split::kTest);
    if (sampler.plans().empty()) continue;
    const auto s = detail::source_seed(seed, "test", ds.dataset_id);
    std::vector<EpisodeResult> out(episodes);
    parallel_for(episodes, threads, [&](std::size_t i) {
      const SeedContext ctx{s, i};
      out[i] = evaluate_episode(l, sampler.sample_episode(ctx), sub, features, ctx);
    });
    all.insert(all.end(), out.begin(), out.end());
  }
  if (all.empty()) throw ValidationError("no dataset can form a test episode");
  if (cfg.finegrain_episodes == 0) return all;

  for (const auto& ds : catalog.datasets) {
    if (ds.kind != DatasetKind::kImagenetDag) continue;
    const auto sub = dataset_subcatalog(catalog, ds.dataset_id);
    auto shape = cfg.eval_shape;
    shape.ways = 2;
    const EpisodeSampler sampler(sub, sampler_config(shape), Split::kTest);
    if (sampler.plans().empty()) continue;
    const auto dag = ClassDag::from_catalog(sub, ds.dataset_id);
    const auto s = detail::source_seed(seed, "finegrain", ds.dataset_id);
    std::vector<EpisodeResult> out(cfg.finegrain_episodes);
    parallel_for(out.size(), threads, [&](std::size_t i) {
      const SeedContext ctx{s, i};
      const auto spec = sampler.sample_episode(ctx);
      out[i] = evaluate_episode(l, spec, sub, features, ctx);
      out[i].lca_height = lca_height(dag, spec.class_ids[0], spec.class_ids[1]);
    });
    all.insert(all.end(), out.begin(), out.end());
  }
  return all;
}

inline std::string proxy_dataset(const ExperimentConfig& cfg, const Catalog& catalog) {
  if (cfg.proxy_dataset) return *cfg.proxy_dataset;
  for (const auto& d : catalog.datasets)
    if (!d.reserved_for_eval) return d.dataset_id;
  throw ValidationError("every dataset is reserved for evaluation; nothing to validate on");
}

inline std::string results_jsonl(const RunManifest& m, std::span<const EpisodeResult> results) {
  std::string body = m.header_line();
  for (const auto& r : results) body += result_to_json(r).dump() + "\n";
  return body;
}

inline RunSummary cmd_run(const RunOptions& opt) {
  const auto config_text = read_file(opt.config);
  auto cfg = parse_config(config_text);
  if (opt.episodes) {
    if (*opt.episodes < 2) throw ValidationError("--episodes must be >= 2 for run");
    cfg.test_episodes = *opt.episodes;
  }
  const std::size_t threads = opt.threads.value_or(cfg.threads);
  if (threads == 0) throw ValidationError("--threads must be >= 1");

  Catalog catalog;
  std::unique_ptr<FeatureProvider> features;
  if (cfg.catalog_path) {
    catalog = parse_catalog(read_file(detail::resolve(opt.config, *cfg.catalog_path)));
    features = std::make_unique<FeatureTable>(FeatureTable::load(detail::resolve(opt.config, *cfg.feature_table)));
  } else {
    catalog = make_synthetic_catalog(cfg.datasets, opt.seed);
    auto fo = cfg.features;
    fo.seed = opt.seed;
    features = std::make_unique<SyntheticTaskFamily>(catalog, fo);
  }

  RunSummary sum;
  auto& m = sum.manifest;
  m.command = "run";
  m.config_hash = config_hash(cfg);
  m.catalog_hash = fnv1a64(serialize_catalog(catalog));
  m.seed = opt.seed;
  m.parameters = {{"test_episodes", std::to_string(cfg.test_episodes)}};
  m.artifacts = {{"results", results_path(opt.out_dir)},
                 {"snapshot", snapshot_path(opt.out_dir)},
                 {"train_log", train_log_path(opt.out_dir)}};

  Learner l = make_learner(cfg.learner, features->dim(), opt.seed);
  std::string log = m.header_line() + "phase,step,value\n";
  if (cfg.learner.pretrained_init) {
    const auto path = detail::resolve(opt.config, *cfg.learner.pretrained_init);
    load_embedding(l, load_snapshot(path));
    m.parameters.emplace_back("pretrained_init", hex64(fnv1a64(read_file(path))));
  }
  if (cfg.learner.trains_nonepisodically()) {
    if (!cfg.learner.pretrained_init) {
      const auto r = nonepisodic_train(l, catalog, *features, opt.seed);
      for (std::size_t s = 0; s < r.losses.size(); ++s)
        log += "pretrain_loss," + std::to_string(s) + "," + fewshot::detail::real(r.losses[s]) + "\n";
      log += "pretrain_accuracy," + std::to_string(r.losses.size()) + "," + fewshot::detail::real(r.train_accuracy) + "\n";
    }
  } else {
    TrainOptions t{opt.seed, cfg.train_shape, cfg.eval_shape, proxy_dataset(cfg, catalog), threads};
    const auto r = episodic_train(l, catalog, *features, t);
    for (std::size_t s = 0; s < r.losses.size(); ++s)
      log += "loss," + std::to_string(s) + "," + fewshot::detail::real(r.losses[s]) + "\n";
    for (const auto& c : r.checkpoints)
      log += "valid_accuracy," + std::to_string(c.episodes) + "," + fewshot::detail::real(c.valid_accuracy) + "\n";
    log += "best," + std::to_string(r.best.episodes) + "," + fewshot::detail::real(r.best.valid_accuracy) + "\n";
  }

  sum.results = evaluate_sources(l, catalog, *features, cfg, opt.seed, cfg.test_episodes, threads);
  std::vector<EpisodeResult> primary;
  for (const auto& r : sum.results)
    if (!r.lca_height) primary.push_back(r);
  sum.cells = cells_from_results(primary);

  const auto snap = learner_snapshot(l, m.config_hash, m.producer());
  write_file(snapshot_path(opt.out_dir), encode_snapshot(snap));
  write_file(results_path(opt.out_dir), results_jsonl(m, sum.results));
  write_file(train_log_path(opt.out_dir), log);
  write_manifest(m, manifest_path(opt.out_dir));
  return sum;
}

// ---------------------------------------------------------------------------
// report

enum class ReportMode { kRank, kBins, kFinegrain, kTrainsourceDelta };

inline ReportMode parse_report_mode(std::string_view s) {
  if (s == "rank") return ReportMode::kRank;
  if (s == "bins") return ReportMode::kBins;
  if (s == "finegrain") return ReportMode::kFinegrain;
  if (s == "trainsource_delta") return ReportMode::kTrainsourceDelta;
  throw ValidationError("unknown report mode '" + std::string(s) + "'");
}

struct ReportOptions {
  ReportMode mode = ReportMode::kRank;
  std::vector<std::string> inputs;
  std::string out;
  BinAxis axis = BinAxis::kWay;        // bins mode
  std::optional<std::string> method;  // bins and finegrain: restrict to one method
};

/// Result records, one JSON object per line; '#' lines are headers.
inline std::vector<EpisodeResult> parse_results(std::string_view text) {
  std::vector<EpisodeResult> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      out.push_back(result_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(no, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(no, e.what());
    }
  }
  return out;
}

/// True when the first non-comment line is a `method,dataset,mean,ci` header.
inline bool is_cells_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') return line.rfind("method,dataset,mean,ci", 0) == 0;
  return false;
}

/// (method, dataset) cells of one input, either a cells CSV or result records.
inline std::vector<NamedCell> load_cells(const std::string& path) {
  const auto text = read_file(path);
  try {
    if (is_cells_csv(text)) return parse_cells_csv(text);
    auto results = parse_results(text);
    std::erase_if(results, [](const EpisodeResult& r) { return r.lca_height.has_value(); });
    return cells_from_results(results);
  } catch (const ParseError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline std::vector<EpisodeResult> load_results(const std::vector<std::string>& paths,
                                               const std::optional<std::string>& method) {
  std::vector<EpisodeResult> all;
  for (const auto& p : paths) {
    std::vector<EpisodeResult> rs;
    try {
      rs = parse_results(read_file(p));
    } catch (const ParseError& e) {
      throw ValidationError(p + ": " + e.what());
    }
    for (auto& r : rs)
      if (!method || r.method == *method) all.push_back(std::move(r));
  }
  std::set<std::string> methods;
  for (const auto& r : all) methods.insert(r.method);
  if (methods.size() > 1) throw ValidationError("results mix several methods; choose one with --method");
  return all;
}

inline std::string bins_body(const BinReport& rep) {
  std::string body = bin_report_csv(rep);
  for (const auto& [key, n] : rep.omitted)
    body += "# omitted " + std::string(to_string(rep.axis)) + " bin " + std::to_string(key) + " with n=" +
            std::to_string(n) + "\n";
  return body;
}

inline RunManifest cmd_report(const ReportOptions& opt) {
  if (opt.inputs.empty()) throw ValidationError("report needs at least one input file");
  RunManifest m;
  m.command = "report";
  m.parameters = {{"mode", std::string(opt.mode == ReportMode::kRank        ? "rank"
                                       : opt.mode == ReportMode::kBins      ? "bins"
                                       : opt.mode == ReportMode::kFinegrain ? "finegrain"
                                                                            : "trainsource_delta")}};
  if (opt.mode == ReportMode::kBins) m.parameters.emplace_back("axis", std::string(to_string(opt.axis)));
  if (opt.method) m.parameters.emplace_back("method", *opt.method);
  for (std::size_t i = 0; i < opt.inputs.size(); ++i)
    m.parameters.emplace_back("input" + std::to_string(i), hex64(fnv1a64(read_file(opt.inputs[i]))));
  m.artifacts = {{"report", opt.out}};

  std::string body;
  switch (opt.mode) {
    case ReportMode::kRank: {
      std::vector<NamedCell> cells;
      for (const auto& p : opt.inputs) {
        auto c = load_cells(p);
        cells.insert(cells.end(), c.begin(), c.end());
      }
      if (cells.empty()) throw ValidationError("no cells to rank");
      body = rank_table_csv(build_rank_table(cells));
      break;
    }
    case ReportMode::kBins:
    case ReportMode::kFinegrain: {
      auto results = load_results(opt.inputs, opt.method);
      const auto axis = opt.mode == ReportMode::kFinegrain ? BinAxis::kLcaHeight : opt.axis;
      // Binary fine-grainedness episodes follow their own protocol.
      if (axis != BinAxis::kLcaHeight)
        std::erase_if(results, [](const EpisodeResult& r) { return r.lca_height.has_value(); });
      const auto rep = bin_reports(results, axis);
      if (rep.bins.empty()) throw ValidationError("no bin has at least 2 episodes");
      body = bins_body(rep);
      break;
    }
    case ReportMode::kTrainsourceDelta: {
      if (opt.inputs.size() != 2) throw ValidationError("trainsource_delta needs exactly two inputs: baseline, other");
      const auto base = load_cells(opt.inputs[0]);
      const auto other = load_cells(opt.inputs[1]);
      body = delta_csv(trainsource_delta(base, other));
      break;
    }
  }
  write_file(opt.out, m.header_line() + body);
  write_manifest(m, opt.out + ".manifest.json");
  return m;
}

}  // namespace fewshot::cli
