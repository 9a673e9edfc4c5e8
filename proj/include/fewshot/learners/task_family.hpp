#pragma once

// Feature providers turn sampled example references into input vectors.
//
// SyntheticTaskFamily: class c has mean mu_c ~ N(0, I_D); example i of class c
// is mu_c + sigma * eps with eps ~ N(0, I_D), followed by optional nuisance
// coordinates that are pure noise. For hierarchy datasets the mean of a leaf
// is coarse * mu_parent + fine * mu_leaf, so siblings are closer than
// cousins. Every draw is keyed by class id and example index.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fewshot/catalog.hpp"
#include "fewshot/error.hpp"
#include "fewshot/learners/heads.hpp"
#include "fewshot/learners/network.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/sampler.hpp"

namespace fewshot {

/// Support and query inputs of one episode. Labels are 0-based positions in
/// EpisodeSpec::class_ids.
struct EpisodeBatch {
  Matrix support_x;
  Labels support_y;
  Matrix query_x;
  Labels query_y;
  std::size_t ways = 0;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual void write(const ClassRecord& cls, std::size_t example, Eigen::Ref<Vector> out) const = 0;

  Vector features(const ClassRecord& cls, std::size_t example) const {
    Vector v(static_cast<Eigen::Index>(dim()));
    write(cls, example, v);
    return v;
  }
};

struct SyntheticOptions {
  std::size_t dim = 16;
  double sigma = 0.2;
  std::size_t nuisance_dims = 0;
  double nuisance_sigma = 1.0;
  double coarse = 1.0;  // hierarchy datasets only
  double fine = 0.5;
  std::uint64_t seed = 0;
};

class SyntheticTaskFamily final : public FeatureProvider {
 public:
  SyntheticTaskFamily(const Catalog& catalog, SyntheticOptions opt) : opt_(opt) {
    if (opt.dim == 0) throw ValidationError("feature dimension must be positive");
    if (!(opt.sigma >= 0.0) || !(opt.nuisance_sigma >= 0.0)) throw ValidationError("noise scales must be nonnegative");
    std::map<std::pair<std::string, std::string>, std::string> parent;  // (dataset, child) -> first parent
    for (const auto& e : catalog.hierarchy_edges) parent.try_emplace({e.dataset_id, e.child}, e.parent);
    // Along the first-parent chain: m(v) = coarse * m(parent) + fine * mu_v, with
    // m(root) = 0. Flat classes use mu_v directly.
    std::map<std::pair<std::string, std::string>, Vector> memo;
    std::function<Vector(const std::string&, const std::string&)> chain = [&](const std::string& ds,
                                                                             const std::string& node) -> Vector {
      const auto key = std::pair{ds, node};
      if (const auto m = memo.find(key); m != memo.end()) return m->second;
      const auto it = parent.find(key);
      Vector mu = it == parent.end() ? Vector(Vector::Zero(static_cast<Eigen::Index>(opt_.dim)))
                                     : Vector(opt_.coarse * chain(ds, it->second) + opt_.fine * node_mean(ds + "/" + node));
      memo.emplace(key, mu);
      return mu;
    };
    for (const auto& c : catalog.classes) {
      const auto key = c.dataset_id + "/" + c.class_id;
      means_.emplace(key, parent.count({c.dataset_id, c.class_id}) ? chain(c.dataset_id, c.class_id) : node_mean(key));
    }
  }

  std::size_t dim() const override { return opt_.dim + opt_.nuisance_dims; }
  const SyntheticOptions& options() const { return opt_; }

  void write(const ClassRecord& cls, std::size_t example, Eigen::Ref<Vector> out) const override {
    const auto key = cls.dataset_id + "/" + cls.class_id;
    const auto it = means_.find(key);
    if (it == means_.end()) throw ValidationError("class '" + cls.class_id + "' is not part of the task family");
    CounterRng rng(SeedContext{opt_.seed ^ fnv1a64(key), example}, StreamTag::kFeatures);
    const auto d = static_cast<Eigen::Index>(opt_.dim);
    for (Eigen::Index i = 0; i < d; ++i) out(i) = it->second(i) + opt_.sigma * rng.normal();
    for (Eigen::Index i = d; i < out.size(); ++i) out(i) = opt_.nuisance_sigma * rng.normal();
  }

 private:
  Vector node_mean(const std::string& key) const {
    CounterRng rng(SeedContext{opt_.seed, fnv1a64(key)}, StreamTag::kFeatures);
    Vector mu(static_cast<Eigen::Index>(opt_.dim));
    for (Eigen::Index i = 0; i < mu.size(); ++i) mu(i) = rng.normal();
    return mu;
  }

  SyntheticOptions opt_;
  std::unordered_map<std::string, Vector> means_;
};

/// Stored features: one example per line,
///   <dataset_id> <class_id> <example_index> <v_1> ... <v_D>
/// whitespace separated; '#' starts a comment line.
class FeatureTable final : public FeatureProvider {
 public:
  static FeatureTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feature table '" + path + "'");
    FeatureTable t;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string ds, cls;
      std::size_t idx = 0;
      if (!(ss >> ds >> cls >> idx)) throw ParseError(no, "expected dataset, class and example index");
      std::vector<double> values;
      double v;
      while (ss >> v) values.push_back(v);
      if (!ss.eof()) throw ParseError(no, "non-numeric feature value");
      if (values.empty()) throw ParseError(no, "no feature values");
      if (t.dim_ == 0) t.dim_ = values.size();
      if (values.size() != t.dim_) throw ParseError(no, "feature dimension mismatch");
      t.rows_[key(ds, cls, idx)] = Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
    if (t.dim_ == 0) throw ValidationError("feature table '" + path + "' is empty");
    return t;
  }

  std::size_t dim() const override { return dim_; }

  void write(const ClassRecord& cls, std::size_t example, Eigen::Ref<Vector> out) const override {
    const auto it = rows_.find(key(cls.dataset_id, cls.class_id, example));
    if (it == rows_.end())
      throw ValidationError("no features for " + cls.dataset_id + "/" + cls.class_id + "#" + std::to_string(example));
    out = it->second;
  }

 private:
  static std::string key(const std::string& ds, const std::string& cls, std::size_t i) {
    return ds + '\t' + cls + '\t' + std::to_string(i);
  }

  std::size_t dim_ = 0;
  std::unordered_map<std::string, Vector> rows_;
};

inline EpisodeBatch make_batch(const EpisodeSpec& ep, const Catalog& catalog, const FeatureProvider& features) {
  EpisodeBatch b;
  b.ways = ep.ways();
  const auto d = static_cast<Eigen::Index>(features.dim());
  auto fill = [&](const std::vector<ExampleRef>& refs, Matrix& x, Labels& y) {
    x.resize(static_cast<Eigen::Index>(refs.size()), d);
    y.resize(refs.size());
    Vector row(d);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto& cls = catalog.classes[ep.catalog_classes[refs[i].class_index]];
      features.write(cls, refs[i].example_index, row);
      x.row(static_cast<Eigen::Index>(i)) = row.transpose();
      y[i] = static_cast<int>(refs[i].class_index);
    }
  };
  fill(ep.support, b.support_x, b.support_y);
  fill(ep.query, b.query_x, b.query_y);
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic catalogs for the task family.

struct SyntheticDataset {
  std::string id;
  std::size_t classes = 100;
  std::size_t examples_per_class = 40;
  bool hierarchy = false;       // root -> groups -> 2 subgroups -> leaves; group 0 valid, group 1 test
  std::size_t groups = 6;       // hierarchy only
  bool reserved = false;        // evaluation-only; every class goes to test
};

inline Catalog make_synthetic_catalog(const std::vector<SyntheticDataset>& datasets, std::uint64_t seed) {
  Catalog cat;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const auto& spec = datasets[d];
    if (spec.examples_per_class < 2) throw ValidationError("synthetic classes need at least 2 examples");
    cat.datasets.push_back({spec.id, spec.id, spec.hierarchy ? DatasetKind::kImagenetDag : DatasetKind::kFlat,
                            spec.reserved});
    const auto first = cat.classes.size();
    for (std::size_t c = 0; c < spec.classes; ++c) {
      ClassRecord rec;
      rec.dataset_id = spec.id;
      rec.class_id = spec.id + "_c" + std::to_string(c);
      rec.example_count = spec.examples_per_class;
      cat.classes.push_back(rec);
    }
    if (spec.reserved) {
      for (std::size_t i = first; i < cat.classes.size(); ++i) cat.classes[i].split = Split::kTest;
    } else if (spec.hierarchy) {
      if (spec.groups < 3) throw ValidationError("hierarchy datasets need at least 3 groups");
      for (std::size_t g = 0; g < spec.groups && g < spec.classes; ++g) {
        const auto group = spec.id + "_g" + std::to_string(g);
        cat.hierarchy_edges.push_back({spec.id, spec.id + "_root", group});
        for (std::size_t s = 0; s < 2 && g + s * spec.groups < spec.classes; ++s)
          cat.hierarchy_edges.push_back({spec.id, group, group + "_s" + std::to_string(s)});
      }
      for (std::size_t c = 0; c < spec.classes; ++c) {
        const std::size_t g = c % spec.groups;
        auto& rec = cat.classes[first + c];
        cat.hierarchy_edges.push_back(
            {spec.id, spec.id + "_g" + std::to_string(g) + "_s" + std::to_string((c / spec.groups) % 2), rec.class_id});
        rec.split = g == 0 ? Split::kValid : g == 1 ? Split::kTest : Split::kTrain;
      }
    } else {
      std::vector<ClassRecord> view(cat.classes.begin() + static_cast<std::ptrdiff_t>(first), cat.classes.end());
      const auto splits = assign_flat_splits(view, {}, seed + d);
      for (std::size_t i = 0; i < splits.size(); ++i) cat.classes[first + i].split = splits[i];
    }
  }
  return cat;
}

}  // namespace fewshot
