#pragma once

// Counter-based random streams.
//
// Every random quantity in the library is drawn from a CounterRng whose key is
// derived from (base_seed, episode_index, step tag). The i-th output of a
// stream is splitmix64_mix(key + (i + 1) * golden_gamma), i.e. the splitmix64
// sequence addressed by counter instead of by mutable state. Two streams with
// different tags never share state, so the draws of one sampling step cannot
// shift the draws of another, and any episode can be regenerated in isolation.
//
// Key derivation:
//   k1  = mix(base_seed ^ 0x6a09e667f3bcc909)
//   k2  = mix(k1 + (episode_index + 1) * golden_gamma)
//   key = mix(k2 ^ (tag * 0xbf58476d1ce4e5b9))

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <vector>

namespace fewshot {

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Step tags. The numeric values are part of the stream format.
enum class StreamTag : std::uint64_t {
  kDataset = 1,
  kClasses = 2,
  kBeta = 3,
  kAlphas = 4,
  kQuery = 5,
  kSupport = 6,
  kInit = 16,
  kTraining = 17,
  kFeatures = 18,
  kSplits = 19,
  kEvaluation = 20,
};

struct SeedContext {
  std::uint64_t base_seed = 0;
  std::uint64_t episode_index = 0;

  constexpr std::uint64_t key(StreamTag tag) const noexcept {
    const std::uint64_t k1 = splitmix64_mix(base_seed ^ 0x6a09e667f3bcc909ULL);
    const std::uint64_t k2 = splitmix64_mix(k1 + (episode_index + 1) * kGoldenGamma);
    return splitmix64_mix(k2 ^ (static_cast<std::uint64_t>(tag) * 0xbf58476d1ce4e5b9ULL));
  }
};

class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}
  constexpr CounterRng(const SeedContext& ctx, StreamTag tag) noexcept : key_(ctx.key(tag)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept { return next_u64(); }

  constexpr std::uint64_t next_u64() noexcept {
    ++counter_;
    return splitmix64_mix(key_ + counter_ * kGoldenGamma);
  }

  std::uint64_t counter() const noexcept { return counter_; }

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Integer uniform on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  /// 53-bit uniform on [0, 1).
  double uniform_unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; consumes two outputs per call.
  double normal() noexcept {
    const double u1 = 1.0 - uniform_unit();  // (0, 1]
    const double u2 = uniform_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// k distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Incremental Fisher-Yates over [0, n): each draw() returns the next element
/// of a uniformly random permutation. Different generators may drive
/// successive draws. Storage is sparse for large n; the sequence produced is
/// the same either way.
class PartialShuffle {
 public:
  explicit PartialShuffle(std::size_t n) : n_(n), dense_(n <= kDenseLimit) {
    if (dense_) {
      pool_.resize(n);
      std::iota(pool_.begin(), pool_.end(), std::size_t{0});
    }
  }

  std::size_t size() const { return n_; }
  std::size_t drawn() const { return next_; }

  std::size_t draw(CounterRng& rng) {
    const std::size_t i = next_++;
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n_ - i));
    if (dense_) {
      std::swap(pool_[i], pool_[j]);
      return pool_[i];
    }
    const std::size_t vi = value_at(i);
    const std::size_t vj = value_at(j);
    swapped_[j] = vi;
    swapped_[i] = vj;
    return vj;
  }

 private:
  static constexpr std::size_t kDenseLimit = 256;

  std::size_t value_at(std::size_t i) const {
    const auto it = swapped_.find(i);
    return it == swapped_.end() ? i : it->second;
  }

  std::size_t n_;
  std::size_t next_ = 0;
  bool dense_;
  std::vector<std::size_t> pool_;
  std::unordered_map<std::size_t, std::size_t> swapped_;
};

inline std::vector<std::size_t> CounterRng::sample_without_replacement(std::size_t n, std::size_t k) {
  PartialShuffle shuffle(n);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(shuffle.draw(*this));
  return out;
}

}  // namespace fewshot
