#pragma once

// Straight-line transcription of the episode size formulas, kept separate
// from the engine so the two can be compared on random inputs.

#include <cmath>
#include <cstddef>
#include <vector>

namespace fewshot::fixtures {

struct OracleSizes {
  long q = 0;
  long support = 0;
  std::vector<double> ratio;
  std::vector<long> shots;
};

inline OracleSizes oracle_sizes(double beta, const std::vector<double>& alpha, const std::vector<long>& im) {
  OracleSizes o;
  const long n = static_cast<long>(im.size());
  long min_half = 1L << 40;
  for (long c = 0; c < n; ++c) {
    const long half = static_cast<long>(std::floor(0.5 * static_cast<double>(im[c])));
    if (half < min_half) min_half = half;
  }
  o.q = min_half < 10 ? min_half : 10;

  long sum = 0;
  for (long c = 0; c < n; ++c) {
    long remaining = im[c] - o.q;
    if (remaining > 100) remaining = 100;
    sum += static_cast<long>(std::ceil(beta * static_cast<double>(remaining)));
  }
  o.support = sum < 500 ? sum : 500;

  double denom = 0.0;
  for (long c = 0; c < n; ++c) denom += std::exp(alpha[c]) * static_cast<double>(im[c]);
  for (long c = 0; c < n; ++c) {
    const double r = std::exp(alpha[c]) * static_cast<double>(im[c]) / denom;
    o.ratio.push_back(r);
    const long proportional = static_cast<long>(std::floor(r * static_cast<double>(o.support - n))) + 1;
    const long available = im[c] - o.q;
    o.shots.push_back(proportional < available ? proportional : available);
  }
  return o;
}

}  // namespace fewshot::fixtures
