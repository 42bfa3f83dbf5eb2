#pragma once

#include "accentkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

namespace testing {

inline accentkit::Image random_image(accentkit::Shape3 shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  accentkit::Image img(shape);
  for (double& v : img.values()) v = u(rng);
  return img;
}

// Smooth "natural" image: a few low-frequency blobs per channel.
inline accentkit::Image smooth_image(accentkit::Shape3 shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  accentkit::Image img(shape);
  for (int c = 0; c < shape.channels; ++c) {
    const double a = u(rng), b = u(rng), fx = 1 + 3 * u(rng), fy = 1 + 3 * u(rng), base = 0.2 + 0.6 * u(rng);
    for (int y = 0; y < shape.height; ++y)
      for (int x = 0; x < shape.width; ++x)
        img.at(c, y, x) = base + 0.18 * std::sin(fx * x / shape.width * 6.283 + a) *
                                     std::cos(fy * y / shape.height * 6.283 + b);
  }
  return img;
}

inline double max_abs_diff(const accentkit::Image& a, const accentkit::Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.raw()[i] - b.raw()[i]));
  return m;
}

}  // namespace testing
