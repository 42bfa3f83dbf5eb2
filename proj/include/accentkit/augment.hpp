#pragma once

#include "accentkit/tensor.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace accentkit {

using Rng = std::mt19937_64;

struct TransformSpec {
  double crop_min = 0.05;
  double crop_max = 0.99;
  double gauss_sigma = 0.02;
  double uniform_sigma = 0.02;  // half-width of the uniform noise
  int batch_size = 16;

  // Throws ConfigError naming the offending fields.
  void validate() const;
};

// One concrete transformation: a square crop (side fraction and top-left
// offset, in units of the source size) resized to the output grid, then
// Gaussian and uniform noise, then clamping to [0,1]. The noise fields are
// stored so the identical draw can be applied to several images.
struct TransformDraw {
  double size_fraction = 1.0;
  double top = 0.0;
  double left = 0.0;
  Shape3 output;
  std::vector<double> gauss;    // empty means zero
  std::vector<double> uniform;  // empty means zero
  std::uint64_t noise_seed = 0;

  static TransformDraw identity(Shape3 output);
};

// Draws `spec.batch_size` transforms. Crops covering fewer than two source
// pixels per side are rejected and redrawn.
std::vector<TransformDraw> sample_batch(const TransformSpec& spec, Rng& rng, Shape3 source, Shape3 output);

Image apply(const TransformDraw& draw, const Image& image);

// Accumulates the vector-Jacobian product of `apply` at `image` into
// `grad_image`. Clamped outputs pass no gradient.
void apply_backward(const TransformDraw& draw, const Image& image, const Image& grad_output, Image& grad_image);

}  // namespace accentkit
