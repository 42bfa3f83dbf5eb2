#include "accentkit/augment.hpp"

#include "accentkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace accentkit {
namespace {

struct Tap {
  int lo = 0;
  int hi = 0;
  double frac = 0.0;  // weight of `hi`
};

// Bilinear sample positions along one axis (half-pixel centres).
std::vector<Tap> axis_taps(double offset_fraction, double size_fraction, int source, int output) {
  std::vector<Tap> taps(static_cast<std::size_t>(output));
  const double start = offset_fraction * source;
  const double span = size_fraction * source;
  for (int i = 0; i < output; ++i) {
    double pos = start + (i + 0.5) * span / output - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(source - 1));
    Tap& t = taps[static_cast<std::size_t>(i)];
    t.lo = static_cast<int>(std::floor(pos));
    t.hi = std::min(t.lo + 1, source - 1);
    t.frac = pos - t.lo;
  }
  return taps;
}

// Crop + resize + noise, before clamping.
Image transform_unclamped(const TransformDraw& draw, const Image& image) {
  const Shape3& out_shape = draw.output;
  if (out_shape.channels != image.channels()) throw ConfigError("transform: channel count mismatch");
  const auto rows = axis_taps(draw.top, draw.size_fraction, image.height(), out_shape.height);
  const auto cols = axis_taps(draw.left, draw.size_fraction, image.width(), out_shape.width);
  Image out(out_shape);
  std::size_t i = 0;
  for (int c = 0; c < out_shape.channels; ++c)
    for (const Tap& r : rows)
      for (const Tap& q : cols) {
        const double top = (1.0 - q.frac) * image.at(c, r.lo, q.lo) + q.frac * image.at(c, r.lo, q.hi);
        const double bottom = (1.0 - q.frac) * image.at(c, r.hi, q.lo) + q.frac * image.at(c, r.hi, q.hi);
        double v = (1.0 - r.frac) * top + r.frac * bottom;
        if (!draw.gauss.empty()) v += draw.gauss[i];
        if (!draw.uniform.empty()) v += draw.uniform[i];
        out.raw()[i++] = v;
      }
  return out;
}

}  // namespace

void TransformSpec::validate() const {
  std::ostringstream err;
  if (!(crop_min > 0.0)) err << "crop_min must be > 0; ";
  if (!(crop_max <= 1.0)) err << "crop_max must be <= 1; ";
  if (!(crop_min <= crop_max)) err << "crop_min (" << crop_min << ") exceeds crop_max (" << crop_max << "); ";
  if (!(gauss_sigma >= 0.0)) err << "gauss_sigma must be >= 0; ";
  if (!(uniform_sigma >= 0.0)) err << "uniform_sigma must be >= 0; ";
  if (batch_size < 1) err << "batch_size must be >= 1; ";
  if (!err.str().empty()) throw ConfigError("invalid transform spec: " + err.str());
}

TransformDraw TransformDraw::identity(Shape3 output) {
  TransformDraw d;
  d.output = output;
  return d;
}

std::vector<TransformDraw> sample_batch(const TransformSpec& spec, Rng& rng, Shape3 source, Shape3 output) {
  spec.validate();
  const int side = std::min(source.height, source.width);
  if (spec.crop_max * side < 2.0)
    throw ConfigError("crop_max leaves fewer than two source pixels per side");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<TransformDraw> draws;
  draws.reserve(static_cast<std::size_t>(spec.batch_size));
  for (int b = 0; b < spec.batch_size; ++b) {
    TransformDraw d;
    d.output = output;
    do {
      d.size_fraction = spec.crop_min + (spec.crop_max - spec.crop_min) * unit(rng);
    } while (d.size_fraction * side < 2.0);
    d.top = (1.0 - d.size_fraction) * unit(rng);
    d.left = (1.0 - d.size_fraction) * unit(rng);
    d.noise_seed = rng();
    Rng noise_rng(d.noise_seed);
    if (spec.gauss_sigma > 0.0) {
      std::normal_distribution<double> gauss(0.0, spec.gauss_sigma);
      d.gauss.resize(output.size());
      for (double& v : d.gauss) v = gauss(noise_rng);
    }
    if (spec.uniform_sigma > 0.0) {
      std::uniform_real_distribution<double> uni(-spec.uniform_sigma, spec.uniform_sigma);
      d.uniform.resize(output.size());
      for (double& v : d.uniform) v = uni(noise_rng);
    }
    draws.push_back(std::move(d));
  }
  return draws;
}

Image apply(const TransformDraw& draw, const Image& image) {
  Image out = transform_unclamped(draw, image);
  for (double& v : out.raw()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void apply_backward(const TransformDraw& draw, const Image& image, const Image& grad_output, Image& grad_image) {
  if (grad_output.shape() != draw.output || grad_image.shape() != image.shape())
    throw ConfigError("apply_backward: shape mismatch");
  const Image pre = transform_unclamped(draw, image);
  const auto rows = axis_taps(draw.top, draw.size_fraction, image.height(), draw.output.height);
  const auto cols = axis_taps(draw.left, draw.size_fraction, image.width(), draw.output.width);
  std::size_t i = 0;
  for (int c = 0; c < draw.output.channels; ++c)
    for (const Tap& r : rows)
      for (const Tap& q : cols) {
        const double v = pre.raw()[i];
        const double g = (v < 0.0 || v > 1.0) ? 0.0 : grad_output.raw()[i];
        ++i;
        if (g == 0.0) continue;
        grad_image.at(c, r.lo, q.lo) += g * (1.0 - r.frac) * (1.0 - q.frac);
        grad_image.at(c, r.lo, q.hi) += g * (1.0 - r.frac) * q.frac;
        grad_image.at(c, r.hi, q.lo) += g * r.frac * (1.0 - q.frac);
        grad_image.at(c, r.hi, q.hi) += g * r.frac * q.frac;
      }
}

}  // namespace accentkit
