#pragma once

#include "accentkit/tensor.hpp"

#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace accentkit {

enum class ParamKind { pixel, fourier, maco_phase };

std::string to_string(ParamKind kind);
ParamKind parse_param_kind(std::string_view name);

// Orthonormal real-input 2-D DFT on an h x w grid with half-spectrum storage
// (h x (w/2 + 1) bins). `inverse` is the real-linear map
//   x[m,n] = 1/sqrt(hw) * sum_u sum_k c_k Re(Z[u,k] e^{2 pi i (um/h + kn/w)})
// with c_k = 1 on the DC and Nyquist columns and 2 elsewhere, so
// inverse(forward(x)) == x for real x.
class RealDft2 {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ComplexRowMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  RealDft2(int height, int width);

  int height() const { return h_; }
  int width() const { return w_; }
  int bins() const { return w_ / 2 + 1; }
  // Multiplicity of column k in the full spectrum.
  double column_weight(int k) const;

  ComplexRowMatrix forward(const RowMatrix& x) const;
  RowMatrix inverse(const ComplexRowMatrix& z) const;
  // Adjoint of `inverse` treating each bin as a (Re, Im) pair; the result
  // packs d/dRe + i d/dIm.
  ComplexRowMatrix inverse_adjoint(const RowMatrix& g) const;

 private:
  int h_, w_;
  Eigen::MatrixXcd fwd_rows_;   // h x h, e^{-2 pi i um/h} / sqrt(h)
  Eigen::MatrixXcd fwd_cols_;   // w x K, e^{-2 pi i kn/w} / sqrt(w)
  Eigen::MatrixXcd inv_rows_;   // h x h, e^{+2 pi i um/h} / sqrt(h)
  Eigen::MatrixXcd inv_cols_;   // K x w, c_k e^{+2 pi i kn/w} / sqrt(w)
};

// Low-frequency emphasis for the Fourier parameterization:
// 1 / max(|f|, 1/max(h,w)) over normalized frequencies, scaled so that a
// unit-magnitude perturbation of every bin has unit RMS in pixel space.
// Returned in half-spectrum row-major order (h x (w/2+1)).
std::vector<double> fourier_weights(int height, int width);

constexpr double kSeedClamp = 1e-4;

double squash(double z);
double unsquash(double x);  // logit of x clamped to [kSeedClamp, 1 - kSeedClamp]

// The optimizable representation of an image. `values` is the only part
// touched by the optimizer:
//   pixel       c*h*w pre-squash pixels
//   fourier     c*h*K complex coefficients, interleaved (re, im)
//   maco_phase  c*h*K phases
// Frozen data: Fourier weights, or the magnitude spectrum and the phase of
// self-conjugate bins for maco_phase.
class ParamState {
 public:
  ParamKind kind() const { return kind_; }
  const Shape3& shape() const { return shape_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& magnitude() const { return magnitude_; }
  const std::vector<double>& base_phase() const { return base_phase_; }
  const RealDft2* dft() const { return dft_.get(); }

 private:
  friend ParamState init_from_image(ParamKind, const Image&);
  friend ParamState load_param_state(const std::filesystem::path&);

  ParamKind kind_ = ParamKind::pixel;
  Shape3 shape_;
  std::vector<double> values_;
  std::vector<double> weights_;
  std::vector<double> magnitude_;
  std::vector<double> base_phase_;
  std::shared_ptr<const RealDft2> dft_;
};

ParamState init_from_image(ParamKind kind, const Image& seed);

// Image before the logistic squash.
Image decode_logits(const ParamState& state);
Image decode(const ParamState& state);

// Vector-Jacobian product of `decode`: maps d(objective)/d(image) to
// d(objective)/d(values). `saturated` counts coordinates where the squash
// derivative is exactly zero.
std::vector<double> decode_backward(const ParamState& state, const Image& grad_image,
                                    std::size_t* saturated = nullptr);

// Scalar objective of a decoded image; fills d(objective)/d(image).
using ImageObjective = std::function<double(const Image& image, Image& grad)>;

struct ParamGradient {
  double value = 0.0;
  std::vector<double> grad;
  std::vector<std::string> warnings;
};

ParamGradient loss_gradient(const ParamState& state, const ImageObjective& objective);

// <dir>/state.json (kind, shape, seed) + <dir>/state.bin (raw doubles).
void save_param_state(const ParamState& state, const std::filesystem::path& dir, std::uint64_t seed);
ParamState load_param_state(const std::filesystem::path& dir);

}  // namespace accentkit
