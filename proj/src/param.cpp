#include "accentkit/param.hpp"

#include "accentkit/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace accentkit {
namespace {

using RowMatrix = RealDft2::RowMatrix;
using ComplexRowMatrix = RealDft2::ComplexRowMatrix;
using ConstPlane = Eigen::Map<const RowMatrix>;
using Plane = Eigen::Map<RowMatrix>;
using ConstComplexPlane = Eigen::Map<const ComplexRowMatrix>;
using ComplexPlane = Eigen::Map<ComplexRowMatrix>;

bool is_edge_column(int k, int width) {
  return k == 0 || (width % 2 == 0 && k == width / 2);
}

// Index of the bin holding the conjugate partner of (u, k) on an edge column.
int mirror_row(int u, int height) {
  return (height - u) % height;
}

std::size_t plane_size(const Shape3& s) {
  return static_cast<std::size_t>(s.height) * s.width;
}

std::size_t spectrum_size(const Shape3& s) {
  return static_cast<std::size_t>(s.height) * (s.width / 2 + 1);
}

ComplexRowMatrix maco_spectrum(const ParamState& state, int c) {
  const Shape3& s = state.shape();
  const int bins = s.width / 2 + 1;
  const std::size_t offset = c * spectrum_size(s);
  const double* phi = state.values().data() + offset;
  const double* r = state.magnitude().data() + offset;
  const double* base = state.base_phase().data() + offset;
  ComplexRowMatrix z(s.height, bins);
  for (int u = 0; u < s.height; ++u) {
    for (int k = 0; k < bins; ++k) {
      const std::size_t i = static_cast<std::size_t>(u) * bins + k;
      double psi = phi[i];
      if (is_edge_column(k, s.width)) {
        const std::size_t j = static_cast<std::size_t>(mirror_row(u, s.height)) * bins + k;
        psi = 0.5 * (phi[i] - phi[j]);
      }
      z(u, k) = std::polar(r[i], psi + base[i]);
    }
  }
  return z;
}

}  // namespace

std::string to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::pixel: return "pixel";
    case ParamKind::fourier: return "fourier";
    case ParamKind::maco_phase: return "maco-phase";
  }
  return "?";
}

ParamKind parse_param_kind(std::string_view name) {
  if (name == "pixel") return ParamKind::pixel;
  if (name == "fourier") return ParamKind::fourier;
  if (name == "maco-phase" || name == "maco") return ParamKind::maco_phase;
  throw ConfigError("unknown parameterization '" + std::string(name) + "' (pixel | fourier | maco-phase)");
}

RealDft2::RealDft2(int height, int width) : h_(height), w_(width) {
  if (height <= 0 || width <= 0) throw ConfigError("DFT dimensions must be positive");
  const int k_bins = bins();
  const double two_pi = 2.0 * std::numbers::pi;
  const double sh = 1.0 / std::sqrt(static_cast<double>(h_));
  const double sw = 1.0 / std::sqrt(static_cast<double>(w_));
  fwd_rows_.resize(h_, h_);
  inv_rows_.resize(h_, h_);
  for (int a = 0; a < h_; ++a)
    for (int b = 0; b < h_; ++b) {
      const double angle = two_pi * static_cast<double>((static_cast<long>(a) * b) % h_) / h_;
      fwd_rows_(a, b) = std::polar(sh, -angle);
      inv_rows_(a, b) = std::polar(sh, angle);
    }
  fwd_cols_.resize(w_, k_bins);
  inv_cols_.resize(k_bins, w_);
  for (int n = 0; n < w_; ++n)
    for (int k = 0; k < k_bins; ++k) {
      const double angle = two_pi * static_cast<double>((static_cast<long>(k) * n) % w_) / w_;
      fwd_cols_(n, k) = std::polar(sw, -angle);
      inv_cols_(k, n) = std::polar(sw * column_weight(k), angle);
    }
}

double RealDft2::column_weight(int k) const {
  return is_edge_column(k, w_) ? 1.0 : 2.0;
}

ComplexRowMatrix RealDft2::forward(const RowMatrix& x) const {
  return fwd_rows_ * (x.cast<std::complex<double>>() * fwd_cols_);
}

RowMatrix RealDft2::inverse(const ComplexRowMatrix& z) const {
  return ((inv_rows_ * z) * inv_cols_).real();
}

ComplexRowMatrix RealDft2::inverse_adjoint(const RowMatrix& g) const {
  return inv_rows_.adjoint() * (g.cast<std::complex<double>>() * inv_cols_.adjoint());
}

std::vector<double> fourier_weights(int height, int width) {
  if (height <= 0 || width <= 0) throw ConfigError("fourier_weights: dimensions must be positive");
  const int bins = width / 2 + 1;
  const double floor = 1.0 / std::max(height, width);
  std::vector<double> w(static_cast<std::size_t>(height) * bins);
  double energy = 0.0;
  for (int u = 0; u < height; ++u) {
    const double fy = static_cast<double>(std::min(u, height - u)) / height;
    for (int k = 0; k < bins; ++k) {
      const double fx = static_cast<double>(k) / width;
      const double value = 1.0 / std::max(std::hypot(fy, fx), floor);
      w[static_cast<std::size_t>(u) * bins + k] = value;
      energy += (is_edge_column(k, width) ? 1.0 : 2.0) * value * value;
    }
  }
  const double scale = 1.0 / std::sqrt(energy / (static_cast<double>(height) * width));
  for (double& v : w) v *= scale;
  return w;
}

double squash(double z) {
  return 1.0 / (1.0 + std::exp(-z));
}

double unsquash(double x) {
  const double c = std::clamp(x, kSeedClamp, 1.0 - kSeedClamp);
  return std::log(c / (1.0 - c));
}

ParamState init_from_image(ParamKind kind, const Image& seed) {
  const Shape3 s = seed.shape();
  if (s.channels <= 0 || s.height <= 0 || s.width <= 0) throw ConfigError("seed image has an empty shape");
  for (double v : seed.values())
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("seed pixels must lie in [0,1]");

  ParamState state;
  state.kind_ = kind;
  state.shape_ = s;
  Image logits(s);
  for (std::size_t i = 0; i < seed.size(); ++i) logits.raw()[i] = unsquash(seed.raw()[i]);

  if (kind == ParamKind::pixel) {
    state.values_ = logits.raw();
    return state;
  }

  state.dft_ = std::make_shared<const RealDft2>(s.height, s.width);
  const int bins = state.dft_->bins();
  const std::size_t spec = spectrum_size(s);
  if (kind == ParamKind::fourier) {
    state.weights_ = fourier_weights(s.height, s.width);
    state.values_.assign(2 * spec * s.channels, 0.0);
    for (int c = 0; c < s.channels; ++c) {
      const ComplexRowMatrix z = state.dft_->forward(ConstPlane(logits.raw().data() + c * plane_size(s), s.height, s.width));
      ComplexPlane out(reinterpret_cast<std::complex<double>*>(state.values_.data()) + c * spec, s.height, bins);
      for (int u = 0; u < s.height; ++u)
        for (int k = 0; k < bins; ++k) out(u, k) = z(u, k) / state.weights_[static_cast<std::size_t>(u) * bins + k];
    }
    return state;
  }

  state.values_.assign(spec * s.channels, 0.0);
  state.magnitude_.assign(spec * s.channels, 0.0);
  state.base_phase_.assign(spec * s.channels, 0.0);
  for (int c = 0; c < s.channels; ++c) {
    const ComplexRowMatrix z = state.dft_->forward(ConstPlane(logits.raw().data() + c * plane_size(s), s.height, s.width));
    double* phi = state.values_.data() + c * spec;
    double* r = state.magnitude_.data() + c * spec;
    double* base = state.base_phase_.data() + c * spec;
    for (int u = 0; u < s.height; ++u) {
      for (int k = 0; k < bins; ++k) {
        const std::size_t i = static_cast<std::size_t>(u) * bins + k;
        if (!is_edge_column(k, s.width)) {
          r[i] = std::abs(z(u, k));
          phi[i] = std::arg(z(u, k));
          continue;
        }
        const int mirror = mirror_row(u, s.height);
        if (mirror == u) {
          // Self-conjugate bin: real coefficient, sign kept in the frozen phase.
          const double re = z(u, k).real();
          r[i] = std::abs(re);
          base[i] = re < 0.0 ? std::numbers::pi : 0.0;
          phi[i] = 0.0;
        } else if (u < mirror) {
          const std::size_t j = static_cast<std::size_t>(mirror) * bins + k;
          r[i] = r[j] = std::abs(z(u, k));
          phi[i] = std::arg(z(u, k));
          phi[j] = -phi[i];
        }
      }
    }
  }
  return state;
}

Image decode_logits(const ParamState& state) {
  const Shape3& s = state.shape();
  Image out(s);
  if (state.kind() == ParamKind::pixel) {
    out.raw() = state.values();
    return out;
  }
  const RealDft2& dft = *state.dft();
  const int bins = dft.bins();
  const std::size_t spec = spectrum_size(s);
  for (int c = 0; c < s.channels; ++c) {
    ComplexRowMatrix z;
    if (state.kind() == ParamKind::fourier) {
      z = ConstComplexPlane(reinterpret_cast<const std::complex<double>*>(state.values().data()) + c * spec, s.height, bins);
      for (int u = 0; u < s.height; ++u)
        for (int k = 0; k < bins; ++k) z(u, k) *= state.weights()[static_cast<std::size_t>(u) * bins + k];
    } else {
      z = maco_spectrum(state, c);
    }
    Plane(out.raw().data() + c * plane_size(s), s.height, s.width) = dft.inverse(z);
  }
  return out;
}

Image decode(const ParamState& state) {
  Image out = decode_logits(state);
  for (double& v : out.raw()) v = squash(v);
  return out;
}

std::vector<double> decode_backward(const ParamState& state, const Image& grad_image, std::size_t* saturated) {
  const Shape3& s = state.shape();
  if (grad_image.shape() != s) throw ConfigError("decode_backward: gradient shape mismatch");
  const Image logits = decode_logits(state);
  Image g(s);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double y = squash(logits.raw()[i]);
    const double d = y * (1.0 - y);
    if (d == 0.0) ++flat;
    g.raw()[i] = grad_image.raw()[i] * d;
  }
  if (saturated) *saturated = flat;
  if (state.kind() == ParamKind::pixel) return g.raw();

  const RealDft2& dft = *state.dft();
  const int bins = dft.bins();
  const std::size_t spec = spectrum_size(s);
  std::vector<double> grad(state.values().size(), 0.0);
  for (int c = 0; c < s.channels; ++c) {
    const ComplexRowMatrix gz = dft.inverse_adjoint(ConstPlane(g.raw().data() + c * plane_size(s), s.height, s.width));
    if (state.kind() == ParamKind::fourier) {
      ComplexPlane out(reinterpret_cast<std::complex<double>*>(grad.data()) + c * spec, s.height, bins);
      for (int u = 0; u < s.height; ++u)
        for (int k = 0; k < bins; ++k) {
          out(u, k) = gz(u, k) * state.weights()[static_cast<std::size_t>(u) * bins + k];
          if (is_edge_column(k, s.width) && mirror_row(u, s.height) == u) out(u, k).imag(0.0);
        }
      continue;
    }
    const ComplexRowMatrix z = maco_spectrum(state, c);
    double* out = grad.data() + c * spec;
    for (int u = 0; u < s.height; ++u) {
      for (int k = 0; k < bins; ++k) {
        const double g_psi = -gz(u, k).real() * z(u, k).imag() + gz(u, k).imag() * z(u, k).real();
        const std::size_t i = static_cast<std::size_t>(u) * bins + k;
        if (!is_edge_column(k, s.width)) {
          out[i] += g_psi;
          continue;
        }
        const std::size_t j = static_cast<std::size_t>(mirror_row(u, s.height)) * bins + k;
        out[i] += 0.5 * g_psi;
        out[j] -= 0.5 * g_psi;
      }
    }
  }
  return grad;
}

ParamGradient loss_gradient(const ParamState& state, const ImageObjective& objective) {
  const Image image = decode(state);
  Image grad_image(image.shape());
  ParamGradient out;
  out.value = objective(image, grad_image);
  std::size_t saturated = 0;
  out.grad = decode_backward(state, grad_image, &saturated);
  if (saturated > 0)
    out.warnings.push_back("squash saturated at " + std::to_string(saturated) + " pixel(s); gradient is zero there");
  return out;
}

void save_param_state(const ParamState& state, const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const Shape3& s = state.shape();
  const nlohmann::json header = {{"kind", to_string(state.kind())},
                                 {"shape", {s.channels, s.height, s.width}},
                                 {"seed", seed},
                                 {"arrays",
                                  {{"values", state.values().size()},
                                   {"magnitude", state.magnitude().size()},
                                   {"base_phase", state.base_phase().size()}}}};
  std::ofstream js(dir / "state.json");
  js << header.dump(2) << '\n';
  std::ofstream bin(dir / "state.bin", std::ios::binary);
  for (const auto* arr : {&state.values(), &state.magnitude(), &state.base_phase()})
    bin.write(reinterpret_cast<const char*>(arr->data()), static_cast<std::streamsize>(sizeof(double) * arr->size()));
  if (!js || !bin) throw IoError("cannot write parameter state to " + dir.string());
}

ParamState load_param_state(const std::filesystem::path& dir) {
  std::ifstream js(dir / "state.json");
  if (!js) throw IoError("no state.json in " + dir.string());
  const auto header = nlohmann::json::parse(js);
  ParamState state;
  state.kind_ = parse_param_kind(header.at("kind").get<std::string>());
  const auto shape = header.at("shape");
  state.shape_ = {shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>()};
  std::ifstream bin(dir / "state.bin", std::ios::binary);
  const auto read = [&](std::vector<double>& arr, std::size_t n) {
    arr.resize(n);
    bin.read(reinterpret_cast<char*>(arr.data()), static_cast<std::streamsize>(sizeof(double) * n));
  };
  const auto& arrays = header.at("arrays");
  read(state.values_, arrays.at("values").get<std::size_t>());
  read(state.magnitude_, arrays.at("magnitude").get<std::size_t>());
  read(state.base_phase_, arrays.at("base_phase").get<std::size_t>());
  if (!bin) throw IoError("truncated state.bin in " + dir.string());
  if (state.kind_ != ParamKind::pixel) state.dft_ = std::make_shared<const RealDft2>(state.shape_.height, state.shape_.width);
  if (state.kind_ == ParamKind::fourier) state.weights_ = fourier_weights(state.shape_.height, state.shape_.width);
  return state;
}

}  // namespace accentkit
