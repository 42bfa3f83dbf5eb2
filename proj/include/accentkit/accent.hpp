#pragma once

#include "accentkit/augment.hpp"
#include "accentkit/model.hpp"
#include "accentkit/optim.hpp"
#include "accentkit/param.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace accentkit {

struct AccentConfig {
  FeatureDetector detector;
  std::string reg_layer = "conv2";
  double lambda = 0.1;
  int steps = 100;
  AdamOptions adam{};  // lr .05, beta1 .9, beta2 .999, eps 1e-8
  ParamKind param_kind = ParamKind::fourier;
  TransformSpec transforms{};
  std::uint64_t seed = 0;

  void validate(const Model& model) const;
};

nlohmann::json accent_config_to_json(const AccentConfig& cfg);
// Missing fields keep the defaults of `base`.
AccentConfig accent_config_from_json(const nlohmann::json& j, const AccentConfig& base = {});
std::string accent_config_hash(const AccentConfig& cfg);

struct LossTerms {
  double total = 0.0;
  double activation = 0.0;  // mean over draws of f_v(tau(decode(z)))
  double reg = 0.0;         // mean over draws of ||f_l(tau(decode(z))) - f_l(tau(x0))||
};

// Definition of the objective minimized by run_accentuation:
//   total = -activation + lambda * reg
LossTerms accent_loss(const Model& model, const ParamState& state, const Image& seed_image,
                      const AccentConfig& cfg, std::span<const TransformDraw> draws);

struct LossAndGradient {
  LossTerms terms;
  std::vector<double> grad;  // d(total)/d(state.values())
  std::vector<std::string> warnings;
};

LossAndGradient accent_loss_gradient(const Model& model, const ParamState& state, const Image& seed_image,
                                     const AccentConfig& cfg, std::span<const TransformDraw> draws);

struct TraceEntry {
  int step = 0;
  double activation = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct AccentResult {
  Image image;
  ParamState state;
  std::vector<TraceEntry> trace;
  double wall_seconds = 0.0;
  std::string config_hash;
  std::vector<std::string> warnings;
  std::optional<std::string> aborted;  // numeric failure; trace holds the completed steps
};

// Seeds z from the image, then per step: fresh transform batch, loss and
// gradient, one Adam step. Deterministic for a given config.
AccentResult run_accentuation(const Model& model, const Image& seed_image, const AccentConfig& cfg);

// ||f_l(image) - f_l(seed)|| on untransformed inputs.
double reg_distance(const Model& model, const Image& seed_image, const Image& image, std::string_view layer);

constexpr double kLambdaLow = 1e-6;
constexpr double kLambdaHigh = 1e6;

struct DistanceBounds {
  double d_min = 0.0;  // final distance at lambda = kLambdaHigh
  double d_max = 0.0;  // final distance at lambda = kLambdaLow
};

DistanceBounds distance_bounds(const Model& model, const Image& seed_image, const AccentConfig& cfg);

// (d - d_min) / (d_max - d_min), clamped to [0,1]. Throws DegenerateError
// when d_max <= d_min.
double normalize_distance(double d, const DistanceBounds& bounds);

double normalized_reg_distance(const Model& model, const Image& seed_image, const AccentConfig& cfg,
                               const AccentResult& result, const DistanceBounds* bounds = nullptr);

struct LambdaSearchOptions {
  double band_low = 0.3;
  double band_high = 0.7;
  int budget = 12;  // total runs, bound runs included
};

struct LambdaProbe {
  double lambda = 0.0;
  double normalized = 0.0;
};

struct LambdaSearch {
  double lambda = 0.0;
  double normalized = 0.0;
  bool in_band = false;  // false: closest probe returned, band never hit
  int runs = 0;
  DistanceBounds bounds;
  std::vector<LambdaProbe> probes;
};

// Bound runs at the extreme lambdas, then bisection on log10(lambda).
// `distance_at(lambda)` returns the final reg-layer distance of one run.
LambdaSearch find_lambda(const std::function<double(double)>& distance_at, const LambdaSearchOptions& opts = {});
LambdaSearch find_lambda(const Model& model, const Image& seed_image, const AccentConfig& tmpl,
                         const LambdaSearchOptions& opts = {});

}  // namespace accentkit
