#include "accentkit/accent.hpp"

#include "accentkit/error.hpp"
#include "accentkit/hash.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace accentkit {
namespace {

struct Evaluation {
  LossTerms terms;
  ForwardPass pass;
  std::vector<Image> transformed;
  std::vector<double> distances;
  Eigen::MatrixXd diff;  // candidate minus seed at the reg layer
};

Evaluation evaluate(const Model& model, const Image& image, const Image& seed_image, const AccentConfig& cfg,
                    std::span<const TransformDraw> draws) {
  if (draws.empty()) throw ConfigError("accent_loss needs at least one transform draw");
  if (image.shape() != seed_image.shape()) throw ConfigError("seed image does not match the parameter state shape");
  const std::size_t det_layer = model.layer_index(cfg.detector.layer);
  const std::size_t reg_layer = model.layer_index(cfg.reg_layer);

  Evaluation ev;
  std::vector<Image> seeds;
  ev.transformed.reserve(draws.size());
  seeds.reserve(draws.size());
  for (const auto& d : draws) {
    ev.transformed.push_back(apply(d, image));
    seeds.push_back(apply(d, seed_image));
  }
  ev.pass = model.forward(to_feature_map(ev.transformed), std::max(det_layer, reg_layer));
  const ForwardPass seed_pass = model.forward(to_feature_map(seeds), reg_layer);

  const std::vector<double> activations = feature_values(ev.pass.outputs[det_layer], cfg.detector);
  const FeatureMap& cand = ev.pass.outputs[reg_layer];
  ev.diff = cand.data - seed_pass.outputs[reg_layer].data;
  const Eigen::Index per_draw = cand.positions();
  ev.distances.resize(draws.size());
  double act_sum = 0.0, reg_sum = 0.0;
  for (std::size_t n = 0; n < draws.size(); ++n) {
    ev.distances[n] = ev.diff.middleCols(static_cast<Eigen::Index>(n) * per_draw, per_draw).norm();
    if (!std::isfinite(activations[n]) || !std::isfinite(ev.distances[n]))
      throw NumericError("non-finite loss term for transform draw " + std::to_string(n));
    act_sum += activations[n];
    reg_sum += ev.distances[n];
  }
  const double count = static_cast<double>(draws.size());
  ev.terms.activation = act_sum / count;
  ev.terms.reg = reg_sum / count;
  ev.terms.total = -ev.terms.activation + cfg.lambda * ev.terms.reg;
  return ev;
}

}  // namespace

void AccentConfig::validate(const Model& model) const {
  validate_detector(model, detector);
  model.layer_index(reg_layer);
  std::ostringstream err;
  if (steps < 1) err << "steps must be >= 1; ";
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) err << "lambda must be a finite value >= 0; ";
  if (!(adam.lr > 0.0)) err << "lr must be > 0; ";
  if (!err.str().empty()) throw ConfigError("invalid accentuation config: " + err.str());
  transforms.validate();
}

nlohmann::json accent_config_to_json(const AccentConfig& cfg) {
  nlohmann::json det = {{"layer", cfg.detector.layer},
                        {"direction", cfg.detector.direction},
                        {"reduction", cfg.detector.reduction == Reduction::at_position ? "at-position" : "spatial-mean"}};
  if (cfg.detector.position) det["position"] = {cfg.detector.position->first, cfg.detector.position->second};
  return {{"detector", det},
          {"reg_layer", cfg.reg_layer},
          {"lambda", cfg.lambda},
          {"steps", cfg.steps},
          {"lr", cfg.adam.lr},
          {"beta1", cfg.adam.beta1},
          {"beta2", cfg.adam.beta2},
          {"epsilon", cfg.adam.epsilon},
          {"param_kind", to_string(cfg.param_kind)},
          {"transforms",
           {{"crop_min", cfg.transforms.crop_min},
            {"crop_max", cfg.transforms.crop_max},
            {"gauss_sigma", cfg.transforms.gauss_sigma},
            {"uniform_sigma", cfg.transforms.uniform_sigma},
            {"batch_size", cfg.transforms.batch_size}}},
          {"seed", cfg.seed}};
}

AccentConfig accent_config_from_json(const nlohmann::json& j, const AccentConfig& base) {
  AccentConfig cfg = base;
  if (j.contains("detector")) {
    const auto& d = j.at("detector");
    if (d.contains("layer")) cfg.detector.layer = d.at("layer").get<std::string>();
    if (d.contains("direction")) cfg.detector.direction = d.at("direction").get<std::vector<double>>();
    if (d.contains("reduction")) {
      const auto r = d.at("reduction").get<std::string>();
      if (r == "at-position") cfg.detector.reduction = Reduction::at_position;
      else if (r == "spatial-mean") cfg.detector.reduction = Reduction::spatial_mean;
      else throw ConfigError("detector.reduction must be at-position or spatial-mean");
    }
    if (d.contains("position") && !d.at("position").is_null())
      cfg.detector.position = std::pair{d.at("position")[0].get<int>(), d.at("position")[1].get<int>()};
  }
  cfg.reg_layer = j.value("reg_layer", cfg.reg_layer);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.adam.lr = j.value("lr", cfg.adam.lr);
  cfg.adam.beta1 = j.value("beta1", cfg.adam.beta1);
  cfg.adam.beta2 = j.value("beta2", cfg.adam.beta2);
  cfg.adam.epsilon = j.value("epsilon", cfg.adam.epsilon);
  if (j.contains("param_kind")) cfg.param_kind = parse_param_kind(j.at("param_kind").get<std::string>());
  if (j.contains("transforms")) {
    const auto& t = j.at("transforms");
    cfg.transforms.crop_min = t.value("crop_min", cfg.transforms.crop_min);
    cfg.transforms.crop_max = t.value("crop_max", cfg.transforms.crop_max);
    cfg.transforms.gauss_sigma = t.value("gauss_sigma", cfg.transforms.gauss_sigma);
    cfg.transforms.uniform_sigma = t.value("uniform_sigma", cfg.transforms.uniform_sigma);
    cfg.transforms.batch_size = t.value("batch_size", cfg.transforms.batch_size);
  }
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

std::string accent_config_hash(const AccentConfig& cfg) {
  return fnv1a_hex(accent_config_to_json(cfg).dump());
}

LossTerms accent_loss(const Model& model, const ParamState& state, const Image& seed_image, const AccentConfig& cfg,
                      std::span<const TransformDraw> draws) {
  return evaluate(model, decode(state), seed_image, cfg, draws).terms;
}

LossAndGradient accent_loss_gradient(const Model& model, const ParamState& state, const Image& seed_image,
                                     const AccentConfig& cfg, std::span<const TransformDraw> draws) {
  const Image image = decode(state);
  Evaluation ev = evaluate(model, image, seed_image, cfg, draws);
  const std::size_t det_layer = model.layer_index(cfg.detector.layer);
  const std::size_t reg_layer = model.layer_index(cfg.reg_layer);
  const double count = static_cast<double>(draws.size());

  std::vector<GradientSeed> seeds;
  const std::vector<double> act_weights(draws.size(), -1.0 / count);
  seeds.push_back({det_layer, feature_gradient(ev.pass.outputs[det_layer], cfg.detector, act_weights)});
  if (cfg.lambda > 0.0) {
    const FeatureMap& cand = ev.pass.outputs[reg_layer];
    FeatureMap g(cand.channels(), cand.batch, cand.height, cand.width);
    const Eigen::Index per_draw = cand.positions();
    for (std::size_t n = 0; n < draws.size(); ++n) {
      // The norm is not differentiable at zero distance; use the zero subgradient.
      if (ev.distances[n] == 0.0) continue;
      const Eigen::Index first = static_cast<Eigen::Index>(n) * per_draw;
      g.data.middleCols(first, per_draw) = ev.diff.middleCols(first, per_draw) * (cfg.lambda / (count * ev.distances[n]));
    }
    seeds.push_back({reg_layer, std::move(g)});
  }
  const FeatureMap grad_input = model.backward(ev.pass, seeds);

  Image grad_image(image.shape());
  for (std::size_t n = 0; n < draws.size(); ++n)
    apply_backward(draws[n], image, from_feature_map(grad_input, static_cast<int>(n)), grad_image);

  LossAndGradient out;
  out.terms = ev.terms;
  std::size_t saturated = 0;
  out.grad = decode_backward(state, grad_image, &saturated);
  if (saturated > 0)
    out.warnings.push_back("squash saturated at " + std::to_string(saturated) + " pixel(s)");
  for (double g : out.grad)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient");
  return out;
}

AccentResult run_accentuation(const Model& model, const Image& seed_image, const AccentConfig& cfg) {
  cfg.validate(model);
  if (seed_image.shape() != model.input_shape()) throw ConfigError("seed image does not match the model input shape");
  const auto start = std::chrono::steady_clock::now();

  AccentResult result;
  result.config_hash = accent_config_hash(cfg);
  result.state = init_from_image(cfg.param_kind, seed_image);
  Adam adam(result.state.values().size(), cfg.adam);
  Rng rng(cfg.seed);
  result.trace.reserve(static_cast<std::size_t>(cfg.steps));
  bool warned_saturation = false;

  for (int step = 0; step < cfg.steps; ++step) {
    const auto draws = sample_batch(cfg.transforms, rng, seed_image.shape(), model.input_shape());
    LossAndGradient lg;
    try {
      lg = accent_loss_gradient(model, result.state, seed_image, cfg, draws);
    } catch (const NumericError& e) {
      result.aborted = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    if (!lg.warnings.empty() && !warned_saturation) {
      result.warnings.push_back("step " + std::to_string(step) + ": " + lg.warnings.front());
      warned_saturation = true;
    }
    result.trace.push_back({step, lg.terms.activation, lg.terms.reg, lg.terms.total});
    adam.step(result.state.values(), lg.grad);
  }

  result.image = decode(result.state);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

double reg_distance(const Model& model, const Image& seed_image, const Image& image, std::string_view layer) {
  const std::size_t idx = model.layer_index(layer);
  const std::vector<Image> batch = {seed_image, image};
  const ForwardPass pass = model.forward(to_feature_map(batch), idx);
  const FeatureMap& out = pass.outputs[idx];
  const Eigen::Index per = out.positions();
  return (out.data.middleCols(per, per) - out.data.middleCols(0, per)).norm();
}

DistanceBounds distance_bounds(const Model& model, const Image& seed_image, const AccentConfig& cfg) {
  AccentConfig hi = cfg, lo = cfg;
  hi.lambda = kLambdaHigh;
  lo.lambda = kLambdaLow;
  DistanceBounds b;
  b.d_min = reg_distance(model, seed_image, run_accentuation(model, seed_image, hi).image, cfg.reg_layer);
  b.d_max = reg_distance(model, seed_image, run_accentuation(model, seed_image, lo).image, cfg.reg_layer);
  return b;
}

double normalize_distance(double d, const DistanceBounds& bounds) {
  if (!(bounds.d_max > bounds.d_min))
    throw DegenerateError("feature is insensitive to this image: distance bounds do not separate (d_min = " +
                          std::to_string(bounds.d_min) + ", d_max = " + std::to_string(bounds.d_max) + ")");
  return std::clamp((d - bounds.d_min) / (bounds.d_max - bounds.d_min), 0.0, 1.0);
}

double normalized_reg_distance(const Model& model, const Image& seed_image, const AccentConfig& cfg,
                               const AccentResult& result, const DistanceBounds* bounds) {
  const DistanceBounds b = bounds ? *bounds : distance_bounds(model, seed_image, cfg);
  return normalize_distance(reg_distance(model, seed_image, result.image, cfg.reg_layer), b);
}

LambdaSearch find_lambda(const std::function<double(double)>& distance_at, const LambdaSearchOptions& opts) {
  if (opts.budget < 3) throw ConfigError("find_lambda needs a budget of at least 3 runs");
  if (!(opts.band_low <= opts.band_high)) throw ConfigError("find_lambda: empty target band");
  LambdaSearch search;
  search.bounds.d_min = distance_at(kLambdaHigh);
  search.bounds.d_max = distance_at(kLambdaLow);
  search.runs = 2;
  normalize_distance(search.bounds.d_min, search.bounds);  // degenerate check

  double lo = std::log10(kLambdaLow), hi = std::log10(kLambdaHigh);
  const double band_mid = 0.5 * (opts.band_low + opts.band_high);
  double best_gap = std::numeric_limits<double>::infinity();
  while (search.runs < opts.budget) {
    const double mid = 0.5 * (lo + hi);
    const double lambda = std::pow(10.0, mid);
    const double n = normalize_distance(distance_at(lambda), search.bounds);
    ++search.runs;
    search.probes.push_back({lambda, n});
    const double gap = std::abs(n - band_mid);
    if (n >= opts.band_low && n <= opts.band_high) {
      search.lambda = lambda;
      search.normalized = n;
      search.in_band = true;
      return search;
    }
    if (gap < best_gap) {
      best_gap = gap;
      search.lambda = lambda;
      search.normalized = n;
    }
    if (n > opts.band_high) {
      lo = mid;  // too far from the seed: regularize harder
    } else {
      hi = mid;
    }
  }
  return search;
}

LambdaSearch find_lambda(const Model& model, const Image& seed_image, const AccentConfig& tmpl,
                         const LambdaSearchOptions& opts) {
  return find_lambda(
      [&](double lambda) {
        AccentConfig cfg = tmpl;
        cfg.lambda = lambda;
        return reg_distance(model, seed_image, run_accentuation(model, seed_image, cfg).image, cfg.reg_layer);
      },
      opts);
}

}  // namespace accentkit
