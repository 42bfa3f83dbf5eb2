#include "accentkit/attrib.hpp"

#include "accentkit/augment.hpp"
#include "accentkit/error.hpp"
#include "accentkit/hash.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace accentkit {
namespace {

constexpr std::size_t kBatch = 32;

std::size_t cam_layer(const Model& model, std::size_t det_layer) {
  for (std::size_t i = det_layer + 1; i-- > 0;)
    if (model.is_spatial(i)) return i;
  throw ConfigError("cam-style attribution needs a spatial layer at or before the detector layer");
}

AttributionMap make_map(Image values, AttributionMethod method, const FeatureDetector& det, std::string layer) {
  AttributionMap m;
  m.values = std::move(values);
  m.method = method;
  m.detector = detector_tag(det);
  m.source_layer = std::move(layer);
  return m;
}

void maps_for_chunk(const Model& model, std::span<const Image> images, const FeatureDetector& det,
                    AttributionMethod method, std::vector<AttributionMap>& out) {
  const std::size_t det_layer = model.layer_index(det.layer);
  const FeatureMap input = to_feature_map(images);
  const ForwardPass pass = model.forward(input, det_layer);
  const std::vector<double> ones(images.size(), 1.0);
  const int n_images = static_cast<int>(images.size());

  switch (method) {
    case AttributionMethod::grad_x_input: {
      const GradientSeed seed{det_layer, feature_gradient(pass.outputs[det_layer], det, ones)};
      const FeatureMap g = model.backward(pass, std::span(&seed, 1));
      for (int n = 0; n < n_images; ++n) {
        Image m(1, input.height, input.width);
        for (int y = 0; y < input.height; ++y)
          for (int x = 0; x < input.width; ++x) {
            const Eigen::Index col = input.column(n, y, x);
            m.at(0, y, x) = std::max(0.0, g.data.col(col).dot(input.data.col(col)));
          }
        out.push_back(make_map(std::move(m), method, det, "input"));
      }
      break;
    }
    case AttributionMethod::activation_map: {
      const FeatureMap& a = pass.outputs[det_layer];
      const Eigen::Map<const Eigen::VectorXd> v(det.direction.data(), static_cast<Eigen::Index>(det.direction.size()));
      const Eigen::RowVectorXd proj = v.transpose() * a.data;
      for (int n = 0; n < n_images; ++n) {
        Image m(1, a.height, a.width);
        for (int y = 0; y < a.height; ++y)
          for (int x = 0; x < a.width; ++x) m.at(0, y, x) = proj(a.column(n, y, x));
        out.push_back(make_map(std::move(m), method, det, det.layer));
      }
      break;
    }
    case AttributionMethod::cam_style: {
      const std::size_t layer = cam_layer(model, det_layer);
      const GradientSeed seed{det_layer, feature_gradient(pass.outputs[det_layer], det, ones)};
      const FeatureMap g = model.output_gradient(pass, std::span(&seed, 1), layer);
      const FeatureMap& a = pass.outputs[layer];
      const int positions = a.positions();
      for (int n = 0; n < n_images; ++n) {
        const Eigen::Index first = static_cast<Eigen::Index>(n) * positions;
        const Eigen::VectorXd alpha = g.data.middleCols(first, positions).rowwise().mean();
        const Eigen::RowVectorXd cam = alpha.transpose() * a.data.middleCols(first, positions);
        Image m(1, a.height, a.width);
        for (int p = 0; p < positions; ++p) m.raw()[static_cast<std::size_t>(p)] = std::max(0.0, cam(p));
        out.push_back(make_map(std::move(m), method, det, model.layer(layer).name));
      }
      break;
    }
  }
}

std::string sample_hash(std::span<const Image> sample) {
  Fnv1a h;
  for (const auto& img : sample) {
    h.update_pod(img.shape());
    h.update(img.values());
  }
  return h.hex();
}

}  // namespace

std::string to_string(AttributionMethod method) {
  switch (method) {
    case AttributionMethod::grad_x_input: return "grad-x-input";
    case AttributionMethod::activation_map: return "activation-map";
    case AttributionMethod::cam_style: return "cam-style";
  }
  return "unknown";
}

AttributionMethod parse_attribution_method(std::string_view name) {
  if (name == "grad-x-input") return AttributionMethod::grad_x_input;
  if (name == "activation-map") return AttributionMethod::activation_map;
  if (name == "cam-style") return AttributionMethod::cam_style;
  throw ConfigError("unsupported attribution method '" + std::string(name) +
                    "' (expected grad-x-input, activation-map or cam-style)");
}

std::string detector_tag(const FeatureDetector& det) {
  Fnv1a h;
  h.update(det.layer);
  h.update(std::span<const double>(det.direction));
  const int reduction = det.reduction == Reduction::at_position ? 1 : 0;
  h.update_pod(reduction);
  if (det.position) {
    h.update_pod(det.position->first);
    h.update_pod(det.position->second);
  }
  return det.layer + "-" + h.hex().substr(0, 8);
}

AttributionMap attribution_map(const Model& model, const Image& image, const FeatureDetector& det,
                               AttributionMethod method, std::string image_id) {
  auto maps = attribution_maps(model, std::span(&image, 1), det, method);
  maps.front().image_id = std::move(image_id);
  return std::move(maps.front());
}

std::vector<AttributionMap> attribution_maps(const Model& model, std::span<const Image> images,
                                             const FeatureDetector& det, AttributionMethod method) {
  validate_detector(model, det);
  std::vector<AttributionMap> maps;
  maps.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kBatch)
    maps_for_chunk(model, images.subspan(start, std::min(kBatch, images.size() - start)), det, method, maps);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    maps[i].image_id = std::to_string(i);
    for (double v : maps[i].values.values())
      if (!std::isfinite(v)) throw NumericError("non-finite attribution value for image " + std::to_string(i));
  }
  return maps;
}

double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DegenerateError("percentile of an empty sample");
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("percentile must lie in [0, 100]");
  const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double AttributionStats::percentile(double p) const { return percentile_sorted(sorted, p); }

AttributionStats pool_maps(std::span<const AttributionMap> maps, std::string sample_hash) {
  if (maps.empty()) throw InsufficientDataError("attribution stats need a nonempty sample");
  AttributionStats stats;
  stats.method = maps.front().method;
  stats.detector = maps.front().detector;
  stats.sample_size = maps.size();
  stats.sample_hash = std::move(sample_hash);
  for (const auto& m : maps) {
    if (m.method != stats.method || m.detector != stats.detector)
      throw ConfigError("pooled maps must share the attribution method and detector");
    stats.sorted.insert(stats.sorted.end(), m.values.raw().begin(), m.values.raw().end());
  }
  std::sort(stats.sorted.begin(), stats.sorted.end());
  return stats;
}

AttributionStats collect_stats(const Model& model, const FeatureDetector& det, AttributionMethod method,
                               std::span<const Image> sample) {
  if (sample.empty()) throw InsufficientDataError("attribution stats need a nonempty sample");
  const auto maps = attribution_maps(model, sample, det, method);
  return pool_maps(maps, sample_hash(sample));
}

double normalize_value(double u, double lo, double hi) {
  if (u <= lo) return 0.0;
  if (u >= hi) return 1.0;
  return (u - lo) / (hi - lo);
}

Image normalize_map(const AttributionMap& map, const AttributionStats& stats, double p1, double p2) {
  if (!(p1 >= 0.0 && p1 < p2 && p2 <= 100.0))
    throw ConfigError("percentiles must satisfy 0 <= p1 < p2 <= 100 (got p1 = " + std::to_string(p1) +
                      ", p2 = " + std::to_string(p2) + ")");
  if (map.method != stats.method || map.detector != stats.detector)
    throw ConfigError("attribution map and stats disagree on method or detector");
  const double lo = stats.percentile(p1);
  const double hi = stats.percentile(p2);
  if (!(hi > lo)) throw DegenerateError("degenerate attribution stats: P(p1) == P(p2) == " + std::to_string(lo));
  Image mask(map.values.shape());
  std::transform(map.values.raw().begin(), map.values.raw().end(), mask.raw().begin(),
                 [&](double u) { return normalize_value(u, lo, hi); });
  return mask;
}

Image upsample_mask(const Image& mask, int height, int width) {
  if (mask.channels() != 1) throw ConfigError("masks must have a single channel");
  if (mask.height() == height && mask.width() == width) return mask;
  return apply(TransformDraw::identity({1, height, width}), mask);
}

Image compose(const Image& seed, const Image& accent, const Image& mask) {
  if (seed.shape() != accent.shape()) throw ConfigError("compose: seed and accent shapes differ");
  if (mask.channels() != 1) throw ConfigError("compose: mask must have a single channel");
  const Image m = upsample_mask(mask, seed.height(), seed.width());
  Image out(seed.shape());
  for (int c = 0; c < seed.channels(); ++c)
    for (int y = 0; y < seed.height(); ++y)
      for (int x = 0; x < seed.width(); ++x) {
        const double a = m.at(0, y, x);
        out.at(c, y, x) = a * accent.at(c, y, x) + (1.0 - a) * seed.at(c, y, x);
      }
  return out;
}

void save_stats(const AttributionStats& stats, const std::filesystem::path& base) {
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  const nlohmann::json header = {{"detector", stats.detector},
                                 {"method", to_string(stats.method)},
                                 {"sample_hash", stats.sample_hash},
                                 {"sample_size", stats.sample_size},
                                 {"count", stats.sorted.size()},
                                 {"dtype", "float64-le"}};
  std::ofstream bin(std::filesystem::path(base).concat(".bin"), std::ios::binary);
  bin.write(reinterpret_cast<const char*>(stats.sorted.data()),
            static_cast<std::streamsize>(stats.sorted.size() * sizeof(double)));
  std::ofstream js(std::filesystem::path(base).concat(".json"));
  js << header.dump(2) << '\n';
  if (!bin || !js) throw IoError("cannot write attribution stats at " + base.string());
}

AttributionStats load_stats(const std::filesystem::path& base) {
  std::ifstream js(std::filesystem::path(base).concat(".json"));
  if (!js) throw IoError("no attribution stats header at " + base.string());
  const auto header = nlohmann::json::parse(js);
  AttributionStats stats;
  stats.detector = header.at("detector").get<std::string>();
  stats.method = parse_attribution_method(header.at("method").get<std::string>());
  stats.sample_hash = header.at("sample_hash").get<std::string>();
  stats.sample_size = header.at("sample_size").get<std::size_t>();
  stats.sorted.resize(header.at("count").get<std::size_t>());
  std::ifstream bin(std::filesystem::path(base).concat(".bin"), std::ios::binary);
  bin.read(reinterpret_cast<char*>(stats.sorted.data()), static_cast<std::streamsize>(stats.sorted.size() * sizeof(double)));
  if (!bin) throw IoError("truncated attribution stats at " + base.string());
  if (!std::is_sorted(stats.sorted.begin(), stats.sorted.end()))
    throw IoError("attribution stats at " + base.string() + " are not sorted");
  return stats;
}

std::string stats_cache_key(const Model& model, const FeatureDetector& det, AttributionMethod method,
                            std::span<const Image> sample) {
  Fnv1a h;
  h.update(weights_fingerprint(model));
  h.update(detector_tag(det));
  h.update(to_string(method));
  h.update(sample_hash(sample));
  return to_string(method) + "-" + h.hex();
}

AttributionStats cached_stats(const std::filesystem::path& cache_dir, const Model& model, const FeatureDetector& det,
                              AttributionMethod method, std::span<const Image> sample, bool* hit) {
  const auto base = cache_dir / stats_cache_key(model, det, method, sample);
  if (std::filesystem::exists(std::filesystem::path(base).concat(".json")) &&
      std::filesystem::exists(std::filesystem::path(base).concat(".bin"))) {
    if (hit) *hit = true;
    return load_stats(base);
  }
  if (hit) *hit = false;
  AttributionStats stats = collect_stats(model, det, method, sample);
  save_stats(stats, base);
  return stats;
}

}  // namespace accentkit
