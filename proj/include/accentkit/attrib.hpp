#pragma once

#include "accentkit/model.hpp"
#include "accentkit/tensor.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace accentkit {

enum class AttributionMethod { grad_x_input, activation_map, cam_style };

std::string to_string(AttributionMethod method);
AttributionMethod parse_attribution_method(std::string_view name);

// Stable identifier of a detector (layer, direction, position, reduction).
std::string detector_tag(const FeatureDetector& det);

struct AttributionMap {
  Image values;  // 1 x h x w
  AttributionMethod method = AttributionMethod::grad_x_input;
  std::string detector;  // detector_tag
  std::string source_layer;  // "input" for pixel-resolution maps
  std::string image_id;
};

// grad-x-input:   max(0, sum_c df_v/dx * x) at pixel resolution
// activation-map: a_l . v over the detector layer's grid
// cam-style:      max(0, sum_c alpha_c a_c) with alpha_c the spatial mean of
//                 df_v/da_c; uses the detector layer, or the last spatial
//                 layer before it when the detector layer is not spatial
AttributionMap attribution_map(const Model& model, const Image& image, const FeatureDetector& det,
                               AttributionMethod method, std::string image_id = {});
std::vector<AttributionMap> attribution_maps(const Model& model, std::span<const Image> images,
                                             const FeatureDetector& det, AttributionMethod method);

struct AttributionStats {
  std::vector<double> sorted;
  std::size_t sample_size = 0;
  AttributionMethod method = AttributionMethod::grad_x_input;
  std::string detector;
  std::string sample_hash;

  // Linear interpolation between closest ranks: rank = p/100 * (n-1).
  double percentile(double p) const;
};

double percentile_sorted(std::span<const double> sorted, double p);

// Pools every cell of every map. Maps must share method and detector.
AttributionStats pool_maps(std::span<const AttributionMap> maps, std::string sample_hash = {});
AttributionStats collect_stats(const Model& model, const FeatureDetector& det, AttributionMethod method,
                               std::span<const Image> sample);

// Collective normalization N(u; v, p1, p2) of one value.
double normalize_value(double u, double lo, double hi);
Image normalize_map(const AttributionMap& map, const AttributionStats& stats, double p1, double p2);

// Bilinear upsampling of a 1 x h' x w' mask to h x w.
Image upsample_mask(const Image& mask, int height, int width);
// mask * accent + (1 - mask) * seed; the mask is upsampled when needed.
Image compose(const Image& seed, const Image& accent, const Image& mask);

// Sorted float64 array at <base>.bin with a JSON header at <base>.json.
void save_stats(const AttributionStats& stats, const std::filesystem::path& base);
AttributionStats load_stats(const std::filesystem::path& base);

// Hash of the model weights, detector, method and sample; used as the cache key.
std::string stats_cache_key(const Model& model, const FeatureDetector& det, AttributionMethod method,
                            std::span<const Image> sample);
// Loads <cache_dir>/<key> if present, otherwise computes and stores it.
AttributionStats cached_stats(const std::filesystem::path& cache_dir, const Model& model, const FeatureDetector& det,
                              AttributionMethod method, std::span<const Image> sample, bool* hit = nullptr);

}  // namespace accentkit
