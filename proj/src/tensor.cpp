#include "accentkit/tensor.hpp"

#include "accentkit/error.hpp"

#include <cmath>

namespace accentkit {

FeatureMap to_feature_map(std::span<const Image> images) {
  if (images.empty()) throw ConfigError("empty image batch");
  const Shape3 shape = images.front().shape();
  FeatureMap map(shape.channels, static_cast<int>(images.size()), shape.height, shape.width);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.shape() != shape) throw ConfigError("images in a batch must share one shape");
    for (int c = 0; c < shape.channels; ++c)
      for (int y = 0; y < shape.height; ++y)
        for (int x = 0; x < shape.width; ++x) map.at(c, static_cast<int>(n), y, x) = img.at(c, y, x);
  }
  return map;
}

Image from_feature_map(const FeatureMap& map, int n) {
  Image img(map.channels(), map.height, map.width);
  for (int c = 0; c < map.channels(); ++c)
    for (int y = 0; y < map.height; ++y)
      for (int x = 0; x < map.width; ++x) img.at(c, y, x) = map.at(c, n, y, x);
  return img;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("l2_distance: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

}  // namespace accentkit
