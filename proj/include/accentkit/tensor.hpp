#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace accentkit {

struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool operator==(const Shape3&) const = default;
};

// Planar (c, y, x) image or activation grid.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0)
      : shape_{channels, height, width}, data_(shape_.size(), fill) {}
  explicit Image(Shape3 shape, double fill = 0.0) : Image(shape.channels, shape.height, shape.width, fill) {}

  const Shape3& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape3 shape_;
  std::vector<double> data_;
};

// Batched activations stored channels-first per position: rows are channels,
// columns enumerate (batch, y, x) in row-major order. This makes a 3x3
// convolution a single GEMM over the whole batch.
struct FeatureMap {
  int batch = 0;
  int height = 0;
  int width = 0;
  Eigen::MatrixXd data;

  FeatureMap() = default;
  FeatureMap(int channels, int batch_, int height_, int width_)
      : batch(batch_), height(height_), width(width_),
        data(Eigen::MatrixXd::Zero(channels, static_cast<Eigen::Index>(batch_) * height_ * width_)) {}

  int channels() const { return static_cast<int>(data.rows()); }
  int positions() const { return height * width; }
  Eigen::Index column(int n, int y, int x) const {
    return (static_cast<Eigen::Index>(n) * height + y) * width + x;
  }
  double& at(int c, int n, int y, int x) { return data(c, column(n, y, x)); }
  double at(int c, int n, int y, int x) const { return data(c, column(n, y, x)); }
};

// Packs images (all of one shape) into a FeatureMap batch.
FeatureMap to_feature_map(std::span<const Image> images);
// Extracts batch element `n` as a planar grid.
Image from_feature_map(const FeatureMap& map, int n);

double l2_distance(std::span<const double> a, std::span<const double> b);

}  // namespace accentkit
