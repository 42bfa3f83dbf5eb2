#pragma once

#include "accentkit/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace accentkit {

enum class LayerKind {
  conv_relu,        // 3x3 convolution, stride 1, zero padding 1, followed by ReLU
  max_pool,         // 2x2 max pooling, stride 2
  global_avg_pool,  // spatial mean per channel
  linear,           // dense layer on a non-spatial input, no nonlinearity
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv_relu;
  int out_channels = 0;  // conv_relu and linear only
};

struct LayerParams {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

// Everything a backward pass needs from a forward pass.
struct ForwardPass {
  FeatureMap input;
  std::vector<FeatureMap> outputs;               // outputs[i] is layer i's output
  std::vector<std::vector<Eigen::Index>> argmax; // max_pool layers: source column per output element
  std::vector<Eigen::MatrixXd> columns;          // conv_relu layers: im2col buffers when kept
};

// Gradient of a scalar objective with respect to one layer's output.
struct GradientSeed {
  std::size_t layer = 0;
  FeatureMap grad;
};

struct PixelBox {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
  bool operator==(const PixelBox&) const = default;
};

// A small differentiable CNN with named layers. Layers are topologically
// ordered; activations are captured after each layer (post-ReLU for conv
// layers, pre-softmax for the final linear layer).
//
// Model is a value type: copying it is the supported way to hand a private
// instance to each worker. All const member functions are reentrant.
class Model {
 public:
  Model(Shape3 input_shape, std::vector<LayerSpec> layers, std::uint64_t init_seed);

  // The bundled desk-scale classifier: 32x32 RGB, conv16 pool conv32 pool
  // conv64 conv64, global average pool, 10-way linear head.
  static Model reference(std::uint64_t init_seed, int classes = 10);
  // 3x8x8 network used for exhaustive gradient checks.
  static Model toy(std::uint64_t init_seed);

  const Shape3& input_shape() const { return input_shape_; }
  std::size_t layer_count() const { return layers_.size(); }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::vector<std::string> layer_names() const;
  // Throws ConfigError for unknown ids.
  std::size_t layer_index(std::string_view name) const;
  const Shape3& layer_shape(std::size_t i) const { return shapes_.at(i); }
  bool is_spatial(std::size_t i) const;
  bool has_params(std::size_t i) const;
  // Normalization layers would be frozen here; the architectures in this
  // library have none, so models are always in evaluation mode.
  bool eval_mode() const { return true; }

  const LayerParams& params(std::size_t i) const { return params_.at(i); }
  LayerParams& params(std::size_t i) { return params_.at(i); }
  std::size_t parameter_count() const;

  ForwardPass forward(const FeatureMap& input, std::size_t last_layer, bool keep_columns = false) const;
  ForwardPass forward(const FeatureMap& input) const { return forward(input, layers_.size() - 1); }

  // Reverse-mode pass. Seeds inject d(objective)/d(output) at arbitrary
  // layers up to the last layer of `pass`. Returns the gradient with respect
  // to the pass input; fills `param_grads` (one entry per layer) if given.
  FeatureMap backward(const ForwardPass& pass, std::span<const GradientSeed> seeds,
                      std::vector<LayerParams>* param_grads = nullptr) const;
  // Same reverse pass, stopped at the output of `layer`.
  FeatureMap output_gradient(const ForwardPass& pass, std::span<const GradientSeed> seeds, std::size_t layer) const;

  // Re-draws the weights of `start_layer` and every later layer with the
  // training initializer. start_layer == layer_count() is a no-op.
  Model randomized_from(std::size_t start_layer, std::uint64_t seed) const;
  Model randomized_from(std::string_view start_layer, std::uint64_t seed) const;

  // Theoretical receptive field of one unit, clipped to the image.
  PixelBox receptive_field(std::size_t layer, int row, int col) const;

  std::string architecture_tag() const;

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  static constexpr std::size_t kToInput = static_cast<std::size_t>(-1);

  void init_layer(std::size_t i, std::uint64_t seed);
  FeatureMap backward_impl(const ForwardPass& pass, std::span<const GradientSeed> seeds,
                           std::vector<LayerParams>* param_grads, std::size_t stop) const;

  Shape3 input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape3> shapes_;
  std::vector<LayerParams> params_;
};

// FNV-1a over architecture tag and all parameters.
std::string weights_fingerprint(const Model& model);

// ---------------------------------------------------------------------------
// Feature detectors

enum class Reduction { at_position, spatial_mean };

struct FeatureDetector {
  std::string layer;
  std::vector<double> direction;
  std::optional<std::pair<int, int>> position;  // (row, col)
  Reduction reduction = Reduction::spatial_mean;

  static FeatureDetector logit(const Model& model, int index);
  static FeatureDetector channel(const Model& model, std::string_view layer, int channel);
  static FeatureDetector neuron(const Model& model, std::string_view layer, int channel, int row, int col);
};

// Throws ConfigError if the detector does not fit the model.
void validate_detector(const Model& model, const FeatureDetector& det);

// Per-image activations keyed by layer id; non-spatial layers are c x 1 x 1.
struct ActivationRecord {
  std::map<std::string, Image> layers;
  int batch_index = 0;
};

// Captures the requested layers (all layers if empty) for every image.
std::vector<ActivationRecord> forward_capture(const Model& model, std::span<const Image> images,
                                              std::span<const std::string> layers = {});

double feature_value(const ActivationRecord& acts, const FeatureDetector& det);

// Detector value for every batch element of a layer output.
std::vector<double> feature_values(const FeatureMap& acts, const FeatureDetector& det);
// d(sum_n weights[n] * f_v(n)) / d(acts).
FeatureMap feature_gradient(const FeatureMap& acts, const FeatureDetector& det, std::span<const double> weights);

// Pre-softmax logits for a batch of images, one row per image.
std::vector<std::vector<double>> predict_logits(const Model& model, std::span<const Image> images, int batch_size = 64);
double accuracy(const Model& model, std::span<const Image> images, std::span<const int> labels);

}  // namespace accentkit
