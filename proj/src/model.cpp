#include "accentkit/model.hpp"

#include "accentkit/error.hpp"
#include "accentkit/hash.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace accentkit {
namespace {

constexpr char kWeightsMagic[4] = {'A', 'K', 'W', 'T'};
constexpr std::uint32_t kWeightsVersion = 1;

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv_relu: return "conv_relu";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& name) {
  if (name == "conv_relu") return LayerKind::conv_relu;
  if (name == "max_pool") return LayerKind::max_pool;
  if (name == "global_avg_pool") return LayerKind::global_avg_pool;
  if (name == "linear") return LayerKind::linear;
  throw ConfigError("unknown layer kind '" + name + "'");
}

// Columns of the result hold the 3x3 neighbourhood of each output position,
// ordered (ky, kx, channel) so every block is a contiguous channel vector.
Eigen::MatrixXd im2col(const FeatureMap& in) {
  const Eigen::Index c = in.channels();
  Eigen::MatrixXd col(9 * c, in.data.cols());
  const double* src = in.data.data();
  double* dst = col.data();
  for (int n = 0; n < in.batch; ++n) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double* out = dst + in.column(n, y, x) * 9 * c;
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx, out += c) {
            const int sx = x + kx - 1;
            if (sy < 0 || sy >= in.height || sx < 0 || sx >= in.width) {
              std::fill(out, out + c, 0.0);
            } else {
              std::memcpy(out, src + in.column(n, sy, sx) * c, sizeof(double) * c);
            }
          }
        }
      }
    }
  }
  return col;
}

void col2im(const Eigen::MatrixXd& col, FeatureMap& out) {
  const Eigen::Index c = out.channels();
  out.data.setZero();
  double* dst = out.data.data();
  const double* src = col.data();
  for (int n = 0; n < out.batch; ++n) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        const double* in = src + out.column(n, y, x) * 9 * c;
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx, in += c) {
            const int sx = x + kx - 1;
            if (sy < 0 || sy >= out.height || sx < 0 || sx >= out.width) continue;
            double* target = dst + out.column(n, sy, sx) * c;
            for (Eigen::Index k = 0; k < c; ++k) target[k] += in[k];
          }
        }
      }
    }
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError("truncated weights file");
  return value;
}

}  // namespace

Model::Model(Shape3 input_shape, std::vector<LayerSpec> layers, std::uint64_t init_seed)
    : input_shape_(input_shape), layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("model needs at least one layer");
  Shape3 shape = input_shape_;
  bool spatial = true;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    for (std::size_t j = 0; j < i; ++j)
      if (layers_[j].name == spec.name) throw ConfigError("duplicate layer id '" + spec.name + "'");
    switch (spec.kind) {
      case LayerKind::conv_relu:
        if (!spatial) throw ConfigError("conv layer '" + spec.name + "' after a non-spatial layer");
        shape.channels = spec.out_channels;
        break;
      case LayerKind::max_pool:
        if (!spatial) throw ConfigError("max_pool '" + spec.name + "' after a non-spatial layer");
        if (shape.height % 2 != 0 || shape.width % 2 != 0)
          throw ConfigError("max_pool '" + spec.name + "' needs even spatial dims");
        shape.height /= 2;
        shape.width /= 2;
        break;
      case LayerKind::global_avg_pool:
        shape.height = shape.width = 1;
        spatial = false;
        break;
      case LayerKind::linear:
        if (spatial) throw ConfigError("linear layer '" + spec.name + "' needs a non-spatial input");
        shape.channels = spec.out_channels;
        break;
    }
    if (shape.channels <= 0) throw ConfigError("layer '" + spec.name + "' has no channels");
    shapes_.push_back(shape);
  }
  params_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) init_layer(i, mix_seed(init_seed, i));
}

Model Model::reference(std::uint64_t init_seed, int classes) {
  return Model({3, 32, 32},
               {{"conv1", LayerKind::conv_relu, 16},
                {"pool1", LayerKind::max_pool, 0},
                {"conv2", LayerKind::conv_relu, 32},
                {"pool2", LayerKind::max_pool, 0},
                {"conv3", LayerKind::conv_relu, 64},
                {"conv4", LayerKind::conv_relu, 64},
                {"gap", LayerKind::global_avg_pool, 0},
                {"logits", LayerKind::linear, classes}},
               init_seed);
}

Model Model::toy(std::uint64_t init_seed) {
  return Model({3, 8, 8},
               {{"conv1", LayerKind::conv_relu, 4},
                {"pool1", LayerKind::max_pool, 0},
                {"conv2", LayerKind::conv_relu, 6},
                {"gap", LayerKind::global_avg_pool, 0},
                {"logits", LayerKind::linear, 3}},
               init_seed);
}

void Model::init_layer(std::size_t i, std::uint64_t seed) {
  const LayerSpec& spec = layers_[i];
  if (!has_params(i)) return;
  const int in_channels = i == 0 ? input_shape_.channels : shapes_[i - 1].channels;
  const int fan_in = spec.kind == LayerKind::conv_relu ? 9 * in_channels : in_channels;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  LayerParams& p = params_[i];
  p.weight.resize(spec.out_channels, fan_in);
  for (Eigen::Index k = 0; k < p.weight.size(); ++k) p.weight.data()[k] = normal(rng);
  p.bias = Eigen::VectorXd::Zero(spec.out_channels);
}

std::vector<std::string> Model::layer_names() const {
  std::vector<std::string> names;
  names.reserve(layers_.size());
  for (const auto& l : layers_) names.push_back(l.name);
  return names;
}

std::size_t Model::layer_index(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == name) return i;
  throw ConfigError("unknown layer id '" + std::string(name) + "'");
}

bool Model::is_spatial(std::size_t i) const {
  const LayerKind k = layers_.at(i).kind;
  return k == LayerKind::conv_relu || k == LayerKind::max_pool;
}

bool Model::has_params(std::size_t i) const {
  const LayerKind k = layers_.at(i).kind;
  return k == LayerKind::conv_relu || k == LayerKind::linear;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.weight.size() + p.bias.size();
  return n;
}

ForwardPass Model::forward(const FeatureMap& input, std::size_t last_layer, bool keep_columns) const {
  if (last_layer >= layers_.size()) throw ConfigError("forward: layer index out of range");
  if (input.channels() != input_shape_.channels || input.height != input_shape_.height ||
      input.width != input_shape_.width)
    throw ConfigError("forward: input does not match the model input shape");

  ForwardPass pass;
  pass.input = input;
  pass.outputs.reserve(last_layer + 1);
  pass.argmax.resize(last_layer + 1);
  pass.columns.resize(last_layer + 1);

  for (std::size_t i = 0; i <= last_layer; ++i) {
    const FeatureMap& in = i == 0 ? pass.input : pass.outputs.back();
    const Shape3& shape = shapes_[i];
    FeatureMap out(shape.channels, in.batch, shape.height, shape.width);
    switch (layers_[i].kind) {
      case LayerKind::conv_relu: {
        Eigen::MatrixXd col = im2col(in);
        out.data.noalias() = params_[i].weight * col;
        out.data.colwise() += params_[i].bias;
        out.data = out.data.cwiseMax(0.0);
        if (keep_columns) pass.columns[i] = std::move(col);
        break;
      }
      case LayerKind::max_pool: {
        auto& arg = pass.argmax[i];
        arg.resize(static_cast<std::size_t>(out.data.size()));
        const Eigen::Index c = out.channels();
        for (int n = 0; n < in.batch; ++n)
          for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
              const Eigen::Index dst = out.column(n, y, x);
              const Eigen::Index src[4] = {in.column(n, 2 * y, 2 * x), in.column(n, 2 * y, 2 * x + 1),
                                           in.column(n, 2 * y + 1, 2 * x), in.column(n, 2 * y + 1, 2 * x + 1)};
              for (Eigen::Index ch = 0; ch < c; ++ch) {
                Eigen::Index best = src[0];
                double value = in.data(ch, best);
                for (int k = 1; k < 4; ++k) {
                  if (in.data(ch, src[k]) > value) {
                    best = src[k];
                    value = in.data(ch, best);
                  }
                }
                out.data(ch, dst) = value;
                arg[static_cast<std::size_t>(dst * c + ch)] = best;
              }
            }
        break;
      }
      case LayerKind::global_avg_pool: {
        const int positions = in.positions();
        for (int n = 0; n < in.batch; ++n)
          out.data.col(n) = in.data.middleCols(static_cast<Eigen::Index>(n) * positions, positions).rowwise().mean();
        break;
      }
      case LayerKind::linear: {
        out.data.noalias() = params_[i].weight * in.data;
        out.data.colwise() += params_[i].bias;
        break;
      }
    }
    pass.outputs.push_back(std::move(out));
  }
  return pass;
}

FeatureMap Model::backward(const ForwardPass& pass, std::span<const GradientSeed> seeds,
                           std::vector<LayerParams>* param_grads) const {
  return backward_impl(pass, seeds, param_grads, kToInput);
}

FeatureMap Model::output_gradient(const ForwardPass& pass, std::span<const GradientSeed> seeds,
                                  std::size_t layer) const {
  if (layer >= pass.outputs.size()) throw ConfigError("output_gradient: layer beyond the forward pass");
  return backward_impl(pass, seeds, nullptr, layer);
}

FeatureMap Model::backward_impl(const ForwardPass& pass, std::span<const GradientSeed> seeds,
                                std::vector<LayerParams>* param_grads, std::size_t stop) const {
  const std::size_t count = pass.outputs.size();
  if (count == 0) throw ConfigError("backward: empty forward pass");
  std::size_t top = 0;
  for (const auto& s : seeds) {
    if (s.layer >= count) throw ConfigError("backward: gradient seed beyond the forward pass");
    top = std::max(top, s.layer);
  }
  if (stop != kToInput && stop > top) {
    const FeatureMap& out = pass.outputs[stop];
    return FeatureMap(out.channels(), out.batch, out.height, out.width);
  }
  if (param_grads) {
    param_grads->assign(layers_.size(), LayerParams{});
  }

  FeatureMap grad;
  bool have_grad = false;
  for (std::size_t step = 0; step <= top; ++step) {
    const std::size_t i = top - step;
    for (const auto& s : seeds) {
      if (s.layer != i) continue;
      if (s.grad.data.rows() != pass.outputs[i].data.rows() || s.grad.data.cols() != pass.outputs[i].data.cols())
        throw ConfigError("backward: gradient seed shape mismatch at layer '" + layers_[i].name + "'");
      if (have_grad) {
        grad.data += s.grad.data;
      } else {
        grad = s.grad;
        have_grad = true;
      }
    }
    if (i == stop) {
      if (have_grad) return grad;
      const FeatureMap& out = pass.outputs[i];
      return FeatureMap(out.channels(), out.batch, out.height, out.width);
    }
    const FeatureMap& in = i == 0 ? pass.input : pass.outputs[i - 1];
    FeatureMap grad_in(in.channels(), in.batch, in.height, in.width);
    if (!have_grad) {
      grad = std::move(grad_in);
      continue;
    }
    const FeatureMap& out = pass.outputs[i];
    switch (layers_[i].kind) {
      case LayerKind::conv_relu: {
        Eigen::MatrixXd dz = (out.data.array() > 0.0).select(grad.data, 0.0);
        Eigen::MatrixXd dcol = params_[i].weight.transpose() * dz;
        col2im(dcol, grad_in);
        if (param_grads) {
          const Eigen::MatrixXd col = pass.columns[i].size() ? pass.columns[i] : im2col(in);
          (*param_grads)[i].weight.noalias() = dz * col.transpose();
          (*param_grads)[i].bias = dz.rowwise().sum();
        }
        break;
      }
      case LayerKind::max_pool: {
        const auto& arg = pass.argmax[i];
        const Eigen::Index c = out.channels();
        for (Eigen::Index col = 0; col < out.data.cols(); ++col)
          for (Eigen::Index ch = 0; ch < c; ++ch)
            grad_in.data(ch, arg[static_cast<std::size_t>(col * c + ch)]) += grad.data(ch, col);
        break;
      }
      case LayerKind::global_avg_pool: {
        const int positions = in.positions();
        const double scale = 1.0 / positions;
        for (int n = 0; n < in.batch; ++n)
          grad_in.data.middleCols(static_cast<Eigen::Index>(n) * positions, positions).colwise() =
              grad.data.col(n) * scale;
        break;
      }
      case LayerKind::linear: {
        grad_in.data.noalias() = params_[i].weight.transpose() * grad.data;
        if (param_grads) {
          (*param_grads)[i].weight.noalias() = grad.data * in.data.transpose();
          (*param_grads)[i].bias = grad.data.rowwise().sum();
        }
        break;
      }
    }
    grad = std::move(grad_in);
  }
  return grad;
}

Model Model::randomized_from(std::size_t start_layer, std::uint64_t seed) const {
  if (start_layer > layers_.size()) throw ConfigError("randomized_from: layer index out of range");
  Model copy = *this;
  for (std::size_t i = start_layer; i < layers_.size(); ++i) copy.init_layer(i, mix_seed(seed, i));
  return copy;
}

Model Model::randomized_from(std::string_view start_layer, std::uint64_t seed) const {
  return randomized_from(layer_index(start_layer), seed);
}

PixelBox Model::receptive_field(std::size_t layer, int row, int col) const {
  if (layer >= layers_.size()) throw ConfigError("receptive_field: layer index out of range");
  if (!is_spatial(layer)) throw ConfigError("receptive_field: layer '" + layers_[layer].name + "' is not spatial");
  const Shape3& shape = shapes_[layer];
  if (row < 0 || row >= shape.height || col < 0 || col >= shape.width)
    throw ConfigError("receptive_field: position outside the layer grid");
  double jump = 1.0, size = 1.0, start = 0.0;
  for (std::size_t i = 0; i <= layer; ++i) {
    if (layers_[i].kind == LayerKind::conv_relu) {
      size += 2.0 * jump;  // k = 3, pad = 1 keeps the centre
    } else {
      size += jump;  // k = 2, stride 2
      start += 0.5 * jump;
      jump *= 2.0;
    }
  }
  const auto clip = [](double centre, double half, int limit) {
    const int lo = std::max(0, static_cast<int>(std::lround(centre - half)));
    const int hi = std::min(limit - 1, static_cast<int>(std::lround(centre + half)));
    return std::pair{lo, hi - lo + 1};
  };
  const double half = (size - 1.0) / 2.0;
  const auto [top, height] = clip(start + row * jump, half, input_shape_.height);
  const auto [left, width] = clip(start + col * jump, half, input_shape_.width);
  return {top, left, height, width};
}

std::string Model::architecture_tag() const {
  std::ostringstream os;
  os << input_shape_.channels << 'x' << input_shape_.height << 'x' << input_shape_.width;
  for (const auto& l : layers_) {
    os << '|' << l.name << ':' << kind_name(l.kind);
    if (l.out_channels) os << l.out_channels;
  }
  return os.str();
}

void Model::save(const std::filesystem::path& path) const {
  nlohmann::json arch;
  arch["input"] = {input_shape_.channels, input_shape_.height, input_shape_.width};
  for (const auto& l : layers_)
    arch["layers"].push_back({{"name", l.name}, {"kind", kind_name(l.kind)}, {"channels", l.out_channels}});
  const std::string header = arch.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write weights to " + path.string());
  os.write(kWeightsMagic, 4);
  write_pod(os, kWeightsVersion);
  write_pod(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!has_params(i)) continue;
    const LayerParams& p = params_[i];
    write_pod(os, static_cast<std::uint64_t>(p.weight.rows()));
    write_pod(os, static_cast<std::uint64_t>(p.weight.cols()));
    os.write(reinterpret_cast<const char*>(p.weight.data()), static_cast<std::streamsize>(sizeof(double) * p.weight.size()));
    os.write(reinterpret_cast<const char*>(p.bias.data()), static_cast<std::streamsize>(sizeof(double) * p.bias.size()));
  }
  if (!os) throw IoError("failed writing weights to " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights file " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kWeightsMagic, 4) != 0) throw IoError(path.string() + " is not a weights file");
  if (read_pod<std::uint32_t>(is) != kWeightsVersion) throw IoError("unsupported weights version in " + path.string());
  std::string header(read_pod<std::uint32_t>(is), '\0');
  is.read(header.data(), static_cast<std::streamsize>(header.size()));
  const auto arch = nlohmann::json::parse(header);
  std::vector<LayerSpec> specs;
  for (const auto& l : arch.at("layers"))
    specs.push_back({l.at("name").get<std::string>(), kind_from_name(l.at("kind").get<std::string>()),
                     l.at("channels").get<int>()});
  const auto in = arch.at("input");
  Model model({in[0].get<int>(), in[1].get<int>(), in[2].get<int>()}, std::move(specs), 0);
  for (std::size_t i = 0; i < model.layers_.size(); ++i) {
    if (!model.has_params(i)) continue;
    LayerParams& p = model.params_[i];
    const auto rows = read_pod<std::uint64_t>(is);
    const auto cols = read_pod<std::uint64_t>(is);
    if (rows != static_cast<std::uint64_t>(p.weight.rows()) || cols != static_cast<std::uint64_t>(p.weight.cols()))
      throw IoError("weights shape mismatch in " + path.string());
    is.read(reinterpret_cast<char*>(p.weight.data()), static_cast<std::streamsize>(sizeof(double) * p.weight.size()));
    is.read(reinterpret_cast<char*>(p.bias.data()), static_cast<std::streamsize>(sizeof(double) * p.bias.size()));
    if (!is) throw IoError("truncated weights file " + path.string());
  }
  return model;
}

std::string weights_fingerprint(const Model& model) {
  Fnv1a h;
  h.update(model.architecture_tag());
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (!model.has_params(i)) continue;
    const LayerParams& p = model.params(i);
    h.update(std::span<const double>(p.weight.data(), static_cast<std::size_t>(p.weight.size())));
    h.update(std::span<const double>(p.bias.data(), static_cast<std::size_t>(p.bias.size())));
  }
  return h.hex();
}

// ---------------------------------------------------------------------------

FeatureDetector FeatureDetector::logit(const Model& model, int index) {
  const std::size_t last = model.layer_count() - 1;
  return channel(model, model.layer(last).name, index);
}

FeatureDetector FeatureDetector::channel(const Model& model, std::string_view layer, int channel) {
  const std::size_t i = model.layer_index(layer);
  const int channels = model.layer_shape(i).channels;
  if (channel < 0 || channel >= channels) throw ConfigError("channel index out of range for layer '" + std::string(layer) + "'");
  FeatureDetector det;
  det.layer = std::string(layer);
  det.direction.assign(static_cast<std::size_t>(channels), 0.0);
  det.direction[static_cast<std::size_t>(channel)] = 1.0;
  det.reduction = Reduction::spatial_mean;
  return det;
}

FeatureDetector FeatureDetector::neuron(const Model& model, std::string_view layer, int channel_index, int row, int col) {
  FeatureDetector det = channel(model, layer, channel_index);
  det.position = std::pair{row, col};
  det.reduction = Reduction::at_position;
  validate_detector(model, det);
  return det;
}

void validate_detector(const Model& model, const FeatureDetector& det) {
  const std::size_t i = model.layer_index(det.layer);
  const Shape3& shape = model.layer_shape(i);
  if (det.direction.size() != static_cast<std::size_t>(shape.channels))
    throw ConfigError("detector direction has length " + std::to_string(det.direction.size()) + " but layer '" +
                      det.layer + "' has " + std::to_string(shape.channels) + " channels");
  if (det.reduction == Reduction::at_position) {
    if (!det.position) throw ConfigError("at-position detector without a position");
    const auto [r, c] = *det.position;
    if (r < 0 || r >= shape.height || c < 0 || c >= shape.width)
      throw ConfigError("detector position outside the grid of layer '" + det.layer + "'");
  }
}

std::vector<ActivationRecord> forward_capture(const Model& model, std::span<const Image> images,
                                              std::span<const std::string> layers) {
  std::vector<std::size_t> wanted;
  if (layers.empty()) {
    for (std::size_t i = 0; i < model.layer_count(); ++i) wanted.push_back(i);
  } else {
    for (const auto& name : layers) wanted.push_back(model.layer_index(name));
  }
  const std::size_t last = *std::max_element(wanted.begin(), wanted.end());
  for (const auto& img : images) {
    if (img.shape() != model.input_shape()) throw ConfigError("forward_capture: image shape does not match the model");
    for (double v : img.values())
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("forward_capture: pixel values must lie in [0,1]");
  }

  std::vector<ActivationRecord> records(images.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t stop = std::min(images.size(), start + kChunk);
    const ForwardPass pass = model.forward(to_feature_map(images.subspan(start, stop - start)), last);
    for (std::size_t i : wanted) {
      const FeatureMap& out = pass.outputs[i];
      if (!out.data.allFinite()) throw NumericError("non-finite activation in layer '" + model.layer(i).name + "'");
      for (std::size_t n = start; n < stop; ++n) {
        records[n].batch_index = static_cast<int>(n);
        records[n].layers[model.layer(i).name] = from_feature_map(out, static_cast<int>(n - start));
      }
    }
  }
  return records;
}

double feature_value(const ActivationRecord& acts, const FeatureDetector& det) {
  const auto it = acts.layers.find(det.layer);
  if (it == acts.layers.end()) throw ConfigError("activation record has no layer '" + det.layer + "'");
  const Image& a = it->second;
  if (det.direction.size() != static_cast<std::size_t>(a.channels()))
    throw ConfigError("detector direction length does not match layer '" + det.layer + "'");
  const auto dot_at = [&](int y, int x) {
    double s = 0.0;
    for (int c = 0; c < a.channels(); ++c) s += a.at(c, y, x) * det.direction[static_cast<std::size_t>(c)];
    return s;
  };
  if (det.reduction == Reduction::at_position) {
    const auto [r, c] = det.position.value_or(std::pair{0, 0});
    if (r < 0 || r >= a.height() || c < 0 || c >= a.width()) throw ConfigError("detector position outside the layer grid");
    return dot_at(r, c);
  }
  double sum = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) sum += dot_at(y, x);
  return sum / (a.height() * a.width());
}

std::vector<double> feature_values(const FeatureMap& acts, const FeatureDetector& det) {
  if (det.direction.size() != static_cast<std::size_t>(acts.channels()))
    throw ConfigError("detector direction length does not match layer '" + det.layer + "'");
  const Eigen::Map<const Eigen::VectorXd> v(det.direction.data(), static_cast<Eigen::Index>(det.direction.size()));
  const Eigen::RowVectorXd proj = v.transpose() * acts.data;
  std::vector<double> values(static_cast<std::size_t>(acts.batch));
  const int positions = acts.positions();
  for (int n = 0; n < acts.batch; ++n) {
    if (det.reduction == Reduction::at_position) {
      const auto [r, c] = det.position.value_or(std::pair{0, 0});
      values[static_cast<std::size_t>(n)] = proj(acts.column(n, r, c));
    } else {
      values[static_cast<std::size_t>(n)] = proj.segment(static_cast<Eigen::Index>(n) * positions, positions).mean();
    }
  }
  return values;
}

FeatureMap feature_gradient(const FeatureMap& acts, const FeatureDetector& det, std::span<const double> weights) {
  FeatureMap grad(acts.channels(), acts.batch, acts.height, acts.width);
  const Eigen::Map<const Eigen::VectorXd> v(det.direction.data(), static_cast<Eigen::Index>(det.direction.size()));
  const int positions = acts.positions();
  for (int n = 0; n < acts.batch; ++n) {
    const double w = weights[static_cast<std::size_t>(n)];
    if (det.reduction == Reduction::at_position) {
      const auto [r, c] = det.position.value_or(std::pair{0, 0});
      grad.data.col(acts.column(n, r, c)) = v * w;
    } else {
      grad.data.middleCols(static_cast<Eigen::Index>(n) * positions, positions).colwise() = v * (w / positions);
    }
  }
  return grad;
}

std::vector<std::vector<double>> predict_logits(const Model& model, std::span<const Image> images, int batch_size) {
  std::vector<std::vector<double>> logits;
  logits.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    const ForwardPass pass = model.forward(to_feature_map(images.subspan(start, stop - start)));
    const FeatureMap& out = pass.outputs.back();
    for (int n = 0; n < out.batch; ++n) {
      const Eigen::VectorXd col = out.data.col(n);
      logits.emplace_back(col.data(), col.data() + col.size());
    }
  }
  return logits;
}

double accuracy(const Model& model, std::span<const Image> images, std::span<const int> labels) {
  if (images.size() != labels.size() || images.empty()) throw ConfigError("accuracy: bad label count");
  const auto logits = predict_logits(model, images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto best = std::max_element(logits[i].begin(), logits[i].end()) - logits[i].begin();
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

}  // namespace accentkit
