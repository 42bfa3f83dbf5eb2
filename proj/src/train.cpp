#include "accentkit/train.hpp"

#include "accentkit/error.hpp"
#include "accentkit/hash.hpp"
#include "accentkit/optim.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace accentkit {
namespace {

// Softmax cross-entropy averaged over the batch; writes d(loss)/d(logits).
double cross_entropy(const FeatureMap& logits, std::span<const int> labels, FeatureMap& grad) {
  grad = FeatureMap(logits.channels(), logits.batch, 1, 1);
  double loss = 0.0;
  const double inv_batch = 1.0 / logits.batch;
  for (int n = 0; n < logits.batch; ++n) {
    const Eigen::VectorXd z = logits.data.col(n);
    const double shift = z.maxCoeff();
    const Eigen::VectorXd e = (z.array() - shift).exp();
    const double total = e.sum();
    const int y = labels[static_cast<std::size_t>(n)];
    loss -= (z(y) - shift) - std::log(total);
    grad.data.col(n) = e / total * inv_batch;
    grad.data(y, n) -= inv_batch;
  }
  return loss * inv_batch;
}

}  // namespace

TrainedModel train_reference_model(const DeskSplit& data, const TrainingConfig& cfg, std::uint64_t data_seed) {
  if (data.train.size() == 0 || data.test.size() == 0) throw ConfigError("training needs non-empty train and test sets");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
  const int classes = static_cast<int>(data.train.class_names.size());
  Model model = Model::reference(cfg.seed, classes);

  std::vector<Adam> optimizers;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const LayerParams& p = model.params(i);
    optimizers.emplace_back(static_cast<std::size_t>(p.weight.size()), AdamOptions{cfg.learning_rate});
    optimizers.emplace_back(static_cast<std::size_t>(p.bias.size()), AdamOptions{cfg.learning_rate});
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  double last_loss = 0.0;
  std::vector<double> history;
  const std::size_t last_layer = model.layer_count() - 1;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Image> images;
      std::vector<int> labels;
      for (std::size_t k = start; k < stop; ++k) {
        images.push_back(data.train.images[order[k]]);
        labels.push_back(data.train.labels[order[k]]);
      }
      const ForwardPass pass = model.forward(to_feature_map(images), last_layer, /*keep_columns=*/true);
      GradientSeed seed{last_layer, {}};
      epoch_loss += cross_entropy(pass.outputs.back(), labels, seed.grad);
      ++batches;
      std::vector<LayerParams> grads;
      model.backward(pass, std::span(&seed, 1), &grads);
      for (std::size_t i = 0; i < model.layer_count(); ++i) {
        if (!model.has_params(i)) continue;
        LayerParams& p = model.params(i);
        optimizers[2 * i].step(std::span(p.weight.data(), static_cast<std::size_t>(p.weight.size())),
                               std::span<const double>(grads[i].weight.data(), static_cast<std::size_t>(grads[i].weight.size())));
        optimizers[2 * i + 1].step(std::span(p.bias.data(), static_cast<std::size_t>(p.bias.size())),
                                   std::span<const double>(grads[i].bias.data(), static_cast<std::size_t>(grads[i].bias.size())));
      }
    }
    last_loss = epoch_loss / batches;
    history.push_back(last_loss);
    if (!std::isfinite(last_loss)) throw TrainingError("training diverged", 0.0);
  }

  TrainedModel out{std::move(model), {}, std::move(history)};
  ModelManifest& m = out.manifest;
  m.architecture = out.model.architecture_tag();
  m.seed = cfg.seed;
  m.data_seed = data_seed;
  m.dataset_source = data.source;
  Fnv1a h;
  h.update(dataset_hash(data.train));
  h.update(dataset_hash(data.test));
  m.dataset_hash = h.hex();
  m.train_size = static_cast<int>(data.train.size());
  m.test_size = static_cast<int>(data.test.size());
  m.epochs = cfg.epochs;
  m.final_train_loss = last_loss;
  m.test_accuracy = accuracy(out.model, data.test.images, data.test.labels);
  if (m.test_accuracy < cfg.accuracy_floor)
    throw TrainingError("test accuracy " + std::to_string(m.test_accuracy) + " is below the floor " +
                            std::to_string(cfg.accuracy_floor),
                        m.test_accuracy);
  return out;
}

std::string file_hash(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot read " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

void save_model_dir(const TrainedModel& trained, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  trained.model.save(dir / "weights.bin");
  const ModelManifest& m = trained.manifest;
  const nlohmann::json j = {{"architecture", m.architecture},
                            {"seed", m.seed},
                            {"data_seed", m.data_seed},
                            {"dataset_source", m.dataset_source},
                            {"dataset_hash", m.dataset_hash},
                            {"train_size", m.train_size},
                            {"test_size", m.test_size},
                            {"epochs", m.epochs},
                            {"test_accuracy", m.test_accuracy},
                            {"final_train_loss", m.final_train_loss},
                            {"weights_hash", file_hash(dir / "weights.bin")}};
  std::ofstream os(dir / "manifest.json");
  os << j.dump(2) << '\n';
  if (!os) throw IoError("cannot write model manifest in " + dir.string());
}

TrainedModel load_model_dir(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("no model manifest in " + dir.string());
  const auto j = nlohmann::json::parse(is);
  TrainedModel out{Model::load(dir / "weights.bin"), {}, {}};
  ModelManifest& m = out.manifest;
  m.architecture = j.at("architecture").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.data_seed = j.at("data_seed").get<std::uint64_t>();
  m.dataset_source = j.at("dataset_source").get<std::string>();
  m.dataset_hash = j.at("dataset_hash").get<std::string>();
  m.train_size = j.at("train_size").get<int>();
  m.test_size = j.at("test_size").get<int>();
  m.epochs = j.at("epochs").get<int>();
  m.test_accuracy = j.at("test_accuracy").get<double>();
  m.final_train_loss = j.at("final_train_loss").get<double>();
  m.weights_hash = j.at("weights_hash").get<std::string>();
  if (m.architecture != out.model.architecture_tag())
    throw IoError("model manifest architecture does not match weights in " + dir.string());
  if (file_hash(dir / "weights.bin") != m.weights_hash)
    throw IoError("weights hash mismatch in " + dir.string());
  return out;
}

Dataset held_out_images(const ModelManifest& manifest, int count, const std::filesystem::path& cifar_dir) {
  if (manifest.dataset_source == "cifar10") {
    if (cifar_dir.empty() || !std::filesystem::exists(cifar_dir / "test_batch.bin"))
      throw IoError("model was trained on CIFAR-10 but no test batch was found under '" + cifar_dir.string() + "'");
    Dataset test = load_cifar_binary({cifar_dir / "test_batch.bin"});
    if (static_cast<std::size_t>(count) < test.size()) {
      test.images.resize(static_cast<std::size_t>(count));
      test.labels.resize(static_cast<std::size_t>(count));
    }
    return test;
  }
  return load_desk_split({}, 0, count, manifest.data_seed).test;
}

}  // namespace accentkit
