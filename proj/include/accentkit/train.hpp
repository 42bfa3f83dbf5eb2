#pragma once

#include "accentkit/dataset.hpp"
#include "accentkit/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace accentkit {

struct TrainingConfig {
  int epochs = 6;
  int batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 7;
  double accuracy_floor = 0.60;
};

// Mirrors the JSON manifest written next to the weights.
struct ModelManifest {
  std::string architecture;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;  // seed of the procedural split
  std::string dataset_source;
  std::string dataset_hash;
  int train_size = 0;
  int test_size = 0;
  int epochs = 0;
  double test_accuracy = 0.0;
  double final_train_loss = 0.0;
  std::string weights_hash;
};

struct TrainedModel {
  Model model;
  ModelManifest manifest;
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

// Trains Model::reference with softmax cross-entropy and Adam. Throws
// TrainingError when test accuracy ends below cfg.accuracy_floor.
TrainedModel train_reference_model(const DeskSplit& data, const TrainingConfig& cfg, std::uint64_t data_seed = 0);

// <dir>/weights.bin + <dir>/manifest.json
void save_model_dir(const TrainedModel& trained, const std::filesystem::path& dir);
TrainedModel load_model_dir(const std::filesystem::path& dir);

std::string file_hash(const std::filesystem::path& file);

// The first `count` images of the model's held-out stream: the CIFAR-10 test
// batch for CIFAR-trained models, procedural shapes otherwise.
Dataset held_out_images(const ModelManifest& manifest, int count, const std::filesystem::path& cifar_dir = {});

}  // namespace accentkit
