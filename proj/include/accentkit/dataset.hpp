#pragma once

#include "accentkit/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace accentkit {

struct Dataset {
  std::vector<Image> images;  // 3x32x32, values in [0,1]
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return images.size(); }
  // Subset of the images with a given label, in dataset order.
  std::vector<std::size_t> indices_of(int label) const;
};

// Offline stand-in for a 10-class 32x32 natural-image set: coloured shapes and
// textures on noisy gradient backgrounds, quantized to 8 bits. Deterministic
// in (count, seed); labels cycle through the classes.
Dataset make_shapes_dataset(int count, std::uint64_t seed);
std::vector<std::string> shapes_class_names();

// CIFAR-10 binary batch layout: per record one label byte followed by the
// 32x32 R, G and B planes. Used both for the real dataset and for cached
// procedural sets.
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& files, std::vector<std::string> class_names = {});
void write_cifar_binary(const Dataset& data, const std::filesystem::path& file);

// Fingerprint of labels and 8-bit pixel content.
std::string dataset_hash(const Dataset& data);

// Loads the train/test split used for the reference model: CIFAR-10 batches
// if `cifar_dir` holds them, the procedural set otherwise.
struct DeskSplit {
  Dataset train;
  Dataset test;
  std::string source;  // "cifar10" or "shapes"
};
DeskSplit load_desk_split(const std::filesystem::path& cifar_dir, int train_count, int test_count, std::uint64_t seed);

}  // namespace accentkit
