#include "accentkit/dataset.hpp"

#include "accentkit/error.hpp"
#include "accentkit/hash.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>

namespace accentkit {
namespace {

constexpr int kSide = 32;
constexpr int kClasses = 10;

using Rgb = std::array<double, 3>;

double quantize(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng), u(rng), u(rng)};
}

double color_distance(const Rgb& a, const Rgb& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

// Coverage test for each class in the shape's local frame; (u, v) are pixel
// coordinates relative to the centre.
struct ShapeParams {
  int label;
  double radius;
  double period;
  std::vector<std::pair<double, double>> dots;
};

bool covered(const ShapeParams& s, double u, double v) {
  const double r = std::hypot(u, v);
  const double half = s.radius;
  const bool in_square = std::abs(u) <= half && std::abs(v) <= half;
  switch (s.label) {
    case 0: return r <= s.radius;                                         // disk
    case 1: return in_square;                                             // square
    case 2: {                                                             // triangle, apex up
      if (v < -half || v > half) return false;
      const double frac = (v + half) / (2.0 * half);
      return std::abs(u) <= frac * half;
    }
    case 3: return r <= s.radius && r >= 0.55 * s.radius;                 // ring
    case 4: return (std::abs(u) <= 0.3 * half && std::abs(v) <= half) ||  // cross
                   (std::abs(v) <= 0.3 * half && std::abs(u) <= half);
    case 5: return in_square && std::fmod(v + 64.0 * s.period, s.period) < s.period / 2;  // horizontal bars
    case 6: return in_square && std::fmod(u + 64.0 * s.period, s.period) < s.period / 2;  // vertical bars
    case 7: return in_square && std::fmod(u + v + 64.0 * s.period, s.period) < s.period / 2;  // diagonal
    case 8: {                                                             // checkerboard
      if (!in_square) return false;
      const int a = static_cast<int>(std::floor((u + 64.0 * s.period) / (s.period / 2)));
      const int b = static_cast<int>(std::floor((v + 64.0 * s.period) / (s.period / 2)));
      return ((a + b) & 1) == 0;
    }
    case 9:                                                               // dots
      for (const auto& [du, dv] : s.dots)
        if (std::hypot(u - du, v - dv) <= 1.6) return true;
      return false;
  }
  return false;
}

Image render(int label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Rgb bg = random_color(rng);
  Rgb fg = random_color(rng);
  while (color_distance(bg, fg) < 0.45) fg = random_color(rng);

  ShapeParams s;
  s.label = label;
  s.radius = 6.0 + 5.0 * u(rng);
  s.period = 3.0 + 3.0 * u(rng);
  const double cy = 11.0 + 10.0 * u(rng);
  const double cx = 11.0 + 10.0 * u(rng);
  if (label == 9) {
    const int count = 5 + static_cast<int>(u(rng) * 5);
    for (int k = 0; k < count; ++k)
      s.dots.emplace_back((2.0 * u(rng) - 1.0) * s.radius, (2.0 * u(rng) - 1.0) * s.radius);
  }
  const double gy = (u(rng) - 0.5) * 0.3;
  const double gx = (u(rng) - 0.5) * 0.3;
  std::normal_distribution<double> noise(0.0, 0.03);

  Image img(3, kSide, kSide);
  constexpr double offsets[2] = {-0.25, 0.25};
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      int hits = 0;
      for (double oy : offsets)
        for (double ox : offsets) hits += covered(s, x + ox - cx, y + oy - cy) ? 1 : 0;
      const double alpha = hits / 4.0;
      const double shade = gy * (y - 15.5) / 16.0 + gx * (x - 15.5) / 16.0;
      for (int c = 0; c < 3; ++c) {
        const double base = bg[static_cast<std::size_t>(c)] + shade;
        img.at(c, y, x) = quantize(alpha * fg[static_cast<std::size_t>(c)] + (1.0 - alpha) * base + noise(rng));
      }
    }
  }
  return img;
}

}  // namespace

std::vector<std::size_t> Dataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(i);
  return out;
}

std::vector<std::string> shapes_class_names() {
  return {"disk", "square", "triangle", "ring", "cross", "hbars", "vbars", "diagonal", "checker", "dots"};
}

Dataset make_shapes_dataset(int count, std::uint64_t seed) {
  if (count < 0) throw ConfigError("dataset size must be non-negative");
  Dataset data;
  data.class_names = shapes_class_names();
  data.images.reserve(static_cast<std::size_t>(count));
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) {
    const int label = i % kClasses;
    data.images.push_back(render(label, rng));
    data.labels.push_back(label);
  }
  return data;
}

Dataset load_cifar_binary(const std::vector<std::filesystem::path>& files, std::vector<std::string> class_names) {
  constexpr std::size_t kPlane = kSide * kSide;
  constexpr std::size_t kRecord = 1 + 3 * kPlane;
  Dataset data;
  data.class_names = class_names.empty() ? std::vector<std::string>{"airplane", "automobile", "bird", "cat", "deer",
                                                                    "dog", "frog", "horse", "ship", "truck"}
                                         : std::move(class_names);
  std::vector<unsigned char> record(kRecord);
  for (const auto& file : files) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError("cannot open dataset file " + file.string());
    while (is.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(kRecord))) {
      Image img(3, kSide, kSide);
      for (std::size_t k = 0; k < 3 * kPlane; ++k) img.raw()[k] = record[1 + k] / 255.0;
      data.labels.push_back(record[0]);
      data.images.push_back(std::move(img));
    }
    if (is.gcount() != 0) throw IoError("truncated record in " + file.string());
  }
  return data;
}

void write_cifar_binary(const Dataset& data, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw IoError("cannot write dataset file " + file.string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Image& img = data.images[i];
    if (img.shape() != Shape3{3, kSide, kSide}) throw ConfigError("CIFAR records must be 3x32x32");
    os.put(static_cast<char>(data.labels[i]));
    for (double v : img.values()) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
}

std::string dataset_hash(const Dataset& data) {
  Fnv1a h;
  for (std::size_t i = 0; i < data.size(); ++i) {
    h.update_pod(static_cast<std::int32_t>(data.labels[i]));
    for (double v : data.images[i].values())
      h.update_pod(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return h.hex();
}

DeskSplit load_desk_split(const std::filesystem::path& cifar_dir, int train_count, int test_count, std::uint64_t seed) {
  DeskSplit split;
  const auto batch = [&](const std::string& name) { return cifar_dir / name; };
  if (!cifar_dir.empty() && std::filesystem::exists(batch("test_batch.bin"))) {
    std::vector<std::filesystem::path> train_files;
    for (int k = 1; k <= 5; ++k) train_files.push_back(batch("data_batch_" + std::to_string(k) + ".bin"));
    split.train = load_cifar_binary(train_files);
    split.test = load_cifar_binary({batch("test_batch.bin")});
    const auto truncate = [](Dataset& d, int n) {
      if (n > 0 && static_cast<std::size_t>(n) < d.size()) {
        d.images.resize(static_cast<std::size_t>(n));
        d.labels.resize(static_cast<std::size_t>(n));
      }
    };
    truncate(split.train, train_count);
    truncate(split.test, test_count);
    split.source = "cifar10";
  } else {
    split.train = make_shapes_dataset(train_count, seed);
    split.test = make_shapes_dataset(test_count, seed ^ 0x5bd1e995ULL);
    split.source = "shapes";
  }
  return split;
}

}  // namespace accentkit
