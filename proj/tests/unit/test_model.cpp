#include "accentkit/error.hpp"
#include "accentkit/eval.hpp"
#include "accentkit/model.hpp"
#include "accentkit/run.hpp"
#include "accentkit/train.hpp"
#include "support.hpp"

#include <doctest.h>

#include <filesystem>

using namespace accentkit;

namespace {

Model stacked_convs() {
  return Model({1, 12, 12}, {{"c1", LayerKind::conv_relu, 2}, {"c2", LayerKind::conv_relu, 2}}, 3);
}

}  // namespace

TEST_CASE("forward_capture shapes, determinism and unknown layers") {
  const Model m = Model::reference(11);
  const std::vector<Image> zero = {Image(m.input_shape())};
  const auto rec = forward_capture(m, zero);
  REQUIRE(rec.size() == 1);
  for (std::size_t i = 0; i < m.layer_count(); ++i) {
    const Image& a = rec[0].layers.at(m.layer(i).name);
    CHECK(a.shape() == m.layer_shape(i));
    for (double v : a.values()) CHECK(std::isfinite(v));
  }

  const Image x = testing::random_image(m.input_shape(), 5);
  const std::vector<Image> twins = {x, x};
  const auto r2 = forward_capture(m, twins);
  for (const auto& [name, a] : r2[0].layers) CHECK(a == r2[1].layers.at(name));
  const auto again = forward_capture(m, twins);
  for (const auto& [name, a] : r2[0].layers) CHECK(a == again[0].layers.at(name));

  const std::vector<std::string> bad = {"conv9"};
  CHECK_THROWS_AS(forward_capture(m, zero, bad), ConfigError);
}

TEST_CASE("feature_value basics and dense oracle") {
  const Model m = Model::reference(2);
  const std::vector<Image> imgs = {testing::random_image(m.input_shape(), 9)};
  const auto rec = forward_capture(m, imgs);
  const Image& a = rec[0].layers.at("conv2");

  const auto neuron = FeatureDetector::neuron(m, "conv2", 5, 3, 7);
  CHECK(feature_value(rec[0], neuron) == a.at(5, 3, 7));

  FeatureDetector zero = FeatureDetector::channel(m, "conv2", 0);
  std::fill(zero.direction.begin(), zero.direction.end(), 0.0);
  CHECK(feature_value(rec[0], zero) == 0.0);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureDetector det;
  det.layer = "conv2";
  det.direction.resize(32);
  for (double& v : det.direction) v = n(rng);
  double oracle = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      for (int c = 0; c < 32; ++c) oracle += det.direction[c] * a.at(c, y, x);
  oracle /= a.height() * a.width();
  CHECK(feature_value(rec[0], det) == doctest::Approx(oracle).epsilon(1e-6));

  det.direction.resize(31);
  CHECK_THROWS_AS(feature_value(rec[0], det), ConfigError);
  CHECK_THROWS_AS(validate_detector(m, det), ConfigError);
  CHECK_THROWS_AS(FeatureDetector::neuron(m, "conv2", 0, 16, 0), ConfigError);
}

TEST_CASE("feature_value is linear in the direction") {
  const Model m = Model::reference(2);
  const std::vector<Image> imgs = {testing::random_image(m.input_shape(), 10)};
  const auto rec = forward_capture(m, imgs);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const char* layer : {"conv1", "conv3", "logits"}) {
    const int c = m.layer_shape(m.layer_index(layer)).channels;
    FeatureDetector u, w, mix;
    u.layer = w.layer = mix.layer = layer;
    for (int k = 0; k < c; ++k) {
      u.direction.push_back(n(rng));
      w.direction.push_back(n(rng));
      mix.direction.push_back(2.5 * u.direction.back() - 0.75 * w.direction.back());
    }
    const double expect = 2.5 * feature_value(rec[0], u) - 0.75 * feature_value(rec[0], w);
    CHECK(feature_value(rec[0], mix) == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("randomized_from") {
  const Model m = Model::reference(21);
  const Model r = m.randomized_from("conv3", 99);
  for (std::size_t i = 0; i < m.layer_count(); ++i) {
    if (!m.has_params(i)) continue;
    const bool before = i < m.layer_index("conv3");
    CHECK((r.params(i).weight == m.params(i).weight) == before);
  }
  const Model r2 = m.randomized_from("conv3", 99);
  for (std::size_t i = 0; i < m.layer_count(); ++i)
    if (m.has_params(i)) CHECK(r.params(i).weight == r2.params(i).weight);

  const Model same = m.randomized_from(m.layer_count(), 5);
  CHECK(weights_fingerprint(same) == weights_fingerprint(m));
  CHECK_THROWS_AS(m.randomized_from("nope", 1), ConfigError);
}

TEST_CASE("full randomization decorrelates the bundled model's logits") {
  const TrainedModel trained = load_model_dir(default_model_dir());
  const Model& m = trained.model;
  const Model r = m.randomized_from(std::size_t{0}, 77);
  const std::vector<Image> imgs = held_out_images(trained.manifest, 100).images;
  const auto a = predict_logits(m, imgs);
  const auto b = predict_logits(r, imgs);
  std::vector<double> fa, fb;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k) {
      fa.push_back(a[i][k]);
      fb.push_back(b[i][k]);
    }
  const auto rho = pearson(fa, fb);
  REQUIRE(rho);
  CHECK(std::abs(*rho) < 0.2);
}

TEST_CASE("receptive_field arithmetic") {
  const Model one({1, 12, 12}, {{"c1", LayerKind::conv_relu, 1}}, 1);
  CHECK(one.receptive_field(0, 5, 5) == PixelBox{4, 4, 3, 3});

  const Model two = stacked_convs();
  // Stacked k x k stride-1 layers: size = n(k - 1) + 1.
  CHECK(two.receptive_field(1, 5, 5) == PixelBox{3, 3, 2 * 2 + 1, 2 * 2 + 1});

  const PixelBox corner = two.receptive_field(1, 0, 0);
  CHECK(corner == PixelBox{0, 0, 3, 3});

  const Model ref = Model::reference(1);
  const PixelBox deep = ref.receptive_field(ref.layer_index("conv4"), 0, 0);
  CHECK(deep.top == 0);
  CHECK(deep.left == 0);
  CHECK_THROWS_AS(ref.receptive_field(ref.layer_index("gap"), 0, 0), ConfigError);
}

TEST_CASE("receptive_field covers every input that influences the unit") {
  const Model ref = Model::reference(4);
  const std::size_t layer = ref.layer_index("conv3");
  const Image x = testing::random_image(ref.input_shape(), 3);
  const std::vector<Image> one = {x};
  const ForwardPass pass = ref.forward(to_feature_map(one), layer);
  const int row = 3, col = 4;
  FeatureMap seed(pass.outputs[layer].channels(), 1, 8, 8);
  for (int c = 0; c < seed.channels(); ++c) seed.at(c, 0, row, col) = 1.0;
  const std::vector<GradientSeed> seeds = {{layer, seed}};
  const FeatureMap g = ref.backward(pass, seeds);
  const PixelBox box = ref.receptive_field(layer, row, col);
  for (int y = 0; y < 32; ++y)
    for (int xx = 0; xx < 32; ++xx) {
      const bool inside = y >= box.top && y < box.top + box.height && xx >= box.left && xx < box.left + box.width;
      double mag = 0.0;
      for (int c = 0; c < 3; ++c) mag += std::abs(g.at(c, 0, y, xx));
      if (!inside) CHECK(mag == 0.0);
    }
}

TEST_CASE("model save/load round trip") {
  const Model m = Model::reference(31);
  const auto path = std::filesystem::temp_directory_path() / "accentkit_model_rt.bin";
  m.save(path);
  const Model back = Model::load(path);
  CHECK(weights_fingerprint(back) == weights_fingerprint(m));
  CHECK(back.architecture_tag() == m.architecture_tag());
  std::filesystem::remove(path);
}
