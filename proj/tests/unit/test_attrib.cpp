#include "accentkit/attrib.hpp"
#include "accentkit/error.hpp"
#include "support.hpp"

#include <doctest.h>

#include <filesystem>

using namespace accentkit;

namespace {

// Independent percentile: sort a copy, then interpolate between closest ranks.
double oracle_percentile(std::vector<double> v, double p) {
  std::stable_sort(v.begin(), v.end());
  const double pos = (v.size() - 1) * (p / 100.0);
  const std::size_t below = static_cast<std::size_t>(pos);
  if (below + 1 >= v.size()) return v.back();
  const double t = pos - static_cast<double>(below);
  return v[below] + t * (v[below + 1] - v[below]);
}

AttributionMap manual_map(std::vector<double> values, int h, int w, std::string tag = "d") {
  AttributionMap m;
  m.values = Image(1, h, w);
  m.values.raw() = std::move(values);
  m.detector = std::move(tag);
  return m;
}

}  // namespace

TEST_CASE("method names") {
  CHECK(parse_attribution_method("grad-x-input") == AttributionMethod::grad_x_input);
  CHECK(parse_attribution_method("activation-map") == AttributionMethod::activation_map);
  CHECK(parse_attribution_method("cam-style") == AttributionMethod::cam_style);
  CHECK(to_string(AttributionMethod::cam_style) == "cam-style");
  CHECK_THROWS_AS(parse_attribution_method("lime"), ConfigError);
}

TEST_CASE("grad-x-input of a zero image is zero") {
  const Model m = Model::reference(3);
  const auto det = FeatureDetector::logit(m, 2);
  const AttributionMap map = attribution_map(m, Image(m.input_shape()), det, AttributionMethod::grad_x_input);
  CHECK(map.values.shape() == Shape3{1, 32, 32});
  CHECK(map.source_layer == "input");
  for (double v : map.values.values()) CHECK(v == 0.0);
}

TEST_CASE("grad-x-input matches a finite-difference recomputation") {
  const Model m = Model::toy(3);
  const auto det = FeatureDetector::logit(m, 0);
  const Image x = testing::smooth_image(m.input_shape(), 4);
  const AttributionMap map = attribution_map(m, x, det, AttributionMethod::grad_x_input);
  const auto f = [&](const Image& img) {
    const std::vector<Image> b = {img};
    return feature_value(forward_capture(m, b)[0], det);
  };
  for (int y = 0; y < 8; y += 3)
    for (int xx = 0; xx < 8; xx += 3) {
      double sum = 0.0;
      for (int c = 0; c < 3; ++c) {
        Image up = x, down = x;
        up.at(c, y, xx) += 1e-6;
        down.at(c, y, xx) -= 1e-6;
        sum += (f(up) - f(down)) / 2e-6 * x.at(c, y, xx);
      }
      CHECK(map.values.at(0, y, xx) == doctest::Approx(std::max(0.0, sum)).epsilon(1e-5).scale(1e-6));
    }
}

TEST_CASE("activation-map on a one-hot direction is the raw channel") {
  const Model m = Model::reference(4);
  const Image x = testing::random_image(m.input_shape(), 1);
  const auto det = FeatureDetector::channel(m, "conv2", 7);
  const AttributionMap map = attribution_map(m, x, det, AttributionMethod::activation_map);
  const std::vector<Image> b = {x};
  const Image a = forward_capture(m, b)[0].layers.at("conv2");
  REQUIRE(map.values.shape() == Shape3{1, 16, 16});
  CHECK(map.source_layer == "conv2");
  for (int y = 0; y < 16; ++y)
    for (int xx = 0; xx < 16; ++xx) CHECK(map.values.at(0, y, xx) == a.at(7, y, xx));
}

TEST_CASE("cam-style on a hand-set two-channel model") {
  Model m({1, 2, 2}, {{"conv", LayerKind::conv_relu, 2}, {"gap", LayerKind::global_avg_pool, 0},
                      {"out", LayerKind::linear, 1}},
          1);
  // Centre taps only: a_c = relu(w_c * x + b_c).
  auto& conv = m.params(0);
  conv.weight.setZero();
  conv.weight(0, 4) = 2.0;
  conv.weight(1, 4) = -1.0;
  conv.bias << 0.1, 0.5;
  auto& head = m.params(2);
  head.weight << 0.5, -2.0;
  head.bias << 0.0;
  Image x(1, 2, 2);
  x.raw() = {0.1, 0.4, 0.7, 0.2};
  const auto det = FeatureDetector::logit(m, 0);
  const AttributionMap map = attribution_map(m, x, det, AttributionMethod::cam_style);
  CHECK(map.source_layer == "conv");
  // d out / d a_c(y,x) = head_c / 4 at every position, so alpha_c = head_c / 4.
  const double alpha0 = 0.5 / 4, alpha1 = -2.0 / 4;
  for (int i = 0; i < 4; ++i) {
    const double a0 = std::max(0.0, 2.0 * x.raw()[i] + 0.1);
    const double a1 = std::max(0.0, -1.0 * x.raw()[i] + 0.5);
    CHECK(map.values.raw()[i] == doctest::Approx(std::max(0.0, alpha0 * a0 + alpha1 * a1)).epsilon(1e-12));
  }
}

TEST_CASE("percentiles and the worked normalization example") {
  std::vector<double> v(10);
  for (int i = 0; i < 10; ++i) v[i] = i;
  CHECK(percentile_sorted(v, 20) == doctest::Approx(1.8));
  CHECK(percentile_sorted(v, 80) == doctest::Approx(7.2));
  const double lo = percentile_sorted(v, 20), hi = percentile_sorted(v, 80);
  CHECK(normalize_value(5.0, lo, hi) == doctest::Approx(0.5926).epsilon(1e-4));
  CHECK(normalize_value(-3.0, lo, hi) == 0.0);
  CHECK(normalize_value(12.0, lo, hi) == 1.0);

  const AttributionMap pooled = manual_map(v, 2, 5);
  const AttributionStats stats = pool_maps(std::vector{pooled});
  const Image mask = normalize_map(manual_map({5.0, -1.0, 100.0, 1.8}, 2, 2), stats, 20, 80);
  CHECK(mask.raw()[0] == doctest::Approx(3.2 / 5.4));
  CHECK(mask.raw()[1] == 0.0);
  CHECK(mask.raw()[2] == 1.0);
  CHECK(mask.raw()[3] == 0.0);
}

TEST_CASE("normalize_map matches a sort-and-interpolate oracle") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(1, 400);
  std::uniform_real_distribution<double> p(0.0, 100.0);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> values(static_cast<std::size_t>(len(rng)) + 1);
    for (double& x : values) x = n(rng);
    double p1 = p(rng), p2 = p(rng);
    if (p1 > p2) std::swap(p1, p2);
    if (p1 == p2) continue;
    const AttributionStats stats = pool_maps(std::vector{manual_map(values, 1, int(values.size()))});
    for (double q : {p1, p2}) CHECK(stats.percentile(q) == oracle_percentile(values, q));
    const double lo = oracle_percentile(values, p1), hi = oracle_percentile(values, p2);
    if (!(hi > lo)) continue;
    const Image mask = normalize_map(manual_map(values, 1, int(values.size())), stats, p1, p2);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double u = values[i];
      const double expect = u <= lo ? 0.0 : u >= hi ? 1.0 : (u - lo) / (hi - lo);
      CHECK(mask.raw()[i] == expect);
    }
  }
}

TEST_CASE("normalize_map errors") {
  const AttributionStats stats = pool_maps(std::vector{manual_map({1, 2, 3, 4}, 1, 4)});
  const AttributionMap map = manual_map({1, 2}, 1, 2);
  CHECK_THROWS_AS(normalize_map(map, stats, 60, 40), ConfigError);
  CHECK_THROWS_AS(normalize_map(map, stats, 50, 50), ConfigError);
  CHECK_THROWS_AS(normalize_map(map, stats, -1, 40), ConfigError);
  CHECK_THROWS_AS(normalize_map(manual_map({1}, 1, 1, "other"), stats, 10, 90), ConfigError);
  const AttributionStats flat = pool_maps(std::vector{manual_map({2, 2, 2, 2}, 1, 4)});
  CHECK_THROWS_AS(normalize_map(map, flat, 10, 90), DegenerateError);
  CHECK_THROWS_AS(pool_maps(std::span<const AttributionMap>{}), InsufficientDataError);
}

TEST_CASE("pooling: single image, merge, order invariance, monotonicity") {
  const Model m = Model::reference(5);
  const auto det = FeatureDetector::channel(m, "conv3", 3);
  std::vector<Image> sample;
  for (int i = 0; i < 4; ++i) sample.push_back(testing::smooth_image(m.input_shape(), 50 + i));
  const std::span<const Image> all(sample);
  const auto one = collect_stats(m, det, AttributionMethod::activation_map, all.first(1));
  CHECK(one.sorted.size() == 8u * 8u);
  CHECK(std::is_sorted(one.sorted.begin(), one.sorted.end()));

  const auto a = collect_stats(m, det, AttributionMethod::grad_x_input, all.first(2));
  const auto b = collect_stats(m, det, AttributionMethod::grad_x_input, all.last(2));
  const auto ab = collect_stats(m, det, AttributionMethod::grad_x_input, all);
  std::vector<double> merged;
  std::merge(a.sorted.begin(), a.sorted.end(), b.sorted.begin(), b.sorted.end(), std::back_inserter(merged));
  CHECK(merged == ab.sorted);

  std::vector<Image> reversed(sample.rbegin(), sample.rend());
  CHECK(collect_stats(m, det, AttributionMethod::grad_x_input, reversed).sorted == ab.sorted);

  const double lo = ab.percentile(50), hi = ab.percentile(98);
  double prev = -1.0;
  for (double u = lo - 1.0; u <= hi + 1.0; u += (hi - lo + 2.0) / 97.0) {
    const double v = normalize_value(u, lo, hi);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("collective masks saturate where per-image min-max does not") {
  std::vector<double> pool(100);
  for (int i = 0; i < 100; ++i) pool[i] = i / 100.0;
  const AttributionStats stats = pool_maps(std::vector{manual_map(pool, 10, 10)});
  const AttributionMap strong = manual_map({5.0, 6.0, 7.0, 9.0}, 2, 2);
  const Image mask = normalize_map(strong, stats, 50, 98);
  for (double v : mask.values()) CHECK(v == 1.0);
  const double mn = 5.0, mx = 9.0;
  CHECK((6.0 - mn) / (mx - mn) != (9.0 - mn) / (mx - mn));

  const AttributionMap weak = manual_map({-1.0, -2.0, 0.1, 0.3}, 2, 2);
  const Image off = normalize_map(weak, stats, 50, 98);
  for (double v : off.values()) CHECK(v == 0.0);
  const Image seed = testing::random_image({3, 2, 2}, 1), accent = testing::random_image({3, 2, 2}, 2);
  CHECK(compose(seed, accent, off) == seed);
}

TEST_CASE("compose") {
  const Image seed = testing::random_image({3, 8, 8}, 3), accent = testing::random_image({3, 8, 8}, 4);
  CHECK(compose(seed, accent, Image(1, 8, 8, 1.0)) == accent);
  CHECK(compose(seed, accent, Image(1, 8, 8, 0.0)) == seed);
  const Image half = compose(seed, accent, Image(1, 4, 4, 0.5));
  for (std::size_t i = 0; i < seed.size(); ++i)
    CHECK(half.raw()[i] == doctest::Approx(0.5 * seed.raw()[i] + 0.5 * accent.raw()[i]).epsilon(1e-15));
  CHECK_THROWS_AS(compose(seed, Image(3, 4, 4), Image(1, 8, 8)), ConfigError);
  CHECK_THROWS_AS(compose(seed, accent, Image(2, 8, 8)), ConfigError);
  const Image up = upsample_mask(Image(1, 4, 4, 0.25), 16, 16);
  CHECK(up.shape() == Shape3{1, 16, 16});
  for (double v : up.values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("stats persistence and cache") {
  const Model m = Model::toy(9);
  const auto det = FeatureDetector::logit(m, 1);
  std::vector<Image> sample;
  for (int i = 0; i < 3; ++i) sample.push_back(testing::smooth_image(m.input_shape(), i));
  const auto dir = std::filesystem::temp_directory_path() / "accentkit_stats_cache";
  std::filesystem::remove_all(dir);
  bool hit = true;
  const auto first = cached_stats(dir, m, det, AttributionMethod::grad_x_input, sample, &hit);
  CHECK_FALSE(hit);
  const auto second = cached_stats(dir, m, det, AttributionMethod::grad_x_input, sample, &hit);
  CHECK(hit);
  CHECK(second.sorted == first.sorted);
  CHECK(second.detector == first.detector);
  CHECK(second.sample_hash == first.sample_hash);
  CHECK(stats_cache_key(m, det, AttributionMethod::grad_x_input, sample) !=
        stats_cache_key(m, det, AttributionMethod::cam_style, sample));
  std::filesystem::remove_all(dir);
}
