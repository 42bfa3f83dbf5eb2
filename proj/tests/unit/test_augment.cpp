#include "accentkit/augment.hpp"
#include "accentkit/error.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace accentkit;

TEST_CASE("TransformSpec validation") {
  TransformSpec ok;
  CHECK_NOTHROW(ok.validate());
  TransformSpec bad;
  bad.crop_min = 0.8;
  bad.crop_max = 0.5;
  try {
    bad.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("crop_min") != std::string::npos);
    CHECK(std::string(e.what()).find("crop_max") != std::string::npos);
  }
  TransformSpec zero;
  zero.crop_min = 0.0;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
  TransformSpec neg;
  neg.gauss_sigma = -1.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  TransformSpec empty;
  empty.batch_size = 0;
  CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("path-experiment defaults") {
  const TransformSpec spec;
  CHECK(spec.crop_min == 0.05);
  CHECK(spec.crop_max == 0.99);
  CHECK(spec.gauss_sigma == 0.02);
  CHECK(spec.uniform_sigma == 0.02);
  CHECK(spec.batch_size == 16);
}

TEST_CASE("full crops without noise are the identity") {
  TransformSpec spec;
  spec.crop_min = spec.crop_max = 1.0;
  spec.gauss_sigma = spec.uniform_sigma = 0.0;
  Rng rng(3);
  const Shape3 shape{3, 16, 16};
  const Image x = testing::random_image(shape, 1);
  for (const auto& d : sample_batch(spec, rng, shape, shape)) {
    CHECK(d.size_fraction == 1.0);
    CHECK(d.top == 0.0);
    CHECK(d.left == 0.0);
    CHECK(apply(d, x) == x);
  }
  CHECK(apply(TransformDraw::identity(shape), x) == x);
}

TEST_CASE("size fractions are uniform on [crop_min, crop_max]") {
  const TransformSpec spec{0.05, 0.99, 0.0, 0.0, 10000};
  Rng rng(12345);
  const Shape3 big{1, 256, 256};
  const auto draws = sample_batch(spec, rng, big, {1, 4, 4});
  double mean = 0.0;
  for (const auto& d : draws) {
    CHECK(d.size_fraction >= spec.crop_min);
    CHECK(d.size_fraction <= spec.crop_max);
    CHECK(d.top >= 0.0);
    CHECK(d.left >= 0.0);
    CHECK(d.top + d.size_fraction <= 1.0 + 1e-15);
    CHECK(d.left + d.size_fraction <= 1.0 + 1e-15);
    mean += d.size_fraction;
  }
  mean /= static_cast<double>(draws.size());
  const double sigma = (spec.crop_max - spec.crop_min) / std::sqrt(12.0) / std::sqrt(10000.0);
  CHECK(std::abs(mean - (spec.crop_min + spec.crop_max) / 2) <= 3 * sigma);
}

TEST_CASE("tiny crops are rejected at sampling time") {
  const TransformSpec spec{0.01, 0.2, 0.0, 0.0, 500};
  Rng rng(7);
  for (const auto& d : sample_batch(spec, rng, {1, 16, 16}, {1, 8, 8})) CHECK(d.size_fraction * 16 >= 2.0);
  const TransformSpec hopeless{0.01, 0.05, 0.0, 0.0, 4};
  CHECK_THROWS_AS(sample_batch(hopeless, rng, {1, 16, 16}, {1, 8, 8}), ConfigError);
}

TEST_CASE("sampling is deterministic in the rng seed") {
  const TransformSpec spec;
  Rng a(99), b(99);
  const auto da = sample_batch(spec, a, {3, 32, 32}, {3, 32, 32});
  const auto db = sample_batch(spec, b, {3, 32, 32}, {3, 32, 32});
  for (std::size_t i = 0; i < da.size(); ++i) {
    CHECK(da[i].size_fraction == db[i].size_fraction);
    CHECK(da[i].gauss == db[i].gauss);
    CHECK(da[i].uniform == db[i].uniform);
  }
}

TEST_CASE("centre crop of a half-black, half-white image") {
  Image x(1, 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int c = 16; c < 32; ++c) x.at(0, y, c) = 1.0;
  TransformDraw d = TransformDraw::identity({1, 32, 32});
  d.size_fraction = 0.5;
  d.top = d.left = 0.25;
  const Image out = apply(d, x);
  double mean = 0.0;
  for (double v : out.values()) mean += v;
  mean /= static_cast<double>(out.size());
  // Source window rows/cols 8..23: half of it is white.
  CHECK(std::abs(mean - 0.5) <= 0.02);
}

TEST_CASE("shared draws cancel the noise") {
  const Shape3 shape{3, 16, 16};
  const TransformSpec spec{0.3, 0.9, 0.02, 0.02, 8};
  Rng rng(5);
  const auto draws = sample_batch(spec, rng, shape, shape);
  const Image x = testing::random_image(shape, 1, 0.2, 0.8);
  const Image y = testing::random_image(shape, 2, 0.2, 0.8);
  for (const auto& d : draws) {
    TransformDraw quiet = d;
    quiet.gauss.clear();
    quiet.uniform.clear();
    const Image nx = apply(d, x), ny = apply(d, y), qx = apply(quiet, x), qy = apply(quiet, y);
    for (std::size_t i = 0; i < nx.size(); ++i)
      CHECK((nx.raw()[i] - ny.raw()[i]) == doctest::Approx(qx.raw()[i] - qy.raw()[i]).epsilon(1e-12));
  }
}

TEST_CASE("no clamping without noise") {
  const Shape3 shape{3, 16, 16};
  const TransformSpec spec{0.1, 1.0, 0.0, 0.0, 16};
  Rng rng(8);
  Image x = testing::random_image(shape, 3);
  x.raw()[0] = 0.0;
  x.raw()[1] = 1.0;
  for (const auto& d : sample_batch(spec, rng, shape, shape)) {
    // Clamping is a no-op, so the gradient of sum(apply) passes everywhere.
    Image grad(shape);
    apply_backward(d, x, Image(shape, 1.0), grad);
    double total = 0.0;
    for (double g : grad.values()) total += g;
    CHECK(total == doctest::Approx(double(shape.size())).epsilon(1e-12));
  }
}

TEST_CASE("apply_backward is the adjoint of apply") {
  const Shape3 src{2, 12, 12}, out{2, 8, 8};
  TransformDraw d = TransformDraw::identity(out);
  d.size_fraction = 0.63;
  d.top = 0.11;
  d.left = 0.2;
  const Image x = testing::random_image(src, 4, 0.1, 0.9);
  const Image w = testing::random_image(out, 5, -1.0, 1.0);
  Image grad(src);
  apply_backward(d, x, w, grad);
  // Linear away from the clamp: <w, apply(x + e)> - <w, apply(x)> = <grad, e>.
  const Image e = testing::random_image(src, 6, -0.01, 0.01);
  Image xe = x;
  for (std::size_t i = 0; i < x.size(); ++i) xe.raw()[i] += e.raw()[i];
  const Image a = apply(d, x), b = apply(d, xe);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) lhs += w.raw()[i] * (b.raw()[i] - a.raw()[i]);
  for (std::size_t i = 0; i < x.size(); ++i) rhs += grad.raw()[i] * e.raw()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}
