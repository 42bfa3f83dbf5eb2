#include "accentkit/error.hpp"
#include "accentkit/param.hpp"
#include "support.hpp"

#include <doctest.h>

#include <complex>
#include <filesystem>
#include <numbers>

using namespace accentkit;

namespace {

constexpr ParamKind kKinds[] = {ParamKind::pixel, ParamKind::fourier, ParamKind::maco_phase};

Image clamp_seed(Image x) {
  for (double& v : x.values()) v = std::clamp(v, kSeedClamp, 1.0 - kSeedClamp);
  return x;
}

// Naive real-input inverse, straight from the definition.
double naive_inverse(const std::vector<std::complex<double>>& z, int h, int w, int m, int n) {
  const int bins = w / 2 + 1;
  double sum = 0.0;
  for (int u = 0; u < h; ++u)
    for (int k = 0; k < bins; ++k) {
      const double ck = (k == 0 || (w % 2 == 0 && k == w / 2)) ? 1.0 : 2.0;
      const double angle = 2.0 * std::numbers::pi * (double(u) * m / h + double(k) * n / w);
      sum += ck * (z[u * bins + k] * std::complex<double>(std::cos(angle), std::sin(angle))).real();
    }
  return sum / std::sqrt(double(h) * w);
}

std::complex<double> naive_forward(const double* x, int h, int w, int u, int k) {
  std::complex<double> sum = 0.0;
  for (int m = 0; m < h; ++m)
    for (int n = 0; n < w; ++n) {
      const double angle = -2.0 * std::numbers::pi * (double(u) * m / h + double(k) * n / w);
      sum += x[m * w + n] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
  return sum / std::sqrt(double(h) * w);
}

}  // namespace

TEST_CASE("squash and unsquash") {
  CHECK(squash(0.0) == 0.5);
  CHECK(unsquash(0.5) == 0.0);
  CHECK(squash(unsquash(0.3)) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(squash(unsquash(0.0)) == doctest::Approx(kSeedClamp).epsilon(1e-9));
  CHECK(squash(unsquash(1.0)) == doctest::Approx(1.0 - kSeedClamp).epsilon(1e-9));
  CHECK(parse_param_kind("maco-phase") == ParamKind::maco_phase);
  CHECK(to_string(ParamKind::fourier) == "fourier");
  CHECK_THROWS_AS(parse_param_kind("wavelet"), ConfigError);
}

TEST_CASE("RealDft2 matches the naive transform") {
  for (auto [h, w] : {std::pair{8, 8}, std::pair{5, 7}, std::pair{6, 4}}) {
    const RealDft2 dft(h, w);
    const Image x = testing::random_image({1, h, w}, 17 + h * w, -1.0, 1.0);
    const RealDft2::RowMatrix plane = Eigen::Map<const RealDft2::RowMatrix>(x.raw().data(), h, w);
    const auto z = dft.forward(plane);
    for (int u = 0; u < h; ++u)
      for (int k = 0; k < dft.bins(); ++k) CHECK(std::abs(z(u, k) - naive_forward(x.raw().data(), h, w, u, k)) < 1e-12);
    const auto back = dft.inverse(z);
    for (int m = 0; m < h; ++m)
      for (int n = 0; n < w; ++n) CHECK(back(m, n) == doctest::Approx(plane(m, n)).epsilon(1e-12));
  }
}

TEST_CASE("init_from_image round trip for every kind") {
  for (ParamKind kind : kKinds) {
    CAPTURE(to_string(kind));
    const Image gray({3, 8, 8}, 0.5);
    const Image g = decode(init_from_image(kind, gray));
    CHECK(testing::max_abs_diff(g, gray) <= 1e-6);

    for (int i = 0; i < 10; ++i) {
      const Image x = i % 2 ? testing::random_image({3, 32, 32}, 100 + i) : testing::smooth_image({3, 32, 32}, 100 + i);
      const Image d = decode(init_from_image(kind, x));
      CHECK(testing::max_abs_diff(d, clamp_seed(x)) <= 1e-4);
      for (double v : d.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
    // Saturated seeds come back at the clamp.
    Image extremes(1, 6, 6);
    for (std::size_t i = 0; i < extremes.size(); ++i) extremes.raw()[i] = i % 2 ? 1.0 : 0.0;
    CHECK(testing::max_abs_diff(decode(init_from_image(kind, extremes)), clamp_seed(extremes)) <= 1e-4);
  }
  CHECK_THROWS_AS(init_from_image(ParamKind::fourier, Image(0, 4, 4)), ConfigError);
  CHECK_THROWS_AS(init_from_image(ParamKind::pixel, Image(1, 4, 4, 1.5)), ConfigError);
}

TEST_CASE("decode special states") {
  ParamState px = init_from_image(ParamKind::pixel, testing::random_image({3, 8, 8}, 1));
  std::fill(px.values().begin(), px.values().end(), 0.0);
  const Image half = decode(px);
  for (double v : half.values()) CHECK(v == 0.5);

  ParamState f = init_from_image(ParamKind::fourier, testing::random_image({3, 8, 8}, 2));
  std::fill(f.values().begin(), f.values().end(), 0.0);
  const std::size_t spec = 8 * 5;
  for (int c = 0; c < 3; ++c) f.values()[2 * spec * c] = 0.7 * (c + 1);
  const Image d = decode(f);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) CHECK(d.at(c, y, x) == doctest::Approx(d.at(c, 0, 0)).epsilon(1e-13));
}

TEST_CASE("fourier decode matches a naive DFT sum") {
  const int h = 8, w = 8, bins = 5;
  ParamState f = init_from_image(ParamKind::fourier, testing::random_image({2, h, w}, 3));
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : f.values()) v = n(rng);
  const auto weights = fourier_weights(h, w);
  const Image pre = decode_logits(f);
  for (int c = 0; c < 2; ++c) {
    std::vector<std::complex<double>> z(h * bins);
    for (int i = 0; i < h * bins; ++i)
      z[i] = std::complex<double>(f.values()[2 * (c * h * bins + i)], f.values()[2 * (c * h * bins + i) + 1]) * weights[i];
    for (int m = 0; m < h; ++m)
      for (int nn = 0; nn < w; ++nn) CHECK(std::abs(pre.at(c, m, nn) - naive_inverse(z, h, w, m, nn)) <= 1e-5);
  }
}

TEST_CASE("fourier_weights shape") {
  const int h = 8, w = 8, bins = 5;
  const auto wt = fourier_weights(h, w);
  REQUIRE(wt.size() == std::size_t(h * bins));
  const double mx = *std::max_element(wt.begin(), wt.end());
  const double mn = *std::min_element(wt.begin(), wt.end());
  CHECK(wt[0] == mx);
  CHECK(wt[(h / 2) * bins + w / 2] == mn);
  // Exhaustive over all 64 full-spectrum bins: larger radius never gets a larger weight.
  const auto radius = [&](int u, int k) {
    const double fy = double(std::min(u, h - u)) / h, fx = double(std::min(k, w - k)) / w;
    return std::hypot(fy, fx);
  };
  const auto weight_full = [&](int u, int k) {
    if (k < bins) return wt[u * bins + k];
    return wt[((h - u) % h) * bins + (w - k)];
  };
  for (int u1 = 0; u1 < h; ++u1)
    for (int k1 = 0; k1 < w; ++k1)
      for (int u2 = 0; u2 < h; ++u2)
        for (int k2 = 0; k2 < w; ++k2)
          if (radius(u1, k1) < radius(u2, k2)) CHECK(weight_full(u1, k1) >= weight_full(u2, k2));
}

TEST_CASE("maco-phase keeps the magnitude spectrum") {
  const Image x = testing::smooth_image({3, 8, 8}, 12);
  ParamState s = init_from_image(ParamKind::maco_phase, x);
  const RealDft2& dft = *s.dft();
  const std::size_t spec = 8 * 5;
  // r equals the seed's own spectrum magnitude.
  const Image logits = decode_logits(init_from_image(ParamKind::pixel, x));
  for (int c = 0; c < 3; ++c) {
    const auto z = dft.forward(Eigen::Map<const RealDft2::RowMatrix>(logits.raw().data() + c * 64, 8, 8));
    for (int i = 0; i < 40; ++i) {
      const int u = i / 5, k = i % 5;
      const bool edge = k == 0 || k == 4;
      // Edge columns are conjugate-symmetric in u; both halves share one magnitude.
      const int src = edge && u > 4 ? 8 - u : u;
      const bool self_conjugate = edge && (u == 0 || u == 4);
      CAPTURE(i);
      CHECK(s.magnitude()[c * spec + i] == (self_conjugate ? std::abs(z(u, k).real()) : std::abs(z(src, k))));
    }
  }

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int step = 0; step < 100; ++step) {
    for (double& v : s.values()) v += n(rng);
    if (step % 20 != 19) continue;
    const Image pre = decode_logits(s);
    for (int c = 0; c < 3; ++c) {
      const auto z = dft.forward(Eigen::Map<const RealDft2::RowMatrix>(pre.raw().data() + c * 64, 8, 8));
      for (int i = 0; i < 40; ++i) {
        const double r = s.magnitude()[c * spec + i];
        CHECK(std::abs(std::abs(z(i / 5, i % 5)) - r) <= 1e-5 * std::max(r, 1e-12) + 1e-12);
      }
    }
  }
}

TEST_CASE("loss_gradient contract") {
  const Image x = testing::random_image({3, 8, 8}, 44);
  for (ParamKind kind : kKinds) {
    CAPTURE(to_string(kind));
    const ParamState s = init_from_image(kind, x);
    const auto constant = loss_gradient(s, [](const Image& img, Image& grad) {
      grad = Image(img.shape());
      return 3.0;
    });
    for (double g : constant.grad) CHECK(g == 0.0);
  }

  const ParamState px = init_from_image(ParamKind::pixel, x);
  const auto sum = loss_gradient(px, [](const Image& img, Image& grad) {
    grad = Image(img.shape(), 1.0);
    double total = 0.0;
    for (double v : img.values()) total += v;
    return total;
  });
  for (std::size_t i = 0; i < px.values().size(); ++i) {
    const double s = squash(px.values()[i]);
    CHECK(sum.grad[i] == doctest::Approx(s * (1.0 - s)).epsilon(1e-12));
  }

  ParamState saturated = px;
  saturated.values()[0] = 1e4;
  const auto sat = loss_gradient(saturated, [](const Image& img, Image& grad) {
    grad = Image(img.shape(), 1.0);
    return img.values()[0];
  });
  CHECK(sat.grad[0] == 0.0);
  CHECK_FALSE(sat.warnings.empty());
}

TEST_CASE("loss_gradient matches central differences for every kind") {
  const Image x = testing::smooth_image({2, 8, 8}, 5);
  const Image target = testing::random_image({2, 8, 8}, 6);
  const ImageObjective objective = [&](const Image& img, Image& grad) {
    grad = Image(img.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double d = img.raw()[i] - target.raw()[i];
      total += d * d * (1.0 + 0.1 * double(i % 7));
      grad.raw()[i] = 2.0 * d * (1.0 + 0.1 * double(i % 7));
    }
    return total;
  };
  for (ParamKind kind : kKinds) {
    CAPTURE(to_string(kind));
    ParamState s = init_from_image(kind, x);
    const auto g = loss_gradient(s, objective);
    Image unused;
    for (std::size_t i = 0; i < s.values().size(); i += 3) {
      const double keep = s.values()[i];
      const double h = 1e-4;
      s.values()[i] = keep + h;
      const double up = objective(decode(s), unused);
      s.values()[i] = keep - h;
      const double down = objective(decode(s), unused);
      s.values()[i] = keep;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - g.grad[i]) <= 1e-3 * std::max(std::abs(fd), 1e-3));
    }
  }
}

TEST_CASE("inert imaginary parts of self-conjugate bins get exactly zero gradient") {
  const Image x = testing::smooth_image({2, 8, 6}, 8);
  const ParamState s = init_from_image(ParamKind::fourier, x);
  const ImageObjective objective = [](const Image& img, Image& grad) {
    grad = Image(img.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
      total += img.raw()[i] * double(i % 5);
      grad.raw()[i] = double(i % 5);
    }
    return total;
  };
  const auto g = loss_gradient(s, objective);
  const int bins = 4, spec = 8 * bins;
  for (int c = 0; c < 2; ++c)
    for (int u : {0, 4})
      for (int k : {0, 3}) {
        const std::size_t re = 2 * std::size_t(c * spec + u * bins + k);
        CHECK(g.grad[re + 1] == 0.0);
        CHECK(g.grad[re] != 0.0);
      }
}

TEST_CASE("param state save/load") {
  const auto dir = std::filesystem::temp_directory_path() / "accentkit_param_rt";
  for (ParamKind kind : kKinds) {
    const ParamState s = init_from_image(kind, testing::smooth_image({3, 8, 8}, 9));
    save_param_state(s, dir, 42);
    const ParamState back = load_param_state(dir);
    CHECK(back.kind() == kind);
    CHECK(back.values() == s.values());
    CHECK(decode(back) == decode(s));
  }
  std::filesystem::remove_all(dir);
}
