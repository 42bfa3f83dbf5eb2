#include "accentkit/accent.hpp"
#include "accentkit/attrib.hpp"
#include "accentkit/eval.hpp"
#include "accentkit/run.hpp"
#include "accentkit/train.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

using namespace accentkit;
namespace fs = std::filesystem;

namespace {

struct Bundle {
  TrainedModel trained = load_model_dir(default_model_dir());
  Dataset test = held_out_images(trained.manifest, 2000);
};

const Bundle& bundle() {
  static const Bundle b;
  return b;
}

const Model& model() { return bundle().trained.model; }

std::vector<int> top2(const Image& image) {
  const auto logits = predict_logits(model(), std::span(&image, 1)).front();
  std::vector<int> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + 2, idx.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  return {idx[0], idx[1]};
}

AccentConfig pinned(int logit) {
  std::ifstream in(default_model_dir() / "accent_defaults.json");
  AccentConfig cfg = accent_config_from_json(nlohmann::json::parse(in).at("accent"));
  cfg.detector = FeatureDetector::logit(model(), logit);
  return cfg;
}

double activation(const Image& image, const FeatureDetector& det) {
  return feature_value(forward_capture(model(), std::span(&image, 1), std::vector{det.layer}).front(), det);
}

double pixel_distance(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.raw().size(); ++i) s += (a.raw()[i] - b.raw()[i]) * (a.raw()[i] - b.raw()[i]);
  return std::sqrt(s);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("held-out accuracy matches the manifest fixture") {
  const Dataset& test = bundle().test;
  const double acc = accuracy(model(), test.images, test.labels);
  CHECK(acc >= bundle().trained.manifest.test_accuracy);
  CHECK(acc >= 0.60);
  CHECK(file_hash(default_model_dir() / "weights.bin") == bundle().trained.manifest.weights_hash);
}

TEST_CASE("training is deterministic and the smoke config serializes") {
  const DeskSplit split = load_desk_split({}, 200, 50, 3);
  TrainingConfig cfg;
  cfg.epochs = 1;
  cfg.accuracy_floor = 0.0;
  const fs::path root = fs::temp_directory_path() / "accentkit-train-determinism";
  fs::remove_all(root);
  save_model_dir(train_reference_model(split, cfg, 3), root / "a");
  save_model_dir(train_reference_model(split, cfg, 3), root / "b");
  for (const char* f : {"weights.bin", "manifest.json"}) {
    REQUIRE(fs::exists(root / "a" / f));
    CHECK(slurp(root / "a" / f) == slurp(root / "b" / f));
  }
  CHECK(load_model_dir(root / "a").manifest.train_size == 200);
  fs::remove_all(root);
}

TEST_CASE("accuracy does not recover as randomization reaches earlier layers") {
  const Dataset& test = bundle().test;
  const auto names = model().layer_names();
  double previous = accuracy(model(), test.images, test.labels);
  for (auto it = names.rbegin(); it != names.rend(); ++it) {
    const double acc = accuracy(model().randomized_from(*it, 1234), test.images, test.labels);
    CAPTURE(*it);
    CHECK(acc <= previous);
    previous = acc;
  }
}

TEST_CASE("unregularized accentuation raises the logit in at least 95 of 100 runs") {
  int raised = 0, runs = 0;
  for (std::size_t i = 0; runs < 100; ++i) {
    const Image& x = bundle().test.images[i];
    for (int logit : top2(x)) {
      AccentConfig cfg = pinned(logit);
      cfg.lambda = 0.0;
      const AccentResult r = run_accentuation(model(), x, cfg);
      ++runs;
      if (!r.aborted && activation(r.image, cfg.detector) > activation(x, cfg.detector)) ++raised;
    }
  }
  MESSAGE(raised << "/" << runs);
  CHECK(raised >= 95);
}

TEST_CASE("reg-layer distance is non-increasing over a decade-spaced sweep") {
  const std::vector<double> lambdas = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  for (std::size_t i : {0, 1, 2}) {
    const Image& x = bundle().test.images[i];
    AccentConfig cfg = pinned(top2(x).front());
    std::vector<double> d;
    for (double lam : lambdas) {
      cfg.lambda = lam;
      d.push_back(reg_distance(model(), x, run_accentuation(model(), x, cfg).image, cfg.reg_layer));
    }
    int inversions = 0;
    for (std::size_t k = 1; k < d.size(); ++k)
      if (d[k] > d[k - 1]) ++inversions;
    CAPTURE(i);
    CHECK(inversions <= 1);
    const DistanceBounds b{d.back(), d.front()};
    CHECK(normalize_distance(d.front(), b) == 1.0);
    CHECK(normalize_distance(d.back(), b) == 0.0);
  }
}

TEST_CASE("the pinned lambda transfers to other images of the same class") {
  const AccentConfig cfg = pinned(0);
  const Dataset& test = bundle().test;
  int in_band = 0, tried = 0;
  for (std::size_t i = 1; i < test.size() && tried < 20; ++i) {
    if (test.labels[i] != 0) continue;
    const Image& x = test.images[i];
    const double n = normalized_reg_distance(model(), x, cfg, run_accentuation(model(), x, cfg));
    ++tried;
    if (n >= 0.15 && n <= 0.85) ++in_band;
  }
  MESSAGE(in_band << "/" << tried << " in [0.15, 0.85]");
  CHECK(in_band * 5 >= tried * 4);
}

TEST_CASE("a tenfold learning rate moves further from the seed") {
  int further = 0, pairs = 0;
  for (std::size_t i = 0; pairs < 20; ++i) {
    const Image& x = bundle().test.images[i];
    for (int logit : top2(x)) {
      AccentConfig slow = pinned(logit);
      slow.adam.lr = 0.05;
      AccentConfig fast = slow;
      fast.adam.lr = 0.5;
      const double d_slow = pixel_distance(run_accentuation(model(), x, slow).image, x);
      const double d_fast = pixel_distance(run_accentuation(model(), x, fast).image, x);
      ++pairs;
      if (d_fast > d_slow) ++further;
    }
  }
  MESSAGE(further << "/" << pairs);
  CHECK(further * 5 >= pairs * 4);
}

TEST_CASE("moderate-lambda accentuations are supernatural on most layers") {
  const auto cohort = select_cohort(model(), bundle().test, 5);
  std::vector<std::vector<Image>> accents(cohort.size());
  for (std::size_t c = 0; c < cohort.size(); ++c) {
    const AccentConfig cfg = pinned(static_cast<int>(c));
    for (const Image& x : cohort[c]) accents[c].push_back(run_accentuation(model(), x, cfg).image);
  }
  const PathReport report = classwise_path_report(model(), cohort, accents, "pinned");
  int nonneg = 0, defined = 0;
  for (const auto& d : path_delta(report)) {
    if (!d) continue;
    ++defined;
    if (*d >= 0.0) ++nonneg;
  }
  MESSAGE(nonneg << "/" << defined << " layers with delta >= 0");
  CHECK(nonneg * 2 > defined);
}

TEST_CASE("deep-only randomization with lambda .1 still yields every depth") {
  const Image& x = bundle().test.images[0];
  AccentConfig cfg = pinned(top2(x).front());
  cfg.lambda = 0.1;
  cfg.steps = 20;
  const std::vector<FeatureDetector> dets = {cfg.detector};
  const std::vector<std::string> schedule = {"logits", "conv4"};
  RandomizationOptions opts;
  opts.floor_reruns = 2;
  const RandomizationTable t = cascading_randomization_check(model(), x, dets, schedule, cfg, opts);
  REQUIRE(t.rows.size() == 3);
  for (int depth = 0; depth < 3; ++depth) {
    CHECK(t.rows[depth].depth == depth);
    CHECK(std::isfinite(t.rows[depth].pixel_l2));
  }
}

TEST_CASE("pooled stats over 50 images match an independent re-sort") {
  const auto det = FeatureDetector::logit(model(), 3);
  const std::span<const Image> sample(bundle().test.images.data(), 50);
  const auto maps = attribution_maps(model(), sample, det, AttributionMethod::grad_x_input);
  std::vector<double> all;
  for (const auto& m : maps) all.insert(all.end(), m.values.raw().begin(), m.values.raw().end());
  const AttributionStats stats = pool_maps(maps);
  std::sort(all.begin(), all.end());
  REQUIRE(stats.sorted.size() == all.size());
  for (double p : {0.0, 1.0, 25.0, 50.0, 90.0, 98.0, 99.9, 100.0}) {
    const double pos = static_cast<double>(all.size() - 1) * p / 100.0;
    const auto lo = static_cast<std::size_t>(pos);
    const double expect = lo + 1 < all.size() ? all[lo] + (pos - lo) * (all[lo + 1] - all[lo]) : all.back();
    CHECK(stats.percentile(p) == expect);
  }
}

TEST_CASE("stripe ordering on the first post-activation layer") {
  const StripeVerdict v = stripe_test(model(), 0.4, 0.6, "conv1");
  CHECK(v.passed());
  CHECK(v.pixel.stripe_a == doctest::Approx(v.pixel.a_b / std::sqrt(2.0)));
}
