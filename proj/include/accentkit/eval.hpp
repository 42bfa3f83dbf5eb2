#pragma once

#include "accentkit/accent.hpp"
#include "accentkit/dataset.hpp"
#include "accentkit/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace accentkit {

// Per-layer values; nullopt marks an undefined correlation (zero variance).
using LayerValues = std::vector<std::optional<double>>;

std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

// Pearson correlation of the flattened activations of every layer in
// `layers` (all layers of `a`, in key order, if empty). Both records must
// hold the same layer set.
LayerValues path_correlation(const ActivationRecord& a, const ActivationRecord& b,
                             std::span<const std::string> layers = {});

struct PathMeans {
  LayerValues natural_natural;  // all unordered natural pairs
  LayerValues accent_natural;   // accent i vs natural j, j != i
  LayerValues accent_seed;      // accent i vs natural i
};

struct PathReport {
  std::string lambda_tag;
  std::vector<std::string> layers;  // model order
  PathMeans overall;                // mean of the per-class means
  std::vector<PathMeans> per_class;
};

// Means over pairs for one class; accents[i] was seeded by naturals[i].
PathMeans path_means(const Model& model, std::span<const Image> naturals, std::span<const Image> accents,
                     std::span<const std::string> layers);

PathReport classwise_path_report(const Model& model, const std::vector<std::vector<Image>>& class_images,
                                 const std::vector<std::vector<Image>>& accents, std::string lambda_tag,
                                 std::span<const std::string> layers = {});

// accent_natural - natural_natural per layer.
LayerValues path_delta(const PathReport& report);

// Mean of the defined entries; nullopt if none.
std::optional<double> mean_defined(const LayerValues& values);

// The first `per_class` correctly classified images of every class.
std::vector<std::vector<Image>> select_cohort(const Model& model, const Dataset& data, int per_class);

// ---------------------------------------------------------------------------

struct RandomizationRow {
  std::size_t detector = 0;
  int depth = 0;
  std::string start_layer;  // empty at depth 0
  double pixel_l2 = 0.0;
  double reg_distance = 0.0;  // in the intact model's reg layer
};

struct RandomizationTable {
  std::vector<RandomizationRow> rows;
  std::vector<double> noise_floor_pixel;  // per detector: max over intact reruns
  std::vector<double> noise_floor_reg;
};

struct RandomizationOptions {
  std::uint64_t weight_seed = 1234;
  int floor_reruns = 5;
  int workers = 1;
};

// Depth k re-initializes every layer from schedule[k-1] onward; the
// schedule must move strictly towards the input.
RandomizationTable cascading_randomization_check(const Model& model, const Image& seed_image,
                                                 std::span<const FeatureDetector> detectors,
                                                 std::span<const std::string> schedule, const AccentConfig& cfg,
                                                 const RandomizationOptions& opts = {});

// Layers from the last one back to the first, the usual cascading order.
std::vector<std::string> full_schedule(const Model& model);

// ---------------------------------------------------------------------------

struct StripeDistances {
  double stripe_a = 0.0;
  double stripe_b = 0.0;
  double a_b = 0.0;
};

struct StripeVerdict {
  StripeDistances pixel;
  StripeDistances latent;
  bool degenerate = false;
  std::vector<std::string> failures;  // one entry per violated inequality

  bool passed() const { return !degenerate && failures.empty(); }
};

struct StripeImages {
  Image a, b, stripes;
};

// Homogeneous shades and 1-pixel vertical stripes alternating a, b.
StripeImages stripe_images(Shape3 shape, double shade_a, double shade_b);
StripeVerdict stripe_test(const Model& model, double shade_a, double shade_b, std::string_view early_layer);

// ---------------------------------------------------------------------------

struct ActivationScan {
  std::string layer;
  int channels = 0;
  int height = 0;
  int width = 0;
  int images = 0;
  // One column per crop, index (image * height + row) * width + col.
  Eigen::MatrixXd vectors;
  std::vector<PixelBox> boxes;  // receptive field per (row, col)

  std::size_t crop_count() const { return static_cast<std::size_t>(vectors.cols()); }
};

ActivationScan scan_activations(const Model& model, std::string_view layer, std::span<const Image> images);

struct CropRef {
  int image = 0;
  int row = 0;
  int col = 0;
  PixelBox box;
  double activation = 0.0;
};

struct TrialSpec {
  int unit = 0;
  FeatureDetector detector;
  CropRef exemplar;
  CropRef target;
  CropRef correct;
  CropRef incorrect;
  double cos_exemplar_target = 0.0;
  double cos_correct_target = 0.0;
  double cos_incorrect_target = 0.0;
};

struct SkippedUnit {
  int unit = 0;
  std::string reason;  // no_positive_activation | no_target | no_incorrect | no_correct
};

struct TrialOptions {
  std::size_t top_k = 0;  // 0: scale the 1000-of-2.45M ratio to the scan, at least 10
  double cosine_band = 0.05;
};

struct TrialSet {
  std::vector<TrialSpec> trials;
  std::vector<SkippedUnit> skipped;
  std::size_t top_k = 0;
};

std::size_t default_top_k(std::size_t crops);

// Units are channels of the scanned layer.
TrialSet select_trials(const ActivationScan& scan, std::span<const int> units, const TrialOptions& opts = {});
TrialSet generate_trials(const Model& model, std::string_view layer, std::span<const Image> images, int n_units,
                         const TrialOptions& opts = {});

// Recomputes activations from the images with a fresh forward pass and
// returns every violated constraint.
std::vector<std::string> validate_trial(const Model& model, std::span<const Image> images, const TrialSpec& trial,
                                        double cosine_band = 0.05);

Image crop_image(const Image& image, const PixelBox& box);

}  // namespace accentkit
