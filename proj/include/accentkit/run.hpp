#pragma once

#include "accentkit/accent.hpp"
#include "accentkit/attrib.hpp"
#include "accentkit/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace accentkit {

inline constexpr const char* kToolVersion = "accentkit 0.1.0";

// ---------------------------------------------------------------------------
// Configuration
//
// One JSON tree covers every subcommand:
//   detector  {layer, unit | direction, position}
//   accent    AccentConfig fields except the detector
//   mask      {method, p1, p2, sample_size}
//   path      {lambdas, per_class}
// Unknown keys are rejected.

nlohmann::json default_config();
// Path experiment settings: lambdas {0, .1, .2, .5, 10}, crops [.05, .99],
// both noise sigmas .02.
nlohmann::json path_experiment_preset();

// Every violated invariant as "field.path: message".
std::vector<std::string> config_errors(const nlohmann::json& cfg);
// Merges `overlay` into the defaults and validates; throws ConfigError
// listing every problem.
nlohmann::json resolve_config(const nlohmann::json& overlay, const nlohmann::json& base = default_config());
nlohmann::json load_config(const std::filesystem::path& path);

FeatureDetector detector_from_config(const nlohmann::json& cfg, const Model& model);
AccentConfig accent_from_config(const nlohmann::json& cfg, const Model& model);

struct MaskOptions {
  AttributionMethod method = AttributionMethod::grad_x_input;
  double p1 = 50.0;
  double p2 = 98.0;
  int sample_size = 50;
};
MaskOptions mask_from_config(const nlohmann::json& cfg);

// ---------------------------------------------------------------------------
// Run directories

// <root>/<subcommand>-<UTC timestamp>-<hash8>; an existing name gets -2, -3, ...
std::filesystem::path create_run_dir(const std::filesystem::path& root, std::string_view subcommand,
                                     std::string_view config_hash);

// Collects artifacts and timings of one run and writes manifest.json last.
class RunRecorder {
 public:
  RunRecorder(std::filesystem::path dir, std::string subcommand, nlohmann::json config);

  const std::filesystem::path& dir() const { return dir_; }
  const nlohmann::json& config() const { return config_; }
  std::string config_hash() const;

  // Paths are relative to the run directory.
  void write_text(const std::string& name, std::string_view content);
  void write_json(const std::string& name, const nlohmann::json& value);
  void write_image(const std::string& name, const Image& image);
  void add_artifact(const std::string& name);
  void add_timing(const std::string& name, double seconds);
  void set(const std::string& key, nlohmann::json value);

  void finish();

 private:
  std::filesystem::path dir_;
  std::string subcommand_;
  nlohmann::json config_;
  std::vector<std::string> artifacts_;
  nlohmann::json timings_ = nlohmann::json::object();
  nlohmann::json extra_ = nlohmann::json::object();
};

// Manifest problems: missing keys, hash mismatch, missing artifacts.
std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir);

// Cache root: $ACCENTKIT_CACHE, else $HOME/.cache/accentkit.
std::filesystem::path cache_root();
// Bundled reference model directory.
std::filesystem::path default_model_dir();

// One JSON object per line with 17 significant digits.
std::string trace_jsonl(const std::vector<TraceEntry>& trace);

}  // namespace accentkit
