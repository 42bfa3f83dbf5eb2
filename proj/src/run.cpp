#include "accentkit/run.hpp"

#include "accentkit/error.hpp"
#include "accentkit/hash.hpp"
#include "accentkit/image_io.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

namespace accentkit {
namespace {

using nlohmann::json;

void check_unknown_keys(const json& value, const json& schema, const std::string& prefix,
                        std::vector<std::string>& errors) {
  if (!value.is_object() || !schema.is_object()) return;
  for (const auto& [key, child] : value.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) {
      errors.push_back(path + ": unknown field");
      continue;
    }
    // Leaves that default to null accept any value; typed checks follow.
    if (schema.at(key).is_object()) check_unknown_keys(child, schema.at(key), path, errors);
  }
}

const json* find(const json& cfg, std::initializer_list<const char*> path) {
  const json* node = &cfg;
  for (const char* key : path) {
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &node->at(key);
  }
  return node;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

}  // namespace

json default_config() {
  const AccentConfig a;
  return {{"detector", {{"layer", "logits"}, {"unit", 0}, {"direction", nullptr}, {"position", nullptr}}},
          {"accent",
           {{"reg_layer", a.reg_layer},
            {"lambda", a.lambda},
            {"steps", a.steps},
            {"lr", a.adam.lr},
            {"beta1", a.adam.beta1},
            {"beta2", a.adam.beta2},
            {"epsilon", a.adam.epsilon},
            {"param_kind", to_string(a.param_kind)},
            {"seed", a.seed},
            {"transforms",
             {{"crop_min", a.transforms.crop_min},
              {"crop_max", a.transforms.crop_max},
              {"gauss_sigma", a.transforms.gauss_sigma},
              {"uniform_sigma", a.transforms.uniform_sigma},
              {"batch_size", a.transforms.batch_size}}}}},
          {"mask", {{"method", "grad-x-input"}, {"p1", 50.0}, {"p2", 98.0}, {"sample_size", 50}}},
          {"path", {{"lambdas", {0.0, 0.1, 0.2, 0.5, 10.0}}, {"per_class", 30}}}};
}

json path_experiment_preset() {
  json cfg = default_config();
  cfg["path"]["lambdas"] = {0.0, 0.1, 0.2, 0.5, 10.0};
  auto& t = cfg["accent"]["transforms"];
  t["crop_min"] = 0.05;
  t["crop_max"] = 0.99;
  t["gauss_sigma"] = 0.02;
  t["uniform_sigma"] = 0.02;
  t["batch_size"] = 16;
  return cfg;
}

std::vector<std::string> config_errors(const json& cfg) {
  std::vector<std::string> errors;
  if (!cfg.is_object()) return {"<root>: config must be a JSON object"};
  check_unknown_keys(cfg, default_config(), "", errors);

  const auto number = [&](std::initializer_list<const char*> path, const std::string& name) -> std::optional<double> {
    const json* v = find(cfg, path);
    if (!v) return std::nullopt;
    if (!v->is_number()) {
      errors.push_back(name + ": must be a number");
      return std::nullopt;
    }
    return v->get<double>();
  };
  const auto require = [&](bool ok, const std::string& message) {
    if (!ok) errors.push_back(message);
  };

  if (auto v = number({"accent", "lambda"}, "accent.lambda")) require(*v >= 0.0, "accent.lambda: must be >= 0");
  if (auto v = number({"accent", "steps"}, "accent.steps")) require(*v >= 1.0, "accent.steps: must be >= 1");
  if (auto v = number({"accent", "lr"}, "accent.lr")) require(*v > 0.0, "accent.lr: must be > 0");
  if (auto v = number({"accent", "beta1"}, "accent.beta1")) require(*v >= 0.0 && *v < 1.0, "accent.beta1: must lie in [0, 1)");
  if (auto v = number({"accent", "beta2"}, "accent.beta2")) require(*v >= 0.0 && *v < 1.0, "accent.beta2: must lie in [0, 1)");
  if (auto v = number({"accent", "epsilon"}, "accent.epsilon")) require(*v > 0.0, "accent.epsilon: must be > 0");
  if (const json* v = find(cfg, {"accent", "param_kind"})) {
    try {
      parse_param_kind(v->get<std::string>());
    } catch (const std::exception&) {
      errors.push_back("accent.param_kind: expected pixel, fourier or maco-phase");
    }
  }
  const auto cmin = number({"accent", "transforms", "crop_min"}, "accent.transforms.crop_min");
  const auto cmax = number({"accent", "transforms", "crop_max"}, "accent.transforms.crop_max");
  if (cmin) require(*cmin > 0.0 && *cmin <= 1.0, "accent.transforms.crop_min: must lie in (0, 1]");
  if (cmax) require(*cmax > 0.0 && *cmax <= 1.0, "accent.transforms.crop_max: must lie in (0, 1]");
  if (cmin && cmax && *cmin > *cmax) {
    std::ostringstream os;
    os << "accent.transforms.crop_min (" << *cmin << ") exceeds accent.transforms.crop_max (" << *cmax << ")";
    errors.push_back(os.str());
  }
  if (auto v = number({"accent", "transforms", "gauss_sigma"}, "accent.transforms.gauss_sigma"))
    require(*v >= 0.0, "accent.transforms.gauss_sigma: must be >= 0");
  if (auto v = number({"accent", "transforms", "uniform_sigma"}, "accent.transforms.uniform_sigma"))
    require(*v >= 0.0, "accent.transforms.uniform_sigma: must be >= 0");
  if (auto v = number({"accent", "transforms", "batch_size"}, "accent.transforms.batch_size"))
    require(*v >= 1.0, "accent.transforms.batch_size: must be >= 1");

  const auto p1 = number({"mask", "p1"}, "mask.p1");
  const auto p2 = number({"mask", "p2"}, "mask.p2");
  if (p1) require(*p1 >= 0.0 && *p1 <= 100.0, "mask.p1: must lie in [0, 100]");
  if (p2) require(*p2 >= 0.0 && *p2 <= 100.0, "mask.p2: must lie in [0, 100]");
  if (p1 && p2 && !(*p1 < *p2)) {
    std::ostringstream os;
    os << "mask.p1 (" << *p1 << ") must be below mask.p2 (" << *p2 << ")";
    errors.push_back(os.str());
  }
  if (const json* v = find(cfg, {"mask", "method"})) {
    try {
      parse_attribution_method(v->get<std::string>());
    } catch (const std::exception&) {
      errors.push_back("mask.method: expected grad-x-input, activation-map or cam-style");
    }
  }
  if (auto v = number({"mask", "sample_size"}, "mask.sample_size")) require(*v >= 1.0, "mask.sample_size: must be >= 1");

  if (const json* v = find(cfg, {"path", "lambdas"})) {
    if (!v->is_array() || v->empty()) {
      errors.push_back("path.lambdas: must be a nonempty array");
    } else {
      for (std::size_t i = 0; i < v->size(); ++i)
        if (!(*v)[i].is_number() || (*v)[i].get<double>() < 0.0)
          errors.push_back("path.lambdas[" + std::to_string(i) + "]: must be a number >= 0");
    }
  }
  if (auto v = number({"path", "per_class"}, "path.per_class")) require(*v >= 2.0, "path.per_class: must be >= 2");

  if (const json* d = find(cfg, {"detector"})) {
    const json* dir = find(*d, {"direction"});
    const json* unit = find(*d, {"unit"});
    if ((!dir || dir->is_null()) && (!unit || unit->is_null()))
      errors.push_back("detector: needs either unit or direction");
    if (const json* pos = find(*d, {"position"}); pos && !pos->is_null() && !(pos->is_array() && pos->size() == 2))
      errors.push_back("detector.position: must be null or [row, col]");
  }
  return errors;
}

json resolve_config(const json& overlay, const json& base) {
  json cfg = base;
  if (!overlay.is_null()) {
    if (!overlay.is_object()) throw ConfigError("<root>: config must be a JSON object");
    cfg.merge_patch(overlay);
    // merge_patch drops keys set to null; restore nullable detector leaves.
    for (const char* key : {"direction", "position", "unit"})
      if (!cfg["detector"].contains(key)) cfg["detector"][key] = nullptr;
  }
  const auto errors = config_errors(cfg);
  std::vector<std::string> unknown;
  check_unknown_keys(overlay, default_config(), "", unknown);
  std::string message;
  for (const auto& e : unknown) message += "\n  " + e;
  for (const auto& e : errors)
    if (message.find(e) == std::string::npos) message += "\n  " + e;
  if (!message.empty()) throw ConfigError("invalid config:" + message);
  return cfg;
}

json load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  json overlay;
  try {
    overlay = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return resolve_config(overlay);
}

FeatureDetector detector_from_config(const json& cfg, const Model& model) {
  const json& d = cfg.at("detector");
  const std::string layer = d.at("layer").get<std::string>();
  FeatureDetector det;
  if (d.contains("direction") && !d.at("direction").is_null()) {
    det.layer = layer;
    det.direction = d.at("direction").get<std::vector<double>>();
  } else {
    det = FeatureDetector::channel(model, layer, d.at("unit").get<int>());
  }
  if (d.contains("position") && !d.at("position").is_null()) {
    det.position = std::pair{d.at("position")[0].get<int>(), d.at("position")[1].get<int>()};
    det.reduction = Reduction::at_position;
  } else {
    det.reduction = Reduction::spatial_mean;
  }
  validate_detector(model, det);
  return det;
}

AccentConfig accent_from_config(const json& cfg, const Model& model) {
  AccentConfig a = accent_config_from_json(cfg.at("accent"));
  a.detector = detector_from_config(cfg, model);
  a.validate(model);
  return a;
}

MaskOptions mask_from_config(const json& cfg) {
  const json& m = cfg.at("mask");
  MaskOptions opts;
  opts.method = parse_attribution_method(m.at("method").get<std::string>());
  opts.p1 = m.at("p1").get<double>();
  opts.p2 = m.at("p2").get<double>();
  opts.sample_size = m.at("sample_size").get<int>();
  return opts;
}

// ---------------------------------------------------------------------------

std::filesystem::path create_run_dir(const std::filesystem::path& root, std::string_view subcommand,
                                     std::string_view config_hash) {
  std::filesystem::create_directories(root);
  const std::string stem =
      std::string(subcommand) + "-" + utc_timestamp() + "-" + std::string(config_hash.substr(0, 8));
  for (int k = 1;; ++k) {
    const auto dir = root / (k == 1 ? stem : stem + "-" + std::to_string(k));
    // create_directory returns false if the directory already exists.
    if (std::filesystem::create_directory(dir)) return dir;
  }
}

RunRecorder::RunRecorder(std::filesystem::path dir, std::string subcommand, json config)
    : dir_(std::move(dir)), subcommand_(std::move(subcommand)), config_(std::move(config)) {
  write_json("config.json", config_);
}

std::string RunRecorder::config_hash() const { return fnv1a_hex(config_.dump()); }

void RunRecorder::write_text(const std::string& name, std::string_view content) {
  const auto path = dir_ / name;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw IoError("cannot write " + path.string());
  add_artifact(name);
}

void RunRecorder::write_json(const std::string& name, const json& value) { write_text(name, value.dump(2) + "\n"); }

void RunRecorder::write_image(const std::string& name, const Image& image) {
  const auto path = dir_ / name;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_png(image, path);
  add_artifact(name);
}

void RunRecorder::add_artifact(const std::string& name) {
  if (std::find(artifacts_.begin(), artifacts_.end(), name) == artifacts_.end()) artifacts_.push_back(name);
}

void RunRecorder::add_timing(const std::string& name, double seconds) { timings_[name] = seconds; }

void RunRecorder::set(const std::string& key, json value) { extra_[key] = std::move(value); }

void RunRecorder::finish() {
  json m = extra_;
  m["subcommand"] = subcommand_;
  m["config"] = config_;
  m["config_hash"] = config_hash();
  m["artifacts"] = artifacts_;
  m["timings"] = timings_;
  m["version"] = kToolVersion;
  std::ofstream os(dir_ / "manifest.json");
  os << m.dump(2) << '\n';
  if (!os) throw IoError("cannot write manifest in " + dir_.string());
}

std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir) {
  std::vector<std::string> problems;
  std::ifstream is(run_dir / "manifest.json");
  if (!is) return {"manifest.json missing"};
  json m;
  try {
    m = json::parse(is);
  } catch (const json::parse_error&) {
    return {"manifest.json is not valid JSON"};
  }
  for (const char* key : {"subcommand", "config", "config_hash", "artifacts", "timings", "version"})
    if (!m.contains(key)) problems.push_back(std::string("manifest lacks '") + key + "'");
  if (!problems.empty()) return problems;
  if (fnv1a_hex(m.at("config").dump()) != m.at("config_hash").get<std::string>())
    problems.push_back("config hash does not match the config snapshot");
  for (const auto& a : m.at("artifacts"))
    if (!std::filesystem::exists(run_dir / a.get<std::string>()))
      problems.push_back("artifact '" + a.get<std::string>() + "' missing");
  return problems;
}

std::filesystem::path cache_root() {
  if (const char* env = std::getenv("ACCENTKIT_CACHE"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) return std::filesystem::path(home) / ".cache" / "accentkit";
  return std::filesystem::temp_directory_path() / "accentkit-cache";
}

std::filesystem::path default_model_dir() {
  return std::filesystem::path(ACCENTKIT_SOURCE_DIR) / "models" / "reference";
}

std::string trace_jsonl(const std::vector<TraceEntry>& trace) {
  std::string out;
  for (const auto& t : trace)
    out += json{{"step", t.step}, {"activation", t.activation}, {"reg", t.reg}, {"total", t.total}}.dump() + "\n";
  return out;
}

}  // namespace accentkit
