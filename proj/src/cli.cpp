#include "accentkit/cli.hpp"

#include "accentkit/accent.hpp"
#include "accentkit/attrib.hpp"
#include "accentkit/error.hpp"
#include "accentkit/eval.hpp"
#include "accentkit/hash.hpp"
#include "accentkit/image_io.hpp"
#include "accentkit/parallel.hpp"
#include "accentkit/run.hpp"
#include "accentkit/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

namespace accentkit {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Context {
  std::ostream& out;
  int workers = 1;
};

using Executor = std::function<void(const json& snapshot, RunRecorder& rec, const Context& ctx)>;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path cifar_dir() { return cache_root() / "cifar-10-batches-bin"; }

TrainedModel load_model(const json& inputs, RunRecorder& rec) {
  const fs::path dir = inputs.at("model").get<std::string>();
  TrainedModel m = load_model_dir(dir);
  rec.set("model", {{"dir", dir.string()},
                    {"architecture", m.manifest.architecture},
                    {"weights_hash", m.manifest.weights_hash},
                    {"test_accuracy", m.manifest.test_accuracy}});
  return m;
}

Image fit_to_model(Image img, const Model& model) {
  const Shape3& want = model.input_shape();
  if (img.channels() == 1 && want.channels == 3) {
    Image rgb(3, img.height(), img.width());
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) rgb.at(c, y, x) = img.at(0, y, x);
    img = std::move(rgb);
  }
  if (img.channels() != want.channels) throw ConfigError("image channel count does not match the model");
  return resize_image(img, want.height, want.width);
}

Image load_seed(const json& inputs, const TrainedModel& m, RunRecorder& rec) {
  Image img;
  if (inputs.contains("image") && !inputs.at("image").is_null()) {
    img = fit_to_model(read_image(inputs.at("image").get<std::string>()), m.model);
  } else {
    const int index = inputs.value("test_index", 0);
    if (index < 0) throw ConfigError("test_index must be >= 0");
    img = held_out_images(m.manifest, index + 1, cifar_dir()).images.at(static_cast<std::size_t>(index));
  }
  Fnv1a h;
  h.update(img.values());
  rec.set("seed_image_hash", h.hex());
  return img;
}

json result_json(const AccentResult& r) {
  json j = {{"steps_completed", r.trace.size()}, {"warnings", r.warnings}, {"aborted", nullptr}};
  if (r.aborted) j["aborted"] = *r.aborted;
  if (!r.trace.empty()) {
    j["initial_activation"] = r.trace.front().activation;
    j["final_trace_activation"] = r.trace.back().activation;
    j["final_trace_reg"] = r.trace.back().reg;
  }
  return j;
}

double untransformed_activation(const Model& model, const Image& image, const FeatureDetector& det) {
  const std::vector<Image> batch = {image};
  const std::size_t layer = model.layer_index(det.layer);
  return feature_values(model.forward(to_feature_map(batch), layer).outputs[layer], det).front();
}

// ---------------------------------------------------------------------------
// Executors

void exec_train(const json& snapshot, RunRecorder& rec, const Context& ctx) {
  const json& in = snapshot.at("inputs");
  TrainingConfig cfg;
  cfg.epochs = in.at("epochs").get<int>();
  cfg.batch_size = in.at("batch_size").get<int>();
  cfg.learning_rate = in.at("learning_rate").get<double>();
  cfg.seed = in.at("seed").get<std::uint64_t>();
  cfg.accuracy_floor = in.at("floor").get<double>();
  const auto start = std::chrono::steady_clock::now();
  const DeskSplit split =
      load_desk_split(cifar_dir(), in.at("train_count").get<int>(), in.at("test_count").get<int>(), cfg.seed);
  TrainedModel trained = train_reference_model(split, cfg, cfg.seed);
  rec.add_timing("train", seconds_since(start));

  save_model_dir(trained, rec.dir() / "model");
  rec.add_artifact("model/weights.bin");
  rec.add_artifact("model/manifest.json");
  std::string losses;
  for (std::size_t e = 0; e < trained.epoch_losses.size(); ++e)
    losses += json{{"epoch", e}, {"loss", trained.epoch_losses[e]}}.dump() + "\n";
  rec.write_text("epochs.jsonl", losses);
  rec.write_json("training.json", {{"dataset_source", split.source},
                                   {"test_accuracy", trained.manifest.test_accuracy},
                                   {"final_train_loss", trained.manifest.final_train_loss},
                                   {"weights_hash", file_hash(rec.dir() / "model" / "weights.bin")}});
  if (in.contains("install") && !in.at("install").is_null()) {
    save_model_dir(trained, in.at("install").get<std::string>());
    rec.set("installed_to", in.at("install"));
  }
  ctx.out << "test accuracy " << trained.manifest.test_accuracy << " (" << split.source << ")\n";
}

void exec_accentuate(const json& snapshot, RunRecorder& rec, const Context& ctx) {
  const json& in = snapshot.at("inputs");
  const TrainedModel m = load_model(in, rec);
  const Image seed = load_seed(in, m, rec);
  const AccentConfig cfg = accent_from_config(snapshot.at("settings"), m.model);
  rec.set("seeds", {{"accent", cfg.seed}});

  const auto start = std::chrono::steady_clock::now();
  const AccentResult r = run_accentuation(m.model, seed, cfg);
  rec.add_timing("accentuation", seconds_since(start));

  rec.write_image("seed.png", seed);
  rec.write_image("accent.png", r.image);
  rec.write_text("trace.jsonl", trace_jsonl(r.trace));
  save_param_state(r.state, rec.dir() / "state", cfg.seed);
  rec.add_artifact("state/state.json");
  rec.add_artifact("state/state.bin");

  json result = result_json(r);
  result["seed_activation"] = untransformed_activation(m.model, seed, cfg.detector);
  result["final_activation"] = untransformed_activation(m.model, r.image, cfg.detector);
  result["reg_distance"] = reg_distance(m.model, seed, r.image, cfg.reg_layer);
  result["pixel_distance"] = l2_distance(seed.values(), r.image.values());
  if (in.value("normalize", false)) {
    const auto t = std::chrono::steady_clock::now();
    const DistanceBounds b = distance_bounds(m.model, seed, cfg);
    rec.add_timing("bounds", seconds_since(t));
    result["bounds"] = {{"d_min", b.d_min}, {"d_max", b.d_max}};
    result["normalized_reg_distance"] = normalize_distance(result["reg_distance"].get<double>(), b);
  }
  rec.write_json("result.json", result);
  if (r.aborted) throw NumericError("accentuation aborted at " + *r.aborted + "; partial trace in " + rec.dir().string());
  ctx.out << "activation " << result["seed_activation"].get<double>() << " -> "
          << result["final_activation"].get<double>() << "\n";
}

void exec_sweep(const json& snapshot, RunRecorder& rec, const Context& ctx) {
  const json& in = snapshot.at("inputs");
  const TrainedModel m = load_model(in, rec);
  const Image seed = load_seed(in, m, rec);
  const AccentConfig base = accent_from_config(snapshot.at("settings"), m.model);

  std::vector<double> lambdas = in.at("lambdas").get<std::vector<double>>();
  for (double bound : {kLambdaHigh, kLambdaLow})
    if (std::find(lambdas.begin(), lambdas.end(), bound) == lambdas.end()) lambdas.push_back(bound);
  std::sort(lambdas.begin(), lambdas.end());

  const auto start = std::chrono::steady_clock::now();
  std::vector<AccentResult> results(lambdas.size());
  parallel_for(lambdas.size(), ctx.workers, [&](std::size_t i) {
    AccentConfig cfg = base;
    cfg.lambda = lambdas[i];
    results[i] = run_accentuation(m.model, seed, cfg);
  });
  rec.add_timing("sweep", seconds_since(start));

  const auto names = m.model.layer_names();
  const std::size_t hi = static_cast<std::size_t>(std::find(lambdas.begin(), lambdas.end(), kLambdaHigh) - lambdas.begin());
  const std::size_t lo = static_cast<std::size_t>(std::find(lambdas.begin(), lambdas.end(), kLambdaLow) - lambdas.begin());
  std::string csv = "lambda,layer,distance,normalized\n";
  json rows = json::array();
  for (const auto& layer : names) {
    const double d_min = reg_distance(m.model, seed, results[hi].image, layer);
    const double d_max = reg_distance(m.model, seed, results[lo].image, layer);
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      const double d = reg_distance(m.model, seed, results[i].image, layer);
      std::string norm;
      json norm_json = nullptr;
      if (d_max > d_min) {
        const double n = normalize_distance(d, {d_min, d_max});
        norm = fmt(n);
        norm_json = n;
      }
      csv += fmt(lambdas[i]) + "," + layer + "," + fmt(d) + "," + norm + "\n";
      rows.push_back({{"lambda", lambdas[i]}, {"layer", layer}, {"distance", d}, {"normalized", norm_json}});
    }
  }
  rec.write_text("sweep.csv", csv);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "traces/lambda-%02zu.jsonl", i);
    rec.write_text(name, trace_jsonl(results[i].trace));
  }
  json summary = {{"lambdas", lambdas}, {"reg_layer", base.reg_layer}, {"rows", rows}};

  if (in.value("find", false)) {
    const auto t = std::chrono::steady_clock::now();
    LambdaSearchOptions opts;
    opts.band_low = in.at("band")[0].get<double>();
    opts.band_high = in.at("band")[1].get<double>();
    opts.budget = in.at("budget").get<int>();
    const LambdaSearch s = find_lambda(m.model, seed, base, opts);
    rec.add_timing("find_lambda", seconds_since(t));
    json probes = json::array();
    for (const auto& p : s.probes) probes.push_back({{"lambda", p.lambda}, {"normalized", p.normalized}});
    const json found = {{"lambda", s.lambda},
                        {"normalized", s.normalized},
                        {"in_band", s.in_band},
                        {"runs", s.runs},
                        {"bounds", {{"d_min", s.bounds.d_min}, {"d_max", s.bounds.d_max}}},
                        {"probes", probes}};
    rec.write_json("lambda.json", found);
    if (!s.in_band) ctx.out << "warning: band never hit; returning the closest probe\n";
    ctx.out << "lambda " << s.lambda << " (normalized distance " << s.normalized << ")\n";
    if (in.value("pin", false)) {
      const fs::path target = fs::path(in.at("model").get<std::string>()) / "accent_defaults.json";
      std::ofstream os(target);
      os << json{{"accent", {{"lambda", s.lambda}}},
                 {"found_by",
                  {{"band", in.at("band")}, {"normalized", s.normalized}, {"in_band", s.in_band},
                   {"config_hash", rec.config_hash()}}}}
                .dump(2)
         << '\n';
      if (!os) throw IoError("cannot write " + target.string());
      rec.set("pinned", target.string());
    }
  }
  rec.write_json("sweep.json", summary);
}

void exec_mask(const json& snapshot, RunRecorder& rec, const Context& ctx) {
  const json& in = snapshot.at("inputs");
  const json& settings = snapshot.at("settings");
  const TrainedModel m = load_model(in, rec);
  const Image seed = load_seed(in, m, rec);
  const FeatureDetector det = detector_from_config(settings, m.model);
  const MaskOptions opts = mask_from_config(settings);

  Image accent;
  if (in.contains("accent") && !in.at("accent").is_null()) {
    accent = fit_to_model(read_image(in.at("accent").get<std::string>()), m.model);
  } else {
    const AccentConfig cfg = accent_from_config(settings, m.model);
    const auto t = std::chrono::steady_clock::now();
    const AccentResult r = run_accentuation(m.model, seed, cfg);
    rec.add_timing("accentuation", seconds_since(t));
    rec.write_text("trace.jsonl", trace_jsonl(r.trace));
    accent = r.image;
  }

  const auto t = std::chrono::steady_clock::now();
  const Dataset sample = held_out_images(m.manifest, opts.sample_size, cifar_dir());
  bool hit = false;
  const AttributionStats stats = cached_stats(cache_root() / "stats", m.model, det, opts.method, sample.images, &hit);
  const AttributionMap map = attribution_map(m.model, accent, det, opts.method, "accent");
  const Image mask = normalize_map(map, stats, opts.p1, opts.p2);
  const Image composite = compose(seed, accent, mask);
  rec.add_timing("mask", seconds_since(t));

  rec.write_image("seed.png", seed);
  rec.write_image("accent.png", accent);
  rec.write_image("mask.png", upsample_mask(mask, seed.height(), seed.width()));
  rec.write_image("composite.png", composite);
  double mean = 0.0;
  for (double v : mask.values()) mean += v;
  mean /= static_cast<double>(mask.size());
  rec.write_json("mask.json", {{"method", to_string(opts.method)},
                               {"p1", opts.p1},
                               {"p2", opts.p2},
                               {"P_p1", stats.percentile(opts.p1)},
                               {"P_p2", stats.percentile(opts.p2)},
                               {"pooled_values", stats.sorted.size()},
                               {"sample_hash", stats.sample_hash},
                               {"map_layer", map.source_layer},
                               {"mask_mean", mean}});
  rec.set("stats_cache", {{"key", stats_cache_key(m.model, det, opts.method, sample.images)}, {"hit", hit}});
  ctx.out << "mask mean " << mean << "\n";
}

void exec_path(const json& snapshot, RunRecorder& rec, const Context& ctx) {
  const json& in = snapshot.at("inputs");
  const json& settings = snapshot.at("settings");
  const TrainedModel m = load_model(in, rec);
  const AccentConfig base = accent_from_config(settings, m.model);
  const auto lambdas = settings.at("path").at("lambdas").get<std::vector<double>>();
  const int per_class = settings.at("path").at("per_class").get<int>();

  const Dataset pool = held_out_images(m.manifest, in.at("pool").get<int>(), cifar_dir());
  auto cohort = select_cohort(m.model, pool, per_class);
  if (in.contains("classes") && !in.at("classes").is_null()) cohort.resize(in.at("classes").get<std::size_t>());

  struct Job {
    std::size_t lambda, cls, index;
  };
  std::vector<Job> jobs;
  for (std::size_t l = 0; l < lambdas.size(); ++l)
    for (std::size_t k = 0; k < cohort.size(); ++k)
      for (std::size_t i = 0; i < cohort[k].size(); ++i) jobs.push_back({l, k, i});
  std::vector<AccentResult> results(jobs.size());
  const auto start = std::chrono::steady_clock::now();
  parallel_for(jobs.size(), ctx.workers, [&](std::size_t j) {
    AccentConfig cfg = base;
    cfg.lambda = lambdas[jobs[j].lambda];
    cfg.detector = FeatureDetector::logit(m.model, static_cast<int>(jobs[j].cls));
    results[j] = run_accentuation(m.model, cohort[jobs[j].cls][jobs[j].index], cfg);
  });
  rec.add_timing("accentuations", seconds_since(start));

  std::string runs;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& r = results[j];
    const auto det = FeatureDetector::logit(m.model, static_cast<int>(jobs[j].cls));
    runs += json{{"lambda", lambdas[jobs[j].lambda]},
                 {"class", jobs[j].cls},
                 {"index", jobs[j].index},
                 {"seed_activation", untransformed_activation(m.model, cohort[jobs[j].cls][jobs[j].index], det)},
                 {"final_activation", untransformed_activation(m.model, r.image, det)},
                 {"final_trace_reg", r.trace.empty() ? 0.0 : r.trace.back().reg}}
                .dump() +
            "\n";
  }
  rec.write_text("runs.jsonl", runs);

  std::string csv = "lambda,layer,quantity,value\n";
  json reports = json::array();
  const auto cell = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("nan"); };
  const auto to_json = [](const LayerValues& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(x ? json(*x) : json(nullptr));
    return a;
  };
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    std::vector<std::vector<Image>> accents(cohort.size());
    for (std::size_t j = 0; j < jobs.size(); ++j)
      if (jobs[j].lambda == l) accents[jobs[j].cls].push_back(results[j].image);
    const PathReport report = classwise_path_report(m.model, cohort, accents, fmt(lambdas[l]));
    const LayerValues delta = path_delta(report);
    for (std::size_t i = 0; i < report.layers.size(); ++i) {
      const std::string prefix = fmt(lambdas[l]) + "," + report.layers[i] + ",";
      csv += prefix + "natural_natural," + cell(report.overall.natural_natural[i]) + "\n";
      csv += prefix + "accent_natural," + cell(report.overall.accent_natural[i]) + "\n";
      csv += prefix + "accent_seed," + cell(report.overall.accent_seed[i]) + "\n";
      csv += prefix + "delta," + cell(delta[i]) + "\n";
    }
    json per_class = json::array();
    for (const auto& c : report.per_class)
      per_class.push_back({{"natural_natural", to_json(c.natural_natural)},
                           {"accent_natural", to_json(c.accent_natural)},
                           {"accent_seed", to_json(c.accent_seed)}});
    reports.push_back({{"lambda", lambdas[l]},
                       {"layers", report.layers},
                       {"natural_natural", to_json(report.overall.natural_natural)},
                       {"accent_natural", to_json(report.overall.accent_natural)},
                       {"accent_seed", to_json(report.overall.accent_seed)},
                       {"delta", to_json(delta)},
                       {"per_class", per_class}});
  }
  rec.write_text("path.csv", csv);
  rec.write_json("path_report.json", reports);
  ctx.out << jobs.size() << " accentuations over " << cohort.size() << " classes\n";
}

void exec_randomize(const json& snapshot, RunRecorder& rec, const Context& ctx) {
  const json& in = snapshot.at("inputs");
  const TrainedModel m = load_model(in, rec);
  const Image seed = load_seed(in, m, rec);
  const AccentConfig cfg = accent_from_config(snapshot.at("settings"), m.model);
  std::vector<std::string> schedule = full_schedule(m.model);
  if (in.contains("schedule") && !in.at("schedule").is_null())
    schedule = in.at("schedule").get<std::vector<std::string>>();
  RandomizationOptions opts;
  opts.weight_seed = in.at("weight_seed").get<std::uint64_t>();
  opts.floor_reruns = in.at("floor_reruns").get<int>();
  opts.workers = ctx.workers;
  const std::vector<FeatureDetector> dets = {cfg.detector};

  const auto start = std::chrono::steady_clock::now();
  const RandomizationTable table = cascading_randomization_check(m.model, seed, dets, schedule, cfg, opts);
  rec.add_timing("randomization", seconds_since(start));

  std::string csv = "detector,depth,start_layer,pixel_l2,reg_distance\n";
  json rows = json::array();
  for (const auto& r : table.rows) {
    csv += std::to_string(r.detector) + "," + std::to_string(r.depth) + "," + r.start_layer + "," + fmt(r.pixel_l2) +
           "," + fmt(r.reg_distance) + "\n";
    rows.push_back({{"detector", r.detector}, {"depth", r.depth}, {"start_layer", r.start_layer},
                    {"pixel_l2", r.pixel_l2}, {"reg_distance", r.reg_distance}});
  }
  rec.write_text("randomization.csv", csv);
  rec.write_json("randomization.json", {{"schedule", schedule},
                                        {"rows", rows},
                                        {"noise_floor_pixel", table.noise_floor_pixel},
                                        {"noise_floor_reg", table.noise_floor_reg}});
  ctx.out << "depths " << schedule.size() + 1 << ", noise floor " << table.noise_floor_pixel.front() << "\n";
}

void exec_stripe(const json& snapshot, RunRecorder& rec, const Context& ctx) {
  const json& in = snapshot.at("inputs");
  const TrainedModel m = load_model(in, rec);
  const double a = in.at("shade_a").get<double>(), b = in.at("shade_b").get<double>();
  const std::string layer = in.at("layer").get<std::string>();
  const StripeVerdict v = stripe_test(m.model, a, b, layer);
  const StripeImages imgs = stripe_images(m.model.input_shape(), a, b);
  rec.write_image("images/a.png", imgs.a);
  rec.write_image("images/b.png", imgs.b);
  rec.write_image("images/stripes.png", imgs.stripes);
  std::string csv = "space,pair,distance\n";
  const auto rows = [&](const char* space, const StripeDistances& d) {
    csv += std::string(space) + ",stripe-a," + fmt(d.stripe_a) + "\n";
    csv += std::string(space) + ",stripe-b," + fmt(d.stripe_b) + "\n";
    csv += std::string(space) + ",a-b," + fmt(d.a_b) + "\n";
  };
  rows("pixel", v.pixel);
  rows(layer.c_str(), v.latent);
  rec.write_text("stripe.csv", csv);
  const auto dist = [](const StripeDistances& d) {
    return json{{"stripe_a", d.stripe_a}, {"stripe_b", d.stripe_b}, {"a_b", d.a_b}};
  };
  rec.write_json("stripe.json", {{"pixel", dist(v.pixel)},
                                 {"latent", dist(v.latent)},
                                 {"layer", layer},
                                 {"degenerate", v.degenerate},
                                 {"failures", v.failures},
                                 {"passed", v.passed()}});
  ctx.out << (v.degenerate ? "degenerate" : v.passed() ? "ordering holds" : "ordering violated") << "\n";
}

void exec_trials(const json& snapshot, RunRecorder& rec, const Context& ctx) {
  const json& in = snapshot.at("inputs");
  const TrainedModel m = load_model(in, rec);
  const Dataset data = held_out_images(m.manifest, in.at("images").get<int>(), cifar_dir());
  TrialOptions opts;
  opts.top_k = in.at("top_k").get<std::size_t>();
  const std::string layer = in.at("layer").get<std::string>();
  const auto start = std::chrono::steady_clock::now();
  const TrialSet set = generate_trials(m.model, layer, data.images, in.at("units").get<int>(), opts);
  rec.add_timing("generate", seconds_since(start));

  const auto crop_json = [](const CropRef& c) {
    return json{{"image", c.image}, {"row", c.row}, {"col", c.col}, {"activation", c.activation},
                {"box", {c.box.top, c.box.left, c.box.height, c.box.width}}};
  };
  json trials = json::array();
  std::string csv = "unit,role,image,row,col,activation,cos_to_target\n";
  std::size_t invalid = 0;
  for (const auto& t : set.trials) {
    const auto problems = validate_trial(m.model, data.images, t);
    invalid += problems.empty() ? 0 : 1;
    trials.push_back({{"unit", t.unit},
                      {"exemplar", crop_json(t.exemplar)},
                      {"target", crop_json(t.target)},
                      {"correct", crop_json(t.correct)},
                      {"incorrect", crop_json(t.incorrect)},
                      {"cos_exemplar_target", t.cos_exemplar_target},
                      {"cos_correct_target", t.cos_correct_target},
                      {"cos_incorrect_target", t.cos_incorrect_target},
                      {"validation", problems}});
    const std::pair<const char*, const CropRef*> roles[] = {
        {"exemplar", &t.exemplar}, {"target", &t.target}, {"correct", &t.correct}, {"incorrect", &t.incorrect}};
    const double cos_values[] = {t.cos_exemplar_target, 1.0, t.cos_correct_target, t.cos_incorrect_target};
    for (std::size_t r = 0; r < 4; ++r) {
      const CropRef& c = *roles[r].second;
      csv += std::to_string(t.unit) + "," + roles[r].first + "," + std::to_string(c.image) + "," +
             std::to_string(c.row) + "," + std::to_string(c.col) + "," + fmt(c.activation) + "," + fmt(cos_values[r]) +
             "\n";
      char name[64];
      std::snprintf(name, sizeof name, "crops/unit-%02d-%s.png", t.unit, roles[r].first);
      rec.write_image(name, crop_image(data.images[static_cast<std::size_t>(c.image)], c.box));
    }
  }
  json skipped = json::array();
  for (const auto& s : set.skipped) skipped.push_back({{"unit", s.unit}, {"reason", s.reason}});
  rec.write_text("trials.csv", csv);
  rec.write_json("trials.json", {{"layer", layer}, {"top_k", set.top_k}, {"trials", trials}, {"skipped", skipped}});
  if (invalid > 0) throw NumericError(std::to_string(invalid) + " emitted trial(s) failed post-hoc validation");
  ctx.out << set.trials.size() << " trials, " << set.skipped.size() << " units skipped\n";
}

const std::map<std::string, Executor>& executors() {
  static const std::map<std::string, Executor> table = {
      {"train-toy", exec_train},       {"accentuate", exec_accentuate}, {"sweep-lambda", exec_sweep},
      {"mask", exec_mask},             {"path-sim", exec_path},         {"randomize-check", exec_randomize},
      {"stripe-test", exec_stripe},    {"make-trials", exec_trials}};
  return table;
}

fs::path execute(const std::string& name, const json& snapshot, const fs::path& out_root, const Context& ctx) {
  const fs::path dir = create_run_dir(out_root, name, fnv1a_hex(snapshot.dump()));
  RunRecorder rec(dir, name, snapshot);
  const auto start = std::chrono::steady_clock::now();
  try {
    executors().at(name)(snapshot, rec, ctx);
  } catch (...) {
    rec.add_timing("total", seconds_since(start));
    rec.set("status", "failed");
    rec.finish();
    throw;
  }
  rec.add_timing("total", seconds_since(start));
  rec.set("status", "ok");
  rec.finish();
  return dir;
}

// Files whose bytes must match on replay.
std::vector<fs::path> trace_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".jsonl" || ext == ".csv") files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Flag plumbing

struct Common {
  std::string out = "runs";
  std::string model;
  std::string config;
  int workers = 1;
};

void add_common(CLI::App* app, Common& c, bool needs_model = true) {
  app->add_option("--out", c.out, "Root directory for run directories")->capture_default_str();
  if (needs_model) app->add_option("--model", c.model, "Model directory (weights.bin + manifest.json)");
  app->add_option("--config", c.config, "JSON config file");
  app->add_option("--workers", c.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

template <typename T>
void flag_to(CLI::App* app, const std::string& name, json& overlay, std::vector<std::string> path,
             const std::string& help) {
  app->add_option_function<T>(
      name,
      [&overlay, path](const T& v) {
        json* node = &overlay;
        for (const auto& key : path) node = &(*node)[key];
        *node = v;
      },
      help);
}

void add_accent_flags(CLI::App* app, json& overlay) {
  flag_to<double>(app, "--lambda", overlay, {"accent", "lambda"}, "Regularization strength");
  flag_to<int>(app, "--steps", overlay, {"accent", "steps"}, "Optimization steps");
  flag_to<double>(app, "--lr", overlay, {"accent", "lr"}, "Adam learning rate");
  flag_to<std::string>(app, "--reg-layer", overlay, {"accent", "reg_layer"}, "Layer of the proximity term");
  flag_to<std::string>(app, "--param", overlay, {"accent", "param_kind"}, "pixel | fourier | maco-phase");
  flag_to<std::uint64_t>(app, "--seed", overlay, {"accent", "seed"}, "Optimization rng seed");
  flag_to<double>(app, "--crop-min", overlay, {"accent", "transforms", "crop_min"}, "Smallest crop fraction");
  flag_to<double>(app, "--crop-max", overlay, {"accent", "transforms", "crop_max"}, "Largest crop fraction");
  flag_to<double>(app, "--noise-gauss", overlay, {"accent", "transforms", "gauss_sigma"}, "Gaussian noise sigma");
  flag_to<double>(app, "--noise-uniform", overlay, {"accent", "transforms", "uniform_sigma"}, "Uniform noise half-width");
  flag_to<int>(app, "--n-transforms", overlay, {"accent", "transforms", "batch_size"}, "Transforms per step");
  app->add_flag_callback(
      "--no-noise",
      [&overlay] {
        overlay["accent"]["transforms"]["gauss_sigma"] = 0.0;
        overlay["accent"]["transforms"]["uniform_sigma"] = 0.0;
      },
      "Disable both noise terms");
}

struct DetectorFlags {
  std::optional<int> logit;
  std::optional<std::string> layer;
  std::optional<int> unit;
  std::vector<int> position;
};

void add_detector_flags(CLI::App* app, DetectorFlags& d) {
  app->add_option("--logit", d.logit, "Target class logit");
  app->add_option("--layer", d.layer, "Detector layer");
  app->add_option("--unit", d.unit, "Channel of the detector layer");
  app->add_option("--position", d.position, "Neuron position: ROW COL")->expected(2);
}

void add_image_flags(CLI::App* app, json& inputs) {
  app->add_option_function<std::string>("--image", [&inputs](const std::string& v) { inputs["image"] = v; },
                                        "Seed image (PNG or JPEG)");
  app->add_option_function<int>("--test-index", [&inputs](const int& v) { inputs["test_index"] = v; },
                                "Use this held-out image as the seed");
}

fs::path model_dir(const Common& c) {
  return fs::absolute(c.model.empty() ? default_model_dir() : fs::path(c.model));
}

// Defaults <- pinned model defaults <- --config <- flags.
json build_settings(const Common& c, const json& overlay, const DetectorFlags* det, const fs::path& model) {
  json base = default_config();
  if (const fs::path pinned = model / "accent_defaults.json"; fs::exists(pinned)) {
    std::ifstream is(pinned);
    const json p = json::parse(is);
    if (p.contains("accent")) base = resolve_config({{"accent", p.at("accent")}}, base);
  }
  if (!c.config.empty()) {
    std::ifstream is(c.config);
    if (!is) throw IoError("cannot read config " + c.config);
    json file;
    try {
      file = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + c.config + " is not valid JSON: " + e.what());
    }
    base = resolve_config(file, base);
  }
  json settings = resolve_config(overlay, base);
  if (det) {
    if (det->logit) {
      const Model m = Model::load(model / "weights.bin");
      settings["detector"] = {{"layer", m.layer(m.layer_count() - 1).name}, {"unit", *det->logit},
                              {"direction", nullptr}, {"position", nullptr}};
    }
    if (det->layer) settings["detector"]["layer"] = *det->layer;
    if (det->unit) {
      settings["detector"]["unit"] = *det->unit;
      settings["detector"]["direction"] = nullptr;
    }
    if (!det->position.empty()) settings["detector"]["position"] = det->position;
  }
  return settings;
}

int report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
  return 1;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature accentuation toolkit", "accentkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common common;
  json overlay = json::object();
  json inputs = json::object();
  DetectorFlags det;

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Train the desk-scale reference CNN");
  add_common(train, common, false);
  int train_count = 10000, test_count = 2000, epochs = 8, batch_size = 32;
  double learning_rate = 2e-3, floor = 0.60;
  std::uint64_t train_seed = 7;
  bool smoke = false;
  std::string install;
  train->add_option("--train-count", train_count)->capture_default_str();
  train->add_option("--test-count", test_count)->capture_default_str();
  train->add_option("--epochs", epochs)->capture_default_str();
  train->add_option("--batch-size", batch_size)->capture_default_str();
  train->add_option("--learning-rate", learning_rate)->capture_default_str();
  train->add_option("--seed", train_seed)->capture_default_str();
  train->add_option("--floor", floor, "Test accuracy floor")->capture_default_str();
  train->add_flag("--smoke", smoke, "One short epoch, no accuracy floor");
  train->add_option("--install", install, "Also write the trained model to this directory");

  auto* accentuate = app.add_subcommand("accentuate", "Accentuate one feature in one seed image");
  add_common(accentuate, common);
  add_accent_flags(accentuate, overlay);
  add_detector_flags(accentuate, det);
  add_image_flags(accentuate, inputs);
  bool normalize = false;
  accentuate->add_flag("--normalize", normalize, "Also run the lambda bound runs and report the normalized distance");

  auto* sweep = app.add_subcommand("sweep-lambda", "Sweep lambda and report per-layer distances");
  add_common(sweep, common);
  add_accent_flags(sweep, overlay);
  add_detector_flags(sweep, det);
  add_image_flags(sweep, inputs);
  std::vector<double> lambdas = {1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6};
  std::vector<double> band = {0.3, 0.7};
  int budget = 12;
  bool find = false, pin = false;
  sweep->add_option("--lambdas", lambdas, "Lambda grid")->delimiter(',')->capture_default_str();
  sweep->add_flag("--find", find, "Search the sensitive region");
  sweep->add_option("--band", band, "Target band for --find: LOW HIGH")->expected(2)->capture_default_str();
  sweep->add_option("--budget", budget, "Run budget for --find")->capture_default_str();
  sweep->add_flag("--pin", pin, "Store the found lambda as the model's default");

  auto* mask = app.add_subcommand("mask", "Collective attribution mask and composite");
  add_common(mask, common);
  add_accent_flags(mask, overlay);
  add_detector_flags(mask, det);
  add_image_flags(mask, inputs);
  flag_to<std::string>(mask, "--method", overlay, {"mask", "method"}, "grad-x-input | activation-map | cam-style");
  flag_to<double>(mask, "--p1", overlay, {"mask", "p1"}, "Lower percentile");
  flag_to<double>(mask, "--p2", overlay, {"mask", "p2"}, "Upper percentile");
  flag_to<int>(mask, "--sample-size", overlay, {"mask", "sample_size"}, "Images pooled into the stats");
  mask->add_option_function<std::string>("--accent", [&inputs](const std::string& v) { inputs["accent"] = v; },
                                         "Existing accentuation image; computed when absent");

  auto* path = app.add_subcommand("path-sim", "Class-wise path similarity of accentuations");
  add_common(path, common);
  add_accent_flags(path, overlay);
  int pool = 2000;
  std::optional<int> classes;
  bool preset = false;
  path->add_option("--pool", pool, "Held-out images scanned for the cohort")->capture_default_str();
  path->add_option("--classes", classes, "Use only the first N classes");
  path->add_option_function<std::vector<double>>(
           "--lambdas", [&overlay](const std::vector<double>& v) { overlay["path"]["lambdas"] = v; }, "Lambda values")
      ->delimiter(',');
  flag_to<int>(path, "--per-class", overlay, {"path", "per_class"}, "Images per class");
  path->add_flag("--preset", preset, "Start from the path-experiment preset");

  auto* randomize = app.add_subcommand("randomize-check", "Cascading randomization sanity check");
  add_common(randomize, common);
  add_accent_flags(randomize, overlay);
  add_detector_flags(randomize, det);
  add_image_flags(randomize, inputs);
  std::vector<std::string> schedule;
  std::uint64_t weight_seed = 1234;
  int floor_reruns = 5;
  randomize->add_option("--schedule", schedule, "Start layers, deepest first")->delimiter(',');
  randomize->add_option("--weight-seed", weight_seed)->capture_default_str();
  randomize->add_option("--floor-reruns", floor_reruns)->capture_default_str();

  auto* stripe = app.add_subcommand("stripe-test", "Pixel vs latent distances of a stripe image");
  add_common(stripe, common);
  double shade_a = 0.4, shade_b = 0.6;
  std::string stripe_layer = "conv1";
  stripe->add_option("--shade-a", shade_a)->capture_default_str();
  stripe->add_option("--shade-b", shade_b)->capture_default_str();
  stripe->add_option("--layer", stripe_layer, "Early layer")->capture_default_str();

  auto* trials = app.add_subcommand("make-trials", "Build forced-choice trials from an activation scan");
  add_common(trials, common);
  std::string trial_layer = "conv3";
  int units = 16, images = 1000;
  std::size_t top_k = 0;
  trials->add_option("--layer", trial_layer)->capture_default_str();
  trials->add_option("--units", units)->capture_default_str();
  trials->add_option("--images", images, "Held-out images scanned")->capture_default_str();
  trials->add_option("--top-k", top_k, "0 scales the 1000-of-2.45M ratio to the scan")->capture_default_str();

  auto* replay = app.add_subcommand("replay", "Re-run a run directory from its manifest and compare traces");
  std::string replay_dir;
  std::string replay_out;
  int replay_workers = 1;
  replay->add_option("run_dir", replay_dir)->required();
  replay->add_option("--out", replay_out, "Root for the new run (default: next to the original)");
  replay->add_option("--workers", replay_workers)->check(CLI::PositiveNumber);

  std::vector<std::string> argv_store = {"accentkit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*replay) {
      const fs::path dir = fs::absolute(replay_dir);
      const auto problems = verify_manifest(dir);
      if (!problems.empty()) {
        std::string msg = "manifest check failed:";
        for (const auto& p : problems) msg += " " + p + ";";
        return report_error(err, "io", msg);
      }
      std::ifstream is(dir / "manifest.json");
      const json manifest = json::parse(is);
      const std::string name = manifest.at("subcommand").get<std::string>();
      const fs::path root = replay_out.empty() ? dir.parent_path() : fs::path(replay_out);
      std::ostream quiet(nullptr);
      const fs::path fresh = execute(name, manifest.at("config"), root, {quiet, replay_workers});
      const auto before = trace_files(dir);
      const auto after = trace_files(fresh);
      json compared = json::array();
      bool identical = before == after && !before.empty();
      for (const auto& f : before) {
        const bool same = fs::exists(fresh / f) && read_bytes(dir / f) == read_bytes(fresh / f);
        identical = identical && same;
        compared.push_back({{"file", f.string()}, {"identical", same}});
      }
      const json verdict = {{"original", dir.string()}, {"replay", fresh.string()}, {"files", compared},
                            {"identical", identical}};
      std::ofstream(fresh / "replay.json") << verdict.dump(2) << '\n';
      out << verdict.dump(2) << '\n';
      return identical ? 0 : 1;
    }

    const Context ctx{out, common.workers};
    std::string name;
    json snapshot;
    if (*train) {
      name = "train-toy";
      if (smoke) {
        epochs = 1;
        train_count = std::min(train_count, 500);
        test_count = std::min(test_count, 200);
        floor = 0.0;
      }
      snapshot = {{"settings", nullptr},
                  {"inputs",
                   {{"train_count", train_count}, {"test_count", test_count}, {"epochs", epochs},
                    {"batch_size", batch_size}, {"learning_rate", learning_rate}, {"seed", train_seed},
                    {"floor", floor}, {"install", install.empty() ? json(nullptr) : json(fs::absolute(install).string())}}}};
    } else {
      CLI::App* sub = app.get_subcommands().front();
      name = sub->get_name();
      const fs::path model = model_dir(common);
      inputs["model"] = model.string();
      if (name == "path-sim" && preset) {
        json file_cfg = path_experiment_preset();
        file_cfg.merge_patch(overlay);
        overlay = file_cfg;
      }
      const bool uses_detector = name != "path-sim" && name != "stripe-test" && name != "make-trials";
      json settings = build_settings(common, overlay, uses_detector ? &det : nullptr, model);
      if (name == "accentuate") inputs["normalize"] = normalize;
      if (name == "sweep-lambda") {
        inputs["lambdas"] = lambdas;
        inputs["find"] = find;
        inputs["band"] = band;
        inputs["budget"] = budget;
        inputs["pin"] = pin;
      }
      if (name == "path-sim") {
        inputs["pool"] = pool;
        inputs["classes"] = classes ? json(*classes) : json(nullptr);
      }
      if (name == "randomize-check") {
        inputs["schedule"] = schedule.empty() ? json(nullptr) : json(schedule);
        inputs["weight_seed"] = weight_seed;
        inputs["floor_reruns"] = floor_reruns;
      }
      if (name == "stripe-test") {
        inputs["shade_a"] = shade_a;
        inputs["shade_b"] = shade_b;
        inputs["layer"] = stripe_layer;
      }
      if (name == "make-trials") {
        inputs["layer"] = trial_layer;
        inputs["units"] = units;
        inputs["images"] = images;
        inputs["top_k"] = top_k;
      }
      if (inputs.contains("image")) inputs["image"] = fs::absolute(inputs["image"].get<std::string>()).string();
      if (inputs.contains("accent")) inputs["accent"] = fs::absolute(inputs["accent"].get<std::string>()).string();
      snapshot = {{"settings", settings}, {"inputs", inputs}};
    }
    const fs::path dir = execute(name, snapshot, common.out, ctx);
    out << dir.string() << '\n';
    return 0;
  } catch (const Error& e) {
    return report_error(err, e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return report_error(err, "config", e.what());
  } catch (const std::exception& e) {
    return report_error(err, "internal", e.what());
  }
}

int run_command(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace accentkit
