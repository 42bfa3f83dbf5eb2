#include "accentkit/eval.hpp"

#include "accentkit/error.hpp"
#include "accentkit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace accentkit {
namespace {

// Mean-centred, unit-norm copy; nullopt for a constant vector.
std::optional<Eigen::VectorXd> standardize(std::span<const double> values) {
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  v.array() -= v.mean();
  const double norm = v.norm();
  if (!(norm > 0.0)) return std::nullopt;
  return Eigen::VectorXd(v / norm);
}

struct Accumulator {
  std::vector<double> sum;
  std::vector<int> count;

  explicit Accumulator(std::size_t layers) : sum(layers, 0.0), count(layers, 0) {}
  void add(std::size_t layer, double value) {
    sum[layer] += value;
    ++count[layer];
  }
  LayerValues means() const {
    LayerValues out(sum.size());
    for (std::size_t l = 0; l < sum.size(); ++l)
      if (count[l] > 0) out[l] = sum[l] / count[l];
    return out;
  }
};

using Standardized = std::vector<std::vector<std::optional<Eigen::VectorXd>>>;  // [image][layer]

Standardized standardize_all(const Model& model, std::span<const Image> images, std::span<const std::string> layers) {
  const auto records = forward_capture(model, images, layers);
  Standardized out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    for (const auto& name : layers) out[i].push_back(standardize(records[i].layers.at(name).values()));
  return out;
}

void add_pair(Accumulator& acc, const std::vector<std::optional<Eigen::VectorXd>>& a,
              const std::vector<std::optional<Eigen::VectorXd>>& b) {
  for (std::size_t l = 0; l < a.size(); ++l)
    if (a[l] && b[l]) acc.add(l, std::clamp(a[l]->dot(*b[l]), -1.0, 1.0));
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return a.dot(b) / (na * nb);
}

}  // namespace

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("pearson: vectors differ in length");
  if (a.empty()) return std::nullopt;
  const auto za = standardize(a);
  const auto zb = standardize(b);
  if (!za || !zb) return std::nullopt;
  return std::clamp(za->dot(*zb), -1.0, 1.0);
}

LayerValues path_correlation(const ActivationRecord& a, const ActivationRecord& b, std::span<const std::string> layers) {
  std::vector<std::string> order(layers.begin(), layers.end());
  if (order.empty()) {
    if (a.layers.size() != b.layers.size()) throw ConfigError("path_correlation: records hold different layer sets");
    for (const auto& [name, _] : a.layers) order.push_back(name);
  }
  LayerValues out;
  for (const auto& name : order) {
    const auto ia = a.layers.find(name);
    const auto ib = b.layers.find(name);
    if (ia == a.layers.end() || ib == b.layers.end())
      throw ConfigError("path_correlation: layer '" + name + "' missing from a record");
    out.push_back(pearson(ia->second.values(), ib->second.values()));
  }
  return out;
}

PathMeans path_means(const Model& model, std::span<const Image> naturals, std::span<const Image> accents,
                     std::span<const std::string> layers) {
  if (naturals.size() < 2) throw InsufficientDataError("path report needs at least 2 natural images per class");
  if (accents.size() != naturals.size()) throw ConfigError("accents must pair 1:1 with natural images");
  const Standardized nat = standardize_all(model, naturals, layers);
  const Standardized acc = standardize_all(model, accents, layers);
  Accumulator nn(layers.size()), an(layers.size()), as(layers.size());
  for (std::size_t i = 0; i < nat.size(); ++i) {
    for (std::size_t j = i + 1; j < nat.size(); ++j) add_pair(nn, nat[i], nat[j]);
    for (std::size_t j = 0; j < nat.size(); ++j) {
      if (j == i) {
        add_pair(as, acc[i], nat[j]);
      } else {
        add_pair(an, acc[i], nat[j]);
      }
    }
  }
  return {nn.means(), an.means(), as.means()};
}

std::optional<double> mean_defined(const LayerValues& values) {
  double sum = 0.0;
  int count = 0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / count;
}

PathReport classwise_path_report(const Model& model, const std::vector<std::vector<Image>>& class_images,
                                 const std::vector<std::vector<Image>>& accents, std::string lambda_tag,
                                 std::span<const std::string> layers) {
  if (class_images.size() != accents.size()) throw ConfigError("accents must be grouped like the class images");
  if (class_images.empty()) throw InsufficientDataError("path report needs at least one class");
  PathReport report;
  report.lambda_tag = std::move(lambda_tag);
  if (layers.empty()) {
    report.layers = model.layer_names();
  } else {
    for (const auto& name : layers) model.layer_index(name);
    report.layers.assign(layers.begin(), layers.end());
  }
  for (std::size_t k = 0; k < class_images.size(); ++k)
    report.per_class.push_back(path_means(model, class_images[k], accents[k], report.layers));

  const std::size_t n_layers = report.layers.size();
  Accumulator nn(n_layers), an(n_layers), as(n_layers);
  for (const auto& m : report.per_class)
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (m.natural_natural[l]) nn.add(l, *m.natural_natural[l]);
      if (m.accent_natural[l]) an.add(l, *m.accent_natural[l]);
      if (m.accent_seed[l]) as.add(l, *m.accent_seed[l]);
    }
  report.overall = {nn.means(), an.means(), as.means()};
  return report;
}

LayerValues path_delta(const PathReport& report) {
  const auto& an = report.overall.accent_natural;
  const auto& nn = report.overall.natural_natural;
  LayerValues delta(an.size());
  for (std::size_t l = 0; l < an.size(); ++l)
    if (an[l] && nn[l]) delta[l] = *an[l] - *nn[l];
  return delta;
}

std::vector<std::vector<Image>> select_cohort(const Model& model, const Dataset& data, int per_class) {
  const int classes = static_cast<int>(data.class_names.size());
  const auto logits = predict_logits(model, data.images);
  std::vector<std::vector<Image>> cohort(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& z = logits[i];
    const int predicted = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    auto& bucket = cohort[static_cast<std::size_t>(data.labels[i])];
    if (predicted == data.labels[i] && static_cast<int>(bucket.size()) < per_class) bucket.push_back(data.images[i]);
  }
  for (int k = 0; k < classes; ++k)
    if (static_cast<int>(cohort[static_cast<std::size_t>(k)].size()) < per_class)
      throw InsufficientDataError("class " + std::to_string(k) + " has only " +
                                  std::to_string(cohort[static_cast<std::size_t>(k)].size()) +
                                  " correctly classified images");
  return cohort;
}

// ---------------------------------------------------------------------------

std::vector<std::string> full_schedule(const Model& model) {
  auto names = model.layer_names();
  std::reverse(names.begin(), names.end());
  return names;
}

RandomizationTable cascading_randomization_check(const Model& model, const Image& seed_image,
                                                 std::span<const FeatureDetector> detectors,
                                                 std::span<const std::string> schedule, const AccentConfig& cfg,
                                                 const RandomizationOptions& opts) {
  if (detectors.empty()) throw ConfigError("randomization check needs at least one detector");
  if (opts.floor_reruns < 1) throw ConfigError("randomization check needs at least one noise-floor rerun");
  std::vector<std::size_t> starts;
  for (const auto& name : schedule) {
    const std::size_t idx = model.layer_index(name);
    if (!starts.empty() && idx >= starts.back())
      throw ConfigError("randomization schedule must move strictly towards the input (at '" + name + "')");
    starts.push_back(idx);
  }
  std::vector<Model> models;
  models.reserve(starts.size());
  for (std::size_t s : starts) models.push_back(model.randomized_from(s, opts.weight_seed));

  // Per detector: base run, depths 0..S, then the intact reruns.
  const std::size_t depths = starts.size() + 1;
  const std::size_t per_det = 1 + depths + static_cast<std::size_t>(opts.floor_reruns);
  std::vector<Image> images(detectors.size() * per_det);
  parallel_for(images.size(), opts.workers, [&](std::size_t task) {
    const std::size_t d = task / per_det, k = task % per_det;
    AccentConfig run_cfg = cfg;
    run_cfg.detector = detectors[d];
    const Model* m = &model;
    if (k >= 2 && k < 1 + depths) m = &models[k - 2];
    if (k >= 1 + depths) run_cfg.seed = cfg.seed + (k - depths);
    images[task] = run_accentuation(*m, seed_image, run_cfg).image;
  });

  RandomizationTable table;
  for (std::size_t d = 0; d < detectors.size(); ++d) {
    const Image& base = images[d * per_det];
    for (std::size_t depth = 0; depth < depths; ++depth) {
      const Image& other = images[d * per_det + 1 + depth];
      RandomizationRow row;
      row.detector = d;
      row.depth = static_cast<int>(depth);
      if (depth > 0) row.start_layer = schedule[depth - 1];
      row.pixel_l2 = l2_distance(base.values(), other.values());
      row.reg_distance = reg_distance(model, base, other, cfg.reg_layer);
      table.rows.push_back(row);
    }
    double floor_pixel = 0.0, floor_reg = 0.0;
    for (int r = 0; r < opts.floor_reruns; ++r) {
      const Image& other = images[d * per_det + 1 + depths + static_cast<std::size_t>(r)];
      floor_pixel = std::max(floor_pixel, l2_distance(base.values(), other.values()));
      floor_reg = std::max(floor_reg, reg_distance(model, base, other, cfg.reg_layer));
    }
    table.noise_floor_pixel.push_back(floor_pixel);
    table.noise_floor_reg.push_back(floor_reg);
  }
  return table;
}

// ---------------------------------------------------------------------------

StripeImages stripe_images(Shape3 shape, double shade_a, double shade_b) {
  StripeImages out{Image(shape, shade_a), Image(shape, shade_b), Image(shape)};
  for (int c = 0; c < shape.channels; ++c)
    for (int y = 0; y < shape.height; ++y)
      for (int x = 0; x < shape.width; ++x) out.stripes.at(c, y, x) = x % 2 == 0 ? shade_a : shade_b;
  return out;
}

StripeVerdict stripe_test(const Model& model, double shade_a, double shade_b, std::string_view early_layer) {
  if (!(shade_a >= 0.0 && shade_a <= shade_b && shade_b <= 1.0))
    throw ConfigError("stripe test needs 0 <= shade_a <= shade_b <= 1");
  const std::size_t layer = model.layer_index(early_layer);
  const StripeImages imgs = stripe_images(model.input_shape(), shade_a, shade_b);

  StripeVerdict v;
  v.pixel = {l2_distance(imgs.stripes.values(), imgs.a.values()), l2_distance(imgs.stripes.values(), imgs.b.values()),
             l2_distance(imgs.a.values(), imgs.b.values())};
  const std::vector<Image> batch = {imgs.a, imgs.b, imgs.stripes};
  const ForwardPass pass = model.forward(to_feature_map(batch), layer);
  const FeatureMap& out = pass.outputs[layer];
  const Eigen::Index per = out.positions();
  const auto block = [&](int n) { return out.data.middleCols(n * per, per); };
  v.latent = {(block(2) - block(0)).norm(), (block(2) - block(1)).norm(), (block(0) - block(1)).norm()};
  if (shade_a == shade_b) {
    v.degenerate = true;
    return v;
  }
  if (!(v.pixel.stripe_a < v.pixel.a_b)) v.failures.push_back("pixel: d(stripe, a) < d(a, b) violated");
  if (!(v.pixel.stripe_b < v.pixel.a_b)) v.failures.push_back("pixel: d(stripe, b) < d(a, b) violated");
  if (!(v.latent.stripe_a > v.latent.a_b)) v.failures.push_back("latent: d(stripe, a) > d(a, b) violated");
  if (!(v.latent.stripe_b > v.latent.a_b)) v.failures.push_back("latent: d(stripe, b) > d(a, b) violated");
  return v;
}

// ---------------------------------------------------------------------------

ActivationScan scan_activations(const Model& model, std::string_view layer, std::span<const Image> images) {
  const std::size_t idx = model.layer_index(layer);
  if (!model.is_spatial(idx)) throw ConfigError("trial generation needs a spatial layer");
  if (images.empty()) throw InsufficientDataError("activation scan needs images");
  const Shape3& shape = model.layer_shape(idx);
  ActivationScan scan;
  scan.layer = std::string(layer);
  scan.channels = shape.channels;
  scan.height = shape.height;
  scan.width = shape.width;
  scan.images = static_cast<int>(images.size());
  scan.vectors.resize(shape.channels, static_cast<Eigen::Index>(images.size()) * shape.height * shape.width);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - start);
    const ForwardPass pass = model.forward(to_feature_map(images.subspan(start, n)), idx);
    const FeatureMap& out = pass.outputs[idx];
    scan.vectors.middleCols(static_cast<Eigen::Index>(start) * out.positions(), out.data.cols()) = out.data;
  }
  for (int r = 0; r < shape.height; ++r)
    for (int c = 0; c < shape.width; ++c) scan.boxes.push_back(model.receptive_field(idx, r, c));
  return scan;
}

std::size_t default_top_k(std::size_t crops) {
  const auto scaled = static_cast<std::size_t>(std::llround(static_cast<double>(crops) * 1000.0 / 2.45e6));
  return std::min(crops, std::max<std::size_t>(10, scaled));
}

TrialSet select_trials(const ActivationScan& scan, std::span<const int> units, const TrialOptions& opts) {
  const std::size_t crops = scan.crop_count();
  const int positions = scan.height * scan.width;
  TrialSet set;
  set.top_k = opts.top_k ? std::min(opts.top_k, crops) : default_top_k(crops);

  const auto crop_ref = [&](std::size_t i, double activation) {
    CropRef ref;
    ref.image = static_cast<int>(i / static_cast<std::size_t>(positions));
    const int pos = static_cast<int>(i % static_cast<std::size_t>(positions));
    ref.row = pos / scan.width;
    ref.col = pos % scan.width;
    ref.box = scan.boxes[static_cast<std::size_t>(pos)];
    ref.activation = activation;
    return ref;
  };
  const auto image_of = [&](std::size_t i) { return static_cast<int>(i / static_cast<std::size_t>(positions)); };
  const auto cos_to = [&](std::size_t i, std::size_t j) {
    return cosine(scan.vectors.col(static_cast<Eigen::Index>(i)), scan.vectors.col(static_cast<Eigen::Index>(j)));
  };

  for (int unit : units) {
    if (unit < 0 || unit >= scan.channels) throw ConfigError("unit index outside the scanned layer");
    const Eigen::RowVectorXd act = scan.vectors.row(unit);
    const auto skip = [&](const char* reason) { set.skipped.push_back({unit, reason}); };

    std::vector<std::size_t> order(crops);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return act(static_cast<Eigen::Index>(a)) > act(static_cast<Eigen::Index>(b));
    });
    const std::size_t e = order.front();
    if (!(act(static_cast<Eigen::Index>(e)) > 0.0)) {
      skip("no_positive_activation");
      continue;
    }

    std::optional<std::size_t> t;
    double cos_et = 2.0;
    for (std::size_t k = 0; k < set.top_k; ++k) {
      const std::size_t i = order[k];
      if (!(act(static_cast<Eigen::Index>(i)) > 0.0)) break;
      if (image_of(i) == image_of(e)) continue;
      const double c = cos_to(i, e);
      if (c < cos_et) {
        cos_et = c;
        t = i;
      }
    }
    if (!t) {
      skip("no_target");
      continue;
    }

    std::optional<std::size_t> inc;
    double cos_it = -2.0;
    for (std::size_t i = 0; i < crops; ++i) {
      if (act(static_cast<Eigen::Index>(i)) != 0.0) continue;
      if (image_of(i) == image_of(e) || image_of(i) == image_of(*t)) continue;
      const double c = cos_to(i, *t);
      if (std::isnan(c)) continue;
      if (c > cos_it) {
        cos_it = c;
        inc = i;
      }
    }
    if (!inc) {
      skip("no_incorrect");
      continue;
    }

    std::optional<std::size_t> cor;
    double cos_ct = 0.0;
    for (std::size_t i : order) {
      if (!(act(static_cast<Eigen::Index>(i)) > 0.0)) break;
      const int img = image_of(i);
      if (img == image_of(e) || img == image_of(*t) || img == image_of(*inc)) continue;
      const double c = cos_to(i, *t);
      if (std::isnan(c) || std::abs(c - cos_it) > opts.cosine_band) continue;
      cor = i;
      cos_ct = c;
      break;
    }
    if (!cor) {
      skip("no_correct");
      continue;
    }

    TrialSpec trial;
    trial.unit = unit;
    trial.detector.layer = scan.layer;
    trial.detector.direction.assign(static_cast<std::size_t>(scan.channels), 0.0);
    trial.detector.direction[static_cast<std::size_t>(unit)] = 1.0;
    trial.detector.reduction = Reduction::spatial_mean;
    trial.exemplar = crop_ref(e, act(static_cast<Eigen::Index>(e)));
    trial.target = crop_ref(*t, act(static_cast<Eigen::Index>(*t)));
    trial.correct = crop_ref(*cor, act(static_cast<Eigen::Index>(*cor)));
    trial.incorrect = crop_ref(*inc, act(static_cast<Eigen::Index>(*inc)));
    trial.cos_exemplar_target = cos_et;
    trial.cos_correct_target = cos_ct;
    trial.cos_incorrect_target = cos_it;
    set.trials.push_back(std::move(trial));
  }
  return set;
}

TrialSet generate_trials(const Model& model, std::string_view layer, std::span<const Image> images, int n_units,
                         const TrialOptions& opts) {
  const ActivationScan scan = scan_activations(model, layer, images);
  if (n_units < 1 || n_units > scan.channels) throw ConfigError("n_units must lie in [1, channels of the layer]");
  std::vector<int> units(static_cast<std::size_t>(n_units));
  std::iota(units.begin(), units.end(), 0);
  return select_trials(scan, units, opts);
}

std::vector<std::string> validate_trial(const Model& model, std::span<const Image> images, const TrialSpec& trial,
                                        double cosine_band) {
  std::vector<std::string> problems;
  const CropRef* crops[] = {&trial.exemplar, &trial.target, &trial.correct, &trial.incorrect};
  std::vector<int> sources;
  for (const CropRef* c : crops) {
    if (c->image < 0 || static_cast<std::size_t>(c->image) >= images.size()) {
      problems.push_back("crop references a missing image");
      return problems;
    }
    sources.push_back(c->image);
  }
  std::sort(sources.begin(), sources.end());
  if (std::adjacent_find(sources.begin(), sources.end()) != sources.end())
    problems.push_back("two crops share a source image");

  const std::vector<std::string> layer = {trial.detector.layer};
  std::vector<Eigen::VectorXd> vec;
  for (const CropRef* c : crops) {
    const auto rec = forward_capture(model, images.subspan(static_cast<std::size_t>(c->image), 1), layer);
    const Image& a = rec.front().layers.at(trial.detector.layer);
    Eigen::VectorXd v(a.channels());
    for (int ch = 0; ch < a.channels(); ++ch) v(ch) = a.at(ch, c->row, c->col);
    vec.push_back(v);
  }
  const auto unit_act = [&](const Eigen::VectorXd& v) { return v(trial.unit); };
  if (unit_act(vec[3]) != 0.0) problems.push_back("incorrect choice has nonzero activation");
  if (!(unit_act(vec[2]) > 0.0)) problems.push_back("correct choice does not activate the unit");
  const double cos_ct = cosine(vec[2], vec[1]);
  const double cos_it = cosine(vec[3], vec[1]);
  if (!(std::abs(cos_ct - cos_it) <= cosine_band + 1e-12))
    problems.push_back("correct/incorrect cosine-to-target gap " + std::to_string(std::abs(cos_ct - cos_it)) +
                       " exceeds the band");
  return problems;
}

Image crop_image(const Image& image, const PixelBox& box) {
  if (box.top < 0 || box.left < 0 || box.top + box.height > image.height() || box.left + box.width > image.width())
    throw ConfigError("crop box outside the image");
  Image out(image.channels(), box.height, box.width);
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < box.height; ++y)
      for (int x = 0; x < box.width; ++x) out.at(c, y, x) = image.at(c, box.top + y, box.left + x);
  return out;
}

}  // namespace accentkit
