#include "xinv/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ostream>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "xinv/classifier.hpp"
#include "xinv/dataset.hpp"
#include "xinv/digits.hpp"
#include "xinv/errors.hpp"
#include "xinv/inversion.hpp"
#include "xinv/io.hpp"
#include "xinv/metrics.hpp"
#include "xinv/npy.hpp"
#include "xinv/splits.hpp"

namespace xinv {

namespace {

using nlohmann::json;

const std::set<std::string> kKnownKeys = {
    "dataset",       "output_dir",       "seed",          "run_id",
    "data_dir",      "image_count",      "target_epochs", "inversion_epochs",
    "learning_rate", "batch_size",       "explanation",   "inversion",
    "surrogate",     "ssim_sigma",       "grid_rows",     "class_count"};

std::string join(const std::string& dir, const std::string& rel) { return dir + "/" + rel; }

void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << "\n";
}

}  // namespace

ExperimentConfig interpret_config(const Config& raw) {
  for (const auto& [k, v] : raw.items())
    if (!kKnownKeys.count(k)) throw config_error("unknown config key '" + k + "'");

  ExperimentConfig cfg;
  std::string dataset = raw.get("dataset");
  if (dataset == "mnist") {
    cfg.profile = zoo::mnist();
  } else if (dataset == "icv") {
    cfg.profile = zoo::icv(int(raw.get_int("class_count", 7)));
  } else if (dataset == "celeba") {
    if (!raw.has("class_count"))
      throw config_error("dataset celeba needs class_count (identities vary per subset)");
    cfg.profile = zoo::celeba(int(raw.get_int("class_count", 0)));
  } else {
    throw config_error("unknown dataset profile '" + dataset + "' (mnist, icv, celeba)");
  }

  cfg.output_dir = raw.get("output_dir");
  cfg.data_dir = raw.get("data_dir", "");
  if (dataset != "mnist" && cfg.data_dir.empty())
    throw config_error("profile '" + dataset +
                       "' has no local data source; only mnist digits are synthesized -- "
                       "set data_dir to an image collection");

  cfg.seed = uint64_t(raw.get_int("seed", 1));
  cfg.image_count = raw.get_int("image_count", 1500);
  if (cfg.image_count < 50)
    throw config_error("image_count below 50 leaves no usable 50/40/10 split");
  cfg.target_epochs = int(raw.get_int("target_epochs", 6));
  cfg.inversion_epochs = int(raw.get_int("inversion_epochs", 6));
  cfg.learning_rate = raw.get_real("learning_rate", 1e-3);
  cfg.batch_size = int(raw.get_int("batch_size", 32));
  cfg.ssim_sigma = raw.get_real("ssim_sigma", 1.5);
  if (!(cfg.ssim_sigma > 0)) throw config_error("ssim_sigma must be positive");
  cfg.grid_rows = int(raw.get_int("grid_rows", 6));
  if (cfg.grid_rows < 1) throw config_error("grid_rows must be at least 1");

  std::string expl = raw.get("explanation", "none");
  if (expl != "none") cfg.explanation = parse_explanation(expl);
  cfg.inversion = parse_arch(raw.get("inversion", "flatten_unet"));
  std::string surr = raw.get("surrogate", "off");
  if (surr != "off") cfg.surrogate = parse_surrogate_mode(surr);

  if (cfg.surrogate) {
    if (cfg.explanation)
      throw config_error(
          "surrogate runs reconstruct grad_cam maps internally; drop the 'explanation' key");
    if (cfg.inversion == InversionArch::prediction_only)
      throw config_error(
          "surrogate mode feeds reconstructed CAMs into the inverter; prediction_only has no "
          "explanation input");
  } else if (cfg.inversion == InversionArch::prediction_only) {
    if (cfg.explanation)
      throw config_error(
          "prediction_only ignores explanations; drop the 'explanation' key so the config "
          "names exactly one run");
  } else if (!cfg.explanation) {
    throw config_error(std::string(arch_name(cfg.inversion)) +
                       " consumes explanations; set the 'explanation' key");
  }

  cfg.run_id = raw.get("run_id", "");
  if (cfg.run_id.empty()) {
    std::string what = cfg.surrogate       ? surrogate_mode_name(*cfg.surrogate)
                       : cfg.explanation   ? explanation_name(*cfg.explanation)
                                           : "pred_only";
    cfg.run_id = cfg.profile.name + "-" + what + "-" + arch_name(cfg.inversion) + "-s" +
                 std::to_string(cfg.seed);
  }
  cfg.config_hash = raw.hash();
  cfg.canonical_text = raw.canonical();
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  return interpret_config(Config::parse_file(path));
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "train-target", "breach",  "train-inversion", "train-surrogate",
      "evaluate",     "analyze", "report"};
  return names;
}

RunManifest load_manifest(const std::string& dir) {
  RunManifest m;
  std::string path = join(dir, "manifest.json");
  if (!file_exists(path)) return m;
  auto bytes = read_file(path);
  json j = json::parse(bytes.begin(), bytes.end());
  m.config_hash = j.value("config_hash", "");
  m.run_id = j.value("run_id", "");
  m.split_digest = j.value("split_digest", "");
  json stages = j.value("stages", json::object());
  for (auto& [name, sj] : stages.items()) {
    StageRecord rec;
    rec.done = sj.value("done", false);
    rec.seconds = sj.value("seconds", 0.0);
    for (auto& a : sj.value("artifacts", json::array())) rec.artifacts.push_back(a);
    m.stages[name] = rec;
  }
  return m;
}

void save_manifest(const std::string& dir, const RunManifest& m) {
  json j;
  j["config_hash"] = m.config_hash;
  j["run_id"] = m.run_id;
  j["split_digest"] = m.split_digest;
  json stages = json::object();
  for (const auto& [name, rec] : m.stages) {
    json sj;
    sj["done"] = rec.done;
    sj["seconds"] = rec.seconds;
    sj["artifacts"] = rec.artifacts;
    stages[name] = sj;
  }
  j["stages"] = stages;
  std::string text = j.dump(2) + "\n";
  write_file(join(dir, "manifest.json"), text.data(), text.size());
}

namespace {

struct Ctx {
  const ExperimentConfig& cfg;
  std::string dir;
  LabeledImages data;
  SplitPlan plan;
  std::ostream* log = nullptr;
};

LabeledImages build_corpus(const ExperimentConfig& cfg) {
  if (!cfg.data_dir.empty()) return load_dataset(cfg.profile, cfg.data_dir);
  RawImages raw = make_digit_corpus(cfg.image_count, cfg.seed);
  LabeledImages out;
  out.labels = raw.labels;
  int hw = cfg.profile.image_hw;
  out.images.resize({raw.n, 1, hw, hw});
  for (int64_t i = 0; i < raw.n; ++i)
    preprocess_u8(raw.pixels.data() + i * raw.h * raw.w, int(raw.h), int(raw.w), cfg.profile,
                  out.images.data() + i * hw * hw);
  return out;
}

std::vector<int> take_labels(const std::vector<int>& all, const std::vector<int64_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int64_t i : idx) out.push_back(all[size_t(i)]);
  return out;
}

TensorF take_images(const TensorF& images, const std::vector<int64_t>& idx) {
  TensorF out(int64_t(idx.size()), images.dim(1), images.dim(2), images.dim(3));
  gather_rows(images, idx.data(), int64_t(idx.size()), out);
  return out;
}

void need(const RunManifest& m, const std::string& stage, const std::string& dep) {
  if (!m.stage_done(dep))
    throw prerequisite_error("stage '" + stage + "' needs '" + dep + "' first; run stage '" +
                             dep + "'");
}

TrainingConfig stage_train_cfg(const ExperimentConfig& cfg, int epochs, uint64_t seed) {
  TrainingConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.batch_size = cfg.batch_size;
  tc.epochs = epochs;
  tc.seed = seed;
  return tc;
}

json epochs_json(const TrainingLog& log) {
  json arr = json::array();
  for (const auto& e : log) {
    json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    if (std::isfinite(e.holdout)) j["holdout"] = e.holdout;
    arr.push_back(j);
  }
  return arr;
}

void write_json(const std::string& path, const json& j) {
  std::string text = j.dump(2) + "\n";
  write_file(path, text.data(), text.size());
}

// per-instance explanation collapsed to one plane; multi-map stacks take the
// pixelwise max so the plane keeps the union of salient support
TensorF collapse_plane(const TensorF& expl, int64_t row) {
  int64_t d = expl.dim(1), h = expl.dim(2), w = expl.dim(3);
  TensorF plane(h, w);
  const float* src = expl.data() + row * d * h * w;
  for (int64_t i = 0; i < h * w; ++i) plane[i] = src[i];
  for (int64_t c = 1; c < d; ++c)
    for (int64_t i = 0; i < h * w; ++i)
      plane[i] = std::max(plane[i], src[c * h * w + i]);
  return plane;
}

StageRecord do_train_target(Ctx& c, RunManifest& m) {
  StageRecord rec;
  Classifier target(zoo::target(c.cfg.profile), c.cfg.seed);
  TrainingConfig tc = stage_train_cfg(c.cfg, c.cfg.target_epochs, c.cfg.seed);
  TrainingLog tl = target.train(take_images(c.data.images, c.plan.target),
                                take_labels(c.data.labels, c.plan.target),
                                take_images(c.data.images, c.plan.attack_test),
                                take_labels(c.data.labels, c.plan.attack_test), tc, c.log);
  target.save(join(c.dir, "target.ckpt"));
  write_json(join(c.dir, "target_log.json"), epochs_json(tl));
  m.split_digest = c.plan.digest();
  rec.artifacts = {"target.ckpt", "target_log.json"};
  return rec;
}

StageRecord do_breach(Ctx& c, RunManifest& m) {
  need(m, "breach", "train-target");
  StageRecord rec;
  Classifier target = Classifier::load(join(c.dir, "target.ckpt"));
  std::optional<ExplanationKind> kind;
  if (!c.cfg.surrogate && c.cfg.inversion != InversionArch::prediction_only)
    kind = c.cfg.explanation;
  BreachSet set =
      make_breach(target, c.data.images, c.plan.attack_train, kind, c.plan.digest());
  set.run_id = c.cfg.run_id;
  save_breach(join(c.dir, "breach"), set);
  rec.artifacts = {"breach"};
  return rec;
}

StageRecord do_train_inversion(Ctx& c, RunManifest& m) {
  if (c.cfg.surrogate)
    throw config_error("this config attacks through a surrogate; run train-surrogate instead");
  need(m, "train-inversion", "breach");
  StageRecord rec;
  BreachSet breach = load_breach(join(c.dir, "breach"));
  Shape3 expl_shape{};
  std::string kind_name;
  if (c.cfg.explanation) {
    kind_name = explanation_name(*c.cfg.explanation);
    expl_shape = explanation_shape(*c.cfg.explanation, zoo::target(c.cfg.profile));
  }
  InversionModel model = build_inversion_model(c.cfg.inversion, c.cfg.profile, expl_shape,
                                               kind_name, c.cfg.seed + 2);
  TrainingConfig tc = stage_train_cfg(c.cfg, c.cfg.inversion_epochs, c.cfg.seed + 2);
  TrainingLog tl = train_inversion(model, breach, c.data.images, tc, c.log);
  save_inversion(model, join(c.dir, "inversion.ckpt"));
  write_json(join(c.dir, "inversion_log.json"), epochs_json(tl));
  rec.artifacts = {"inversion.ckpt", "inversion_log.json"};
  return rec;
}

StageRecord do_train_surrogate(Ctx& c, RunManifest& m) {
  if (!c.cfg.surrogate)
    throw config_error(
        "this config attacks breached explanations directly; run train-inversion instead");
  need(m, "train-surrogate", "breach");
  StageRecord rec;
  BreachSet breach = load_breach(join(c.dir, "breach"));
  SurrogateBundle b =
      make_surrogate_bundle(c.cfg.profile, c.cfg.inversion, *c.cfg.surrogate, c.cfg.seed);
  b.run_id = c.cfg.run_id;
  TrainingConfig tc = stage_train_cfg(c.cfg, c.cfg.inversion_epochs, c.cfg.seed);
  json logs;
  logs["surrogate_target"] =
      epochs_json(train_surrogate_target(b, c.data.images, c.data.labels, c.plan, tc, c.log));
  logs["explanation_inverter"] =
      epochs_json(train_explanation_inverter(b, breach, c.data.images, c.plan, tc, c.log));
  logs["image_inverter"] =
      epochs_json(train_image_inverter(b, breach, c.data.images, c.plan, tc, c.log));
  save_surrogate(join(c.dir, "surrogate"), b);
  write_json(join(c.dir, "surrogate_log.json"), logs);
  rec.artifacts = {"surrogate", "surrogate_log.json"};
  return rec;
}

TensorF one_row(const TensorF& batch, int64_t i) {
  int64_t per = batch.numel() / batch.dim(0);
  std::vector<int64_t> dims = batch.dims();
  dims.erase(dims.begin());
  TensorF out;
  out.resize(dims);
  std::memcpy(out.data(), batch.data() + i * per, sizeof(float) * size_t(per));
  return out;
}

StageRecord do_evaluate(Ctx& c, RunManifest& m) {
  if (c.cfg.surrogate)
    need(m, "evaluate", "train-surrogate");
  else
    need(m, "evaluate", "train-inversion");
  if (int64_t(c.plan.attack_test.size()) < 2)
    throw validation_error("evaluation needs at least two attack-test rows; raise image_count");
  StageRecord rec;

  Classifier target = Classifier::load(join(c.dir, "target.ckpt"));
  std::optional<ExplanationKind> kind;
  if (!c.cfg.surrogate && c.cfg.inversion != InversionArch::prediction_only)
    kind = c.cfg.explanation;
  // the attacker-visible tuples for the held-out rows, captured through the
  // same normalization path as the breach store
  BreachSet probe = make_breach(target, c.data.images, c.plan.attack_test, kind, c.plan.digest());
  probe.run_id = c.cfg.run_id;

  TensorF recon;
  if (c.cfg.surrogate) {
    SurrogateBundle b = load_surrogate(join(c.dir, "surrogate"));
    recon = attack_nonexplainable(b, probe.predictions);
  } else {
    std::string kind_name = kind ? explanation_name(*kind) : "";
    InversionModel model =
        load_inversion(join(c.dir, "inversion.ckpt"), c.cfg.inversion, kind_name);
    recon = invert(model, probe);
  }

  // evaluation classifier: target architecture, trained on attacker-side
  // originals only, never on reconstructions
  Classifier eval_model(zoo::target(c.cfg.profile), c.cfg.seed + 9);
  TrainingConfig tc = stage_train_cfg(c.cfg, c.cfg.target_epochs, c.cfg.seed + 9);
  TrainingLog el = eval_model.train(take_images(c.data.images, c.plan.attack_train),
                                    take_labels(c.data.labels, c.plan.attack_train),
                                    take_images(c.data.images, c.plan.attack_test),
                                    take_labels(c.data.labels, c.plan.attack_test), tc, c.log);
  eval_model.save(join(c.dir, "eval_model.ckpt"));
  write_json(join(c.dir, "eval_log.json"), epochs_json(el));

  TensorF originals = take_images(c.data.images, c.plan.attack_test);
  std::vector<int> labels = take_labels(c.data.labels, c.plan.attack_test);
  std::vector<int> attack_class = eval_model.predict_class(recon);
  std::vector<double> embed = embedding_similarity_rows(eval_model, originals, recon);

  int64_t n = int64_t(c.plan.attack_test.size());
  std::vector<MetricRow> rows;
  for (int64_t i = 0; i < n; ++i) {
    int64_t inst = c.plan.attack_test[size_t(i)];
    TensorF o = one_row(originals, i), r = one_row(recon, i);
    rows.push_back({c.cfg.run_id, inst, "similarity", pixelwise_similarity(o, r)});
    rows.push_back({c.cfg.run_id, inst, "ssim", ssim(o, r, c.cfg.ssim_sigma)});
    rows.push_back({c.cfg.run_id, inst, "psnr", psnr(o, r)});
    rows.push_back({c.cfg.run_id, inst, "embedding", embed[size_t(i)]});
    rows.push_back({c.cfg.run_id, inst, "attack_correct",
                    attack_class[size_t(i)] == labels[size_t(i)] ? 1.0 : 0.0});
  }
  write_metric_rows(join(c.dir, "per_instance.csv"), rows);

  json aggs;
  for (const char* name : {"similarity", "ssim", "psnr", "embedding", "attack_correct"}) {
    std::vector<double> vals;
    for (const auto& r : rows)
      if (r.metric == name && std::isfinite(r.value)) vals.push_back(r.value);
    if (int64_t(vals.size()) < 2) {
      log_line(c.log, std::string("[evaluate] fewer than two finite '") + name +
                          "' rows; aggregate skipped");
      continue;
    }
    Aggregate a = aggregate(vals);
    aggs[name] = {{"mean", a.mean}, {"ci90", a.ci90}, {"n", a.n}};
  }
  json out;
  out["run_id"] = c.cfg.run_id;
  out["config_hash"] = c.cfg.config_hash;
  out["attack_test_rows"] = n;
  out["metrics"] = aggs;
  write_json(join(c.dir, "aggregates.json"), out);

  npy_save<float>(join(c.dir, "reconstructions.npy"), recon.dims(), recon.data());
  npy_save<float>(join(c.dir, "predictions.npy"), probe.predictions.dims(),
                  probe.predictions.data());
  rec.artifacts = {"per_instance.csv", "aggregates.json", "reconstructions.npy",
                   "predictions.npy",  "eval_model.ckpt", "eval_log.json"};
  if (probe.has_explanations()) {
    npy_save<float>(join(c.dir, "explanations.npy"), probe.explanations.dims(),
                    probe.explanations.data());
    rec.artifacts.push_back("explanations.npy");
  }
  return rec;
}

TensorF npy_to_tensor(const std::string& path) {
  Npy n = npy_load(path);
  TensorF t;
  t.resize(n.shape);
  std::memcpy(t.data(), n.as<float>(), sizeof(float) * size_t(t.numel()));
  return t;
}

void write_factor_csv(const std::string& path, const std::string& run_id,
                      const std::string& factor,
                      const std::vector<std::array<double, 4>>& rows) {
  std::string out = "run_id,instance,factor,value,ssim,attack_correct\n";
  char buf[256];
  for (const auto& r : rows) {
    snprintf(buf, sizeof buf, "%s,%lld,%s,%.17g,%.17g,%d\n", run_id.c_str(),
             (long long)(r[0]), factor.c_str(), r[1], r[2], int(r[3]));
    out += buf;
  }
  write_file(path, out.data(), out.size());
}

StageRecord do_analyze(Ctx& c, RunManifest& m) {
  need(m, "analyze", "evaluate");
  StageRecord rec;
  auto metric_rows = read_metric_rows(join(c.dir, "per_instance.csv"));
  std::map<int64_t, double> ssim_of, correct_of;
  for (const auto& r : metric_rows) {
    if (r.metric == "ssim") ssim_of[r.instance] = r.value;
    if (r.metric == "attack_correct") correct_of[r.instance] = r.value;
  }
  TensorF preds = npy_to_tensor(join(c.dir, "predictions.npy"));

  int64_t n = int64_t(c.plan.attack_test.size());
  std::vector<std::array<double, 4>> confidence, target_acc, relevance, typicalness;
  for (int64_t i = 0; i < n; ++i) {
    int64_t inst = c.plan.attack_test[size_t(i)];
    double top = 0;
    int64_t arg = 0;
    for (int64_t k = 0; k < preds.dim(1); ++k)
      if (preds.at2(i, k) > top) top = preds.at2(i, k), arg = k;
    confidence.push_back({double(inst), top, ssim_of[inst], correct_of[inst]});
    target_acc.push_back({double(inst), arg == c.data.labels[size_t(inst)] ? 1.0 : 0.0,
                          ssim_of[inst], correct_of[inst]});
  }

  std::string expl_path = join(c.dir, "explanations.npy");
  if (file_exists(expl_path)) {
    TensorF expl = npy_to_tensor(expl_path);
    int64_t eh = expl.dim(2), ew = expl.dim(3);
    int64_t hw = c.cfg.profile.image_hw;

    // class-mean maps come from the breach store (attack-train rows only)
    BreachSet breach = load_breach(join(c.dir, "breach"));
    std::vector<TensorF> mu(size_t(c.cfg.profile.class_count));
    std::vector<int64_t> mu_n(size_t(c.cfg.profile.class_count), 0);
    for (auto& t : mu) {
      t.resize({eh, ew});
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0;
    }
    for (int64_t r = 0; r < breach.count(); ++r) {
      int cls = c.data.labels[size_t(breach.source_indices[size_t(r)])];
      TensorF plane = collapse_plane(breach.explanations, r);
      for (int64_t i = 0; i < plane.numel(); ++i) mu[size_t(cls)][i] += plane[i];
      ++mu_n[size_t(cls)];
    }
    for (size_t cls = 0; cls < mu.size(); ++cls)
      if (mu_n[cls])
        for (int64_t i = 0; i < mu[cls].numel(); ++i) mu[cls][i] /= float(mu_n[cls]);

    int64_t dropped = 0;
    for (int64_t i = 0; i < n; ++i) {
      int64_t inst = c.plan.attack_test[size_t(i)];
      TensorF plane = collapse_plane(expl, i);

      // salient-region agreement against the lit pixels of the original
      TensorF mask(hw, hw);
      int64_t per = c.data.images.numel() / c.data.count();
      const float* img = c.data.images.data() + inst * per;
      for (int64_t p = 0; p < hw * hw; ++p) mask[p] = img[p] > 0 ? 1.f : 0.f;
      TensorF small = shrink_mask(mask, eh, ew);
      relevance.push_back(
          {double(inst), explanation_relevance(plane, small), ssim_of[inst], correct_of[inst]});

      int cls = c.data.labels[size_t(inst)];
      if (mu_n[size_t(cls)] == 0) {
        ++dropped;
        continue;
      }
      double pcc = explanation_typicalness(plane, mu[size_t(cls)]);
      if (!std::isfinite(pcc)) {
        ++dropped;
        continue;
      }
      typicalness.push_back({double(inst), pcc, ssim_of[inst], correct_of[inst]});
    }
    if (dropped)
      log_line(c.log, "[analyze] " + std::to_string(dropped) +
                          " typicalness rows dropped (constant map or empty class)");
  } else {
    log_line(c.log,
             "[analyze] no explanation artifacts in this run; relevance and typicalness "
             "exports are empty");
  }

  write_factor_csv(join(c.dir, "factor_confidence.csv"), c.cfg.run_id, "confidence", confidence);
  write_factor_csv(join(c.dir, "factor_target_accuracy.csv"), c.cfg.run_id, "target_accuracy",
                   target_acc);
  write_factor_csv(join(c.dir, "factor_relevance.csv"), c.cfg.run_id, "relevance", relevance);
  write_factor_csv(join(c.dir, "factor_typicalness.csv"), c.cfg.run_id, "typicalness",
                   typicalness);
  rec.artifacts = {"factor_confidence.csv", "factor_target_accuracy.csv",
                   "factor_relevance.csv", "factor_typicalness.csv"};
  return rec;
}

// bar chart with 90% confidence whiskers; values expected in [0, top]
void draw_bars(const std::string& path, const std::vector<std::string>& names,
               const std::vector<double>& means, const std::vector<double>& cis, double top,
               const std::string& title) {
  int k = int(names.size());
  int bw = 84, gap = 36, left = 70, base = 380, head = 56;
  int width = left + k * (bw + gap) + gap;
  cv::Mat img(base + 60, std::max(width, 320), CV_8UC3, cv::Scalar(255, 255, 255));
  double scale = (base - head) / top;

  for (int g = 0; g <= 4; ++g) {
    double v = top * g / 4.0;
    int y = base - int(v * scale);
    cv::line(img, {left - 6, y}, {img.cols - 10, y}, cv::Scalar(225, 225, 225), 1);
    char lab[32];
    snprintf(lab, sizeof lab, "%.2f", v);
    cv::putText(img, lab, {6, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.42, cv::Scalar(90, 90, 90),
                1);
  }
  for (int i = 0; i < k; ++i) {
    int x0 = left + gap + i * (bw + gap);
    int h = int(std::clamp(means[size_t(i)], 0.0, top) * scale);
    cv::rectangle(img, {x0, base - h}, {x0 + bw, base}, cv::Scalar(180, 119, 31), cv::FILLED);
    int cx = x0 + bw / 2;
    int y1 = base - int(std::clamp(means[size_t(i)] + cis[size_t(i)], 0.0, top) * scale);
    int y2 = base - int(std::clamp(means[size_t(i)] - cis[size_t(i)], 0.0, top) * scale);
    cv::line(img, {cx, y1}, {cx, y2}, cv::Scalar(40, 40, 40), 2);
    cv::line(img, {cx - 10, y1}, {cx + 10, y1}, cv::Scalar(40, 40, 40), 2);
    cv::line(img, {cx - 10, y2}, {cx + 10, y2}, cv::Scalar(40, 40, 40), 2);
    char val[32];
    snprintf(val, sizeof val, "%.3f", means[size_t(i)]);
    cv::putText(img, val, {x0 + 4, base - h - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(60, 60, 60), 1);
    cv::putText(img, names[size_t(i)], {x0 - 6, base + 24}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(20, 20, 20), 1);
  }
  cv::putText(img, title, {left, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.6, cv::Scalar(20, 20, 20),
              1);
  if (!cv::imwrite(path, img)) throw io_error("could not write chart '" + path + "'");
}

cv::Mat plane_to_u8(const float* px, int64_t c, int64_t h, int64_t w) {
  cv::Mat out(int(h), int(w), CV_8UC1);
  // first channel carries the picture for every profile this pipeline runs
  (void)c;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      out.at<uint8_t>(int(y), int(x)) =
          uint8_t(std::clamp(px[y * w + x], 0.f, 1.f) * 255.f + 0.5f);
  return out;
}

StageRecord do_report(Ctx& c, RunManifest& m) {
  need(m, "report", "evaluate");
  StageRecord rec;
  ensure_dir(join(c.dir, "report"));
  auto bytes = read_file(join(c.dir, "aggregates.json"));
  json aggs = json::parse(bytes.begin(), bytes.end())["metrics"];

  std::vector<std::string> names;
  std::vector<double> means, cis;
  for (const char* name : {"similarity", "ssim", "embedding", "attack_correct"}) {
    if (!aggs.contains(name)) {
      log_line(c.log, std::string("[report] no '") + name + "' aggregate; bar omitted");
      continue;
    }
    names.push_back(name);
    means.push_back(aggs[name]["mean"]);
    cis.push_back(aggs[name]["ci90"]);
  }
  if (!names.empty()) {
    draw_bars(join(c.dir, "report/bars.png"), names, means, cis, 1.0,
              c.cfg.run_id + "  (whiskers: 90% CI)");
    rec.artifacts.push_back("report/bars.png");
  }
  if (aggs.contains("psnr")) {
    double mean = aggs["psnr"]["mean"], ci = aggs["psnr"]["ci90"];
    double top = std::max(1.0, std::ceil((mean + ci) * 1.25));
    draw_bars(join(c.dir, "report/bars_psnr.png"), {"psnr"}, {mean}, {ci}, top,
              c.cfg.run_id + "  psnr dB  (whiskers: 90% CI)");
    rec.artifacts.push_back("report/bars_psnr.png");
  } else {
    log_line(c.log, "[report] no 'psnr' aggregate; chart omitted");
  }

  TensorF recon = npy_to_tensor(join(c.dir, "reconstructions.npy"));
  int rows = int(std::min<int64_t>(c.cfg.grid_rows, recon.dim(0)));
  int64_t ch = recon.dim(1), h = recon.dim(2), w = recon.dim(3);
  int s = 4, gap = 6;
  cv::Mat grid(gap + rows * (int(h) * s + gap), gap + 2 * (int(w) * s + gap), CV_8UC1,
               cv::Scalar(40));
  for (int r = 0; r < rows; ++r) {
    int64_t inst = c.plan.attack_test[size_t(r)];
    const float* orig =
        c.data.images.data() + inst * c.data.images.numel() / c.data.count();
    cv::Mat left = plane_to_u8(orig, ch, h, w);
    cv::Mat right = plane_to_u8(recon.data() + r * ch * h * w, ch, h, w);
    for (int side = 0; side < 2; ++side) {
      cv::Mat big;
      cv::resize(side ? right : left, big, {}, s, s, cv::INTER_NEAREST);
      big.copyTo(grid(cv::Rect(gap + side * (int(w) * s + gap), gap + r * (int(h) * s + gap),
                               int(w) * s, int(h) * s)));
    }
  }
  if (!cv::imwrite(join(c.dir, "report/grid.png"), grid))
    throw io_error("could not write reconstruction grid");
  rec.artifacts.push_back("report/grid.png");

  json summary;
  summary["run_id"] = c.cfg.run_id;
  summary["config_hash"] = c.cfg.config_hash;
  summary["split_digest"] = m.split_digest;
  summary["metrics"] = aggs;
  json secs;
  for (const auto& [name, srec] : m.stages)
    if (srec.done) secs[name] = srec.seconds;
  summary["stage_seconds"] = secs;
  write_json(join(c.dir, "report/summary.json"), summary);
  rec.artifacts.push_back("report/summary.json");
  return rec;
}

}  // namespace

RunManifest run_stage(const ExperimentConfig& cfg, const std::string& stage,
                      std::ostream* log) {
  const auto& known = stage_names();
  if (std::find(known.begin(), known.end(), stage) == known.end()) {
    std::string all;
    for (const auto& s : known) all += (all.empty() ? "" : ", ") + s;
    throw config_error("unknown stage '" + stage + "' (" + all + ")");
  }

  ensure_dir(cfg.output_dir);
  RunManifest m = load_manifest(cfg.output_dir);
  if (m.config_hash.empty()) {
    m.config_hash = cfg.config_hash;
    m.run_id = cfg.run_id;
  } else if (m.config_hash != cfg.config_hash) {
    throw config_error("output_dir '" + cfg.output_dir + "' belongs to config hash " +
                       m.config_hash.substr(0, 12) + ", this config hashes to " +
                       cfg.config_hash.substr(0, 12) + "; use a fresh output_dir");
  }
  if (m.stage_done(stage)) {
    log_line(log, "[" + stage + "] already complete; nothing to do");
    return m;
  }

  Ctx c{cfg, cfg.output_dir, build_corpus(cfg), {}, log};
  c.plan = make_splits(c.data.count(), cfg.seed);
  if (!m.split_digest.empty() && m.split_digest != c.plan.digest())
    throw validation_error("stored split digest does not match this config's corpus");

  log_line(log, "[" + stage + "] running");
  auto t0 = std::chrono::steady_clock::now();
  StageRecord rec;
  if (stage == "train-target")
    rec = do_train_target(c, m);
  else if (stage == "breach")
    rec = do_breach(c, m);
  else if (stage == "train-inversion")
    rec = do_train_inversion(c, m);
  else if (stage == "train-surrogate")
    rec = do_train_surrogate(c, m);
  else if (stage == "evaluate")
    rec = do_evaluate(c, m);
  else if (stage == "analyze")
    rec = do_analyze(c, m);
  else
    rec = do_report(c, m);
  rec.done = true;
  rec.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // canonical config copy for provenance, written alongside the first stage
  if (!file_exists(join(cfg.output_dir, "config.txt")))
    write_file(join(cfg.output_dir, "config.txt"), cfg.canonical_text.data(),
               cfg.canonical_text.size());

  m.stages[stage] = rec;
  save_manifest(cfg.output_dir, m);
  log_line(log, "[" + stage + "] done in " + std::to_string(rec.seconds) + "s");
  return m;
}

RunManifest run_all(const ExperimentConfig& cfg, std::ostream* log) {
  RunManifest m;
  for (const auto& stage : stage_names()) {
    if (stage == "train-inversion" && cfg.surrogate) continue;
    if (stage == "train-surrogate" && !cfg.surrogate) continue;
    m = run_stage(cfg, stage, log);
  }
  return m;
}

}  // namespace xinv
