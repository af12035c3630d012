#include "xinv/surrogate.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <unordered_set>

#include "json.hpp"
#include "xinv/errors.hpp"
#include "xinv/io.hpp"

namespace fs = std::filesystem;

namespace xinv {

const char* surrogate_mode_name(SurrogateMode m) {
  return m == SurrogateMode::rs_cam ? "rs_cam" : "s_cam";
}

SurrogateMode parse_surrogate_mode(const std::string& s) {
  if (s == "rs_cam") return SurrogateMode::rs_cam;
  if (s == "s_cam") return SurrogateMode::s_cam;
  throw config_error("unknown surrogate mode '" + s + "' (rs_cam, s_cam)");
}

SurrogateBundle make_surrogate_bundle(const DatasetProfile& profile, InversionArch arch,
                                      SurrogateMode mode, uint64_t seed) {
  if (arch == InversionArch::prediction_only)
    throw config_error(
        "the surrogate attack exists to feed CAMs into the inverter; "
        "prediction_only has no explanation input");
  SurrogateBundle b;
  b.profile = profile;
  b.arch = arch;
  b.mode = mode;
  b.seed = seed;
  b.cam_shape = explanation_shape(ExplanationKind::grad_cam, zoo::target(profile));
  return b;
}

namespace {

// Every stage consumes the same prediction-only breach over attack_train
// rows; anything else (target rows, true-target explanations, a different
// split or target) is a hygiene violation, not a recoverable input.
void check_attack_provenance(SurrogateBundle& b, const BreachSet& breach,
                             const SplitPlan& plan) {
  std::string digest = plan.digest();
  if (b.split_digest.empty()) b.split_digest = digest;
  if (b.split_digest != digest)
    throw validation_error("surrogate stages must share one split plan; this bundle was "
                           "started under a different split digest");
  if (breach.split_digest != digest)
    throw validation_error("breach set was captured under a different split digest");
  if (!breach.explanation_kind.empty())
    throw validation_error("surrogate training consumes prediction-only breaches; this one "
                           "carries '" + breach.explanation_kind +
                           "' explanations from the true target");
  std::unordered_set<int64_t> allowed(plan.attack_train.begin(), plan.attack_train.end());
  for (int64_t i : breach.source_indices)
    if (!allowed.count(i))
      throw validation_error("breach row " + std::to_string(i) +
                             " is outside the attack-train split; surrogate training must "
                             "never touch target-split rows");
  if (b.target_checksum.empty()) b.target_checksum = breach.target_checksum;
  if (b.target_checksum != breach.target_checksum)
    throw validation_error("breach set comes from a different target model than the one "
                           "this bundle is attacking");
  if (b.run_id.empty()) b.run_id = breach.run_id;
}

void check_bundle_wiring(const SurrogateBundle& b) {
  if (b.explanation_inverter) {
    Shape3 out = b.explanation_inverter->spec().validate().back();
    if (!(out == b.cam_shape))
      throw shape_error("explanation inverter emits " + out.str() +
                        ", surrogate CAMs are " + b.cam_shape.str());
  }
  if (b.image_inverter) {
    const auto& inputs = b.image_inverter->net.spec().inputs;
    if (inputs.size() < 2 || !(inputs[1].shape == b.cam_shape))
      throw shape_error("image inverter explanation input does not match the surrogate "
                        "CAM shape " + b.cam_shape.str());
  }
}

void check_images_against(const DatasetProfile& p, const TensorF& images) {
  if (images.rank() != 4 || images.dim(1) != p.channels || images.dim(2) != p.image_hw ||
      images.dim(3) != p.image_hw)
    throw shape_error("dataset tensor does not match the " + p.name + " profile (" +
                      std::to_string(p.channels) + "x" + std::to_string(p.image_hw) + "x" +
                      std::to_string(p.image_hw) + ")");
}

// identity row split, last tenth carved off for logged validation
void carve_val(int64_t n, std::vector<int64_t>& train_idx, std::vector<int64_t>& val_idx) {
  int64_t n_val = n / 10;
  for (int64_t i = 0; i < n - n_val; ++i) train_idx.push_back(i);
  for (int64_t i = n - n_val; i < n; ++i) val_idx.push_back(i);
}

BreachSet surrogate_cams(SurrogateBundle& b, const BreachSet& breach, const TensorF& images,
                         const SplitPlan& plan) {
  BreachSet scam = make_breach(*b.surrogate_target, images, breach.source_indices,
                               ExplanationKind::grad_cam, plan.digest());
  Shape3 have{scam.explanations.dim(1), scam.explanations.dim(2), scam.explanations.dim(3)};
  if (!(have == b.cam_shape))
    throw shape_error("surrogate produced " + have.str() + " CAMs, bundle expects " +
                      b.cam_shape.str());
  return scam;
}

}  // namespace

TrainingLog train_surrogate_target(SurrogateBundle& b, const TensorF& images,
                                   const std::vector<int>& labels, const SplitPlan& plan,
                                   const TrainingConfig& cfg, std::ostream* log) {
  check_images_against(b.profile, images);
  if (images.dim(0) != plan.total)
    throw validation_error("split plan covers " + std::to_string(plan.total) +
                           " rows, dataset has " + std::to_string(images.dim(0)));
  if (int64_t(labels.size()) != images.dim(0))
    throw validation_error("label count does not match the image count");

  auto gather = [&](const std::vector<int64_t>& rows, TensorF& x, std::vector<int>& y) {
    x.resize({int64_t(rows.size()), images.dim(1), images.dim(2), images.dim(3)});
    gather_rows(images, rows.data(), int64_t(rows.size()), x);
    y.reserve(rows.size());
    for (int64_t r : rows) y.push_back(labels[size_t(r)]);
  };
  TensorF train_x, hold_x;
  std::vector<int> train_y, hold_y;
  gather(plan.attack_train, train_x, train_y);
  gather(plan.attack_test, hold_x, hold_y);

  b.split_digest = plan.digest();
  b.surrogate_target.emplace(zoo::target(b.profile), b.seed + 1);
  return b.surrogate_target->train(train_x, train_y, hold_x, hold_y, cfg, log);
}

TrainingLog train_explanation_inverter(SurrogateBundle& b, const BreachSet& breach,
                                       const TensorF& images, const SplitPlan& plan,
                                       const TrainingConfig& cfg, std::ostream* log) {
  if (!b.surrogate_target)
    throw config_error("stage order is fixed: train the surrogate target before the "
                       "explanation inverter (its CAMs are the regression targets)");
  check_images_against(b.profile, images);
  check_attack_provenance(b, breach, plan);

  BreachSet scam = surrogate_cams(b, breach, images, plan);

  b.explanation_inverter.emplace(zoo::explanation_inverter(b.profile, b.cam_shape),
                                 b.seed + 2);
  std::vector<int64_t> train_idx, val_idx;
  carve_val(breach.count(), train_idx, val_idx);
  std::vector<const TensorF*> inputs = {&breach.predictions};
  auto hist = train_reconstructor(*b.explanation_inverter, inputs, scam.explanations,
                                  train_idx, val_idx, cfg, log);
  check_bundle_wiring(b);
  return hist;
}

TrainingLog train_image_inverter(SurrogateBundle& b, const BreachSet& breach,
                                 const TensorF& images, const SplitPlan& plan,
                                 const TrainingConfig& cfg, std::ostream* log) {
  if (!b.surrogate_target)
    throw config_error("stage order is fixed: train the surrogate target before the "
                       "image inverter");
  if (b.mode == SurrogateMode::rs_cam && !b.explanation_inverter)
    throw config_error("rs_cam mode trains the image inverter on reconstructed CAMs; "
                       "train the explanation inverter first");
  check_images_against(b.profile, images);
  check_attack_provenance(b, breach, plan);

  BreachSet synth;
  synth.predictions = breach.predictions;
  synth.source_indices = breach.source_indices;
  synth.explanation_kind = b.explanation_kind;
  synth.target_checksum = breach.target_checksum;
  synth.split_digest = breach.split_digest;
  synth.run_id = breach.run_id;
  if (b.mode == SurrogateMode::rs_cam) {
    synth.explanations = reconstruct_surrogate_explanation(b, breach.predictions);
  } else {
    synth.explanations = surrogate_cams(b, breach, images, plan).explanations;
  }

  b.image_inverter = build_inversion_model(b.arch, b.profile, b.cam_shape,
                                           b.explanation_kind, b.seed + 3);
  auto hist = train_inversion(*b.image_inverter, synth, images, cfg, log);
  check_bundle_wiring(b);
  return hist;
}

TensorF reconstruct_surrogate_explanation(SurrogateBundle& b, const TensorF& predictions,
                                          int batch) {
  if (!b.explanation_inverter)
    throw prerequisite_error("no trained explanation inverter in this bundle yet");
  if (predictions.rank() != 2 || predictions.dim(1) != b.profile.class_count)
    throw shape_error("predictions must be [N, " + std::to_string(b.profile.class_count) +
                      "] rows");
  NetF& net = *b.explanation_inverter;
  int64_t n = predictions.dim(0), pc = predictions.dim(1);
  TensorF out(n, b.cam_shape.c, b.cam_shape.h, b.cam_shape.w);

  TensorF chunk;
  for (int64_t base = 0; base < n; base += batch) {
    int64_t m = std::min<int64_t>(batch, n - base);
    chunk.resize({m, pc});
    std::memcpy(chunk.data(), predictions.data() + base * pc, sizeof(float) * size_t(m * pc));
    net.forward({&chunk});
    const TensorF& y = net.output();
    float* dst = out.data() + base * b.cam_shape.numel();
    for (int64_t j = 0; j < y.numel(); ++j) dst[j] = std::max(y[j], 0.f);
  }
  return out;
}

TensorF attack_nonexplainable(SurrogateBundle& b, const TensorF& predictions, int batch) {
  if (!b.image_inverter)
    throw prerequisite_error("no trained image inverter in this bundle yet");
  BreachSet synth;
  synth.predictions = predictions;
  synth.explanations = reconstruct_surrogate_explanation(b, predictions, batch);
  synth.explanation_kind = b.explanation_kind;
  synth.target_checksum = b.target_checksum;
  synth.split_digest = b.split_digest;
  synth.run_id = b.run_id;
  synth.source_indices.resize(size_t(predictions.dim(0)));
  for (size_t i = 0; i < synth.source_indices.size(); ++i)
    synth.source_indices[i] = int64_t(i);
  return invert(*b.image_inverter, synth, batch);
}

void save_surrogate(const std::string& dir, const SurrogateBundle& b) {
  if (!b.complete())
    throw prerequisite_error("surrogate bundle is incomplete; train all three stages "
                             "before saving");
  check_bundle_wiring(b);
  fs::path d(dir);
  if (file_exists((d / "manifest.json").string()))
    throw io_error("surrogate store at " + dir + " is append-only; refusing to overwrite");
  ensure_dir(dir);

  b.surrogate_target->save((d / "surrogate_target.ckpt").string());
  b.explanation_inverter->save((d / "explanation_inverter.ckpt").string());
  save_inversion(*b.image_inverter, (d / "image_inverter.ckpt").string());

  nlohmann::json meta;
  meta["mode"] = surrogate_mode_name(b.mode);
  meta["arch"] = arch_name(b.arch);
  meta["explanation_kind"] = b.explanation_kind;
  meta["cam_shape"] = {b.cam_shape.c, b.cam_shape.h, b.cam_shape.w};
  meta["seed"] = b.seed;
  meta["profile"] = {{"name", b.profile.name},
                     {"image_hw", b.profile.image_hw},
                     {"channels", b.profile.channels},
                     {"class_count", b.profile.class_count}};
  meta["target_checksum"] = b.target_checksum;
  meta["split_digest"] = b.split_digest;
  meta["run_id"] = b.run_id;
  meta["surrogate_param_hash"] = b.surrogate_target->net().param_hash();
  for (const char* f : {"surrogate_target.ckpt", "explanation_inverter.ckpt",
                        "image_inverter.ckpt"})
    meta[std::string(f) + ".sha256"] = sha256_file((d / f).string());
  std::string text = meta.dump(2) + "\n";
  write_file((d / "manifest.json").string(), text.data(), text.size());
}

SurrogateBundle load_surrogate(const std::string& dir) {
  fs::path d(dir);
  auto bytes = read_file((d / "manifest.json").string());
  auto meta = nlohmann::json::parse(bytes.begin(), bytes.end());

  for (const char* f : {"surrogate_target.ckpt", "explanation_inverter.ckpt",
                        "image_inverter.ckpt"})
    if (meta.at(std::string(f) + ".sha256") != sha256_file((d / f).string()))
      throw io_error("surrogate store at " + dir + " fails its checksum (" + f + ")");

  DatasetProfile p;
  p.name = meta.at("profile").at("name").get<std::string>();
  p.image_hw = meta.at("profile").at("image_hw").get<int>();
  p.channels = meta.at("profile").at("channels").get<int>();
  p.class_count = meta.at("profile").at("class_count").get<int>();

  SurrogateBundle b = make_surrogate_bundle(
      p, parse_arch(meta.at("arch").get<std::string>()),
      parse_surrogate_mode(meta.at("mode").get<std::string>()), meta.at("seed").get<uint64_t>());
  b.target_checksum = meta.at("target_checksum").get<std::string>();
  b.split_digest = meta.at("split_digest").get<std::string>();
  b.run_id = meta.value("run_id", "");

  b.surrogate_target = Classifier::load((d / "surrogate_target.ckpt").string());
  b.explanation_inverter = NetF::load((d / "explanation_inverter.ckpt").string());
  b.image_inverter = load_inversion((d / "image_inverter.ckpt").string(), b.arch,
                                    b.explanation_kind);

  if (b.surrogate_target->net().param_hash() !=
      meta.at("surrogate_param_hash").get<std::string>())
    throw io_error("surrogate store at " + dir + " fails its checksum (surrogate params)");
  check_bundle_wiring(b);
  return b;
}

}  // namespace xinv
