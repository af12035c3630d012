#include "xinv/inversion.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>

#include "json.hpp"
#include "xinv/errors.hpp"
#include "xinv/io.hpp"
#include "xinv/npy.hpp"

namespace fs = std::filesystem;

namespace xinv {

BreachSet make_breach(Classifier& cls, const TensorF& images,
                      const std::vector<int64_t>& indices,
                      std::optional<ExplanationKind> kind, const std::string& split_digest,
                      int batch) {
  if (indices.empty()) throw validation_error("a breach needs at least one queried row");
  for (int64_t i : indices)
    if (i < 0 || i >= images.dim(0))
      throw validation_error("breach row " + std::to_string(i) + " outside the dataset (" +
                             std::to_string(images.dim(0)) + " rows)");
  int64_t n = int64_t(indices.size());
  int64_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  int classes = cls.spec().class_count;

  BreachSet out;
  out.predictions.resize({n, int64_t(classes)});
  out.explanation_kind = kind ? explanation_name(*kind) : "";
  out.target_checksum = cls.net().param_hash();
  out.split_digest = split_digest;
  out.source_indices = indices;

  Shape3 es{0, 0, 0};
  if (kind) {
    es = explanation_shape(*kind, cls.spec());
    out.explanations.resize({n, es.c, es.h, es.w});
  }

  TensorF chunk;
  for (int64_t base = 0; base < n; base += batch) {
    int64_t m = std::min<int64_t>(batch, n - base);
    chunk.resize({m, c, h, w});
    gather_rows(images, indices.data() + base, m, chunk);

    TensorF probs = cls.predict(chunk);
    std::memcpy(out.predictions.data() + base * classes, probs.data(),
                sizeof(float) * size_t(m * classes));

    if (kind) {
      std::vector<int> explained = argmax_rows(probs);
      TensorF maps = explain_batch(*kind, cls.net(), chunk, explained);
      normalize_per_map(maps);
      std::memcpy(out.explanations.data() + base * es.numel(), maps.data(),
                  sizeof(float) * size_t(m * es.numel()));
    }
  }
  return out;
}

void save_breach(const std::string& dir, const BreachSet& set) {
  fs::path d(dir);
  if (file_exists((d / "manifest.json").string()))
    throw io_error("breach store at " + dir + " is append-only; refusing to overwrite");
  ensure_dir(dir);

  npy_save((d / "predictions.npy").string(), set.predictions.dims(), set.predictions.data());
  npy_save((d / "source_indices.npy").string(), {int64_t(set.source_indices.size())},
           set.source_indices.data());
  if (set.has_explanations())
    npy_save((d / "explanations.npy").string(), set.explanations.dims(),
             set.explanations.data());

  nlohmann::json meta;
  meta["kind"] = set.explanation_kind;
  meta["count"] = set.count();
  meta["prediction_shape"] = set.predictions.dims();
  meta["explanation_shape"] =
      set.has_explanations() ? set.explanations.dims() : std::vector<int64_t>{};
  meta["target_checksum"] = set.target_checksum;
  meta["split_digest"] = set.split_digest;
  meta["run_id"] = set.run_id;
  meta["predictions_sha256"] = sha256_file((d / "predictions.npy").string());
  meta["source_indices_sha256"] = sha256_file((d / "source_indices.npy").string());
  if (set.has_explanations())
    meta["explanations_sha256"] = sha256_file((d / "explanations.npy").string());
  std::string text = meta.dump(2) + "\n";
  write_file((d / "manifest.json").string(), text.data(), text.size());
}

BreachSet load_breach(const std::string& dir) {
  fs::path d(dir);
  auto bytes = read_file((d / "manifest.json").string());
  auto meta = nlohmann::json::parse(bytes.begin(), bytes.end());

  auto check = [&](const char* file, const char* key) {
    if (meta.at(key) != sha256_file((d / file).string()))
      throw io_error("breach store at " + dir + " fails its checksum (" + file + ")");
  };
  check("predictions.npy", "predictions_sha256");
  check("source_indices.npy", "source_indices_sha256");

  BreachSet out;
  out.explanation_kind = meta.at("kind").get<std::string>();
  out.target_checksum = meta.at("target_checksum").get<std::string>();
  out.split_digest = meta.at("split_digest").get<std::string>();
  out.run_id = meta.value("run_id", "");

  Npy pred = npy_load((d / "predictions.npy").string());
  out.predictions.resize(pred.shape);
  std::memcpy(out.predictions.data(), pred.as<float>(),
              sizeof(float) * size_t(out.predictions.numel()));

  Npy idx = npy_load((d / "source_indices.npy").string());
  const int64_t* ip = idx.as<int64_t>();
  out.source_indices.assign(ip, ip + idx.count());

  if (!out.explanation_kind.empty() || file_exists((d / "explanations.npy").string())) {
    check("explanations.npy", "explanations_sha256");
    Npy ex = npy_load((d / "explanations.npy").string());
    out.explanations.resize(ex.shape);
    std::memcpy(out.explanations.data(), ex.as<float>(),
                sizeof(float) * size_t(out.explanations.numel()));
  }

  if (out.count() != int64_t(out.source_indices.size()) ||
      (out.has_explanations() && out.explanations.dim(0) != out.count()) ||
      out.count() != meta.at("count").get<int64_t>())
    throw validation_error("breach store at " + dir + " has inconsistent row counts");
  return out;
}

InversionModel build_inversion_model(InversionArch arch, const DatasetProfile& p,
                                     Shape3 expl_shape, const std::string& expl_kind,
                                     uint64_t seed) {
  if (arch == InversionArch::prediction_only) {
    auto spec = zoo::inversion(arch, p, {0, 0, 0}, "");
    return InversionModel(spec, seed, arch, "");
  }
  if (expl_shape.numel() <= 0)
    throw validation_error(std::string(arch_name(arch)) +
                           " inversion needs an explanation shape");
  auto spec = zoo::inversion(arch, p, expl_shape, expl_kind);
  return InversionModel(spec, seed, arch, expl_kind);
}

void save_inversion(const InversionModel& m, const std::string& path) { m.net.save(path); }

InversionModel load_inversion(const std::string& path, InversionArch arch,
                              const std::string& expl_kind) {
  NetF net = NetF::load(path);
  ModelSpec spec = net.spec();
  InversionModel m(spec, 0, arch, expl_kind);
  auto dst = m.net.param_tensors();
  auto src = net.param_tensors();
  for (size_t i = 0; i < dst.size(); ++i)
    std::memcpy(dst[i]->data(), src[i]->data(), sizeof(float) * size_t(src[i]->numel()));
  return m;
}

namespace {

void check_breach_against(const InversionModel& m, const BreachSet& breach) {
  const auto& inputs = m.net.spec().inputs;
  if (breach.predictions.dim(1) != inputs[0].shape.c)
    throw shape_error("breach predictions have " + std::to_string(breach.predictions.dim(1)) +
                      " classes, model wants " + std::to_string(inputs[0].shape.c));
  if (m.arch == InversionArch::prediction_only) return;
  if (!breach.has_explanations())
    throw validation_error(std::string(arch_name(m.arch)) +
                           " inversion needs explanations, but the breach set has none");
  if (!m.explanation_kind.empty() && breach.explanation_kind != m.explanation_kind)
    throw validation_error("model was built for '" + m.explanation_kind +
                           "' explanations, breach set holds '" + breach.explanation_kind + "'");
  Shape3 want = inputs[1].shape;
  Shape3 have{breach.explanations.dim(1), breach.explanations.dim(2),
              breach.explanations.dim(3)};
  if (!(want == have))
    throw shape_error("breach explanations are " + have.str() + ", model wants " + want.str());
}

}  // namespace

std::vector<EpochLog> train_inversion(InversionModel& m, const BreachSet& breach,
                                      const TensorF& images, const TrainingConfig& cfg,
                                      std::ostream* log) {
  check_breach_against(m, breach);
  int64_t n = breach.count();
  for (int64_t i : breach.source_indices)
    if (i < 0 || i >= images.dim(0))
      throw validation_error("breach tuple points at dataset row " + std::to_string(i) +
                             ", but only " + std::to_string(images.dim(0)) + " rows exist");

  TensorF targets(n, images.dim(1), images.dim(2), images.dim(3));
  gather_rows(images, breach.source_indices.data(), n, targets);

  // last tenth of the rows is the logged validation slice
  int64_t n_val = n / 10;
  std::vector<int64_t> train_idx, val_idx;
  for (int64_t i = 0; i < n - n_val; ++i) train_idx.push_back(i);
  for (int64_t i = n - n_val; i < n; ++i) val_idx.push_back(i);

  std::vector<const TensorF*> inputs = {&breach.predictions};
  if (m.arch != InversionArch::prediction_only) inputs.push_back(&breach.explanations);
  return train_reconstructor(m.net, inputs, targets, train_idx, val_idx, cfg, log);
}

TensorF invert(InversionModel& m, const BreachSet& breach, int batch) {
  check_breach_against(m, breach);
  int64_t n = breach.count();
  Shape3 os = m.net.spec().validate().back();
  TensorF out(n, os.c, os.h, os.w);

  bool wants_expl = m.arch != InversionArch::prediction_only;
  int64_t pc = breach.predictions.dim(1);
  int64_t es = wants_expl ? breach.explanations.numel() / n : 0;

  TensorF pred_chunk, expl_chunk;
  for (int64_t base = 0; base < n; base += batch) {
    int64_t mrows = std::min<int64_t>(batch, n - base);
    pred_chunk.resize({mrows, pc});
    std::memcpy(pred_chunk.data(), breach.predictions.data() + base * pc,
                sizeof(float) * size_t(mrows * pc));
    std::vector<const TensorF*> inputs = {&pred_chunk};
    if (wants_expl) {
      expl_chunk.resize({mrows, breach.explanations.dim(1), breach.explanations.dim(2),
                         breach.explanations.dim(3)});
      std::memcpy(expl_chunk.data(), breach.explanations.data() + base * es,
                  sizeof(float) * size_t(mrows * es));
      inputs.push_back(&expl_chunk);
    }
    m.net.forward(inputs);
    const TensorF& y = m.net.output();
    float* dst = out.data() + base * os.numel();
    for (int64_t j = 0; j < y.numel(); ++j) dst[j] = std::clamp(y[j], 0.f, 1.f);
  }
  return out;
}

}  // namespace xinv
