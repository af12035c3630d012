#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "xinv/classifier.hpp"
#include "xinv/errors.hpp"
#include "xinv/inversion.hpp"
#include "xinv/io.hpp"
#include "xinv/rng.hpp"
#include "xinv/zoo.hpp"

using namespace xinv;
namespace fs = std::filesystem;

namespace {

TensorF random_images(int64_t n, int64_t c, int64_t h, int64_t w, uint64_t seed) {
  TensorF t(n, c, h, w);
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform());
  return t;
}

ModelSpec toy_classifier() {
  ModelSpec m;
  m.name = "toy_cls";
  m.inputs = {{"image", {1, 12, 12}}};
  m.layers = {
      {"conv1", LayerKind::conv, 3, 1, 1, 8, Act::relu, {}, ""},
      {"pool1", LayerKind::pool, 2, 2, 0, 0, Act::none, {}, ""},
      {"fc1", LayerKind::fc, 0, 1, 0, 24, Act::relu, {}, ""},
      {"fc2", LayerKind::fc, 0, 1, 0, 4, Act::softmax, {}, ""},
  };
  m.class_count = 4;
  return m;
}

// 4-class, 4x4-image decoder small enough for fast training-contract checks
ModelSpec micro_decoder() {
  ModelSpec m;
  m.name = "micro_dec";
  m.inputs = {{"y", {4, 1, 1}}};
  m.layers = {
      {"fc_seed", LayerKind::fc, 0, 1, 0, 16, Act::relu, {}, ""},
      {"up1", LayerKind::upsample, 4, 1, 0, 8, Act::relu, {}, ""},
      {"out", LayerKind::conv, 3, 1, 1, 1, Act::none, {}, ""},
  };
  return m;
}

BreachSet pred_only_breach(int64_t n, int classes, uint64_t seed) {
  BreachSet b;
  b.predictions.resize({n, classes});
  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) {
    float sum = 0;
    for (int c = 0; c < classes; ++c) {
      float v = float(rng.uniform(0.01, 1.0));
      b.predictions.at2(i, c) = v;
      sum += v;
    }
    for (int c = 0; c < classes; ++c) b.predictions.at2(i, c) /= sum;
    b.source_indices.push_back(i % n);
  }
  return b;
}

double mse(const float* a, const float* b, int64_t n) {
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += double(a[i] - b[i]) * (a[i] - b[i]);
  return s / double(n);
}

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("xinv_" + tag);
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("breach capture: predictions, normalized maps, provenance") {
  Classifier cls(toy_classifier(), 3);
  auto imgs = random_images(30, 1, 12, 12, 4);
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < 20; ++i) idx.push_back(i);

  auto b = make_breach(cls, imgs, idx, ExplanationKind::grad_input, "digest123", 7);
  CHECK(b.count() == 20);
  CHECK(b.explanation_kind == "grad_input");
  CHECK(b.target_checksum == cls.net().param_hash());
  CHECK(b.split_digest == "digest123");
  CHECK(b.source_indices == idx);

  for (int64_t i = 0; i < 20; ++i) {
    float sum = 0;
    for (int c = 0; c < 4; ++c) sum += b.predictions.at2(i, c);
    CHECK(sum == doctest::Approx(1.f).epsilon(1e-4));
  }

  CHECK(b.explanations.dim(1) == 1);
  CHECK(b.explanations.dim(2) == 12);
  CHECK(b.explanations.dim(3) == 12);
  for (int64_t i = 0; i < 20; ++i) {
    const float* p = b.explanations.data() + i * 144;
    float lo = p[0], hi = p[0];
    for (int64_t j = 1; j < 144; ++j) {
      lo = std::min(lo, p[j]);
      hi = std::max(hi, p[j]);
    }
    // per-map normalization: full [0,1] span unless the raw map was flat
    bool normalized = (lo == 0.f && hi == 1.f) || (lo == 0.f && hi == 0.f);
    CHECK(normalized);
  }

  // capture is row-independent: chunk size cannot change bytes
  auto b20 = make_breach(cls, imgs, idx, ExplanationKind::grad_input, "digest123", 20);
  CHECK(std::memcmp(b.predictions.data(), b20.predictions.data(),
                    sizeof(float) * size_t(b.predictions.numel())) == 0);
  CHECK(std::memcmp(b.explanations.data(), b20.explanations.data(),
                    sizeof(float) * size_t(b.explanations.numel())) == 0);

  // stacks arrive with depth |C|; prediction-only carries no maps
  auto bs = make_breach(cls, imgs, idx, ExplanationKind::sigma_cam, "digest123", 8);
  CHECK(bs.explanations.dim(1) == 4);
  CHECK(bs.explanations.dim(2) == 12);
  auto bp = make_breach(cls, imgs, idx, std::nullopt, "digest123", 8);
  CHECK(!bp.has_explanations());
  CHECK(bp.explanation_kind.empty());

  CHECK_THROWS_WITH_AS(make_breach(cls, imgs, {55}, std::nullopt, "d", 8),
                       doctest::Contains("outside"), Error);
  CHECK_THROWS_AS(make_breach(cls, imgs, {}, std::nullopt, "d", 8), Error);
}

TEST_CASE("breach store: round trip, append-only, checksums") {
  Classifier cls(toy_classifier(), 3);
  auto imgs = random_images(12, 1, 12, 12, 5);
  std::vector<int64_t> idx = {0, 2, 4, 6, 8, 10};
  auto b = make_breach(cls, imgs, idx, ExplanationKind::gradient, "prov42", 4);
  b.run_id = "run_a";

  TempDir dir("breach_rt");
  save_breach(dir.str(), b);
  auto back = load_breach(dir.str());
  CHECK(back.count() == 6);
  CHECK(back.explanation_kind == "gradient");
  CHECK(back.target_checksum == b.target_checksum);
  CHECK(back.split_digest == "prov42");
  CHECK(back.run_id == "run_a");
  CHECK(back.source_indices == idx);
  CHECK(std::memcmp(back.predictions.data(), b.predictions.data(),
                    sizeof(float) * size_t(b.predictions.numel())) == 0);
  CHECK(std::memcmp(back.explanations.data(), b.explanations.data(),
                    sizeof(float) * size_t(b.explanations.numel())) == 0);

  SUBCASE("second write refused") {
    CHECK_THROWS_WITH_AS(save_breach(dir.str(), b), doctest::Contains("append-only"), Error);
  }
  SUBCASE("payload tamper detected") {
    auto path = (dir.path / "explanations.npy").string();
    auto bytes = read_file(path);
    bytes[bytes.size() - 2] ^= 0x11;
    write_file(path, bytes.data(), bytes.size());
    CHECK_THROWS_WITH_AS(load_breach(dir.str()), doctest::Contains("checksum"), Error);
  }
  SUBCASE("prediction-only stores skip the explanation files") {
    TempDir d2("breach_po");
    auto bp = make_breach(cls, imgs, idx, std::nullopt, "prov42", 4);
    save_breach(d2.str(), bp);
    CHECK(!fs::exists(d2.path / "explanations.npy"));
    auto back2 = load_breach(d2.str());
    CHECK(!back2.has_explanations());
  }
}

TEST_CASE("inversion model construction") {
  auto p = zoo::mnist();
  auto po = build_inversion_model(InversionArch::prediction_only, p, {0, 0, 0}, "", 7);
  CHECK(po.arch == InversionArch::prediction_only);
  CHECK(po.explanation_kind.empty());
  CHECK(po.net.spec().inputs.size() == 1);

  auto fu = build_inversion_model(InversionArch::flatten_unet, p, {1, 16, 16}, "grad_cam", 7);
  CHECK(fu.explanation_kind == "grad_cam");
  CHECK(fu.net.spec().inputs.size() == 2);

  CHECK_THROWS_WITH_AS(build_inversion_model(InversionArch::flatten, p, {0, 0, 0}, "lrp", 7),
                       doctest::Contains("explanation shape"), Error);
}

TEST_CASE("inversion training contracts on a micro decoder") {
  auto imgs = random_images(20, 1, 4, 4, 21);

  SUBCASE("memorizes one repeated tuple") {
    InversionModel m(micro_decoder(), 22, InversionArch::prediction_only, "");
    auto b = pred_only_breach(1, 4, 23);
    TrainingConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 1;
    cfg.epochs = 400;
    cfg.seed = 24;
    auto log = train_inversion(m, b, imgs, cfg);
    REQUIRE(log.size() == 400);
    CHECK(log.back().train_loss < 1e-3);
    CHECK(log.back().train_loss < log.front().train_loss);
  }

  SUBCASE("zero epochs leaves the model at initialization") {
    InversionModel m(micro_decoder(), 22, InversionArch::prediction_only, "");
    auto before = m.net.param_hash();
    auto b = pred_only_breach(10, 4, 25);
    TrainingConfig cfg;
    cfg.epochs = 0;
    auto log = train_inversion(m, b, imgs, cfg);
    CHECK(log.empty());
    CHECK(m.net.param_hash() == before);
  }

  SUBCASE("validation slice is carved and logged") {
    InversionModel m(micro_decoder(), 22, InversionArch::prediction_only, "");
    auto b = pred_only_breach(20, 4, 26);
    TrainingConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.seed = 27;
    auto log = train_inversion(m, b, imgs, cfg);
    REQUIRE(log.size() == 2);
    CHECK(std::isfinite(log[0].holdout));
    CHECK(log[0].holdout > 0);

    // under ten rows there is nothing to carve
    InversionModel m2(micro_decoder(), 22, InversionArch::prediction_only, "");
    auto b2 = pred_only_breach(5, 4, 28);
    auto log2 = train_inversion(m2, b2, imgs, cfg);
    CHECK(std::isnan(log2[0].holdout));
  }

  SUBCASE("non-finite loss aborts with a diagnostic") {
    InversionModel m(micro_decoder(), 22, InversionArch::prediction_only, "");
    m.net.param_tensors().back()->data()[0] = std::nanf("");
    auto b = pred_only_breach(10, 4, 29);
    TrainingConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 1;
    CHECK_THROWS_WITH_AS(train_inversion(m, b, imgs, cfg), doctest::Contains("non-finite"),
                         Error);
  }

  SUBCASE("tuple pointing past the dataset is refused") {
    InversionModel m(micro_decoder(), 22, InversionArch::prediction_only, "");
    auto b = pred_only_breach(3, 4, 30);
    b.source_indices[1] = 77;
    TrainingConfig cfg;
    CHECK_THROWS_WITH_AS(train_inversion(m, b, imgs, cfg), doctest::Contains("dataset row"),
                         Error);
  }
}

TEST_CASE("flatten-unet on captured cam tuples: loss decreases, inversion well-formed") {
  auto p = zoo::mnist();
  Classifier cls(zoo::target(p), 31);
  auto imgs = random_images(48, 1, 32, 32, 32);
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < 48; ++i) idx.push_back(i);
  auto b = make_breach(cls, imgs, idx, ExplanationKind::grad_cam, "prov", 16);

  auto m = build_inversion_model(InversionArch::flatten_unet, p, {1, 16, 16}, "grad_cam", 33);
  TrainingConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 16;
  cfg.epochs = 2;
  cfg.seed = 34;
  auto log = train_inversion(m, b, imgs, cfg);
  REQUIRE(log.size() == 2);
  CHECK(log[1].train_loss < log[0].train_loss);
  CHECK(std::isfinite(log[0].holdout));  // 4 rows carved from 48

  auto rec = invert(m, b, 16);
  CHECK(rec.dim(0) == 48);
  CHECK(rec.dim(1) == 1);
  CHECK(rec.dim(2) == 32);
  CHECK(rec.dim(3) == 32);
  CHECK(tensor_min(rec) >= 0.f);
  CHECK(tensor_max(rec) <= 1.f);

  // deterministic, and chunking cannot change bytes
  auto rec2 = invert(m, b, 16);
  auto rec3 = invert(m, b, 7);
  CHECK(std::memcmp(rec.data(), rec2.data(), sizeof(float) * size_t(rec.numel())) == 0);
  CHECK(std::memcmp(rec.data(), rec3.data(), sizeof(float) * size_t(rec.numel())) == 0);

  SUBCASE("checkpoint round trip reproduces reconstructions") {
    TempDir dir("inv_ckpt");
    fs::create_directories(dir.path);
    auto path = (dir.path / "model.bin").string();
    save_inversion(m, path);
    auto back = load_inversion(path, InversionArch::flatten_unet, "grad_cam");
    auto rec4 = invert(back, b, 16);
    CHECK(std::memcmp(rec.data(), rec4.data(), sizeof(float) * size_t(rec.numel())) == 0);
  }

  SUBCASE("kind and shape mismatches are refused") {
    auto wrong = build_inversion_model(InversionArch::cnn, p, {1, 32, 32}, "lrp", 35);
    CHECK_THROWS_WITH_AS(invert(wrong, b, 16), doctest::Contains("lrp"), Error);
    auto po = pred_only_breach(5, 10, 36);
    auto cam_model = build_inversion_model(InversionArch::cnn, p, {1, 16, 16}, "grad_cam", 37);
    CHECK_THROWS_WITH_AS(invert(cam_model, po, 16), doctest::Contains("needs explanations"),
                         Error);
  }
}

TEST_CASE("prediction-only: explanation-blind, class-conditional variation") {
  auto p = zoo::mnist();
  auto imgs = random_images(32, 1, 32, 32, 41);
  Classifier cls(zoo::target(p), 42);
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < 32; ++i) idx.push_back(i);
  auto with_maps = make_breach(cls, imgs, idx, ExplanationKind::grad_cam, "prov", 16);

  auto m = build_inversion_model(InversionArch::prediction_only, p, {0, 0, 0}, "", 43);
  TrainingConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.seed = 44;
  train_inversion(m, with_maps, imgs, cfg);  // explanations present but unused

  auto out1 = invert(m, with_maps, 16);

  auto perturbed = with_maps;
  for (int64_t i = 0; i < perturbed.explanations.numel(); ++i)
    perturbed.explanations[i] = 1.f - perturbed.explanations[i];
  auto out2 = invert(m, perturbed, 16);
  CHECK(std::memcmp(out1.data(), out2.data(), sizeof(float) * size_t(out1.numel())) == 0);

  auto stripped = with_maps;
  stripped.explanations = TensorF();
  stripped.explanation_kind = "";
  auto out3 = invert(m, stripped, 16);
  CHECK(std::memcmp(out1.data(), out3.data(), sizeof(float) * size_t(out1.numel())) == 0);

  // one-hot centroids decode to pairwise-distinct images
  BreachSet centroids;
  centroids.predictions.resize({10, 10});
  for (int64_t c = 0; c < 10; ++c) {
    centroids.predictions.at2(c, c) = 1.f;
    centroids.source_indices.push_back(c);
  }
  auto dec = invert(m, centroids, 16);
  int64_t plane = 32 * 32;
  for (int64_t a = 0; a < 10; ++a)
    for (int64_t c = a + 1; c < 10; ++c) {
      double d = mse(dec.data() + a * plane, dec.data() + c * plane, plane);
      CAPTURE(a);
      CAPTURE(c);
      CHECK(d > 1e-12);
    }
}
