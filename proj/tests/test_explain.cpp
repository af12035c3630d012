#include "doctest.h"

#include <cmath>
#include <cstring>

#include "xinv/explain.hpp"
#include "xinv/errors.hpp"
#include "xinv/kernels.hpp"
#include "xinv/net.hpp"
#include "xinv/rng.hpp"
#include "xinv/zoo.hpp"

using namespace xinv;

namespace {

template <typename T>
Tensor<T> random_images(int64_t n, int64_t c, int64_t h, int64_t w, uint64_t seed) {
  Tensor<T> t(n, c, h, w);
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform());
  return t;
}

template <typename T>
void jitter_params(Net<T>& net, uint64_t seed) {
  Rng rng(seed);
  for (auto* p : net.param_tensors())
    for (int64_t i = 0; i < p->numel(); ++i) p->data()[i] += T(0.05 * rng.normal());
}

// image -> conv(relu) -> pool -> fc(relu) -> fc(softmax); 4 classes
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

// one fc straight to softmax; logit_c = sum_i W[i][c] x_i with zero bias
ModelSpec linear_classifier() {
  ModelSpec m;
  m.name = "linear_cls";
  m.inputs = {{"image", {1, 4, 4}}};
  m.layers = {{"head", LayerKind::fc, 0, 1, 0, 3, Act::softmax, {}, ""}};
  m.class_count = 3;
  return m;
}

}  // namespace

TEST_CASE("explanation shapes per kind") {
  auto spec = zoo::target(zoo::mnist());
  CHECK(explanation_shape(ExplanationKind::gradient, spec) == Shape3{1, 32, 32});
  CHECK(explanation_shape(ExplanationKind::grad_input, spec) == Shape3{1, 32, 32});
  CHECK(explanation_shape(ExplanationKind::lrp, spec) == Shape3{1, 32, 32});
  CHECK(explanation_shape(ExplanationKind::grad_cam, spec) == Shape3{1, 16, 16});
  CHECK(explanation_shape(ExplanationKind::sigma_cam, spec) == Shape3{10, 16, 16});
  CHECK(explanation_shape(ExplanationKind::partial_cam, spec) == Shape3{256, 16, 16});

  CHECK_THROWS_AS(explanation_shape(ExplanationKind::grad_cam, linear_classifier()), Error);

  for (auto k : {ExplanationKind::gradient, ExplanationKind::grad_input, ExplanationKind::grad_cam,
                 ExplanationKind::lrp, ExplanationKind::sigma_cam, ExplanationKind::partial_cam})
    CHECK(parse_explanation(explanation_name(k)) == k);
  CHECK_THROWS_AS(parse_explanation("shap"), Error);
  CHECK(explanation_is_stack(ExplanationKind::sigma_cam));
  CHECK(!explanation_is_stack(ExplanationKind::grad_cam));
}

TEST_CASE("linear model: gradient is the weight row, grad-input and lrp are w*x") {
  NetF net(linear_classifier(), 5);
  auto img = random_images<float>(1, 1, 4, 4, 6);
  const int cls = 1;
  auto g = gradient_map(net, img, cls);
  CHECK(g.values.dim(0) == 4);
  CHECK(g.values.dim(1) == 4);
  CHECK(g.explained_class == cls);

  const auto& w = net.nodes()[1].w;  // [16,3]
  for (int64_t i = 0; i < 16; ++i) CHECK(g.values[i] == doctest::Approx(w.at2(i, cls)));

  auto gi = gradient_input_map(net, img, cls);
  auto rel = lrp_map(net, img, cls);
  for (int64_t i = 0; i < 16; ++i) {
    float wx = w.at2(i, cls) * img[i];
    CHECK(gi.values[i] == doctest::Approx(wx).epsilon(1e-6));
    CHECK(rel.values[i] == doctest::Approx(wx).epsilon(1e-4));
  }
}

TEST_CASE("constant-output model explains to zero") {
  NetF net(linear_classifier(), 5);
  for (auto* p : net.param_tensors()) p->zero();
  auto img = random_images<float>(1, 1, 4, 4, 6);
  auto g = gradient_map(net, img, 0);
  for (int64_t i = 0; i < g.values.numel(); ++i) CHECK(g.values[i] == 0.f);
}

TEST_CASE("gradient maps match central finite differences") {
  auto spec = toy_classifier();
  int trials = 20, pixels = 64;
  const double h = 1e-6;
  for (int t = 0; t < trials; ++t) {
    NetD net(spec, 100 + uint64_t(t));
    jitter_params(net, 200 + uint64_t(t));
    auto img = random_images<double>(1, 1, 12, 12, 300 + uint64_t(t));
    int cls = t % 4;
    auto an = gradient_batch(net, img, {cls});

    Rng pick(400 + uint64_t(t));
    for (int s = 0; s < pixels; ++s) {
      int64_t j = pick.uniform_int(img.numel());
      auto probe = [&](double d) {
        auto x = img;
        x[j] += d;
        net.forward({&x});
        return net.logits()[cls];
      };
      double fd = (probe(h) - probe(-h)) / (2 * h);
      double denom = std::max(std::max(std::abs(fd), std::abs(an[j])), 1e-6);
      CAPTURE(t);
      CAPTURE(j);
      CHECK(std::abs(fd - an[j]) / denom < 1e-3);
    }
  }
}

TEST_CASE("grad-cam matches the hand formula on a single-channel conv") {
  // image -> conv(3x3,p1,relu) -> fc head: alpha_c = mean_j W[j][c] exactly,
  // and the map is relu(alpha * A)
  ModelSpec m;
  m.name = "cam_toy";
  m.inputs = {{"image", {1, 5, 5}}};
  m.layers = {
      {"c1", LayerKind::conv, 3, 1, 1, 1, Act::relu, {}, ""},
      {"head", LayerKind::fc, 0, 1, 0, 3, Act::softmax, {}, ""},
  };
  m.class_count = 3;
  NetF net(m, 17);
  jitter_params(net, 18);
  auto img = random_images<float>(1, 1, 5, 5, 19);
  const int cls = 2;

  auto cam = grad_cam(net, img, cls);
  CHECK(cam.source_layer == "c1");

  const auto& conv = net.nodes()[1];
  const auto& head = net.nodes()[2];
  std::vector<float> a(25);
  kern::serial::conv2d_fwd(img.data(), 1, 1, 5, 5, conv.w.data(), conv.b.data(), 1, 3, 1, 1,
                           a.data());
  for (auto& v : a) v = std::max(v, 0.f);
  float alpha = 0.f;
  for (int64_t j = 0; j < 25; ++j) alpha += head.w.at2(j, cls);
  alpha /= 25.f;
  for (int64_t j = 0; j < 25; ++j)
    CHECK(cam.values[j] == doctest::Approx(std::max(alpha * a[size_t(j)], 0.f)).epsilon(1e-5));
}

TEST_CASE("grad-cam on the digit target: 16x16, non-negative, conv-less refused") {
  auto spec = zoo::target(zoo::mnist());
  NetF net(spec, 23);
  jitter_params(net, 24);
  auto imgs = random_images<float>(2, 1, 32, 32, 25);
  auto cam = grad_cam_batch(net, imgs, {3, 7});
  CHECK(cam.dim(0) == 2);
  CHECK(cam.dim(1) == 1);
  CHECK(cam.dim(2) == 16);
  CHECK(cam.dim(3) == 16);
  CHECK(tensor_min(cam) >= 0.f);
  CHECK(tensor_max(cam) > 0.f);  // untuned net still activates somewhere

  NetF lin(linear_classifier(), 5);
  auto small = random_images<float>(1, 1, 4, 4, 6);
  CHECK_THROWS_AS(grad_cam_batch(lin, small, {0}), Error);
}

TEST_CASE("partial cams recompose to grad-cam bit for bit") {
  auto spec = zoo::target(zoo::mnist());
  NetF net(spec, 31);
  jitter_params(net, 32);
  auto imgs = random_images<float>(2, 1, 32, 32, 33);

  auto parts = partial_cam_batch(net, imgs, {0, 9});
  CHECK(parts.dim(1) == 256);
  CHECK(parts.dim(2) == 16);
  auto cam = grad_cam_batch(net, imgs, {0, 9});

  int64_t hw = 16 * 16;
  std::vector<float> recomposed(size_t(2 * hw));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t j = 0; j < hw; ++j) {
      float acc = 0.f;
      for (int64_t k = 0; k < 256; ++k) acc += parts[(n * 256 + k) * hw + j];
      recomposed[size_t(n * hw + j)] = acc > 0.f ? acc : 0.f;
    }
  CHECK(std::memcmp(recomposed.data(), cam.data(), sizeof(float) * size_t(2 * hw)) == 0);

  // a fresh zero-bias net on a zero image produces a zero stack
  NetF fresh(spec, 31);
  TensorF zero(1, 1, 32, 32);
  auto zparts = partial_cam_batch(fresh, zero, {4});
  CHECK(tensor_min(zparts) == 0.f);
  CHECK(tensor_max(zparts) == 0.f);
}

TEST_CASE("sigma-cam slices are bit-identical to independent grad-cam calls") {
  auto spec = zoo::target(zoo::mnist());
  NetF net(spec, 41);
  jitter_params(net, 42);
  auto imgs = random_images<float>(2, 1, 32, 32, 43);

  auto stack = sigma_cam_batch(net, imgs);
  CHECK(stack.dim(0) == 2);
  CHECK(stack.dim(1) == 10);
  CHECK(stack.dim(2) == 16);
  CHECK(stack.dim(3) == 16);
  CHECK(tensor_min(stack) >= 0.f);

  int64_t hw = 16 * 16;
  for (int c = 0; c < 10; ++c) {
    auto cam = grad_cam_batch(net, imgs, {c, c});
    for (int64_t n = 0; n < 2; ++n)
      CHECK(std::memcmp(stack.data() + (n * 10 + c) * hw, cam.data() + n * hw,
                        sizeof(float) * size_t(hw)) == 0);
  }

  // single-image wrapper carries depth |C|
  TensorF one(1, 1, 32, 32);
  std::memcpy(one.data(), imgs.data(), sizeof(float) * size_t(one.numel()));
  auto s = sigma_cam(net, one);
  CHECK(s.depth() == 10);
  CHECK(s.kind == ExplanationKind::sigma_cam);
}

TEST_CASE("lrp conserves the explained score") {
  auto spec = toy_classifier();
  int checked = 0;
  for (int t = 0; t < 30; ++t) {
    NetD net(spec, 500 + uint64_t(t));
    jitter_params(net, 600 + uint64_t(t));
    auto img = random_images<double>(3, 1, 12, 12, 700 + uint64_t(t));
    std::vector<int> classes = {t % 4, (t + 1) % 4, (t + 2) % 4};
    auto rel = lrp_batch(net, img, classes);

    net.forward({&img});
    for (int64_t n = 0; n < 3; ++n) {
      double score = net.logits()[n * 4 + classes[size_t(n)]];
      if (std::abs(score) <= 1e-3) continue;
      double total = 0;
      for (int64_t j = 0; j < 144; ++j) total += rel[n * 144 + j];
      CAPTURE(t);
      CAPTURE(n);
      CHECK(std::abs(total - score) / std::abs(score) < 0.01);
      ++checked;
    }
  }
  CHECK(checked > 50);  // the guard must not have skipped everything

  // float path on the full digit target stays conserved too
  auto big = zoo::target(zoo::mnist());
  NetF netf(big, 51);
  jitter_params(netf, 52);
  auto imgs = random_images<float>(2, 1, 32, 32, 53);
  auto rel = lrp_batch(netf, imgs, {2, 8});
  netf.forward({&imgs});
  for (int64_t n = 0; n < 2; ++n) {
    float score = netf.logits()[n * 10 + (n == 0 ? 2 : 8)];
    REQUIRE(std::abs(score) > 1e-3f);
    float total = 0;
    for (int64_t j = 0; j < 32 * 32; ++j) total += rel[n * 32 * 32 + j];
    CHECK(std::abs(total - score) / std::abs(score) < 0.01f);
  }
}

TEST_CASE("lrp trivia and refusals") {
  auto spec = toy_classifier();
  NetF net(spec, 61);

  SUBCASE("all-zero image yields an all-zero map") {
    jitter_params(net, 62);  // nonzero biases so the score itself is not zero
    TensorF zero(1, 1, 12, 12);
    auto rel = lrp_batch(net, zero, {1});
    for (int64_t i = 0; i < rel.numel(); ++i) CHECK(rel[i] == 0.f);
  }

  SUBCASE("upsample layer refused before a net even exists") {
    ModelSpec m;
    m.name = "up_cls";
    m.inputs = {{"image", {1, 4, 4}}};
    m.layers = {
        {"grow", LayerKind::upsample, 4, 2, 1, 2, Act::relu, {}, ""},
        {"head", LayerKind::fc, 0, 1, 0, 2, Act::softmax, {}, ""},
    };
    m.class_count = 2;
    CHECK_THROWS_WITH_AS(NetF(m, 63), doctest::Contains("upsample"), Error);
  }

  SUBCASE("merge topology refused by name") {
    ModelSpec m;
    m.name = "merge_cls";
    m.inputs = {{"image", {1, 4, 4}}};
    m.layers = {
        {"a", LayerKind::fc, 0, 1, 0, 4, Act::relu, {"image"}, ""},
        {"b", LayerKind::fc, 0, 1, 0, 4, Act::relu, {"image"}, ""},
        {"head", LayerKind::fc, 0, 1, 0, 2, Act::softmax, {"a", "b"}, ""},
    };
    m.class_count = 2;
    NetF mg(m, 65);
    auto img = random_images<float>(1, 1, 4, 4, 66);
    CHECK_THROWS_WITH_AS(lrp_batch(mg, img, {0}), doctest::Contains("head"), Error);
  }
}

TEST_CASE("per-map normalization") {
  TensorF maps(2, 2, 2, 2);
  float vals[] = {2, 4, 6, 8, /* plane 2 */ 5, 5, 5, 5,
                  /* plane 3 */ -1, 0, 1, 3, /* plane 4 */ 0, 0, 0, 1};
  std::memcpy(maps.data(), vals, sizeof(vals));
  normalize_per_map(maps);

  float want[] = {0, 1.f / 3, 2.f / 3, 1, 0, 0, 0, 0, 0, 0.25f, 0.5f, 1, 0, 0, 0, 1};
  for (int i = 0; i < 16; ++i) CHECK(maps[i] == doctest::Approx(want[i]));
  CHECK(tensor_min(maps) >= 0.f);
  CHECK(tensor_max(maps) <= 1.f);

  // idempotent once in [0,1] with endpoints present
  auto again = maps;
  normalize_per_map(again);
  for (int i = 0; i < 16; ++i)
    if (!(i >= 4 && i < 8)) CHECK(again[i] == doctest::Approx(maps[i]));
}

TEST_CASE("explanation argument validation") {
  NetF net(toy_classifier(), 71);
  auto img = random_images<float>(2, 1, 12, 12, 72);
  CHECK_THROWS_AS(gradient_batch(net, img, {0}), Error);          // rows mismatch
  CHECK_THROWS_AS(gradient_batch(net, img, {0, 4}), Error);  // class range
  CHECK_THROWS_AS(gradient_batch(net, img, {0, -1}), Error);

  auto flat = zoo::inversion(InversionArch::flatten, zoo::mnist(), {1, 32, 32}, "flat");
  NetF inv(flat, 73);
  CHECK_THROWS_AS(gradient_batch(inv, img, {0, 1}), Error);  // not a classifier
}
