#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <set>

#include "xinv/dataset.hpp"
#include "xinv/digits.hpp"
#include "xinv/errors.hpp"
#include "xinv/io.hpp"
#include "xinv/rng.hpp"
#include "xinv/splits.hpp"
#include "xinv/zoo.hpp"

using namespace xinv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("xinv_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("split sizes follow the 50/40/10 protocol") {
  auto p = make_splits(70000, 7);
  CHECK(p.target.size() == 35000);
  CHECK(p.attack_train.size() == 28000);
  CHECK(p.attack_test.size() == 7000);

  auto q = make_splits(10, 3);
  CHECK(q.target.size() == 5);
  CHECK(q.attack_train.size() == 4);
  CHECK(q.attack_test.size() == 1);

  // odd size: remainder rounds toward the earlier partition
  auto r = make_splits(11, 3);
  CHECK(r.target.size() == 6);
  CHECK(r.attack_train.size() == 4);
  CHECK(r.attack_test.size() == 1);

  CHECK_THROWS_AS(make_splits(9, 1), Error);
  CHECK_THROWS_AS(make_splits(0, 1), Error);
}

TEST_CASE("splits are disjoint, exhaustive, and deterministic") {
  for (int64_t n = 10; n <= 1000; ++n) {
    auto p = make_splits(n, uint64_t(n));
    std::set<int64_t> seen;
    for (const auto* part : {&p.target, &p.attack_train, &p.attack_test})
      for (int64_t i : *part) {
        CHECK(i >= 0);
        CHECK(i < n);
        CHECK(seen.insert(i).second);  // no index twice
      }
    CHECK(int64_t(seen.size()) == n);
  }

  auto a = make_splits(500, 42), b = make_splits(500, 42), c = make_splits(500, 43);
  CHECK(a.target == b.target);
  CHECK(a.attack_train == b.attack_train);
  CHECK(a.attack_test == b.attack_test);
  CHECK(a.digest() == b.digest());
  CHECK(a.target != c.target);
  CHECK(a.digest() != c.digest());

  // shuffled, not the identity partition
  bool ordered = true;
  for (size_t i = 1; i < a.target.size(); ++i)
    if (a.target[i] != a.target[i - 1] + 1) ordered = false;
  CHECK(!ordered);
}

TEST_CASE("preprocess endpoints, range, and idempotence") {
  auto p = zoo::mnist();

  std::vector<unsigned char> raw(28 * 28, 255);
  std::vector<float> out(size_t(p.image_hw) * p.image_hw);
  preprocess_u8(raw.data(), 28, 28, p, out.data());
  for (float v : out) CHECK(v == doctest::Approx(1.f).epsilon(1e-6));

  std::fill(raw.begin(), raw.end(), 0);
  preprocess_u8(raw.data(), 28, 28, p, out.data());
  for (float v : out) CHECK(v == 0.f);

  // random 8-bit grids stay inside [0,1] after bilinear resize
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    int h = 8 + int(rng.uniform_int(56)), w = 8 + int(rng.uniform_int(56));
    std::vector<unsigned char> g(size_t(h) * w);
    for (auto& v : g) v = (unsigned char)(rng.uniform_int(256));
    preprocess_u8(g.data(), h, w, p, out.data());
    for (float v : out) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
  }

  // a conforming tensor passes through untouched (no second rescale)
  std::vector<float> again(out.size());
  preprocess_plane(out.data(), p.image_hw, p.image_hw, p, again.data());
  for (size_t i = 0; i < out.size(); ++i) CHECK(std::abs(again[i] - out[i]) < 1e-6f);
}

TEST_CASE("digit corpus round-trips through the IDX loader") {
  TempDir dir("idx_roundtrip");
  auto corpus = make_digit_corpus(25, 11);
  CHECK(corpus.n == 25);
  CHECK(corpus.labels[0] == 0);
  CHECK(corpus.labels[13] == 3);
  write_idx_pair(dir.str(), corpus);

  auto p = zoo::mnist();
  auto data = load_dataset(p, dir.str());
  CHECK(data.count() == 25);
  CHECK(data.images.dim(0) == 25);
  CHECK(data.images.dim(1) == 1);
  CHECK(data.images.dim(2) == 32);
  CHECK(data.images.dim(3) == 32);
  for (int64_t i = 0; i < 25; ++i) CHECK(data.labels[size_t(i)] == int(i % 10));
  CHECK(tensor_min(data.images) >= 0.f);
  CHECK(tensor_max(data.images) <= 1.f);
  CHECK(tensor_max(data.images) > 0.5f);  // strokes are bright

  // determinism end to end
  auto corpus2 = make_digit_corpus(25, 11);
  CHECK(corpus.pixels == corpus2.pixels);
  // pointing at the images file directly also resolves the labels sibling
  auto data2 = load_dataset(p, (dir.path / "images-idx3-ubyte.gz").string());
  CHECK(std::memcmp(data.images.data(), data2.images.data(),
                    sizeof(float) * size_t(data.images.numel())) == 0);

  // classes look different: mean images of two classes are far apart
  auto big = make_digit_corpus(200, 5);
  std::vector<double> mean0(28 * 28, 0), mean1(28 * 28, 0);
  for (int64_t i = 0; i < big.n; ++i) {
    auto* m = (big.labels[size_t(i)] == 0) ? mean0.data()
              : (big.labels[size_t(i)] == 1) ? mean1.data()
                                             : nullptr;
    if (!m) continue;
    for (int j = 0; j < 28 * 28; ++j) m[j] += big.pixels[size_t(i * 28 * 28 + j)] / 255.0 / 20;
  }
  double gap = 0;
  for (int j = 0; j < 28 * 28; ++j) gap += (mean0[size_t(j)] - mean1[size_t(j)]) *
                                           (mean0[size_t(j)] - mean1[size_t(j)]);
  CHECK(gap / (28 * 28) > 0.01);
}

TEST_CASE("IDX loader rejects corruption and bad labels") {
  TempDir dir("idx_corrupt");
  auto corpus = make_digit_corpus(12, 1);
  write_idx_pair(dir.str(), corpus);
  auto p = zoo::mnist();

  SUBCASE("truncated image payload") {
    auto path = (dir.path / "images-idx3-ubyte.gz").string();
    auto bytes = read_file(path);
    auto plain = gunzip(bytes.data(), bytes.size());
    plain.resize(plain.size() - 100);
    auto rez = gzip(plain.data(), plain.size());
    write_file(path, rez.data(), rez.size());
    CHECK_THROWS_WITH_AS(load_dataset(p, dir.str()), doctest::Contains("payload"), Error);
  }

  SUBCASE("label outside the profile's class range") {
    auto path = (dir.path / "labels-idx1-ubyte.gz").string();
    auto bytes = read_file(path);
    auto plain = gunzip(bytes.data(), bytes.size());
    plain[8 + 4] = 12;  // record 4
    auto rez = gzip(plain.data(), plain.size());
    write_file(path, rez.data(), rez.size());
    CHECK_THROWS_WITH_AS(load_dataset(p, dir.str()), doctest::Contains("record 4"), Error);
  }

  SUBCASE("empty directory") {
    TempDir empty("idx_empty");
    CHECK_THROWS_WITH_AS(load_dataset(p, empty.str()), doctest::Contains("no dataset"), Error);
  }
}

TEST_CASE("csv manifest datasets load with per-record errors") {
  TempDir dir("csv");
  DatasetProfile p{"fixture", 16, 1, 5};
  // five 12x10 grayscale pngs, labels 0..4
  for (int i = 0; i < 5; ++i) {
    cv::Mat img(12, 10, CV_8UC1, cv::Scalar(40 * i + 20));
    img.at<unsigned char>(i, i) = 255;
    cv::imwrite((dir.path / ("img" + std::to_string(i) + ".png")).string(), img);
  }
  {
    std::ofstream csv(dir.path / "labels.csv");
    csv << "filename,label\n";
    for (int i = 0; i < 5; ++i) csv << "img" << i << ".png," << i << "\n";
  }
  auto data = load_dataset(p, dir.str());
  CHECK(data.count() == 5);
  CHECK(data.images.dim(2) == 16);
  CHECK(data.labels == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(tensor_min(data.images) >= 0.f);
  CHECK(tensor_max(data.images) <= 1.f);

  SUBCASE("missing image file is identified") {
    std::ofstream csv(dir.path / "labels.csv");
    csv << "img0.png,0\nnot_there.png,1\n";
    csv.close();
    CHECK_THROWS_WITH_AS(load_dataset(p, dir.str()), doctest::Contains("not_there"), Error);
  }
  SUBCASE("label out of range is identified") {
    std::ofstream csv(dir.path / "labels.csv");
    csv << "img0.png,0\nimg1.png,7\n";
    csv.close();
    CHECK_THROWS_WITH_AS(load_dataset(p, dir.str()), doctest::Contains("line 2"), Error);
  }
  SUBCASE("empty manifest") {
    std::ofstream csv(dir.path / "labels.csv");
    csv << "filename,label\n";
    csv.close();
    CHECK_THROWS_WITH_AS(load_dataset(p, dir.str()), doctest::Contains("zero instances"), Error);
  }
}

TEST_CASE("collection cache round-trips and verifies") {
  TempDir src("cache_src"), cache("cache_dir");
  auto corpus = make_digit_corpus(15, 4);
  write_idx_pair(src.str(), corpus);
  auto p = zoo::mnist();
  auto data = load_dataset(p, src.str());

  CHECK(!collection_cached(cache.str()));
  save_collection(cache.str(), data, p);
  CHECK(collection_cached(cache.str()));
  auto back = load_collection(cache.str(), p);
  CHECK(back.labels == data.labels);
  CHECK(std::memcmp(back.images.data(), data.images.data(),
                    sizeof(float) * size_t(data.images.numel())) == 0);

  SUBCASE("wrong profile refused") {
    auto icv = zoo::icv(7);
    CHECK_THROWS_WITH_AS(load_collection(cache.str(), icv), doctest::Contains("profile"), Error);
  }
  SUBCASE("tampered payload refused") {
    auto path = (cache.path / "images.npy").string();
    auto bytes = read_file(path);
    bytes[bytes.size() - 1] ^= 0x40;
    write_file(path, bytes.data(), bytes.size());
    CHECK_THROWS_WITH_AS(load_collection(cache.str(), p), doctest::Contains("checksum"), Error);
  }
}
