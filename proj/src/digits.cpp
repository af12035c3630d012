#include "xinv/digits.hpp"

#include <cstring>
#include <filesystem>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "xinv/errors.hpp"
#include "xinv/io.hpp"
#include "xinv/rng.hpp"

namespace xinv {

namespace {

constexpr int kSide = 28;

// stroke glyphs on a 28x28 canvas; y grows downward, ellipse angles clockwise
void draw_glyph(cv::Mat& img, int digit, int thick, int shade) {
  const cv::Scalar c(shade);
  auto line = [&](int x0, int y0, int x1, int y1) {
    cv::line(img, {x0, y0}, {x1, y1}, c, thick, cv::LINE_AA);
  };
  auto arc = [&](int cx, int cy, int ax, int ay, int a0, int a1) {
    cv::ellipse(img, {cx, cy}, {ax, ay}, 0.0, a0, a1, c, thick, cv::LINE_AA);
  };
  switch (digit) {
    case 0:
      arc(14, 14, 6, 8, 0, 360);
      break;
    case 1:
      line(14, 5, 14, 22);
      line(10, 9, 14, 5);
      break;
    case 2:
      arc(14, 10, 6, 5, 150, 360);
      line(20, 12, 8, 22);
      line(8, 22, 20, 22);
      break;
    case 3:
      arc(13, 9, 5, 4, 200, 450);
      arc(13, 18, 6, 5, 270, 520);
      break;
    case 4:
      line(16, 5, 7, 16);
      line(7, 16, 21, 16);
      line(17, 8, 17, 23);
      break;
    case 5:
      line(19, 5, 9, 5);
      line(9, 5, 9, 12);
      arc(13, 17, 6, 6, 250, 540);
      break;
    case 6:
      line(16, 5, 11, 13);
      arc(13, 17, 5, 5, 0, 360);
      break;
    case 7:
      line(8, 6, 20, 6);
      line(20, 6, 11, 22);
      break;
    case 8:
      arc(14, 9, 4, 4, 0, 360);
      arc(14, 18, 5, 5, 0, 360);
      break;
    case 9:
      arc(14, 10, 5, 5, 0, 360);
      line(19, 10, 16, 22);
      break;
    default:
      throw validation_error("digit out of range");
  }
}

void render_digit(unsigned char* out, int digit, Rng& rng) {
  cv::Mat img = cv::Mat::zeros(kSide, kSide, CV_8UC1);
  int thick = 2 + int(rng.uniform_int(2));
  int shade = 200 + int(rng.uniform_int(56));
  draw_glyph(img, digit, thick, shade);

  double angle = rng.uniform(-10.0, 10.0);
  double scale = rng.uniform(0.88, 1.06);
  cv::Mat m = cv::getRotationMatrix2D(cv::Point2f(kSide / 2.f, kSide / 2.f), angle, scale);
  m.at<double>(0, 2) += rng.uniform(-1.5, 1.5);
  m.at<double>(1, 2) += rng.uniform(-1.5, 1.5);
  cv::Mat warped;
  cv::warpAffine(img, warped, m, img.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(0));
  std::memcpy(out, warped.ptr<unsigned char>(0), size_t(kSide) * kSide);
}

void append_be32(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back((x >> 24) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

}  // namespace

RawImages make_digit_corpus(int64_t count, uint64_t seed) {
  if (count < 1) throw validation_error("corpus needs at least one image");
  RawImages d;
  d.n = count;
  d.h = d.w = kSide;
  d.pixels.resize(size_t(count) * kSide * kSide);
  d.labels.resize(size_t(count));
  for (int64_t i = 0; i < count; ++i) {
    int digit = int(i % 10);
    Rng rng(mix_seed(seed, uint64_t(i)));
    render_digit(d.pixels.data() + i * kSide * kSide, digit, rng);
    d.labels[size_t(i)] = digit;
  }
  return d;
}

void write_idx_pair(const std::string& dir, const RawImages& data) {
  ensure_dir(dir);
  std::vector<unsigned char> im;
  im.reserve(data.pixels.size() + 16);
  append_be32(im, 0x00000803);
  append_be32(im, uint32_t(data.n));
  append_be32(im, uint32_t(data.h));
  append_be32(im, uint32_t(data.w));
  im.insert(im.end(), data.pixels.begin(), data.pixels.end());

  std::vector<unsigned char> lb;
  lb.reserve(size_t(data.n) + 8);
  append_be32(lb, 0x00000801);
  append_be32(lb, uint32_t(data.n));
  for (int v : data.labels) lb.push_back((unsigned char)(v));

  auto base = std::filesystem::path(dir);
  auto imz = gzip(im.data(), im.size());
  write_file((base / "images-idx3-ubyte.gz").string(), imz.data(), imz.size());
  auto lbz = gzip(lb.data(), lb.size());
  write_file((base / "labels-idx1-ubyte.gz").string(), lbz.data(), lbz.size());
}

}  // namespace xinv
