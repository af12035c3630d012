#include "xinv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "xinv/errors.hpp"
#include "xinv/io.hpp"
#include "xinv/train.hpp"

namespace xinv {

namespace {

void need_same_shape(const TensorF& a, const TensorF& b, const char* who) {
  if (a.dims() != b.dims())
    throw shape_error(std::string(who) + " needs matching shapes");
}

double mean_sq_err(const TensorF& a, const TensorF& b) {
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s / double(a.numel());
}

}  // namespace

double pixelwise_similarity(const TensorF& x, const TensorF& x_hat) {
  need_same_shape(x, x_hat, "pixelwise_similarity");
  return 1.0 - mean_sq_err(x, x_hat);
}

double psnr(const TensorF& x, const TensorF& x_hat) {
  need_same_shape(x, x_hat, "psnr");
  double mse = mean_sq_err(x, x_hat);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

// truncated Gaussian taps; each output position renormalizes over the taps
// that fall inside the plane, so borders need no padding policy
std::vector<double> gauss_taps(double sigma) {
  int r = std::max(1, int(3.5 * sigma + 0.5));
  std::vector<double> k(size_t(2 * r + 1));
  for (int i = -r; i <= r; ++i)
    k[size_t(i + r)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
  return k;
}

void filter_plane(const std::vector<double>& img, int64_t h, int64_t w,
                  const std::vector<double>& k, std::vector<double>& tmp,
                  std::vector<double>& out) {
  int64_t r = (int64_t(k.size()) - 1) / 2;
  tmp.resize(size_t(h * w));
  out.resize(size_t(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0, wsum = 0;
      for (int64_t dx = -r; dx <= r; ++dx) {
        int64_t xx = x + dx;
        if (xx < 0 || xx >= w) continue;
        double kw = k[size_t(dx + r)];
        acc += kw * img[size_t(y * w + xx)];
        wsum += kw;
      }
      tmp[size_t(y * w + x)] = acc / wsum;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0, wsum = 0;
      for (int64_t dy = -r; dy <= r; ++dy) {
        int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        double kw = k[size_t(dy + r)];
        acc += kw * tmp[size_t(yy * w + x)];
        wsum += kw;
      }
      out[size_t(y * w + x)] = acc / wsum;
    }
}

}  // namespace

double ssim(const TensorF& a, const TensorF& b, double sigma) {
  need_same_shape(a, b, "ssim");
  if (a.rank() < 2) throw shape_error("ssim needs at least HxW inputs");
  if (!(sigma > 0)) throw validation_error("ssim window sigma must be positive");
  constexpr double c1 = 1e-4;  // (0.01 * L)^2, L = 1
  constexpr double c2 = 9e-4;  // (0.03 * L)^2

  int64_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  int64_t planes = a.numel() / (h * w);
  auto k = gauss_taps(sigma);

  std::vector<double> pa(size_t(h * w)), pb(size_t(h * w)), prod(size_t(h * w));
  std::vector<double> tmp, ma, mb, saa, sbb, sab;
  double sum = 0;
  for (int64_t p = 0; p < planes; ++p) {
    const float* fa = a.data() + p * h * w;
    const float* fb = b.data() + p * h * w;
    for (int64_t i = 0; i < h * w; ++i) pa[size_t(i)] = fa[i];
    for (int64_t i = 0; i < h * w; ++i) pb[size_t(i)] = fb[i];

    filter_plane(pa, h, w, k, tmp, ma);
    filter_plane(pb, h, w, k, tmp, mb);
    for (int64_t i = 0; i < h * w; ++i) prod[size_t(i)] = pa[size_t(i)] * pa[size_t(i)];
    filter_plane(prod, h, w, k, tmp, saa);
    for (int64_t i = 0; i < h * w; ++i) prod[size_t(i)] = pb[size_t(i)] * pb[size_t(i)];
    filter_plane(prod, h, w, k, tmp, sbb);
    for (int64_t i = 0; i < h * w; ++i) prod[size_t(i)] = pa[size_t(i)] * pb[size_t(i)];
    filter_plane(prod, h, w, k, tmp, sab);

    for (int64_t i = 0; i < h * w; ++i) {
      double mua = ma[size_t(i)], mub = mb[size_t(i)];
      double va = saa[size_t(i)] - mua * mua;
      double vb = sbb[size_t(i)] - mub * mub;
      double cab = sab[size_t(i)] - mua * mub;
      double num = (2.0 * mua * mub + c1) * (2.0 * cab + c2);
      double den = (mua * mua + mub * mub + c1) * (va + vb + c2);
      sum += num / den;
    }
  }
  return sum / double(planes * h * w);
}

double attack_accuracy(Classifier& eval_model, const TensorF& reconstructions,
                       const std::vector<int>& labels) {
  return eval_model.accuracy(reconstructions, labels);
}

std::vector<double> embedding_similarity_rows(Classifier& eval_model, const TensorF& originals,
                                              const TensorF& reconstructions) {
  need_same_shape(originals, reconstructions, "embedding_similarity");
  TensorF za = eval_model.embed(originals);
  TensorF zb = eval_model.embed(reconstructions);
  int64_t n = za.dim(0), f = za.dim(1);
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double d2 = 0;
    for (int64_t j = 0; j < f; ++j) {
      double d = double(za.at2(i, j)) - double(zb.at2(i, j));
      d2 += d * d;
    }
    out[size_t(i)] = std::exp(-d2);
  }
  return out;
}

double embedding_similarity(Classifier& eval_model, const TensorF& x, const TensorF& x_hat) {
  need_same_shape(x, x_hat, "embedding_similarity");
  TensorF a = x, b = x_hat;
  if (a.rank() == 3) {
    a.resize({1, x.dim(0), x.dim(1), x.dim(2)});
    std::memcpy(a.data(), x.data(), sizeof(float) * size_t(x.numel()));
    b.resize({1, x.dim(0), x.dim(1), x.dim(2)});
    std::memcpy(b.data(), x_hat.data(), sizeof(float) * size_t(x.numel()));
  }
  if (a.dim(0) != 1)
    throw shape_error("embedding_similarity scores one instance; use the _rows form");
  return embedding_similarity_rows(eval_model, a, b)[0];
}

double explanation_relevance(const TensorF& cam, const TensorF& mask) {
  need_same_shape(cam, mask, "explanation_relevance");
  float top = 0;
  for (int64_t i = 0; i < cam.numel(); ++i) top = std::max(top, cam[i]);
  double thr = 0.5 * double(top);

  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < cam.numel(); ++i) {
    bool in_cam = top > 0 && double(cam[i]) >= thr;
    bool in_mask = mask[i] > 0.5f;
    inter += in_cam && in_mask;
    uni += in_cam || in_mask;
  }
  if (uni == 0) return 1.0;  // nothing salient, nothing masked: vacuous match
  return double(inter) / double(uni);
}

TensorF shrink_mask(const TensorF& mask, int64_t oh, int64_t ow) {
  if (mask.rank() < 2) throw shape_error("shrink_mask needs at least HxW input");
  int64_t h = mask.dim(mask.rank() - 2), w = mask.dim(mask.rank() - 1);
  if (oh <= 0 || ow <= 0 || h % oh || w % ow)
    throw validation_error("mask " + std::to_string(h) + "x" + std::to_string(w) +
                           " does not tile into " + std::to_string(oh) + "x" +
                           std::to_string(ow));
  int64_t fh = h / oh, fw = w / ow, planes = mask.numel() / (h * w);

  std::vector<int64_t> dims = mask.dims();
  dims[dims.size() - 2] = oh;
  dims[dims.size() - 1] = ow;
  TensorF out;
  out.resize(dims);
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        float hit = 0;
        for (int64_t dy = 0; dy < fh && hit == 0; ++dy)
          for (int64_t dx = 0; dx < fw; ++dx)
            if (mask[p * h * w + (y * fh + dy) * w + (x * fw + dx)] > 0.5f) {
              hit = 1;
              break;
            }
        out[p * oh * ow + y * ow + x] = hit;
      }
  return out;
}

double explanation_typicalness(const TensorF& cam, const TensorF& class_mean_cam) {
  need_same_shape(cam, class_mean_cam, "explanation_typicalness");
  int64_t n = cam.numel();
  double ma = 0, mb = 0;
  for (int64_t i = 0; i < n; ++i) ma += cam[i];
  for (int64_t i = 0; i < n; ++i) mb += class_mean_cam[i];
  ma /= double(n);
  mb /= double(n);
  double saa = 0, sbb = 0, sab = 0;
  for (int64_t i = 0; i < n; ++i) {
    double da = double(cam[i]) - ma, db = double(class_mean_cam[i]) - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0 || sbb == 0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.size() < 2)
    throw validation_error("aggregation needs at least two values");
  for (double v : values)
    if (!std::isfinite(v))
      throw validation_error("aggregation input holds a non-finite value; filter missing "
                             "rows first");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());

  Aggregate out;
  out.n = int64_t(sorted.size());
  double sum = 0;
  for (double v : sorted) sum += v;
  out.mean = sum / double(out.n);
  double ss = 0;
  for (double v : sorted) ss += (v - out.mean) * (v - out.mean);
  double sd = std::sqrt(ss / double(out.n));
  out.ci90 = 1.645 * sd / std::sqrt(double(out.n));
  return out;
}

Aggregate paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw validation_error("paired difference needs equally many values on both sides");
  std::vector<double> diff(a.size());
  for (size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  return aggregate(diff);
}

void write_metric_rows(const std::string& path, const std::vector<MetricRow>& rows) {
  std::string text = "run_id,instance,metric,value\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%lld,%s,%.17g\n", r.run_id.c_str(),
                  (long long)r.instance, r.metric.c_str(), r.value);
    text += buf;
  }
  write_file(path, text.data(), text.size());
}

std::vector<MetricRow> read_metric_rows(const std::string& path) {
  auto bytes = read_file(path);
  std::string text(bytes.begin(), bytes.end());

  std::vector<MetricRow> rows;
  size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "run_id,instance,metric,value")
        throw io_error(path + " is not a metric table (unexpected header)");
      continue;
    }
    size_t c1 = line.find(',');
    size_t c2 = line.find(',', c1 + 1);
    size_t c3 = line.find(',', c2 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos || c3 == std::string::npos)
      throw io_error(path + " line " + std::to_string(line_no) + " is not run_id,instance,metric,value");
    MetricRow r;
    r.run_id = line.substr(0, c1);
    r.instance = std::strtoll(line.c_str() + c1 + 1, nullptr, 10);
    r.metric = line.substr(c2 + 1, c3 - c2 - 1);
    r.value = std::strtod(line.c_str() + c3 + 1, nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace xinv
