#pragma once

#include <string>
#include <vector>

#include "xinv/classifier.hpp"
#include "xinv/tensor.hpp"

namespace xinv {

// Reconstruction-quality metrics. All of these are pure and per-instance;
// batch loops live with the evaluation stage, aggregation at the bottom.

// 1 - mean squared pixel error; unit-range images land in [0,1]
double pixelwise_similarity(const TensorF& x, const TensorF& x_hat);

// Gaussian-windowed structural similarity, K_mu=0.01 / K_sigma=0.03 on a
// unit dynamic range, averaged over every pixel of every plane. Window
// radius follows the usual 3.5*sigma truncation; borders renormalize the
// clipped window instead of padding.
double ssim(const TensorF& a, const TensorF& b, double sigma);

// 10*log10(1/MSE) dB on unit range; identical inputs report +infinity
double psnr(const TensorF& x, const TensorF& x_hat);

// Fraction of reconstructions the evaluation classifier labels correctly
// (argmax, ties to the lowest class).
double attack_accuracy(Classifier& eval_model, const TensorF& reconstructions,
                       const std::vector<int>& labels);

// exp(-||z - z_r||^2) over penultimate-layer embeddings, one value per row
std::vector<double> embedding_similarity_rows(Classifier& eval_model, const TensorF& originals,
                                              const TensorF& reconstructions);
double embedding_similarity(Classifier& eval_model, const TensorF& x, const TensorF& x_hat);

// IoU between the CAM binarized at half its max and a {0,1} mask of the
// same shape. Two empty supports count as a perfect match.
double explanation_relevance(const TensorF& cam, const TensorF& mask);

// Block-OR reduction of a {0,1} mask down to oh x ow (factors must divide)
TensorF shrink_mask(const TensorF& mask, int64_t oh, int64_t ow);

// Pearson correlation between a CAM and its class-mean CAM over flattened
// pixels; NaN when either side is constant (no direction to correlate).
double explanation_typicalness(const TensorF& cam, const TensorF& class_mean_cam);

// mean with a 90% normal-approximation confidence half-width,
// 1.645 * sd / sqrt(n) over the population sd. Values are summed in sorted
// order so aggregates are invariant to row order.
struct Aggregate {
  double mean = 0;
  double ci90 = 0;
  int64_t n = 0;
};
Aggregate aggregate(const std::vector<double>& values);
// paired a[i]-b[i] differences; the CI that backs "X beats Y" claims
Aggregate paired_difference(const std::vector<double>& a, const std::vector<double>& b);

// Per-instance metric emission: `run_id,instance,metric,value` with one
// header line, values printed round-trip exact.
struct MetricRow {
  std::string run_id;
  int64_t instance = 0;
  std::string metric;
  double value = 0;
};
void write_metric_rows(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metric_rows(const std::string& path);

}  // namespace xinv
