#include "xinv/train.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <ostream>

#include "xinv/errors.hpp"
#include "xinv/rng.hpp"

namespace xinv {

void TrainingConfig::validate() const {
  if (!(learning_rate > 0)) throw config_error("learning_rate must be > 0");
  if (!(beta1 > 0 && beta1 < 1)) throw config_error("beta1 must be in (0,1)");
  if (!(beta2 > 0 && beta2 < 1)) throw config_error("beta2 must be in (0,1)");
  if (batch_size < 1) throw config_error("batch_size must be >= 1");
  if (epochs < 0) throw config_error("epochs must be >= 0");
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>*> params, std::vector<Tensor<T>*> grads,
              const TrainingConfig& cfg)
    : p_(std::move(params)),
      g_(std::move(grads)),
      lr_(cfg.learning_rate),
      b1_(cfg.beta1),
      b2_(cfg.beta2) {
  cfg.validate();
  if (p_.size() != g_.size()) throw validation_error("param/grad tensor lists differ in length");
  for (auto* p : p_) {
    m_.emplace_back(p->numel(), T(0));
    v_.emplace_back(p->numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const T eps = T(1e-8);
  const T c1 = T(1) - T(std::pow(b1_, double(t_)));
  const T c2 = T(1) - T(std::pow(b2_, double(t_)));
  const T b1 = T(b1_), b2 = T(b2_), lr = T(lr_);
  for (size_t k = 0; k < p_.size(); ++k) {
    T* p = p_[k]->data();
    const T* g = g_[k]->data();
    T* m = m_[k].data();
    T* v = v_[k].data();
    int64_t n = p_[k]->numel();
    for (int64_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

template <typename T>
T softmax_ce(const Tensor<T>& logits, const int* labels, int64_t n, Tensor<T>& dlogits) {
  int64_t C = logits.numel() / logits.dim(0);
  if (logits.dim(0) != n) throw shape_error("logits rows != label count");
  dlogits.resize(logits.dims());
  double total = 0;
  for (int64_t r = 0; r < n; ++r) {
    const T* l = logits.data() + r * C;
    T* d = dlogits.data() + r * C;
    if (labels[r] < 0 || labels[r] >= C)
      throw validation_error("label " + std::to_string(labels[r]) + " outside [0," +
                             std::to_string(C) + ") at row " + std::to_string(r));
    T mx = l[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, l[c]);
    double z = 0;
    for (int64_t c = 0; c < C; ++c) z += std::exp(double(l[c] - mx));
    total += std::log(z) - double(l[labels[r]] - mx);
    for (int64_t c = 0; c < C; ++c) {
      double p = std::exp(double(l[c] - mx)) / z;
      d[c] = T((p - (c == labels[r] ? 1.0 : 0.0)) / double(n));
    }
  }
  return T(total / double(n));
}

template <typename T>
T mse(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* dpred) {
  if (pred.numel() != target.numel()) throw shape_error("mse operand size mismatch");
  int64_t n = pred.numel();
  if (dpred) dpred->resize(pred.dims());
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    double e = double(pred[i]) - double(target[i]);
    total += e * e;
    if (dpred) dpred->data()[i] = T(2 * e / double(n));
  }
  return T(total / double(n));
}

template <typename T>
void gather_rows(const Tensor<T>& src, const int64_t* idx, int64_t n, Tensor<T>& dst) {
  auto d = src.dims();
  int64_t rows = d[0];
  d[0] = n;
  dst.resize(d);
  int64_t row = src.numel() / rows;
  for (int64_t i = 0; i < n; ++i) {
    if (idx[i] < 0 || idx[i] >= rows)
      throw validation_error("row index " + std::to_string(idx[i]) + " outside dataset of " +
                             std::to_string(rows));
    std::memcpy(dst.data() + i * row, src.data() + idx[i] * row, sizeof(T) * size_t(row));
  }
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& rows) {
  int64_t n = rows.dim(0), C = rows.numel() / n;
  std::vector<int> out(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const T* p = rows.data() + r * C;
    int best = 0;
    for (int64_t c = 1; c < C; ++c)
      if (p[c] > p[best]) best = int(c);
    out[size_t(r)] = best;
  }
  return out;
}

template <typename T>
double classification_accuracy(Net<T>& net, const Tensor<T>& x, const std::vector<int>& labels,
                               int batch_size) {
  if (x.numel() == 0 && labels.empty()) return std::numeric_limits<double>::quiet_NaN();
  int64_t N = x.dim(0);
  if (int64_t(labels.size()) != N) throw validation_error("holdout labels/images count mismatch");
  Tensor<T> bx;
  std::vector<int64_t> idx(static_cast<size_t>(N));
  std::iota(idx.begin(), idx.end(), 0);
  int64_t hit = 0;
  for (int64_t b0 = 0; b0 < N; b0 += batch_size) {
    int64_t nb = std::min<int64_t>(batch_size, N - b0);
    gather_rows(x, idx.data() + b0, nb, bx);
    net.forward({&bx});
    auto pred = argmax_rows(net.logits());
    for (int64_t i = 0; i < nb; ++i)
      if (pred[size_t(i)] == labels[size_t(b0 + i)]) ++hit;
  }
  return double(hit) / double(N);
}

namespace {

template <typename T>
void check_finite(T loss, int epoch, int64_t batch_start) {
  if (!std::isfinite(double(loss)))
    throw divergence_error("loss became non-finite at epoch " + std::to_string(epoch) +
                           ", batch offset " + std::to_string(batch_start) +
                           "; lower the learning rate");
}

void log_epoch(std::ostream* log, const EpochLog& e, int total, const char* metric) {
  if (!log) return;
  (*log) << "epoch " << e.epoch << "/" << total << "  loss " << e.train_loss;
  if (std::isfinite(e.holdout)) (*log) << "  " << metric << " " << e.holdout;
  (*log) << "\n";
}

}  // namespace

template <typename T>
TrainingLog train_classifier(Net<T>& net, const Tensor<T>& x, const std::vector<int>& labels,
                             const Tensor<T>& holdout_x, const std::vector<int>& holdout_labels,
                             const TrainingConfig& cfg, std::ostream* log) {
  cfg.validate();
  int64_t N = x.dim(0);
  if (int64_t(labels.size()) != N) throw validation_error("labels/images count mismatch");
  int64_t C = net.spec().class_count;
  for (int64_t i = 0; i < N; ++i)
    if (labels[size_t(i)] < 0 || labels[size_t(i)] >= C)
      throw validation_error("label " + std::to_string(labels[size_t(i)]) + " outside [0," +
                             std::to_string(C) + ") at row " + std::to_string(i));

  Adam<T> opt(net.param_tensors(), net.grad_tensors(), cfg);
  TrainingLog out;
  std::vector<int64_t> order(static_cast<size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  Tensor<T> bx, dlogits;
  std::vector<int> blabels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x1000 + uint64_t(epoch)));
    shuffle_rng.shuffle(order);
    double sum = 0;
    for (int64_t b0 = 0; b0 < N; b0 += cfg.batch_size) {
      int64_t nb = std::min<int64_t>(cfg.batch_size, N - b0);
      gather_rows(x, order.data() + b0, nb, bx);
      blabels.resize(size_t(nb));
      for (int64_t i = 0; i < nb; ++i) blabels[size_t(i)] = labels[size_t(order[size_t(b0 + i)])];
      net.forward({&bx});
      T loss = softmax_ce(net.logits(), blabels.data(), nb, dlogits);
      check_finite(loss, epoch, b0);
      net.backward(dlogits);
      opt.step();
      sum += double(loss) * double(nb);
    }
    EpochLog e{epoch + 1, sum / double(N),
               classification_accuracy(net, holdout_x, holdout_labels, cfg.batch_size)};
    log_epoch(log, e, cfg.epochs, "holdout_acc");
    out.push_back(e);
  }
  return out;
}

template <typename T>
TrainingLog train_reconstructor(Net<T>& net, const std::vector<const Tensor<T>*>& inputs,
                                const Tensor<T>& targets, const std::vector<int64_t>& train_idx,
                                const std::vector<int64_t>& val_idx, const TrainingConfig& cfg,
                                std::ostream* log) {
  cfg.validate();
  if (inputs.empty()) throw validation_error("reconstructor needs at least one input array");
  int64_t N = targets.dim(0);
  for (const auto* in : inputs)
    if (in->dim(0) != N) throw validation_error("input/target row counts differ");
  if (train_idx.empty()) throw validation_error("empty training index set");

  Adam<T> opt(net.param_tensors(), net.grad_tensors(), cfg);
  TrainingLog out;
  std::vector<int64_t> order = train_idx;
  std::vector<Tensor<T>> bin(inputs.size());
  std::vector<const Tensor<T>*> bptr(inputs.size());
  Tensor<T> btgt, dl;

  auto run_batches = [&](const std::vector<int64_t>& idx, bool learn, int epoch) {
    double sum = 0;
    for (int64_t b0 = 0; b0 < int64_t(idx.size()); b0 += cfg.batch_size) {
      int64_t nb = std::min<int64_t>(cfg.batch_size, int64_t(idx.size()) - b0);
      for (size_t k = 0; k < inputs.size(); ++k) {
        gather_rows(*inputs[k], idx.data() + b0, nb, bin[k]);
        bptr[k] = &bin[k];
      }
      gather_rows(targets, idx.data() + b0, nb, btgt);
      net.forward(bptr);
      T loss = mse(net.output(), btgt, learn ? &dl : nullptr);
      check_finite(loss, epoch, b0);
      if (learn) {
        net.backward(dl);
        opt.step();
      }
      sum += double(loss) * double(nb);
    }
    return sum / double(idx.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x2000 + uint64_t(epoch)));
    shuffle_rng.shuffle(order);
    double train_loss = run_batches(order, true, epoch);
    double val = val_idx.empty() ? std::numeric_limits<double>::quiet_NaN()
                                 : run_batches(val_idx, false, epoch);
    EpochLog e{epoch + 1, train_loss, val};
    log_epoch(log, e, cfg.epochs, "val_mse");
    out.push_back(e);
  }
  return out;
}

#define XINV_TRAIN_INSTANTIATE(T)                                                              \
  template class Adam<T>;                                                                      \
  template T softmax_ce<T>(const Tensor<T>&, const int*, int64_t, Tensor<T>&);                 \
  template T mse<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                           \
  template void gather_rows<T>(const Tensor<T>&, const int64_t*, int64_t, Tensor<T>&);         \
  template std::vector<int> argmax_rows<T>(const Tensor<T>&);                                  \
  template double classification_accuracy<T>(Net<T>&, const Tensor<T>&, const std::vector<int>&, \
                                             int);                                            \
  template TrainingLog train_classifier<T>(Net<T>&, const Tensor<T>&, const std::vector<int>&, \
                                           const Tensor<T>&, const std::vector<int>&,          \
                                           const TrainingConfig&, std::ostream*);              \
  template TrainingLog train_reconstructor<T>(Net<T>&, const std::vector<const Tensor<T>*>&,   \
                                              const Tensor<T>&, const std::vector<int64_t>&,   \
                                              const std::vector<int64_t>&, const TrainingConfig&, \
                                              std::ostream*);

XINV_TRAIN_INSTANTIATE(float)
XINV_TRAIN_INSTANTIATE(double)

}  // namespace xinv
