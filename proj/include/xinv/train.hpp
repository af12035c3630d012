#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "xinv/net.hpp"
#include "xinv/tensor.hpp"

namespace xinv {

struct TrainingConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 64;
  int epochs = 20;
  uint64_t seed = 0;

  void validate() const;  // throws config_error on out-of-range fields
};

struct EpochLog {
  int epoch = 0;          // 1-based
  double train_loss = 0;  // mean over instances seen this epoch
  double holdout = 0;     // held-out accuracy / validation MSE; NaN if none
};
using TrainingLog = std::vector<EpochLog>;

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>*> params, std::vector<Tensor<T>*> grads, const TrainingConfig& cfg);
  void step();
  int64_t steps() const { return t_; }

 private:
  std::vector<Tensor<T>*> p_, g_;
  std::vector<std::vector<T>> m_, v_;
  double lr_, b1_, b2_;
  int64_t t_ = 0;
};

// Mean cross-entropy from raw logits [N,C]; fills dlogits with
// (softmax - onehot)/N, the gradient backward() expects at the final node.
template <typename T>
T softmax_ce(const Tensor<T>& logits, const int* labels, int64_t n, Tensor<T>& dlogits);

// Mean squared error over every element; dpred (optional) gets 2*(pred-t)/numel.
template <typename T>
T mse(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* dpred);

// Copy rows idx[0..n) of src (axis 0) into dst.
template <typename T>
void gather_rows(const Tensor<T>& src, const int64_t* idx, int64_t n, Tensor<T>& dst);

template <typename T>
TrainingLog train_classifier(Net<T>& net, const Tensor<T>& x, const std::vector<int>& labels,
                             const Tensor<T>& holdout_x, const std::vector<int>& holdout_labels,
                             const TrainingConfig& cfg, std::ostream* log = nullptr);

// Reconstruction training over row-aligned input arrays and target images.
// train_idx/val_idx select rows; validation is forward-only and logged.
template <typename T>
TrainingLog train_reconstructor(Net<T>& net, const std::vector<const Tensor<T>*>& inputs,
                                const Tensor<T>& targets, const std::vector<int64_t>& train_idx,
                                const std::vector<int64_t>& val_idx, const TrainingConfig& cfg,
                                std::ostream* log = nullptr);

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& rows);  // ties -> lowest index

template <typename T>
double classification_accuracy(Net<T>& net, const Tensor<T>& x, const std::vector<int>& labels,
                               int batch_size);

}  // namespace xinv
