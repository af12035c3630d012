#pragma once

#include <string>
#include <vector>

#include "xinv/net.hpp"
#include "xinv/train.hpp"

namespace xinv {

// Float classifier around Net: batched prediction, penultimate-fc embeddings,
// checkpointing. Also used for the surrogate target and the attack-evaluation
// model, which share the target architecture.
class Classifier {
 public:
  Classifier(const ModelSpec& spec, uint64_t seed);

  TrainingLog train(const TensorF& x, const std::vector<int>& labels, const TensorF& holdout_x,
                    const std::vector<int>& holdout_labels, const TrainingConfig& cfg,
                    std::ostream* log = nullptr) {
    return train_classifier(net_, x, labels, holdout_x, holdout_labels, cfg, log);
  }

  // softmax confidence vectors, [N, |C|]
  TensorF predict(const TensorF& images);
  std::vector<int> predict_class(const TensorF& images);
  // penultimate fully-connected activations, [N, F]
  TensorF embed(const TensorF& images);
  double accuracy(const TensorF& images, const std::vector<int>& labels) {
    return classification_accuracy(net_, images, labels, eval_batch_);
  }

  const std::string& embed_layer() const { return embed_layer_; }
  NetF& net() { return net_; }
  const NetF& net() const { return net_; }
  const ModelSpec& spec() const { return net_.spec(); }

  void save(const std::string& path) const { net_.save(path); }
  static Classifier load(const std::string& path);

 private:
  explicit Classifier(NetF&& net);
  void resolve_embed_layer();

  NetF net_;
  std::string embed_layer_;
  int eval_batch_ = 64;
};

}  // namespace xinv
