#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xinv/model_spec.hpp"
#include "xinv/tensor.hpp"

namespace xinv {

// Executable network built from a ModelSpec. Owns parameters, gradients and
// per-layer activation buffers; supports multiple named inputs, channel
// concatenation through bypass links, and gradient taps on any activation
// (used by the explanation code).

template <typename T>
class Net {
 public:
  Net(const ModelSpec& spec, uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  int64_t param_count() const;

  // inputs in spec order; each tensor is [batch, c, h, w] (vectors [batch, c])
  void forward(const std::vector<const Tensor<T>*>& inputs);
  const Tensor<T>& output() const { return nodes_.back().y; }
  const Tensor<T>& logits() const;  // final layer pre-activation
  const Tensor<T>& activation(const std::string& layer) const;

  // dlogits: gradient wrt the final layer's pre-activation output. Fills all
  // parameter gradients, input gradients, and per-activation gradients.
  void backward(const Tensor<T>& dlogits);
  const Tensor<T>& input_grad(const std::string& input_name) const;
  const Tensor<T>& activation_grad(const std::string& layer) const;

  // last conv layer in the chain feeding the classifier head (explanations)
  std::string last_conv_layer() const;

  struct Node {
    LayerSpec spec;            // kind==conv with kernel 0 marks an input node
    bool is_input = false;
    Shape3 in_shape, out_shape;  // in_shape includes bypass channels
    std::vector<int> producers;  // node indices feeding this one
    int bypass_producer = -1;
    Tensor<T> w, b, gw, gb;
    Tensor<T> xbuf;    // materialized input when concatenation is needed
    Tensor<T> y, z;    // post-activation output; z kept for the final softmax
    Tensor<T> dy, dz;  // grads wrt y (accumulated) and pre-activation
    Tensor<int32_t> pool_idx;
    bool needs_xbuf = false;
  };
  const std::vector<Node>& nodes() const { return nodes_; }
  int node_index(const std::string& name) const;
  // input actually seen by node i (concat buffer or sole producer's output)
  const Tensor<T>& node_input(int i) const;

  // flat parameter access in fixed layer order (optimizer + checkpoints)
  std::vector<Tensor<T>*> param_tensors();
  std::vector<Tensor<T>*> grad_tensors();

  void save(const std::string& path) const;
  static Net load(const std::string& path);
  std::string param_hash() const;

  int64_t batch() const { return batch_; }

 private:
  ModelSpec spec_;
  std::vector<Node> nodes_;
  std::map<std::string, int> index_;
  int64_t batch_ = 0;

  void ensure_batch(int64_t n);
  void forward_node(int i);
  void backward_node(int i);
};

using NetF = Net<float>;
using NetD = Net<double>;

}  // namespace xinv
