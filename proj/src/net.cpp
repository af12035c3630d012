#include "xinv/net.hpp"

#include <cstdio>
#include <cmath>
#include <cstring>

#include "json.hpp"
#include "xinv/errors.hpp"
#include "xinv/io.hpp"
#include "xinv/kernels.hpp"
#include "xinv/rng.hpp"
#include "xinv/sha_stream.hpp"

namespace xinv {

namespace {

template <typename T>
void axpy(const Tensor<T>& src, Tensor<T>& dst) {
  const T* s = src.data();
  T* d = dst.data();
  for (int64_t i = 0; i < src.numel(); ++i) d[i] += s[i];
}

template <typename T>
const char* net_dtype();
template <> const char* net_dtype<float>() { return "f4"; }
template <> const char* net_dtype<double>() { return "f8"; }

}  // namespace

template <typename T>
Net<T>::Net(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
  auto shapes = spec_.validate();

  for (const auto& in : spec_.inputs) {
    Node n;
    n.is_input = true;
    n.spec.name = in.name;
    n.in_shape = n.out_shape = in.shape;
    index_[in.name] = int(nodes_.size());
    nodes_.push_back(std::move(n));
  }

  int prev = 0;
  for (size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerSpec& l = spec_.layers[li];
    Node n;
    n.spec = l;
    n.out_shape = shapes[li];
    if (l.from.empty())
      n.producers = {prev};
    else
      for (const auto& f : l.from) n.producers.push_back(index_.at(f));
    if (!l.bypass.empty()) n.bypass_producer = index_.at(l.bypass);

    Shape3 x = nodes_[n.producers[0]].out_shape;
    switch (l.kind) {
      case LayerKind::conv: {
        int64_t ic = x.c + (n.bypass_producer >= 0 ? nodes_[n.bypass_producer].out_shape.c : 0);
        n.in_shape = {ic, x.h, x.w};
        n.w.resize({l.out_channels, ic, l.kernel, l.kernel});
        n.b.resize({l.out_channels});
        break;
      }
      case LayerKind::upsample:
        n.in_shape = x;
        n.w.resize({x.c, l.out_channels, l.kernel, l.kernel});
        n.b.resize({l.out_channels});
        break;
      case LayerKind::pool:
        n.in_shape = x;
        break;
      case LayerKind::fc: {
        int64_t f = 0;
        for (int p : n.producers) f += nodes_[p].out_shape.numel();
        n.in_shape = {f, 1, 1};
        n.w.resize({f, l.out_channels});
        n.b.resize({l.out_channels});
        break;
      }
    }
    n.needs_xbuf = n.producers.size() > 1 || n.bypass_producer >= 0;

    if (n.w.numel()) {
      Rng rng(mix_seed(seed, uint64_t(nodes_.size())));
      int64_t fan_in = l.kind == LayerKind::fc ? n.in_shape.c
                                               : n.in_shape.c * l.kernel * l.kernel;
      T sd = T(std::sqrt(2.0 / double(fan_in)));
      for (int64_t i = 0; i < n.w.numel(); ++i) n.w.data()[i] = T(rng.normal()) * sd;
      n.gw.resize(n.w.dims());
      n.gb.resize(n.b.dims());
    }
    index_[l.name] = int(nodes_.size());
    prev = int(nodes_.size());
    nodes_.push_back(std::move(n));
  }
}

template <typename T>
int64_t Net<T>::param_count() const {
  int64_t n = 0;
  for (const auto& node : nodes_) n += node.w.numel() + node.b.numel();
  return n;
}

template <typename T>
int Net<T>::node_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw validation_error("model '" + spec_.name + "' has no layer '" + name + "'");
  return it->second;
}

template <typename T>
void Net<T>::ensure_batch(int64_t n) {
  if (batch_ == n) return;
  batch_ = n;
  for (auto& node : nodes_) {
    Shape3 o = node.out_shape;
    node.y.resize({n, o.c, o.h, o.w});
    node.dy.resize({n, o.c, o.h, o.w});
    if (!node.is_input) {
      node.dz.resize({n, o.c, o.h, o.w});
      if (node.spec.act == Act::softmax) node.z.resize({n, o.c, o.h, o.w});
      if (node.spec.kind == LayerKind::pool) node.pool_idx.resize({n, o.c, o.h, o.w});
      if (node.needs_xbuf) {
        Shape3 i = node.in_shape;
        node.xbuf.resize({n, i.c, i.h, i.w});
      }
    }
  }
}

template <typename T>
const Tensor<T>& Net<T>::node_input(int i) const {
  const Node& n = nodes_[i];
  return n.needs_xbuf ? n.xbuf : nodes_[n.producers[0]].y;
}

template <typename T>
void Net<T>::forward(const std::vector<const Tensor<T>*>& inputs) {
  if (inputs.size() != spec_.inputs.size())
    throw shape_error("model '" + spec_.name + "': got " + std::to_string(inputs.size()) +
                      " inputs, want " + std::to_string(spec_.inputs.size()));
  int64_t n = inputs[0]->dim(0);
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Shape3& s = spec_.inputs[i].shape;
    if (inputs[i]->dim(0) != n || inputs[i]->numel() != n * s.numel())
      throw shape_error("model '" + spec_.name + "': input '" + spec_.inputs[i].name +
                        "' shape mismatch (want per-instance " + s.str() + ")");
  }
  ensure_batch(n);
  for (size_t i = 0; i < inputs.size(); ++i)
    std::memcpy(nodes_[i].y.data(), inputs[i]->data(), sizeof(T) * size_t(inputs[i]->numel()));
  for (size_t i = inputs.size(); i < nodes_.size(); ++i) forward_node(int(i));
}

template <typename T>
void Net<T>::forward_node(int i) {
  Node& n = nodes_[i];
  int64_t N = batch_;
  Shape3 in = n.in_shape, out = n.out_shape;

  if (n.needs_xbuf) {
    // channel/flat concatenation of producers (+ bypass) into one buffer
    if (n.spec.kind == LayerKind::fc) {
      int64_t ftot = in.c, off = 0;
      for (int p : n.producers) {
        int64_t f = nodes_[p].out_shape.numel();
        const T* src = nodes_[p].y.data();
        for (int64_t b = 0; b < N; ++b)
          std::memcpy(n.xbuf.data() + b * ftot + off, src + b * f, sizeof(T) * size_t(f));
        off += f;
      }
    } else {
      int64_t hw = in.h * in.w;
      int64_t c1 = nodes_[n.producers[0]].out_shape.c;
      int64_t c2 = in.c - c1;
      const T* main = nodes_[n.producers[0]].y.data();
      const T* side = nodes_[n.bypass_producer].y.data();
      for (int64_t b = 0; b < N; ++b) {
        std::memcpy(n.xbuf.data() + b * in.c * hw, main + b * c1 * hw,
                    sizeof(T) * size_t(c1 * hw));
        std::memcpy(n.xbuf.data() + (b * in.c + c1) * hw, side + b * c2 * hw,
                    sizeof(T) * size_t(c2 * hw));
      }
    }
  }
  const T* x = node_input(i).data();

  switch (n.spec.kind) {
    case LayerKind::conv:
      kern::conv2d_fwd(x, N, in.c, in.h, in.w, n.w.data(), n.b.data(), out.c, n.spec.kernel,
                       n.spec.stride, n.spec.padding, n.y.data());
      break;
    case LayerKind::upsample:
      kern::tconv2d_fwd(x, N, in.c, in.h, in.w, n.w.data(), n.b.data(), out.c, n.spec.kernel,
                        n.spec.stride, n.spec.padding, n.y.data());
      break;
    case LayerKind::pool:
      kern::maxpool_fwd(x, N, in.c, in.h, in.w, n.spec.kernel, n.spec.stride, n.y.data(),
                        n.pool_idx.data());
      break;
    case LayerKind::fc:
      kern::gemm(N, out.c, in.c, x, n.w.data(), n.y.data(), false);
      kern::add_bias_rows(n.y.data(), n.b.data(), N, out.c);
      break;
  }

  if (n.spec.act == Act::relu) {
    kern::relu_fwd(n.y.data(), n.y.numel(), n.y.data());
  } else if (n.spec.act == Act::softmax) {
    std::memcpy(n.z.data(), n.y.data(), sizeof(T) * size_t(n.y.numel()));
    kern::softmax_rows(n.z.data(), N, out.numel(), n.y.data());
  }
}

template <typename T>
const Tensor<T>& Net<T>::logits() const {
  const Node& last = nodes_.back();
  return last.spec.act == Act::softmax ? last.z : last.y;
}

template <typename T>
const Tensor<T>& Net<T>::activation(const std::string& layer) const {
  return nodes_[node_index(layer)].y;
}

template <typename T>
void Net<T>::backward(const Tensor<T>& dlogits) {
  if (batch_ == 0) throw validation_error("backward before forward");
  if (dlogits.numel() != nodes_.back().y.numel())
    throw shape_error("dlogits shape mismatch");
  for (auto& n : nodes_) n.dy.zero();

  for (int i = int(nodes_.size()) - 1; i >= int(spec_.inputs.size()); --i) {
    Node& n = nodes_[i];
    // gradient wrt this node's pre-activation output
    bool final_node = (i == int(nodes_.size()) - 1);
    if (final_node) {
      std::memcpy(n.dz.data(), dlogits.data(), sizeof(T) * size_t(dlogits.numel()));
    } else if (n.spec.act == Act::relu) {
      kern::relu_bwd(n.dy.data(), n.y.data(), n.y.numel(), n.dz.data());
    } else {
      std::memcpy(n.dz.data(), n.dy.data(), sizeof(T) * size_t(n.dy.numel()));
    }
    backward_node(i);
  }
}

template <typename T>
void Net<T>::backward_node(int i) {
  Node& n = nodes_[i];
  int64_t N = batch_;
  Shape3 in = n.in_shape, out = n.out_shape;
  const T* x = node_input(i).data();

  Tensor<T> dxbuf;
  dxbuf.resize({N, in.c, in.h, in.w});

  switch (n.spec.kind) {
    case LayerKind::conv:
      kern::conv2d_bwd_filter(x, n.dz.data(), N, in.c, in.h, in.w, out.c, n.spec.kernel,
                              n.spec.stride, n.spec.padding, n.gw.data(), n.gb.data());
      kern::conv2d_bwd_data(n.dz.data(), N, in.c, in.h, in.w, n.w.data(), out.c, n.spec.kernel,
                            n.spec.stride, n.spec.padding, dxbuf.data());
      break;
    case LayerKind::upsample:
      kern::tconv2d_bwd_filter(x, n.dz.data(), N, in.c, in.h, in.w, out.c, n.spec.kernel,
                               n.spec.stride, n.spec.padding, n.gw.data(), n.gb.data());
      kern::tconv2d_bwd_data(n.dz.data(), N, in.c, in.h, in.w, n.w.data(), out.c, n.spec.kernel,
                             n.spec.stride, n.spec.padding, dxbuf.data());
      break;
    case LayerKind::pool:
      kern::maxpool_bwd(n.dz.data(), n.pool_idx.data(), N, in.c, in.h, in.w, n.spec.kernel,
                        n.spec.stride, dxbuf.data());
      break;
    case LayerKind::fc: {
      Tensor<T> xt, wt;
      xt.resize({in.c, N});
      kern::transpose(N, in.c, x, xt.data());
      kern::gemm(in.c, out.c, N, xt.data(), n.dz.data(), n.gw.data(), false);
      n.gb.zero();
      for (int64_t b = 0; b < N; ++b)
        for (int64_t f = 0; f < out.c; ++f) n.gb.data()[f] += n.dz.data()[b * out.c + f];
      wt.resize({out.c, in.c});
      kern::transpose(in.c, out.c, n.w.data(), wt.data());
      kern::gemm(N, in.c, out.c, n.dz.data(), wt.data(), dxbuf.data(), false);
      break;
    }
  }

  // route dxbuf back to producers (split concatenated ranges)
  if (!n.needs_xbuf) {
    axpy(dxbuf, nodes_[n.producers[0]].dy);
    return;
  }
  if (n.spec.kind == LayerKind::fc) {
    int64_t ftot = in.c, off = 0;
    for (int p : n.producers) {
      int64_t f = nodes_[p].out_shape.numel();
      T* dst = nodes_[p].dy.data();
      for (int64_t b = 0; b < N; ++b)
        for (int64_t j = 0; j < f; ++j) dst[b * f + j] += dxbuf.data()[b * ftot + off + j];
      off += f;
    }
  } else {
    int64_t hw = in.h * in.w;
    int64_t c1 = nodes_[n.producers[0]].out_shape.c;
    int64_t c2 = in.c - c1;
    T* main = nodes_[n.producers[0]].dy.data();
    T* side = nodes_[n.bypass_producer].dy.data();
    for (int64_t b = 0; b < N; ++b) {
      const T* d0 = dxbuf.data() + b * in.c * hw;
      for (int64_t j = 0; j < c1 * hw; ++j) main[b * c1 * hw + j] += d0[j];
      for (int64_t j = 0; j < c2 * hw; ++j) side[b * c2 * hw + j] += d0[c1 * hw + j];
    }
  }
}

template <typename T>
const Tensor<T>& Net<T>::input_grad(const std::string& input_name) const {
  int i = node_index(input_name);
  if (!nodes_[i].is_input)
    throw validation_error("'" + input_name + "' is not an input of model '" + spec_.name + "'");
  return nodes_[i].dy;
}

template <typename T>
const Tensor<T>& Net<T>::activation_grad(const std::string& layer) const {
  return nodes_[node_index(layer)].dy;
}

template <typename T>
std::string Net<T>::last_conv_layer() const {
  std::string found;
  for (const auto& l : spec_.layers)
    if (l.kind == LayerKind::conv) found = l.name;
  if (found.empty())
    throw unsupported_error("model '" + spec_.name + "' has no conv layer to explain");
  return found;
}

template <typename T>
std::vector<Tensor<T>*> Net<T>::param_tensors() {
  std::vector<Tensor<T>*> out;
  for (auto& n : nodes_)
    if (n.w.numel()) {
      out.push_back(&n.w);
      out.push_back(&n.b);
    }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Net<T>::grad_tensors() {
  std::vector<Tensor<T>*> out;
  for (auto& n : nodes_)
    if (n.w.numel()) {
      out.push_back(&n.gw);
      out.push_back(&n.gb);
    }
  return out;
}

static const char kCkptMagic[] = "XINVCKPT1\n";

template <typename T>
void Net<T>::save(const std::string& path) const {
  nlohmann::json j;
  j["spec"] = nlohmann::json::parse(spec_.to_json());
  j["dtype"] = net_dtype<T>();
  j["layers"] = nlohmann::json::array();
  for (const auto& n : nodes_)
    if (n.w.numel())
      j["layers"].push_back(
          {{"name", n.spec.name}, {"w", n.w.numel()}, {"b", n.b.numel()}});
  std::string head = j.dump();

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw io_error("cannot open for writing: " + path);
  bool ok = std::fwrite(kCkptMagic, 1, 10, f) == 10;
  uint64_t hl = head.size();
  ok = ok && std::fwrite(&hl, 8, 1, f) == 1;
  ok = ok && std::fwrite(head.data(), 1, head.size(), f) == head.size();
  for (const auto& n : nodes_)
    if (n.w.numel()) {
      ok = ok && std::fwrite(n.w.data(), sizeof(T), size_t(n.w.numel()), f) == size_t(n.w.numel());
      ok = ok && std::fwrite(n.b.data(), sizeof(T), size_t(n.b.numel()), f) == size_t(n.b.numel());
    }
  ok = std::fclose(f) == 0 && ok;
  if (!ok) throw io_error("short write: " + path);
}

template <typename T>
Net<T> Net<T>::load(const std::string& path) {
  auto bytes = read_file(path);
  if (bytes.size() < 18 || std::memcmp(bytes.data(), kCkptMagic, 10) != 0)
    throw io_error("not a checkpoint: " + path);
  uint64_t hl;
  std::memcpy(&hl, bytes.data() + 10, 8);
  if (bytes.size() < 18 + hl) throw io_error("truncated checkpoint header: " + path);
  nlohmann::json j = nlohmann::json::parse(std::string((char*)bytes.data() + 18, hl));
  if (j.at("dtype").get<std::string>() != net_dtype<T>())
    throw validation_error("checkpoint dtype mismatch: " + path);

  Net<T> net(ModelSpec::from_json(j.at("spec").dump()), 0);
  size_t off = 18 + hl;
  size_t li = 0;
  for (auto& n : net.nodes_)
    if (n.w.numel()) {
      const auto& entry = j.at("layers").at(li++);
      if (entry.at("name").get<std::string>() != n.spec.name ||
          entry.at("w").get<int64_t>() != n.w.numel() || entry.at("b").get<int64_t>() != n.b.numel())
        throw validation_error("checkpoint layer table mismatch at '" + n.spec.name + "': " + path);
      size_t wb = size_t(n.w.numel()) * sizeof(T), bb = size_t(n.b.numel()) * sizeof(T);
      if (off + wb + bb > bytes.size()) throw io_error("truncated checkpoint blob: " + path);
      std::memcpy(n.w.data(), bytes.data() + off, wb);
      off += wb;
      std::memcpy(n.b.data(), bytes.data() + off, bb);
      off += bb;
    }
  if (off != bytes.size()) throw io_error("trailing bytes in checkpoint: " + path);
  return net;
}

template <typename T>
std::string Net<T>::param_hash() const {
  Sha256Stream sha;
  for (const auto& n : nodes_)
    if (n.w.numel()) {
      sha.update(n.w.data(), size_t(n.w.numel()) * sizeof(T));
      sha.update(n.b.data(), size_t(n.b.numel()) * sizeof(T));
    }
  return sha.hex();
}

template class Net<float>;
template class Net<double>;

}  // namespace xinv
