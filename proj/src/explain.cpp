#include "xinv/explain.hpp"

#include <cmath>
#include <cstring>

#include "xinv/errors.hpp"
#include "xinv/kernels.hpp"

namespace xinv {

const char* explanation_name(ExplanationKind k) {
  switch (k) {
    case ExplanationKind::gradient: return "gradient";
    case ExplanationKind::grad_input: return "grad_input";
    case ExplanationKind::grad_cam: return "grad_cam";
    case ExplanationKind::lrp: return "lrp";
    case ExplanationKind::sigma_cam: return "sigma_cam";
    case ExplanationKind::partial_cam: return "partial_cam";
  }
  return "?";
}

ExplanationKind parse_explanation(const std::string& s) {
  for (auto k : {ExplanationKind::gradient, ExplanationKind::grad_input, ExplanationKind::grad_cam,
                 ExplanationKind::lrp, ExplanationKind::sigma_cam, ExplanationKind::partial_cam})
    if (s == explanation_name(k)) return k;
  throw validation_error("unknown explanation kind '" + s +
                         "' (want gradient, grad_input, grad_cam, lrp, sigma_cam or partial_cam)");
}

bool explanation_is_stack(ExplanationKind k) {
  return k == ExplanationKind::sigma_cam || k == ExplanationKind::partial_cam;
}

Shape3 explanation_shape(ExplanationKind kind, const ModelSpec& spec) {
  auto shapes = spec.validate();
  if (spec.inputs.empty()) throw validation_error("model '" + spec.name + "' has no inputs");
  if (kind == ExplanationKind::gradient || kind == ExplanationKind::grad_input ||
      kind == ExplanationKind::lrp)
    return spec.inputs[0].shape;
  int last = -1;
  for (size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::conv) last = int(i);
  if (last < 0)
    throw unsupported_error("model '" + spec.name + "' has no conv layer to explain");
  Shape3 o = shapes[size_t(last)];
  if (kind == ExplanationKind::grad_cam) return {1, o.h, o.w};
  if (kind == ExplanationKind::sigma_cam) return {int64_t(spec.class_count), o.h, o.w};
  return o;  // partial_cam: one slice per kernel of the last conv
}

namespace {

template <typename T>
void check_classes(const Net<T>& net, const Tensor<T>& images, const std::vector<int>& classes) {
  if (images.rank() != 4) throw shape_error("images must be [N,C,H,W]");
  if (int64_t(classes.size()) != images.dim(0))
    throw shape_error("want one explained class per image row");
  int c = net.spec().class_count;
  if (c <= 0) throw validation_error("model '" + net.spec().name + "' is not a classifier");
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i] < 0 || classes[i] >= c)
      throw validation_error("explained class " + std::to_string(classes[i]) + " at row " +
                             std::to_string(i) + " outside [0," + std::to_string(c) + ")");
}

template <typename T>
Tensor<T> one_hot(const std::vector<int>& classes, int class_count) {
  Tensor<T> d(int64_t(classes.size()), class_count);
  for (size_t i = 0; i < classes.size(); ++i) d.at2(int64_t(i), classes[i]) = T(1);
  return d;
}

// alpha_k-weighted slices of the last conv activation, no ReLU. Shared by
// grad_cam / sigma_cam / partial_cams so the recomposition identity
// ReLU(sum_k slice_k) == grad_cam holds bit-for-bit.
template <typename T>
Tensor<T> cam_slices(const Net<T>& net, const std::string& layer) {
  const Tensor<T>& a = net.activation(layer);
  const Tensor<T>& da = net.activation_grad(layer);
  int64_t n = a.dim(0), k = a.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out;
  out.resize(a.dims());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < k; ++c) {
      const T* dp = da.data() + (i * k + c) * hw;
      T alpha = T(0);
      for (int64_t j = 0; j < hw; ++j) alpha += dp[j];
      alpha /= T(hw);
      const T* ap = a.data() + (i * k + c) * hw;
      T* op = out.data() + (i * k + c) * hw;
      for (int64_t j = 0; j < hw; ++j) op[j] = alpha * ap[j];
    }
  return out;
}

template <typename T>
Tensor<T> relu_reduce(const Tensor<T>& slices) {
  int64_t n = slices.dim(0), k = slices.dim(1), hw = slices.dim(2) * slices.dim(3);
  Tensor<T> out(n, 1, slices.dim(2), slices.dim(3));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < hw; ++j) {
      T acc = T(0);
      for (int64_t c = 0; c < k; ++c) acc += slices[(i * k + c) * hw + j];
      out[i * hw + j] = acc > T(0) ? acc : T(0);
    }
  return out;
}

template <typename T>
std::string cam_layer(const Net<T>& net) {
  std::string layer = net.last_conv_layer();
  if (layer.empty())
    throw unsupported_error("model '" + net.spec().name + "' has no conv layer to explain");
  return layer;
}

}  // namespace

template <typename T>
Tensor<T> gradient_batch(Net<T>& net, const Tensor<T>& images, const std::vector<int>& classes) {
  check_classes(net, images, classes);
  net.forward({&images});
  net.backward(one_hot<T>(classes, net.spec().class_count));
  const Tensor<T>& g = net.input_grad(net.spec().inputs[0].name);
  Tensor<T> out;
  out.resize(images.dims());
  std::memcpy(out.data(), g.data(), sizeof(T) * size_t(g.numel()));
  return out;
}

template <typename T>
Tensor<T> gradient_input_batch(Net<T>& net, const Tensor<T>& images,
                               const std::vector<int>& classes) {
  Tensor<T> out = gradient_batch(net, images, classes);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= images[i];
  return out;
}

template <typename T>
Tensor<T> grad_cam_batch(Net<T>& net, const Tensor<T>& images, const std::vector<int>& classes) {
  return relu_reduce(partial_cam_batch(net, images, classes));
}

template <typename T>
Tensor<T> partial_cam_batch(Net<T>& net, const Tensor<T>& images,
                            const std::vector<int>& classes) {
  check_classes(net, images, classes);
  std::string layer = cam_layer(net);
  net.forward({&images});
  net.backward(one_hot<T>(classes, net.spec().class_count));
  return cam_slices(net, layer);
}

template <typename T>
Tensor<T> sigma_cam_batch(Net<T>& net, const Tensor<T>& images) {
  std::string layer = cam_layer(net);
  int cc = net.spec().class_count;
  check_classes(net, images, std::vector<int>(size_t(images.dim(0)), 0));
  net.forward({&images});
  int64_t n = images.dim(0);
  Tensor<T> out;
  bool sized = false;
  for (int c = 0; c < cc; ++c) {
    net.backward(one_hot<T>(std::vector<int>(size_t(n), c), cc));
    Tensor<T> slice = relu_reduce(cam_slices(net, layer));
    if (!sized) {
      out.resize({n, int64_t(cc), slice.dim(2), slice.dim(3)});
      sized = true;
    }
    int64_t hw = slice.dim(2) * slice.dim(3);
    for (int64_t i = 0; i < n; ++i)
      std::memcpy(out.data() + (i * cc + c) * hw, slice.data() + i * hw,
                  sizeof(T) * size_t(hw));
  }
  return out;
}

// Relevance redistribution with the epsilon rule. Each linear layer hands its
// output relevance back to its inputs in proportion to x_i * w_ij, with the
// bias left out of the redistribution so the total stays conserved; max-pool
// routes relevance to the winning input; ReLU costs nothing because inputs
// that the forward pass clipped contribute x_i = 0.
template <typename T>
Tensor<T> lrp_batch(Net<T>& net, const Tensor<T>& images, const std::vector<int>& classes) {
  check_classes(net, images, classes);
  const ModelSpec& spec = net.spec();
  if (spec.inputs.size() != 1)
    throw unsupported_error("relevance propagation needs a single-input chain model");
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::upsample)
      throw unsupported_error("relevance propagation does not support layer '" + l.name +
                              "' (upsample)");
    if (l.from.size() > 1 || !l.bypass.empty())
      throw unsupported_error("relevance propagation does not support merge layer '" + l.name +
                              "'");
  }
  // the walk below hands relevance from node i to node i-1, so the graph
  // must be a straight chain
  for (size_t i = spec.inputs.size(); i < net.nodes().size(); ++i)
    if (net.nodes()[i].producers[0] != int(i) - 1)
      throw unsupported_error("relevance propagation does not support branching at layer '" +
                              net.nodes()[i].spec.name + "'");

  net.forward({&images});
  const T eps = T(1e-6);
  auto stab = [eps](T z) { return z + (z >= T(0) ? eps : -eps); };
  int64_t n = images.dim(0);
  int cc = spec.class_count;
  const auto& nodes = net.nodes();

  // seed: the explained logit keeps its own score, everything else zero
  Tensor<T> r(n, int64_t(cc));
  const Tensor<T>& logits = net.logits();
  for (int64_t i = 0; i < n; ++i) r.at2(i, classes[i]) = logits[i * cc + classes[i]];

  for (int i = int(nodes.size()) - 1; i >= int(spec.inputs.size()); --i) {
    const auto& node = nodes[size_t(i)];
    const Tensor<T>& x = net.node_input(i);
    Shape3 in = node.in_shape, out = node.out_shape;
    Tensor<T> rin;

    switch (node.spec.kind) {
      case LayerKind::fc: {
        int64_t fin = in.c, fout = out.c;
        Tensor<T> z0(n, fout);
        kern::gemm(n, fout, fin, x.data(), node.w.data(), z0.data(), false);
        Tensor<T> s(n, fout);
        for (int64_t j = 0; j < s.numel(); ++j) s[j] = r[j] / stab(z0[j]);
        Tensor<T> wt(fout, fin);
        kern::transpose(fin, fout, node.w.data(), wt.data());
        rin.resize({n, fin});
        kern::gemm(n, fin, fout, s.data(), wt.data(), rin.data(), false);
        for (int64_t j = 0; j < rin.numel(); ++j) rin[j] *= x[j];
        break;
      }
      case LayerKind::conv: {
        Tensor<T> z0(n, out.c, out.h, out.w);
        kern::conv2d_fwd(x.data(), n, in.c, in.h, in.w, node.w.data(),
                         static_cast<const T*>(nullptr), out.c, node.spec.kernel,
                         node.spec.stride, node.spec.padding, z0.data());
        Tensor<T> s(n, out.c, out.h, out.w);
        for (int64_t j = 0; j < s.numel(); ++j) s[j] = r[j] / stab(z0[j]);
        rin.resize({n, in.c, in.h, in.w});
        kern::conv2d_bwd_data(s.data(), n, in.c, in.h, in.w, node.w.data(), out.c,
                              node.spec.kernel, node.spec.stride, node.spec.padding, rin.data());
        for (int64_t j = 0; j < rin.numel(); ++j) rin[j] *= x[j];
        break;
      }
      case LayerKind::pool:
        rin.resize({n, in.c, in.h, in.w});
        kern::maxpool_bwd(r.data(), node.pool_idx.data(), n, in.c, in.h, in.w, node.spec.kernel,
                          node.spec.stride, rin.data());
        break;
      case LayerKind::upsample:
        break;  // rejected above
    }
    r = std::move(rin);
  }

  Tensor<T> outmap;
  outmap.resize(images.dims());
  std::memcpy(outmap.data(), r.data(), sizeof(T) * size_t(r.numel()));
  return outmap;
}

template <typename T>
Tensor<T> explain_batch(ExplanationKind kind, Net<T>& net, const Tensor<T>& images,
                        const std::vector<int>& classes) {
  switch (kind) {
    case ExplanationKind::gradient: return gradient_batch(net, images, classes);
    case ExplanationKind::grad_input: return gradient_input_batch(net, images, classes);
    case ExplanationKind::grad_cam: return grad_cam_batch(net, images, classes);
    case ExplanationKind::lrp: return lrp_batch(net, images, classes);
    case ExplanationKind::sigma_cam: return sigma_cam_batch(net, images);
    case ExplanationKind::partial_cam: return partial_cam_batch(net, images, classes);
  }
  throw validation_error("bad explanation kind");
}

namespace {

template <typename T>
Tensor<T> as_batch1(const Tensor<T>& image) {
  if (image.rank() == 4 && image.dim(0) == 1) return image;
  if (image.rank() != 3) throw shape_error("image must be [C,H,W] or [1,C,H,W]");
  Tensor<T> b(1, image.dim(0), image.dim(1), image.dim(2));
  std::memcpy(b.data(), image.data(), sizeof(T) * size_t(image.numel()));
  return b;
}

template <typename T>
ExplanationMapT<T> wrap_map(Tensor<T> batch, ExplanationKind kind, int cls, std::string layer) {
  if (batch.dim(1) != 1) throw unsupported_error("map explanations need single-channel input");
  ExplanationMapT<T> m;
  m.values.resize({batch.dim(2), batch.dim(3)});
  std::memcpy(m.values.data(), batch.data(), sizeof(T) * size_t(batch.numel()));
  m.kind = kind;
  m.explained_class = cls;
  m.source_layer = std::move(layer);
  return m;
}

template <typename T>
ExplanationStackT<T> wrap_stack(Tensor<T> batch, ExplanationKind kind) {
  ExplanationStackT<T> s;
  s.maps.resize({batch.dim(1), batch.dim(2), batch.dim(3)});
  std::memcpy(s.maps.data(), batch.data(), sizeof(T) * size_t(batch.numel()));
  s.kind = kind;
  return s;
}

}  // namespace

template <typename T>
ExplanationMapT<T> gradient_map(Net<T>& net, const Tensor<T>& image, int class_index) {
  return wrap_map(gradient_batch(net, as_batch1(image), {class_index}),
                  ExplanationKind::gradient, class_index, {});
}

template <typename T>
ExplanationMapT<T> gradient_input_map(Net<T>& net, const Tensor<T>& image, int class_index) {
  return wrap_map(gradient_input_batch(net, as_batch1(image), {class_index}),
                  ExplanationKind::grad_input, class_index, {});
}

template <typename T>
ExplanationMapT<T> grad_cam(Net<T>& net, const Tensor<T>& image, int class_index) {
  return wrap_map(grad_cam_batch(net, as_batch1(image), {class_index}),
                  ExplanationKind::grad_cam, class_index, net.last_conv_layer());
}

template <typename T>
ExplanationMapT<T> lrp_map(Net<T>& net, const Tensor<T>& image, int class_index) {
  return wrap_map(lrp_batch(net, as_batch1(image), {class_index}), ExplanationKind::lrp,
                  class_index, {});
}

template <typename T>
ExplanationStackT<T> sigma_cam(Net<T>& net, const Tensor<T>& image) {
  return wrap_stack(sigma_cam_batch(net, as_batch1(image)), ExplanationKind::sigma_cam);
}

template <typename T>
ExplanationStackT<T> partial_cams(Net<T>& net, const Tensor<T>& image, int class_index) {
  return wrap_stack(partial_cam_batch(net, as_batch1(image), {class_index}),
                    ExplanationKind::partial_cam);
}

template <typename T>
void normalize_per_map(Tensor<T>& maps) {
  if (maps.rank() < 2) throw shape_error("maps must end in an HxW plane");
  int64_t plane = maps.dim(maps.rank() - 1) * maps.dim(maps.rank() - 2);
  int64_t count = maps.numel() / plane;
  for (int64_t m = 0; m < count; ++m) {
    T* p = maps.data() + m * plane;
    T lo = p[0], hi = p[0];
    for (int64_t j = 1; j < plane; ++j) {
      lo = std::min(lo, p[j]);
      hi = std::max(hi, p[j]);
    }
    if (hi == lo) {
      std::memset(p, 0, sizeof(T) * size_t(plane));
    } else {
      T range = hi - lo;
      for (int64_t j = 0; j < plane; ++j) p[j] = (p[j] - lo) / range;
    }
  }
}

#define XINV_EXPLAIN_INSTANTIATE(T)                                                            \
  template Tensor<T> gradient_batch<T>(Net<T>&, const Tensor<T>&, const std::vector<int>&);    \
  template Tensor<T> gradient_input_batch<T>(Net<T>&, const Tensor<T>&,                        \
                                             const std::vector<int>&);                         \
  template Tensor<T> grad_cam_batch<T>(Net<T>&, const Tensor<T>&, const std::vector<int>&);    \
  template Tensor<T> lrp_batch<T>(Net<T>&, const Tensor<T>&, const std::vector<int>&);         \
  template Tensor<T> sigma_cam_batch<T>(Net<T>&, const Tensor<T>&);                            \
  template Tensor<T> partial_cam_batch<T>(Net<T>&, const Tensor<T>&, const std::vector<int>&); \
  template Tensor<T> explain_batch<T>(ExplanationKind, Net<T>&, const Tensor<T>&,              \
                                      const std::vector<int>&);                                \
  template ExplanationMapT<T> gradient_map<T>(Net<T>&, const Tensor<T>&, int);                 \
  template ExplanationMapT<T> gradient_input_map<T>(Net<T>&, const Tensor<T>&, int);           \
  template ExplanationMapT<T> grad_cam<T>(Net<T>&, const Tensor<T>&, int);                     \
  template ExplanationMapT<T> lrp_map<T>(Net<T>&, const Tensor<T>&, int);                      \
  template ExplanationStackT<T> sigma_cam<T>(Net<T>&, const Tensor<T>&);                       \
  template ExplanationStackT<T> partial_cams<T>(Net<T>&, const Tensor<T>&, int);               \
  template void normalize_per_map<T>(Tensor<T>&);

XINV_EXPLAIN_INSTANTIATE(float)
XINV_EXPLAIN_INSTANTIATE(double)

}  // namespace xinv
