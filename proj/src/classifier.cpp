#include "xinv/classifier.hpp"

#include <cstring>
#include <functional>
#include <numeric>

#include "xinv/errors.hpp"

namespace xinv {

Classifier::Classifier(const ModelSpec& spec, uint64_t seed) : net_(spec, seed) {
  resolve_embed_layer();
}

Classifier::Classifier(NetF&& net) : net_(std::move(net)) { resolve_embed_layer(); }

Classifier Classifier::load(const std::string& path) { return Classifier(NetF::load(path)); }

void Classifier::resolve_embed_layer() {
  std::vector<std::string> fcs;
  for (const auto& l : net_.spec().layers)
    if (l.kind == LayerKind::fc) fcs.push_back(l.name);
  if (fcs.size() < 2)
    throw unsupported_error("model '" + net_.spec().name +
                            "' has no penultimate fully-connected layer to embed from");
  embed_layer_ = fcs[fcs.size() - 2];
}

namespace {

// run `images` through net in chunks, copying `width` values per row out of `tap`
TensorF batched_rows(NetF& net, const TensorF& images, int batch,
                     const std::function<const TensorF&()>& tap, int64_t width) {
  int64_t N = images.dim(0);
  TensorF out(N, width);
  TensorF bx;
  std::vector<int64_t> idx(static_cast<size_t>(N));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t b0 = 0; b0 < N; b0 += batch) {
    int64_t nb = std::min<int64_t>(batch, N - b0);
    gather_rows(images, idx.data() + b0, nb, bx);
    net.forward({&bx});
    const TensorF& src = tap();
    if (src.numel() != nb * width) throw shape_error("unexpected tap width");
    std::memcpy(out.data() + b0 * width, src.data(), sizeof(float) * size_t(nb * width));
  }
  return out;
}

}  // namespace

TensorF Classifier::predict(const TensorF& images) {
  return batched_rows(
      net_, images, eval_batch_, [this]() -> const TensorF& { return net_.output(); },
      net_.spec().class_count);
}

std::vector<int> Classifier::predict_class(const TensorF& images) {
  return argmax_rows(predict(images));
}

TensorF Classifier::embed(const TensorF& images) {
  int64_t width = net_.nodes()[net_.node_index(embed_layer_)].out_shape.numel();
  return batched_rows(
      net_, images, eval_batch_,
      [this]() -> const TensorF& { return net_.activation(embed_layer_); }, width);
}

}  // namespace xinv
