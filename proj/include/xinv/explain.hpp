#pragma once

#include <string>
#include <vector>

#include "xinv/net.hpp"
#include "xinv/tensor.hpp"

namespace xinv {

// Saliency artifacts of a trained classifier. All gradients here are taken
// against the pre-softmax logit of the explained class.

enum class ExplanationKind { gradient, grad_input, grad_cam, lrp, sigma_cam, partial_cam };

const char* explanation_name(ExplanationKind k);
ExplanationKind parse_explanation(const std::string& s);
bool explanation_is_stack(ExplanationKind k);

template <typename T>
struct ExplanationMapT {
  Tensor<T> values;  // [H,W]
  ExplanationKind kind = ExplanationKind::gradient;
  int explained_class = -1;
  std::string source_layer;  // conv layer for CAM kinds, empty otherwise
};

template <typename T>
struct ExplanationStackT {
  Tensor<T> maps;  // [D,H,W]
  ExplanationKind kind = ExplanationKind::sigma_cam;
  int64_t depth() const { return maps.dim(0); }
};

using ExplanationMap = ExplanationMapT<float>;
using ExplanationStack = ExplanationStackT<float>;

// Per-instance explanation shape a classifier spec produces for a kind.
Shape3 explanation_shape(ExplanationKind kind, const ModelSpec& spec);

// Batched cores. images is [N,C,H,W]; classes carries the explained class for
// each row (ignored by sigma_cam). Results are raw, un-normalized maps shaped
// [N,D,He,We] with D from explanation_shape.
template <typename T>
Tensor<T> gradient_batch(Net<T>& net, const Tensor<T>& images, const std::vector<int>& classes);
template <typename T>
Tensor<T> gradient_input_batch(Net<T>& net, const Tensor<T>& images,
                               const std::vector<int>& classes);
template <typename T>
Tensor<T> grad_cam_batch(Net<T>& net, const Tensor<T>& images, const std::vector<int>& classes);
template <typename T>
Tensor<T> lrp_batch(Net<T>& net, const Tensor<T>& images, const std::vector<int>& classes);
template <typename T>
Tensor<T> sigma_cam_batch(Net<T>& net, const Tensor<T>& images);
template <typename T>
Tensor<T> partial_cam_batch(Net<T>& net, const Tensor<T>& images, const std::vector<int>& classes);

template <typename T>
Tensor<T> explain_batch(ExplanationKind kind, Net<T>& net, const Tensor<T>& images,
                        const std::vector<int>& classes);

// Single-image forms. image is [C,H,W] or [1,C,H,W].
template <typename T>
ExplanationMapT<T> gradient_map(Net<T>& net, const Tensor<T>& image, int class_index);
template <typename T>
ExplanationMapT<T> gradient_input_map(Net<T>& net, const Tensor<T>& image, int class_index);
template <typename T>
ExplanationMapT<T> grad_cam(Net<T>& net, const Tensor<T>& image, int class_index);
template <typename T>
ExplanationMapT<T> lrp_map(Net<T>& net, const Tensor<T>& image, int class_index);
template <typename T>
ExplanationStackT<T> sigma_cam(Net<T>& net, const Tensor<T>& image);
template <typename T>
ExplanationStackT<T> partial_cams(Net<T>& net, const Tensor<T>& image, int class_index);

// Min-max rescale of every trailing HxW plane into [0,1], in place. Planes
// with zero range become all-zero. Applied to maps right before they feed an
// inversion model, identically at train and attack time.
template <typename T>
void normalize_per_map(Tensor<T>& maps);

}  // namespace xinv
