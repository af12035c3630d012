#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xinv {

// Declarative network description mirroring the supplementary-table rows:
// conv / pool / fc / upsample (transposed conv), plus explicit named inputs
// so inversion models can merge a prediction vector with explanation maps.

enum class LayerKind { conv, pool, fc, upsample };
enum class Act { none, relu, softmax };

struct Shape3 {
  int64_t c = 0, h = 0, w = 0;
  int64_t numel() const { return c * h * w; }
  bool operator==(const Shape3& o) const = default;
  std::string str() const;
};

struct InputSpec {
  std::string name;
  Shape3 shape;  // vectors use (width,1,1)
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int out_channels = 0;  // conv/upsample channels; fc width
  Act act = Act::none;
  std::vector<std::string> from;  // producers; empty = previous row
  std::string bypass;             // extra producer concatenated on the channel axis
};

struct ModelSpec {
  std::string name;
  std::vector<InputSpec> inputs;
  std::vector<LayerSpec> layers;
  int class_count = 0;  // > 0 marks a classifier head contract

  // Throws validation_error naming the first inconsistent layer; returns
  // per-layer output shapes on success.
  std::vector<Shape3> validate() const;

  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
};

const char* layer_kind_name(LayerKind k);
const char* act_name(Act a);

}  // namespace xinv
