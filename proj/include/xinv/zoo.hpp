#pragma once

#include <string>

#include "xinv/model_spec.hpp"

namespace xinv {

struct DatasetProfile {
  std::string name;
  int image_hw = 0;  // square side after preprocessing
  int channels = 1;
  int class_count = 0;
};

enum class InversionArch { prediction_only, flatten, cnn, unet, flatten_unet };

const char* arch_name(InversionArch a);
InversionArch parse_arch(const std::string& s);

namespace zoo {

DatasetProfile mnist();                     // 32x32x1, 10 classes
DatasetProfile icv(int class_count = 7);    // 128x128x1 (iCV-MEFED scale)
DatasetProfile celeba(int class_count);     // 256x256x1

// Target / surrogate-target / attack-evaluation classifier for a profile
// (supplementary tables 1-3 keyed by image size).
ModelSpec target(const DatasetProfile& p);

// Inversion attack model. `expl` is the per-instance explanation shape the
// model consumes ((0,0,0) for prediction_only); multi-map stacks arrive as
// D input channels. `label` tags the spec name.
ModelSpec inversion(InversionArch arch, const DatasetProfile& p, Shape3 expl,
                    const std::string& label);

// Prediction -> CAM decoder for the surrogate pipeline (TCNN truncated at
// the CAM resolution).
ModelSpec explanation_inverter(const DatasetProfile& p, Shape3 cam);

}  // namespace zoo

}  // namespace xinv
