#pragma once

#include <optional>
#include <string>
#include <vector>

#include "xinv/classifier.hpp"
#include "xinv/inversion.hpp"
#include "xinv/splits.hpp"

namespace xinv {

// Which CAMs the image inverter trains on. Attack time always feeds
// reconstructed CAMs; rs_cam trains on those too (no train/attack shift),
// s_cam trains on the surrogate's own maps (upper bound, recorded for
// comparison runs).
enum class SurrogateMode { rs_cam, s_cam };

const char* surrogate_mode_name(SurrogateMode m);
SurrogateMode parse_surrogate_mode(const std::string& s);

// Attention-transfer attack on a target that serves predictions only. Three
// trained parts, built strictly in order:
//   surrogate_target      the target architecture retrained on attacker rows,
//                         the only source of CAMs in this pipeline
//   explanation_inverter  prediction -> CAM decoder fit against surrogate CAMs
//   image_inverter        ordinary (prediction, CAM) -> image inverter
// At attack time the CAM slot is filled by the explanation inverter's output.
struct SurrogateBundle {
  DatasetProfile profile;
  InversionArch arch = InversionArch::unet;
  SurrogateMode mode = SurrogateMode::rs_cam;
  uint64_t seed = 0;
  Shape3 cam_shape{};                    // surrogate grad-CAM shape
  std::string explanation_kind = "grad_cam";
  std::string target_checksum;           // the breached classifier, once seen
  std::string split_digest;              // split plan all stages trained under
  std::string run_id;

  std::optional<Classifier> surrogate_target;
  std::optional<NetF> explanation_inverter;
  std::optional<InversionModel> image_inverter;

  bool complete() const {
    return surrogate_target && explanation_inverter && image_inverter;
  }
};

// Untrained skeleton; fixes the CAM geometry from the target architecture.
// prediction_only is refused (nothing to feed a CAM into).
SurrogateBundle make_surrogate_bundle(const DatasetProfile& profile, InversionArch arch,
                                      SurrogateMode mode, uint64_t seed);

// Stage 1: retrain the target architecture on attack_train rows only;
// attack_test rows are the logged holdout. Target-split rows never enter.
TrainingLog train_surrogate_target(SurrogateBundle& b, const TensorF& images,
                                   const std::vector<int>& labels, const SplitPlan& plan,
                                   const TrainingConfig& cfg, std::ostream* log = nullptr);

// Stage 2: fit prediction -> CAM against the surrogate's grad-CAMs over the
// breach rows. `breach` must be a prediction-only capture of the true target
// on attack_train rows; the true target's own explanations are never allowed
// in here.
TrainingLog train_explanation_inverter(SurrogateBundle& b, const BreachSet& breach,
                                       const TensorF& images, const SplitPlan& plan,
                                       const TrainingConfig& cfg, std::ostream* log = nullptr);

// Stage 3: fit the image inverter on (prediction, CAM) -> image where the CAM
// stream is chosen by the bundle mode. rs_cam requires stage 2 first.
TrainingLog train_image_inverter(SurrogateBundle& b, const BreachSet& breach,
                                 const TensorF& images, const SplitPlan& plan,
                                 const TrainingConfig& cfg, std::ostream* log = nullptr);

// predictions [N,|C|] -> CAMs [N,c,h,w], clamped at zero (CAMs are
// non-negative by definition; the decoder's final layer is linear).
TensorF reconstruct_surrogate_explanation(SurrogateBundle& b, const TensorF& predictions,
                                          int batch = 64);

// Full composition: predictions -> reconstructed CAMs -> images in [0,1].
TensorF attack_nonexplainable(SurrogateBundle& b, const TensorF& predictions, int batch = 64);

// Three linked checkpoints plus manifest.json (mode, geometry, provenance
// hashes). Same append-only stance as the breach store.
void save_surrogate(const std::string& dir, const SurrogateBundle& b);
SurrogateBundle load_surrogate(const std::string& dir);

}  // namespace xinv
