#pragma once

#include <optional>
#include <string>
#include <vector>

#include "xinv/classifier.hpp"
#include "xinv/explain.hpp"
#include "xinv/train.hpp"
#include "xinv/zoo.hpp"

namespace xinv {

// What the attacker captured from the target API: softmax vectors, the
// explanation served with each one (already per-map normalized), and the
// dataset row each tuple came from. source_indices pair tuples with images on
// the attacker's own split; at attack time they feed metrics only, never the
// model.
struct BreachSet {
  TensorF predictions;               // [N, |C|]
  TensorF explanations;              // [N, D, He, We]; numel()==0 when absent
  std::vector<int64_t> source_indices;
  std::string explanation_kind;      // "" for prediction-only breaches
  std::string target_checksum;       // param hash of the breached classifier
  std::string split_digest;
  std::string run_id;

  int64_t count() const { return predictions.dim(0); }
  bool has_explanations() const { return explanations.numel() > 0; }
};

// Query the classifier over dataset rows `indices` and capture the tuple
// table. The explained class is the argmax of each prediction (ties to the
// lowest index); maps are min-max normalized per map before storage.
BreachSet make_breach(Classifier& cls, const TensorF& images,
                      const std::vector<int64_t>& indices,
                      std::optional<ExplanationKind> kind, const std::string& split_digest,
                      int batch = 64);

// Append-only directory: predictions.npy (+ explanations.npy,
// source_indices.npy) and a checksummed manifest.json. Writing over an
// existing store is refused.
void save_breach(const std::string& dir, const BreachSet& set);
BreachSet load_breach(const std::string& dir);

struct InversionModel {
  NetF net;
  InversionArch arch;
  std::string explanation_kind;  // "" for prediction_only

  InversionModel(const ModelSpec& spec, uint64_t seed, InversionArch a, std::string kind)
      : net(spec, seed), arch(a), explanation_kind(std::move(kind)) {}
};

// expl_shape is the per-instance explanation shape ((0,0,0) for
// prediction_only, which ignores it).
InversionModel build_inversion_model(InversionArch arch, const DatasetProfile& p,
                                     Shape3 expl_shape, const std::string& expl_kind,
                                     uint64_t seed);

void save_inversion(const InversionModel& m, const std::string& path);
InversionModel load_inversion(const std::string& path, InversionArch arch,
                              const std::string& expl_kind);

// Fits tuple -> source-image regression. The last 10% of the breach rows are
// carved off as a validation slice, logged but never trained on.
std::vector<EpochLog> train_inversion(InversionModel& m, const BreachSet& breach,
                                      const TensorF& images, const TrainingConfig& cfg,
                                      std::ostream* log = nullptr);

// Batched reconstruction, clamped into [0,1]. [N,C,H,W].
TensorF invert(InversionModel& m, const BreachSet& breach, int batch = 64);

}  // namespace xinv
