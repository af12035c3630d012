#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xinv {

// Disjoint index partition: 50% target / 40% attack-train / 10% attack-test
// (the attack half split 80:20), remainders rounding toward the earlier set.
struct SplitPlan {
  int64_t total = 0;
  uint64_t seed = 0;
  std::vector<int64_t> target, attack_train, attack_test;

  // order-sensitive content hash, used as split provenance in stored artifacts
  std::string digest() const;
};

SplitPlan make_splits(int64_t collection_size, uint64_t seed);

}  // namespace xinv
