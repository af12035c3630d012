#include "xinv/splits.hpp"

#include <numeric>

#include "xinv/errors.hpp"
#include "xinv/io.hpp"
#include "xinv/rng.hpp"

namespace xinv {

SplitPlan make_splits(int64_t collection_size, uint64_t seed) {
  if (collection_size < 10)
    throw validation_error("collection of " + std::to_string(collection_size) +
                           " cannot honor the 50/40/10 split protocol (need >= 10)");
  std::vector<int64_t> perm(static_cast<size_t>(collection_size));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(seed, 0x53504c49));  // dedicated stream, "SPLI"
  rng.shuffle(perm);

  int64_t n_target = (collection_size + 1) / 2;
  int64_t n_attack = collection_size - n_target;
  int64_t n_train = (4 * n_attack + 4) / 5;  // ceil(0.8 * attack)

  SplitPlan plan;
  plan.total = collection_size;
  plan.seed = seed;
  plan.target.assign(perm.begin(), perm.begin() + n_target);
  plan.attack_train.assign(perm.begin() + n_target, perm.begin() + n_target + n_train);
  plan.attack_test.assign(perm.begin() + n_target + n_train, perm.end());
  return plan;
}

std::string SplitPlan::digest() const {
  std::vector<int64_t> buf;
  buf.reserve(size_t(total) + 8);
  buf.push_back(total);
  buf.push_back(int64_t(seed));
  for (const auto* part : {&target, &attack_train, &attack_test}) {
    buf.push_back(int64_t(part->size()));
    buf.insert(buf.end(), part->begin(), part->end());
  }
  return sha256_hex(buf.data(), buf.size() * sizeof(int64_t));
}

}  // namespace xinv
