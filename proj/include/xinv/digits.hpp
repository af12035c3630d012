#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xinv {

// Procedurally rendered digit corpus in the MNIST wire format: stroke glyphs
// for 0-9 with per-sample affine jitter, so classifiers and inversion attacks
// have stable visual structure to learn without any external download.
struct RawImages {
  int64_t n = 0, h = 0, w = 0;
  std::vector<unsigned char> pixels;  // n*h*w, row-major
  std::vector<int> labels;
};

// labels cycle 0..9; deterministic for a (count, seed) pair
RawImages make_digit_corpus(int64_t count, uint64_t seed);

// writes images-idx3-ubyte.gz + labels-idx1-ubyte.gz into dir
void write_idx_pair(const std::string& dir, const RawImages& data);

}  // namespace xinv
