#pragma once

#include <string>
#include <vector>

#include "xinv/tensor.hpp"
#include "xinv/zoo.hpp"

namespace xinv {

struct LabeledImages {
  TensorF images;           // [N, C, H, W] in [0,1], profile-sized
  std::vector<int> labels;  // in [0, class_count)
  int64_t count() const { return int64_t(labels.size()); }
};

// 8-bit grid -> one [0,1] profile-sized plane: divide by 255, bilinear resize
void preprocess_u8(const unsigned char* px, int h, int w, const DatasetProfile& p, float* out);
// already-unitless plane -> profile size (resize only, idempotent at size)
void preprocess_plane(const float* px, int h, int w, const DatasetProfile& p, float* out);

// Reads either an MNIST-style IDX pair (images-idx3-ubyte[.gz] +
// labels-idx1-ubyte[.gz], or any *-idx3-ubyte* file with its idx1 sibling) or
// a directory holding labels.csv ("filename,label") plus image files.
LabeledImages load_dataset(const DatasetProfile& p, const std::string& source_path);

// Preprocessed-collection cache: images.npy + labels.npy + meta.json with
// profile fields and content checksums.
void save_collection(const std::string& dir, const LabeledImages& data, const DatasetProfile& p);
LabeledImages load_collection(const std::string& dir, const DatasetProfile& p);
bool collection_cached(const std::string& dir);

}  // namespace xinv
