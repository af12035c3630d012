#include "xinv/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "json.hpp"
#include "xinv/errors.hpp"
#include "xinv/io.hpp"
#include "xinv/npy.hpp"

namespace fs = std::filesystem;

namespace xinv {

namespace {

void resize_into(const cv::Mat& f32, const DatasetProfile& p, float* out) {
  cv::Mat dst;
  if (f32.rows == p.image_hw && f32.cols == p.image_hw) {
    dst = f32;
  } else {
    cv::resize(f32, dst, cv::Size(p.image_hw, p.image_hw), 0, 0, cv::INTER_LINEAR);
  }
  for (int r = 0; r < dst.rows; ++r)
    std::memcpy(out + int64_t(r) * p.image_hw, dst.ptr<float>(r), sizeof(float) * size_t(p.image_hw));
}

uint32_t be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

struct Idx {
  std::vector<uint32_t> dims;
  std::vector<unsigned char> payload;
};

Idx parse_idx(std::vector<unsigned char> bytes, const std::string& what) {
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
    bytes = gunzip(bytes.data(), bytes.size());
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0)
    throw io_error(what + ": not an IDX container");
  if (bytes[2] != 0x08) throw io_error(what + ": only unsigned-byte IDX payloads are supported");
  size_t ndim = bytes[3];
  if (ndim < 1 || ndim > 3 || bytes.size() < 4 + 4 * ndim)
    throw io_error(what + ": malformed IDX header");
  Idx out;
  uint64_t n = 1;
  for (size_t i = 0; i < ndim; ++i) {
    out.dims.push_back(be32(bytes.data() + 4 + 4 * i));
    n *= out.dims.back();
  }
  if (bytes.size() != 4 + 4 * ndim + n)
    throw io_error(what + ": payload is " + std::to_string(bytes.size() - 4 - 4 * ndim) +
                   " bytes, header promises " + std::to_string(n));
  out.payload.assign(bytes.begin() + long(4 + 4 * ndim), bytes.end());
  return out;
}

std::string find_variant(const std::string& base) {
  if (file_exists(base + ".gz")) return base + ".gz";
  if (file_exists(base)) return base;
  return {};
}

LabeledImages load_idx_pair(const DatasetProfile& p, const std::string& images_path,
                            const std::string& labels_path) {
  Idx im = parse_idx(read_file(images_path), images_path);
  Idx lb = parse_idx(read_file(labels_path), labels_path);
  if (im.dims.size() != 3) throw io_error(images_path + ": expected idx3 (count,rows,cols)");
  if (lb.dims.size() != 1) throw io_error(labels_path + ": expected idx1 (count)");
  if (im.dims[0] != lb.dims[0])
    throw validation_error("image/label counts differ: " + std::to_string(im.dims[0]) + " vs " +
                           std::to_string(lb.dims[0]));
  int64_t n = im.dims[0], h = im.dims[1], w = im.dims[2];
  if (n == 0) throw io_error(images_path + ": zero instances");

  LabeledImages out;
  out.images.resize({n, 1, p.image_hw, p.image_hw});
  out.labels.resize(size_t(n));
  int64_t plane = int64_t(p.image_hw) * p.image_hw;
  for (int64_t i = 0; i < n; ++i) {
    int label = lb.payload[size_t(i)];
    if (label >= p.class_count)
      throw validation_error("record " + std::to_string(i) + ": label " + std::to_string(label) +
                             " outside [0," + std::to_string(p.class_count) + ")");
    out.labels[size_t(i)] = label;
    preprocess_u8(im.payload.data() + i * h * w, int(h), int(w), p, out.images.data() + i * plane);
  }
  return out;
}

LabeledImages load_manifest_dir(const DatasetProfile& p, const std::string& dir) {
  std::string text;
  {
    auto bytes = read_file((fs::path(dir) / "labels.csv").string());
    text.assign(bytes.begin(), bytes.end());
  }
  std::vector<std::pair<std::string, int>> records;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == "filename,label") continue;
    auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw io_error("labels.csv line " + std::to_string(lineno) + ": expected filename,label");
    std::string name = line.substr(0, comma);
    int label;
    try {
      size_t used = 0;
      label = std::stoi(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw io_error("labels.csv line " + std::to_string(lineno) + ": bad label '" +
                     line.substr(comma + 1) + "'");
    }
    if (label < 0 || label >= p.class_count)
      throw validation_error("labels.csv line " + std::to_string(lineno) + ": label " +
                             std::to_string(label) + " outside [0," +
                             std::to_string(p.class_count) + ")");
    records.emplace_back(name, label);
  }
  if (records.empty()) throw io_error(dir + ": zero instances in labels.csv");

  LabeledImages out;
  int64_t n = int64_t(records.size());
  int64_t plane = int64_t(p.image_hw) * p.image_hw;
  out.images.resize({n, 1, p.image_hw, p.image_hw});
  for (int64_t i = 0; i < n; ++i) {
    std::string path = (fs::path(dir) / records[size_t(i)].first).string();
    cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (img.empty())
      throw io_error("record " + std::to_string(i) + " ('" + records[size_t(i)].first +
                     "'): missing or undecodable image");
    preprocess_u8(img.ptr<unsigned char>(0), img.rows, img.cols, p,
                  out.images.data() + i * plane);
    out.labels.push_back(records[size_t(i)].second);
  }
  return out;
}

}  // namespace

void preprocess_u8(const unsigned char* px, int h, int w, const DatasetProfile& p, float* out) {
  if (p.channels != 1) throw unsupported_error("built-in profiles are single-channel");
  cv::Mat src(h, w, CV_8UC1, const_cast<unsigned char*>(px));
  cv::Mat f;
  src.convertTo(f, CV_32F, 1.0 / 255.0);
  resize_into(f, p, out);
}

void preprocess_plane(const float* px, int h, int w, const DatasetProfile& p, float* out) {
  if (p.channels != 1) throw unsupported_error("built-in profiles are single-channel");
  cv::Mat src(h, w, CV_32FC1, const_cast<float*>(px));
  resize_into(src, p, out);
}

LabeledImages load_dataset(const DatasetProfile& p, const std::string& source_path) {
  if (fs::is_directory(source_path)) {
    fs::path dir(source_path);
    if (file_exists((dir / "labels.csv").string())) return load_manifest_dir(p, source_path);
    std::string images = find_variant((dir / "images-idx3-ubyte").string());
    std::string labels = find_variant((dir / "labels-idx1-ubyte").string());
    if (!images.empty() && !labels.empty()) return load_idx_pair(p, images, labels);
    throw io_error(source_path +
                   ": no dataset found (expected labels.csv or images-idx3-ubyte[.gz] + "
                   "labels-idx1-ubyte[.gz])");
  }
  if (!file_exists(source_path)) throw io_error(source_path + ": no such file or directory");
  // a *-idx3-ubyte* file names its label sibling by substitution
  std::string labels = source_path;
  auto sub = [&](const std::string& a, const std::string& b) {
    auto pos = labels.find(a);
    if (pos == std::string::npos) return false;
    labels.replace(pos, a.size(), b);
    return true;
  };
  if (!sub("images", "labels") || !sub("idx3", "idx1") || !file_exists(labels))
    throw io_error(source_path + ": cannot locate the matching labels-idx1 file");
  return load_idx_pair(p, source_path, labels);
}

void save_collection(const std::string& dir, const LabeledImages& data, const DatasetProfile& p) {
  ensure_dir(dir);
  fs::path d(dir);
  npy_save((d / "images.npy").string(), data.images.dims(), data.images.data());
  std::vector<int32_t> lab(data.labels.begin(), data.labels.end());
  npy_save((d / "labels.npy").string(), {int64_t(lab.size())}, lab.data());
  nlohmann::json meta;
  meta["profile"] = {{"name", p.name},
                     {"image_hw", p.image_hw},
                     {"channels", p.channels},
                     {"class_count", p.class_count}};
  meta["count"] = data.count();
  meta["images_sha256"] = sha256_file((d / "images.npy").string());
  meta["labels_sha256"] = sha256_file((d / "labels.npy").string());
  std::string text = meta.dump(2) + "\n";
  write_file((d / "meta.json").string(), text.data(), text.size());
}

bool collection_cached(const std::string& dir) {
  fs::path d(dir);
  return file_exists((d / "meta.json").string()) && file_exists((d / "images.npy").string()) &&
         file_exists((d / "labels.npy").string());
}

LabeledImages load_collection(const std::string& dir, const DatasetProfile& p) {
  fs::path d(dir);
  auto bytes = read_file((d / "meta.json").string());
  auto meta = nlohmann::json::parse(bytes.begin(), bytes.end());
  auto prof = meta.at("profile");
  if (prof.at("name") != p.name || prof.at("image_hw") != p.image_hw ||
      prof.at("channels") != p.channels || prof.at("class_count") != p.class_count)
    throw validation_error("collection cache at " + dir + " was built for profile '" +
                           prof.at("name").get<std::string>() + "', not '" + p.name + "'");
  if (meta.at("images_sha256") != sha256_file((d / "images.npy").string()) ||
      meta.at("labels_sha256") != sha256_file((d / "labels.npy").string()))
    throw io_error("collection cache at " + dir + " fails its checksum");

  LabeledImages out;
  Npy im = npy_load((d / "images.npy").string());
  Npy lb = npy_load((d / "labels.npy").string());
  const float* ip = im.as<float>();
  out.images.resize(im.shape);
  std::memcpy(out.images.data(), ip, sizeof(float) * size_t(out.images.numel()));
  const int32_t* lp = lb.as<int32_t>();
  out.labels.assign(lp, lp + lb.count());
  if (out.images.dim(0) != out.count())
    throw validation_error("collection cache at " + dir + " has mismatched image/label counts");
  return out;
}

}  // namespace xinv
