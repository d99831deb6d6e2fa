#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dd/tensor.hpp"

namespace dd {

struct NormStats {
  std::vector<float> mean;  // per channel
  std::vector<float> std;
};

struct LabeledDataset {
  Tensor images;  // (count, C, H, W), normalized per channel
  std::vector<int> labels;
  std::vector<std::vector<int>> class_index;  // class -> sample indices
  std::string name;
  NormStats norm_stats;
  int num_classes = 0;

  int64_t count() const { return images.dim(0); }
  int64_t channels() const { return images.dim(1); }
  int64_t height() const { return images.dim(2); }
  int64_t width() const { return images.dim(3); }
  int64_t smallest_class() const;

  // Gathers rows into a contiguous batch tensor.
  Tensor gather(const std::vector<int>& indices) const;
  std::vector<int> gather_labels(const std::vector<int>& indices) const;
};

enum class Split { train, test };

struct ToyConfig {
  int num_classes = 4;
  int per_class = 500;
  float radius = 1.5f;
  float sigma = 0.35f;
  uint32_t seed = 17;
};

// Root for dataset files: DD_DATA_ROOT env var, else "data".
std::string data_root();

// Supported names: "mnist", "fashion-mnist", "cifar10", "gauss2d-toy".
// Missing files raise "dataset-not-found"; bad labels "corrupt-dataset".
LabeledDataset load_dataset(const std::string& name, Split split);
LabeledDataset make_toy_dataset(const ToyConfig& cfg, Split split);

// The learnable surrogate set; pixels are class-major (class c occupies rows
// [c*ipc, (c+1)*ipc)).
struct SyntheticSet {
  Tensor pixels;
  std::vector<int> labels;
  int ipc = 1;
  int64_t iteration = 0;
  float lr_img = 0.005f;
  std::string dataset_name;
  NormStats norm_stats;
  std::string config_hash;

  int num_classes() const { return ipc > 0 ? static_cast<int>(labels.size()) / ipc : 0; }
  int64_t class_offset(int c) const { return static_cast<int64_t>(c) * ipc; }
  Tensor class_slice(int c) const;
  void set_class_slice(int c, const Tensor& t);
  uint64_t checksum() const { return pixels.checksum(); }
};

// Per-class uniform draw of ipc real images (the baseline initialization).
SyntheticSet init_synthetic_random(const LabeledDataset& ds, int ipc, uint32_t seed);

// Checkpoint = <path> npz container (pixels + labels) + <path>.json sidecar.
void save_synthetic(const SyntheticSet& s, const std::string& path);
SyntheticSet load_synthetic(const std::string& path);

}  // namespace dd
