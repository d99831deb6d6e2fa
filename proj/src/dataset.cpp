#include "dd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "dd/io.hpp"

namespace dd {

namespace fs = std::filesystem;
using nlohmann::json;

int64_t LabeledDataset::smallest_class() const {
  int64_t m = count();
  for (const auto& idx : class_index) m = std::min<int64_t>(m, static_cast<int64_t>(idx.size()));
  return m;
}

Tensor LabeledDataset::gather(const std::vector<int>& indices) const {
  int64_t chw = images.numel() / images.dim(0);
  Tensor out({static_cast<int64_t>(indices.size()), images.dim(1), images.dim(2), images.dim(3)});
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy_n(images.data.begin() + indices[i] * chw, chw, out.data.begin() + i * chw);
  return out;
}

std::vector<int> LabeledDataset::gather_labels(const std::vector<int>& indices) const {
  std::vector<int> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

std::string data_root() {
  const char* env = std::getenv("DD_DATA_ROOT");
  return env ? env : "data";
}

namespace {

void build_class_index(LabeledDataset& ds) {
  ds.class_index.assign(ds.num_classes, {});
  for (size_t i = 0; i < ds.labels.size(); ++i) {
    int y = ds.labels[i];
    if (y < 0 || y >= ds.num_classes) throw Error("corrupt-dataset", "label out of range");
    ds.class_index[y].push_back(static_cast<int>(i));
  }
}

NormStats fit_norm_stats(const Tensor& images) {
  int64_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  NormStats st;
  st.mean.assign(c, 0.0f);
  st.std.assign(c, 1.0f);
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const float* p = images.ptr() + (i * c + ch) * hw;
      for (int64_t k = 0; k < hw; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    double cnt = static_cast<double>(n * hw);
    double mean = sum / cnt;
    double var = sq / cnt - mean * mean;
    st.mean[ch] = static_cast<float>(mean);
    st.std[ch] = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
  }
  return st;
}

void apply_norm_stats(Tensor& images, const NormStats& st) {
  int64_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  for (int64_t ch = 0; ch < c; ++ch) {
    float m = st.mean[ch], inv = 1.0f / st.std[ch];
    for (int64_t i = 0; i < n; ++i) {
      float* p = images.ptr() + (i * c + ch) * hw;
      for (int64_t k = 0; k < hw; ++k) p[k] = (p[k] - m) * inv;
    }
  }
}

uint32_t read_be32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | b[3];
}

// idx-format reader (MNIST family)
Tensor read_idx_images(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("dataset-not-found", path);
  uint32_t magic = read_be32(f);
  if (magic != 0x803) throw Error("corrupt-dataset", "bad image magic in " + path);
  int64_t n = read_be32(f), h = read_be32(f), w = read_be32(f);
  std::vector<unsigned char> raw(static_cast<size_t>(n * h * w));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw Error("corrupt-dataset", "truncated " + path);
  Tensor t({n, 1, h, w});
  for (size_t i = 0; i < raw.size(); ++i) t.data[i] = raw[i] / 255.0f;
  return t;
}

std::vector<int> read_idx_labels(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("dataset-not-found", path);
  uint32_t magic = read_be32(f);
  if (magic != 0x801) throw Error("corrupt-dataset", "bad label magic in " + path);
  int64_t n = read_be32(f);
  std::vector<unsigned char> raw(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw Error("corrupt-dataset", "truncated " + path);
  return std::vector<int>(raw.begin(), raw.end());
}

LabeledDataset load_idx_dataset(const std::string& name, const std::string& dir, Split split) {
  std::string img = split == Split::train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
  std::string lbl = split == Split::train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
  LabeledDataset ds;
  ds.name = name;
  ds.images = read_idx_images(dir + "/" + img);
  ds.labels = read_idx_labels(dir + "/" + lbl);
  if (ds.images.dim(0) != static_cast<int64_t>(ds.labels.size()))
    throw Error("corrupt-dataset", "image/label count mismatch");
  ds.num_classes = 10;
  // stats are always fit on the train split
  if (split == Split::train) {
    ds.norm_stats = fit_norm_stats(ds.images);
  } else {
    Tensor train_imgs = read_idx_images(dir + "/train-images-idx3-ubyte");
    ds.norm_stats = fit_norm_stats(train_imgs);
  }
  apply_norm_stats(ds.images, ds.norm_stats);
  build_class_index(ds);
  return ds;
}

LabeledDataset load_cifar10(const std::string& dir, Split split) {
  std::vector<std::string> files;
  if (split == Split::train)
    for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  else
    files.push_back(dir + "/test_batch.bin");

  std::vector<unsigned char> raw;
  for (const auto& path : files) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("dataset-not-found", path);
    raw.insert(raw.end(), std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  constexpr size_t rec = 1 + 3 * 32 * 32;
  if (raw.size() % rec != 0) throw Error("corrupt-dataset", "cifar record size");
  int64_t n = static_cast<int64_t>(raw.size() / rec);
  LabeledDataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const unsigned char* r = raw.data() + i * rec;
    ds.labels[static_cast<size_t>(i)] = r[0];
    for (size_t k = 0; k < 3 * 32 * 32; ++k) ds.images.data[i * 3 * 32 * 32 + k] = r[1 + k] / 255.0f;
  }
  if (split == Split::train) {
    ds.norm_stats = fit_norm_stats(ds.images);
  } else {
    LabeledDataset train = load_cifar10(dir, Split::train);
    ds.norm_stats = train.norm_stats;
  }
  apply_norm_stats(ds.images, ds.norm_stats);
  build_class_index(ds);
  return ds;
}

}  // namespace

LabeledDataset make_toy_dataset(const ToyConfig& cfg, Split split) {
  // one Gaussian mode per class, means on a circle of the given radius
  uint32_t seed = cfg.seed + (split == Split::test ? 1000003u : 0u);
  std::mt19937 rng(seed);
  std::normal_distribution<float> noise(0.0f, cfg.sigma);
  int64_t n = static_cast<int64_t>(cfg.num_classes) * cfg.per_class;
  LabeledDataset ds;
  ds.name = "gauss2d-toy";
  ds.num_classes = cfg.num_classes;
  ds.images = Tensor({n, 2, 1, 1});
  ds.labels.resize(static_cast<size_t>(n));
  for (int c = 0; c < cfg.num_classes; ++c) {
    float ang = 2.0f * static_cast<float>(M_PI) * c / cfg.num_classes + 0.25f * static_cast<float>(M_PI);
    float mx = cfg.radius * std::cos(ang), my = cfg.radius * std::sin(ang);
    for (int i = 0; i < cfg.per_class; ++i) {
      int64_t row = static_cast<int64_t>(c) * cfg.per_class + i;
      ds.images.data[row * 2 + 0] = mx + noise(rng);
      ds.images.data[row * 2 + 1] = my + noise(rng);
      ds.labels[static_cast<size_t>(row)] = c;
    }
  }
  if (split == Split::train) {
    ds.norm_stats = fit_norm_stats(ds.images);
  } else {
    LabeledDataset train = make_toy_dataset(cfg, Split::train);
    ds.norm_stats = train.norm_stats;
  }
  apply_norm_stats(ds.images, ds.norm_stats);
  build_class_index(ds);
  return ds;
}

LabeledDataset load_dataset(const std::string& name, Split split) {
  std::string root = data_root();
  if (name == "mnist") return load_idx_dataset(name, root + "/mnist", split);
  if (name == "fashion-mnist") return load_idx_dataset(name, root + "/fashion-mnist", split);
  if (name == "cifar10") return load_cifar10(root + "/cifar10", split);
  if (name == "gauss2d-toy") return make_toy_dataset(ToyConfig{}, split);
  throw Error("dataset-not-found", "unknown dataset " + name);
}

Tensor SyntheticSet::class_slice(int c) const {
  int64_t chw = pixels.numel() / pixels.dim(0);
  Tensor out({ipc, pixels.dim(1), pixels.dim(2), pixels.dim(3)});
  std::copy_n(pixels.data.begin() + class_offset(c) * chw, ipc * chw, out.data.begin());
  return out;
}

void SyntheticSet::set_class_slice(int c, const Tensor& t) {
  int64_t chw = pixels.numel() / pixels.dim(0);
  std::copy_n(t.data.begin(), ipc * chw, pixels.data.begin() + class_offset(c) * chw);
}

SyntheticSet init_synthetic_random(const LabeledDataset& ds, int ipc, uint32_t seed) {
  if (ipc <= 0 || ipc > ds.smallest_class())
    throw Error("bad-ipc", "ipc must be in [1, smallest class size]");
  std::mt19937 rng(seed);
  std::vector<int> chosen;
  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<int> pool = ds.class_index[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + ipc);
  }
  SyntheticSet s;
  s.ipc = ipc;
  s.pixels = ds.gather(chosen);
  s.labels = ds.gather_labels(chosen);
  s.dataset_name = ds.name;
  s.norm_stats = ds.norm_stats;
  return s;
}

void save_synthetic(const SyntheticSet& s, const std::string& path) {
  std::map<std::string, io::NpzEntry> entries;
  io::NpzEntry px;
  px.shape = s.pixels.shape;
  px.f32 = s.pixels.data;
  entries["pixels"] = std::move(px);
  io::NpzEntry lb;
  lb.shape = {static_cast<int64_t>(s.labels.size())};
  lb.is_int = true;
  lb.i32.assign(s.labels.begin(), s.labels.end());
  entries["labels"] = std::move(lb);
  io::save_npz(path, entries);

  json meta;
  meta["schema_version"] = 1;
  meta["dataset"] = s.dataset_name;
  meta["ipc"] = s.ipc;
  meta["iteration"] = s.iteration;
  meta["lr_img"] = s.lr_img;
  meta["norm_stats"] = {{"mean", s.norm_stats.mean}, {"std", s.norm_stats.std}};
  meta["config_hash"] = s.config_hash;
  io::write_text_file(path + ".json", meta.dump(2) + "\n");
}

SyntheticSet load_synthetic(const std::string& path) {
  auto entries = io::load_npz(path);
  if (!entries.count("pixels") || !entries.count("labels"))
    throw Error("corrupt-checkpoint", "missing members in " + path);
  json meta;
  try {
    meta = json::parse(io::read_text_file(path + ".json"));
  } catch (const json::exception& e) {
    throw Error("corrupt-checkpoint", std::string("bad sidecar: ") + e.what());
  }
  if (!meta.contains("schema_version") || meta["schema_version"].get<int>() != 1)
    throw Error("checkpoint-version-error", "unsupported schema_version in " + path + ".json");

  SyntheticSet s;
  const auto& px = entries["pixels"];
  s.pixels = Tensor(px.shape);
  s.pixels.data = px.f32;
  const auto& lb = entries["labels"];
  s.labels.assign(lb.i32.begin(), lb.i32.end());
  s.ipc = meta["ipc"].get<int>();
  s.iteration = meta["iteration"].get<int64_t>();
  s.lr_img = meta.value("lr_img", 0.005f);
  s.dataset_name = meta.value("dataset", "");
  if (meta.contains("norm_stats")) {
    s.norm_stats.mean = meta["norm_stats"]["mean"].get<std::vector<float>>();
    s.norm_stats.std = meta["norm_stats"]["std"].get<std::vector<float>>();
  }
  s.config_hash = meta.value("config_hash", "");
  if (s.pixels.dim(0) != static_cast<int64_t>(s.labels.size()))
    throw Error("corrupt-checkpoint", "pixel/label count mismatch");
  return s;
}

}  // namespace dd
