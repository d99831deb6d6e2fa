#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dd {

// Exception carrying a stable machine-readable error code next to the message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Dense row-major float tensor. Shapes follow the NCHW convention for
// image batches; 2-D tensors are (rows, cols).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}
  Tensor(std::vector<int64_t> s, float fill)
      : shape(std::move(s)), data(numel_of(shape), fill) {}

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw Error("bad-shape", "negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t ndim() const { return shape.size(); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  float& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  float at(int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const;
  // FNV-1a over the raw float bytes; used for bit-identity checks.
  uint64_t checksum() const;
};

std::string shape_str(const std::vector<int64_t>& s);

}  // namespace dd
