#include "dd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "dd/kernels.hpp"

namespace dd::ad {

namespace {

using Backward = std::function<std::vector<Var>(const Var&, const Var&)>;

Var make(Tensor v, std::vector<Var> parents, Backward bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  for (const auto& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward = std::move(bw);
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw Error("shape-mismatch", std::string(op) + " " + shape_str(a->value.shape) + " vs " +
                                      shape_str(b->value.shape));
}

Var scalar_bcast(const Var& s, std::vector<int64_t> shape);

}  // namespace

Var constant(Tensor t) { return make(std::move(t), {}, nullptr); }

Var leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a->value.shape);
  kern::add(out.ptr(), a->value.ptr(), b->value.ptr(), out.data.size());
  return make(std::move(out), {a, b},
              [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a->value.shape);
  kern::sub(out.ptr(), a->value.ptr(), b->value.ptr(), out.data.size());
  return make(std::move(out), {a, b},
              [](const Var&, const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape);
  kern::mul(out.ptr(), a->value.ptr(), b->value.ptr(), out.data.size());
  return make(std::move(out), {a, b}, [](const Var& self, const Var& g) {
    return std::vector<Var>{mul(g, self->parents[1]), mul(g, self->parents[0])};
  });
}

Var mulc(const Var& a, Tensor c) {
  if (a->value.shape != c.shape) throw Error("shape-mismatch", "mulc");
  Tensor out(a->value.shape);
  kern::mul(out.ptr(), a->value.ptr(), c.ptr(), out.data.size());
  auto cc = std::make_shared<Tensor>(std::move(c));
  return make(std::move(out), {a},
              [cc](const Var&, const Var& g) { return std::vector<Var>{mulc(g, *cc)}; });
}

Var scale(const Var& a, float s) {
  Tensor out = a->value;
  kern::scale(s, out.ptr(), out.data.size());
  return make(std::move(out), {a},
              [s](const Var&, const Var& g) { return std::vector<Var>{scale(g, s)}; });
}

Var neg(const Var& a) { return scale(a, -1.0f); }

Var expv(const Var& a) {
  Tensor out(a->value.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::exp(a->value.data[i]);
  return make(std::move(out), {a}, [](const Var& self, const Var& g) {
    return std::vector<Var>{mul(g, self)};
  });
}

Var absval(const Var& a) {
  Tensor out(a->value.shape);
  Tensor sign(a->value.shape);
  for (size_t i = 0; i < out.data.size(); ++i) {
    float v = a->value.data[i];
    out.data[i] = std::fabs(v);
    sign.data[i] = v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f);
  }
  auto sc = std::make_shared<Tensor>(std::move(sign));
  return make(std::move(out), {a},
              [sc](const Var&, const Var& g) { return std::vector<Var>{mulc(g, *sc)}; });
}

Var relu(const Var& a) {
  Tensor out(a->value.shape);
  kern::relu(out.ptr(), a->value.ptr(), out.data.size());
  Tensor mask(a->value.shape);
  for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = a->value.data[i] > 0.0f ? 1.0f : 0.0f;
  auto mc = std::make_shared<Tensor>(std::move(mask));
  return make(std::move(out), {a},
              [mc](const Var&, const Var& g) { return std::vector<Var>{mulc(g, *mc)}; });
}

Var square(const Var& a) { return mul(a, a); }

Var rsqrt_eps(const Var& a, float eps) {
  Tensor out(a->value.shape);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = 1.0f / std::sqrt(a->value.data[i] + eps);
  return make(std::move(out), {a}, [](const Var& self, const Var& g) {
    Var y3 = mul(mul(self, self), self);
    return std::vector<Var>{scale(mul(g, y3), -0.5f)};
  });
}

namespace {

Var scalar_bcast(const Var& s, std::vector<int64_t> shape) {
  if (s->value.numel() != 1) throw Error("shape-mismatch", "scalar_bcast needs scalar");
  Tensor out(shape, s->value.data[0]);
  return make(std::move(out), {s},
              [](const Var&, const Var& g) { return std::vector<Var>{sum_all(g)}; });
}

}  // namespace

Var sum_all(const Var& a) {
  Tensor out({1});
  out.data[0] = kern::sum(a->value.ptr(), a->value.data.size());
  auto shape = a->value.shape;
  return make(std::move(out), {a}, [shape](const Var&, const Var& g) {
    return std::vector<Var>{scalar_bcast(g, shape)};
  });
}

Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0f / static_cast<float>(a->value.numel()));
}

Var rowsum_bcast(const Var& a) {
  int64_t n = a->value.dim(0), c = a->value.dim(1);
  Tensor out({n, c});
  for (int64_t i = 0; i < n; ++i) {
    float s = kern::sum(a->value.ptr() + i * c, c);
    for (int64_t j = 0; j < c; ++j) out.data[i * c + j] = s;
  }
  return make(std::move(out), {a},
              [](const Var&, const Var& g) { return std::vector<Var>{rowsum_bcast(g)}; });
}

Var colsum(const Var& a) {
  int64_t n = a->value.dim(0), c = a->value.dim(1);
  Tensor out({c});
  for (int64_t i = 0; i < n; ++i) kern::axpy(1.0f, a->value.ptr() + i * c, out.ptr(), c);
  return make(std::move(out), {a}, [n](const Var&, const Var& g) {
    return std::vector<Var>{bcast_rows(g, n)};
  });
}

Var bcast_rows(const Var& v, int64_t n) {
  int64_t c = v->value.dim(0);
  Tensor out({n, c});
  for (int64_t i = 0; i < n; ++i)
    std::copy(v->value.data.begin(), v->value.data.end(), out.data.begin() + i * c);
  return make(std::move(out), {v},
              [](const Var&, const Var& g) { return std::vector<Var>{colsum(g)}; });
}

Var spatial_sum(const Var& x) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  Tensor out({n, c});
  for (int64_t i = 0; i < n * c; ++i) out.data[i] = kern::sum(x->value.ptr() + i * h * w, h * w);
  return make(std::move(out), {x}, [h, w](const Var&, const Var& g) {
    return std::vector<Var>{spatial_bcast(g, h, w)};
  });
}

Var spatial_bcast(const Var& v, int64_t h, int64_t w) {
  int64_t n = v->value.dim(0), c = v->value.dim(1);
  Tensor out({n, c, h, w});
  for (int64_t i = 0; i < n * c; ++i)
    std::fill_n(out.data.begin() + i * h * w, h * w, v->value.data[i]);
  return make(std::move(out), {v},
              [](const Var&, const Var& g) { return std::vector<Var>{spatial_sum(g)}; });
}

Var sample_sum(const Var& x) {
  int64_t n = x->value.dim(0);
  int64_t chw = x->value.numel() / n;
  Tensor out({n});
  for (int64_t i = 0; i < n; ++i) out.data[i] = kern::sum(x->value.ptr() + i * chw, chw);
  int64_t c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  return make(std::move(out), {x}, [c, h, w](const Var&, const Var& g) {
    return std::vector<Var>{sample_bcast(g, c, h, w)};
  });
}

Var sample_bcast(const Var& v, int64_t c, int64_t h, int64_t w) {
  int64_t n = v->value.dim(0);
  Tensor out({n, c, h, w});
  int64_t chw = c * h * w;
  for (int64_t i = 0; i < n; ++i)
    std::fill_n(out.data.begin() + i * chw, chw, v->value.data[i]);
  return make(std::move(out), {v},
              [](const Var&, const Var& g) { return std::vector<Var>{sample_sum(g)}; });
}

Var chan_sum(const Var& x) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  Tensor out({c});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j)
      out.data[j] += kern::sum(x->value.ptr() + (i * c + j) * h * w, h * w);
  return make(std::move(out), {x}, [n, h, w](const Var&, const Var& g) {
    return std::vector<Var>{chan_bcast(g, n, h, w)};
  });
}

Var chan_bcast(const Var& v, int64_t n, int64_t h, int64_t w) {
  int64_t c = v->value.dim(0);
  Tensor out({n, c, h, w});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j)
      std::fill_n(out.data.begin() + (i * c + j) * h * w, h * w, v->value.data[j]);
  return make(std::move(out), {v},
              [](const Var&, const Var& g) { return std::vector<Var>{chan_sum(g)}; });
}

Var chanpix_sum(const Var& x) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  Tensor out({n, 1, h, w});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j)
      kern::axpy(1.0f, x->value.ptr() + (i * c + j) * h * w, out.ptr() + i * h * w, h * w);
  return make(std::move(out), {x}, [c](const Var&, const Var& g) {
    return std::vector<Var>{chanpix_bcast(g, c)};
  });
}

Var chanpix_bcast(const Var& v, int64_t c) {
  int64_t n = v->value.dim(0), h = v->value.dim(2), w = v->value.dim(3);
  Tensor out({n, c, h, w});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j)
      std::copy_n(v->value.data.begin() + i * h * w, h * w,
                  out.data.begin() + (i * c + j) * h * w);
  return make(std::move(out), {v},
              [](const Var&, const Var& g) { return std::vector<Var>{chanpix_sum(g)}; });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
  if (Tensor::numel_of(shape) != a->value.numel()) throw Error("shape-mismatch", "reshape");
  Tensor out = a->value;
  out.shape = shape;
  auto orig = a->value.shape;
  return make(std::move(out), {a}, [orig](const Var&, const Var& g) {
    return std::vector<Var>{reshape(g, orig)};
  });
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2) throw Error("shape-mismatch", "matmul rank");
  int64_t m = trans_a ? a->value.dim(1) : a->value.dim(0);
  int64_t k = trans_a ? a->value.dim(0) : a->value.dim(1);
  int64_t k2 = trans_b ? b->value.dim(1) : b->value.dim(0);
  int64_t n = trans_b ? b->value.dim(0) : b->value.dim(1);
  if (k != k2) throw Error("shape-mismatch", "matmul inner dims");
  Tensor out({m, n});
  kern::sgemm(trans_a, trans_b, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
              1.0f, a->value.ptr(), static_cast<int>(a->value.dim(1)), b->value.ptr(),
              static_cast<int>(b->value.dim(1)), 0.0f, out.ptr(), static_cast<int>(n));
  return make(std::move(out), {a, b}, [trans_a, trans_b](const Var& self, const Var& g) {
    const Var& A = self->parents[0];
    const Var& B = self->parents[1];
    Var ga = trans_a ? matmul(B, g, trans_b, true) : matmul(g, B, false, !trans_b);
    Var gb = trans_b ? matmul(g, A, true, trans_a) : matmul(A, g, !trans_a, false);
    return std::vector<Var>{ga, gb};
  });
}

// ---- conv family ----

namespace {

// col is (C*9) x (H*W)
void im2col3(const float* x, int64_t c, int64_t h, int64_t w, float* col) {
  for (int64_t ch = 0; ch < c; ++ch) {
    const float* plane = x + ch * h * w;
    for (int64_t r = 0; r < 3; ++r) {
      for (int64_t s = 0; s < 3; ++s) {
        float* row = col + ((ch * 3 + r) * 3 + s) * h * w;
        for (int64_t i = 0; i < h; ++i) {
          int64_t si = i + r - 1;
          if (si < 0 || si >= h) {
            std::fill_n(row + i * w, w, 0.0f);
            continue;
          }
          for (int64_t j = 0; j < w; ++j) {
            int64_t sj = j + s - 1;
            row[i * w + j] = (sj >= 0 && sj < w) ? plane[si * w + sj] : 0.0f;
          }
        }
      }
    }
  }
}

// adjoint of im2col3: accumulate col (C*9 x H*W) back into the image
void col2im3(const float* col, int64_t c, int64_t h, int64_t w, float* x) {
  for (int64_t ch = 0; ch < c; ++ch) {
    float* plane = x + ch * h * w;
    for (int64_t r = 0; r < 3; ++r) {
      for (int64_t s = 0; s < 3; ++s) {
        const float* row = col + ((ch * 3 + r) * 3 + s) * h * w;
        for (int64_t i = 0; i < h; ++i) {
          int64_t si = i + r - 1;
          if (si < 0 || si >= h) continue;
          for (int64_t j = 0; j < w; ++j) {
            int64_t sj = j + s - 1;
            if (sj >= 0 && sj < w) plane[si * w + sj] += row[i * w + j];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
  int64_t k = w->value.dim(0);
  if (w->value.dim(1) != c || w->value.dim(2) != 3 || w->value.dim(3) != 3)
    throw Error("shape-mismatch", "conv2d weights");
  Tensor out({n, k, h, wd});
  std::vector<float> col(static_cast<size_t>(c * 9 * h * wd));
  for (int64_t i = 0; i < n; ++i) {
    im2col3(x->value.ptr() + i * c * h * wd, c, h, wd, col.data());
    kern::sgemm(false, false, static_cast<int>(k), static_cast<int>(h * wd),
                static_cast<int>(c * 9), 1.0f, w->value.ptr(), static_cast<int>(c * 9), col.data(),
                static_cast<int>(h * wd), 0.0f, out.ptr() + i * k * h * wd,
                static_cast<int>(h * wd));
  }
  return make(std::move(out), {x, w}, [](const Var& self, const Var& g) {
    const Var& xx = self->parents[0];
    const Var& ww = self->parents[1];
    Var gx = xx->requires_grad ? conv2d_input_grad(g, ww) : nullptr;
    Var gw = ww->requires_grad ? conv2d_weight_grad(xx, g) : nullptr;
    return std::vector<Var>{gx, gw};
  });
}

Var conv2d_input_grad(const Var& gy, const Var& w) {
  int64_t n = gy->value.dim(0), k = gy->value.dim(1), h = gy->value.dim(2), wd = gy->value.dim(3);
  int64_t c = w->value.dim(1);
  if (w->value.dim(0) != k) throw Error("shape-mismatch", "conv2d_input_grad");
  Tensor out({n, c, h, wd});
  std::vector<float> col(static_cast<size_t>(c * 9 * h * wd));
  for (int64_t i = 0; i < n; ++i) {
    kern::sgemm(true, false, static_cast<int>(c * 9), static_cast<int>(h * wd),
                static_cast<int>(k), 1.0f, w->value.ptr(), static_cast<int>(c * 9),
                gy->value.ptr() + i * k * h * wd, static_cast<int>(h * wd), 0.0f, col.data(),
                static_cast<int>(h * wd));
    col2im3(col.data(), c, h, wd, out.ptr() + i * c * h * wd);
  }
  return make(std::move(out), {gy, w}, [](const Var& self, const Var& g) {
    const Var& gyv = self->parents[0];
    const Var& ww = self->parents[1];
    Var g_gy = gyv->requires_grad ? conv2d(g, ww) : nullptr;
    Var g_w = ww->requires_grad ? conv2d_weight_grad(g, gyv) : nullptr;
    return std::vector<Var>{g_gy, g_w};
  });
}

Var conv2d_weight_grad(const Var& x, const Var& gy) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
  int64_t k = gy->value.dim(1);
  if (gy->value.dim(0) != n || gy->value.dim(2) != h || gy->value.dim(3) != wd)
    throw Error("shape-mismatch", "conv2d_weight_grad");
  Tensor out({k, c, 3, 3});
  std::vector<float> col(static_cast<size_t>(c * 9 * h * wd));
  for (int64_t i = 0; i < n; ++i) {
    im2col3(x->value.ptr() + i * c * h * wd, c, h, wd, col.data());
    kern::sgemm(false, true, static_cast<int>(k), static_cast<int>(c * 9),
                static_cast<int>(h * wd), 1.0f, gy->value.ptr() + i * k * h * wd,
                static_cast<int>(h * wd), col.data(), static_cast<int>(h * wd), 1.0f, out.ptr(),
                static_cast<int>(c * 9));
  }
  return make(std::move(out), {x, gy}, [](const Var& self, const Var& g) {
    const Var& xx = self->parents[0];
    const Var& gyv = self->parents[1];
    Var g_x = xx->requires_grad ? conv2d_input_grad(gyv, g) : nullptr;
    Var g_gy = gyv->requires_grad ? conv2d(xx, g) : nullptr;
    return std::vector<Var>{g_x, g_gy};
  });
}

// ---- pooling ----

Var avgpool2(const Var& x) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  int64_t kh = h >= 2 ? 2 : 1, kw = w >= 2 ? 2 : 1;
  int64_t oh = h / kh, ow = w / kw;
  Tensor out({n, c, oh, ow});
  float inv = 1.0f / static_cast<float>(kh * kw);
  for (int64_t p = 0; p < n * c; ++p) {
    const float* in = x->value.ptr() + p * h * w;
    float* o = out.ptr() + p * oh * ow;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        float s = 0.0f;
        for (int64_t a = 0; a < kh; ++a)
          for (int64_t b = 0; b < kw; ++b) s += in[(i * kh + a) * w + j * kw + b];
        o[i * ow + j] = s * inv;
      }
  }
  return make(std::move(out), {x}, [h, w](const Var&, const Var& g) {
    return std::vector<Var>{avgunpool2(g, h, w)};
  });
}

Var avgunpool2(const Var& g, int64_t h, int64_t w) {
  int64_t n = g->value.dim(0), c = g->value.dim(1), oh = g->value.dim(2), ow = g->value.dim(3);
  int64_t kh = h >= 2 ? 2 : 1, kw = w >= 2 ? 2 : 1;
  if (oh != h / kh || ow != w / kw) throw Error("shape-mismatch", "avgunpool2");
  Tensor out({n, c, h, w});
  float inv = 1.0f / static_cast<float>(kh * kw);
  for (int64_t p = 0; p < n * c; ++p) {
    const float* gi = g->value.ptr() + p * oh * ow;
    float* o = out.ptr() + p * h * w;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        float v = gi[i * ow + j] * inv;
        for (int64_t a = 0; a < kh; ++a)
          for (int64_t b = 0; b < kw; ++b) o[(i * kh + a) * w + j * kw + b] = v;
      }
  }
  return make(std::move(out), {g},
              [](const Var&, const Var& gg) { return std::vector<Var>{avgpool2(gg)}; });
}

// ---- classification head ----

Var log_softmax(const Var& x) {
  int64_t n = x->value.dim(0), c = x->value.dim(1);
  Tensor out({n, c});
  for (int64_t i = 0; i < n; ++i) {
    const float* row = x->value.ptr() + i * c;
    float m = row[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(row[j] - m));
    float lse = m + static_cast<float>(std::log(s));
    for (int64_t j = 0; j < c; ++j) out.data[i * c + j] = row[j] - lse;
  }
  return make(std::move(out), {x}, [](const Var& self, const Var& g) {
    return std::vector<Var>{sub(g, mul(expv(self), rowsum_bcast(g)))};
  });
}

Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels) {
  int64_t n = logits->value.dim(0), c = logits->value.dim(1);
  if (n == 0) throw Error("empty-batch", "cross_entropy_mean");
  if (static_cast<int64_t>(labels.size()) != n)
    throw Error("shape-mismatch", "cross_entropy_mean labels");
  Tensor onehot({n, c});
  float inv = 1.0f / static_cast<float>(n);
  for (int64_t i = 0; i < n; ++i) {
    int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= c) throw Error("label-space-mismatch", "label out of range");
    onehot.data[i * c + y] = inv;
  }
  return neg(sum_all(mulc(log_softmax(logits), std::move(onehot))));
}

// ---- warp ----

Var warp(const Var& x, std::shared_ptr<const WarpGrid> grid) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (grid->n != n || grid->h != h || grid->w != w) throw Error("shape-mismatch", "warp grid");
  Tensor out({n, c, h, w});
  int64_t hw = h * w;
  for (int64_t i = 0; i < n; ++i) {
    const int32_t* gi = grid->idx.data() + i * hw * 4;
    const float* gw = grid->wgt.data() + i * hw * 4;
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* in = x->value.ptr() + (i * c + ch) * hw;
      float* o = out.ptr() + (i * c + ch) * hw;
      for (int64_t q = 0; q < hw; ++q) {
        float v = 0.0f;
        for (int t = 0; t < 4; ++t) {
          int32_t src = gi[q * 4 + t];
          if (src >= 0) v += gw[q * 4 + t] * in[src];
        }
        o[q] = v;
      }
    }
  }
  return make(std::move(out), {x}, [grid](const Var&, const Var& g) {
    return std::vector<Var>{warp_adjoint(g, grid)};
  });
}

Var warp_adjoint(const Var& g, std::shared_ptr<const WarpGrid> grid) {
  int64_t n = g->value.dim(0), c = g->value.dim(1), h = g->value.dim(2), w = g->value.dim(3);
  if (grid->n != n || grid->h != h || grid->w != w)
    throw Error("shape-mismatch", "warp_adjoint grid");
  Tensor out({n, c, h, w});
  int64_t hw = h * w;
  for (int64_t i = 0; i < n; ++i) {
    const int32_t* gi = grid->idx.data() + i * hw * 4;
    const float* gw = grid->wgt.data() + i * hw * 4;
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* in = g->value.ptr() + (i * c + ch) * hw;
      float* o = out.ptr() + (i * c + ch) * hw;
      for (int64_t q = 0; q < hw; ++q) {
        for (int t = 0; t < 4; ++t) {
          int32_t src = gi[q * 4 + t];
          if (src >= 0) o[src] += gw[q * 4 + t] * in[q];
        }
      }
    }
  }
  return make(std::move(out), {g}, [grid](const Var&, const Var& gg) {
    return std::vector<Var>{warp(gg, grid)};
  });
}

// ---- backward driver ----

std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt) {
  if (loss->value.numel() != 1) throw Error("shape-mismatch", "grad needs scalar loss");
  // topological order over the requires_grad subgraph
  std::vector<Node*> order;
  std::unordered_map<Node*, Var> keep;
  {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Var, size_t>> stack;
    stack.emplace_back(loss, 0);
    visited.insert(loss.get());
    keep[loss.get()] = loss;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Var p = node->parents[next++];
        if (p && p->requires_grad && !visited.count(p.get())) {
          visited.insert(p.get());
          keep[p.get()] = p;
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node.get());
        stack.pop_back();
      }
    }
  }
  std::unordered_map<Node*, Var> grads;
  grads[loss.get()] = constant(Tensor({1}, 1.0f));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto git = grads.find(node);
    if (git == grads.end() || !node->backward) continue;
    Var self = keep[node];
    std::vector<Var> pg = node->backward(self, git->second);
    for (size_t i = 0; i < node->parents.size(); ++i) {
      const Var& p = node->parents[i];
      if (!p || !p->requires_grad || i >= pg.size() || !pg[i]) continue;
      auto pit = grads.find(p.get());
      if (pit == grads.end())
        grads[p.get()] = pg[i];
      else
        pit->second = add(pit->second, pg[i]);
    }
  }
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    auto it = grads.find(v.get());
    out.push_back(it != grads.end() ? it->second : constant(Tensor(v->value.shape)));
  }
  return out;
}

}  // namespace dd::ad
