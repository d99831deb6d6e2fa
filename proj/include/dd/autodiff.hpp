#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dd/tensor.hpp"

// Reverse-mode autodiff over small dynamic graphs. Backward rules emit graph
// nodes rather than raw tensors, so a gradient is itself differentiable and
// the second-order path (pixel gradients of a gradient-matching loss) falls
// out of a second backward pass.
namespace dd::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  // Maps (self, incoming gradient) to per-parent gradients; entries may be
  // null for parents that do not need gradients.
  std::function<std::vector<Var>(const Var& self, const Var& g)> backward;
};

Var constant(Tensor t);
Var leaf(Tensor t);

// Gradients of scalar `loss` w.r.t. each var in `wrt`. Vars not reachable
// from the loss get zero gradients. The returned vars carry graphs and can
// be differentiated again.
std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt);

// -- elementwise --
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var mulc(const Var& a, Tensor c);  // elementwise multiply by a constant tensor
Var scale(const Var& a, float s);
Var neg(const Var& a);
Var expv(const Var& a);
Var absval(const Var& a);
Var relu(const Var& a);
Var square(const Var& a);
Var rsqrt_eps(const Var& a, float eps);

// -- reductions and their broadcast adjoints --
Var sum_all(const Var& a);   // -> shape {1}
Var mean_all(const Var& a);  // -> shape {1}
Var rowsum_bcast(const Var& a);                          // (N,C) -> (N,C), rows filled with row sums
Var colsum(const Var& a);                                // (N,C) -> (C)
Var bcast_rows(const Var& v, int64_t n);                 // (C) -> (N,C)
Var spatial_sum(const Var& x);                           // (N,C,H,W) -> (N,C)
Var spatial_bcast(const Var& v, int64_t h, int64_t w);   // (N,C) -> (N,C,H,W)
Var sample_sum(const Var& x);                            // (N,C,H,W) -> (N)
Var sample_bcast(const Var& v, int64_t c, int64_t h, int64_t w);  // (N) -> (N,C,H,W)
Var chan_sum(const Var& x);                              // (N,C,H,W) -> (C)
Var chan_bcast(const Var& v, int64_t n, int64_t h, int64_t w);    // (C) -> (N,C,H,W)
Var chanpix_sum(const Var& x);                           // (N,C,H,W) -> (N,1,H,W)
Var chanpix_bcast(const Var& v, int64_t c);              // (N,1,H,W) -> (N,C,H,W)

// -- linear algebra --
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var reshape(const Var& a, std::vector<int64_t> shape);

// -- 3x3 convolution, stride 1, pad 1 --
Var conv2d(const Var& x, const Var& w);
// adjoint w.r.t. the conv input: gy (N,K,H,W), w (K,C,3,3) -> (N,C,H,W)
Var conv2d_input_grad(const Var& gy, const Var& w);
// adjoint w.r.t. the conv weights: x (N,C,H,W), gy (N,K,H,W) -> (K,C,3,3)
Var conv2d_weight_grad(const Var& x, const Var& gy);

// -- 2x2 average pooling (floor; degenerate dims pool over 1) --
Var avgpool2(const Var& x);
Var avgunpool2(const Var& g, int64_t h, int64_t w);  // adjoint, target spatial size

// -- classification head --
Var log_softmax(const Var& x);  // rows of (N,C)
Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels);

// -- bilinear warp with a fixed sampling pattern (augmentation backbone) --
// Per output pixel of each sample: 4 source plane indices (-1 = zero pad)
// with weights, shared across channels.
struct WarpGrid {
  int64_t n = 0, h = 0, w = 0;
  std::vector<int32_t> idx;  // n*h*w*4
  std::vector<float> wgt;    // n*h*w*4
};
Var warp(const Var& x, std::shared_ptr<const WarpGrid> grid);
Var warp_adjoint(const Var& g, std::shared_ptr<const WarpGrid> grid);

}  // namespace dd::ad
