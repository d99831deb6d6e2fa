#include "dd/nn.hpp"

#include <cmath>
#include <random>

#include "dd/kernels.hpp"

namespace dd {

using ad::Var;

Arch parse_arch(const std::string& name) {
  if (name == "convnet-2") return Arch::convnet2;
  if (name == "convnet-3") return Arch::convnet3;
  if (name == "convnet-4") return Arch::convnet4;
  if (name == "resnet-10-like") return Arch::resnet10;
  if (name == "mlp") return Arch::mlp;
  throw Error("unknown-architecture", name);
}

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::convnet2: return "convnet-2";
    case Arch::convnet3: return "convnet-3";
    case Arch::convnet4: return "convnet-4";
    case Arch::resnet10: return "resnet-10-like";
    case Arch::mlp: return "mlp";
  }
  return "?";
}

Norm parse_norm(const std::string& name) {
  if (name == "instance") return Norm::instance;
  if (name == "batch") return Norm::batch;
  if (name == "none") return Norm::none;
  throw Error("unknown-norm", name);
}

std::string norm_name(Norm n) {
  switch (n) {
    case Norm::instance: return "instance";
    case Norm::batch: return "batch";
    case Norm::none: return "none";
  }
  return "?";
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

uint64_t Model::checksum() const {
  uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) h = h * 1099511628211ull ^ p.checksum();
  return h;
}

namespace {

int conv_blocks(Arch a) {
  switch (a) {
    case Arch::convnet2: return 2;
    case Arch::convnet3: return 3;
    case Arch::convnet4: return 4;
    default: return 0;
  }
}

Tensor kaiming_uniform(std::vector<int64_t> shape, int64_t fan_in, std::mt19937& rng) {
  Tensor t(std::move(shape));
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

void push_conv(Model& m, const std::string& prefix, int64_t cin, int64_t cout,
               std::mt19937& rng) {
  m.params.push_back(kaiming_uniform({cout, cin, 3, 3}, cin * 9, rng));
  m.names.push_back(prefix + ".w");
  m.params.push_back(Tensor({cout}));
  m.names.push_back(prefix + ".b");
}

void push_norm(Model& m, const std::string& prefix, int64_t c, Norm norm) {
  if (norm == Norm::none) return;
  m.params.push_back(Tensor({c}, 1.0f));
  m.names.push_back(prefix + ".gamma");
  m.params.push_back(Tensor({c}));
  m.names.push_back(prefix + ".beta");
}

void push_linear(Model& m, const std::string& prefix, int64_t in, int64_t out,
                 std::mt19937& rng) {
  m.params.push_back(kaiming_uniform({out, in}, in, rng));
  m.names.push_back(prefix + ".w");
  m.params.push_back(Tensor({out}));
  m.names.push_back(prefix + ".b");
}

constexpr float kNormEps = 1e-5f;

Var apply_norm(Norm norm, const Var& x, const Var& gamma, const Var& beta) {
  using namespace ad;
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (norm == Norm::none) return x;
  if (norm == Norm::instance) {
    float inv = 1.0f / static_cast<float>(h * w);
    Var mu = scale(spatial_sum(x), inv);
    Var xc = sub(x, spatial_bcast(mu, h, w));
    Var var = scale(spatial_sum(square(xc)), inv);
    Var y = mul(xc, spatial_bcast(rsqrt_eps(var, kNormEps), h, w));
    return add(mul(y, chan_bcast(gamma, n, h, w)), chan_bcast(beta, n, h, w));
  }
  // batch: statistics over (N,H,W) per channel, training-mode only
  float inv = 1.0f / static_cast<float>(n * h * w);
  Var mu = scale(chan_sum(x), inv);
  Var xc = sub(x, chan_bcast(mu, n, h, w));
  Var var = scale(chan_sum(square(xc)), inv);
  Var y = mul(xc, chan_bcast(rsqrt_eps(var, kNormEps), n, h, w));
  return add(mul(y, chan_bcast(gamma, n, h, w)), chan_bcast(beta, n, h, w));
}

struct ParamCursor {
  const std::vector<Var>& vars;
  size_t i = 0;
  const Var& next() { return vars[i++]; }
};

Var conv_block(Norm norm, ParamCursor& pc, const Var& x) {
  using namespace ad;
  Var h = conv2d(x, pc.next());
  h = add(h, chan_bcast(pc.next(), h->value.dim(0), h->value.dim(2), h->value.dim(3)));
  if (norm != Norm::none) {
    const Var& gamma = pc.next();
    const Var& beta = pc.next();
    h = apply_norm(norm, h, gamma, beta);
  }
  h = relu(h);
  return avgpool2(h);
}

Var linear_layer(ParamCursor& pc, const Var& x) {
  using namespace ad;
  const Var& w = pc.next();
  const Var& b = pc.next();
  return add(matmul(x, w, false, true), bcast_rows(b, x->value.dim(0)));
}

}  // namespace

Model build_model(const ModelSpec& spec, uint32_t seed) {
  Model m;
  m.spec = spec;
  std::mt19937 rng(seed);
  int64_t w = spec.width;
  if (spec.arch == Arch::mlp) {
    int64_t in = static_cast<int64_t>(spec.in_channels) * spec.input_h * spec.input_w;
    push_linear(m, "fc1", in, w, rng);
    push_linear(m, "fc2", w, w, rng);
    push_linear(m, "head", w, spec.num_classes, rng);
    return m;
  }
  if (spec.arch == Arch::resnet10) {
    push_conv(m, "stem", spec.in_channels, w, rng);
    push_norm(m, "stem.norm", w, spec.norm);
    for (int b = 0; b < 4; ++b) {
      std::string p = "block" + std::to_string(b);
      push_conv(m, p + ".conv1", w, w, rng);
      push_norm(m, p + ".norm1", w, spec.norm);
      push_conv(m, p + ".conv2", w, w, rng);
      push_norm(m, p + ".norm2", w, spec.norm);
    }
    push_linear(m, "head", w, spec.num_classes, rng);
    return m;
  }
  int blocks = conv_blocks(spec.arch);
  int64_t cin = spec.in_channels;
  for (int b = 0; b < blocks; ++b) {
    std::string p = "block" + std::to_string(b);
    push_conv(m, p + ".conv", cin, w, rng);
    push_norm(m, p + ".norm", w, spec.norm);
    cin = w;
  }
  push_linear(m, "head", w, spec.num_classes, rng);
  return m;
}

GraphModel model_forward(const Model& m, const Var& x, bool param_grads) {
  using namespace ad;
  const ModelSpec& spec = m.spec;
  if (x->value.ndim() != 4 || x->value.dim(1) != spec.in_channels ||
      x->value.dim(2) != spec.input_h || x->value.dim(3) != spec.input_w)
    throw Error("input-shape-error", "batch " + shape_str(x->value.shape) + " for model " +
                                         arch_name(spec.arch));
  GraphModel gm;
  gm.params.reserve(m.params.size());
  for (const auto& p : m.params) gm.params.push_back(param_grads ? leaf(p) : constant(p));
  ParamCursor pc{gm.params};

  if (spec.arch == Arch::mlp) {
    Var h = reshape(x, {x->value.dim(0), x->value.numel() / x->value.dim(0)});
    h = relu(linear_layer(pc, h));
    h = relu(linear_layer(pc, h));
    gm.embed = h;
    gm.logits = linear_layer(pc, h);
    return gm;
  }

  Var h = x;
  if (spec.arch == Arch::resnet10) {
    h = conv2d(h, pc.next());
    h = add(h, chan_bcast(pc.next(), h->value.dim(0), h->value.dim(2), h->value.dim(3)));
    if (spec.norm != Norm::none) {
      const Var& g = pc.next();
      const Var& b = pc.next();
      h = apply_norm(spec.norm, h, g, b);
    }
    h = relu(h);
    for (int blk = 0; blk < 4; ++blk) {
      Var r = conv2d(h, pc.next());
      r = add(r, chan_bcast(pc.next(), r->value.dim(0), r->value.dim(2), r->value.dim(3)));
      if (spec.norm != Norm::none) {
        const Var& g = pc.next();
        const Var& b = pc.next();
        r = apply_norm(spec.norm, r, g, b);
      }
      r = relu(r);
      r = conv2d(r, pc.next());
      r = add(r, chan_bcast(pc.next(), r->value.dim(0), r->value.dim(2), r->value.dim(3)));
      if (spec.norm != Norm::none) {
        const Var& g = pc.next();
        const Var& b = pc.next();
        r = apply_norm(spec.norm, r, g, b);
      }
      h = relu(add(h, r));
      if (blk == 1 || blk == 3) h = avgpool2(h);
    }
  } else {
    int blocks = conv_blocks(spec.arch);
    for (int b = 0; b < blocks; ++b) h = conv_block(spec.norm, pc, h);
  }
  int64_t hh = h->value.dim(2), ww = h->value.dim(3);
  gm.embed = scale(spatial_sum(h), 1.0f / static_cast<float>(hh * ww));
  gm.logits = linear_layer(pc, gm.embed);
  return gm;
}

FeatureBundle forward_embed(const Model& m, const Tensor& batch) {
  GraphModel gm = model_forward(m, ad::constant(batch), false);
  return FeatureBundle{gm.embed->value, gm.logits->value};
}

void Sgd::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (const auto& p : params) velocity.emplace_back(p.shape);
  }
  for (size_t i = 0; i < params.size(); ++i) {
    kern::scale(momentum, velocity[i].ptr(), velocity[i].data.size());
    kern::axpy(1.0f, grads[i].ptr(), velocity[i].ptr(), velocity[i].data.size());
    kern::axpy(-lr, velocity[i].ptr(), params[i].ptr(), params[i].data.size());
  }
}

float train_step(Model& m, Sgd& opt, const Tensor& batch, const std::vector<int>& labels) {
  GraphModel gm = model_forward(m, ad::constant(batch), true);
  Var loss = ad::cross_entropy_mean(gm.logits, labels);
  std::vector<Var> gvars = ad::grad(loss, gm.params);
  std::vector<Tensor> grads;
  grads.reserve(gvars.size());
  for (auto& g : gvars) grads.push_back(std::move(g->value));
  opt.step(m.params, grads);
  return loss->value.data[0];
}

}  // namespace dd
