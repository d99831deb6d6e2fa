#include "dd/matching.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dd {

namespace {
constexpr float kPi = 3.14159265358979323846f;

uint32_t mix_name(uint32_t seed, const std::string& name) {
  uint32_t h = 2166136261u;
  for (char c : name) h = (h ^ static_cast<uint8_t>(c)) * 16777619u;
  return seed ^ h;
}

void note(AugmentDraws* rec, float v) {
  if (rec) rec->values.push_back(v);
}

// Per-sample affine map from output to source coordinates, centered:
//   xs = a11*(x-cx) + a12*(y-cy) + cx + tx,  ys likewise.
struct Affine {
  float a11 = 1, a12 = 0, a21 = 0, a22 = 1, tx = 0, ty = 0;
};

std::shared_ptr<ad::WarpGrid> affine_grid(const std::vector<Affine>& maps, int64_t h, int64_t w) {
  auto grid = std::make_shared<ad::WarpGrid>();
  grid->n = static_cast<int64_t>(maps.size());
  grid->h = h;
  grid->w = w;
  grid->idx.assign(static_cast<size_t>(grid->n * h * w * 4), -1);
  grid->wgt.assign(static_cast<size_t>(grid->n * h * w * 4), 0.0f);
  float cx = (static_cast<float>(w) - 1.0f) / 2.0f;
  float cy = (static_cast<float>(h) - 1.0f) / 2.0f;
  for (int64_t s = 0; s < grid->n; ++s) {
    const Affine& m = maps[static_cast<size_t>(s)];
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        float dx = static_cast<float>(x) - cx, dy = static_cast<float>(y) - cy;
        float xs = m.a11 * dx + m.a12 * dy + cx + m.tx;
        float ys = m.a21 * dx + m.a22 * dy + cy + m.ty;
        int64_t x0 = static_cast<int64_t>(std::floor(xs));
        int64_t y0 = static_cast<int64_t>(std::floor(ys));
        float fx = xs - static_cast<float>(x0), fy = ys - static_cast<float>(y0);
        size_t base = static_cast<size_t>(((s * h + y) * w + x) * 4);
        const int64_t xs4[4] = {x0, x0 + 1, x0, x0 + 1};
        const int64_t ys4[4] = {y0, y0, y0 + 1, y0 + 1};
        const float w4[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        for (int k = 0; k < 4; ++k) {
          if (xs4[k] < 0 || xs4[k] >= w || ys4[k] < 0 || ys4[k] >= h) continue;
          grid->idx[base + static_cast<size_t>(k)] = static_cast<int32_t>(ys4[k] * w + xs4[k]);
          grid->wgt[base + static_cast<size_t>(k)] = w4[k];
        }
      }
    }
  }
  return grid;
}

ad::Var apply_crop(const ad::Var& x, std::mt19937& rng, AugmentDraws* rec) {
  int64_t n = x->value.dim(0), h = x->value.dim(2), w = x->value.dim(3);
  int span = static_cast<int>((w + 7) / 8);
  std::uniform_int_distribution<int> shift(-span, span);
  std::vector<Affine> maps(static_cast<size_t>(n));
  for (auto& m : maps) {
    m.tx = static_cast<float>(shift(rng));
    m.ty = static_cast<float>(shift(rng));
    note(rec, m.tx);
    note(rec, m.ty);
  }
  return ad::warp(x, affine_grid(maps, h, w));
}

ad::Var apply_flip(const ad::Var& x, std::mt19937& rng, AugmentDraws* rec) {
  int64_t n = x->value.dim(0), h = x->value.dim(2), w = x->value.dim(3);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<Affine> maps(static_cast<size_t>(n));
  for (auto& m : maps) {
    int f = coin(rng);
    if (f) m.a11 = -1.0f;
    note(rec, static_cast<float>(f));
  }
  return ad::warp(x, affine_grid(maps, h, w));
}

ad::Var apply_scale(const ad::Var& x, std::mt19937& rng, AugmentDraws* rec) {
  int64_t n = x->value.dim(0), h = x->value.dim(2), w = x->value.dim(3);
  std::uniform_real_distribution<float> ratio(0.8f, 1.2f);
  std::vector<Affine> maps(static_cast<size_t>(n));
  for (auto& m : maps) {
    float s = ratio(rng);
    m.a11 = 1.0f / s;
    m.a22 = 1.0f / s;
    note(rec, s);
  }
  return ad::warp(x, affine_grid(maps, h, w));
}

ad::Var apply_rotate(const ad::Var& x, std::mt19937& rng, AugmentDraws* rec) {
  int64_t n = x->value.dim(0), h = x->value.dim(2), w = x->value.dim(3);
  std::uniform_real_distribution<float> deg(-15.0f, 15.0f);
  std::vector<Affine> maps(static_cast<size_t>(n));
  for (auto& m : maps) {
    float a = deg(rng) * kPi / 180.0f;
    m.a11 = std::cos(a);
    m.a12 = std::sin(a);
    m.a21 = -std::sin(a);
    m.a22 = std::cos(a);
    note(rec, a);
  }
  return ad::warp(x, affine_grid(maps, h, w));
}

ad::Var apply_color(const ad::Var& x, std::mt19937& rng, AugmentDraws* rec) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  Tensor bright(x->value.shape), satur(x->value.shape), contr(x->value.shape);
  int64_t per = c * h * w;
  for (int64_t s = 0; s < n; ++s) {
    float b = uni(rng) - 0.5f;
    float sa = uni(rng) * 2.0f;
    float co = uni(rng) + 0.5f;
    note(rec, b);
    note(rec, sa);
    note(rec, co);
    std::fill_n(bright.ptr() + s * per, per, b);
    std::fill_n(satur.ptr() + s * per, per, sa);
    std::fill_n(contr.ptr() + s * per, per, co);
  }
  ad::Var out = ad::add(x, ad::constant(std::move(bright)));
  // saturation: blend toward the per-pixel channel mean
  ad::Var cmean = ad::chanpix_bcast(ad::scale(ad::chanpix_sum(out), 1.0f / static_cast<float>(c)), c);
  out = ad::add(ad::mulc(ad::sub(out, cmean), std::move(satur)), cmean);
  // contrast: blend toward the per-sample mean
  ad::Var smean = ad::sample_bcast(
      ad::scale(ad::sample_sum(out), 1.0f / static_cast<float>(per)), c, h, w);
  out = ad::add(ad::mulc(ad::sub(out, smean), std::move(contr)), smean);
  return out;
}

ad::Var apply_cutout(const ad::Var& x, std::mt19937& rng, AugmentDraws* rec) {
  int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  int64_t side = h / 2;
  Tensor mask(x->value.shape, 1.0f);
  std::uniform_int_distribution<int64_t> ux(0, w - 1), uy(0, h - 1);
  for (int64_t s = 0; s < n; ++s) {
    int64_t oy = uy(rng) - side / 2, ox = ux(rng) - side / 2;
    note(rec, static_cast<float>(oy));
    note(rec, static_cast<float>(ox));
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = std::max<int64_t>(0, oy); y < std::min(h, oy + side); ++y)
        for (int64_t px = std::max<int64_t>(0, ox); px < std::min(w, ox + side); ++px)
          mask.at(((s * c + ch) * h + y) * w + px) = 0.0f;
  }
  return ad::mulc(x, std::move(mask));
}

}  // namespace

Metric parse_metric(const std::string& name) {
  if (name == "mse") return Metric::mse;
  if (name == "mae") return Metric::mae;
  throw Error("bad-config", "unknown metric " + name);
}
std::string metric_name(Metric m) { return m == Metric::mse ? "mse" : "mae"; }

MatchMode parse_match_mode(const std::string& name) {
  if (name == "gradient_only") return MatchMode::gradient_only;
  if (name == "feature_only") return MatchMode::feature_only;
  if (name == "bidirectional") return MatchMode::bidirectional;
  throw Error("bad-config", "unknown match mode " + name);
}
std::string match_mode_name(MatchMode m) {
  switch (m) {
    case MatchMode::gradient_only: return "gradient_only";
    case MatchMode::feature_only: return "feature_only";
    default: return "bidirectional";
  }
}

Metric default_metric(const std::string& dataset) {
  return (dataset == "mnist" || dataset == "fashion-mnist") ? Metric::mae : Metric::mse;
}

ad::Var diff_augment(const ad::Var& x, const std::vector<std::string>& policy,
                     uint32_t shared_seed, AugmentDraws* record) {
  if (x->value.ndim() != 4) throw Error("input-shape-error", "augment expects NCHW");
  ad::Var out = x;
  for (const std::string& name : policy) {
    std::mt19937 rng(mix_name(shared_seed, name));
    if (name == "crop")
      out = apply_crop(out, rng, record);
    else if (name == "flip")
      out = apply_flip(out, rng, record);
    else if (name == "scale")
      out = apply_scale(out, rng, record);
    else if (name == "rotate")
      out = apply_rotate(out, rng, record);
    else if (name == "color")
      out = apply_color(out, rng, record);
    else if (name == "cutout")
      out = apply_cutout(out, rng, record);
    else
      throw Error("unknown-augment", name);
  }
  return out;
}

GradList class_gradients(const Model& m, const ad::Var& batch, const std::vector<int>& labels) {
  if (batch->value.dim(0) == 0) throw Error("empty-batch", "no samples to match");
  GraphModel gm = model_forward(m, batch, true);
  ad::Var loss = ad::cross_entropy_mean(gm.logits, labels);
  GradList out;
  out.grads = ad::grad(loss, gm.params);
  out.names = m.names;
  return out;
}

std::pair<ad::Var, std::vector<std::pair<std::string, float>>> gradient_distance(
    const GradList& gs, const GradList& gt, Metric metric) {
  if (gs.grads.size() != gt.grads.size())
    throw Error("grad-shape-error", "layer count mismatch");
  ad::Var total;
  std::vector<std::pair<std::string, float>> per_layer;
  for (size_t i = 0; i < gs.grads.size(); ++i) {
    if (!gs.grads[i]->value.same_shape(gt.grads[i]->value))
      throw Error("grad-shape-error", "layer " + gs.names[i]);
    ad::Var diff = ad::sub(gs.grads[i], gt.grads[i]);
    ad::Var layer = metric == Metric::mse ? ad::mean_all(ad::square(diff))
                                          : ad::mean_all(ad::absval(diff));
    per_layer.emplace_back(i < gs.names.size() ? gs.names[i] : "layer" + std::to_string(i),
                           layer->value.at(0));
    total = total ? ad::add(total, layer) : layer;
  }
  return {total, per_layer};
}

ad::Var distribution_distance(const ad::Var& emb_s, const ad::Var& emb_t) {
  if (emb_s->value.dim(1) != emb_t->value.dim(1))
    throw Error("feature-dim-error", "embedding dims differ");
  ad::Var mu_s = ad::scale(ad::colsum(emb_s), 1.0f / static_cast<float>(emb_s->value.dim(0)));
  ad::Var mu_t = ad::scale(ad::colsum(emb_t), 1.0f / static_cast<float>(emb_t->value.dim(0)));
  return ad::sum_all(ad::square(ad::sub(mu_s, mu_t)));
}

double distribution_distance(const FeatureBundle& fs, const FeatureBundle& ft) {
  return distribution_distance(ad::constant(fs.embeddings), ad::constant(ft.embeddings))
      ->value.at(0);
}

MatchLoss bidirectional_loss(const Model& m, const Tensor& syn, const Tensor& real,
                             int class_label, const MatchConfig& cfg, uint32_t shared_seed,
                             AugmentDraws* syn_draws, AugmentDraws* real_draws) {
  ad::Var syn_leaf = ad::leaf(syn);
  ad::Var syn_aug = diff_augment(syn_leaf, cfg.augment_policy, shared_seed, syn_draws);
  ad::Var real_aug =
      diff_augment(ad::constant(real), cfg.augment_policy, shared_seed, real_draws);
  std::vector<int> labels_s(static_cast<size_t>(syn.dim(0)), class_label);
  std::vector<int> labels_r(static_cast<size_t>(real.dim(0)), class_label);

  MatchLoss out;
  ad::Var total;

  GraphModel gm_s = model_forward(m, syn_aug, true);
  GraphModel gm_r = model_forward(m, real_aug, false);

  if (cfg.mode != MatchMode::feature_only) {
    GradList gs;
    gs.grads = ad::grad(ad::cross_entropy_mean(gm_s.logits, labels_s), gm_s.params);
    gs.names = m.names;
    GradList gt_raw;
    {
      GraphModel gm_t = model_forward(m, real_aug, true);
      GradList live;
      live.grads = ad::grad(ad::cross_entropy_mean(gm_t.logits, labels_r), gm_t.params);
      for (const ad::Var& g : live.grads) gt_raw.grads.push_back(ad::constant(g->value));
      gt_raw.names = m.names;
    }
    auto [gvar, per_layer] = gradient_distance(gs, gt_raw, cfg.metric);
    out.grad_term = gvar->value.at(0);
    out.per_layer = std::move(per_layer);
    total = gvar;
  }
  if (cfg.mode != MatchMode::gradient_only) {
    ad::Var fvar = distribution_distance(gm_s.embed, ad::constant(gm_r.embed->value));
    out.feat_term = fvar->value.at(0);
    ad::Var scaled = ad::scale(fvar, cfg.lambda_feat);
    total = total ? ad::add(total, scaled) : scaled;
  }
  out.total = total->value.at(0);
  out.pixel_grad = ad::grad(total, {syn_leaf})[0]->value;
  return out;
}

}  // namespace dd
