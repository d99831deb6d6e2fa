#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dd/autodiff.hpp"
#include "dd/nn.hpp"
#include "dd/tensor.hpp"

namespace dd {

enum class Metric { mse, mae };
enum class MatchMode { gradient_only, feature_only, bidirectional };

Metric parse_metric(const std::string& name);
std::string metric_name(Metric m);
MatchMode parse_match_mode(const std::string& name);
std::string match_mode_name(MatchMode m);
// mae for mnist/fashion-mnist, mse otherwise.
Metric default_metric(const std::string& dataset);

struct MatchConfig {
  Metric metric = Metric::mse;
  float lambda_feat = 1.0f;
  MatchMode mode = MatchMode::bidirectional;
  std::vector<std::string> augment_policy;  // of {crop, flip, scale, rotate, color, cutout}
};

// Parameters drawn during one diff_augment call, in draw order. Two calls
// with the same shared_seed record identical prefixes regardless of batch
// contents (the shared-seed pairing contract).
struct AugmentDraws {
  std::vector<float> values;
};

// Differentiable augmentation chain. Geometric transforms are bilinear
// warps, color transforms blend toward per-sample statistics, cutout is a
// constant mask. Unknown names raise "unknown-augment".
ad::Var diff_augment(const ad::Var& x, const std::vector<std::string>& policy,
                     uint32_t shared_seed, AugmentDraws* record = nullptr);

struct GradList {
  std::vector<ad::Var> grads;  // aligned with model parameters
  std::vector<std::string> names;
};

// Gradients of mean cross-entropy w.r.t. every parameter; the result stays
// differentiable w.r.t. the batch pixels. Throws "empty-batch".
GradList class_gradients(const Model& m, const ad::Var& batch, const std::vector<int>& labels);

// Sum over layers of element-wise mse/mae between gradient tensors.
// Throws "grad-shape-error" on layer-wise shape mismatch.
std::pair<ad::Var, std::vector<std::pair<std::string, float>>> gradient_distance(
    const GradList& gs, const GradList& gt, Metric metric);

// Squared distance between batch-mean embeddings (rows are samples).
// Throws "feature-dim-error".
ad::Var distribution_distance(const ad::Var& emb_s, const ad::Var& emb_t);
double distribution_distance(const FeatureBundle& fs, const FeatureBundle& ft);

struct MatchLoss {
  float grad_term = 0.0f;
  float feat_term = 0.0f;
  float total = 0.0f;
  std::vector<std::pair<std::string, float>> per_layer;
  Tensor pixel_grad;  // d total / d synthetic pixels
};

// One match step for a single class: augments both batches with the same
// shared_seed, compares gradients and mean embeddings against the real batch
// (a constant target), and returns the loss with its synthetic-pixel
// gradient. total = grad_term + lambda_feat * feat_term, mode-zeroed.
MatchLoss bidirectional_loss(const Model& m, const Tensor& syn, const Tensor& real,
                             int class_label, const MatchConfig& cfg, uint32_t shared_seed,
                             AugmentDraws* syn_draws = nullptr,
                             AugmentDraws* real_draws = nullptr);

}  // namespace dd
