#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dd/autodiff.hpp"
#include "dd/tensor.hpp"

namespace dd {

enum class Arch { convnet2, convnet3, convnet4, resnet10, mlp };
enum class Norm { instance, batch, none };

Arch parse_arch(const std::string& name);  // throws "unknown-architecture"
std::string arch_name(Arch a);
Norm parse_norm(const std::string& name);
std::string norm_name(Norm n);

struct ModelSpec {
  Arch arch = Arch::convnet3;
  int width = 128;
  Norm norm = Norm::instance;
  int in_channels = 3;
  int num_classes = 10;
  int input_h = 32;
  int input_w = 32;
};

// Embeddings are the spatially averaged penultimate activations.
struct FeatureBundle {
  Tensor embeddings;  // (batch, embed_dim)
  Tensor logits;      // (batch, num_classes)
};

struct Model {
  ModelSpec spec;
  std::vector<Tensor> params;
  std::vector<std::string> names;

  int64_t embed_dim() const { return spec.width; }
  int64_t param_count() const;
  uint64_t checksum() const;
};

// Deterministic: equal (spec, seed) gives bit-identical parameters.
Model build_model(const ModelSpec& spec, uint32_t seed);

struct GraphModel {
  std::vector<ad::Var> params;  // aligned with Model::params
  ad::Var embed;
  ad::Var logits;
};

// Builds the forward graph for a batch var. When param_grads is false the
// parameters enter as constants (gradients flow only to the batch).
GraphModel model_forward(const Model& m, const ad::Var& x, bool param_grads);

// Value-only forward pass; throws "input-shape-error" on mismatched batches.
FeatureBundle forward_embed(const Model& m, const Tensor& batch);

struct Sgd {
  float lr = 0.01f;
  float momentum = 0.0f;
  std::vector<Tensor> velocity;

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);
};

// One supervised step of mean cross-entropy on (batch, labels); returns loss.
float train_step(Model& m, Sgd& opt, const Tensor& batch, const std::vector<int>& labels);

}  // namespace dd
