#pragma once

#include <random>
#include <string>
#include <vector>

#include "dd/clustering.hpp"
#include "dd/dataset.hpp"
#include "dd/io.hpp"
#include "dd/matching.hpp"
#include "dd/nn.hpp"

namespace dd {

enum class InnerUpdate { real_data, synthetic_data, none };
enum class BatchSampling { representative, random };
enum class SynInit { cluster, random };

InnerUpdate parse_inner_update(const std::string& name);
BatchSampling parse_sampling(const std::string& name);
SynInit parse_init(const std::string& name);

struct DistillConfig {
  std::string dataset = "mnist";
  int ipc = 10;
  int64_t outer_iterations = 1200;
  int inner_loops = 100;
  SamplerConfig sampler;
  MatchConfig match;
  float lr_img = 0.005f;
  float img_momentum = 0.5f;
  float model_lr = 0.01f;
  int warmup_epochs = 1;
  int model_refresh = 1;  // outer iterations per fresh random model
  InnerUpdate inner_model_update = InnerUpdate::real_data;
  BatchSampling sampling = BatchSampling::representative;
  SynInit init = SynInit::cluster;
  uint32_t seed = 0;
  int checkpoint_every = 20;
  int model_batch = 128;  // warmup / inner model-update batch
  ModelSpec model;
  std::vector<int> classes;  // restrict to these class ids; empty = all
  std::string run_dir;       // empty = no artifacts written

  void validate() const;  // throws "bad-config"
};

struct MetricRow {
  int64_t iteration = 0;
  int inner_step = -1;
  int class_id = -1;
  double grad_term = 0, feat_term = 0, total = 0;
  double wallclock = 0;  // seconds since run start
  std::string event;     // "step", "recluster", "refresh", "checkpoint", "rollback"
};

struct MetricLog {
  std::vector<MetricRow> rows;
  io::CsvTable to_csv() const;
};
MetricLog metric_log_from_csv(const io::CsvTable& t);  // throws "log-schema-error"

// Mutable loop state; exposed so tests can drive single steps.
struct DistillState {
  DistillConfig cfg;
  const LabeledDataset* real = nullptr;
  SyntheticSet syn;
  Model model;
  ClassClusters clusters;
  Tensor pixel_velocity;  // momentum buffer, shape of syn.pixels
  std::mt19937 rng;
  int64_t iteration = 0;
  MetricLog log;
};

// One epoch per warmup_epochs of supervised training on the real split.
// Throws "warmup-diverged" on NaN loss.
void warmup_model(Model& m, const LabeledDataset& ds, float model_lr, int batch, int epochs,
                  uint32_t seed);

// One matching step for one class: pick the real batch, compute the
// bidirectional loss, update this class's synthetic slice. Non-finite losses
// roll the slice back ("rollback" event) instead of aborting.
MatchLoss inner_step(DistillState& st, int class_pos);

// The full outer/inner loop. Writes run_dir artifacts when configured:
// config.json, metrics.csv, ckpt_NNNNNN.npz (+ .json), synthetic.final.npz.
struct DistillResult {
  SyntheticSet syn;
  MetricLog log;
};
DistillResult distill(const LabeledDataset& real, const DistillConfig& cfg);

std::string distill_config_json(const DistillConfig& cfg);
DistillConfig distill_config_from_json(const std::string& text);  // throws "bad-config"
std::string config_hash(const DistillConfig& cfg);

}  // namespace dd
