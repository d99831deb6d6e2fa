#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dd/clustering.hpp"
#include "dd/dataset.hpp"
#include "dd/distill.hpp"
#include "dd/io.hpp"
#include "dd/nn.hpp"

namespace dd {

struct DiagSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string units;
  std::string provenance;  // run dir and config hash when known
};

io::CsvTable series_to_csv(const DiagSeries& s);
DiagSeries series_from_csv(const io::CsvTable& t);  // throws "log-schema-error"

enum class MmdKernel { linear, rbf };
MmdKernel parse_kernel(const std::string& name);

// Rows of emb_a/emb_b are embeddings. linear: squared distance of means.
// rbf: unbiased MMD^2 estimate, median-heuristic bandwidth, clamped at 0.
// rbf with fewer than 2 rows on either side throws "batch-too-small".
double mmd(const Tensor& emb_a, const Tensor& emb_b, MmdKernel kernel);

// L2 norm over all parameters of each sample's own cross-entropy gradient.
std::vector<double> per_sample_grad_norms(const Model& m, const Tensor& batch,
                                          const std::vector<int>& labels);

// Histogram of per-sample gradient norms for one class under the chosen
// sampler; x holds bin centers, y counts.
DiagSeries grad_norm_distribution(const Model& m, const LabeledDataset& ds, int class_id,
                                  BatchSampling sampler, const SamplerConfig& cfg, uint32_t seed,
                                  int bins = 20);

// Mean embedding distance between corresponding images of consecutive
// checkpoints. Throws "insufficient-checkpoints" for fewer than two.
DiagSeries feature_migration(const std::vector<std::string>& checkpoint_paths,
                             const Model& probe);

// Sorted ckpt_*.npz paths under a run directory.
std::vector<std::string> list_checkpoints(const std::string& run_dir);

// Per-iteration means of grad_term and feat_term over "step" rows.
std::pair<DiagSeries, DiagSeries> difference_curves(const MetricLog& log);

}  // namespace dd
