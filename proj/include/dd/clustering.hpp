#pragma once

#include <vector>

#include "dd/dataset.hpp"
#include "dd/nn.hpp"
#include "dd/tensor.hpp"

namespace dd {

struct ClusterState {
  Tensor centers;               // (K, embed_dim)
  std::vector<int> assignments;  // over class samples, values in [0, K)
  double objective = 0.0;        // sum of squared distances to assigned centers
  int64_t computed_at_iteration = 0;
  int k = 0;
};

struct SamplerConfig {
  int sub_clusters = 128;   // N
  int per_cluster = 1;      // n
  int recluster_interval = 10;  // I_int, in outer iterations
  int kmeans_restarts = 1;
  int lloyd_max_iters = 50;
  double rel_tol = 1e-4;

  int batch_size() const { return sub_clusters * per_cluster; }
};

// Embeddings of the listed samples under the given model, batched forward.
Tensor embed_samples(const Model& m, const LabeledDataset& ds, const std::vector<int>& indices,
                     int batch = 256);

// Lloyd's algorithm with k-means++ seeding. Empty clusters are repaired by
// re-seeding them at the globally farthest point. Best of kmeans_restarts.
ClusterState kmeans(const Tensor& features, int k, uint32_t seed, const SamplerConfig& cfg);

struct SelectedBatch {
  std::vector<int> indices;  // positions into the feature rows (class-local)
  bool topped_up = false;    // some cluster was smaller than n
};

// Per cluster, the n members nearest its center (ties: lowest index). When a
// cluster has fewer than n members, the remainder is topped up with the
// nearest non-members of that center.
SelectedBatch nearest_to_center(const ClusterState& state, const Tensor& features, int n);

// Class-local selection mapped back to dataset indices; requires a fresh
// state ("recluster-required" otherwise).
std::vector<int> representative_batch(const LabeledDataset& ds, int class_id,
                                      const ClusterState& state, const Tensor& class_features,
                                      const SamplerConfig& cfg, int64_t current_iteration);

// K=ipc per class; pixels start from the real images nearest each center.
SyntheticSet cluster_init_synthetic(const LabeledDataset& ds, int ipc, const Model& m,
                                    uint32_t seed);

struct ClassClusters {
  std::vector<ClusterState> states;    // per class
  std::vector<Tensor> class_features;  // per class, rows aligned with class_index
  bool ready = false;
};

// Reclusters iff iteration % I_int == 0 or nothing is cached. Covers the
// listed class ids (empty = all classes).
bool maybe_recluster(int64_t iteration, const SamplerConfig& cfg, ClassClusters& clusters,
                     const Model& m, const LabeledDataset& ds, uint32_t seed,
                     const std::vector<int>& classes = {});

}  // namespace dd
