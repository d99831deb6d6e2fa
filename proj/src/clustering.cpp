#include "dd/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "dd/kernels.hpp"

namespace dd {

Tensor embed_samples(const Model& m, const LabeledDataset& ds, const std::vector<int>& indices,
                     int batch) {
  int64_t dim = m.embed_dim();
  Tensor out({static_cast<int64_t>(indices.size()), dim});
  for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(batch)) {
    size_t end = std::min(indices.size(), start + static_cast<size_t>(batch));
    std::vector<int> chunk(indices.begin() + start, indices.begin() + end);
    FeatureBundle fb = forward_embed(m, ds.gather(chunk));
    std::copy(fb.embeddings.data.begin(), fb.embeddings.data.end(),
              out.data.begin() + static_cast<int64_t>(start) * dim);
  }
  return out;
}

namespace {

struct KmeansRun {
  Tensor centers;
  std::vector<int> assignments;
  double objective = 0.0;
};

// nearest center; ties by lowest center index
int nearest_center(const float* x, const Tensor& centers, int64_t dim, float* dist_out) {
  int best = 0;
  float bd = std::numeric_limits<float>::max();
  for (int64_t k = 0; k < centers.dim(0); ++k) {
    float d = kern::sqdist(x, centers.ptr() + k * dim, static_cast<size_t>(dim));
    if (d < bd) {
      bd = d;
      best = static_cast<int>(k);
    }
  }
  if (dist_out) *dist_out = bd;
  return best;
}

KmeansRun lloyd_once(const Tensor& features, int k, uint32_t seed, const SamplerConfig& cfg) {
  int64_t n = features.dim(0), dim = features.dim(1);
  std::mt19937 rng(seed);

  // k-means++ seeding
  Tensor centers({k, dim});
  std::vector<float> d2(static_cast<size_t>(n), std::numeric_limits<float>::max());
  {
    std::uniform_int_distribution<int64_t> uni(0, n - 1);
    int64_t first = uni(rng);
    std::copy_n(features.ptr() + first * dim, dim, centers.ptr());
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        float d = kern::sqdist(features.ptr() + i * dim, centers.ptr() + (c - 1) * dim,
                               static_cast<size_t>(dim));
        d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], d);
        total += d2[static_cast<size_t>(i)];
      }
      int64_t pick = 0;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng), acc = 0.0;
        for (int64_t i = 0; i < n; ++i) {
          acc += d2[static_cast<size_t>(i)];
          if (acc >= r) {
            pick = i;
            break;
          }
        }
      } else {
        std::uniform_int_distribution<int64_t> uni2(0, n - 1);
        pick = uni2(rng);
      }
      std::copy_n(features.ptr() + pick * dim, dim, centers.ptr() + c * dim);
    }
  }

  KmeansRun run;
  run.assignments.assign(static_cast<size_t>(n), 0);
  double prev_obj = std::numeric_limits<double>::max();
  std::vector<float> dist(static_cast<size_t>(n));
  std::vector<int64_t> counts(static_cast<size_t>(k));

  for (int it = 0; it < cfg.lloyd_max_iters; ++it) {
    double obj = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      run.assignments[static_cast<size_t>(i)] =
          nearest_center(features.ptr() + i * dim, centers, dim, &dist[static_cast<size_t>(i)]);
      obj += dist[static_cast<size_t>(i)];
    }
    // repair empty clusters: re-seed at the globally farthest point
    std::fill(counts.begin(), counts.end(), 0);
    for (int64_t i = 0; i < n; ++i) counts[static_cast<size_t>(run.assignments[static_cast<size_t>(i)])]++;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) continue;
      int64_t far = 0;
      float fd = -1.0f;
      for (int64_t i = 0; i < n; ++i) {
        if (counts[static_cast<size_t>(run.assignments[static_cast<size_t>(i)])] > 1 &&
            dist[static_cast<size_t>(i)] > fd) {
          fd = dist[static_cast<size_t>(i)];
          far = i;
        }
      }
      obj -= dist[static_cast<size_t>(far)];
      counts[static_cast<size_t>(run.assignments[static_cast<size_t>(far)])]--;
      run.assignments[static_cast<size_t>(far)] = c;
      counts[static_cast<size_t>(c)] = 1;
      dist[static_cast<size_t>(far)] = 0.0f;
      std::copy_n(features.ptr() + far * dim, dim, centers.ptr() + c * dim);
    }
    run.objective = obj;
    if (prev_obj < std::numeric_limits<double>::max() &&
        std::fabs(prev_obj - obj) <= cfg.rel_tol * std::max(prev_obj, 1e-12)) {
      break;
    }
    prev_obj = obj;
    // update step
    std::fill(centers.data.begin(), centers.data.end(), 0.0f);
    for (int64_t i = 0; i < n; ++i)
      kern::axpy(1.0f, features.ptr() + i * dim,
                 centers.ptr() + run.assignments[static_cast<size_t>(i)] * dim,
                 static_cast<size_t>(dim));
    for (int c = 0; c < k; ++c)
      kern::scale(1.0f / static_cast<float>(counts[static_cast<size_t>(c)]),
                  centers.ptr() + c * dim, static_cast<size_t>(dim));
  }
  // exact objective of the final assignment, evaluated at its own centroids
  // (double precision, so it is comparable across arithmetic orders)
  std::fill(counts.begin(), counts.end(), 0);
  for (int a : run.assignments) counts[static_cast<size_t>(a)]++;
  std::vector<double> dcenters(static_cast<size_t>(k) * static_cast<size_t>(dim), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double* c = dcenters.data() + static_cast<int64_t>(run.assignments[static_cast<size_t>(i)]) * dim;
    const float* x = features.ptr() + i * dim;
    for (int64_t d = 0; d < dim; ++d) c[d] += static_cast<double>(x[d]);
  }
  for (int c = 0; c < k; ++c)
    for (int64_t d = 0; d < dim; ++d)
      dcenters[static_cast<size_t>(c * dim + d)] /= static_cast<double>(counts[static_cast<size_t>(c)]);
  double exact = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* c = dcenters.data() + static_cast<int64_t>(run.assignments[static_cast<size_t>(i)]) * dim;
    const float* x = features.ptr() + i * dim;
    for (int64_t d = 0; d < dim; ++d) {
      double diff = static_cast<double>(x[d]) - c[d];
      exact += diff * diff;
    }
  }
  run.objective = exact;
  for (int64_t i = 0; i < static_cast<int64_t>(dcenters.size()); ++i)
    centers.at(i) = static_cast<float>(dcenters[static_cast<size_t>(i)]);
  run.centers = std::move(centers);
  return run;
}

}  // namespace

ClusterState kmeans(const Tensor& features, int k, uint32_t seed, const SamplerConfig& cfg) {
  int64_t n = features.dim(0);
  if (k <= 0 || n < k) throw Error("too-few-samples", "kmeans needs count >= K");
  if (!features.all_finite()) throw Error("invalid-features", "non-finite feature values");

  KmeansRun best;
  best.objective = std::numeric_limits<double>::max();
  int restarts = std::max(1, cfg.kmeans_restarts);
  for (int r = 0; r < restarts; ++r) {
    KmeansRun run = lloyd_once(features, k, seed + static_cast<uint32_t>(r) * 7919u, cfg);
    if (run.objective < best.objective) best = std::move(run);
  }
  ClusterState st;
  st.centers = std::move(best.centers);
  st.assignments = std::move(best.assignments);
  st.objective = best.objective;
  st.k = k;
  return st;
}

SelectedBatch nearest_to_center(const ClusterState& state, const Tensor& features, int n) {
  int64_t count = features.dim(0), dim = features.dim(1);
  SelectedBatch out;
  std::vector<char> taken(static_cast<size_t>(count), 0);
  for (int c = 0; c < state.k; ++c) {
    const float* center = state.centers.ptr() + c * dim;
    std::vector<std::pair<float, int>> members;
    for (int64_t i = 0; i < count; ++i)
      if (state.assignments[static_cast<size_t>(i)] == c)
        members.emplace_back(kern::sqdist(features.ptr() + i * dim, center,
                                          static_cast<size_t>(dim)),
                             static_cast<int>(i));
    std::sort(members.begin(), members.end());
    int got = 0;
    for (const auto& [d, idx] : members) {
      if (got == n) break;
      out.indices.push_back(idx);
      taken[static_cast<size_t>(idx)] = 1;
      ++got;
    }
    if (got < n) {
      out.topped_up = true;
      std::vector<std::pair<float, int>> others;
      for (int64_t i = 0; i < count; ++i)
        if (!taken[static_cast<size_t>(i)])
          others.emplace_back(kern::sqdist(features.ptr() + i * dim, center,
                                           static_cast<size_t>(dim)),
                              static_cast<int>(i));
      std::sort(others.begin(), others.end());
      for (const auto& [d, idx] : others) {
        if (got == n) break;
        out.indices.push_back(idx);
        taken[static_cast<size_t>(idx)] = 1;
        ++got;
      }
    }
  }
  return out;
}

std::vector<int> representative_batch(const LabeledDataset& ds, int class_id,
                                      const ClusterState& state, const Tensor& class_features,
                                      const SamplerConfig& cfg, int64_t current_iteration) {
  int64_t age = current_iteration - state.computed_at_iteration;
  if (age < 0 || age >= cfg.recluster_interval)
    throw Error("recluster-required", "stale cluster state for class " + std::to_string(class_id));
  SelectedBatch sel = nearest_to_center(state, class_features, cfg.per_cluster);
  const auto& cls = ds.class_index[static_cast<size_t>(class_id)];
  std::vector<int> out;
  out.reserve(sel.indices.size());
  for (int local : sel.indices) out.push_back(cls[static_cast<size_t>(local)]);
  return out;
}

SyntheticSet cluster_init_synthetic(const LabeledDataset& ds, int ipc, const Model& m,
                                    uint32_t seed) {
  SamplerConfig cfg;
  std::vector<int> chosen;
  for (int c = 0; c < ds.num_classes; ++c) {
    const auto& cls = ds.class_index[static_cast<size_t>(c)];
    Tensor feats = embed_samples(m, ds, cls);
    ClusterState st = kmeans(feats, ipc, seed + static_cast<uint32_t>(c) * 131u, cfg);
    SelectedBatch sel = nearest_to_center(st, feats, 1);
    for (int local : sel.indices) chosen.push_back(cls[static_cast<size_t>(local)]);
  }
  SyntheticSet s;
  s.ipc = ipc;
  s.pixels = ds.gather(chosen);
  s.labels = ds.gather_labels(chosen);
  s.dataset_name = ds.name;
  s.norm_stats = ds.norm_stats;
  return s;
}

bool maybe_recluster(int64_t iteration, const SamplerConfig& cfg, ClassClusters& clusters,
                     const Model& m, const LabeledDataset& ds, uint32_t seed,
                     const std::vector<int>& classes) {
  bool due = !clusters.ready || (iteration % cfg.recluster_interval == 0);
  if (!due) return false;
  std::vector<int> ids = classes;
  if (ids.empty()) {
    ids.resize(static_cast<size_t>(ds.num_classes));
    std::iota(ids.begin(), ids.end(), 0);
  }
  clusters.states.assign(static_cast<size_t>(ds.num_classes), {});
  clusters.class_features.assign(static_cast<size_t>(ds.num_classes), {});
  for (int c : ids) {
    const auto& cls = ds.class_index[static_cast<size_t>(c)];
    Tensor feats = embed_samples(m, ds, cls);
    uint32_t s = seed ^ (static_cast<uint32_t>(iteration) * 2654435761u) ^
                 (static_cast<uint32_t>(c) * 40503u);
    ClusterState st = kmeans(feats, cfg.sub_clusters, s, cfg);
    st.computed_at_iteration = iteration;
    clusters.states[static_cast<size_t>(c)] = std::move(st);
    clusters.class_features[static_cast<size_t>(c)] = std::move(feats);
  }
  clusters.ready = true;
  return true;
}

}  // namespace dd
