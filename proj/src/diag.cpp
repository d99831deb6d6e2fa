#include "dd/diag.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>

#include "dd/kernels.hpp"
#include "dd/matching.hpp"

namespace dd {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

io::CsvTable series_to_csv(const DiagSeries& s) {
  io::CsvTable t;
  t.header = {"name", "x", "y", "units", "provenance"};
  for (size_t i = 0; i < s.x.size(); ++i)
    t.rows.push_back({s.name, fmt(s.x[i]), fmt(s.y[i]), s.units, s.provenance});
  return t;
}

DiagSeries series_from_csv(const io::CsvTable& t) {
  int cn = t.column("name"), cx = t.column("x"), cy = t.column("y");
  int cu = t.column("units"), cp = t.column("provenance");
  if (cn < 0 || cx < 0 || cy < 0 || cu < 0 || cp < 0)
    throw Error("log-schema-error", "missing series column");
  DiagSeries s;
  for (const auto& row : t.rows) {
    if (s.name.empty()) {
      s.name = row[static_cast<size_t>(cn)];
      s.units = row[static_cast<size_t>(cu)];
      s.provenance = row[static_cast<size_t>(cp)];
    }
    s.x.push_back(std::stod(row[static_cast<size_t>(cx)]));
    s.y.push_back(std::stod(row[static_cast<size_t>(cy)]));
  }
  return s;
}

MmdKernel parse_kernel(const std::string& name) {
  if (name == "linear") return MmdKernel::linear;
  if (name == "rbf") return MmdKernel::rbf;
  throw Error("bad-config", "unknown kernel " + name);
}

double mmd(const Tensor& emb_a, const Tensor& emb_b, MmdKernel kernel) {
  if (emb_a.dim(1) != emb_b.dim(1)) throw Error("feature-dim-error", "embedding dims differ");
  int64_t na = emb_a.dim(0), nb = emb_b.dim(0), d = emb_a.dim(1);
  if (kernel == MmdKernel::linear) {
    std::vector<float> mu_a(static_cast<size_t>(d), 0.0f), mu_b(static_cast<size_t>(d), 0.0f);
    for (int64_t i = 0; i < na; ++i)
      kern::axpy(1.0f / static_cast<float>(na), emb_a.ptr() + i * d, mu_a.data(),
                 static_cast<size_t>(d));
    for (int64_t i = 0; i < nb; ++i)
      kern::axpy(1.0f / static_cast<float>(nb), emb_b.ptr() + i * d, mu_b.data(),
                 static_cast<size_t>(d));
    return kern::sqdist(mu_a.data(), mu_b.data(), static_cast<size_t>(d));
  }
  if (na < 2 || nb < 2) throw Error("batch-too-small", "unbiased rbf needs >= 2 per side");

  auto sq = [d](const Tensor& p, int64_t i, const Tensor& q, int64_t j) {
    return static_cast<double>(
        kern::sqdist(p.ptr() + i * d, q.ptr() + j * d, static_cast<size_t>(d)));
  };
  std::vector<double> dists;
  for (int64_t i = 0; i < na; ++i)
    for (int64_t j = i + 1; j < na; ++j) dists.push_back(sq(emb_a, i, emb_a, j));
  for (int64_t i = 0; i < nb; ++i)
    for (int64_t j = i + 1; j < nb; ++j) dists.push_back(sq(emb_b, i, emb_b, j));
  for (int64_t i = 0; i < na; ++i)
    for (int64_t j = 0; j < nb; ++j) dists.push_back(sq(emb_a, i, emb_b, j));
  std::vector<double> sorted = dists;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<int64_t>(sorted.size()) / 2,
                   sorted.end());
  double median = sorted[sorted.size() / 2];
  double gamma = median > 0 ? 1.0 / median : 1.0;

  double kaa = 0, kbb = 0, kab = 0;
  size_t p = 0;
  for (int64_t i = 0; i < na; ++i)
    for (int64_t j = i + 1; j < na; ++j) kaa += std::exp(-gamma * dists[p++]);
  for (int64_t i = 0; i < nb; ++i)
    for (int64_t j = i + 1; j < nb; ++j) kbb += std::exp(-gamma * dists[p++]);
  for (int64_t i = 0; i < na; ++i)
    for (int64_t j = 0; j < nb; ++j) kab += std::exp(-gamma * dists[p++]);
  double est = 2.0 * kaa / (static_cast<double>(na) * (na - 1)) +
               2.0 * kbb / (static_cast<double>(nb) * (nb - 1)) -
               2.0 * kab / (static_cast<double>(na) * nb);
  return std::max(0.0, est);
}

std::vector<double> per_sample_grad_norms(const Model& m, const Tensor& batch,
                                          const std::vector<int>& labels) {
  int64_t n = batch.dim(0);
  int64_t per = batch.numel() / std::max<int64_t>(1, n);
  std::vector<double> norms;
  norms.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    Tensor one({1, batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy_n(batch.ptr() + i * per, per, one.ptr());
    GradList gl = class_gradients(m, ad::constant(std::move(one)),
                                  {labels[static_cast<size_t>(i)]});
    double sq = 0;
    for (const ad::Var& g : gl.grads)
      sq += static_cast<double>(
          kern::dot(g->value.ptr(), g->value.ptr(), g->value.data.size()));
    norms.push_back(std::sqrt(sq));
  }
  return norms;
}

DiagSeries grad_norm_distribution(const Model& m, const LabeledDataset& ds, int class_id,
                                  BatchSampling sampler, const SamplerConfig& cfg, uint32_t seed,
                                  int bins) {
  const auto& cls = ds.class_index.at(static_cast<size_t>(class_id));
  std::vector<int> pick;
  if (sampler == BatchSampling::representative) {
    Tensor feats = embed_samples(m, ds, cls);
    ClusterState st = kmeans(feats, cfg.sub_clusters, seed, cfg);
    SelectedBatch sel = nearest_to_center(st, feats, cfg.per_cluster);
    for (int local : sel.indices) pick.push_back(cls[static_cast<size_t>(local)]);
  } else {
    std::mt19937 rng(seed);
    int n = std::min<int>(cfg.batch_size(), static_cast<int>(cls.size()));
    std::sample(cls.begin(), cls.end(), std::back_inserter(pick), n, rng);
  }
  std::vector<double> norms =
      per_sample_grad_norms(m, ds.gather(pick), ds.gather_labels(pick));

  double lo = 0.0, hi = *std::max_element(norms.begin(), norms.end());
  if (hi <= lo) hi = lo + 1.0;
  double width = (hi - lo) / bins;
  DiagSeries s;
  s.name = std::string("gradnorm-") + (sampler == BatchSampling::representative ? "representative"
                                                                                : "random");
  s.units = "count";
  s.x.resize(static_cast<size_t>(bins));
  s.y.assign(static_cast<size_t>(bins), 0.0);
  for (int b = 0; b < bins; ++b) s.x[static_cast<size_t>(b)] = lo + (b + 0.5) * width;
  for (double v : norms) {
    int b = std::min(bins - 1, static_cast<int>((v - lo) / width));
    s.y[static_cast<size_t>(b)] += 1.0;
  }
  return s;
}

std::vector<std::string> list_checkpoints(const std::string& run_dir) {
  std::vector<std::string> paths;
  if (!std::filesystem::is_directory(run_dir))
    throw Error("dataset-not-found", "no run directory " + run_dir);
  for (const auto& e : std::filesystem::directory_iterator(run_dir)) {
    std::string name = e.path().filename().string();
    if (name.starts_with("ckpt_") && name.ends_with(".npz")) paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

DiagSeries feature_migration(const std::vector<std::string>& checkpoint_paths,
                             const Model& probe) {
  if (checkpoint_paths.size() < 2)
    throw Error("insufficient-checkpoints", "need at least two checkpoints");
  DiagSeries s;
  s.name = "feature-migration";
  s.units = "embedding distance";
  Tensor prev_emb;
  int64_t prev_iter = 0;
  for (size_t i = 0; i < checkpoint_paths.size(); ++i) {
    SyntheticSet ck = load_synthetic(checkpoint_paths[i]);
    FeatureBundle fb = forward_embed(probe, ck.pixels);
    if (i > 0) {
      if (!fb.embeddings.same_shape(prev_emb))
        throw Error("shape-mismatch", "checkpoint sizes differ");
      int64_t n = fb.embeddings.dim(0), d = fb.embeddings.dim(1);
      double mean = 0;
      for (int64_t r = 0; r < n; ++r)
        mean += std::sqrt(static_cast<double>(kern::sqdist(
            fb.embeddings.ptr() + r * d, prev_emb.ptr() + r * d, static_cast<size_t>(d))));
      mean /= static_cast<double>(n);
      s.x.push_back(static_cast<double>(ck.iteration));
      s.y.push_back(mean);
    }
    prev_emb = std::move(fb.embeddings);
    prev_iter = ck.iteration;
  }
  (void)prev_iter;
  return s;
}

std::pair<DiagSeries, DiagSeries> difference_curves(const MetricLog& log) {
  std::map<int64_t, std::pair<double, int64_t>> grad_acc, feat_acc;
  for (const MetricRow& r : log.rows) {
    if (r.event != "step") continue;
    auto& g = grad_acc[r.iteration];
    g.first += r.grad_term;
    g.second += 1;
    auto& f = feat_acc[r.iteration];
    f.first += r.feat_term;
    f.second += 1;
  }
  DiagSeries gs, fs;
  gs.name = "grad-difference";
  fs.name = "feat-difference";
  gs.units = fs.units = "distance";
  for (const auto& [it, acc] : grad_acc) {
    gs.x.push_back(static_cast<double>(it));
    gs.y.push_back(acc.first / static_cast<double>(acc.second));
  }
  for (const auto& [it, acc] : feat_acc) {
    fs.x.push_back(static_cast<double>(it));
    fs.y.push_back(acc.first / static_cast<double>(acc.second));
  }
  return {gs, fs};
}

}  // namespace dd
