#include "dd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace dd {

namespace {

Tensor augment_values(const Tensor& batch, const std::vector<std::string>& policy,
                      uint32_t seed) {
  if (policy.empty()) return batch;
  return diff_augment(ad::constant(batch), policy, seed)->value;
}

int argmax_row(const float* row, int64_t n) {
  int best = 0;
  for (int64_t i = 1; i < n; ++i)
    if (row[i] > row[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace

double test_accuracy(const Model& m, const LabeledDataset& test,
                     const std::vector<int>& class_filter) {
  std::vector<int> indices;
  if (class_filter.empty()) {
    indices.resize(static_cast<size_t>(test.count()));
    std::iota(indices.begin(), indices.end(), 0);
  } else {
    for (int c : class_filter) {
      const auto& cls = test.class_index.at(static_cast<size_t>(c));
      indices.insert(indices.end(), cls.begin(), cls.end());
    }
  }
  int64_t correct = 0;
  constexpr size_t kBatch = 512;
  for (size_t start = 0; start < indices.size(); start += kBatch) {
    size_t end = std::min(indices.size(), start + kBatch);
    std::vector<int> pick(indices.begin() + start, indices.begin() + end);
    FeatureBundle fb = forward_embed(m, test.gather(pick));
    int64_t nc = fb.logits.dim(1);
    for (size_t i = 0; i < pick.size(); ++i) {
      int pred = argmax_row(fb.logits.ptr() + static_cast<int64_t>(i) * nc, nc);
      if (pred == test.labels[static_cast<size_t>(pick[i])]) ++correct;
    }
  }
  return indices.empty() ? 0.0 : 100.0 * static_cast<double>(correct) / indices.size();
}

EvalResult train_on_synthetic(const SyntheticSet& s, const LabeledDataset& real_test,
                              const EvalConfig& cfg) {
  if (cfg.runs < 1 || cfg.epochs < 1) throw Error("bad-config", "runs and epochs must be >= 1");
  for (int l : s.labels)
    if (l < 0 || l >= real_test.num_classes)
      throw Error("label-space-mismatch", "synthetic label " + std::to_string(l));
  if (s.pixels.dim(1) != real_test.channels() || s.pixels.dim(2) != real_test.height() ||
      s.pixels.dim(3) != real_test.width())
    throw Error("label-space-mismatch", "resolution mismatch");

  ModelSpec spec = cfg.arch;
  spec.in_channels = static_cast<int>(s.pixels.dim(1));
  spec.input_h = static_cast<int>(s.pixels.dim(2));
  spec.input_w = static_cast<int>(s.pixels.dim(3));
  spec.num_classes = real_test.num_classes;

  auto t0 = std::chrono::steady_clock::now();
  uint64_t before = s.checksum();
  EvalResult res;
  res.arch = arch_name(spec.arch);

  int64_t count = s.pixels.dim(0);
  std::vector<int> seen_classes;
  for (int l : s.labels)
    if (std::find(seen_classes.begin(), seen_classes.end(), l) == seen_classes.end())
      seen_classes.push_back(l);

  for (int r = 0; r < cfg.runs; ++r) {
    Model m = build_model(spec, cfg.seed + static_cast<uint32_t>(r) * 10007u);
    Sgd opt;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    std::mt19937 rng(cfg.seed + static_cast<uint32_t>(r) * 65537u + 3u);
    std::vector<int> order(static_cast<size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    int decay1 = static_cast<int>(cfg.epochs * 0.6), decay2 = static_cast<int>(cfg.epochs * 0.8);
    for (int e = 0; e < cfg.epochs; ++e) {
      if (cfg.step_decay && (e == decay1 || e == decay2)) opt.lr *= 0.1f;
      std::shuffle(order.begin(), order.end(), rng);
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
        std::vector<int> pick(order.begin() + start, order.begin() + end);
        Tensor batch({static_cast<int64_t>(pick.size()), s.pixels.dim(1), s.pixels.dim(2),
                      s.pixels.dim(3)});
        int64_t per = s.pixels.dim(1) * s.pixels.dim(2) * s.pixels.dim(3);
        std::vector<int> labels(pick.size());
        for (size_t i = 0; i < pick.size(); ++i) {
          std::copy_n(s.pixels.ptr() + pick[i] * per, per,
                      batch.ptr() + static_cast<int64_t>(i) * per);
          labels[i] = s.labels[static_cast<size_t>(pick[i])];
        }
        train_step(m, opt, augment_values(batch, cfg.augment_policy, rng()), labels);
      }
    }
    res.per_run.push_back(test_accuracy(m, real_test, seen_classes));
  }

  if (s.checksum() != before) throw Error("eval-mutated-input", "synthetic set changed");
  res.mean = std::accumulate(res.per_run.begin(), res.per_run.end(), 0.0) /
             static_cast<double>(res.per_run.size());
  double var = 0.0;
  for (double a : res.per_run) var += (a - res.mean) * (a - res.mean);
  res.stddev = res.per_run.size() > 1
                   ? std::sqrt(var / static_cast<double>(res.per_run.size() - 1))
                   : 0.0;
  res.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::vector<EvalResult> cross_arch_eval(const SyntheticSet& s, const std::vector<ModelSpec>& archs,
                                        const LabeledDataset& real_test, const EvalConfig& cfg) {
  std::vector<EvalResult> out;
  for (const ModelSpec& a : archs) {
    EvalConfig c = cfg;
    c.arch = a;
    out.push_back(train_on_synthetic(s, real_test, c));
  }
  return out;
}

LabeledDataset subset_classes(const LabeledDataset& ds, const std::vector<int>& classes) {
  std::vector<int> pick;
  for (int c : classes) {
    const auto& cls = ds.class_index.at(static_cast<size_t>(c));
    pick.insert(pick.end(), cls.begin(), cls.end());
  }
  LabeledDataset out;
  out.images = ds.gather(pick);
  out.labels = ds.gather_labels(pick);
  out.name = ds.name;
  out.norm_stats = ds.norm_stats;
  out.num_classes = ds.num_classes;
  out.class_index.assign(static_cast<size_t>(ds.num_classes), {});
  for (size_t i = 0; i < out.labels.size(); ++i)
    out.class_index[static_cast<size_t>(out.labels[i])].push_back(static_cast<int>(i));
  return out;
}

ContinualResult continual_eval(const LabeledDataset& train, const LabeledDataset& test, int steps,
                               int classes_per_step, DistillConfig dcfg, EvalConfig ecfg) {
  if (steps * classes_per_step > train.num_classes)
    throw Error("bad-config", "steps x classes_per_step exceeds the class count");
  ContinualResult res;
  SyntheticSet memory;
  memory.ipc = dcfg.ipc;
  std::vector<int> seen;
  for (int k = 0; k < steps; ++k) {
    std::vector<int> arrived;
    for (int c = k * classes_per_step; c < (k + 1) * classes_per_step; ++c) arrived.push_back(c);
    DistillConfig step_cfg = dcfg;
    step_cfg.classes = arrived;
    step_cfg.seed = dcfg.seed + static_cast<uint32_t>(k) * 97u;
    if (!dcfg.run_dir.empty()) step_cfg.run_dir = dcfg.run_dir + "/step" + std::to_string(k);
    DistillResult dr = distill(train, step_cfg);
    res.step_memory.push_back(dr.syn);

    if (memory.pixels.numel() == 0) {
      memory.pixels = dr.syn.pixels;
      memory.labels = dr.syn.labels;
      memory.dataset_name = dr.syn.dataset_name;
      memory.norm_stats = dr.syn.norm_stats;
    } else {
      memory.pixels.shape[0] += dr.syn.pixels.dim(0);
      memory.pixels.data.insert(memory.pixels.data.end(), dr.syn.pixels.data.begin(),
                                dr.syn.pixels.data.end());
      memory.labels.insert(memory.labels.end(), dr.syn.labels.begin(), dr.syn.labels.end());
    }
    seen.insert(seen.end(), arrived.begin(), arrived.end());

    EvalConfig step_eval = ecfg;
    step_eval.seed = ecfg.seed + static_cast<uint32_t>(k) * 389u;
    EvalResult er = train_on_synthetic(memory, subset_classes(test, seen), step_eval);
    res.per_step.push_back(er.mean);
  }
  return res;
}

}  // namespace dd
