// Acceptance harness: `acceptance <criterion 1-10> <workdir>` prints one
// "criterion N: PASS/FAIL" line and exits 0/1. Expensive distillation runs
// and evaluations are cached under <workdir> so criteria sharing a
// configuration reuse each other's artifacts.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dd/diag.hpp"
#include "dd/distill.hpp"
#include "dd/eval.hpp"
#include "dd/kernels.hpp"
#include "dd/matching.hpp"

using namespace dd;
using nlohmann::json;

namespace {

std::string g_workdir;

LabeledDataset& mnist_train() {
  static LabeledDataset ds = load_dataset("mnist", Split::train);
  return ds;
}
LabeledDataset& mnist_test() {
  static LabeledDataset ds = load_dataset("mnist", Split::test);
  return ds;
}

ModelSpec desk_model() {
  ModelSpec spec;
  spec.arch = Arch::convnet3;
  spec.width = 32;
  spec.norm = Norm::instance;
  spec.in_channels = 1;
  spec.input_h = 28;
  spec.input_w = 28;
  spec.num_classes = 10;
  return spec;
}

DistillConfig desk_config(uint32_t seed, BatchSampling sampling, MatchMode mode, int ipc,
                          int64_t outer, int inner, int iint) {
  DistillConfig c;
  c.dataset = "mnist";
  c.ipc = ipc;
  c.outer_iterations = outer;
  c.inner_loops = inner;
  c.sampler.sub_clusters = 32;
  c.sampler.per_cluster = 1;
  c.sampler.recluster_interval = iint;
  c.match.metric = Metric::mse;
  c.match.mode = mode;
  c.match.lambda_feat = 1.0f;
  c.match.augment_policy = {"crop", "scale", "rotate"};
  c.lr_img = 20.0f;
  c.img_momentum = 0.5f;
  c.model_lr = 0.01f;
  c.warmup_epochs = 1;
  c.model_refresh = 10;
  c.checkpoint_every = 20;
  c.model_batch = 128;
  c.sampling = sampling;
  c.init = sampling == BatchSampling::representative ? SynInit::cluster : SynInit::random;
  c.model = desk_model();
  c.model.width = 16;  // distillation model; evaluation uses the width-32 spec
  c.seed = seed;
  return c;
}

DistillResult cached_distill(const std::string& name, DistillConfig cfg) {
  cfg.run_dir = g_workdir + "/" + name;
  std::string final_path = cfg.run_dir + "/synthetic.final.npz";
  if (std::filesystem::exists(final_path)) {
    SyntheticSet s = load_synthetic(final_path);
    if (s.config_hash == config_hash(cfg)) {
      DistillResult r;
      r.syn = std::move(s);
      r.log = metric_log_from_csv(io::read_csv(cfg.run_dir + "/metrics.csv"));
      return r;
    }
  }
  std::filesystem::remove_all(cfg.run_dir);
  return distill(mnist_train(), cfg);
}

EvalConfig desk_eval(uint32_t seed, int runs = 1, int epochs = 800) {
  EvalConfig e;
  e.arch = desk_model();
  e.epochs = epochs;
  e.lr = 0.03f;
  e.momentum = 0.9f;
  e.runs = runs;
  e.batch = 64;
  e.augment_policy = {"crop", "scale", "rotate"};  // digits: no horizontal flips
  e.seed = seed;
  return e;
}

// Mean top-1 with a JSON cache keyed by (name, synthetic checksum, eval seed).
double cached_eval(const std::string& name, const SyntheticSet& s, const EvalConfig& cfg) {
  std::string cache_path = g_workdir + "/eval_cache.json";
  char keybuf[256];
  std::snprintf(keybuf, sizeof(keybuf), "%s:%016llx:%u:%d:%d", name.c_str(),
                static_cast<unsigned long long>(s.checksum()), cfg.seed, cfg.runs, cfg.epochs);
  std::string key = keybuf;
  json cache = json::object();
  if (std::filesystem::exists(cache_path)) {
    try {
      cache = json::parse(io::read_text_file(cache_path));
    } catch (...) {
      cache = json::object();
    }
  }
  if (cache.contains(key)) return cache[key].get<double>();
  double mean = train_on_synthetic(s, mnist_test(), cfg).mean;
  cache[key] = mean;
  io::write_text_file(cache_path, cache.dump(1));
  return mean;
}

Model warm_probe(uint32_t seed) {
  Model m = build_model(desk_model(), seed);
  warmup_model(m, mnist_train(), 0.01f, 128, 1, seed);
  return m;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}
double stdev_of(const std::vector<double>& v) {
  double m = mean_of(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// P(Binomial(n, 1/2) >= wins), the one-sided paired sign test.
double sign_test_p(int wins, int n) {
  double p = 0, total = std::pow(2.0, n);
  auto choose = [](int n2, int k) {
    double c = 1;
    for (int i = 0; i < k; ++i) c = c * (n2 - i) / (i + 1);
    return c;
  };
  for (int k = wins; k <= n; ++k) p += choose(n, k) / total;
  return p;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1. Correctness suite: exact small examples plus finite-difference checks.
// ---------------------------------------------------------------------------

Tensor random_tensor(std::vector<int64_t> shape, uint32_t seed, float lo, float hi) {
  Tensor t(std::move(shape));
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

Model tiny_mlp(uint32_t seed) {
  ModelSpec spec;
  spec.arch = Arch::mlp;
  spec.width = 6;
  spec.norm = Norm::instance;
  spec.in_channels = 1;
  spec.input_h = 2;
  spec.input_w = 2;
  spec.num_classes = 3;
  return build_model(spec, seed);
}

// Relative error of the directional derivative along the analytic gradient.
double directional_fd_error(const Tensor& analytic_grad,
                            const std::function<double(const Tensor&)>& f, const Tensor& x0) {
  double norm = 0;
  for (float g : analytic_grad.data) norm += static_cast<double>(g) * g;
  norm = std::sqrt(norm);
  if (norm == 0) return 1.0;
  const double eps = 1e-4;
  Tensor up = x0, down = x0;
  for (int64_t i = 0; i < x0.numel(); ++i) {
    float step = static_cast<float>(eps * analytic_grad.at(i) / norm);
    up.at(i) += step;
    down.at(i) -= step;
  }
  double fd = (f(up) - f(down)) / (2 * eps);
  return std::fabs(fd - norm) / std::max(std::fabs(norm), 1e-12);
}

Outcome criterion1() {
  std::ostringstream detail;
  bool ok = true;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  };

  // exact examples
  {
    Tensor gs({2}), gt({2});
    gs.data = {1, 2};
    gt.data = {0, 0};
    GradList a, b;
    a.grads = {ad::constant(gs)};
    a.names = {"w"};
    b.grads = {ad::constant(gt)};
    b.names = {"w"};
    expect(gradient_distance(a, b, Metric::mae).first->value.at(0) == 1.5f, "mae 1.5");
    expect(gradient_distance(a, b, Metric::mse).first->value.at(0) == 2.5f, "mse 2.5");
    Tensor ma({1, 2}), mb({1, 2});
    ma.data = {1, 0};
    mb.data = {0, 1};
    expect(distribution_distance(ad::constant(ma), ad::constant(mb))->value.at(0) == 2.0f,
           "dist 2");
    Tensor za({1, 2}), zb({1, 2});
    za.data = {0, 0};
    zb.data = {3, 4};
    expect(mmd(za, zb, MmdKernel::linear) == 25.0, "mmd 25");
    expect(build_model(ModelSpec{}, 0).param_count() == 300810, "param count 300810");
  }

  // finite differences, eps 1e-4, relative error < 1e-3
  double worst = 0;
  {
    // diff_augment
    Tensor x = random_tensor({3, 1, 8, 8}, 1, 0.2f, 1.0f);
    Tensor w = random_tensor({3, 1, 8, 8}, 2, -1.0f, 1.0f);
    std::vector<std::string> policy = {"crop", "scale", "rotate", "color", "cutout"};
    ad::Var leaf = ad::leaf(x);
    ad::Var s = ad::sum_all(ad::mulc(diff_augment(leaf, policy, 17), w));
    Tensor g = ad::grad(s, {leaf})[0]->value;
    auto f = [&](const Tensor& t) {
      Tensor out = diff_augment(ad::constant(t), policy, 17)->value;
      double acc = 0;
      for (int64_t i = 0; i < out.numel(); ++i)
        acc += static_cast<double>(out.at(i)) * w.at(i);
      return acc;
    };
    double err = directional_fd_error(g, f, x);
    worst = std::max(worst, err);
    expect(err < 1e-3, "diff_augment fd");
  }
  {
    // forward_embed (through the graph forward)
    Model m = tiny_mlp(4);
    Tensor x = random_tensor({3, 1, 2, 2}, 5, -1.0f, 1.0f);
    Tensor w = random_tensor({3, 6}, 6, -1.0f, 1.0f);
    ad::Var leaf = ad::leaf(x);
    GraphModel gm = model_forward(m, leaf, false);
    Tensor g = ad::grad(ad::sum_all(ad::mulc(gm.embed, w)), {leaf})[0]->value;
    auto f = [&](const Tensor& t) {
      FeatureBundle fb = forward_embed(m, t);
      double acc = 0;
      for (int64_t i = 0; i < fb.embeddings.numel(); ++i)
        acc += static_cast<double>(fb.embeddings.at(i)) * w.at(i);
      return acc;
    };
    double err = directional_fd_error(g, f, x);
    worst = std::max(worst, err);
    expect(err < 1e-3, "forward_embed fd");
  }
  {
    // bidirectional_loss pixel gradient
    Model m = tiny_mlp(7);
    Tensor syn = random_tensor({2, 1, 2, 2}, 8, 0.2f, 1.0f);
    Tensor real = random_tensor({4, 1, 2, 2}, 9, -1.0f, 1.0f);
    MatchConfig cfg;
    cfg.metric = Metric::mse;
    cfg.mode = MatchMode::bidirectional;
    cfg.lambda_feat = 1.0f;
    MatchLoss loss = bidirectional_loss(m, syn, real, 1, cfg, 3);
    auto f = [&](const Tensor& t) {
      return static_cast<double>(bidirectional_loss(m, t, real, 1, cfg, 3).total);
    };
    double err = directional_fd_error(loss.pixel_grad, f, syn);
    worst = std::max(worst, err);
    expect(err < 1e-3, "bidirectional_loss fd");
  }

  Outcome o;
  o.pass = ok;
  std::ostringstream msg;
  msg << "exact examples and finite differences (worst rel err " << worst << ")" << detail.str();
  o.detail = msg.str();
  return o;
}

// ---------------------------------------------------------------------------
// 2. k-means vs exhaustive brute force.
// ---------------------------------------------------------------------------

double brute_force_objective(const Tensor& features, int k) {
  int64_t n = features.dim(0), d = features.dim(1);
  int64_t total = 1;
  for (int64_t i = 0; i < n; ++i) total *= k;
  double best = std::numeric_limits<double>::max();
  std::vector<int> assign(static_cast<size_t>(n));
  for (int64_t code = 0; code < total; ++code) {
    int64_t c = code;
    for (int64_t i = 0; i < n; ++i) {
      assign[static_cast<size_t>(i)] = static_cast<int>(c % k);
      c /= k;
    }
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (int a : assign) counts[static_cast<size_t>(a)]++;
    if (std::find(counts.begin(), counts.end(), 0) != counts.end()) continue;
    std::vector<double> centers(static_cast<size_t>(k * d), 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j)
        centers[static_cast<size_t>(assign[static_cast<size_t>(i)] * d + j)] +=
            static_cast<double>(features.at(i * d + j));
    for (int c2 = 0; c2 < k; ++c2)
      for (int64_t j = 0; j < d; ++j)
        centers[static_cast<size_t>(c2 * d + j)] /=
            static_cast<double>(counts[static_cast<size_t>(c2)]);
    double obj = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) {
        double diff = static_cast<double>(features.at(i * d + j)) -
                      centers[static_cast<size_t>(assign[static_cast<size_t>(i)] * d + j)];
        obj += diff * diff;
      }
    best = std::min(best, obj);
  }
  return best;
}

Outcome criterion2() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(2024);
  std::uniform_real_distribution<float> coord(-3.0f, 3.0f);
  SamplerConfig cfg;
  cfg.kmeans_restarts = 8;
  int passed = 0;
  const int trials = 24;
  double worst = 0;
  for (int trial = 0; trial < trials; ++trial) {
    int n = 4 + static_cast<int>(rng() % 5);
    int k = 2 + static_cast<int>(rng() % 2);
    int d = 1 + static_cast<int>(rng() % 2);
    Tensor pts({n, d});
    for (auto& v : pts.data) v = coord(rng);
    ClusterState st = kmeans(pts, k, static_cast<uint32_t>(trial * 31 + 5), cfg);
    double want = brute_force_objective(pts, k);
    double gap = std::fabs(st.objective - want);
    worst = std::max(worst, gap);
    if (gap <= 1e-9 + 1e-9 * want) ++passed;
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = passed == trials && secs < 10.0;
  std::ostringstream msg;
  msg << passed << "/" << trials << " instances within 1e-9 (worst gap " << worst << "), "
      << secs << " s";
  o.detail = msg.str();
  return o;
}

// ---------------------------------------------------------------------------
// 3. Representative batches: lower MMD on average, tighter gradient norms.
// ---------------------------------------------------------------------------

// Per-sample gradient norm of the classifier layer: ||embedding|| * ||softmax - onehot||.
// Exact for the output layer and the standard per-sample proxy; the full-network
// norm buries the sample-dependent factor under width-dependent conv-layer noise.
std::vector<double> classifier_grad_norms(const FeatureBundle& fb, int label) {
  int64_t d = fb.embeddings.dim(1), k = fb.logits.dim(1);
  std::vector<double> norms;
  norms.reserve(static_cast<size_t>(fb.logits.dim(0)));
  for (int64_t i = 0; i < fb.logits.dim(0); ++i) {
    const float* h = fb.embeddings.ptr() + i * d;
    const float* z = fb.logits.ptr() + i * k;
    double mx = *std::max_element(z, z + k), sum = 0;
    std::vector<double> p(static_cast<size_t>(k));
    for (int64_t j = 0; j < k; ++j) {
      p[static_cast<size_t>(j)] = std::exp(z[j] - mx);
      sum += p[static_cast<size_t>(j)];
    }
    double e2 = 0;
    for (int64_t j = 0; j < k; ++j) {
      double pj = p[static_cast<size_t>(j)] / sum - (j == label ? 1.0 : 0.0);
      e2 += pj * pj;
    }
    double h2 = 0;
    for (int64_t j = 0; j < d; ++j) h2 += static_cast<double>(h[j]) * h[j];
    norms.push_back(std::sqrt(h2 * e2));
  }
  return norms;
}

Outcome criterion3() {
  auto t0 = std::chrono::steady_clock::now();
  const LabeledDataset& ds = mnist_train();
  Model probe = warm_probe(404);

  // The paper-shaped batch: N sub-clusters, n nearest samples per center.
  SamplerConfig scfg;
  scfg.sub_clusters = 8;
  scfg.per_cluster = 8;
  scfg.kmeans_restarts = 4;

  const int pairs_per_class = 100;
  double mmd_rep_sum = 0, mmd_rand_sum = 0;
  int std_wins = 0, total_pairs = 0;

  for (int c = 0; c < ds.num_classes; ++c) {
    const std::vector<int>& cls = ds.class_index[static_cast<size_t>(c)];
    FeatureBundle fb = forward_embed(probe, ds.gather(cls));
    const Tensor& feats = fb.embeddings;
    // per-sample gradient norms are batch-independent: compute once per class
    std::vector<double> norms = classifier_grad_norms(fb, c);

    int64_t d = feats.dim(1);
    auto batch_rows = [&](const std::vector<int>& local) {
      Tensor t({static_cast<int64_t>(local.size()), d});
      for (size_t i = 0; i < local.size(); ++i)
        std::copy_n(feats.ptr() + static_cast<int64_t>(local[i]) * d, d,
                    t.ptr() + static_cast<int64_t>(i) * d);
      return t;
    };
    auto norm_std = [&](const std::vector<int>& local) {
      std::vector<double> v;
      for (int i : local) v.push_back(norms[static_cast<size_t>(i)]);
      return stdev_of(v);
    };

    std::mt19937 rng(9000 + static_cast<uint32_t>(c));
    std::vector<int> all(cls.size());
    std::iota(all.begin(), all.end(), 0);
    for (int p = 0; p < pairs_per_class; ++p) {
      ClusterState st =
          kmeans(feats, scfg.sub_clusters, static_cast<uint32_t>(c * 1009 + p * 7 + 1), scfg);
      std::vector<int> rep = nearest_to_center(st, feats, scfg.per_cluster).indices;
      std::vector<int> rnd;
      std::sample(all.begin(), all.end(), std::back_inserter(rnd), rep.size(), rng);

      mmd_rep_sum += mmd(batch_rows(rep), feats, MmdKernel::linear);
      mmd_rand_sum += mmd(batch_rows(rnd), feats, MmdKernel::linear);
      if (norm_std(rep) < norm_std(rnd)) ++std_wins;
      ++total_pairs;
    }
  }

  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double win_frac = static_cast<double>(std_wins) / total_pairs;
  bool mmd_ok = mmd_rep_sum < mmd_rand_sum;
  Outcome o;
  o.pass = mmd_ok && win_frac >= 0.8 && secs < 600.0;
  std::ostringstream msg;
  msg << "mean linear MMD rep " << mmd_rep_sum / total_pairs << " vs rand "
      << mmd_rand_sum / total_pairs << "; grad-norm-std wins " << 100.0 * win_frac << "%; "
      << secs << " s";
  o.detail = msg.str();
  return o;
}

// ---------------------------------------------------------------------------
// 4. Cluster init beats random init at iteration 0.
// ---------------------------------------------------------------------------

Outcome criterion4() {
  auto t0 = std::chrono::steady_clock::now();
  const LabeledDataset& ds = mnist_train();
  const int seeds = 5;
  std::vector<double> diffs;
  int wins = 0;
  for (int s = 0; s < seeds; ++s) {
    Model probe = warm_probe(700 + static_cast<uint32_t>(s));
    SyntheticSet clustered = cluster_init_synthetic(ds, 10, probe, 700 + static_cast<uint32_t>(s));
    SyntheticSet random = init_synthetic_random(ds, 10, 700 + static_cast<uint32_t>(s));
    EvalConfig ecfg = desk_eval(100 + static_cast<uint32_t>(s), 1, 800);
    double a = cached_eval("c4_cluster_s" + std::to_string(s), clustered, ecfg);
    double b = cached_eval("c4_random_s" + std::to_string(s), random, ecfg);
    diffs.push_back(a - b);
    if (a > b) ++wins;
  }
  double p = sign_test_p(wins, seeds);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = mean_of(diffs) > 0 && p < 0.1;
  std::ostringstream msg;
  msg << "mean improvement " << mean_of(diffs) << " points, " << wins << "/" << seeds
      << " wins, sign-test p " << p << ", " << secs << " s";
  o.detail = msg.str();
  return o;
}

// ---------------------------------------------------------------------------
// Shared desk runs for criteria 5/6/7/10.
// ---------------------------------------------------------------------------

DistillResult run5_rep(int seed) {
  return cached_distill("c5_rep_s" + std::to_string(seed),
                        desk_config(1000 + static_cast<uint32_t>(seed),
                                    BatchSampling::representative, MatchMode::bidirectional, 10,
                                    200, 10, 10));
}
DistillResult run5_rand(int seed) {
  return cached_distill("c5_rand_s" + std::to_string(seed),
                        desk_config(1000 + static_cast<uint32_t>(seed), BatchSampling::random,
                                    MatchMode::gradient_only, 10, 200, 10, 10));
}

Outcome criterion5() {
  const int seeds = 3;
  int wins = 0;
  std::ostringstream msg;
  for (int s = 0; s < seeds; ++s) {
    DistillResult rep = run5_rep(s);
    DistillResult rnd = run5_rand(s);
    EvalConfig ecfg = desk_eval(300 + static_cast<uint32_t>(s), 1, 800);
    double target = cached_eval("c5_rand_final_s" + std::to_string(s), rnd.syn, ecfg);
    int64_t hit = -1;
    std::string dir = g_workdir + "/c5_rep_s" + std::to_string(s);
    for (int64_t it = 20; it <= 100; it += 20) {
      char name[64];
      std::snprintf(name, sizeof(name), "/ckpt_%06lld.npz", static_cast<long long>(it));
      SyntheticSet ck = load_synthetic(dir + name);
      double acc = cached_eval("c5_rep_it" + std::to_string(it) + "_s" + std::to_string(s),
                               ck, ecfg);
      if (acc >= target) {
        hit = it;
        break;
      }
    }
    bool win = hit > 0;  // matched within <= 50% of the 200-iteration budget
    wins += win;
    msg << "seed " << s << ": baseline " << target << "% matched at iter "
        << (hit > 0 ? std::to_string(hit) : std::string(">100")) << "; ";
  }
  Outcome o;
  o.pass = wins * 2 > seeds;
  msg << wins << "/" << seeds << " seeds within half the budget";
  o.detail = msg.str();
  return o;
}

Outcome criterion6() {
  std::vector<double> finals;
  for (int s = 0; s < 3; ++s) {
    DistillResult rep = run5_rep(s);
    finals.push_back(cached_eval("c5_rep_final_s" + std::to_string(s), rep.syn,
                                 desk_eval(300 + static_cast<uint32_t>(s), 1, 800)));
  }
  double ipc10 = mean_of(finals);

  DistillResult one = cached_distill(
      "c6_ipc1_s0", desk_config(2000, BatchSampling::representative, MatchMode::bidirectional, 1,
                                200, 10, 10));
  double ipc1 = cached_eval("c6_ipc1_final", one.syn, desk_eval(350, 3, 800));

  Outcome o;
  o.pass = ipc10 >= 90.0 && ipc1 >= 80.0;
  std::ostringstream msg;
  msg << "ipc=10 top-1 " << ipc10 << "% (gate 90), ipc=1 top-1 " << ipc1 << "% (gate 80)";
  o.detail = msg.str();
  return o;
}

Outcome criterion7() {
  DistillResult rep = run5_rep(0);
  const auto& rows = rep.log.rows;
  std::vector<double> recluster_durs;
  // per (iteration, inner_step) sweep durations from consecutive wallclocks
  std::vector<double> sweep_durs;
  double sweep_acc = 0;
  int64_t cur_it = -1;
  int cur_sweep = -1;
  for (size_t i = 1; i < rows.size(); ++i) {
    double dt = rows[i].wallclock - rows[i - 1].wallclock;
    if (rows[i].event == "recluster") {
      recluster_durs.push_back(dt);
    } else if (rows[i].event == "step") {
      if (rows[i].iteration != cur_it || rows[i].inner_step != cur_sweep) {
        if (cur_sweep >= 0) sweep_durs.push_back(sweep_acc);
        sweep_acc = 0;
        cur_it = rows[i].iteration;
        cur_sweep = rows[i].inner_step;
      }
      sweep_acc += dt;
    }
  }
  if (cur_sweep >= 0) sweep_durs.push_back(sweep_acc);

  double mean_recluster = mean_of(recluster_durs);
  double mean_sweep = mean_of(sweep_durs);
  int iint = 10;
  double amortized = mean_recluster / iint;  // one recluster per I_int outer iterations
  Outcome o;
  o.pass = !recluster_durs.empty() && !sweep_durs.empty() && amortized <= 0.6 * mean_sweep;
  std::ostringstream msg;
  msg << "amortized recluster " << amortized << " s/iter vs mean sweep " << mean_sweep
      << " s (bound " << 0.6 * mean_sweep << ")";
  o.detail = msg.str();
  return o;
}

// ---------------------------------------------------------------------------
// 8. Clustering-interval insensitivity (reduced desk budget).
// ---------------------------------------------------------------------------

Outcome criterion8() {
  std::vector<int> intervals = {5, 10, 20};
  std::vector<double> means;
  std::ostringstream msg;
  for (int iint : intervals) {
    std::vector<double> accs;
    for (int s = 0; s < 3; ++s) {
      DistillConfig cfg = desk_config(3000 + static_cast<uint32_t>(s),
                                      BatchSampling::representative, MatchMode::bidirectional, 10,
                                      100, 10, iint);
      DistillResult r = cached_distill(
          "c8_i" + std::to_string(iint) + "_s" + std::to_string(s), cfg);
      accs.push_back(cached_eval("c8_i" + std::to_string(iint) + "_s" + std::to_string(s),
                                 r.syn, desk_eval(500 + static_cast<uint32_t>(s), 1, 800)));
    }
    means.push_back(mean_of(accs));
    msg << "I_int=" << iint << ": " << means.back() << "%; ";
  }
  double spread = *std::max_element(means.begin(), means.end()) -
                  *std::min_element(means.begin(), means.end());
  Outcome o;
  o.pass = spread <= 1.5;
  msg << "spread " << spread << " points";
  o.detail = msg.str();
  return o;
}

// ---------------------------------------------------------------------------
// 9. Continual rehearsal: representative memory >= random memory.
// ---------------------------------------------------------------------------

double continual_final(const std::string& name, BatchSampling sampling, MatchMode mode,
                       uint32_t seed) {
  std::string cache = g_workdir + "/" + name + ".json";
  if (std::filesystem::exists(cache)) {
    json j = json::parse(io::read_text_file(cache));
    return j["final"].get<double>();
  }
  DistillConfig dcfg = desk_config(seed, sampling, mode, 10, 30, 10, 10);
  dcfg.run_dir.clear();
  EvalConfig ecfg = desk_eval(seed + 7, 1, 300);
  ContinualResult r = continual_eval(mnist_train(), mnist_test(), 5, 2, dcfg, ecfg);
  json j;
  j["final"] = r.per_step.back();
  j["per-step"] = r.per_step;
  io::write_text_file(cache, j.dump(1));
  return r.per_step.back();
}

Outcome criterion9() {
  std::vector<double> rep, rnd;
  for (int s = 0; s < 3; ++s) {
    rep.push_back(continual_final("c9_rep_s" + std::to_string(s),
                                  BatchSampling::representative, MatchMode::bidirectional,
                                  4000 + static_cast<uint32_t>(s)));
    rnd.push_back(continual_final("c9_rand_s" + std::to_string(s), BatchSampling::random,
                                  MatchMode::gradient_only, 4000 + static_cast<uint32_t>(s)));
  }
  Outcome o;
  o.pass = mean_of(rep) >= mean_of(rnd);
  std::ostringstream msg;
  msg << "final-step top-1: representative " << mean_of(rep) << "% vs random " << mean_of(rnd)
      << "% (3 seeds)";
  o.detail = msg.str();
  return o;
}

// ---------------------------------------------------------------------------
// 10. Feature migration stabilizes and stays below the random baseline.
// ---------------------------------------------------------------------------

Outcome criterion10() {
  run5_rep(0);
  run5_rand(0);
  Model probe = warm_probe(606);
  DiagSeries rep = feature_migration(list_checkpoints(g_workdir + "/c5_rep_s0"), probe);
  DiagSeries rnd = feature_migration(list_checkpoints(g_workdir + "/c5_rand_s0"), probe);

  size_t half = rep.y.size() / 2;
  std::vector<double> early(rep.y.begin(), rep.y.begin() + static_cast<int64_t>(half));
  std::vector<double> late(rep.y.begin() + static_cast<int64_t>(half), rep.y.end());
  double rep_late = mean_of(late);
  size_t rhalf = rnd.y.size() / 2;
  std::vector<double> rnd_late(rnd.y.begin() + static_cast<int64_t>(rhalf), rnd.y.end());

  Outcome o;
  bool stabilizes = rep_late < mean_of(early);
  bool below = rep_late <= mean_of(rnd_late);
  o.pass = stabilizes && below;
  std::ostringstream msg;
  msg << "migration early " << mean_of(early) << " late " << rep_late
      << "; random-baseline late " << mean_of(rnd_late);
  o.detail = msg.str();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: acceptance <criterion 1-10> <workdir>\n");
    return 2;
  }
  int criterion = std::atoi(argv[1]);
  g_workdir = argv[2];
  std::filesystem::create_directories(g_workdir);

  Outcome o;
  try {
    switch (criterion) {
      case 1: o = criterion1(); break;
      case 2: o = criterion2(); break;
      case 3: o = criterion3(); break;
      case 4: o = criterion4(); break;
      case 5: o = criterion5(); break;
      case 6: o = criterion6(); break;
      case 7: o = criterion7(); break;
      case 8: o = criterion8(); break;
      case 9: o = criterion9(); break;
      case 10: o = criterion10(); break;
      default:
        std::fprintf(stderr, "unknown criterion %d\n", criterion);
        return 2;
    }
  } catch (const std::exception& e) {
    std::printf("criterion %d: FAIL — exception: %s\n", criterion, e.what());
    return 1;
  }
  std::printf("criterion %d: %s — %s\n", criterion, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  return o.pass ? 0 : 1;
}
