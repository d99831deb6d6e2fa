#include "dd/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dd/kernels.hpp"

namespace dd {

using nlohmann::json;

InnerUpdate parse_inner_update(const std::string& name) {
  if (name == "real_data") return InnerUpdate::real_data;
  if (name == "synthetic_data") return InnerUpdate::synthetic_data;
  if (name == "none") return InnerUpdate::none;
  throw Error("bad-config", "unknown inner-model-update " + name);
}
BatchSampling parse_sampling(const std::string& name) {
  if (name == "representative") return BatchSampling::representative;
  if (name == "random") return BatchSampling::random;
  throw Error("bad-config", "unknown sampling " + name);
}
SynInit parse_init(const std::string& name) {
  if (name == "cluster") return SynInit::cluster;
  if (name == "random") return SynInit::random;
  throw Error("bad-config", "unknown init " + name);
}

namespace {

std::string inner_update_name(InnerUpdate u) {
  switch (u) {
    case InnerUpdate::real_data: return "real_data";
    case InnerUpdate::synthetic_data: return "synthetic_data";
    default: return "none";
  }
}
std::string sampling_name(BatchSampling s) {
  return s == BatchSampling::representative ? "representative" : "random";
}
std::string init_name(SynInit i) { return i == SynInit::cluster ? "cluster" : "random"; }

json config_to_json(const DistillConfig& c) {
  json j;
  j["dataset"] = c.dataset;
  j["ipc"] = c.ipc;
  j["outer-iterations"] = c.outer_iterations;
  j["inner-loops"] = c.inner_loops;
  j["lr-img"] = c.lr_img;
  j["img-momentum"] = c.img_momentum;
  j["model-lr"] = c.model_lr;
  j["warmup-epochs"] = c.warmup_epochs;
  j["model-refresh"] = c.model_refresh;
  j["inner-model-update"] = inner_update_name(c.inner_model_update);
  j["sampling"] = sampling_name(c.sampling);
  j["init"] = init_name(c.init);
  j["seed"] = c.seed;
  j["checkpoint-every"] = c.checkpoint_every;
  j["model-batch"] = c.model_batch;
  j["classes"] = c.classes;
  j["run-dir"] = c.run_dir;
  j["sampler"] = {{"sub-clusters", c.sampler.sub_clusters},
                  {"per-cluster", c.sampler.per_cluster},
                  {"recluster-interval", c.sampler.recluster_interval},
                  {"kmeans-restarts", c.sampler.kmeans_restarts},
                  {"lloyd-max-iters", c.sampler.lloyd_max_iters},
                  {"rel-tol", c.sampler.rel_tol}};
  j["match"] = {{"metric", metric_name(c.match.metric)},
                {"lambda-feat", c.match.lambda_feat},
                {"mode", match_mode_name(c.match.mode)},
                {"augment", c.match.augment_policy}};
  j["model"] = {{"arch", arch_name(c.model.arch)},
                {"width", c.model.width},
                {"norm", norm_name(c.model.norm)}};
  return j;
}

std::vector<int> resolve_classes(const DistillConfig& cfg, int num_classes) {
  std::vector<int> ids = cfg.classes;
  if (ids.empty()) {
    ids.resize(static_cast<size_t>(num_classes));
    std::iota(ids.begin(), ids.end(), 0);
  }
  return ids;
}

void append_row(DistillState& st, std::chrono::steady_clock::time_point start, int64_t iteration,
                int inner_step, int class_id, const MatchLoss* loss, const std::string& event) {
  MetricRow r;
  r.iteration = iteration;
  r.inner_step = inner_step;
  r.class_id = class_id;
  if (loss) {
    r.grad_term = loss->grad_term;
    r.feat_term = loss->feat_term;
    r.total = loss->total;
  }
  r.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.event = event;
  st.log.rows.push_back(std::move(r));
}

std::chrono::steady_clock::time_point g_run_start;  // set by distill(); tests drive inner_step
                                                    // directly and tolerate the shared epoch

SyntheticSet init_synthetic(const LabeledDataset& ds, const DistillConfig& cfg,
                            const std::vector<int>& ids, const Model& m) {
  std::vector<int> chosen;
  std::mt19937 rng(cfg.seed * 2654435761u + 12345u);
  for (int c : ids) {
    const auto& cls = ds.class_index[static_cast<size_t>(c)];
    if (cfg.init == SynInit::cluster) {
      Tensor feats = embed_samples(m, ds, cls);
      ClusterState st = kmeans(feats, cfg.ipc, cfg.seed + static_cast<uint32_t>(c) * 131u,
                               cfg.sampler);
      SelectedBatch sel = nearest_to_center(st, feats, 1);
      for (int local : sel.indices) chosen.push_back(cls[static_cast<size_t>(local)]);
    } else {
      std::vector<int> shuffled = cls;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      chosen.insert(chosen.end(), shuffled.begin(), shuffled.begin() + cfg.ipc);
    }
  }
  SyntheticSet s;
  s.ipc = cfg.ipc;
  s.pixels = ds.gather(chosen);
  s.labels = ds.gather_labels(chosen);
  s.lr_img = cfg.lr_img;
  s.dataset_name = ds.name;
  s.norm_stats = ds.norm_stats;
  return s;
}

void model_update_step(DistillState& st, Sgd& opt, const std::vector<int>& ids) {
  const DistillConfig& cfg = st.cfg;
  if (cfg.inner_model_update == InnerUpdate::none) return;
  if (cfg.inner_model_update == InnerUpdate::synthetic_data) {
    train_step(st.model, opt, st.syn.pixels, st.syn.labels);
    return;
  }
  std::vector<int> pool;
  for (int c : ids) {
    const auto& cls = st.real->class_index[static_cast<size_t>(c)];
    pool.insert(pool.end(), cls.begin(), cls.end());
  }
  int batch = std::min<int>(cfg.model_batch, static_cast<int>(pool.size()));
  std::vector<int> pick;
  std::sample(pool.begin(), pool.end(), std::back_inserter(pick), batch, st.rng);
  train_step(st.model, opt, st.real->gather(pick), st.real->gather_labels(pick));
}

void save_checkpoint(const SyntheticSet& syn, const std::string& dir, int64_t iteration) {
  char name[64];
  std::snprintf(name, sizeof(name), "ckpt_%06lld.npz", static_cast<long long>(iteration));
  save_synthetic(syn, dir + "/" + name);
}

}  // namespace

void DistillConfig::validate() const {
  if (ipc <= 0 || outer_iterations <= 0 || inner_loops <= 0 || checkpoint_every <= 0 ||
      model_refresh <= 0 || model_batch <= 0)
    throw Error("bad-config", "counts must be positive");
  if (lr_img < 0 || model_lr < 0 || warmup_epochs < 0)
    throw Error("bad-config", "negative rate");
  if (match.lambda_feat < 0) throw Error("bad-config", "lambda-feat must be >= 0");
  if (sampler.sub_clusters <= 0 || sampler.per_cluster <= 0 || sampler.recluster_interval <= 0)
    throw Error("bad-config", "sampler counts must be positive");
}

io::CsvTable MetricLog::to_csv() const {
  io::CsvTable t;
  t.header = {"iteration", "inner_step", "class", "grad_term", "feat_term",
              "total",     "wallclock",  "event"};
  for (const MetricRow& r : rows) {
    char buf[64];
    std::vector<std::string> row;
    row.push_back(std::to_string(r.iteration));
    row.push_back(std::to_string(r.inner_step));
    row.push_back(std::to_string(r.class_id));
    auto num = [&buf](double v) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      return std::string(buf);
    };
    row.push_back(num(r.grad_term));
    row.push_back(num(r.feat_term));
    row.push_back(num(r.total));
    row.push_back(num(r.wallclock));
    row.push_back(r.event);
    t.rows.push_back(std::move(row));
  }
  return t;
}

MetricLog metric_log_from_csv(const io::CsvTable& t) {
  const char* cols[] = {"iteration", "inner_step", "class",     "grad_term",
                        "feat_term", "total",      "wallclock", "event"};
  int idx[8];
  for (int i = 0; i < 8; ++i) {
    idx[i] = t.column(cols[i]);
    if (idx[i] < 0) throw Error("log-schema-error", std::string("missing column ") + cols[i]);
  }
  MetricLog log;
  for (const auto& row : t.rows) {
    MetricRow r;
    r.iteration = std::stoll(row[static_cast<size_t>(idx[0])]);
    r.inner_step = std::stoi(row[static_cast<size_t>(idx[1])]);
    r.class_id = std::stoi(row[static_cast<size_t>(idx[2])]);
    r.grad_term = std::stod(row[static_cast<size_t>(idx[3])]);
    r.feat_term = std::stod(row[static_cast<size_t>(idx[4])]);
    r.total = std::stod(row[static_cast<size_t>(idx[5])]);
    r.wallclock = std::stod(row[static_cast<size_t>(idx[6])]);
    r.event = row[static_cast<size_t>(idx[7])];
    log.rows.push_back(std::move(r));
  }
  return log;
}

void warmup_model(Model& m, const LabeledDataset& ds, float model_lr, int batch, int epochs,
                  uint32_t seed) {
  Sgd opt;
  opt.lr = model_lr;
  opt.momentum = 0.5f;
  std::mt19937 rng(seed);
  std::vector<int> order(static_cast<size_t>(ds.count()));
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(batch));
      std::vector<int> pick(order.begin() + start, order.begin() + end);
      float loss = train_step(m, opt, ds.gather(pick), ds.gather_labels(pick));
      if (!std::isfinite(loss)) throw Error("warmup-diverged", "NaN loss during warmup");
    }
  }
}

MatchLoss inner_step(DistillState& st, int class_pos) {
  const DistillConfig& cfg = st.cfg;
  std::vector<int> ids = resolve_classes(cfg, st.real->num_classes);
  int class_id = ids[static_cast<size_t>(class_pos)];

  std::vector<int> batch_idx;
  if (cfg.sampling == BatchSampling::representative) {
    batch_idx = representative_batch(*st.real, class_id,
                                     st.clusters.states[static_cast<size_t>(class_id)],
                                     st.clusters.class_features[static_cast<size_t>(class_id)],
                                     cfg.sampler, st.iteration);
  } else {
    const auto& cls = st.real->class_index[static_cast<size_t>(class_id)];
    int n = std::min<int>(cfg.sampler.batch_size(), static_cast<int>(cls.size()));
    std::sample(cls.begin(), cls.end(), std::back_inserter(batch_idx), n, st.rng);
  }

  Tensor slice = st.syn.class_slice(class_pos);
  uint32_t shared_seed = st.rng();
  MatchLoss loss = bidirectional_loss(st.model, slice, st.real->gather(batch_idx), class_id,
                                      cfg.match, shared_seed);

  bool finite = std::isfinite(loss.total) && loss.pixel_grad.all_finite();
  if (finite) {
    int64_t off = st.syn.class_offset(class_pos) * slice.numel() / std::max<int64_t>(1, slice.dim(0));
    float* v = st.pixel_velocity.ptr() + off;
    float* p = st.syn.pixels.ptr() + off;
    const float* g = loss.pixel_grad.ptr();
    size_t n = static_cast<size_t>(slice.numel());
    kern::scale(cfg.img_momentum, v, n);
    kern::axpy(1.0f, g, v, n);
    kern::axpy(-cfg.lr_img, v, p, n);
  } else {
    loss.pixel_grad = Tensor(slice.shape);  // rolled back: no update applied
  }
  append_row(st, g_run_start, st.iteration, -1, class_id, &loss, finite ? "step" : "rollback");
  return loss;
}

DistillResult distill(const LabeledDataset& real, const DistillConfig& cfg_in) {
  DistillConfig cfg = cfg_in;
  cfg.validate();
  cfg.model.in_channels = static_cast<int>(real.channels());
  cfg.model.input_h = static_cast<int>(real.height());
  cfg.model.input_w = static_cast<int>(real.width());
  cfg.model.num_classes = real.num_classes;

  std::vector<int> ids = resolve_classes(cfg, real.num_classes);
  for (int c : ids) {
    int64_t size = static_cast<int64_t>(real.class_index[static_cast<size_t>(c)].size());
    if (cfg.ipc > size) throw Error("bad-config", "ipc exceeds class " + std::to_string(c));
    if (cfg.sampling == BatchSampling::representative && cfg.sampler.sub_clusters > size)
      throw Error("bad-config", "sub-clusters exceed class " + std::to_string(c));
  }

  bool artifacts = !cfg.run_dir.empty();
  if (artifacts) {
    std::filesystem::create_directories(cfg.run_dir);
    io::write_text_file(cfg.run_dir + "/config.json", distill_config_json(cfg));
  }

  DistillState st;
  st.cfg = cfg;
  st.real = &real;
  st.rng.seed(cfg.seed + 777u);
  g_run_start = std::chrono::steady_clock::now();

  st.model = build_model(cfg.model, cfg.seed);
  if (cfg.warmup_epochs > 0)
    warmup_model(st.model, real, cfg.model_lr, cfg.model_batch, cfg.warmup_epochs, cfg.seed);
  st.syn = init_synthetic(real, cfg, ids, st.model);
  st.syn.config_hash = config_hash(cfg);
  st.pixel_velocity = Tensor(st.syn.pixels.shape);

  std::string last_ckpt;
  try {
    Sgd model_opt;
    model_opt.lr = cfg.model_lr;
    model_opt.momentum = 0.5f;
    for (int64_t t = 0; t < cfg.outer_iterations; ++t) {
      st.iteration = t;
      if (t > 0 && t % cfg.model_refresh == 0) {
        st.model = build_model(cfg.model, cfg.seed + static_cast<uint32_t>(t) * 7919u);
        if (cfg.warmup_epochs > 0)
          warmup_model(st.model, real, cfg.model_lr, cfg.model_batch, cfg.warmup_epochs,
                       cfg.seed + static_cast<uint32_t>(t));
        model_opt = Sgd{};
        model_opt.lr = cfg.model_lr;
        model_opt.momentum = 0.5f;
        append_row(st, g_run_start, t, -1, -1, nullptr, "refresh");
      }
      if (cfg.sampling == BatchSampling::representative &&
          maybe_recluster(t, cfg.sampler, st.clusters, st.model, real, cfg.seed, ids))
        append_row(st, g_run_start, t, -1, -1, nullptr, "recluster");
      for (int s = 0; s < cfg.inner_loops; ++s) {
        for (size_t pos = 0; pos < ids.size(); ++pos) {
          MatchLoss loss = inner_step(st, static_cast<int>(pos));
          st.log.rows.back().inner_step = s;
          (void)loss;
        }
        model_update_step(st, model_opt, ids);
      }
      st.syn.iteration = t + 1;
      if (artifacts && (t + 1) % cfg.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "ckpt_%06lld.npz", static_cast<long long>(t + 1));
        last_ckpt = cfg.run_dir + "/" + name;
        save_checkpoint(st.syn, cfg.run_dir, t + 1);
        append_row(st, g_run_start, t + 1, -1, -1, nullptr, "checkpoint");
      }
    }
  } catch (const Error& e) {
    if (artifacts) io::write_csv(cfg.run_dir + "/metrics.csv", st.log.to_csv());
    throw Error(e.code(), std::string(e.what()) + "; last checkpoint: " +
                              (last_ckpt.empty() ? "<none>" : last_ckpt));
  }

  if (artifacts) {
    io::write_csv(cfg.run_dir + "/metrics.csv", st.log.to_csv());
    save_synthetic(st.syn, cfg.run_dir + "/synthetic.final.npz");
  }
  return {std::move(st.syn), std::move(st.log)};
}

std::string distill_config_json(const DistillConfig& cfg) { return config_to_json(cfg).dump(2); }

DistillConfig distill_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("bad-config", e.what());
  }
  DistillConfig c;
  try {
    if (j.contains("dataset")) c.dataset = j["dataset"];
    if (j.contains("ipc")) c.ipc = j["ipc"];
    if (j.contains("outer-iterations")) c.outer_iterations = j["outer-iterations"];
    if (j.contains("inner-loops")) c.inner_loops = j["inner-loops"];
    if (j.contains("lr-img")) c.lr_img = j["lr-img"];
    if (j.contains("img-momentum")) c.img_momentum = j["img-momentum"];
    if (j.contains("model-lr")) c.model_lr = j["model-lr"];
    if (j.contains("warmup-epochs")) c.warmup_epochs = j["warmup-epochs"];
    if (j.contains("model-refresh")) c.model_refresh = j["model-refresh"];
    if (j.contains("inner-model-update")) c.inner_model_update = parse_inner_update(j["inner-model-update"]);
    if (j.contains("sampling")) c.sampling = parse_sampling(j["sampling"]);
    if (j.contains("init")) c.init = parse_init(j["init"]);
    if (j.contains("seed")) c.seed = j["seed"];
    if (j.contains("checkpoint-every")) c.checkpoint_every = j["checkpoint-every"];
    if (j.contains("model-batch")) c.model_batch = j["model-batch"];
    if (j.contains("classes")) c.classes = j["classes"].get<std::vector<int>>();
    if (j.contains("run-dir")) c.run_dir = j["run-dir"];
    if (j.contains("sampler")) {
      const json& s = j["sampler"];
      if (s.contains("sub-clusters")) c.sampler.sub_clusters = s["sub-clusters"];
      if (s.contains("per-cluster")) c.sampler.per_cluster = s["per-cluster"];
      if (s.contains("recluster-interval")) c.sampler.recluster_interval = s["recluster-interval"];
      if (s.contains("kmeans-restarts")) c.sampler.kmeans_restarts = s["kmeans-restarts"];
      if (s.contains("lloyd-max-iters")) c.sampler.lloyd_max_iters = s["lloyd-max-iters"];
      if (s.contains("rel-tol")) c.sampler.rel_tol = s["rel-tol"];
    }
    if (j.contains("match")) {
      const json& mt = j["match"];
      if (mt.contains("metric")) c.match.metric = parse_metric(mt["metric"]);
      if (mt.contains("lambda-feat")) c.match.lambda_feat = mt["lambda-feat"];
      if (mt.contains("mode")) c.match.mode = parse_match_mode(mt["mode"]);
      if (mt.contains("augment"))
        c.match.augment_policy = mt["augment"].get<std::vector<std::string>>();
    }
    if (j.contains("model")) {
      const json& md = j["model"];
      if (md.contains("arch")) c.model.arch = parse_arch(md["arch"]);
      if (md.contains("width")) c.model.width = md["width"];
      if (md.contains("norm")) c.model.norm = parse_norm(md["norm"]);
    }
  } catch (const json::exception& e) {
    throw Error("bad-config", e.what());
  }
  return c;
}

std::string config_hash(const DistillConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("run-dir");
  std::string s = j.dump();
  uint64_t h = 1469598103934665603ULL;
  for (char ch : s) h = (h ^ static_cast<uint8_t>(ch)) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dd
