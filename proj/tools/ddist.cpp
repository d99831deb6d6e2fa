#include <cstdio>
#include <ctime>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dd/diag.hpp"
#include "dd/distill.hpp"
#include "dd/eval.hpp"
#include "dd/io.hpp"
#include "dd/matching.hpp"

using nlohmann::json;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t p = 0;
  while (p <= s.size()) {
    size_t q = s.find(',', p);
    if (q == std::string::npos) q = s.size();
    if (q > p) out.push_back(s.substr(p, q - p));
    p = q + 1;
  }
  return out;
}

dd::Model warm_probe(const dd::LabeledDataset& train, const std::string& arch, int width,
                     uint32_t seed) {
  dd::ModelSpec spec;
  spec.arch = dd::parse_arch(arch);
  spec.width = width;
  spec.in_channels = static_cast<int>(train.channels());
  spec.input_h = static_cast<int>(train.height());
  spec.input_w = static_cast<int>(train.width());
  spec.num_classes = train.num_classes;
  dd::Model m = dd::build_model(spec, seed);
  dd::warmup_model(m, train, 0.01f, 128, 1, seed);
  return m;
}

void write_eval_outputs(const std::vector<dd::EvalResult>& results, const std::string& out) {
  dd::io::CsvTable t;
  t.header = {"arch", "run", "top1"};
  json summary = json::array();
  for (const dd::EvalResult& r : results) {
    for (size_t i = 0; i < r.per_run.size(); ++i)
      t.rows.push_back({r.arch, std::to_string(i), std::to_string(r.per_run[i])});
    summary.push_back({{"arch", r.arch},
                       {"mean", r.mean},
                       {"std", r.stddev},
                       {"runs", r.per_run},
                       {"wallclock", r.wallclock}});
    std::printf("%s: %.2f +- %.2f (%zu runs)\n", r.arch.c_str(), r.mean, r.stddev,
                r.per_run.size());
  }
  dd::io::write_csv(out + ".csv", t);
  dd::io::write_text_file(out + ".json", summary.dump(2));
}

struct DistillFlags {
  std::string config_file;
  std::string dataset = "mnist";
  std::string metric, mode, sampling, init, inner_update, augment, arch, norm;
  int ipc = -1, inner = -1, width = -1, sub_clusters = -1, per_cluster = -1, interval = -1;
  int warmup = -1, refresh = -1, ckpt_every = -1, model_batch = -1;
  long long outer = -1;
  double lr_img = -1, lambda = -1, model_lr = -1, img_momentum = -1;
  long long seed = -1;
  std::string run_dir;
};

void add_distill_flags(CLI::App* cmd, DistillFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config file; flags override");
  cmd->add_option("--dataset", f.dataset);
  cmd->add_option("--ipc", f.ipc);
  cmd->add_option("--outer-iterations", f.outer);
  cmd->add_option("--inner-loops", f.inner);
  cmd->add_option("--lr-img", f.lr_img);
  cmd->add_option("--img-momentum", f.img_momentum);
  cmd->add_option("--model-lr", f.model_lr);
  cmd->add_option("--warmup-epochs", f.warmup);
  cmd->add_option("--model-refresh", f.refresh);
  cmd->add_option("--inner-model-update", f.inner_update);
  cmd->add_option("--sampling", f.sampling);
  cmd->add_option("--init", f.init);
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--checkpoint-every", f.ckpt_every);
  cmd->add_option("--model-batch", f.model_batch);
  cmd->add_option("--metric", f.metric);
  cmd->add_option("--lambda-feat", f.lambda);
  cmd->add_option("--mode", f.mode);
  cmd->add_option("--augment", f.augment, "comma-separated transform list");
  cmd->add_option("--arch", f.arch);
  cmd->add_option("--width", f.width);
  cmd->add_option("--norm", f.norm);
  cmd->add_option("--sub-clusters", f.sub_clusters);
  cmd->add_option("--per-cluster", f.per_cluster);
  cmd->add_option("--recluster-interval", f.interval);
  cmd->add_option("--run-dir", f.run_dir);
}

dd::DistillConfig build_distill_config(const DistillFlags& f) {
  dd::DistillConfig c;
  if (!f.config_file.empty())
    c = dd::distill_config_from_json(dd::io::read_text_file(f.config_file));
  else {
    c.match.metric = dd::default_metric(f.dataset);
    c.match.augment_policy = {"crop", "scale", "rotate"};
  }
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (f.ipc >= 0) c.ipc = f.ipc;
  if (f.outer >= 0) c.outer_iterations = f.outer;
  if (f.inner >= 0) c.inner_loops = f.inner;
  if (f.lr_img >= 0) c.lr_img = static_cast<float>(f.lr_img);
  if (f.img_momentum >= 0) c.img_momentum = static_cast<float>(f.img_momentum);
  if (f.model_lr >= 0) c.model_lr = static_cast<float>(f.model_lr);
  if (f.warmup >= 0) c.warmup_epochs = f.warmup;
  if (f.refresh >= 0) c.model_refresh = f.refresh;
  if (!f.inner_update.empty()) c.inner_model_update = dd::parse_inner_update(f.inner_update);
  if (!f.sampling.empty()) c.sampling = dd::parse_sampling(f.sampling);
  if (!f.init.empty()) c.init = dd::parse_init(f.init);
  if (f.seed >= 0) c.seed = static_cast<uint32_t>(f.seed);
  if (f.ckpt_every >= 0) c.checkpoint_every = f.ckpt_every;
  if (f.model_batch >= 0) c.model_batch = f.model_batch;
  if (!f.metric.empty()) c.match.metric = dd::parse_metric(f.metric);
  if (f.lambda >= 0) c.match.lambda_feat = static_cast<float>(f.lambda);
  if (!f.mode.empty()) c.match.mode = dd::parse_match_mode(f.mode);
  if (!f.augment.empty()) c.match.augment_policy = split_list(f.augment);
  if (!f.arch.empty()) c.model.arch = dd::parse_arch(f.arch);
  if (f.width >= 0) c.model.width = f.width;
  if (!f.norm.empty()) c.model.norm = dd::parse_norm(f.norm);
  if (f.sub_clusters >= 0) c.sampler.sub_clusters = f.sub_clusters;
  if (f.per_cluster >= 0) c.sampler.per_cluster = f.per_cluster;
  if (f.interval >= 0) c.sampler.recluster_interval = f.interval;
  if (!f.run_dir.empty()) c.run_dir = f.run_dir;
  if (c.run_dir.empty())
    c.run_dir = "runs/" + c.dataset + "-ipc" + std::to_string(c.ipc) + "-" +
                std::to_string(static_cast<long long>(std::time(nullptr)));
  return c;
}

int run(int argc, char** argv) {
  CLI::App app{"dataset distillation with representative bidirectional matching"};
  app.require_subcommand(1);

  // distill
  DistillFlags df;
  CLI::App* distill_cmd = app.add_subcommand("distill", "synthesize a distilled set");
  add_distill_flags(distill_cmd, df);

  // eval / cross-arch
  std::string ev_synth, ev_arch = "convnet-3", ev_archs = "convnet-3", ev_out = "eval";
  std::string ev_augment = "flip,crop";
  int ev_runs = 5, ev_epochs = 1000, ev_width = 128, ev_batch = 256;
  long long ev_seed = 0;
  double ev_lr = 0.01;
  CLI::App* eval_cmd = app.add_subcommand("eval", "train on a synthetic set, score on test");
  eval_cmd->add_option("--synthetic", ev_synth, "checkpoint (.npz)")->required();
  eval_cmd->add_option("--arch", ev_arch);
  eval_cmd->add_option("--width", ev_width);
  eval_cmd->add_option("--runs", ev_runs);
  eval_cmd->add_option("--epochs", ev_epochs);
  eval_cmd->add_option("--lr", ev_lr);
  eval_cmd->add_option("--augment", ev_augment);
  eval_cmd->add_option("--seed", ev_seed);
  eval_cmd->add_option("--batch", ev_batch);
  eval_cmd->add_option("--out", ev_out, "output prefix for csv/json");

  CLI::App* cross_cmd = app.add_subcommand("cross-arch", "evaluate one set on several archs");
  cross_cmd->add_option("--synthetic", ev_synth)->required();
  cross_cmd->add_option("--archs", ev_archs, "comma-separated arch list");
  cross_cmd->add_option("--width", ev_width);
  cross_cmd->add_option("--runs", ev_runs);
  cross_cmd->add_option("--epochs", ev_epochs);
  cross_cmd->add_option("--lr", ev_lr);
  cross_cmd->add_option("--augment", ev_augment);
  cross_cmd->add_option("--seed", ev_seed);
  cross_cmd->add_option("--batch", ev_batch);
  cross_cmd->add_option("--out", ev_out);

  // continual
  DistillFlags cf;
  int ct_steps = 5, ct_cps = 2, ct_runs = 1, ct_epochs = 300;
  std::string ct_out = "continual";
  CLI::App* cont_cmd = app.add_subcommand("continual", "class-incremental rehearsal harness");
  add_distill_flags(cont_cmd, cf);
  cont_cmd->add_option("--steps", ct_steps);
  cont_cmd->add_option("--classes-per-step", ct_cps);
  cont_cmd->add_option("--eval-runs", ct_runs);
  cont_cmd->add_option("--eval-epochs", ct_epochs);
  cont_cmd->add_option("--out", ct_out);

  // diag
  std::string dg_run, dg_dataset = "mnist", dg_kernel = "linear", dg_sampler = "representative";
  std::string dg_arch = "convnet-3", dg_out;
  int dg_class = 0, dg_width = 128, dg_sub = 128, dg_per = 1;
  long long dg_seed = 0;
  CLI::App* diag_cmd = app.add_subcommand("diag", "diagnostics over run artifacts");
  diag_cmd->require_subcommand(1);
  CLI::App* mmd_cmd = diag_cmd->add_subcommand("mmd", "per-checkpoint class MMD to real data");
  mmd_cmd->add_option("--run", dg_run)->required();
  mmd_cmd->add_option("--class", dg_class);
  mmd_cmd->add_option("--kernel", dg_kernel);
  CLI::App* gn_cmd = diag_cmd->add_subcommand("gradnorm", "per-sample gradient norm histogram");
  gn_cmd->add_option("--dataset", dg_dataset);
  gn_cmd->add_option("--class", dg_class);
  gn_cmd->add_option("--sampler", dg_sampler);
  gn_cmd->add_option("--sub-clusters", dg_sub);
  gn_cmd->add_option("--per-cluster", dg_per);
  CLI::App* mig_cmd = diag_cmd->add_subcommand("migration", "checkpoint feature migration");
  mig_cmd->add_option("--run", dg_run)->required();
  CLI::App* curves_cmd = diag_cmd->add_subcommand("curves", "grad/feat difference curves");
  curves_cmd->add_option("--run", dg_run)->required();
  for (CLI::App* c : {mmd_cmd, gn_cmd, mig_cmd, curves_cmd}) {
    c->add_option("--arch", dg_arch);
    c->add_option("--width", dg_width);
    c->add_option("--seed", dg_seed);
    c->add_option("--out", dg_out, "output csv path");
  }

  // export-embeddings
  std::string ex_dataset = "mnist", ex_split = "test", ex_synth, ex_arch = "convnet-3";
  std::string ex_out = "embeddings.csv";
  int ex_width = 128, ex_limit = 0;
  long long ex_seed = 0;
  CLI::App* ex_cmd = app.add_subcommand("export-embeddings", "embeddings as csv");
  ex_cmd->add_option("--dataset", ex_dataset);
  ex_cmd->add_option("--split", ex_split);
  ex_cmd->add_option("--synthetic", ex_synth, "embed a checkpoint instead of real data");
  ex_cmd->add_option("--arch", ex_arch);
  ex_cmd->add_option("--width", ex_width);
  ex_cmd->add_option("--seed", ex_seed);
  ex_cmd->add_option("--limit", ex_limit, "max rows (0 = all)");
  ex_cmd->add_option("--out", ex_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (distill_cmd->parsed()) {
    dd::DistillConfig cfg = build_distill_config(df);
    dd::LabeledDataset train = dd::load_dataset(cfg.dataset, dd::Split::train);
    dd::DistillResult res = dd::distill(train, cfg);
    std::printf("run dir: %s\nfinal checksum: %016llx\n", cfg.run_dir.c_str(),
                static_cast<unsigned long long>(res.syn.checksum()));
    return 0;
  }
  if (eval_cmd->parsed() || cross_cmd->parsed()) {
    dd::SyntheticSet s = dd::load_synthetic(ev_synth);
    dd::LabeledDataset test = dd::load_dataset(s.dataset_name, dd::Split::test);
    dd::EvalConfig cfg;
    cfg.runs = ev_runs;
    cfg.epochs = ev_epochs;
    cfg.lr = static_cast<float>(ev_lr);
    cfg.batch = ev_batch;
    cfg.seed = static_cast<uint32_t>(ev_seed);
    cfg.augment_policy = split_list(ev_augment);
    cfg.arch.width = ev_width;
    std::vector<dd::ModelSpec> archs;
    for (const std::string& a : split_list(eval_cmd->parsed() ? ev_arch : ev_archs)) {
      dd::ModelSpec spec = cfg.arch;
      spec.arch = dd::parse_arch(a);
      archs.push_back(spec);
    }
    write_eval_outputs(dd::cross_arch_eval(s, archs, test, cfg), ev_out);
    return 0;
  }
  if (cont_cmd->parsed()) {
    dd::DistillConfig dcfg = build_distill_config(cf);
    dd::LabeledDataset train = dd::load_dataset(dcfg.dataset, dd::Split::train);
    dd::LabeledDataset test = dd::load_dataset(dcfg.dataset, dd::Split::test);
    dd::EvalConfig ecfg;
    ecfg.runs = ct_runs;
    ecfg.epochs = ct_epochs;
    ecfg.arch = dcfg.model;
    dd::ContinualResult res = dd::continual_eval(train, test, ct_steps, ct_cps, dcfg, ecfg);
    dd::io::CsvTable t;
    t.header = {"step", "top1"};
    for (size_t i = 0; i < res.per_step.size(); ++i) {
      std::printf("step %zu: %.2f%%\n", i, res.per_step[i]);
      t.rows.push_back({std::to_string(i), std::to_string(res.per_step[i])});
    }
    dd::io::write_csv(ct_out + ".csv", t);
    return 0;
  }
  if (diag_cmd->parsed()) {
    dd::DiagSeries series;
    if (curves_cmd->parsed()) {
      dd::MetricLog log = dd::metric_log_from_csv(dd::io::read_csv(dg_run + "/metrics.csv"));
      auto [gs, fs] = dd::difference_curves(log);
      gs.provenance = fs.provenance = dg_run;
      std::string base = dg_out.empty() ? dg_run + "/curves" : dg_out;
      dd::io::write_csv(base + ".grad.csv", dd::series_to_csv(gs));
      dd::io::write_csv(base + ".feat.csv", dd::series_to_csv(fs));
      std::printf("wrote %s.grad.csv and %s.feat.csv\n", base.c_str(), base.c_str());
      return 0;
    }
    if (mmd_cmd->parsed() || mig_cmd->parsed()) {
      std::vector<std::string> ckpts = dd::list_checkpoints(dg_run);
      if (ckpts.empty()) throw dd::Error("insufficient-checkpoints", "no checkpoints in " + dg_run);
      dd::SyntheticSet first = dd::load_synthetic(ckpts.front());
      dd::LabeledDataset train = dd::load_dataset(first.dataset_name, dd::Split::train);
      dd::Model probe = warm_probe(train, dg_arch, dg_width, static_cast<uint32_t>(dg_seed));
      if (mig_cmd->parsed()) {
        series = dd::feature_migration(ckpts, probe);
      } else {
        const auto& cls = train.class_index.at(static_cast<size_t>(dg_class));
        dd::Tensor class_emb = dd::embed_samples(probe, train, cls);
        dd::MmdKernel kernel = dd::parse_kernel(dg_kernel);
        series.name = "mmd-class-" + std::to_string(dg_class);
        series.units = dg_kernel;
        for (const std::string& path : ckpts) {
          dd::SyntheticSet ck = dd::load_synthetic(path);
          int pos = -1;
          for (int c = 0; c < ck.num_classes(); ++c)
            if (ck.labels[static_cast<size_t>(ck.class_offset(c))] == dg_class) pos = c;
          if (pos < 0) throw dd::Error("label-space-mismatch", "class missing from checkpoint");
          dd::FeatureBundle fb = dd::forward_embed(probe, ck.class_slice(pos));
          series.x.push_back(static_cast<double>(ck.iteration));
          series.y.push_back(dd::mmd(fb.embeddings, class_emb, kernel));
        }
      }
      series.provenance = dg_run;
    } else {  // gradnorm
      dd::LabeledDataset train = dd::load_dataset(dg_dataset, dd::Split::train);
      dd::Model probe = warm_probe(train, dg_arch, dg_width, static_cast<uint32_t>(dg_seed));
      dd::SamplerConfig scfg;
      scfg.sub_clusters = dg_sub;
      scfg.per_cluster = dg_per;
      series = dd::grad_norm_distribution(probe, train, dg_class, dd::parse_sampling(dg_sampler),
                                          scfg, static_cast<uint32_t>(dg_seed));
      series.provenance = dg_dataset;
    }
    std::string out = dg_out.empty() ? series.name + ".csv" : dg_out;
    dd::io::write_csv(out, dd::series_to_csv(series));
    std::printf("wrote %s (%zu points)\n", out.c_str(), series.x.size());
    return 0;
  }
  if (ex_cmd->parsed()) {
    dd::LabeledDataset train = dd::load_dataset(ex_dataset, dd::Split::train);
    dd::Model probe = warm_probe(train, ex_arch, ex_width, static_cast<uint32_t>(ex_seed));
    dd::Tensor images;
    std::vector<int> labels;
    if (!ex_synth.empty()) {
      dd::SyntheticSet s = dd::load_synthetic(ex_synth);
      images = s.pixels;
      labels = s.labels;
    } else {
      dd::LabeledDataset src = ex_split == "train" ? train
                                                   : dd::load_dataset(ex_dataset, dd::Split::test);
      images = src.images;
      labels = src.labels;
    }
    int64_t n = images.dim(0);
    if (ex_limit > 0 && ex_limit < n) {
      n = ex_limit;
      images.shape[0] = n;
      images.data.resize(static_cast<size_t>(n * images.dim(1) * images.dim(2) * images.dim(3)));
      labels.resize(static_cast<size_t>(n));
    }
    dd::io::CsvTable t;
    t.header = {"index", "label"};
    for (int64_t d = 0; d < probe.embed_dim(); ++d) t.header.push_back("e" + std::to_string(d));
    constexpr int64_t kBatch = 256;
    for (int64_t start = 0; start < n; start += kBatch) {
      int64_t end = std::min(n, start + kBatch);
      dd::Tensor batch({end - start, images.dim(1), images.dim(2), images.dim(3)});
      int64_t per = images.dim(1) * images.dim(2) * images.dim(3);
      std::copy_n(images.ptr() + start * per, (end - start) * per, batch.ptr());
      dd::FeatureBundle fb = dd::forward_embed(probe, batch);
      for (int64_t i = 0; i < end - start; ++i) {
        std::vector<std::string> row = {std::to_string(start + i),
                                        std::to_string(labels[static_cast<size_t>(start + i)])};
        for (int64_t d = 0; d < fb.embeddings.dim(1); ++d) {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.6g", fb.embeddings.at(i * fb.embeddings.dim(1) + d));
          row.push_back(buf);
        }
        t.rows.push_back(std::move(row));
      }
    }
    dd::io::write_csv(ex_out, t);
    std::printf("wrote %s (%lld rows)\n", ex_out.c_str(), static_cast<long long>(n));
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dd::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == "bad-config" ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
