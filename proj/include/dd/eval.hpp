#pragma once

#include <string>
#include <vector>

#include "dd/dataset.hpp"
#include "dd/distill.hpp"
#include "dd/nn.hpp"

namespace dd {

struct EvalConfig {
  ModelSpec arch;
  int epochs = 1000;
  float lr = 0.01f;
  float momentum = 0.9f;
  bool step_decay = true;  // x0.1 at 60% and 80% of the epochs
  int runs = 5;
  int batch = 256;
  std::vector<std::string> augment_policy = {"flip", "crop"};
  uint32_t seed = 0;
};

struct EvalResult {
  double mean = 0;    // top-1 %
  double stddev = 0;  // sample standard deviation over runs
  std::vector<double> per_run;
  std::string arch;
  double wallclock = 0;
};

// Top-1 % on the test split; restricted to class_filter when non-empty.
double test_accuracy(const Model& m, const LabeledDataset& test,
                     const std::vector<int>& class_filter = {});

// cfg.runs models trained from scratch on the synthetic set, each scored on
// real_test. Throws "label-space-mismatch" when s's labels fall outside the
// test label space.
EvalResult train_on_synthetic(const SyntheticSet& s, const LabeledDataset& real_test,
                              const EvalConfig& cfg);

std::vector<EvalResult> cross_arch_eval(const SyntheticSet& s, const std::vector<ModelSpec>& archs,
                                        const LabeledDataset& real_test, const EvalConfig& cfg);

// View keeping only the listed classes (labels and num_classes preserved).
LabeledDataset subset_classes(const LabeledDataset& ds, const std::vector<int>& classes);

struct ContinualResult {
  std::vector<double> per_step;           // top-1 % over classes seen so far
  std::vector<SyntheticSet> step_memory;  // per-step distilled additions
};

// Class-incremental rehearsal: at each step, distill the newly arrived
// classes, extend the synthetic memory, train a fresh model on the memory,
// evaluate on the seen-class test restriction.
ContinualResult continual_eval(const LabeledDataset& train, const LabeledDataset& test, int steps,
                               int classes_per_step, DistillConfig dcfg, EvalConfig ecfg);

}  // namespace dd
