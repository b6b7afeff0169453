#pragma once

#include <string>
#include <vector>

#include "nlprompt/data.hpp"
#include "nlprompt/losses.hpp"
#include "nlprompt/purify.hpp"

namespace nlprompt {

/// nlprompt = OT purification + harmonized CE/MAE; the rest are single-loss
/// baselines trained on the observed labels.
enum class TrainMode { nlprompt, ce, mae, gce };

enum class PartitionGranularity { dataset, batch };

const char* mode_name(TrainMode mode);
TrainMode mode_from_name(const std::string& name);

struct ExperimentConfig {
  TrainMode mode = TrainMode::nlprompt;
  int epochs = 50;
  double learning_rate = 0.002;
  bool cosine_anneal = true;
  /// Softmax temperature of the OT cost (Eq. 9).
  double temperature = 1.0;
  /// Similarity-to-logit scale of the classifier head.
  double logit_scale = 100.0;
  SinkhornConfig sinkhorn;
  double gce_q = 0.7;
  NoiseSpec noise;
  /// Per-class training shots; 0 keeps the whole set.
  int shots = 0;
  PartitionGranularity granularity = PartitionGranularity::dataset;
  /// Chunk size under batch granularity; 0 means one full-set chunk.
  int batch_size = 0;
  /// CE probability floor in training paths; InfiniteLossError otherwise.
  bool clamp_ce = true;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir;

  void validate() const;
};

/// One CSV row. Timing fields are wall-clock and excluded from determinism
/// comparisons; everything else is bitwise reproducible.
struct MetricsRecord {
  int epoch = 0;
  std::string mode;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double purif_acc = 0.0;
  double purif_f1 = 0.0;
  double ot_seconds = 0.0;
  double step_seconds = 0.0;
  std::vector<int> pseudo_histogram;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  FeatureMatrix prototypes;
  bool aborted = false;
  int abort_epoch = -1;
  std::string abort_reason;
  std::vector<std::string> warnings;
};

/// Full NLPrompt loop: per-epoch PromptOT pseudo-labels, agreement
/// partition, CE on the clean split and MAE on the noisy split, cosine
/// annealed gradient steps on row-normalized prototypes.
TrainResult run_nlprompt(const LabeledDataset& train,
                         const LabeledDataset& test,
                         const FeatureMatrix& prototypes,
                         const ExperimentConfig& config, std::uint64_t seed);

/// Single-loss baseline (ce, mae or gce mode) with the same schedule and no
/// purification; purification metrics are NaN in the records.
TrainResult run_baseline(const LabeledDataset& train,
                         const LabeledDataset& test,
                         const FeatureMatrix& prototypes,
                         const ExperimentConfig& config, std::uint64_t seed);

struct GridJobResult {
  TrainMode mode = TrainMode::nlprompt;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
  TrainResult result;
};

/// modes x noise_rates x config.seeds grid over a clean training set. Each
/// job applies few-shot sampling and noise with seeds derived purely from
/// (seed, rate), so results do not depend on grid composition or thread
/// count; jobs run concurrently and merge in grid order.
std::vector<GridJobResult> run_grid(const LabeledDataset& clean_train,
                                    const LabeledDataset& test,
                                    const FeatureMatrix& prototypes,
                                    const ExperimentConfig& base,
                                    const std::vector<TrainMode>& modes,
                                    const std::vector<double>& noise_rates,
                                    int threads = 0);

}  // namespace nlprompt
