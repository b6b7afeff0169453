#include "nlprompt/train.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace nlprompt {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Column-wise softmax of logit_scale * (P X^T).
Matrix batch_probs(const Matrix& prototypes, const Matrix& chunk_features,
                   double logit_scale) {
  Matrix z = logit_scale * (prototypes * chunk_features.transpose());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double m = z.col(j).maxCoeff();
    z.col(j) = (z.col(j).array() - m).exp();
    z.col(j) /= z.col(j).sum();
  }
  return z;
}

double per_sample_weight(TrainMode mode, bool clean, double s_y, double gce_q) {
  switch (mode) {
    case TrainMode::nlprompt:
      return clean ? 1.0 : 2.0 * s_y;
    case TrainMode::ce:
      return 1.0;
    case TrainMode::mae:
      return 2.0 * s_y;
    case TrainMode::gce:
      return std::pow(s_y, gce_q);
  }
  throw ValidationError("unknown train mode");
}

double per_sample_loss(TrainMode mode, bool clean, const Vector& probs,
                       int target, const ExperimentConfig& cfg) {
  switch (mode) {
    case TrainMode::nlprompt:
      if (clean)
        return cfg.clamp_ce ? ce_loss_clamped(probs, target)
                            : ce_loss(probs, target);
      return mae_loss(probs, target);
    case TrainMode::ce:
      return cfg.clamp_ce ? ce_loss_clamped(probs, target)
                          : ce_loss(probs, target);
    case TrainMode::mae:
      return mae_loss(probs, target);
    case TrainMode::gce:
      return gce_loss(probs, target, cfg.gce_q);
  }
  throw ValidationError("unknown train mode");
}

double evaluate_accuracy(const Matrix& prototypes, const LabeledDataset& test) {
  const std::vector<int>& truth =
      test.true_labels ? *test.true_labels : test.observed_labels;
  const Matrix sims = prototypes * test.features.data.transpose();
  long correct = 0;
  for (Eigen::Index j = 0; j < sims.cols(); ++j) {
    int best = 0;
    double best_sim = sims(0, j);
    for (Eigen::Index c = 1; c < sims.rows(); ++c) {
      if (sims(c, j) > best_sim) {
        best_sim = sims(c, j);
        best = static_cast<int>(c);
      }
    }
    if (best == truth[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(sims.cols());
}

struct EpochChunk {
  std::vector<int> rows;
  std::vector<bool> clean;
};

TrainResult run_loop(const LabeledDataset& train, const LabeledDataset& test,
                     const FeatureMatrix& prototypes,
                     const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  train.validate();
  test.validate();
  prototypes.validate();
  if (!prototypes.normalized || !train.features.normalized ||
      !test.features.normalized)
    throw ValidationError("train: features and prototypes must be normalized");
  if (prototypes.dim() != train.features.dim() ||
      prototypes.dim() != test.features.dim())
    throw ValidationError("train: dimension mismatch");
  if (prototypes.rows() != train.class_count ||
      train.class_count != test.class_count)
    throw ValidationError("train: class count mismatch");

  const bool purified = cfg.mode == TrainMode::nlprompt;
  const int n = train.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  TrainResult result;
  result.prototypes = prototypes;
  Matrix& P = result.prototypes.data;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.cosine_anneal
            ? cfg.learning_rate * 0.5 *
                  (1.0 + std::cos(3.14159265358979323846 * epoch / cfg.epochs))
            : cfg.learning_rate;

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.mode = mode_name(cfg.mode);
    rec.noise_rate = cfg.noise.rate;
    rec.seed = seed;
    rec.purif_acc = nan;
    rec.purif_f1 = nan;

    // --- chunk layout for this epoch ---
    std::vector<std::vector<int>> chunks;
    if (purified && cfg.granularity == PartitionGranularity::batch &&
        cfg.batch_size > 0 && cfg.batch_size < n) {
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      SplitMix64 shuffle_rng(SplitMix64::derive(
          seed, 0x7000u + static_cast<std::uint64_t>(epoch)));
      for (int j = 0; j < n - 1; ++j) {
        const auto pick = j + static_cast<int>(shuffle_rng.next_below(
                                  static_cast<std::uint64_t>(n - j)));
        std::swap(order[static_cast<std::size_t>(j)],
                  order[static_cast<std::size_t>(pick)]);
      }
      for (int start = 0; start < n; start += cfg.batch_size) {
        const int stop = std::min(n, start + cfg.batch_size);
        chunks.emplace_back(order.begin() + start, order.begin() + stop);
      }
    } else {
      std::vector<int> all(static_cast<std::size_t>(n));
      std::iota(all.begin(), all.end(), 0);
      chunks.push_back(std::move(all));
    }

    // --- purification, then one gradient step per chunk ---
    std::vector<int> epoch_pseudo(static_cast<std::size_t>(n), 0);
    double loss_sum = 0.0;
    for (const auto& rows : chunks) {
      EpochChunk chunk;
      chunk.rows = rows;
      chunk.clean.assign(rows.size(), true);

      FeatureMatrix chunk_features;
      chunk_features.normalized = true;
      chunk_features.data.resize(static_cast<Eigen::Index>(rows.size()),
                                 train.features.dim());
      for (std::size_t j = 0; j < rows.size(); ++j)
        chunk_features.data.row(static_cast<Eigen::Index>(j)) =
            train.features.data.row(rows[j]);

      if (purified) {
        const auto t0 = Clock::now();
        const SinkhornResult ot = solve_prompt_ot(
            result.prototypes, chunk_features, cfg.sinkhorn, cfg.temperature);
        if (!ot.converged) {
          std::ostringstream msg;
          msg << "epoch " << epoch << ": sinkhorn hit max_iters, residual "
              << ot.plan.residual;
          result.warnings.push_back(msg.str());
        }
        const std::vector<int> pseudo = pseudo_labels(ot.plan);
        for (std::size_t j = 0; j < rows.size(); ++j) {
          epoch_pseudo[static_cast<std::size_t>(rows[j])] = pseudo[j];
          chunk.clean[j] =
              train.observed_labels[static_cast<std::size_t>(rows[j])] ==
              pseudo[j];
        }
        rec.ot_seconds += seconds_since(t0);
      }

      const auto t1 = Clock::now();
      const Matrix probs = batch_probs(P, chunk_features.data, cfg.logit_scale);
      // Gradient of the mean chunk loss: dz = (s - onehot) * weight.
      Matrix dz = probs;
      for (std::size_t j = 0; j < chunk.rows.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        const int y =
            train.observed_labels[static_cast<std::size_t>(chunk.rows[j])];
        const double s_y = probs(y, col);
        const Vector prob_col = probs.col(col);
        try {
          loss_sum += per_sample_loss(cfg.mode, chunk.clean[j], prob_col, y, cfg);
        } catch (const InfiniteLossError& e) {
          result.aborted = true;
          result.abort_epoch = epoch;
          result.abort_reason = e.what();
          loss_sum = std::numeric_limits<double>::infinity();
          break;
        }
        dz(y, col) -= 1.0;
        dz.col(col) *= per_sample_weight(cfg.mode, chunk.clean[j], s_y, cfg.gce_q);
      }
      if (result.aborted) {
        rec.step_seconds += seconds_since(t1);
        break;
      }
      Matrix grad = (cfg.logit_scale / static_cast<double>(chunk.rows.size())) *
                    (dz * chunk_features.data);
      P -= lr * grad;
      for (Eigen::Index r = 0; r < P.rows(); ++r) {
        const double norm = P.row(r).norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) {
          result.aborted = true;
          result.abort_epoch = epoch;
          result.abort_reason = "prototype row became degenerate";
          break;
        }
        P.row(r) /= norm;
      }
      rec.step_seconds += seconds_since(t1);
      if (result.aborted) break;
    }

    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.test_acc = evaluate_accuracy(P, test);
    if (purified) {
      const PartitionResult part =
          partition(train.observed_labels, epoch_pseudo, train.class_count);
      rec.pseudo_histogram = part.histogram;
      if (train.true_labels) {
        const PurificationScore score = score_purification(
            part, *train.true_labels, train.observed_labels);
        rec.purif_acc = score.accuracy;
        rec.purif_f1 = score.f1;
      }
    }

    if (!std::isfinite(rec.train_loss) && !result.aborted) {
      result.aborted = true;
      result.abort_epoch = epoch;
      result.abort_reason = "non-finite training loss";
    }
    result.records.push_back(std::move(rec));
    if (result.aborted) break;
  }
  return result;
}

}  // namespace

const char* mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::nlprompt:
      return "nlprompt";
    case TrainMode::ce:
      return "ce";
    case TrainMode::mae:
      return "mae";
    case TrainMode::gce:
      return "gce";
  }
  throw ValidationError("unknown train mode");
}

TrainMode mode_from_name(const std::string& name) {
  if (name == "nlprompt") return TrainMode::nlprompt;
  if (name == "ce") return TrainMode::ce;
  if (name == "mae") return TrainMode::mae;
  if (name == "gce") return TrainMode::gce;
  throw ValidationError("unknown train mode: " + name);
}

void ExperimentConfig::validate() const {
  if (epochs < 0) throw ValidationError("config: epochs must be >= 0");
  if (!(learning_rate > 0.0))
    throw ValidationError("config: learning_rate must be positive");
  if (!(temperature > 0.0))
    throw ValidationError("config: temperature must be positive");
  if (!(logit_scale > 0.0))
    throw ValidationError("config: logit_scale must be positive");
  if (!(gce_q > 0.0) || gce_q > 1.0)
    throw ValidationError("config: gce_q must lie in (0, 1]");
  if (shots < 0) throw ValidationError("config: shots must be >= 0");
  if (batch_size < 0) throw ValidationError("config: batch_size must be >= 0");
  if (seeds.empty()) throw ValidationError("config: seed list is empty");
  sinkhorn.validate();
}

TrainResult run_nlprompt(const LabeledDataset& train,
                         const LabeledDataset& test,
                         const FeatureMatrix& prototypes,
                         const ExperimentConfig& config, std::uint64_t seed) {
  if (config.mode != TrainMode::nlprompt)
    throw ValidationError("run_nlprompt: config.mode must be nlprompt");
  return run_loop(train, test, prototypes, config, seed);
}

TrainResult run_baseline(const LabeledDataset& train,
                         const LabeledDataset& test,
                         const FeatureMatrix& prototypes,
                         const ExperimentConfig& config, std::uint64_t seed) {
  if (config.mode == TrainMode::nlprompt)
    throw ValidationError("run_baseline: config.mode must be a baseline loss");
  return run_loop(train, test, prototypes, config, seed);
}

std::vector<GridJobResult> run_grid(const LabeledDataset& clean_train,
                                    const LabeledDataset& test,
                                    const FeatureMatrix& prototypes,
                                    const ExperimentConfig& base,
                                    const std::vector<TrainMode>& modes,
                                    const std::vector<double>& noise_rates,
                                    int threads) {
  base.validate();
  if (modes.empty() || noise_rates.empty())
    throw ValidationError("run_grid: empty mode or noise grid");

  struct Job {
    TrainMode mode;
    double rate;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (TrainMode mode : modes)
    for (double rate : noise_rates)
      for (std::uint64_t seed : base.seeds) jobs.push_back({mode, rate, seed});

  std::vector<GridJobResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      const Job& job = jobs[k];

      // Job data depends only on (seed, rate): identical across modes and
      // invariant to the rest of the grid.
      LabeledDataset ds = clean_train;
      if (base.shots > 0)
        ds = few_shot_sample(ds, base.shots,
                             SplitMix64::derive(job.seed, 0xFE37u))
                 .dataset;
      NoiseSpec spec = base.noise;
      spec.rate = job.rate;
      spec.seed = SplitMix64::derive(
          job.seed, 0x4e6f6973u ^ std::bit_cast<std::uint64_t>(job.rate));
      ds = apply_noise(ds, spec);

      ExperimentConfig cfg = base;
      cfg.mode = job.mode;
      cfg.noise.rate = job.rate;
      GridJobResult& out = results[k];
      out.mode = job.mode;
      out.noise_rate = job.rate;
      out.seed = job.seed;
      out.result = job.mode == TrainMode::nlprompt
                       ? run_nlprompt(ds, test, prototypes, cfg, job.seed)
                       : run_baseline(ds, test, prototypes, cfg, job.seed);
    }
  };

  int worker_count =
      threads > 0
          ? threads
          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  worker_count = std::min<int>(worker_count, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int i = 0; i < worker_count; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace nlprompt
