#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nlprompt/ot.hpp"

namespace nlprompt {

enum class NoiseKind { symmetric, asymmetric, rademacher };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::symmetric;
  double rate = 0.0;
  std::uint64_t seed = 0;

  void validate(int class_count) const;
};

/// Features plus observed labels; true labels ride along for scoring when
/// noise has been injected. rng_seed records provenance.
struct LabeledDataset {
  FeatureMatrix features;
  std::vector<int> observed_labels;
  std::optional<std::vector<int>> true_labels;
  int class_count = 0;
  std::uint64_t rng_seed = 0;

  int size() const { return static_cast<int>(observed_labels.size()); }
  void validate() const;
};

struct FewShotResult {
  LabeledDataset dataset;
  std::vector<std::string> warnings;
};

// === operations ===

/// Flips each label with probability `rate` to a uniform choice among the
/// other class_count - 1 classes (never to itself).
std::vector<int> inject_symmetric(const std::vector<int>& labels,
                                  int class_count, double rate,
                                  std::uint64_t seed);

/// Flips each label with probability `rate` to its successor
/// (label + 1) mod class_count.
std::vector<int> inject_asymmetric(const std::vector<int>& labels,
                                   int class_count, double rate,
                                   std::uint64_t seed);

/// Sign flips on +1/-1 labels with probability p. Errors when p > 1/2.
std::vector<int> rademacher_flip(const std::vector<int>& labels, double p,
                                 std::uint64_t seed);

/// Applies the spec'd noise to observed labels. The pre-noise labels are
/// preserved verbatim as true_labels when the dataset has none yet.
LabeledDataset apply_noise(const LabeledDataset& dataset,
                           const NoiseSpec& spec);

/// Per-class sample without replacement, `shots` per class. Classes smaller
/// than `shots` are taken whole with a warning. Output rows are ordered by
/// (class, original index).
FewShotResult few_shot_sample(const LabeledDataset& dataset, int shots,
                              std::uint64_t seed);

}  // namespace nlprompt
