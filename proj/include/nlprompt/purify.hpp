#pragma once

#include <vector>

#include "nlprompt/ot.hpp"

namespace nlprompt {

/// Clean/noisy split induced by agreement between observed and pseudo labels
/// (Eq. 10), plus the pseudo-label class histogram.
struct PartitionResult {
  std::vector<int> pseudo;
  std::vector<int> clean_indices;
  std::vector<int> noisy_indices;
  std::vector<int> histogram;

  std::vector<bool> clean_mask() const;
};

/// Binary confusion counts for the purification decision. `positive_is_clean`
/// records which side was treated as the positive class.
struct PurificationScore {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;
  bool positive_is_clean = true;
  double accuracy = 0.0;
  double f1 = 0.0;
};

// === operations ===

/// clean = {i : observed_i == pseudo_i}. Histogram has class_count bins;
/// pass 0 to size it from the largest label seen.
PartitionResult partition(const std::vector<int>& observed,
                          const std::vector<int>& pseudo, int class_count = 0);

/// Scores the partition against ground truth, where a sample is truly clean
/// iff observed == true label. F1 uses the positive side selected by the
/// flag; empty denominators yield 0, never a division by zero.
PurificationScore score_purification(const PartitionResult& partition,
                                     const std::vector<int>& true_labels,
                                     const std::vector<int>& observed_labels,
                                     bool positive_is_clean = true);

/// Argmax of raw prototype/sample inner products; ties to the lowest class.
std::vector<int> zero_shot_labels(const FeatureMatrix& prototypes,
                                  const FeatureMatrix& samples);

/// Partition from zero-shot predictions instead of OT pseudo-labels; the
/// ablation baseline.
PartitionResult zero_shot_partition(const FeatureMatrix& prototypes,
                                    const FeatureMatrix& samples,
                                    const std::vector<int>& observed_labels);

}  // namespace nlprompt
