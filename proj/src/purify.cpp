#include "nlprompt/purify.hpp"

#include <algorithm>

namespace nlprompt {

std::vector<bool> PartitionResult::clean_mask() const {
  std::vector<bool> mask(pseudo.size(), false);
  for (int i : clean_indices) mask[static_cast<std::size_t>(i)] = true;
  return mask;
}

PartitionResult partition(const std::vector<int>& observed,
                          const std::vector<int>& pseudo, int class_count) {
  if (observed.size() != pseudo.size())
    throw ValidationError("partition: observed and pseudo sizes differ");
  if (observed.empty()) throw ValidationError("partition: empty input");

  int bins = class_count;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    if (pseudo[i] < 0 || observed[i] < 0)
      throw ValidationError("partition: negative label");
    bins = std::max(bins, std::max(pseudo[i], observed[i]) + 1);
  }
  if (class_count > 0) {
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
      if (pseudo[i] >= class_count || observed[i] >= class_count)
        throw ValidationError("partition: label exceeds class_count");
    }
    bins = class_count;
  }

  PartitionResult result;
  result.pseudo = pseudo;
  result.histogram.assign(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    ++result.histogram[static_cast<std::size_t>(pseudo[i])];
    if (observed[i] == pseudo[i])
      result.clean_indices.push_back(static_cast<int>(i));
    else
      result.noisy_indices.push_back(static_cast<int>(i));
  }
  return result;
}

PurificationScore score_purification(const PartitionResult& part,
                                     const std::vector<int>& true_labels,
                                     const std::vector<int>& observed_labels,
                                     bool positive_is_clean) {
  const std::size_t n = part.pseudo.size();
  if (true_labels.size() != n || observed_labels.size() != n)
    throw ValidationError("score_purification: label sizes differ from partition");
  if (n == 0) throw ValidationError("score_purification: empty partition");

  const std::vector<bool> predicted_clean = part.clean_mask();
  PurificationScore score;
  score.positive_is_clean = positive_is_clean;
  for (std::size_t i = 0; i < n; ++i) {
    const bool actually_clean = observed_labels[i] == true_labels[i];
    const bool predicted = predicted_clean[i];
    const bool actual_pos = positive_is_clean ? actually_clean : !actually_clean;
    const bool predicted_pos = positive_is_clean ? predicted : !predicted;
    if (predicted_pos && actual_pos)
      ++score.tp;
    else if (predicted_pos && !actual_pos)
      ++score.fp;
    else if (!predicted_pos && actual_pos)
      ++score.fn;
    else
      ++score.tn;
  }
  score.accuracy =
      static_cast<double>(score.tp + score.tn) / static_cast<double>(n);
  const double f1_denom = static_cast<double>(2 * score.tp + score.fp + score.fn);
  score.f1 = f1_denom > 0.0 ? 2.0 * static_cast<double>(score.tp) / f1_denom : 0.0;
  return score;
}

std::vector<int> zero_shot_labels(const FeatureMatrix& prototypes,
                                  const FeatureMatrix& samples) {
  prototypes.validate();
  samples.validate();
  if (prototypes.dim() != samples.dim())
    throw ValidationError("zero_shot_labels: dimension mismatch");

  const Matrix sims = prototypes.data * samples.data.transpose();
  std::vector<int> labels(static_cast<std::size_t>(sims.cols()));
  for (Eigen::Index j = 0; j < sims.cols(); ++j) {
    int best = 0;
    double best_sim = sims(0, j);
    for (Eigen::Index c = 1; c < sims.rows(); ++c) {
      if (sims(c, j) > best_sim) {
        best_sim = sims(c, j);
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(j)] = best;
  }
  return labels;
}

PartitionResult zero_shot_partition(const FeatureMatrix& prototypes,
                                    const FeatureMatrix& samples,
                                    const std::vector<int>& observed_labels) {
  return partition(observed_labels, zero_shot_labels(prototypes, samples),
                   prototypes.rows());
}

}  // namespace nlprompt
