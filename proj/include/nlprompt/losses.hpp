#pragma once

#include <vector>

#include "nlprompt/common.hpp"

namespace nlprompt {

enum class GradientLoss { ce, mae };

struct HarmonizedOptions {
  /// When set, CE is evaluated as -log(max(s_y, ce_floor)) instead of
  /// throwing InfiniteLossError at s_y == 0.
  bool clamp_ce = false;
  double ce_floor = 1e-12;
};

struct LossReport {
  double total = 0.0;
  std::vector<double> per_sample;
};

/// Checks the ProbVector contract: entries in [0, 1], sum within 1e-9 of 1.
void validate_probabilities(const Vector& probs);

/// Numerically stable softmax (max subtraction).
Vector softmax(const Vector& logits);

/// -log s_y. Throws InfiniteLossError when s_y == 0.
double ce_loss(const Vector& probs, int target);

/// CE with an explicit probability floor; finite for every input.
double ce_loss_clamped(const Vector& probs, int target, double floor = 1e-12);

/// Sum |onehot(y) - s| over classes, which equals 2(1 - s_y).
double mae_loss(const Vector& probs, int target);

/// Generalized cross entropy (1 - s_y^q)/q with q in (0, 1].
double gce_loss(const Vector& probs, int target, double q = 0.7);

/// CE on rows flagged clean, MAE on the rest (Eq. 11). probs holds one
/// probability row per sample.
LossReport harmonized_loss(const Matrix& probs, const std::vector<int>& targets,
                           const std::vector<bool>& clean_mask,
                           const HarmonizedOptions& options = {});

/// Magnitude of dL/ds_y: 1 - s_y for CE (binary convention), 2 s_y (1 - s_y)
/// for MAE. MAE's coefficient vanishes at both ends and never exceeds 1/2.
double gradient_coefficient(double s_y, GradientLoss kind);

}  // namespace nlprompt
