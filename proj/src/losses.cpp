#include "nlprompt/losses.hpp"

#include <cmath>

namespace nlprompt {

namespace {

void check_target(const Vector& probs, int target) {
  if (target < 0 || target >= probs.size())
    throw ValidationError("loss: target class out of range");
}

}  // namespace

void validate_probabilities(const Vector& probs) {
  if (probs.size() == 0) throw ValidationError("probabilities: empty vector");
  if (!probs.allFinite())
    throw ValidationError("probabilities: non-finite entries");
  if (probs.minCoeff() < 0.0 || probs.maxCoeff() > 1.0 + 1e-12)
    throw ValidationError("probabilities: entries outside [0, 1]");
  if (std::abs(probs.sum() - 1.0) > 1e-9)
    throw ValidationError("probabilities: sum deviates from 1 by more than 1e-9");
}

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) throw ValidationError("softmax: empty input");
  if (!logits.allFinite()) throw ValidationError("softmax: non-finite input");
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

double ce_loss(const Vector& probs, int target) {
  validate_probabilities(probs);
  check_target(probs, target);
  const double sy = probs(target);
  if (sy == 0.0)
    throw InfiniteLossError("ce_loss: target probability is exactly zero");
  return -std::log(sy);
}

double ce_loss_clamped(const Vector& probs, int target, double floor) {
  validate_probabilities(probs);
  check_target(probs, target);
  if (!(floor > 0.0)) throw ValidationError("ce_loss_clamped: floor must be positive");
  return -std::log(std::max(probs(target), floor));
}

double mae_loss(const Vector& probs, int target) {
  validate_probabilities(probs);
  check_target(probs, target);
  double total = 0.0;
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    const double onehot = (c == target) ? 1.0 : 0.0;
    total += std::abs(onehot - probs(c));
  }
  return total;
}

double gce_loss(const Vector& probs, int target, double q) {
  validate_probabilities(probs);
  check_target(probs, target);
  if (!(q > 0.0) || q > 1.0)
    throw ValidationError("gce_loss: q must lie in (0, 1]");
  return (1.0 - std::pow(probs(target), q)) / q;
}

LossReport harmonized_loss(const Matrix& probs, const std::vector<int>& targets,
                           const std::vector<bool>& clean_mask,
                           const HarmonizedOptions& options) {
  const auto n = static_cast<std::size_t>(probs.rows());
  if (targets.size() != n || clean_mask.size() != n)
    throw ValidationError("harmonized_loss: batch size mismatch");
  if (n == 0) throw ValidationError("harmonized_loss: empty batch");

  LossReport report;
  report.per_sample.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector row = probs.row(static_cast<Eigen::Index>(i)).transpose();
    const double value =
        clean_mask[i]
            ? (options.clamp_ce
                   ? ce_loss_clamped(row, targets[i], options.ce_floor)
                   : ce_loss(row, targets[i]))
            : mae_loss(row, targets[i]);
    report.per_sample.push_back(value);
    report.total += value;
  }
  return report;
}

double gradient_coefficient(double s_y, GradientLoss kind) {
  if (!(s_y >= 0.0) || !(s_y <= 1.0))
    throw ValidationError("gradient_coefficient: s_y must lie in [0, 1]");
  switch (kind) {
    case GradientLoss::ce:
      return 1.0 - s_y;
    case GradientLoss::mae:
      return 2.0 * s_y * (1.0 - s_y);
  }
  throw ValidationError("gradient_coefficient: unknown loss kind");
}

}  // namespace nlprompt
