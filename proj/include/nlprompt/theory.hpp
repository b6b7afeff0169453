#pragma once

#include <array>
#include <vector>

#include "nlprompt/losses.hpp"
#include "nlprompt/noise.hpp"

namespace nlprompt {

/// Orthogonal feature directions in R^m: row 0 is the class-relevant mu,
/// rows 1..L are the irrelevant xi_l.
struct FeatureBasis {
  Matrix vectors;
  int latent_dim = 0;

  int irrelevant_count() const { return static_cast<int>(vectors.rows()) - 1; }
  Eigen::RowVectorXd mu() const { return vectors.row(0); }
  Eigen::RowVectorXd xi(int l) const { return vectors.row(l + 1); }

  void validate() const;

  /// Gram-Schmidt rows of a gaussian draw, scaled to the requested norms.
  /// Requires m >= L + 1.
  static FeatureBasis random_orthogonal(int latent_dim, int irrelevant_count,
                                        double mu_norm, double xi_norm,
                                        SplitMix64& rng);
};

/// Two-class prompt model. Prompts live in R^d with d = m + 1; the weight
/// matrix acts through the basis rows zero-padded into R^d, so gradient
/// steps never leave span(basis) and the extra coordinate stays fixed.
struct PromptModel {
  FeatureBasis basis;
  Vector p;
  Vector p0;
  Vector p_plus;
  Vector p_minus;

  int prompt_dim() const { return basis.latent_dim + 1; }
  void validate() const;
};

/// sigma' semantics in the gradient: `derivative` uses the ReLU indicator
/// (sigma'(0) = 0); `literal_paper` substitutes ReLU values where the paper's
/// printed expression writes sigma instead of sigma'.
enum class EncoderDerivativeMode { derivative, literal_paper };

/// One draw from the synthetic distribution: g = (y, x_1..x_L) with the true
/// label in g(0) and a possibly flipped observed label alongside.
struct SyntheticSample {
  int y_true = 1;
  int y_observed = 1;
  Vector g;
};

struct ForwardResult {
  /// sims[0] pairs with class +1, sims[1] with class -1.
  std::array<double, 2> sims{};
  Vector probs;
};

/// Coordinates of a prompt in the (p0, mu, xi_1..xi_L) frame of Lemma-style
/// analysis: p ~ alpha p0 + beta mu/|mu|^2 + sum_l phi_l xi_l/|xi_l|^2.
struct PromptDecomposition {
  double alpha = 0.0;
  double beta = 0.0;
  Vector phis;
};

/// Closed-form one-step coefficient changes, accumulated per sample without
/// touching prompt-space vectors; the independent route for consistency
/// checks against decompose_prompt differences.
struct CoefficientDelta {
  double beta = 0.0;
  Vector phis;
};

struct TheoryConfig {
  GradientLoss loss = GradientLoss::mae;
  int latent_dim = 50;
  int irrelevant_count = 20;
  int train_size = 200;
  double noise_rate = 0.3;
  double sigma_p = 0.5;
  double eta = 0.01;
  int iterations = 1000;
  double sigma_0 = 0.01;
  double mu_norm = 1.0;
  double xi_norm = 1.0;
  double class_prompt_scale = 1.5;
  int test_size = 2000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrajectoryPoint {
  double alpha = 0.0;
  double beta = 0.0;
  Vector phis;
  double train_loss = 0.0;
  double test_error = 0.0;
  /// Mean probability assigned to the observed training label; the empirical
  /// E[s_y] appearing in the expected-update ratios.
  double mean_s_y = 0.0;
};

struct PromptTrajectory {
  TheoryConfig config;
  std::vector<TrajectoryPoint> points;
  bool diverged = false;
  int diverged_at = -1;
  PromptModel model;

  const TrajectoryPoint& final_point() const { return points.back(); }
};

/// Expected MAE/CE one-step update ratios from the Theorem 4.2 algebra,
/// with the paper's claimed bounds evaluated rather than assumed.
struct UpdateRatios {
  double beta_ratio = 0.0;
  double phi_ratio = 0.0;
  double reference = 0.0;
  bool beta_claim_holds = false;
  bool phi_claim_holds = false;
  bool separation_holds = false;
};

struct TheoremSeedOutcome {
  std::uint64_t seed = 0;
  double mae_error = 0.0;
  double ce_error = 0.0;
  double mae_beta = 0.0;
  double ce_beta = 0.0;
  double mae_phi_max = 0.0;
  double ce_phi_max = 0.0;
  bool mae_diverged = false;
  bool ce_diverged = false;
};

struct TheoremCheckResult {
  std::vector<TheoremSeedOutcome> outcomes;
  int mae_wins = 0;
  double mean_mae_error = 0.0;
  double mean_ce_error = 0.0;
};

// === operations ===

/// Builds basis, init prompt p0 ~ N(0, sigma_0^2 I) and class prompts with
/// mu . p_plus >= 0 >= mu . p_minus enforced by reflection.
PromptModel make_prompt_model(const TheoryConfig& config, SplitMix64& rng);

/// h_c = relu(W p + W p_c) - relu(-W p + W p_c) for class sign +1 or -1.
Vector text_encode(const PromptModel& model, int class_sign);

std::vector<SyntheticSample> sample_dataset(int count, double noise_rate,
                                            double sigma_p,
                                            int irrelevant_count,
                                            std::uint64_t seed);

ForwardResult forward(const PromptModel& model, const SyntheticSample& sample);

/// Mean loss of the batch under the observed labels.
double batch_loss(const PromptModel& model,
                  const std::vector<SyntheticSample>& batch,
                  GradientLoss kind);

/// Mean-batch gradient of batch_loss with respect to p, via the closed form
/// -(1/n) sum_i l'_i sum_r g_{r,i} sigma'def_{r,i} w_r.
Vector analytic_gradient(const PromptModel& model,
                         const std::vector<SyntheticSample>& batch,
                         GradientLoss kind,
                         EncoderDerivativeMode mode =
                             EncoderDerivativeMode::derivative);

/// Smallest |pre-activation| over all ReLU gates of the model; probes with a
/// small gap sit near a kink and are unfit for finite-difference checks.
double min_preactivation_gap(const PromptModel& model);

/// Coefficients of p in the (p0, basis) frame. Errors when p0 has no
/// component orthogonal to the basis span (degenerate basis).
PromptDecomposition decompose_prompt(const Vector& p, const Vector& p0,
                                     const FeatureBasis& basis);

/// Inverse of decompose_prompt on span(p0) + span(basis).
Vector reconstruct_prompt(const PromptDecomposition& decomposition,
                          const Vector& p0, const FeatureBasis& basis);

/// Lemma-style closed-form coefficient changes for one step of size eta,
/// using the label-independent sigma' identity per basis row.
CoefficientDelta predicted_coefficient_update(
    const PromptModel& model, const std::vector<SyntheticSample>& batch,
    GradientLoss kind, double eta);

/// Full GD run; records the decomposition, train loss and test error at
/// every iterate (iterations + 1 points). Non-finite state stops the run
/// with diverged set instead of throwing.
PromptTrajectory train_prompt(const TheoryConfig& config);

/// Classification error rate of sign prediction on a sample set.
double measure_test_loss(const PromptModel& model,
                         const std::vector<SyntheticSample>& test_set);

/// mean_s_y must lie in (1/2, 1); noise_rate in [0, 1/2) and below
/// 1 - mean_s_y, otherwise the expected-update denominators change sign.
UpdateRatios expected_update_ratios(double mean_s_y, double noise_rate);

/// Paired CE/MAE runs over derived seeds, executed concurrently and merged
/// in seed order.
TheoremCheckResult run_theorem_suite(const TheoryConfig& base, int seed_count,
                                     int threads = 0);

}  // namespace nlprompt
