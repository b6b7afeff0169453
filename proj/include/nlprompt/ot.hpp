#pragma once

#include <optional>
#include <vector>

#include "nlprompt/common.hpp"

namespace nlprompt {

/// Dense feature rows (one sample or prototype per row). When `normalized`
/// is set every row must have unit L2 norm within 1e-9.
struct FeatureMatrix {
  Matrix data;
  bool normalized = false;

  int rows() const { return static_cast<int>(data.rows()); }
  int dim() const { return static_cast<int>(data.cols()); }

  void validate() const;

  /// Normalizes each row in place and sets the flag. Errors on zero rows.
  static FeatureMatrix normalized_rows(Matrix m);
};

/// Class-by-sample cost matrix. Entries must be finite; negative values are
/// legal for raw costs, while build_cost_matrix always yields >= 0.
struct CostMatrix {
  Matrix entries;

  int class_count() const { return static_cast<int>(entries.rows()); }
  int sample_count() const { return static_cast<int>(entries.cols()); }

  void validate() const;
};

/// Non-negative coupling with its target marginals and the achieved
/// feasibility residual (max L-inf violation over rows and columns).
struct TransportPlan {
  Matrix entries;
  Vector row_marginal;
  Vector col_marginal;
  double residual = 0.0;

  void validate() const;
};

struct SinkhornConfig {
  double epsilon = 0.05;
  int max_iters = 10000;
  double tolerance = 1e-9;
  /// Unset means auto: log-domain iterations when epsilon < 0.01.
  std::optional<bool> log_domain;

  bool use_log_domain() const { return log_domain.value_or(epsilon < 0.01); }
  void validate() const;
};

struct SinkhornResult {
  TransportPlan plan;
  bool converged = false;
  int iterations = 0;
};

/// Exact assignment-problem solution used as a small-instance oracle.
struct AssignmentResult {
  TransportPlan plan;
  double objective = 0.0;
  /// assignment[c] is the sample column matched to class row c.
  std::vector<int> assignment;
};

// === operations ===

/// Eq. 9 cost: column-wise -log softmax of prototype/sample similarities.
/// Both inputs must carry the normalized flag. Columns of exp(-cost) sum to 1.
CostMatrix build_cost_matrix(const FeatureMatrix& prototypes,
                             const FeatureMatrix& samples,
                             double temperature = 1.0);

/// Entropic OT via Sinkhorn scaling; standard or log-domain iterations per
/// config. Marginals must be strictly positive with sums within 1e-12 of 1.
/// Non-convergence is reported in the result, not thrown; NaN/underflow in
/// the standard domain throws NumericalError.
SinkhornResult sinkhorn(const CostMatrix& cost, const Vector& row_marginal,
                        const Vector& col_marginal,
                        const SinkhornConfig& config);

/// PromptOT: cost from build_cost_matrix, uniform marginals 1/C and 1/N.
SinkhornResult solve_prompt_ot(const FeatureMatrix& prototypes,
                               const FeatureMatrix& samples,
                               const SinkhornConfig& config,
                               double temperature = 1.0);

/// Column argmax of the plan; ties resolve to the lowest class index.
std::vector<int> pseudo_labels(const TransportPlan& plan);

/// Exhaustive assignment solve for square instances with uniform marginals,
/// N <= 8. Returns the lexicographically first optimal permutation.
AssignmentResult lp_oracle(const CostMatrix& cost, const Vector& row_marginal,
                           const Vector& col_marginal);

/// <C, Q>: transport objective without the entropy term.
double transport_objective(const CostMatrix& cost, const TransportPlan& plan);

}  // namespace nlprompt
