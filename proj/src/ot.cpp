#include "nlprompt/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace nlprompt {

namespace {

void check_marginals(const Vector& a, const Vector& b, int rows, int cols) {
  if (a.size() != rows || b.size() != cols)
    throw ValidationError("sinkhorn: marginal sizes do not match the cost matrix");
  if (a.minCoeff() <= 0.0 || b.minCoeff() <= 0.0)
    throw ValidationError("sinkhorn: marginals must be strictly positive");
  const double sa = a.sum(), sb = b.sum();
  if (std::abs(sa - 1.0) > 1e-12 || std::abs(sb - 1.0) > 1e-12)
    throw ValidationError("sinkhorn: marginals must each sum to 1 within 1e-12");
}

double plan_residual(const Matrix& plan, const Vector& a, const Vector& b) {
  const double row_violation = (plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
  const double col_violation =
      (plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
  return std::max(row_violation, col_violation);
}

SinkhornResult sinkhorn_standard(const Matrix& cost, const Vector& a,
                                 const Vector& b, const SinkhornConfig& cfg) {
  const Matrix exponent = -cost / cfg.epsilon;
  // Vectorized exp clamps arguments at the double underflow floor instead of
  // returning 0, so a fully underflowed row or column becomes a constant
  // kernel and the iteration converges to a meaningless plan without ever
  // producing a non-finite value. Reject the instance up front instead.
  constexpr double kExpUnderflowFloor = -708.0;
  if (exponent.rowwise().maxCoeff().minCoeff() < kExpUnderflowFloor ||
      exponent.colwise().maxCoeff().minCoeff() < kExpUnderflowFloor)
    throw NumericalError(
        "sinkhorn: kernel mass underflow in standard domain (epsilon too "
        "small); enable log_domain");
  const Matrix kernel = exponent.array().exp();
  Vector u = Vector::Ones(a.size());
  Vector v = Vector::Ones(b.size());
  Vector kv = kernel * v;

  bool converged = false;
  int iters = 0;
  for (; iters < cfg.max_iters;) {
    ++iters;
    u = a.cwiseQuotient(kv);
    if (!u.allFinite())
      throw NumericalError(
          "sinkhorn: kernel mass underflow in standard domain (epsilon too "
          "small); enable log_domain");
    v = b.cwiseQuotient(kernel.transpose() * u);
    if (!v.allFinite())
      throw NumericalError(
          "sinkhorn: kernel mass underflow in standard domain (epsilon too "
          "small); enable log_domain");
    kv = kernel * v;
    // Columns are exact after the v update, so the row violation of the
    // refreshed product is the full marginal residual.
    const double row_violation =
        (u.cwiseProduct(kv) - a).cwiseAbs().maxCoeff();
    if (row_violation <= cfg.tolerance) {
      converged = true;
      break;
    }
  }

  Matrix plan = u.asDiagonal() * kernel * v.asDiagonal();
  if (!plan.allFinite())
    throw NumericalError("sinkhorn: non-finite transport plan");
  TransportPlan out{std::move(plan), a, b, 0.0};
  out.residual = plan_residual(out.entries, a, b);
  return SinkhornResult{std::move(out), converged, iters};
}

// Log-sum-exp over one row of exponents with max subtraction.
double lse(const Eigen::Ref<const Eigen::RowVectorXd>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

SinkhornResult sinkhorn_log(const Matrix& cost, const Vector& a,
                            const Vector& b, const SinkhornConfig& cfg) {
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  const double eps = cfg.epsilon;
  Vector f = Vector::Zero(rows);
  Vector g = Vector::Zero(cols);
  const Vector log_a = a.array().log();
  const Vector log_b = b.array().log();

  Matrix exponent(rows, cols);
  bool converged = false;
  int iters = 0;
  for (; iters < cfg.max_iters;) {
    ++iters;
    for (int i = 0; i < rows; ++i)
      f(i) = eps * log_a(i) - eps * lse((g.transpose() - cost.row(i)) / eps);
    for (int j = 0; j < cols; ++j)
      g(j) = eps * log_b(j) -
             eps * lse(((f - cost.col(j)) / eps).transpose());
    // Columns are exact after the g update; measure the row violation.
    double row_violation = 0.0;
    for (int i = 0; i < rows; ++i) {
      const double row_sum =
          std::exp(lse((g.transpose().array() - cost.row(i).array() + f(i))
                           .matrix() /
                       eps));
      row_violation = std::max(row_violation, std::abs(row_sum - a(i)));
    }
    if (row_violation <= cfg.tolerance) {
      converged = true;
      break;
    }
  }

  for (int i = 0; i < rows; ++i)
    exponent.row(i) = (g.transpose().array() - cost.row(i).array() + f(i)) / eps;
  Matrix plan = exponent.array().exp();
  if (!plan.allFinite())
    throw NumericalError("sinkhorn: non-finite transport plan in log domain");
  TransportPlan out{std::move(plan), a, b, 0.0};
  out.residual = plan_residual(out.entries, a, b);
  return SinkhornResult{std::move(out), converged, iters};
}

}  // namespace

void FeatureMatrix::validate() const {
  if (data.rows() == 0 || data.cols() == 0)
    throw ValidationError("feature matrix: empty");
  if (!data.allFinite())
    throw ValidationError("feature matrix: non-finite entries");
  if (normalized) {
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      if (std::abs(data.row(r).norm() - 1.0) > 1e-9)
        throw ValidationError(
            "feature matrix: normalized flag set but row norm deviates from 1");
    }
  }
}

FeatureMatrix FeatureMatrix::normalized_rows(Matrix m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw ValidationError("normalized_rows: zero or non-finite row");
    m.row(r) /= n;
  }
  return FeatureMatrix{std::move(m), true};
}

void CostMatrix::validate() const {
  if (entries.rows() == 0 || entries.cols() == 0)
    throw ValidationError("cost matrix: empty");
  if (!entries.allFinite())
    throw ValidationError("cost matrix: non-finite entries");
}

void TransportPlan::validate() const {
  if (entries.rows() != row_marginal.size() ||
      entries.cols() != col_marginal.size())
    throw ValidationError("transport plan: marginal sizes do not match");
  if (!entries.allFinite() || entries.minCoeff() < 0.0)
    throw ValidationError("transport plan: entries must be finite and >= 0");
}

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw ValidationError("sinkhorn config: epsilon must be positive");
  if (max_iters < 1)
    throw ValidationError("sinkhorn config: max_iters must be >= 1");
  if (!(tolerance > 0.0) || !std::isfinite(tolerance))
    throw ValidationError("sinkhorn config: tolerance must be positive");
}

CostMatrix build_cost_matrix(const FeatureMatrix& prototypes,
                             const FeatureMatrix& samples,
                             double temperature) {
  prototypes.validate();
  samples.validate();
  if (!prototypes.normalized || !samples.normalized)
    throw ValidationError(
        "build_cost_matrix: inputs must carry the normalized flag");
  if (prototypes.dim() != samples.dim())
    throw ValidationError("build_cost_matrix: dimension mismatch");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ValidationError("build_cost_matrix: temperature must be positive");

  Matrix z = (prototypes.data * samples.data.transpose()) / temperature;
  // cost(c, j) = -log softmax_c(z(:, j)), evaluated in log space so extreme
  // temperatures cannot underflow a probability to zero.
  Matrix cost(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double m = z.col(j).maxCoeff();
    const double log_denom =
        m + std::log((z.col(j).array() - m).exp().sum());
    cost.col(j) = (log_denom - z.col(j).array()).matrix();
  }
  CostMatrix out{std::move(cost)};
  out.validate();
  return out;
}

SinkhornResult sinkhorn(const CostMatrix& cost, const Vector& row_marginal,
                        const Vector& col_marginal,
                        const SinkhornConfig& config) {
  cost.validate();
  config.validate();
  check_marginals(row_marginal, col_marginal, cost.class_count(),
                  cost.sample_count());
  return config.use_log_domain()
             ? sinkhorn_log(cost.entries, row_marginal, col_marginal, config)
             : sinkhorn_standard(cost.entries, row_marginal, col_marginal,
                                 config);
}

SinkhornResult solve_prompt_ot(const FeatureMatrix& prototypes,
                               const FeatureMatrix& samples,
                               const SinkhornConfig& config,
                               double temperature) {
  const CostMatrix cost = build_cost_matrix(prototypes, samples, temperature);
  const int c = cost.class_count();
  const int n = cost.sample_count();
  const Vector a = Vector::Constant(c, 1.0 / c);
  const Vector b = Vector::Constant(n, 1.0 / n);
  return sinkhorn(cost, a, b, config);
}

std::vector<int> pseudo_labels(const TransportPlan& plan) {
  plan.validate();
  std::vector<int> labels(static_cast<std::size_t>(plan.entries.cols()));
  for (Eigen::Index j = 0; j < plan.entries.cols(); ++j) {
    int best = 0;
    double best_mass = plan.entries(0, j);
    for (Eigen::Index c = 1; c < plan.entries.rows(); ++c) {
      if (plan.entries(c, j) > best_mass) {
        best_mass = plan.entries(c, j);
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(j)] = best;
  }
  return labels;
}

AssignmentResult lp_oracle(const CostMatrix& cost, const Vector& row_marginal,
                           const Vector& col_marginal) {
  cost.validate();
  const int n = cost.class_count();
  if (cost.sample_count() != n)
    throw ValidationError("lp_oracle: instance must be square");
  if (n > 8) throw ValidationError("lp_oracle: instance larger than 8x8");
  check_marginals(row_marginal, col_marginal, n, n);
  const double w = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    if (std::abs(row_marginal(i) - w) > 1e-12 ||
        std::abs(col_marginal(i) - w) > 1e-12)
      throw ValidationError("lp_oracle: marginals must be uniform");
  }

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_sum = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += cost.entries(i, perm[i]);
    if (s < best_sum) {
      best_sum = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  Matrix plan = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) plan(i, best[i]) = w;
  TransportPlan tp{std::move(plan), row_marginal, col_marginal, 0.0};
  tp.residual = plan_residual(tp.entries, row_marginal, col_marginal);
  return AssignmentResult{std::move(tp), best_sum * w, std::move(best)};
}

double transport_objective(const CostMatrix& cost, const TransportPlan& plan) {
  if (cost.entries.rows() != plan.entries.rows() ||
      cost.entries.cols() != plan.entries.cols())
    throw ValidationError("transport_objective: shape mismatch");
  return (cost.entries.array() * plan.entries.array()).sum();
}

}  // namespace nlprompt
