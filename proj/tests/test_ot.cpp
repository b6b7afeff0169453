#include <doctest.h>

#include <cmath>
#include <cstring>

#include "nlprompt/ot.hpp"

using namespace nlprompt;

namespace {

Vector uniform(int n) { return Vector::Constant(n, 1.0 / n); }

FeatureMatrix random_unit_rows(int rows, int dim, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix m(rows, dim);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = rng.next_gaussian();
  return FeatureMatrix::normalized_rows(std::move(m));
}

CostMatrix random_cost(int rows, int cols, std::uint64_t seed) {
  SplitMix64 rng(seed);
  CostMatrix cost;
  cost.entries.resize(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) cost.entries(i, j) = rng.next_double();
  return cost;
}

double max_marginal_violation(const TransportPlan& plan) {
  const Vector row_err =
      (plan.entries.rowwise().sum() - plan.row_marginal).cwiseAbs();
  const Vector col_err =
      (plan.entries.colwise().sum().transpose() - plan.col_marginal).cwiseAbs();
  return std::max(row_err.maxCoeff(), col_err.maxCoeff());
}

}  // namespace

TEST_CASE("cost matrix of a singleton is zero") {
  Matrix one(1, 3);
  one << 1.0, 0.0, 0.0;
  const FeatureMatrix f{one, true};
  const CostMatrix cost = build_cost_matrix(f, f, 1.0);
  CHECK(cost.entries(0, 0) == 0.0);
}

TEST_CASE("cost column for a sample equal to one of two orthonormal prototypes") {
  Matrix protos(2, 2);
  protos << 1.0, 0.0, 0.0, 1.0;
  Matrix sample(1, 2);
  sample << 1.0, 0.0;
  const CostMatrix cost =
      build_cost_matrix({protos, true}, {sample, true}, 1.0);
  // Column softmax of (1, 0): p = (e/(e+1), 1/(e+1)).
  CHECK(cost.entries(0, 0) == doctest::Approx(0.3132616875182228).epsilon(1e-13));
  CHECK(cost.entries(1, 0) == doctest::Approx(1.3132616875182228).epsilon(1e-13));
}

TEST_CASE("exp(-cost) columns sum to one") {
  const FeatureMatrix protos = random_unit_rows(3, 6, 21);
  const FeatureMatrix samples = random_unit_rows(5, 6, 22);
  for (double temperature : {1.0, 0.2, 5.0}) {
    const CostMatrix cost = build_cost_matrix(protos, samples, temperature);
    CHECK(cost.entries.minCoeff() >= 0.0);
    const Matrix probs = (-cost.entries.array()).exp();
    for (int j = 0; j < 5; ++j)
      CHECK(probs.col(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cost matrix construction rejects bad inputs") {
  const FeatureMatrix protos = random_unit_rows(3, 6, 30);
  const FeatureMatrix other_dim = random_unit_rows(4, 5, 31);
  CHECK_THROWS_AS(build_cost_matrix(protos, other_dim, 1.0), ValidationError);

  FeatureMatrix raw = random_unit_rows(4, 6, 32);
  raw.normalized = false;
  CHECK_THROWS_AS(build_cost_matrix(protos, raw, 1.0), ValidationError);
  CHECK_THROWS_AS(build_cost_matrix(protos, protos, 0.0), ValidationError);
}

TEST_CASE("sinkhorn on a constant cost gives the product plan") {
  CostMatrix cost;
  cost.entries = Matrix::Constant(2, 2, 3.7);
  const auto result = sinkhorn(cost, uniform(2), uniform(2), {});
  REQUIRE(result.converged);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(result.plan.entries(i, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("single-row plans are fully determined by the column marginal") {
  const CostMatrix cost = random_cost(1, 6, 40);
  Vector row(1);
  row << 1.0;
  const auto result = sinkhorn(cost, row, uniform(6), {});
  REQUIRE(result.converged);
  for (int j = 0; j < 6; ++j)
    CHECK(result.plan.entries(0, j) ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-9));
}

TEST_CASE("small epsilon recovers the exact matching") {
  CostMatrix cost;
  cost.entries.resize(2, 2);
  cost.entries << 0.0, 1.0, 1.0, 0.0;
  SinkhornConfig config;
  config.epsilon = 1e-3;
  const auto result = sinkhorn(cost, uniform(2), uniform(2), config);
  REQUIRE(result.converged);
  CHECK(std::abs(result.plan.entries(0, 0) - 0.5) < 1e-3);
  CHECK(std::abs(result.plan.entries(0, 1) - 0.0) < 1e-3);
  CHECK(std::abs(result.plan.entries(1, 0) - 0.0) < 1e-3);
  CHECK(std::abs(result.plan.entries(1, 1) - 0.5) < 1e-3);

  const auto oracle = lp_oracle(cost, uniform(2), uniform(2));
  CHECK(oracle.objective == 0.0);
  CHECK(std::abs(result.plan.entries(0, 0) - oracle.plan.entries(0, 0)) < 1e-3);
}

TEST_CASE("sinkhorn validates marginals") {
  const CostMatrix cost = random_cost(3, 4, 50);
  Vector bad_sum = uniform(3);
  bad_sum(0) += 0.1;
  CHECK_THROWS_AS(sinkhorn(cost, bad_sum, uniform(4), {}), ValidationError);

  Vector with_zero = uniform(3);
  with_zero(1) = 0.0;
  with_zero(0) += 1.0 / 3.0;
  CHECK_THROWS_AS(sinkhorn(cost, with_zero, uniform(4), {}), ValidationError);
  CHECK_THROWS_AS(sinkhorn(cost, uniform(4), uniform(4), {}), ValidationError);
}

TEST_CASE("standard domain underflows where the log domain survives") {
  // Shifting every cost by a constant leaves the entropic plan unchanged but
  // pushes the whole standard-domain kernel exp(-cost/eps) below the double
  // underflow floor.
  const CostMatrix base = random_cost(4, 4, 60);
  CostMatrix shifted = base;
  shifted.entries.array() += 100.0;
  SinkhornConfig config;
  config.epsilon = 0.1;

  config.log_domain = false;
  CHECK_THROWS_AS(sinkhorn(shifted, uniform(4), uniform(4), config),
                  NumericalError);

  config.log_domain = true;
  const auto survivor = sinkhorn(shifted, uniform(4), uniform(4), config);
  REQUIRE(survivor.converged);
  CHECK(max_marginal_violation(survivor.plan) <= config.tolerance * 1.0001);

  config.log_domain = false;
  const auto reference = sinkhorn(base, uniform(4), uniform(4), config);
  REQUIRE(reference.converged);
  CHECK((survivor.plan.entries - reference.plan.entries).cwiseAbs().maxCoeff() <
        1e-8);
}

TEST_CASE("standard and log domains agree where both are stable") {
  const CostMatrix cost = random_cost(5, 7, 70);
  SinkhornConfig config;
  config.epsilon = 0.05;
  config.log_domain = false;
  const auto standard = sinkhorn(cost, uniform(5), uniform(7), config);
  config.log_domain = true;
  const auto logdom = sinkhorn(cost, uniform(5), uniform(7), config);
  REQUIRE(standard.converged);
  REQUIRE(logdom.converged);
  CHECK((standard.plan.entries - logdom.plan.entries).cwiseAbs().maxCoeff() <
        1e-8);
}

TEST_CASE("sinkhorn is bitwise deterministic") {
  const CostMatrix cost = random_cost(6, 9, 80);
  SinkhornConfig config;
  config.epsilon = 0.02;
  const auto a = sinkhorn(cost, uniform(6), uniform(9), config);
  const auto b = sinkhorn(cost, uniform(6), uniform(9), config);
  REQUIRE(a.plan.entries.size() == b.plan.entries.size());
  CHECK(std::memcmp(a.plan.entries.data(), b.plan.entries.data(),
                    sizeof(double) * a.plan.entries.size()) == 0);
  CHECK(a.iterations == b.iterations);
  CHECK(a.plan.residual == b.plan.residual);
}

TEST_CASE("converged plans satisfy the marginal feasibility invariant") {
  SplitMix64 seeds(90);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 2 + int(seeds.next_below(8));
    const int cols = 2 + int(seeds.next_below(12));
    const CostMatrix cost = random_cost(rows, cols, seeds.next_u64());
    SinkhornConfig config;
    if (trial % 2 == 0) {
      config.epsilon = 0.1;
    } else {
      // Near-degenerate instances make the residual decay like 1/t at sharp
      // epsilon, so these trials ask for a reachable tolerance.
      config.epsilon = 0.005;
      config.tolerance = 1e-6;
      config.max_iters = 1000000;
    }
    const auto result = sinkhorn(cost, uniform(rows), uniform(cols), config);
    REQUIRE(result.converged);
    CHECK(result.plan.entries.minCoeff() >= 0.0);
    CHECK(result.plan.entries.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(max_marginal_violation(result.plan) <= config.tolerance * 1.0001);
    CHECK(max_marginal_violation(result.plan) <=
          result.plan.residual + 1e-15);
  }
}

TEST_CASE("objective decreases with epsilon toward the oracle") {
  for (std::uint64_t seed : {101ULL, 102ULL, 103ULL}) {
    const CostMatrix cost = random_cost(4, 4, seed);
    const auto oracle = lp_oracle(cost, uniform(4), uniform(4));
    double previous = std::numeric_limits<double>::infinity();
    for (double epsilon : {1.0, 0.1, 0.01, 0.001}) {
      SinkhornConfig config;
      config.epsilon = epsilon;
      config.tolerance = 1e-6;
      config.max_iters = 2000000;
      const auto result = sinkhorn(cost, uniform(4), uniform(4), config);
      REQUIRE(result.converged);
      const double objective = transport_objective(cost, result.plan);
      // The residual tolerance perturbs the objective by at most a few times
      // n * tolerance * max cost.
      CHECK(objective <= previous + 1e-5);
      CHECK(objective >= oracle.objective - 1e-5);
      previous = objective;
    }
    CHECK(previous - oracle.objective < 1e-2);
  }
}

TEST_CASE("entropic gap is bounded on small square instances") {
  SplitMix64 seeds(202);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + int(seeds.next_below(5));
    const CostMatrix cost = random_cost(n, n, seeds.next_u64());
    const auto oracle = lp_oracle(cost, uniform(n), uniform(n));
    for (double epsilon : {0.1, 0.01, 0.001}) {
      SinkhornConfig config;
      config.epsilon = epsilon;
      config.tolerance = 1e-6;
      config.max_iters = 2000000;
      const auto result = sinkhorn(cost, uniform(n), uniform(n), config);
      REQUIRE(result.converged);
      const double gap =
          transport_objective(cost, result.plan) - oracle.objective;
      // A plan that meets the marginals only to the residual tolerance can
      // dip slightly below the exact optimum.
      CHECK(gap >= -1e-5);
      CHECK(gap <= 10.0 * epsilon * std::abs(std::log(double(n) * n)));
    }
  }
}

TEST_CASE("prompt OT on a singleton concentrates all mass") {
  const FeatureMatrix f = random_unit_rows(1, 4, 300);
  const auto result = solve_prompt_ot(f, f, {}, 1.0);
  REQUIRE(result.converged);
  CHECK(result.plan.entries(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("prompt OT matches samples to their own prototypes") {
  Matrix protos(2, 3);
  protos << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  const FeatureMatrix f{protos, true};
  const auto result = solve_prompt_ot(f, f, {}, 1.0);
  REQUIRE(result.converged);
  CHECK(result.plan.entries(0, 0) > result.plan.entries(0, 1));
  CHECK(result.plan.entries(1, 1) > result.plan.entries(1, 0));

  // The exact solver agrees on the constructed cost.
  const auto oracle =
      lp_oracle(build_cost_matrix(f, f, 1.0), uniform(2), uniform(2));
  CHECK(oracle.assignment[0] == 0);
  CHECK(oracle.assignment[1] == 1);
}

TEST_CASE("prompt OT row sums equal 1/C") {
  const FeatureMatrix protos = random_unit_rows(4, 8, 310);
  const FeatureMatrix samples = random_unit_rows(19, 8, 311);
  const auto result = solve_prompt_ot(protos, samples, {}, 1.0);
  REQUIRE(result.converged);
  for (int c = 0; c < 4; ++c)
    CHECK(result.plan.entries.row(c).sum() ==
          doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("pseudo labels take the column argmax with low-index ties") {
  TransportPlan plan;
  plan.entries.resize(2, 1);
  plan.entries << 0.6, 0.4;
  plan.row_marginal = uniform(2);
  plan.col_marginal = uniform(1);
  CHECK(pseudo_labels(plan) == std::vector<int>{0});

  plan.entries << 0.5, 0.5;
  CHECK(pseudo_labels(plan) == std::vector<int>{0});
}

TEST_CASE("identity-favoring cost decodes to the identity labeling") {
  CostMatrix cost;
  cost.entries = Matrix::Constant(3, 3, 1.0);
  cost.entries.diagonal().setZero();
  SinkhornConfig config;
  config.epsilon = 0.05;
  const auto result = sinkhorn(cost, uniform(3), uniform(3), config);
  REQUIRE(result.converged);
  CHECK(pseudo_labels(result.plan) == std::vector<int>{0, 1, 2});
}

TEST_CASE("decoding is invariant to positive rescaling of the plan") {
  const CostMatrix cost = random_cost(5, 11, 320);
  const auto result = sinkhorn(cost, uniform(5), uniform(11), {});
  REQUIRE(result.converged);
  const auto labels = pseudo_labels(result.plan);
  for (double scale : {1e-6, 3.0, 1e6}) {
    TransportPlan scaled = result.plan;
    scaled.entries *= scale;
    scaled.row_marginal *= scale;
    scaled.col_marginal *= scale;
    CHECK(pseudo_labels(scaled) == labels);
  }
}

TEST_CASE("lp_oracle solves the cross matching") {
  CostMatrix cost;
  cost.entries.resize(2, 2);
  cost.entries << 0.0, 1.0, 1.0, 0.0;
  const auto result = lp_oracle(cost, uniform(2), uniform(2));
  CHECK(result.objective == 0.0);
  CHECK(result.plan.entries(0, 0) == 0.5);
  CHECK(result.plan.entries(0, 1) == 0.0);
  CHECK(result.plan.entries(1, 1) == 0.5);
}

TEST_CASE("lp_oracle breaks constant-cost ties lexicographically") {
  CostMatrix cost;
  cost.entries = Matrix::Constant(3, 3, 1.0);
  const auto result = lp_oracle(cost, uniform(3), uniform(3));
  CHECK(result.objective == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(result.assignment == std::vector<int>{0, 1, 2});
}

TEST_CASE("lp_oracle rejects out-of-scope instances") {
  CHECK_THROWS_AS(lp_oracle(random_cost(3, 4, 330), uniform(3), uniform(4)),
                  ValidationError);
  CHECK_THROWS_AS(lp_oracle(random_cost(9, 9, 331), uniform(9), uniform(9)),
                  ValidationError);
  Vector skew(2);
  skew << 0.7, 0.3;
  CHECK_THROWS_AS(lp_oracle(random_cost(2, 2, 332), skew, uniform(2)),
                  ValidationError);
}

TEST_CASE("cost matrices accept negative entries but not non-finite ones") {
  CostMatrix cost;
  cost.entries.resize(2, 2);
  cost.entries << -1.0, 0.5, 2.0, -0.25;
  CHECK_NOTHROW(cost.validate());
  const auto result = sinkhorn(cost, uniform(2), uniform(2), {});
  CHECK(result.converged);

  cost.entries(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(cost.validate(), ValidationError);
  cost.entries(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(cost.validate(), ValidationError);
}

TEST_CASE("feature matrix validation enforces the normalized flag") {
  Matrix rows(2, 2);
  rows << 3.0, 4.0, 1.0, 0.0;
  FeatureMatrix f{rows, true};
  CHECK_THROWS_AS(f.validate(), ValidationError);

  const FeatureMatrix normalized = FeatureMatrix::normalized_rows(rows);
  CHECK_NOTHROW(normalized.validate());
  CHECK(normalized.data.row(0).norm() == doctest::Approx(1.0).epsilon(1e-12));

  Matrix zero_row = Matrix::Zero(1, 3);
  CHECK_THROWS_AS(FeatureMatrix::normalized_rows(zero_row), ValidationError);
}
