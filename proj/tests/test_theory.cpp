#include <doctest.h>

#include <cmath>

#include "nlprompt/theory.hpp"

using namespace nlprompt;

namespace {

// mu = (1, 0, 0), one irrelevant direction xi = (0, 1, 0), zero prompts.
PromptModel tiny_model() {
  PromptModel model;
  model.basis.latent_dim = 3;
  model.basis.vectors.resize(2, 3);
  model.basis.vectors << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  model.p = Vector::Zero(4);
  model.p0 = Vector::Zero(4);
  model.p_plus = Vector::Zero(4);
  model.p_minus = Vector::Zero(4);
  return model;
}

TheoryConfig small_config() {
  TheoryConfig config;
  config.latent_dim = 16;
  config.irrelevant_count = 5;
  config.train_size = 64;
  config.test_size = 256;
  config.iterations = 50;
  config.seed = 11;
  return config;
}

}  // namespace

TEST_CASE("random orthogonal bases have the requested geometry") {
  SplitMix64 rng(5);
  const FeatureBasis basis = FeatureBasis::random_orthogonal(12, 4, 2.0, 0.5, rng);
  CHECK(basis.latent_dim == 12);
  CHECK(basis.irrelevant_count() == 4);
  CHECK(basis.mu().norm() == doctest::Approx(2.0).epsilon(1e-12));
  for (int l = 0; l < 4; ++l) {
    CHECK(basis.xi(l).norm() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(basis.mu().dot(basis.xi(l))) < 1e-9);
  }
  CHECK_NOTHROW(basis.validate());
  CHECK_THROWS_AS(FeatureBasis::random_orthogonal(4, 4, 1.0, 1.0, rng),
                  ValidationError);
  CHECK_THROWS_AS(FeatureBasis::random_orthogonal(8, 2, 0.0, 1.0, rng),
                  ValidationError);
}

TEST_CASE("generated prompt models satisfy the separability convention") {
  TheoryConfig config = small_config();
  SplitMix64 rng(9);
  const PromptModel model = make_prompt_model(config, rng);
  CHECK_NOTHROW(model.validate());
  CHECK(model.p == model.p0);
  const int m = model.basis.latent_dim;
  const double up = model.basis.mu().dot(model.p_plus.head(m));
  const double um = model.basis.mu().dot(model.p_minus.head(m));
  CHECK(up > 0.0);
  CHECK(um < 0.0);
  // The aligned component sits exactly at the configured scale.
  const double mu_norm = model.basis.mu().norm();
  CHECK(up / mu_norm ==
        doctest::Approx(config.class_prompt_scale).epsilon(1e-9));
  CHECK(um / mu_norm ==
        doctest::Approx(-config.class_prompt_scale).epsilon(1e-9));
}

TEST_CASE("text encoding vanishes at p = 0 and is linear without class prompts") {
  PromptModel model = tiny_model();
  CHECK(text_encode(model, 1).norm() == 0.0);
  CHECK(text_encode(model, -1).norm() == 0.0);

  model.p << 0.3, -0.2, 0.7, 0.1;
  const Vector expected = model.basis.vectors * model.p.head(3);
  CHECK((text_encode(model, 1) - expected).norm() < 1e-15);
  CHECK((text_encode(model, -1) - expected).norm() < 1e-15);

  CHECK_THROWS_AS(text_encode(model, 0), ValidationError);
  CHECK_THROWS_AS(text_encode(model, 2), ValidationError);
}

TEST_CASE("forward produces a two-class softmax over similarities") {
  TheoryConfig config = small_config();
  SplitMix64 rng(13);
  const PromptModel model = make_prompt_model(config, rng);
  const auto batch = sample_dataset(4, 0.25, 0.5, config.irrelevant_count, 51);

  for (const auto& sample : batch) {
    const ForwardResult out = forward(model, sample);
    CHECK(out.probs.size() == 2);
    CHECK(out.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
    Vector logits(2);
    logits << out.sims[0], out.sims[1];
    CHECK((out.probs - softmax(logits)).cwiseAbs().maxCoeff() < 1e-15);

    // Single-sample batch losses agree with the forward probabilities.
    const int idx = sample.y_observed > 0 ? 0 : 1;
    CHECK(batch_loss(model, {sample}, GradientLoss::ce) ==
          doctest::Approx(-std::log(out.probs(idx))).epsilon(1e-10));
    CHECK(batch_loss(model, {sample}, GradientLoss::mae) ==
          doctest::Approx(2.0 * (1.0 - out.probs(idx))).epsilon(1e-10));
  }
}

TEST_CASE("sampled datasets carry the class signal and the noise rate") {
  const auto samples = sample_dataset(20000, 0.3, 0.5, 6, 77);
  CHECK(samples.size() == 20000);
  int flips = 0;
  int positives = 0;
  for (const auto& s : samples) {
    CHECK(s.g.size() == 7);
    CHECK(s.g(0) == double(s.y_true));
    if (s.y_observed != s.y_true) ++flips;
    if (s.y_true == 1) ++positives;
  }
  CHECK(flips / 20000.0 >= 0.28);
  CHECK(flips / 20000.0 <= 0.32);
  CHECK(positives / 20000.0 >= 0.48);
  CHECK(positives / 20000.0 <= 0.52);

  // sigma_p = 0 zeroes every irrelevant coordinate.
  for (const auto& s : sample_dataset(50, 0.0, 0.0, 3, 78)) {
    CHECK(s.g.tail(3).norm() == 0.0);
    CHECK(s.y_observed == s.y_true);
  }

  CHECK_THROWS_AS(sample_dataset(0, 0.1, 0.5, 3, 1), ValidationError);
  CHECK_THROWS_AS(sample_dataset(10, 0.1, -0.5, 3, 1), ValidationError);
  CHECK_THROWS_AS(sample_dataset(10, 0.1, 0.5, -1, 1), ValidationError);
  CHECK_THROWS_AS(sample_dataset(10, 0.6, 0.5, 3, 1), ValidationError);
}

TEST_CASE("analytic gradients match central differences away from kinks") {
  TheoryConfig config = small_config();
  const double h = 1e-5;

  PromptModel model;
  std::vector<SyntheticSample> batch;
  bool found = false;
  for (std::uint64_t seed = 1; seed <= 50 && !found; ++seed) {
    SplitMix64 rng(seed);
    model = make_prompt_model(config, rng);
    batch = sample_dataset(12, 0.3, 0.5, config.irrelevant_count, seed + 100);
    found = min_preactivation_gap(model) > 1e-4;
  }
  REQUIRE(found);

  for (GradientLoss kind : {GradientLoss::ce, GradientLoss::mae}) {
    const Vector grad = analytic_gradient(model, batch, kind);
    for (int k = 0; k < model.prompt_dim(); ++k) {
      PromptModel plus = model;
      plus.p(k) += h;
      PromptModel minus = model;
      minus.p(k) -= h;
      const double fd = (batch_loss(plus, batch, kind) -
                         batch_loss(minus, batch, kind)) /
                        (2.0 * h);
      CHECK(std::abs(fd - grad(k)) <= 1e-5 * std::max(1.0, std::abs(grad(k))));
    }
    // The appended bias coordinate never enters the encoder.
    CHECK(grad(model.prompt_dim() - 1) == 0.0);
  }
}

TEST_CASE("literal-paper encoder mode changes the gradient") {
  TheoryConfig config = small_config();
  SplitMix64 rng(17);
  const PromptModel model = make_prompt_model(config, rng);
  const auto batch = sample_dataset(16, 0.3, 0.5, config.irrelevant_count, 18);
  const Vector derivative = analytic_gradient(
      model, batch, GradientLoss::mae, EncoderDerivativeMode::derivative);
  const Vector literal = analytic_gradient(
      model, batch, GradientLoss::mae, EncoderDerivativeMode::literal_paper);
  CHECK((derivative - literal).norm() > 1e-6);
}

TEST_CASE("prompt decomposition recovers the planted coefficients") {
  PromptModel model = tiny_model();
  Vector p0(4);
  p0 << 0.0, 0.0, 1.0, 5.0;

  // p equal to embedded mu: alpha = 0, beta = |mu|^2.
  Vector p(4);
  p << 1.0, 0.0, 0.0, 0.0;
  auto decomp = decompose_prompt(p, p0, model.basis);
  CHECK(decomp.alpha == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(decomp.beta == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(decomp.phis(0) == doctest::Approx(0.0).epsilon(1e-12));

  // p equal to p0 itself: alpha = 1 and nothing else.
  decomp = decompose_prompt(p0, p0, model.basis);
  CHECK(decomp.alpha == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(decomp.beta == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(decomp.phis.cwiseAbs().maxCoeff() < 1e-12);

  // Degenerate p0 inside the basis span is rejected.
  Vector planar(4);
  planar << 3.0, -2.0, 0.0, 0.0;
  CHECK_THROWS_AS(decompose_prompt(p, planar, model.basis), ValidationError);
  CHECK_THROWS_AS(decompose_prompt(Vector::Zero(3), p0, model.basis),
                  ValidationError);
}

TEST_CASE("decompose and reconstruct round-trip") {
  TheoryConfig config = small_config();
  SplitMix64 rng(23);
  const PromptModel model = make_prompt_model(config, rng);

  PromptDecomposition planted;
  planted.alpha = -0.7;
  planted.beta = 2.25;
  planted.phis.resize(config.irrelevant_count);
  for (int l = 0; l < config.irrelevant_count; ++l)
    planted.phis(l) = std::sin(1.0 + l);

  const Vector p = reconstruct_prompt(planted, model.p0, model.basis);
  const auto recovered = decompose_prompt(p, model.p0, model.basis);
  CHECK(recovered.alpha == doctest::Approx(planted.alpha).epsilon(1e-10));
  CHECK(recovered.beta == doctest::Approx(planted.beta).epsilon(1e-10));
  CHECK((recovered.phis - planted.phis).cwiseAbs().maxCoeff() < 1e-10);

  PromptDecomposition bad = planted;
  bad.phis.resize(config.irrelevant_count + 1);
  CHECK_THROWS_AS(reconstruct_prompt(bad, model.p0, model.basis),
                  ValidationError);
}

TEST_CASE("predicted coefficient updates match an actual gradient step") {
  TheoryConfig config = small_config();
  SplitMix64 rng(29);
  PromptModel model = make_prompt_model(config, rng);
  const auto batch = sample_dataset(32, 0.3, 0.5, config.irrelevant_count, 30);
  const double eta = 0.05;

  for (GradientLoss kind : {GradientLoss::ce, GradientLoss::mae}) {
    const auto before = decompose_prompt(model.p, model.p0, model.basis);
    const CoefficientDelta predicted =
        predicted_coefficient_update(model, batch, kind, eta);

    PromptModel stepped = model;
    stepped.p -= eta * analytic_gradient(model, batch, kind);
    const auto after = decompose_prompt(stepped.p, stepped.p0, stepped.basis);

    CHECK(after.alpha == doctest::Approx(before.alpha).epsilon(1e-10));
    CHECK(after.beta - before.beta ==
          doctest::Approx(predicted.beta).epsilon(1e-8));
    CHECK((after.phis - before.phis - predicted.phis).cwiseAbs().maxCoeff() <
          1e-8);
  }
  CHECK_THROWS_AS(predicted_coefficient_update(model, batch, GradientLoss::ce, 0.0),
                  ValidationError);
}

TEST_CASE("clean labels grow beta and flipped labels shrink it") {
  TheoryConfig config = small_config();
  SplitMix64 rng(31);
  const PromptModel model = make_prompt_model(config, rng);

  auto batch = sample_dataset(64, 0.0, 0.5, config.irrelevant_count, 32);
  const auto clean =
      predicted_coefficient_update(model, batch, GradientLoss::mae, 0.01);
  CHECK(clean.beta > 0.0);

  for (auto& s : batch) s.y_observed = -s.y_true;
  const auto flipped =
      predicted_coefficient_update(model, batch, GradientLoss::mae, 0.01);
  CHECK(flipped.beta < 0.0);
}

TEST_CASE("zero training iterations record exactly the initial point") {
  TheoryConfig config = small_config();
  config.iterations = 0;
  const PromptTrajectory traj = train_prompt(config);
  CHECK_FALSE(traj.diverged);
  REQUIRE(traj.points.size() == 1);
  CHECK(traj.final_point().alpha == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(traj.final_point().beta) < 1e-10);
  CHECK(traj.model.p == traj.model.p0);
}

TEST_CASE("training is deterministic and tracks beta upward on clean data") {
  TheoryConfig config = small_config();
  config.noise_rate = 0.0;
  config.iterations = 100;

  const PromptTrajectory traj = train_prompt(config);
  CHECK_FALSE(traj.diverged);
  REQUIRE(traj.points.size() == 101);
  for (std::size_t t = 1; t < traj.points.size(); ++t)
    CHECK(traj.points[t].beta >= traj.points[t - 1].beta - 1e-9);
  CHECK(traj.final_point().beta > traj.points[0].beta);
  CHECK(traj.final_point().test_error <= traj.points[0].test_error);
  CHECK(traj.final_point().mean_s_y > traj.points[0].mean_s_y);
  CHECK(traj.final_point().train_loss < traj.points[0].train_loss);

  const PromptTrajectory again = train_prompt(config);
  CHECK(again.final_point().beta == traj.final_point().beta);
  CHECK(again.final_point().train_loss == traj.final_point().train_loss);
}

TEST_CASE("trained prompts stay in the span captured by the decomposition") {
  TheoryConfig config = small_config();
  config.noise_rate = 0.3;
  const PromptTrajectory traj = train_prompt(config);
  const auto decomp =
      decompose_prompt(traj.model.p, traj.model.p0, traj.model.basis);
  const Vector rebuilt =
      reconstruct_prompt(decomp, traj.model.p0, traj.model.basis);
  CHECK((rebuilt - traj.model.p).norm() <= 1e-6 * traj.model.p.norm());
}

TEST_CASE("test loss anchors") {
  TheoryConfig config = small_config();
  SplitMix64 rng(37);
  PromptModel model = make_prompt_model(config, rng);
  const auto test = sample_dataset(2000, 0.0, 0.5, config.irrelevant_count, 38);

  // The zero prompt predicts +1 everywhere: error = share of -1 labels.
  model.p = Vector::Zero(model.prompt_dim());
  int negatives = 0;
  for (const auto& s : test)
    if (s.y_true == -1) ++negatives;
  CHECK(measure_test_loss(model, test) == negatives / 2000.0);

  // Duplicating the set leaves the error unchanged.
  auto doubled = test;
  doubled.insert(doubled.end(), test.begin(), test.end());
  CHECK(measure_test_loss(model, doubled) == measure_test_loss(model, test));

  // A prompt aligned with mu separates the classes perfectly.
  const int m = model.basis.latent_dim;
  model.p = Vector::Zero(model.prompt_dim());
  model.p.head(m) =
      50.0 * model.basis.mu().transpose() / model.basis.mu().squaredNorm();
  CHECK(measure_test_loss(model, test) == 0.0);

  CHECK_THROWS_AS(measure_test_loss(model, {}), ValidationError);
}

TEST_CASE("expected update ratios match the closed forms") {
  const UpdateRatios ratios = expected_update_ratios(0.8, 0.1);
  CHECK(ratios.reference == doctest::Approx(0.625).epsilon(1e-13));
  CHECK(ratios.beta_ratio == doctest::Approx(0.390625).epsilon(1e-13));
  CHECK(ratios.phi_ratio == doctest::Approx(0.4375).epsilon(1e-13));
  CHECK_FALSE(ratios.beta_claim_holds);
  CHECK(ratios.phi_claim_holds);
  CHECK_FALSE(ratios.separation_holds);

  // Without noise both ratios collapse onto the reference.
  const UpdateRatios clean = expected_update_ratios(0.8, 0.0);
  CHECK(clean.beta_ratio == doctest::Approx(clean.reference).epsilon(1e-13));
  CHECK(clean.phi_ratio == doctest::Approx(clean.reference).epsilon(1e-13));
  CHECK_FALSE(clean.beta_claim_holds);
  CHECK_FALSE(clean.phi_claim_holds);

  CHECK_THROWS_AS(expected_update_ratios(0.5, 0.1), ValidationError);
  CHECK_THROWS_AS(expected_update_ratios(1.0, 0.1), ValidationError);
  CHECK_THROWS_AS(expected_update_ratios(0.8, 0.5), ValidationError);
  CHECK_THROWS_AS(expected_update_ratios(0.8, -0.1), ValidationError);
  CHECK_THROWS_AS(expected_update_ratios(0.75, 0.25), ValidationError);
}

TEST_CASE("config validation rejects out-of-range settings") {
  TheoryConfig config = small_config();
  config.latent_dim = config.irrelevant_count;
  CHECK_THROWS_AS(config.validate(), ValidationError);
  config = small_config();
  config.noise_rate = 0.6;
  CHECK_THROWS_AS(config.validate(), ValidationError);
  config = small_config();
  config.eta = 0.0;
  CHECK_THROWS_AS(config.validate(), ValidationError);
  config = small_config();
  config.iterations = -1;
  CHECK_THROWS_AS(config.validate(), ValidationError);
  config = small_config();
  config.iterations = 0;
  CHECK_NOTHROW(config.validate());
}

TEST_CASE("the theorem suite favors MAE under label noise") {
  TheoryConfig base;
  base.seed = 7;
  const TheoremCheckResult result = run_theorem_suite(base, 10, 2);
  REQUIRE(result.outcomes.size() == 10);
  CHECK(result.mae_wins >= 9);
  CHECK(result.mean_mae_error < result.mean_ce_error);
  for (const auto& outcome : result.outcomes) {
    CHECK_FALSE(outcome.mae_diverged);
    CHECK_FALSE(outcome.ce_diverged);
  }

  // Scheduling across a different thread count cannot change the outcomes.
  const TheoremCheckResult serial = run_theorem_suite(base, 10, 1);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(serial.outcomes[k].seed == result.outcomes[k].seed);
    CHECK(serial.outcomes[k].mae_error == result.outcomes[k].mae_error);
    CHECK(serial.outcomes[k].ce_beta == result.outcomes[k].ce_beta);
  }
  CHECK_THROWS_AS(run_theorem_suite(base, 0, 1), ValidationError);
}
