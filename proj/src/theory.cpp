#include "nlprompt/theory.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace nlprompt {

namespace {

// W p, W p_plus, W p_minus; every encoder quantity derives from these.
struct EncoderState {
  Vector a;
  Vector bp;
  Vector bm;
};

EncoderState compute_state(const PromptModel& model) {
  const int m = model.basis.latent_dim;
  return EncoderState{model.basis.vectors * model.p.head(m),
                      model.basis.vectors * model.p_plus.head(m),
                      model.basis.vectors * model.p_minus.head(m)};
}

Vector encode_from_state(const EncoderState& st, int sign) {
  const Vector& b = sign > 0 ? st.bp : st.bm;
  return (st.a + b).cwiseMax(0.0) - (b - st.a).cwiseMax(0.0);
}

double lse2(double x, double y) {
  const double m = std::max(x, y);
  return m + std::log(std::exp(x - m) + std::exp(y - m));
}

// P(observed class) from the two similarities, evaluated stably.
double observed_probability(double sim_obs, double sim_other) {
  const double t = sim_obs - sim_other;
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// Label-independent sigma' factor per basis row: the observed-label version
// is obs * this vector in both derivative and literal modes.
Vector sigma_factor(const EncoderState& st, EncoderDerivativeMode mode) {
  const auto rows = st.a.size();
  Vector out(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (mode == EncoderDerivativeMode::derivative) {
      const auto ind = [](double t) { return t > 0.0 ? 1.0 : 0.0; };
      out(r) = ind(st.a(r) + st.bp(r)) + ind(st.bp(r) - st.a(r)) -
               ind(st.a(r) + st.bm(r)) - ind(st.bm(r) - st.a(r));
    } else {
      const auto relu = [](double t) { return t > 0.0 ? t : 0.0; };
      out(r) = relu(st.a(r) + st.bp(r)) + relu(st.bp(r) - st.a(r)) -
               relu(st.a(r) + st.bm(r)) - relu(st.bm(r) - st.a(r));
    }
  }
  return out;
}

double mean_observed_probability(const PromptModel& model,
                                 const std::vector<SyntheticSample>& batch) {
  const EncoderState st = compute_state(model);
  const Vector hp = encode_from_state(st, 1);
  const Vector hm = encode_from_state(st, -1);
  double total = 0.0;
  for (const auto& s : batch) {
    const double sim_p = s.g.dot(hp);
    const double sim_m = s.g.dot(hm);
    total += s.y_observed > 0 ? observed_probability(sim_p, sim_m)
                              : observed_probability(sim_m, sim_p);
  }
  return total / static_cast<double>(batch.size());
}

void check_batch(const PromptModel& model,
                 const std::vector<SyntheticSample>& batch) {
  if (batch.empty()) throw ValidationError("theory: empty batch");
  const auto expected = static_cast<Eigen::Index>(model.basis.vectors.rows());
  for (const auto& s : batch) {
    if (s.g.size() != expected)
      throw ValidationError("theory: sample feature size does not match basis");
    if (s.y_true != 1 && s.y_true != -1)
      throw ValidationError("theory: labels must be +1 or -1");
    if (s.y_observed != 1 && s.y_observed != -1)
      throw ValidationError("theory: labels must be +1 or -1");
  }
}

}  // namespace

void FeatureBasis::validate() const {
  if (vectors.rows() < 1 || vectors.cols() < 1)
    throw ValidationError("feature basis: empty");
  if (latent_dim != static_cast<int>(vectors.cols()))
    throw ValidationError("feature basis: latent_dim does not match columns");
  if (vectors.rows() > vectors.cols())
    throw ValidationError(
        "feature basis: more directions than dimensions (need m >= L + 1)");
  if (!vectors.allFinite())
    throw ValidationError("feature basis: non-finite entries");
  for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
    const double nr = vectors.row(r).norm();
    if (!(nr > 0.0)) throw ValidationError("feature basis: zero row");
    for (Eigen::Index s = r + 1; s < vectors.rows(); ++s) {
      const double dot = vectors.row(r).dot(vectors.row(s));
      if (std::abs(dot) > 1e-9 * nr * vectors.row(s).norm())
        throw ValidationError("feature basis: rows are not orthogonal");
    }
  }
}

FeatureBasis FeatureBasis::random_orthogonal(int latent_dim,
                                             int irrelevant_count,
                                             double mu_norm, double xi_norm,
                                             SplitMix64& rng) {
  const int rows = irrelevant_count + 1;
  if (latent_dim < rows)
    throw ValidationError(
        "random_orthogonal: latent_dim must be at least irrelevant_count + 1");
  if (!(mu_norm > 0.0) || !(xi_norm > 0.0))
    throw ValidationError("random_orthogonal: norms must be positive");

  FeatureBasis basis;
  basis.latent_dim = latent_dim;
  basis.vectors.resize(rows, latent_dim);
  for (int r = 0; r < rows; ++r) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 100)
        throw NumericalError("random_orthogonal: failed to draw an independent row");
      for (int c = 0; c < latent_dim; ++c)
        basis.vectors(r, c) = rng.next_gaussian();
      // Two Gram-Schmidt passes keep the pairwise dot products near machine
      // precision even for nearly dependent draws.
      for (int pass = 0; pass < 2; ++pass) {
        for (int s = 0; s < r; ++s) {
          const double coef = basis.vectors.row(r).dot(basis.vectors.row(s)) /
                              basis.vectors.row(s).squaredNorm();
          basis.vectors.row(r) -= coef * basis.vectors.row(s);
        }
      }
      const double n = basis.vectors.row(r).norm();
      if (n > 1e-8) {
        basis.vectors.row(r) *= (r == 0 ? mu_norm : xi_norm) / n;
        break;
      }
    }
  }
  basis.validate();
  return basis;
}

void PromptModel::validate() const {
  basis.validate();
  const auto d = static_cast<Eigen::Index>(prompt_dim());
  if (p.size() != d || p0.size() != d || p_plus.size() != d ||
      p_minus.size() != d)
    throw ValidationError("prompt model: vector sizes do not match m + 1");
  const int m = basis.latent_dim;
  const double up = basis.mu().dot(p_plus.head(m));
  const double um = basis.mu().dot(p_minus.head(m));
  if (up < -1e-12 || um > 1e-12)
    throw ValidationError(
        "prompt model: class prompts violate mu.p_plus >= 0 >= mu.p_minus");
}

void TheoryConfig::validate() const {
  if (latent_dim < irrelevant_count + 1)
    throw ValidationError("theory config: latent_dim must be >= irrelevant_count + 1");
  if (irrelevant_count < 0)
    throw ValidationError("theory config: irrelevant_count must be >= 0");
  if (train_size < 1 || test_size < 1)
    throw ValidationError("theory config: dataset sizes must be positive");
  if (!(noise_rate >= 0.0) || noise_rate > 0.5)
    throw ValidationError("theory config: noise_rate must lie in [0, 1/2]");
  if (!(sigma_p >= 0.0) || !(sigma_0 >= 0.0))
    throw ValidationError("theory config: sigmas must be non-negative");
  if (!(eta > 0.0)) throw ValidationError("theory config: eta must be positive");
  if (iterations < 0)
    throw ValidationError("theory config: iterations must be >= 0");
  if (!(mu_norm > 0.0) || !(xi_norm > 0.0) || !(class_prompt_scale > 0.0))
    throw ValidationError("theory config: norms and scales must be positive");
}

PromptModel make_prompt_model(const TheoryConfig& config, SplitMix64& rng) {
  PromptModel model;
  model.basis = FeatureBasis::random_orthogonal(
      config.latent_dim, config.irrelevant_count, config.mu_norm,
      config.xi_norm, rng);
  const int d = model.basis.latent_dim + 1;
  const int m = model.basis.latent_dim;

  auto draw = [&](double scale) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = scale * rng.next_gaussian();
    return v;
  };
  model.p0 = draw(config.sigma_0);

  // Class prompts carry +-class_prompt_scale along mu plus a unit-scale
  // random remainder. A1's separability is then a real margin: the mu-row
  // gates sit at +-scale, so beta can grow until the class margin is O(scale)
  // instead of freezing at an O(1/sqrt(d)) accident of the draw, while the
  // xi-row gates stay O(1) and leave the noise-fitting channel open.
  Vector mu_hat = Vector::Zero(d);
  mu_hat.head(m) = model.basis.mu().transpose() / model.basis.mu().norm();
  model.p_plus = draw(1.0);
  model.p_minus = draw(1.0);
  model.p_plus +=
      (config.class_prompt_scale - model.p_plus.dot(mu_hat)) * mu_hat;
  model.p_minus -=
      (config.class_prompt_scale + model.p_minus.dot(mu_hat)) * mu_hat;

  model.p = model.p0;
  model.validate();
  return model;
}

Vector text_encode(const PromptModel& model, int class_sign) {
  if (class_sign != 1 && class_sign != -1)
    throw ValidationError("text_encode: class sign must be +1 or -1");
  return encode_from_state(compute_state(model), class_sign);
}

std::vector<SyntheticSample> sample_dataset(int count, double noise_rate,
                                            double sigma_p,
                                            int irrelevant_count,
                                            std::uint64_t seed) {
  if (count < 1) throw ValidationError("sample_dataset: count must be >= 1");
  if (irrelevant_count < 0)
    throw ValidationError("sample_dataset: irrelevant_count must be >= 0");
  if (!(sigma_p >= 0.0))
    throw ValidationError("sample_dataset: sigma_p must be non-negative");

  SplitMix64 rng(seed);
  std::vector<SyntheticSample> samples(static_cast<std::size_t>(count));
  std::vector<int> ys(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto& s = samples[static_cast<std::size_t>(i)];
    s.y_true = rng.next_below(2) == 0 ? 1 : -1;
    ys[static_cast<std::size_t>(i)] = s.y_true;
    s.g.resize(irrelevant_count + 1);
    s.g(0) = static_cast<double>(s.y_true);
    for (int l = 1; l <= irrelevant_count; ++l)
      s.g(l) = sigma_p * rng.next_gaussian();
  }
  const std::vector<int> observed =
      rademacher_flip(ys, noise_rate, SplitMix64::derive(seed, 1));
  for (int i = 0; i < count; ++i)
    samples[static_cast<std::size_t>(i)].y_observed =
        observed[static_cast<std::size_t>(i)];
  return samples;
}

ForwardResult forward(const PromptModel& model, const SyntheticSample& sample) {
  check_batch(model, {sample});
  const EncoderState st = compute_state(model);
  ForwardResult out;
  out.sims[0] = sample.g.dot(encode_from_state(st, 1));
  out.sims[1] = sample.g.dot(encode_from_state(st, -1));
  Vector logits(2);
  logits << out.sims[0], out.sims[1];
  out.probs = softmax(logits);
  return out;
}

double batch_loss(const PromptModel& model,
                  const std::vector<SyntheticSample>& batch,
                  GradientLoss kind) {
  check_batch(model, batch);
  const EncoderState st = compute_state(model);
  const Vector hp = encode_from_state(st, 1);
  const Vector hm = encode_from_state(st, -1);

  double total = 0.0;
  for (const auto& s : batch) {
    const double sim_p = s.g.dot(hp);
    const double sim_m = s.g.dot(hm);
    const double sim_obs = s.y_observed > 0 ? sim_p : sim_m;
    const double sim_other = s.y_observed > 0 ? sim_m : sim_p;
    if (kind == GradientLoss::ce) {
      total += lse2(sim_p, sim_m) - sim_obs;
    } else {
      total += 2.0 * (1.0 - observed_probability(sim_obs, sim_other));
    }
  }
  return total / static_cast<double>(batch.size());
}

Vector analytic_gradient(const PromptModel& model,
                         const std::vector<SyntheticSample>& batch,
                         GradientLoss kind, EncoderDerivativeMode mode) {
  check_batch(model, batch);
  const EncoderState st = compute_state(model);
  const Vector hp = encode_from_state(st, 1);
  const Vector hm = encode_from_state(st, -1);
  const Vector factor = sigma_factor(st, mode);

  // coeff_r = -(1/n) sum_i l'_i obs_i g_{r,i} * factor_r; the observed label
  // enters only as the sign in front of the shared factor.
  Vector weighted = Vector::Zero(model.basis.vectors.rows());
  for (const auto& s : batch) {
    const double sim_p = s.g.dot(hp);
    const double sim_m = s.g.dot(hm);
    const double sim_obs = s.y_observed > 0 ? sim_p : sim_m;
    const double sim_other = s.y_observed > 0 ? sim_m : sim_p;
    const double s_obs = observed_probability(sim_obs, sim_other);
    const double coef = gradient_coefficient(
        s_obs, kind == GradientLoss::ce ? GradientLoss::ce : GradientLoss::mae);
    weighted += (coef * s.y_observed / static_cast<double>(batch.size())) * s.g;
  }
  const Vector coeff = -factor.cwiseProduct(weighted);

  Vector grad = Vector::Zero(model.prompt_dim());
  grad.head(model.basis.latent_dim) = model.basis.vectors.transpose() * coeff;
  return grad;
}

double min_preactivation_gap(const PromptModel& model) {
  const EncoderState st = compute_state(model);
  double gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < st.a.size(); ++r) {
    gap = std::min({gap, std::abs(st.a(r) + st.bp(r)),
                    std::abs(st.bp(r) - st.a(r)),
                    std::abs(st.a(r) + st.bm(r)),
                    std::abs(st.bm(r) - st.a(r))});
  }
  return gap;
}

PromptDecomposition decompose_prompt(const Vector& p, const Vector& p0,
                                     const FeatureBasis& basis) {
  basis.validate();
  const int m = basis.latent_dim;
  const auto d = static_cast<Eigen::Index>(m + 1);
  if (p.size() != d || p0.size() != d)
    throw ValidationError("decompose_prompt: prompt size must be m + 1");

  // Component of p0 orthogonal to the basis span; the alpha direction.
  Vector u = p0;
  for (Eigen::Index r = 0; r < basis.vectors.rows(); ++r) {
    const double coef = basis.vectors.row(r).dot(p0.head(m)) /
                        basis.vectors.row(r).squaredNorm();
    u.head(m) -= coef * basis.vectors.row(r).transpose();
  }
  const double u_norm = u.norm();
  if (u_norm <= 1e-12 * std::max(1.0, p0.norm()))
    throw ValidationError(
        "decompose_prompt: degenerate basis (p0 lies in the basis span)");

  PromptDecomposition out;
  out.alpha = p.dot(u) / u.squaredNorm();
  const Vector r = p - out.alpha * p0;
  out.beta = basis.mu().dot(r.head(m));
  out.phis.resize(basis.irrelevant_count());
  for (int l = 0; l < basis.irrelevant_count(); ++l)
    out.phis(l) = basis.xi(l).dot(r.head(m));
  return out;
}

Vector reconstruct_prompt(const PromptDecomposition& decomposition,
                          const Vector& p0, const FeatureBasis& basis) {
  basis.validate();
  const int m = basis.latent_dim;
  if (p0.size() != m + 1)
    throw ValidationError("reconstruct_prompt: p0 size must be m + 1");
  if (decomposition.phis.size() != basis.irrelevant_count())
    throw ValidationError("reconstruct_prompt: phi count does not match basis");

  Vector p = decomposition.alpha * p0;
  p.head(m) +=
      (decomposition.beta / basis.mu().squaredNorm()) * basis.mu().transpose();
  for (int l = 0; l < basis.irrelevant_count(); ++l)
    p.head(m) += (decomposition.phis(l) / basis.xi(l).squaredNorm()) *
                 basis.xi(l).transpose();
  return p;
}

CoefficientDelta predicted_coefficient_update(
    const PromptModel& model, const std::vector<SyntheticSample>& batch,
    GradientLoss kind, double eta) {
  check_batch(model, batch);
  if (!(eta > 0.0))
    throw ValidationError("predicted_coefficient_update: eta must be positive");
  const EncoderState st = compute_state(model);
  const Vector hp = encode_from_state(st, 1);
  const Vector hm = encode_from_state(st, -1);
  const Vector factor = sigma_factor(st, EncoderDerivativeMode::derivative);
  const int L = model.basis.irrelevant_count();
  const double n = static_cast<double>(batch.size());

  CoefficientDelta delta;
  delta.phis = Vector::Zero(L);
  for (const auto& s : batch) {
    const double sim_p = s.g.dot(hp);
    const double sim_m = s.g.dot(hm);
    const double sim_obs = s.y_observed > 0 ? sim_p : sim_m;
    const double sim_other = s.y_observed > 0 ? sim_m : sim_p;
    const double coef = gradient_coefficient(
        observed_probability(sim_obs, sim_other), kind);
    const double common = eta / n * coef * s.y_observed;
    delta.beta += common * s.g(0) * factor(0) * model.basis.mu().squaredNorm();
    for (int l = 0; l < L; ++l)
      delta.phis(l) += common * s.g(l + 1) * factor(l + 1) *
                       model.basis.xi(l).squaredNorm();
  }
  return delta;
}

PromptTrajectory train_prompt(const TheoryConfig& config) {
  config.validate();

  SplitMix64 model_rng(SplitMix64::derive(config.seed, 0));
  PromptTrajectory traj;
  traj.config = config;
  traj.model = make_prompt_model(config, model_rng);
  const auto train = sample_dataset(config.train_size, config.noise_rate,
                                    config.sigma_p, config.irrelevant_count,
                                    SplitMix64::derive(config.seed, 1));
  const auto test =
      sample_dataset(config.test_size, 0.0, config.sigma_p,
                     config.irrelevant_count, SplitMix64::derive(config.seed, 2));

  traj.points.reserve(static_cast<std::size_t>(config.iterations) + 1);
  for (int t = 0;; ++t) {
    TrajectoryPoint point;
    const PromptDecomposition decomp =
        decompose_prompt(traj.model.p, traj.model.p0, traj.model.basis);
    point.alpha = decomp.alpha;
    point.beta = decomp.beta;
    point.phis = decomp.phis;
    point.train_loss = batch_loss(traj.model, train, config.loss);
    point.test_error = measure_test_loss(traj.model, test);
    point.mean_s_y = mean_observed_probability(traj.model, train);
    traj.points.push_back(std::move(point));

    if (!std::isfinite(traj.points.back().train_loss) ||
        !traj.model.p.allFinite()) {
      traj.diverged = true;
      traj.diverged_at = t;
      break;
    }
    if (t == config.iterations) break;
    traj.model.p -=
        config.eta * analytic_gradient(traj.model, train, config.loss);
  }
  return traj;
}

double measure_test_loss(const PromptModel& model,
                         const std::vector<SyntheticSample>& test_set) {
  check_batch(model, test_set);
  const EncoderState st = compute_state(model);
  const Vector hp = encode_from_state(st, 1);
  const Vector hm = encode_from_state(st, -1);
  long errors = 0;
  for (const auto& s : test_set) {
    const int predicted = s.g.dot(hp) >= s.g.dot(hm) ? 1 : -1;
    if (predicted != s.y_true) ++errors;
  }
  return static_cast<double>(errors) / static_cast<double>(test_set.size());
}

UpdateRatios expected_update_ratios(double mean_s_y, double noise_rate) {
  if (!(mean_s_y > 0.5) || !(mean_s_y < 1.0))
    throw ValidationError(
        "expected_update_ratios: mean_s_y must lie in (1/2, 1)");
  if (!(noise_rate >= 0.0) || noise_rate >= 0.5)
    throw ValidationError(
        "expected_update_ratios: noise_rate must lie in [0, 1/2)");
  if (noise_rate >= 1.0 - mean_s_y)
    throw ValidationError(
        "expected_update_ratios: noise_rate must be below 1 - mean_s_y");

  const double e = mean_s_y;
  const double p = noise_rate;
  UpdateRatios out;
  out.reference = 1.0 / (2.0 * e);
  out.beta_ratio = (1.0 - p / (1.0 - e)) / ((1.0 - 2.0 * p) * 2.0 * e);
  out.phi_ratio = (1.0 - p * (2.0 * e - 1.0) / (1.0 - e)) / (2.0 * e);
  out.beta_claim_holds = out.beta_ratio > out.reference;
  out.phi_claim_holds = out.phi_ratio < out.reference;
  out.separation_holds = out.beta_ratio > out.phi_ratio;
  return out;
}

TheoremCheckResult run_theorem_suite(const TheoryConfig& base, int seed_count,
                                     int threads) {
  if (seed_count < 1)
    throw ValidationError("run_theorem_suite: seed_count must be >= 1");
  base.validate();

  TheoremCheckResult result;
  result.outcomes.resize(static_cast<std::size_t>(seed_count));

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= seed_count) return;
      const std::uint64_t seed_k = SplitMix64::derive(base.seed, static_cast<std::uint64_t>(k));
      TheoryConfig cfg = base;
      cfg.seed = seed_k;

      cfg.loss = GradientLoss::mae;
      const PromptTrajectory mae = train_prompt(cfg);
      cfg.loss = GradientLoss::ce;
      const PromptTrajectory ce = train_prompt(cfg);

      auto& out = result.outcomes[static_cast<std::size_t>(k)];
      out.seed = seed_k;
      out.mae_error = mae.final_point().test_error;
      out.ce_error = ce.final_point().test_error;
      out.mae_beta = mae.final_point().beta;
      out.ce_beta = ce.final_point().beta;
      out.mae_phi_max = mae.final_point().phis.size()
                            ? mae.final_point().phis.cwiseAbs().maxCoeff()
                            : 0.0;
      out.ce_phi_max = ce.final_point().phis.size()
                           ? ce.final_point().phis.cwiseAbs().maxCoeff()
                           : 0.0;
      out.mae_diverged = mae.diverged;
      out.ce_diverged = ce.diverged;
    }
  };

  int worker_count = threads > 0 ? threads
                                 : static_cast<int>(std::max(
                                       1u, std::thread::hardware_concurrency()));
  worker_count = std::min(worker_count, seed_count);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(worker_count));
  for (int i = 0; i < worker_count; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (const auto& o : result.outcomes) {
    if (o.mae_error <= o.ce_error) ++result.mae_wins;
    result.mean_mae_error += o.mae_error;
    result.mean_ce_error += o.ce_error;
  }
  result.mean_mae_error /= static_cast<double>(seed_count);
  result.mean_ce_error /= static_cast<double>(seed_count);
  return result;
}

}  // namespace nlprompt
