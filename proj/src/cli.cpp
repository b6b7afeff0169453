#include "nlprompt/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nlprompt/report.hpp"
#include "nlprompt/theory.hpp"

namespace nlprompt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// === shared helpers ===

std::optional<bool> tri_state(const std::string& value) {
  if (value == "auto") return std::nullopt;
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ValidationError("log-domain must be auto, on or off");
}

EmbeddingFileFormat format_from(const std::string& name) {
  if (name == "binary") return EmbeddingFileFormat::binary;
  if (name == "sidecar") return EmbeddingFileFormat::json_sidecar;
  throw ValidationError("format must be binary or sidecar");
}

NoiseKind noise_kind_from(const std::string& name) {
  if (name == "symmetric") return NoiseKind::symmetric;
  if (name == "asymmetric") return NoiseKind::asymmetric;
  if (name == "rademacher") return NoiseKind::rademacher;
  throw ValidationError("noise kind must be symmetric, asymmetric or rademacher");
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ValidationError("write failed: " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing file: " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_manifest(const fs::path& path, const std::string& command,
                    const json& options) {
  const json manifest{{"schema", kManifestSchema},
                      {"tool_version", kToolVersion},
                      {"rng_algorithm", kRngAlgorithm},
                      {"command", command},
                      {"options", options}};
  write_text_file(path, manifest.dump(2) + "\n");
}

SinkhornConfig sinkhorn_from(double epsilon, int max_iters, double tolerance,
                             const std::string& log_domain) {
  SinkhornConfig cfg;
  cfg.epsilon = epsilon;
  cfg.max_iters = max_iters;
  cfg.tolerance = tolerance;
  cfg.log_domain = tri_state(log_domain);
  return cfg;
}

// === synth ===

struct SynthOptions {
  int classes = 10;
  int per_class = 40;
  int test_per_class = 0;
  int dim = 64;
  double tightness = 4.0;
  std::uint64_t seed = 1;
  std::string out;
  std::string prototypes_out;
  std::string test_out;
  std::string format = "binary";
};

void to_json(json& j, const SynthOptions& o) {
  j = json{{"classes", o.classes},       {"per_class", o.per_class},
           {"test_per_class", o.test_per_class},
           {"dim", o.dim},               {"tightness", o.tightness},
           {"seed", o.seed},             {"out", o.out},
           {"prototypes_out", o.prototypes_out}, {"test_out", o.test_out},
           {"format", o.format}};
}

void from_json(const json& j, SynthOptions& o) {
  j.at("classes").get_to(o.classes);
  j.at("per_class").get_to(o.per_class);
  o.test_per_class = j.value("test_per_class", 0);
  j.at("dim").get_to(o.dim);
  j.at("tightness").get_to(o.tightness);
  j.at("seed").get_to(o.seed);
  j.at("out").get_to(o.out);
  j.at("prototypes_out").get_to(o.prototypes_out);
  o.test_out = j.value("test_out", std::string{});
  j.at("format").get_to(o.format);
}

// Class-major row selection: of every per-class block, keep [first, count).
LabeledDataset select_block(const LabeledDataset& all, int block, int first,
                            int count) {
  LabeledDataset out;
  out.class_count = all.class_count;
  out.rng_seed = all.rng_seed;
  out.features.normalized = all.features.normalized;
  out.features.data.resize(
      static_cast<Eigen::Index>(all.class_count) * count,
      all.features.data.cols());
  Eigen::Index row = 0;
  for (int c = 0; c < all.class_count; ++c) {
    for (int k = 0; k < count; ++k, ++row) {
      const Eigen::Index source =
          static_cast<Eigen::Index>(c) * block + first + k;
      out.features.data.row(row) = all.features.data.row(source);
      out.observed_labels.push_back(all.observed_labels[
          static_cast<std::size_t>(source)]);
    }
  }
  out.true_labels = out.observed_labels;
  return out;
}

int cmd_synth(SynthOptions opts) {
  if (opts.test_per_class < 0)
    throw ValidationError("synth: test-per-class must be >= 0");
  if (opts.prototypes_out.empty()) opts.prototypes_out = opts.out + ".protos";
  if (opts.test_per_class > 0 && opts.test_out.empty())
    opts.test_out = opts.out + ".test";
  const auto made = make_synthetic_embeddings(
      opts.classes, opts.per_class + opts.test_per_class, opts.dim,
      opts.tightness, opts.seed);
  for (const auto& w : made.warnings) std::cerr << "warning: " << w << "\n";
  const auto format = format_from(opts.format);
  if (opts.test_per_class > 0) {
    const int block = opts.per_class + opts.test_per_class;
    save_features(opts.out, select_block(made.dataset, block, 0,
                                         opts.per_class), format);
    save_features(opts.test_out,
                  select_block(made.dataset, block, opts.per_class,
                               opts.test_per_class), format);
  } else {
    save_features(opts.out, made.dataset, format);
  }
  save_prototypes(opts.prototypes_out, made.prototypes, format);
  write_manifest(opts.out + ".manifest.json", "synth", json(opts));
  std::cout << "synth: wrote "
            << opts.classes * opts.per_class << " samples ("
            << opts.classes << " classes, dim " << opts.dim << ") to "
            << opts.out;
  if (opts.test_per_class > 0)
    std::cout << " and " << opts.classes * opts.test_per_class
              << " matched test samples to " << opts.test_out;
  std::cout << "\n";
  return 0;
}

// === noise ===

struct NoiseOptions {
  std::string in;
  std::string out;
  std::string kind = "symmetric";
  double rate = 0.2;
  std::uint64_t seed = 1;
  std::string format = "binary";
};

void to_json(json& j, const NoiseOptions& o) {
  j = json{{"in", o.in},     {"out", o.out},   {"kind", o.kind},
           {"rate", o.rate}, {"seed", o.seed}, {"format", o.format}};
}

void from_json(const json& j, NoiseOptions& o) {
  j.at("in").get_to(o.in);
  j.at("out").get_to(o.out);
  j.at("kind").get_to(o.kind);
  j.at("rate").get_to(o.rate);
  j.at("seed").get_to(o.seed);
  j.at("format").get_to(o.format);
}

int cmd_noise(const NoiseOptions& opts) {
  const LabeledDataset dataset = load_features(opts.in);
  const NoiseSpec spec{noise_kind_from(opts.kind), opts.rate, opts.seed};
  const LabeledDataset noised = apply_noise(dataset, spec);
  save_features(opts.out, noised, format_from(opts.format));
  write_manifest(opts.out + ".manifest.json", "noise", json(opts));
  long flips = 0;
  for (int i = 0; i < noised.size(); ++i)
    if (noised.observed_labels[static_cast<std::size_t>(i)] !=
        dataset.observed_labels[static_cast<std::size_t>(i)])
      ++flips;
  std::cout << "noise: flipped " << flips << "/" << noised.size()
            << " labels (" << opts.kind << ", rate " << format_g6(opts.rate)
            << ") into " << opts.out << "\n";
  return 0;
}

// === purify ===

struct PurifyOptions {
  std::string data;
  std::string prototypes;
  double temperature = 1.0;
  double epsilon = 0.05;
  int sinkhorn_iters = 10000;
  double sinkhorn_tol = 1e-9;
  std::string log_domain = "auto";
  std::string out_dir;
};

void to_json(json& j, const PurifyOptions& o) {
  j = json{{"data", o.data},
           {"prototypes", o.prototypes},
           {"temperature", o.temperature},
           {"epsilon", o.epsilon},
           {"sinkhorn_iters", o.sinkhorn_iters},
           {"sinkhorn_tol", o.sinkhorn_tol},
           {"log_domain", o.log_domain},
           {"out_dir", o.out_dir}};
}

void from_json(const json& j, PurifyOptions& o) {
  j.at("data").get_to(o.data);
  j.at("prototypes").get_to(o.prototypes);
  j.at("temperature").get_to(o.temperature);
  j.at("epsilon").get_to(o.epsilon);
  j.at("sinkhorn_iters").get_to(o.sinkhorn_iters);
  j.at("sinkhorn_tol").get_to(o.sinkhorn_tol);
  j.at("log_domain").get_to(o.log_domain);
  j.at("out_dir").get_to(o.out_dir);
}

int cmd_purify(const PurifyOptions& opts) {
  const LabeledDataset dataset = load_features(opts.data);
  const FeatureMatrix prototypes = load_prototypes(opts.prototypes);
  const SinkhornConfig cfg = sinkhorn_from(opts.epsilon, opts.sinkhorn_iters,
                                           opts.sinkhorn_tol, opts.log_domain);
  const SinkhornResult ot =
      solve_prompt_ot(prototypes, dataset.features, cfg, opts.temperature);
  if (!ot.converged)
    std::cerr << "warning: sinkhorn hit max_iters, residual "
              << ot.plan.residual << "\n";
  const PartitionResult part = partition(
      dataset.observed_labels, pseudo_labels(ot.plan), dataset.class_count);

  json summary{{"schema", "nlprompt-partition-v1"},
               {"clean_indices", part.clean_indices},
               {"noisy_indices", part.noisy_indices},
               {"pseudo_labels", part.pseudo},
               {"histogram", part.histogram},
               {"sinkhorn_converged", ot.converged},
               {"sinkhorn_iterations", ot.iterations},
               {"sinkhorn_residual", ot.plan.residual}};
  std::ostringstream line;
  line << "purify: clean " << part.clean_indices.size() << ", noisy "
       << part.noisy_indices.size();
  if (dataset.true_labels) {
    const PurificationScore score = score_purification(
        part, *dataset.true_labels, dataset.observed_labels);
    summary["scores"] = {{"accuracy", score.accuracy}, {"f1", score.f1},
                         {"tp", score.tp},             {"fp", score.fp},
                         {"fn", score.fn},             {"tn", score.tn}};
    line << ", accuracy " << format_g6(score.accuracy) << ", f1 "
         << format_g6(score.f1);
  }
  std::cout << line.str() << "\n";

  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    write_text_file(fs::path(opts.out_dir) / "partition.json",
                    summary.dump(2) + "\n");
    write_manifest(fs::path(opts.out_dir) / "manifest.json", "purify",
                   json(opts));
  }
  return 0;
}

// === train ===

struct TrainCliOptions {
  std::string data;
  std::string prototypes;
  std::string test;
  std::string out_dir;
  std::vector<std::string> modes = {"nlprompt"};
  int epochs = 50;
  double learning_rate = 0.002;
  bool no_anneal = false;
  double temperature = 1.0;
  double logit_scale = 100.0;
  double epsilon = 0.05;
  int sinkhorn_iters = 10000;
  double sinkhorn_tol = 1e-9;
  std::string log_domain = "auto";
  double gce_q = 0.7;
  std::string noise_kind = "symmetric";
  std::vector<double> noise_rates = {0.0};
  int shots = 0;
  std::vector<std::uint64_t> seeds = {1};
  std::string granularity = "dataset";
  int batch_size = 0;
  bool no_clamp_ce = false;
  int threads = 0;
};

void to_json(json& j, const TrainCliOptions& o) {
  j = json{{"data", o.data},
           {"prototypes", o.prototypes},
           {"test", o.test},
           {"out_dir", o.out_dir},
           {"modes", o.modes},
           {"epochs", o.epochs},
           {"learning_rate", o.learning_rate},
           {"no_anneal", o.no_anneal},
           {"temperature", o.temperature},
           {"logit_scale", o.logit_scale},
           {"epsilon", o.epsilon},
           {"sinkhorn_iters", o.sinkhorn_iters},
           {"sinkhorn_tol", o.sinkhorn_tol},
           {"log_domain", o.log_domain},
           {"gce_q", o.gce_q},
           {"noise_kind", o.noise_kind},
           {"noise_rates", o.noise_rates},
           {"shots", o.shots},
           {"seeds", o.seeds},
           {"granularity", o.granularity},
           {"batch_size", o.batch_size},
           {"no_clamp_ce", o.no_clamp_ce},
           {"threads", o.threads}};
}

void from_json(const json& j, TrainCliOptions& o) {
  j.at("data").get_to(o.data);
  j.at("prototypes").get_to(o.prototypes);
  j.at("test").get_to(o.test);
  j.at("out_dir").get_to(o.out_dir);
  j.at("modes").get_to(o.modes);
  j.at("epochs").get_to(o.epochs);
  j.at("learning_rate").get_to(o.learning_rate);
  j.at("no_anneal").get_to(o.no_anneal);
  j.at("temperature").get_to(o.temperature);
  j.at("logit_scale").get_to(o.logit_scale);
  j.at("epsilon").get_to(o.epsilon);
  j.at("sinkhorn_iters").get_to(o.sinkhorn_iters);
  j.at("sinkhorn_tol").get_to(o.sinkhorn_tol);
  j.at("log_domain").get_to(o.log_domain);
  j.at("gce_q").get_to(o.gce_q);
  j.at("noise_kind").get_to(o.noise_kind);
  j.at("noise_rates").get_to(o.noise_rates);
  j.at("shots").get_to(o.shots);
  j.at("seeds").get_to(o.seeds);
  j.at("granularity").get_to(o.granularity);
  j.at("batch_size").get_to(o.batch_size);
  j.at("no_clamp_ce").get_to(o.no_clamp_ce);
  j.at("threads").get_to(o.threads);
}

ExperimentConfig experiment_config_from(const TrainCliOptions& opts) {
  ExperimentConfig cfg;
  cfg.epochs = opts.epochs;
  cfg.learning_rate = opts.learning_rate;
  cfg.cosine_anneal = !opts.no_anneal;
  cfg.temperature = opts.temperature;
  cfg.logit_scale = opts.logit_scale;
  cfg.sinkhorn = sinkhorn_from(opts.epsilon, opts.sinkhorn_iters,
                               opts.sinkhorn_tol, opts.log_domain);
  cfg.gce_q = opts.gce_q;
  cfg.noise.kind = noise_kind_from(opts.noise_kind);
  cfg.noise.rate = 0.0;
  cfg.shots = opts.shots;
  if (opts.granularity == "dataset")
    cfg.granularity = PartitionGranularity::dataset;
  else if (opts.granularity == "batch")
    cfg.granularity = PartitionGranularity::batch;
  else
    throw ValidationError("granularity must be dataset or batch");
  cfg.batch_size = opts.batch_size;
  cfg.clamp_ce = !opts.no_clamp_ce;
  cfg.seeds = opts.seeds;
  cfg.output_dir = opts.out_dir;
  return cfg;
}

int cmd_train(const TrainCliOptions& opts) {
  const LabeledDataset data = load_features(opts.data);
  const LabeledDataset test = load_features(opts.test);
  const FeatureMatrix prototypes = load_prototypes(opts.prototypes);
  const ExperimentConfig base = experiment_config_from(opts);
  std::vector<TrainMode> modes;
  modes.reserve(opts.modes.size());
  for (const auto& name : opts.modes) modes.push_back(mode_from_name(name));

  const auto grid =
      run_grid(data, test, prototypes, base, modes, opts.noise_rates,
               opts.threads);

  std::vector<MetricsRecord> records;
  bool aborted = false;
  for (const auto& job : grid) {
    records.insert(records.end(), job.result.records.begin(),
                   job.result.records.end());
    for (const auto& w : job.result.warnings)
      std::cerr << "warning: [" << mode_name(job.mode) << " rate "
                << format_g6(job.noise_rate) << " seed " << job.seed << "] "
                << w << "\n";
    if (job.result.aborted) {
      aborted = true;
      std::cerr << "error: [" << mode_name(job.mode) << " rate "
                << format_g6(job.noise_rate) << " seed " << job.seed
                << "] aborted at epoch " << job.result.abort_epoch << ": "
                << job.result.abort_reason << "\n";
    }
  }

  fs::create_directories(opts.out_dir);
  emit_report(records, fs::path(opts.out_dir) / "metrics.csv",
              ReportFormat::csv);
  emit_report(records, fs::path(opts.out_dir) / "metrics.jsonl",
              ReportFormat::json_lines);
  emit_report(records, fs::path(opts.out_dir) / "plot.svg",
              ReportFormat::svg_plot);
  write_manifest(fs::path(opts.out_dir) / "manifest.json", "train",
                 json(opts));

  for (TrainMode mode : modes) {
    for (double rate : opts.noise_rates) {
      double sum = 0.0;
      int count = 0;
      for (const auto& job : grid) {
        if (job.mode != mode || job.noise_rate != rate) continue;
        sum += job.result.records.back().test_acc;
        ++count;
      }
      std::cout << "train: mode=" << mode_name(mode)
                << " rate=" << format_g6(rate) << " seeds=" << count
                << " mean_final_acc=" << format_g6(sum / std::max(1, count))
                << "\n";
    }
  }
  if (aborted) {
    std::cerr << "error: at least one run aborted; metrics written to "
              << opts.out_dir << "\n";
    return 2;
  }
  return 0;
}

// === theory ===

struct TheoryCliOptions {
  std::string suite = "single";
  std::string loss = "mae";
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
  int seed_count = 20;
  int threads = 0;
  std::string out_dir;
  double mean_s_y = 0.8;
  double ratio_noise = 0.1;
};

void to_json(json& j, const TheoryCliOptions& o) {
  j = json{{"suite", o.suite},
           {"loss", o.loss},
           {"latent_dim", o.latent_dim},
           {"irrelevant_count", o.irrelevant_count},
           {"train_size", o.train_size},
           {"noise_rate", o.noise_rate},
           {"sigma_p", o.sigma_p},
           {"eta", o.eta},
           {"iterations", o.iterations},
           {"sigma_0", o.sigma_0},
           {"mu_norm", o.mu_norm},
           {"xi_norm", o.xi_norm},
           {"class_prompt_scale", o.class_prompt_scale},
           {"test_size", o.test_size},
           {"seed", o.seed},
           {"seed_count", o.seed_count},
           {"threads", o.threads},
           {"out_dir", o.out_dir},
           {"mean_s_y", o.mean_s_y},
           {"ratio_noise", o.ratio_noise}};
}

void from_json(const json& j, TheoryCliOptions& o) {
  j.at("suite").get_to(o.suite);
  j.at("loss").get_to(o.loss);
  j.at("latent_dim").get_to(o.latent_dim);
  j.at("irrelevant_count").get_to(o.irrelevant_count);
  j.at("train_size").get_to(o.train_size);
  j.at("noise_rate").get_to(o.noise_rate);
  j.at("sigma_p").get_to(o.sigma_p);
  j.at("eta").get_to(o.eta);
  j.at("iterations").get_to(o.iterations);
  j.at("sigma_0").get_to(o.sigma_0);
  j.at("mu_norm").get_to(o.mu_norm);
  j.at("xi_norm").get_to(o.xi_norm);
  j.at("class_prompt_scale").get_to(o.class_prompt_scale);
  j.at("test_size").get_to(o.test_size);
  j.at("seed").get_to(o.seed);
  j.at("seed_count").get_to(o.seed_count);
  j.at("threads").get_to(o.threads);
  j.at("out_dir").get_to(o.out_dir);
  j.at("mean_s_y").get_to(o.mean_s_y);
  j.at("ratio_noise").get_to(o.ratio_noise);
}

TheoryConfig theory_config_from(const TheoryCliOptions& opts) {
  TheoryConfig cfg;
  if (opts.loss == "ce")
    cfg.loss = GradientLoss::ce;
  else if (opts.loss == "mae")
    cfg.loss = GradientLoss::mae;
  else
    throw ValidationError("loss must be ce or mae");
  cfg.latent_dim = opts.latent_dim;
  cfg.irrelevant_count = opts.irrelevant_count;
  cfg.train_size = opts.train_size;
  cfg.noise_rate = opts.noise_rate;
  cfg.sigma_p = opts.sigma_p;
  cfg.eta = opts.eta;
  cfg.iterations = opts.iterations;
  cfg.sigma_0 = opts.sigma_0;
  cfg.mu_norm = opts.mu_norm;
  cfg.xi_norm = opts.xi_norm;
  cfg.class_prompt_scale = opts.class_prompt_scale;
  cfg.test_size = opts.test_size;
  cfg.seed = opts.seed;
  return cfg;
}

std::string trajectory_csv(const PromptTrajectory& traj) {
  std::string out =
      "iter,alpha,beta,phi_max,phi_rms,train_loss,test_error,mean_s_y\n";
  for (std::size_t t = 0; t < traj.points.size(); ++t) {
    const auto& pt = traj.points[t];
    const double phi_max =
        pt.phis.size() ? pt.phis.cwiseAbs().maxCoeff() : 0.0;
    const double phi_rms =
        pt.phis.size() ? std::sqrt(pt.phis.squaredNorm() / pt.phis.size())
                       : 0.0;
    out += std::to_string(t) + ',' + format_g6(pt.alpha) + ',' +
           format_g6(pt.beta) + ',' + format_g6(phi_max) + ',' +
           format_g6(phi_rms) + ',' + format_g6(pt.train_loss) + ',' +
           format_g6(pt.test_error) + ',' + format_g6(pt.mean_s_y) + '\n';
  }
  return out;
}

std::string theorem_csv(const TheoremCheckResult& result) {
  std::string out =
      "seed,mae_error,ce_error,mae_beta,ce_beta,mae_phi_max,ce_phi_max,"
      "mae_diverged,ce_diverged\n";
  for (const auto& o : result.outcomes) {
    out += std::to_string(o.seed) + ',' + format_g6(o.mae_error) + ',' +
           format_g6(o.ce_error) + ',' + format_g6(o.mae_beta) + ',' +
           format_g6(o.ce_beta) + ',' + format_g6(o.mae_phi_max) + ',' +
           format_g6(o.ce_phi_max) + ',' + (o.mae_diverged ? "1" : "0") + ',' +
           (o.ce_diverged ? "1" : "0") + '\n';
  }
  return out;
}

int cmd_theory(const TheoryCliOptions& opts) {
  if (opts.suite == "ratios") {
    const UpdateRatios r =
        expected_update_ratios(opts.mean_s_y, opts.ratio_noise);
    std::cout << "theory ratios: mean_s_y=" << format_g6(opts.mean_s_y)
              << " noise=" << format_g6(opts.ratio_noise)
              << " beta_ratio=" << format_g6(r.beta_ratio)
              << " phi_ratio=" << format_g6(r.phi_ratio)
              << " reference=" << format_g6(r.reference)
              << " beta_claim=" << (r.beta_claim_holds ? "holds" : "fails")
              << " phi_claim=" << (r.phi_claim_holds ? "holds" : "fails")
              << " separation=" << (r.separation_holds ? "holds" : "fails")
              << "\n";
    if (!opts.out_dir.empty()) {
      fs::create_directories(opts.out_dir);
      write_manifest(fs::path(opts.out_dir) / "manifest.json", "theory",
                     json(opts));
    }
    return 0;
  }

  if (opts.suite == "single") {
    const PromptTrajectory traj = train_prompt(theory_config_from(opts));
    const auto& last = traj.final_point();
    std::cout << "theory single: loss=" << opts.loss
              << " iters=" << (traj.points.size() - 1)
              << " final_beta=" << format_g6(last.beta) << " final_phi_max="
              << format_g6(last.phis.size() ? last.phis.cwiseAbs().maxCoeff()
                                            : 0.0)
              << " train_loss=" << format_g6(last.train_loss)
              << " test_error=" << format_g6(last.test_error)
              << (traj.diverged ? " (diverged)" : "") << "\n";
    if (!opts.out_dir.empty()) {
      fs::create_directories(opts.out_dir);
      write_text_file(fs::path(opts.out_dir) / "trajectory.csv",
                      trajectory_csv(traj));
      write_manifest(fs::path(opts.out_dir) / "manifest.json", "theory",
                     json(opts));
    }
    return traj.diverged ? 2 : 0;
  }

  if (opts.suite == "theorem42" || opts.suite == "theorem") {
    const TheoremCheckResult result = run_theorem_suite(
        theory_config_from(opts), opts.seed_count, opts.threads);
    std::cout << "theory theorem: seeds=" << opts.seed_count << " mae_wins="
              << result.mae_wins << " ("
              << format_g6(100.0 * result.mae_wins / opts.seed_count)
              << "%) mean_mae_error=" << format_g6(result.mean_mae_error)
              << " mean_ce_error=" << format_g6(result.mean_ce_error) << "\n";
    if (!opts.out_dir.empty()) {
      fs::create_directories(opts.out_dir);
      write_text_file(fs::path(opts.out_dir) / "theorem.csv",
                      theorem_csv(result));
      write_manifest(fs::path(opts.out_dir) / "manifest.json", "theory",
                     json(opts));
    }
    return 0;
  }

  throw ValidationError("suite must be single, theorem42 or ratios");
}

// === report ===

struct ReportOptions {
  std::string in;
  std::string out;
  std::string format = "csv";
};

void to_json(json& j, const ReportOptions& o) {
  j = json{{"in", o.in}, {"out", o.out}, {"format", o.format}};
}

void from_json(const json& j, ReportOptions& o) {
  j.at("in").get_to(o.in);
  j.at("out").get_to(o.out);
  j.at("format").get_to(o.format);
}

int cmd_report(const ReportOptions& opts) {
  const std::vector<MetricsRecord> records = parse_csv(opts.in);
  ReportFormat format;
  if (opts.format == "csv")
    format = ReportFormat::csv;
  else if (opts.format == "jsonl")
    format = ReportFormat::json_lines;
  else if (opts.format == "svg")
    format = ReportFormat::svg_plot;
  else
    throw ValidationError("report format must be csv, jsonl or svg");
  emit_report(records, opts.out, format);
  std::cout << "report: wrote " << records.size() << " records to " << opts.out
            << "\n";
  return 0;
}

// === oracle ===

struct OracleOptions {
  int instances = 50;
  int max_n = 6;
  std::uint64_t seed = 1;
  std::vector<double> epsilons = {1e-3, 1e-4};
  int sinkhorn_iters = 2000000;
  double sinkhorn_tol = 1e-10;
};

void to_json(json& j, const OracleOptions& o) {
  j = json{{"instances", o.instances},
           {"max_n", o.max_n},
           {"seed", o.seed},
           {"epsilons", o.epsilons},
           {"sinkhorn_iters", o.sinkhorn_iters},
           {"sinkhorn_tol", o.sinkhorn_tol}};
}

void from_json(const json& j, OracleOptions& o) {
  j.at("instances").get_to(o.instances);
  j.at("max_n").get_to(o.max_n);
  j.at("seed").get_to(o.seed);
  j.at("epsilons").get_to(o.epsilons);
  j.at("sinkhorn_iters").get_to(o.sinkhorn_iters);
  j.at("sinkhorn_tol").get_to(o.sinkhorn_tol);
}

int cmd_oracle(const OracleOptions& opts) {
  if (opts.instances < 1 || opts.max_n < 2 || opts.max_n > 8)
    throw ValidationError("oracle: need instances >= 1 and 2 <= max_n <= 8");
  for (double eps : opts.epsilons) {
    double max_gap = 0.0;
    for (int i = 0; i < opts.instances; ++i) {
      SplitMix64 rng(SplitMix64::derive(opts.seed, static_cast<std::uint64_t>(i)));
      const int n = 2 + i % (opts.max_n - 1);
      Matrix cost(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) cost(r, c) = rng.next_double();
      const CostMatrix cm{cost};
      const Vector marginal = Vector::Constant(n, 1.0 / n);
      const AssignmentResult exact = lp_oracle(cm, marginal, marginal);
      SinkhornConfig cfg;
      cfg.epsilon = eps;
      cfg.max_iters = opts.sinkhorn_iters;
      cfg.tolerance = opts.sinkhorn_tol;
      const SinkhornResult approx = sinkhorn(cm, marginal, marginal, cfg);
      max_gap = std::max(max_gap,
                         std::abs(transport_objective(cm, approx.plan) -
                                  exact.objective));
    }
    std::cout << "oracle: epsilon=" << format_g6(eps) << " instances="
              << opts.instances << " max_objective_gap=" << format_g6(max_gap)
              << "\n";
  }
  return 0;
}

// === replay ===

struct ReplayOptions {
  std::string manifest;
  bool check = false;
};

std::string compare_bytes(const fs::path& left, const fs::path& right) {
  const std::string a = read_text_file(left);
  const std::string b = read_text_file(right);
  if (a == b) return "";
  return left.string() + " and " + right.string() + " differ";
}

int cmd_replay(const ReplayOptions& opts) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(opts.manifest));
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest " + opts.manifest + ": " +
                          e.what());
  }
  if (manifest.value("schema", "") != kManifestSchema)
    throw ValidationError("manifest schema mismatch in " + opts.manifest);
  const std::string command = manifest.at("command").get<std::string>();
  const json& options = manifest.at("options");

  std::vector<std::string> mismatches;
  const char* suffix = ".replay";

  if (command == "synth") {
    SynthOptions o = options.get<SynthOptions>();
    if (!opts.check) return cmd_synth(o);
    const SynthOptions original = o;
    o.out += suffix;
    o.prototypes_out = original.prototypes_out + suffix;
    if (!original.test_out.empty()) o.test_out = original.test_out + suffix;
    cmd_synth(o);
    std::vector<std::pair<std::string, std::string>> artifacts{
        {original.out, o.out}, {original.prototypes_out, o.prototypes_out}};
    if (!original.test_out.empty())
      artifacts.emplace_back(original.test_out, o.test_out);
    for (const auto& [was, now] : artifacts) {
      const std::string diff = compare_bytes(was, now);
      if (!diff.empty()) mismatches.push_back(diff);
    }
  } else if (command == "noise") {
    NoiseOptions o = options.get<NoiseOptions>();
    if (!opts.check) return cmd_noise(o);
    const std::string original_out = o.out;
    o.out += suffix;
    cmd_noise(o);
    const std::string diff = compare_bytes(original_out, o.out);
    if (!diff.empty()) mismatches.push_back(diff);
  } else if (command == "purify") {
    PurifyOptions o = options.get<PurifyOptions>();
    if (!opts.check || o.out_dir.empty()) return cmd_purify(o);
    const std::string original_dir = o.out_dir;
    o.out_dir += suffix;
    cmd_purify(o);
    const std::string diff =
        compare_bytes(fs::path(original_dir) / "partition.json",
                      fs::path(o.out_dir) / "partition.json");
    if (!diff.empty()) mismatches.push_back(diff);
  } else if (command == "train") {
    TrainCliOptions o = options.get<TrainCliOptions>();
    if (!opts.check) return cmd_train(o);
    const std::string original_dir = o.out_dir;
    o.out_dir += suffix;
    const int code = cmd_train(o);
    if (code != 0) return code;
    const std::string diff = compare_csv_ignoring_timing(
        fs::path(original_dir) / "metrics.csv",
        fs::path(o.out_dir) / "metrics.csv");
    if (!diff.empty())
      mismatches.push_back("metrics.csv (timing columns masked): " + diff);
  } else if (command == "theory") {
    TheoryCliOptions o = options.get<TheoryCliOptions>();
    if (!opts.check || o.out_dir.empty()) return cmd_theory(o);
    const std::string original_dir = o.out_dir;
    o.out_dir += suffix;
    const int code = cmd_theory(o);
    if (code != 0) return code;
    const bool theorem = o.suite == "theorem42" || o.suite == "theorem";
    const char* artifact = theorem             ? "theorem.csv"
                           : o.suite == "single" ? "trajectory.csv"
                                                 : nullptr;
    if (artifact != nullptr) {
      const std::string diff =
          compare_bytes(fs::path(original_dir) / artifact,
                        fs::path(o.out_dir) / artifact);
      if (!diff.empty()) mismatches.push_back(diff);
    }
  } else if (command == "report") {
    ReportOptions o = options.get<ReportOptions>();
    if (!opts.check) return cmd_report(o);
    const std::string original_out = o.out;
    o.out += suffix;
    cmd_report(o);
    const std::string diff = compare_bytes(original_out, o.out);
    if (!diff.empty()) mismatches.push_back(diff);
  } else if (command == "oracle") {
    return cmd_oracle(options.get<OracleOptions>());
  } else {
    throw ValidationError("replay: unknown command in manifest: " + command);
  }

  if (!mismatches.empty()) {
    for (const auto& m : mismatches) std::cerr << "replay mismatch: " << m << "\n";
    return 2;
  }
  std::cout << "replay: " << command
            << (opts.check ? " outputs match the recorded run" : " re-executed")
            << "\n";
  return 0;
}

}  // namespace

// === argument wiring ===

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"noisy-label prompt learning toolkit (OT purification, "
               "harmonized CE/MAE, robustness theory simulator)"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  int exit_code = 0;

  SynthOptions synth;
  auto* synth_cmd =
      app.add_subcommand("synth", "generate synthetic normalized embeddings");
  synth_cmd->set_config("--config", "", "key=value config file");
  synth_cmd->add_option("--classes", synth.classes, "number of classes");
  synth_cmd->add_option("--per-class", synth.per_class, "samples per class");
  synth_cmd->add_option("--test-per-class", synth.test_per_class,
                        "matched held-out samples per class (same prototypes)");
  synth_cmd->add_option("--dim", synth.dim, "embedding dimension");
  synth_cmd->add_option("--tightness", synth.tightness,
                        "cluster tightness (noise scale is 1/tightness)");
  synth_cmd->add_option("--seed", synth.seed, "rng seed");
  synth_cmd->add_option("--out", synth.out, "output embedding file")
      ->required();
  synth_cmd->add_option("--test-out", synth.test_out,
                        "test embedding file (default: <out>.test)");
  synth_cmd->add_option("--prototypes-out", synth.prototypes_out,
                        "prototype file (default: <out>.protos)");
  synth_cmd->add_option("--format", synth.format, "binary or sidecar");
  synth_cmd->callback([&]() { exit_code = cmd_synth(synth); });

  NoiseOptions noise;
  auto* noise_cmd =
      app.add_subcommand("noise", "inject label noise into an embedding file");
  noise_cmd->set_config("--config", "", "key=value config file");
  noise_cmd->add_option("--in", noise.in, "input embedding file")->required();
  noise_cmd->add_option("--out", noise.out, "output embedding file")
      ->required();
  noise_cmd->add_option("--kind", noise.kind,
                        "symmetric, asymmetric or rademacher");
  noise_cmd->add_option("--rate", noise.rate, "flip probability");
  noise_cmd->add_option("--seed", noise.seed, "rng seed");
  noise_cmd->add_option("--format", noise.format, "binary or sidecar");
  noise_cmd->callback([&]() { exit_code = cmd_noise(noise); });

  PurifyOptions purify;
  auto* purify_cmd = app.add_subcommand(
      "purify", "one-shot OT purification of an embedding file");
  purify_cmd->set_config("--config", "", "key=value config file");
  purify_cmd->add_option("--data", purify.data, "embedding file")->required();
  purify_cmd->add_option("--prototypes", purify.prototypes, "prototype file")
      ->required();
  purify_cmd->add_option("--temperature", purify.temperature,
                         "cost softmax temperature");
  purify_cmd->add_option("--epsilon", purify.epsilon, "entropic regularizer");
  purify_cmd->add_option("--sinkhorn-iters", purify.sinkhorn_iters,
                         "sinkhorn iteration cap");
  purify_cmd->add_option("--sinkhorn-tol", purify.sinkhorn_tol,
                         "marginal violation tolerance");
  purify_cmd->add_option("--log-domain", purify.log_domain, "auto, on or off");
  purify_cmd->add_option("--out-dir", purify.out_dir,
                         "write partition.json and manifest here");
  purify_cmd->callback([&]() { exit_code = cmd_purify(purify); });

  TrainCliOptions train;
  auto* train_cmd = app.add_subcommand(
      "train", "train prototypes over a mode x noise x seed grid");
  train_cmd->set_config("--config", "", "key=value config file");
  train_cmd->add_option("--data", train.data, "training embedding file")
      ->required();
  train_cmd->add_option("--prototypes", train.prototypes, "prototype file")
      ->required();
  train_cmd->add_option("--test", train.test, "test embedding file")
      ->required();
  train_cmd->add_option("--out-dir", train.out_dir, "output directory")
      ->required();
  train_cmd->add_option("--modes", train.modes,
                        "nlprompt, ce, mae, gce (comma separated)")
      ->delimiter(',');
  train_cmd->add_option("--epochs", train.epochs, "training epochs");
  train_cmd->add_option("--lr", train.learning_rate, "learning rate");
  train_cmd->add_flag("--no-anneal", train.no_anneal,
                      "disable cosine annealing");
  train_cmd->add_option("--temperature", train.temperature,
                        "OT cost softmax temperature");
  train_cmd->add_option("--logit-scale", train.logit_scale,
                        "similarity to logit scale");
  train_cmd->add_option("--epsilon", train.epsilon, "entropic regularizer");
  train_cmd->add_option("--sinkhorn-iters", train.sinkhorn_iters,
                        "sinkhorn iteration cap");
  train_cmd->add_option("--sinkhorn-tol", train.sinkhorn_tol,
                        "marginal violation tolerance");
  train_cmd->add_option("--log-domain", train.log_domain, "auto, on or off");
  train_cmd->add_option("--gce-q", train.gce_q, "gce exponent");
  train_cmd->add_option("--noise-kind", train.noise_kind,
                        "symmetric, asymmetric or rademacher");
  train_cmd->add_option("--noise-rates", train.noise_rates,
                        "noise rates (comma separated)")
      ->delimiter(',');
  train_cmd->add_option("--shots", train.shots,
                        "per-class training shots (0 = all)");
  train_cmd->add_option("--seeds", train.seeds, "seeds (comma separated)")
      ->delimiter(',');
  train_cmd->add_option("--granularity", train.granularity,
                        "partition granularity: dataset or batch");
  train_cmd->add_option("--batch-size", train.batch_size,
                        "chunk size under batch granularity (0 = full)");
  train_cmd->add_flag("--no-clamp-ce", train.no_clamp_ce,
                      "raise InfiniteLossError instead of clamping CE");
  train_cmd->add_option("--threads", train.threads,
                        "worker threads (0 = hardware)");
  train_cmd->callback([&]() { exit_code = cmd_train(train); });

  TheoryCliOptions theory;
  auto* theory_cmd = app.add_subcommand(
      "theory", "synthetic MAE-vs-CE robustness simulator");
  theory_cmd->set_config("--config", "", "key=value config file");
  theory_cmd->add_option("--suite", theory.suite,
                         "single, theorem42 or ratios");
  theory_cmd->add_option("--loss", theory.loss, "ce or mae (single suite)");
  theory_cmd->add_option("--latent-dim", theory.latent_dim, "m");
  theory_cmd->add_option("--irrelevant", theory.irrelevant_count, "L");
  theory_cmd->add_option("--train-size", theory.train_size, "n");
  theory_cmd->add_option("--noise", theory.noise_rate, "label flip rate p");
  theory_cmd->add_option("--sigma-p", theory.sigma_p,
                         "irrelevant feature scale");
  theory_cmd->add_option("--eta", theory.eta, "learning rate");
  theory_cmd->add_option("--iters", theory.iterations, "gradient steps");
  theory_cmd->add_option("--sigma-0", theory.sigma_0, "init prompt scale");
  theory_cmd->add_option("--mu-norm", theory.mu_norm, "mu norm");
  theory_cmd->add_option("--xi-norm", theory.xi_norm, "xi norm");
  theory_cmd->add_option("--class-scale", theory.class_prompt_scale,
                         "class prompt scale");
  theory_cmd->add_option("--test-size", theory.test_size, "test samples");
  theory_cmd->add_option("--seed", theory.seed, "base seed");
  theory_cmd->add_option("--seeds", theory.seed_count,
                         "paired runs (theorem42 suite)");
  theory_cmd->add_option("--threads", theory.threads,
                         "worker threads (0 = hardware)");
  theory_cmd->add_option("--out-dir", theory.out_dir, "output directory");
  theory_cmd->add_option("--mean-sy", theory.mean_s_y,
                         "E[s_y] for the ratios suite");
  theory_cmd->add_option("--ratio-noise", theory.ratio_noise,
                         "noise rate for the ratios suite");
  theory_cmd->callback([&]() { exit_code = cmd_theory(theory); });

  ReportOptions report;
  auto* report_cmd =
      app.add_subcommand("report", "re-emit a metrics csv as csv, jsonl or svg");
  report_cmd->set_config("--config", "", "key=value config file");
  report_cmd->add_option("--in", report.in, "metrics csv")->required();
  report_cmd->add_option("--out", report.out, "output file")->required();
  report_cmd->add_option("--format", report.format, "csv, jsonl or svg");
  report_cmd->callback([&]() { exit_code = cmd_report(report); });

  OracleOptions oracle;
  auto* oracle_cmd = app.add_subcommand(
      "oracle", "compare sinkhorn objectives against the exact assignment");
  oracle_cmd->set_config("--config", "", "key=value config file");
  oracle_cmd->add_option("--instances", oracle.instances, "random instances");
  oracle_cmd->add_option("--max-n", oracle.max_n, "largest instance size (<= 8)");
  oracle_cmd->add_option("--seed", oracle.seed, "rng seed");
  oracle_cmd->add_option("--epsilons", oracle.epsilons,
                         "regularizers (comma separated)")
      ->delimiter(',');
  oracle_cmd->add_option("--sinkhorn-iters", oracle.sinkhorn_iters,
                         "sinkhorn iteration cap");
  oracle_cmd->add_option("--sinkhorn-tol", oracle.sinkhorn_tol,
                         "marginal violation tolerance");
  oracle_cmd->callback([&]() { exit_code = cmd_oracle(oracle); });

  ReplayOptions replay;
  auto* replay_cmd =
      app.add_subcommand("replay", "re-execute a run from its manifest");
  replay_cmd->add_option("--manifest", replay.manifest, "manifest.json path")
      ->required();
  replay_cmd->add_flag("--check", replay.check,
                       "compare fresh outputs against the recorded ones");
  replay_cmd->callback([&]() { exit_code = cmd_replay(replay); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}

}  // namespace nlprompt
