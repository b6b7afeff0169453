#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nlprompt/report.hpp"
#include "nlprompt/theory.hpp"

namespace py = pybind11;
using namespace nlprompt;

PYBIND11_MODULE(_core, m) {
  m.doc() = "noisy-label prompt learning toolkit";
  m.attr("__version__") = kToolVersion;
  m.attr("RNG_ALGORITHM") = kRngAlgorithm;
  m.attr("METRICS_CSV_HEADER") = kMetricsCsvHeader;

  py::register_exception<ValidationError>(m, "ValidationError",
                                          PyExc_ValueError);
  auto numerical =
      py::register_exception<NumericalError>(m, "NumericalError",
                                             PyExc_RuntimeError);
  py::register_exception<InfiniteLossError>(m, "InfiniteLossError",
                                            numerical.ptr());

  py::class_<SplitMix64>(m, "SplitMix64")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("next_u64", &SplitMix64::next_u64)
      .def("next_double", &SplitMix64::next_double)
      .def("next_open_double", &SplitMix64::next_open_double)
      .def("next_below", &SplitMix64::next_below, py::arg("bound"))
      .def("next_gaussian", &SplitMix64::next_gaussian)
      .def_static("derive", &SplitMix64::derive, py::arg("seed"),
                  py::arg("salt"));

  // === ot ===

  py::class_<FeatureMatrix>(m, "FeatureMatrix")
      .def(py::init([](Matrix data, bool normalized) {
             return FeatureMatrix{std::move(data), normalized};
           }),
           py::arg("data"), py::arg("normalized") = false)
      .def_readwrite("data", &FeatureMatrix::data)
      .def_readwrite("normalized", &FeatureMatrix::normalized)
      .def_property_readonly("rows", &FeatureMatrix::rows)
      .def_property_readonly("dim", &FeatureMatrix::dim)
      .def("validate", &FeatureMatrix::validate)
      .def_static("normalized_rows", &FeatureMatrix::normalized_rows,
                  py::arg("data"));

  py::class_<CostMatrix>(m, "CostMatrix")
      .def(py::init([](Matrix entries) { return CostMatrix{std::move(entries)}; }),
           py::arg("entries"))
      .def_readwrite("entries", &CostMatrix::entries)
      .def_property_readonly("class_count", &CostMatrix::class_count)
      .def_property_readonly("sample_count", &CostMatrix::sample_count)
      .def("validate", &CostMatrix::validate);

  py::class_<TransportPlan>(m, "TransportPlan")
      .def(py::init<>())
      .def_readwrite("entries", &TransportPlan::entries)
      .def_readwrite("row_marginal", &TransportPlan::row_marginal)
      .def_readwrite("col_marginal", &TransportPlan::col_marginal)
      .def_readwrite("residual", &TransportPlan::residual)
      .def("validate", &TransportPlan::validate);

  py::class_<SinkhornConfig>(m, "SinkhornConfig")
      .def(py::init<>())
      .def_readwrite("epsilon", &SinkhornConfig::epsilon)
      .def_readwrite("max_iters", &SinkhornConfig::max_iters)
      .def_readwrite("tolerance", &SinkhornConfig::tolerance)
      .def_readwrite("log_domain", &SinkhornConfig::log_domain)
      .def("use_log_domain", &SinkhornConfig::use_log_domain)
      .def("validate", &SinkhornConfig::validate);

  py::class_<SinkhornResult>(m, "SinkhornResult")
      .def_readonly("plan", &SinkhornResult::plan)
      .def_readonly("converged", &SinkhornResult::converged)
      .def_readonly("iterations", &SinkhornResult::iterations);

  py::class_<AssignmentResult>(m, "AssignmentResult")
      .def_readonly("plan", &AssignmentResult::plan)
      .def_readonly("objective", &AssignmentResult::objective)
      .def_readonly("assignment", &AssignmentResult::assignment);

  m.def("build_cost_matrix", &build_cost_matrix, py::arg("prototypes"),
        py::arg("samples"), py::arg("temperature") = 1.0);
  m.def("sinkhorn", &sinkhorn, py::arg("cost"), py::arg("row_marginal"),
        py::arg("col_marginal"), py::arg("config") = SinkhornConfig{});
  m.def("solve_prompt_ot", &solve_prompt_ot, py::arg("prototypes"),
        py::arg("samples"), py::arg("config") = SinkhornConfig{},
        py::arg("temperature") = 1.0);
  m.def("pseudo_labels", &pseudo_labels, py::arg("plan"));
  m.def("lp_oracle", &lp_oracle, py::arg("cost"), py::arg("row_marginal"),
        py::arg("col_marginal"));
  m.def("transport_objective", &transport_objective, py::arg("cost"),
        py::arg("plan"));

  // === losses ===

  py::enum_<GradientLoss>(m, "GradientLoss")
      .value("ce", GradientLoss::ce)
      .value("mae", GradientLoss::mae);

  py::class_<HarmonizedOptions>(m, "HarmonizedOptions")
      .def(py::init<>())
      .def_readwrite("clamp_ce", &HarmonizedOptions::clamp_ce)
      .def_readwrite("ce_floor", &HarmonizedOptions::ce_floor);

  py::class_<LossReport>(m, "LossReport")
      .def_readonly("total", &LossReport::total)
      .def_readonly("per_sample", &LossReport::per_sample);

  m.def("validate_probabilities", &validate_probabilities, py::arg("probs"));
  m.def("softmax", &softmax, py::arg("logits"));
  m.def("ce_loss", &ce_loss, py::arg("probs"), py::arg("target"));
  m.def("ce_loss_clamped", &ce_loss_clamped, py::arg("probs"),
        py::arg("target"), py::arg("floor") = 1e-12);
  m.def("mae_loss", &mae_loss, py::arg("probs"), py::arg("target"));
  m.def("gce_loss", &gce_loss, py::arg("probs"), py::arg("target"),
        py::arg("q") = 0.7);
  m.def("harmonized_loss", &harmonized_loss, py::arg("probs"),
        py::arg("targets"), py::arg("clean_mask"),
        py::arg("options") = HarmonizedOptions{});
  m.def("gradient_coefficient", &gradient_coefficient, py::arg("s_y"),
        py::arg("kind"));

  // === noise ===

  py::enum_<NoiseKind>(m, "NoiseKind")
      .value("symmetric", NoiseKind::symmetric)
      .value("asymmetric", NoiseKind::asymmetric)
      .value("rademacher", NoiseKind::rademacher);

  py::class_<NoiseSpec>(m, "NoiseSpec")
      .def(py::init([](NoiseKind kind, double rate, std::uint64_t seed) {
             return NoiseSpec{kind, rate, seed};
           }),
           py::arg("kind") = NoiseKind::symmetric, py::arg("rate") = 0.0,
           py::arg("seed") = 0)
      .def_readwrite("kind", &NoiseSpec::kind)
      .def_readwrite("rate", &NoiseSpec::rate)
      .def_readwrite("seed", &NoiseSpec::seed)
      .def("validate", &NoiseSpec::validate, py::arg("class_count"));

  py::class_<LabeledDataset>(m, "LabeledDataset")
      .def(py::init<>())
      .def_readwrite("features", &LabeledDataset::features)
      .def_readwrite("observed_labels", &LabeledDataset::observed_labels)
      .def_readwrite("true_labels", &LabeledDataset::true_labels)
      .def_readwrite("class_count", &LabeledDataset::class_count)
      .def_readwrite("rng_seed", &LabeledDataset::rng_seed)
      .def("size", &LabeledDataset::size)
      .def("validate", &LabeledDataset::validate);

  py::class_<FewShotResult>(m, "FewShotResult")
      .def_readonly("dataset", &FewShotResult::dataset)
      .def_readonly("warnings", &FewShotResult::warnings);

  m.def("inject_symmetric", &inject_symmetric, py::arg("labels"),
        py::arg("class_count"), py::arg("rate"), py::arg("seed"));
  m.def("inject_asymmetric", &inject_asymmetric, py::arg("labels"),
        py::arg("class_count"), py::arg("rate"), py::arg("seed"));
  m.def("rademacher_flip", &rademacher_flip, py::arg("labels"), py::arg("p"),
        py::arg("seed"));
  m.def("apply_noise", &apply_noise, py::arg("dataset"), py::arg("spec"));
  m.def("few_shot_sample", &few_shot_sample, py::arg("dataset"),
        py::arg("shots"), py::arg("seed"));

  // === purify ===

  py::class_<PartitionResult>(m, "PartitionResult")
      .def_readonly("pseudo", &PartitionResult::pseudo)
      .def_readonly("clean_indices", &PartitionResult::clean_indices)
      .def_readonly("noisy_indices", &PartitionResult::noisy_indices)
      .def_readonly("histogram", &PartitionResult::histogram)
      .def("clean_mask", &PartitionResult::clean_mask);

  py::class_<PurificationScore>(m, "PurificationScore")
      .def_readonly("tp", &PurificationScore::tp)
      .def_readonly("fp", &PurificationScore::fp)
      .def_readonly("fn", &PurificationScore::fn)
      .def_readonly("tn", &PurificationScore::tn)
      .def_readonly("positive_is_clean", &PurificationScore::positive_is_clean)
      .def_readonly("accuracy", &PurificationScore::accuracy)
      .def_readonly("f1", &PurificationScore::f1);

  m.def("partition", &partition, py::arg("observed"), py::arg("pseudo"),
        py::arg("class_count") = 0);
  m.def("score_purification", &score_purification, py::arg("partition"),
        py::arg("true_labels"), py::arg("observed_labels"),
        py::arg("positive_is_clean") = true);
  m.def("zero_shot_labels", &zero_shot_labels, py::arg("prototypes"),
        py::arg("samples"));
  m.def("zero_shot_partition", &zero_shot_partition, py::arg("prototypes"),
        py::arg("samples"), py::arg("observed_labels"));

  // === theory ===

  py::class_<FeatureBasis>(m, "FeatureBasis")
      .def_readonly("vectors", &FeatureBasis::vectors)
      .def_readonly("latent_dim", &FeatureBasis::latent_dim)
      .def_property_readonly("irrelevant_count",
                             &FeatureBasis::irrelevant_count);

  py::class_<PromptModel>(m, "PromptModel")
      .def_readonly("basis", &PromptModel::basis)
      .def_readwrite("p", &PromptModel::p)
      .def_readonly("p0", &PromptModel::p0)
      .def_readonly("p_plus", &PromptModel::p_plus)
      .def_readonly("p_minus", &PromptModel::p_minus)
      .def_property_readonly("prompt_dim", &PromptModel::prompt_dim);

  py::class_<TheoryConfig>(m, "TheoryConfig")
      .def(py::init<>())
      .def_readwrite("loss", &TheoryConfig::loss)
      .def_readwrite("latent_dim", &TheoryConfig::latent_dim)
      .def_readwrite("irrelevant_count", &TheoryConfig::irrelevant_count)
      .def_readwrite("train_size", &TheoryConfig::train_size)
      .def_readwrite("noise_rate", &TheoryConfig::noise_rate)
      .def_readwrite("sigma_p", &TheoryConfig::sigma_p)
      .def_readwrite("eta", &TheoryConfig::eta)
      .def_readwrite("iterations", &TheoryConfig::iterations)
      .def_readwrite("sigma_0", &TheoryConfig::sigma_0)
      .def_readwrite("mu_norm", &TheoryConfig::mu_norm)
      .def_readwrite("xi_norm", &TheoryConfig::xi_norm)
      .def_readwrite("class_prompt_scale", &TheoryConfig::class_prompt_scale)
      .def_readwrite("test_size", &TheoryConfig::test_size)
      .def_readwrite("seed", &TheoryConfig::seed)
      .def("validate", &TheoryConfig::validate);

  py::class_<TrajectoryPoint>(m, "TrajectoryPoint")
      .def_readonly("alpha", &TrajectoryPoint::alpha)
      .def_readonly("beta", &TrajectoryPoint::beta)
      .def_readonly("phis", &TrajectoryPoint::phis)
      .def_readonly("train_loss", &TrajectoryPoint::train_loss)
      .def_readonly("test_error", &TrajectoryPoint::test_error)
      .def_readonly("mean_s_y", &TrajectoryPoint::mean_s_y);

  py::class_<PromptTrajectory>(m, "PromptTrajectory")
      .def_readonly("config", &PromptTrajectory::config)
      .def_readonly("points", &PromptTrajectory::points)
      .def_readonly("diverged", &PromptTrajectory::diverged)
      .def_readonly("diverged_at", &PromptTrajectory::diverged_at)
      .def_readonly("model", &PromptTrajectory::model)
      .def("final_point", &PromptTrajectory::final_point,
           py::return_value_policy::copy);

  py::class_<UpdateRatios>(m, "UpdateRatios")
      .def_readonly("beta_ratio", &UpdateRatios::beta_ratio)
      .def_readonly("phi_ratio", &UpdateRatios::phi_ratio)
      .def_readonly("reference", &UpdateRatios::reference)
      .def_readonly("beta_claim_holds", &UpdateRatios::beta_claim_holds)
      .def_readonly("phi_claim_holds", &UpdateRatios::phi_claim_holds)
      .def_readonly("separation_holds", &UpdateRatios::separation_holds);

  py::class_<TheoremSeedOutcome>(m, "TheoremSeedOutcome")
      .def_readonly("seed", &TheoremSeedOutcome::seed)
      .def_readonly("mae_error", &TheoremSeedOutcome::mae_error)
      .def_readonly("ce_error", &TheoremSeedOutcome::ce_error)
      .def_readonly("mae_beta", &TheoremSeedOutcome::mae_beta)
      .def_readonly("ce_beta", &TheoremSeedOutcome::ce_beta)
      .def_readonly("mae_phi_max", &TheoremSeedOutcome::mae_phi_max)
      .def_readonly("ce_phi_max", &TheoremSeedOutcome::ce_phi_max)
      .def_readonly("mae_diverged", &TheoremSeedOutcome::mae_diverged)
      .def_readonly("ce_diverged", &TheoremSeedOutcome::ce_diverged);

  py::class_<TheoremCheckResult>(m, "TheoremCheckResult")
      .def_readonly("outcomes", &TheoremCheckResult::outcomes)
      .def_readonly("mae_wins", &TheoremCheckResult::mae_wins)
      .def_readonly("mean_mae_error", &TheoremCheckResult::mean_mae_error)
      .def_readonly("mean_ce_error", &TheoremCheckResult::mean_ce_error);

  m.def("train_prompt", &train_prompt, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("expected_update_ratios", &expected_update_ratios,
        py::arg("mean_s_y"), py::arg("noise_rate"));
  m.def("run_theorem_suite", &run_theorem_suite, py::arg("config"),
        py::arg("seed_count"), py::arg("threads") = 0,
        py::call_guard<py::gil_scoped_release>());

  // === data ===

  py::enum_<EmbeddingFileFormat>(m, "EmbeddingFileFormat")
      .value("binary", EmbeddingFileFormat::binary)
      .value("json_sidecar", EmbeddingFileFormat::json_sidecar);

  py::enum_<EmbeddingDtype>(m, "EmbeddingDtype")
      .value("f32", EmbeddingDtype::f32)
      .value("f64", EmbeddingDtype::f64);

  py::class_<SyntheticEmbeddings>(m, "SyntheticEmbeddings")
      .def_readonly("dataset", &SyntheticEmbeddings::dataset)
      .def_readonly("prototypes", &SyntheticEmbeddings::prototypes)
      .def_readonly("warnings", &SyntheticEmbeddings::warnings);

  m.def("save_features", &save_features, py::arg("path"), py::arg("dataset"),
        py::arg("format") = EmbeddingFileFormat::binary,
        py::arg("dtype") = EmbeddingDtype::f64);
  m.def("load_features", &load_features, py::arg("path"));
  m.def("save_prototypes", &save_prototypes, py::arg("path"),
        py::arg("prototypes"),
        py::arg("format") = EmbeddingFileFormat::binary,
        py::arg("dtype") = EmbeddingDtype::f64);
  m.def("load_prototypes", &load_prototypes, py::arg("path"));
  m.def("make_synthetic_embeddings", &make_synthetic_embeddings,
        py::arg("class_count"), py::arg("per_class"), py::arg("dim"),
        py::arg("cluster_tightness"), py::arg("seed"));

  // === train ===

  py::enum_<TrainMode>(m, "TrainMode")
      .value("nlprompt", TrainMode::nlprompt)
      .value("ce", TrainMode::ce)
      .value("mae", TrainMode::mae)
      .value("gce", TrainMode::gce);

  py::enum_<PartitionGranularity>(m, "PartitionGranularity")
      .value("dataset", PartitionGranularity::dataset)
      .value("batch", PartitionGranularity::batch);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("mode", &ExperimentConfig::mode)
      .def_readwrite("epochs", &ExperimentConfig::epochs)
      .def_readwrite("learning_rate", &ExperimentConfig::learning_rate)
      .def_readwrite("cosine_anneal", &ExperimentConfig::cosine_anneal)
      .def_readwrite("temperature", &ExperimentConfig::temperature)
      .def_readwrite("logit_scale", &ExperimentConfig::logit_scale)
      .def_readwrite("sinkhorn", &ExperimentConfig::sinkhorn)
      .def_readwrite("gce_q", &ExperimentConfig::gce_q)
      .def_readwrite("noise", &ExperimentConfig::noise)
      .def_readwrite("shots", &ExperimentConfig::shots)
      .def_readwrite("granularity", &ExperimentConfig::granularity)
      .def_readwrite("batch_size", &ExperimentConfig::batch_size)
      .def_readwrite("clamp_ce", &ExperimentConfig::clamp_ce)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("output_dir", &ExperimentConfig::output_dir)
      .def("validate", &ExperimentConfig::validate);

  py::class_<MetricsRecord>(m, "MetricsRecord")
      .def_readonly("epoch", &MetricsRecord::epoch)
      .def_readonly("mode", &MetricsRecord::mode)
      .def_readonly("noise_rate", &MetricsRecord::noise_rate)
      .def_readonly("seed", &MetricsRecord::seed)
      .def_readonly("train_loss", &MetricsRecord::train_loss)
      .def_readonly("test_acc", &MetricsRecord::test_acc)
      .def_readonly("purif_acc", &MetricsRecord::purif_acc)
      .def_readonly("purif_f1", &MetricsRecord::purif_f1)
      .def_readonly("ot_seconds", &MetricsRecord::ot_seconds)
      .def_readonly("step_seconds", &MetricsRecord::step_seconds)
      .def_readonly("pseudo_histogram", &MetricsRecord::pseudo_histogram);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("records", &TrainResult::records)
      .def_readonly("prototypes", &TrainResult::prototypes)
      .def_readonly("aborted", &TrainResult::aborted)
      .def_readonly("abort_epoch", &TrainResult::abort_epoch)
      .def_readonly("abort_reason", &TrainResult::abort_reason)
      .def_readonly("warnings", &TrainResult::warnings);

  py::class_<GridJobResult>(m, "GridJobResult")
      .def_readonly("mode", &GridJobResult::mode)
      .def_readonly("noise_rate", &GridJobResult::noise_rate)
      .def_readonly("seed", &GridJobResult::seed)
      .def_readonly("result", &GridJobResult::result);

  m.def("run_nlprompt", &run_nlprompt, py::arg("train"), py::arg("test"),
        py::arg("prototypes"), py::arg("config"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_baseline", &run_baseline, py::arg("train"), py::arg("test"),
        py::arg("prototypes"), py::arg("config"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_grid", &run_grid, py::arg("clean_train"), py::arg("test"),
        py::arg("prototypes"), py::arg("base"), py::arg("modes"),
        py::arg("noise_rates"), py::arg("threads") = 0,
        py::call_guard<py::gil_scoped_release>());

  // === report ===

  m.def("format_g6", &format_g6, py::arg("value"));
  m.def("render_csv", &render_csv, py::arg("records"));
  m.def("render_json_lines", &render_json_lines, py::arg("records"));
  m.def("render_svg", &render_svg, py::arg("records"));
  m.def("parse_csv", &parse_csv, py::arg("path"));
  m.def("compare_csv_ignoring_timing", &compare_csv_ignoring_timing,
        py::arg("left"), py::arg("right"));
}
