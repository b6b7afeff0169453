#include <doctest.h>

#include <cmath>

#include "nlprompt/train.hpp"

using namespace nlprompt;

namespace {

struct Split {
  LabeledDataset train;
  LabeledDataset test;
  FeatureMatrix prototypes;
};

// One synthetic draw, even rows for training and odd rows for testing, so
// both sides share prototypes and class structure.
Split make_split(int classes, int per_side, int dim, double tightness,
                 std::uint64_t seed) {
  const auto made =
      make_synthetic_embeddings(classes, 2 * per_side, dim, tightness, seed);
  Split split;
  split.prototypes = made.prototypes;
  for (LabeledDataset* side : {&split.train, &split.test}) {
    side->class_count = classes;
    side->rng_seed = seed;
    side->features.normalized = true;
    side->features.data.resize(Eigen::Index(classes) * per_side, dim);
    side->true_labels.emplace();
  }
  Eigen::Index tr = 0, te = 0;
  for (int i = 0; i < made.dataset.size(); ++i) {
    LabeledDataset& side = (i % 2 == 0) ? split.train : split.test;
    Eigen::Index& row = (i % 2 == 0) ? tr : te;
    side.features.data.row(row++) = made.dataset.features.data.row(i);
    side.observed_labels.push_back(made.dataset.observed_labels[i]);
    side.true_labels->push_back(made.dataset.observed_labels[i]);
  }
  return split;
}

bool nan_or_equal(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

void check_same_records(const std::vector<MetricsRecord>& a,
                        const std::vector<MetricsRecord>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].epoch == b[i].epoch);
    CHECK(a[i].mode == b[i].mode);
    CHECK(a[i].noise_rate == b[i].noise_rate);
    CHECK(a[i].seed == b[i].seed);
    CHECK(a[i].train_loss == b[i].train_loss);
    CHECK(a[i].test_acc == b[i].test_acc);
    CHECK(nan_or_equal(a[i].purif_acc, b[i].purif_acc));
    CHECK(nan_or_equal(a[i].purif_f1, b[i].purif_f1));
    CHECK(a[i].pseudo_histogram == b[i].pseudo_histogram);
  }
}

ExperimentConfig smooth_config(TrainMode mode) {
  ExperimentConfig config;
  config.mode = mode;
  config.epochs = 10;
  config.learning_rate = 0.05;
  config.logit_scale = 30.0;
  return config;
}

}  // namespace

TEST_CASE("mode names round-trip") {
  for (TrainMode mode : {TrainMode::nlprompt, TrainMode::ce, TrainMode::mae,
                         TrainMode::gce})
    CHECK(mode_from_name(mode_name(mode)) == mode);
  CHECK_THROWS_AS(mode_from_name("hinge"), ValidationError);
}

TEST_CASE("zero epochs return the prototypes untouched") {
  const Split split = make_split(3, 10, 8, 4.0, 41);
  ExperimentConfig config = smooth_config(TrainMode::ce);
  config.epochs = 0;
  const TrainResult result =
      run_baseline(split.train, split.test, split.prototypes, config, 1);
  CHECK(result.records.empty());
  CHECK_FALSE(result.aborted);
  CHECK((result.prototypes.data.array() == split.prototypes.data.array()).all());
}

TEST_CASE("training runs are deterministic per seed") {
  const Split split = make_split(4, 12, 16, 3.0, 42);
  const ExperimentConfig config = smooth_config(TrainMode::nlprompt);
  const TrainResult a =
      run_nlprompt(split.train, split.test, split.prototypes, config, 5);
  const TrainResult b =
      run_nlprompt(split.train, split.test, split.prototypes, config, 5);
  check_same_records(a.records, b.records);
  CHECK((a.prototypes.data.array() == b.prototypes.data.array()).all());
}

TEST_CASE("records carry the run coordinates") {
  const Split split = make_split(3, 8, 8, 4.0, 43);
  ExperimentConfig config = smooth_config(TrainMode::gce);
  config.epochs = 3;
  config.noise.rate = 0.125;
  const TrainResult result =
      run_baseline(split.train, split.test, split.prototypes, config, 77);
  REQUIRE(result.records.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(result.records[std::size_t(e)].epoch == e);
    CHECK(result.records[std::size_t(e)].mode == "gce");
    CHECK(result.records[std::size_t(e)].noise_rate == 0.125);
    CHECK(result.records[std::size_t(e)].seed == 77);
    // Baselines never purify.
    CHECK(std::isnan(result.records[std::size_t(e)].purif_acc));
    CHECK(std::isnan(result.records[std::size_t(e)].purif_f1));
    CHECK(result.records[std::size_t(e)].pseudo_histogram.empty());
  }
}

TEST_CASE("purification is near perfect on clean tight clusters") {
  const Split split = make_split(4, 25, 16, 6.0, 44);
  ExperimentConfig config = smooth_config(TrainMode::nlprompt);
  config.epochs = 2;
  const TrainResult result =
      run_nlprompt(split.train, split.test, split.prototypes, config, 1);
  REQUIRE(result.records.size() == 2);
  for (const auto& rec : result.records) {
    CHECK(rec.purif_acc >= 0.99);
    CHECK(rec.purif_f1 >= 0.99);
    REQUIRE(rec.pseudo_histogram.size() == 4);
    int total = 0;
    for (int count : rec.pseudo_histogram) total += count;
    CHECK(total == split.train.size());
  }
}

TEST_CASE("a vanishing learning rate freezes the metrics") {
  const Split split = make_split(3, 12, 8, 4.0, 45);
  ExperimentConfig config = smooth_config(TrainMode::ce);
  config.learning_rate = 1e-12;
  config.cosine_anneal = false;
  config.epochs = 5;
  const TrainResult result =
      run_baseline(split.train, split.test, split.prototypes, config, 1);
  REQUIRE(result.records.size() == 5);
  for (const auto& rec : result.records) {
    CHECK(rec.test_acc == result.records[0].test_acc);
    CHECK(std::abs(rec.train_loss - result.records[0].train_loss) < 1e-6);
  }
}

TEST_CASE("baselines learn clean data") {
  const Split split = make_split(4, 15, 16, 3.0, 46);
  for (TrainMode mode : {TrainMode::ce, TrainMode::mae, TrainMode::gce}) {
    const ExperimentConfig config = smooth_config(mode);
    const TrainResult result =
        run_baseline(split.train, split.test, split.prototypes, config, 2);
    REQUIRE(result.records.size() == 10);
    CHECK_FALSE(result.aborted);
    CHECK(result.records.back().train_loss <
          result.records.front().train_loss);
    CHECK(result.records.back().test_acc >=
          result.records.front().test_acc - 1e-12);
  }
}

TEST_CASE("unclamped CE aborts on an exactly-zero target probability") {
  // Samples sit exactly on the prototypes with swapped labels; at a huge
  // logit scale the observed class underflows to probability zero.
  Split split = make_split(2, 4, 4, 1e9, 47);
  for (auto& y : split.train.observed_labels) y = 1 - y;
  ExperimentConfig config = smooth_config(TrainMode::ce);
  config.logit_scale = 5000.0;
  config.clamp_ce = false;
  const TrainResult result =
      run_baseline(split.train, split.test, split.prototypes, config, 3);
  CHECK(result.aborted);
  CHECK(result.abort_epoch == 0);
  CHECK(result.abort_reason.find("exactly zero") != std::string::npos);
  REQUIRE(result.records.size() == 1);
  CHECK(std::isinf(result.records[0].train_loss));

  // The clamped default trains through the same configuration.
  config.clamp_ce = true;
  const TrainResult clamped =
      run_baseline(split.train, split.test, split.prototypes, config, 3);
  CHECK_FALSE(clamped.aborted);
  CHECK(clamped.records.size() == 10);
}

TEST_CASE("grid results are independent of composition and thread count") {
  const Split split = make_split(3, 10, 8, 4.0, 48);
  ExperimentConfig base = smooth_config(TrainMode::ce);
  base.epochs = 4;
  base.seeds = {1, 2};

  const auto small = run_grid(split.train, split.test, split.prototypes, base,
                              {TrainMode::ce}, {0.0, 0.3}, 1);
  REQUIRE(small.size() == 4);
  const auto threaded = run_grid(split.train, split.test, split.prototypes,
                                 base, {TrainMode::ce}, {0.0, 0.3}, 3);
  REQUIRE(threaded.size() == 4);
  for (std::size_t k = 0; k < small.size(); ++k) {
    CHECK(small[k].mode == threaded[k].mode);
    CHECK(small[k].noise_rate == threaded[k].noise_rate);
    CHECK(small[k].seed == threaded[k].seed);
    check_same_records(small[k].result.records, threaded[k].result.records);
  }

  // Adding another mode to the grid must not disturb the CE jobs.
  const auto big = run_grid(split.train, split.test, split.prototypes, base,
                            {TrainMode::mae, TrainMode::ce}, {0.0, 0.3}, 2);
  REQUIRE(big.size() == 8);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(big[4 + k].mode == TrainMode::ce);
    check_same_records(big[4 + k].result.records, small[k].result.records);
  }

  // Mode-major, then rate, then seed.
  CHECK(big[0].mode == TrainMode::mae);
  CHECK(big[0].noise_rate == 0.0);
  CHECK(big[0].seed == 1);
  CHECK(big[1].seed == 2);
  CHECK(big[2].noise_rate == 0.3);

  CHECK_THROWS_AS(run_grid(split.train, split.test, split.prototypes, base,
                           {}, {0.0}, 1),
                  ValidationError);
  CHECK_THROWS_AS(run_grid(split.train, split.test, split.prototypes, base,
                           {TrainMode::ce}, {}, 1),
                  ValidationError);
}

TEST_CASE("label noise in the grid hurts plain CE") {
  const Split split = make_split(4, 20, 16, 3.0, 49);
  ExperimentConfig base = smooth_config(TrainMode::ce);
  base.epochs = 20;
  const auto results = run_grid(split.train, split.test, split.prototypes,
                                base, {TrainMode::ce}, {0.0, 0.4}, 2);
  REQUIRE(results.size() == 2);
  CHECK(results[0].result.records.back().test_acc >=
        results[1].result.records.back().test_acc);
}

TEST_CASE("an oversized batch size reduces to dataset granularity") {
  const Split split = make_split(3, 10, 8, 4.0, 50);
  ExperimentConfig config = smooth_config(TrainMode::nlprompt);
  config.epochs = 3;

  const TrainResult whole =
      run_nlprompt(split.train, split.test, split.prototypes, config, 4);

  config.granularity = PartitionGranularity::batch;
  config.batch_size = split.train.size();
  const TrainResult capped =
      run_nlprompt(split.train, split.test, split.prototypes, config, 4);
  check_same_records(whole.records, capped.records);

  // A genuinely smaller batch re-partitions per chunk but still walks every
  // sample: the histogram accounts for the full epoch.
  config.batch_size = 7;
  const TrainResult chunked =
      run_nlprompt(split.train, split.test, split.prototypes, config, 4);
  REQUIRE(chunked.records.size() == 3);
  for (const auto& rec : chunked.records) {
    int total = 0;
    for (int count : rec.pseudo_histogram) total += count;
    CHECK(total == split.train.size());
    // Tiny trailing chunks leave the marginal constraint little room, so the
    // per-chunk partition is noisier than the whole-epoch one.
    CHECK(rec.purif_acc >= 0.8);
  }
}

TEST_CASE("trainer validates shapes and configuration") {
  const Split split = make_split(3, 8, 8, 4.0, 51);
  const ExperimentConfig good = smooth_config(TrainMode::nlprompt);

  ExperimentConfig bad = good;
  bad.epochs = -1;
  CHECK_THROWS_AS(run_nlprompt(split.train, split.test, split.prototypes, bad, 1),
                  ValidationError);
  bad = good;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(run_nlprompt(split.train, split.test, split.prototypes, bad, 1),
                  ValidationError);
  bad = good;
  bad.gce_q = 1.5;
  CHECK_THROWS_AS(run_nlprompt(split.train, split.test, split.prototypes, bad, 1),
                  ValidationError);
  bad = good;
  bad.seeds.clear();
  CHECK_THROWS_AS(run_grid(split.train, split.test, split.prototypes, bad,
                           {TrainMode::ce}, {0.0}, 1),
                  ValidationError);

  // Mode mismatches between entry points.
  CHECK_THROWS_AS(run_baseline(split.train, split.test, split.prototypes,
                               good, 1),
                  ValidationError);
  CHECK_THROWS_AS(run_nlprompt(split.train, split.test, split.prototypes,
                               smooth_config(TrainMode::ce), 1),
                  ValidationError);

  // Shape mismatches.
  const Split other = make_split(3, 8, 10, 4.0, 52);
  CHECK_THROWS_AS(run_nlprompt(split.train, other.test, split.prototypes,
                               good, 1),
                  ValidationError);
  const Split narrow = make_split(2, 8, 8, 4.0, 53);
  CHECK_THROWS_AS(run_nlprompt(split.train, split.test, narrow.prototypes,
                               good, 1),
                  ValidationError);

  FeatureMatrix raw = split.prototypes;
  raw.normalized = false;
  CHECK_THROWS_AS(run_nlprompt(split.train, split.test, raw, good, 1),
                  ValidationError);
}
