#include "nlprompt/noise.hpp"

#include <algorithm>
#include <cmath>

namespace nlprompt {

namespace {

void check_labels(const std::vector<int>& labels, int class_count) {
  if (labels.empty()) throw ValidationError("noise: empty label vector");
  if (class_count < 2)
    throw ValidationError("noise: class_count must be at least 2");
  for (int y : labels) {
    if (y < 0 || y >= class_count)
      throw ValidationError("noise: label out of range");
  }
}

void check_rate(double rate) {
  if (!(rate >= 0.0) || !(rate <= 1.0))
    throw ValidationError("noise: rate must lie in [0, 1]");
}

}  // namespace

void NoiseSpec::validate(int class_count) const {
  check_rate(rate);
  if (class_count < 2)
    throw ValidationError("noise spec: class_count must be at least 2");
  if (kind == NoiseKind::rademacher) {
    if (class_count != 2)
      throw ValidationError("noise spec: rademacher noise requires 2 classes");
    if (rate > 0.5)
      throw ValidationError("noise spec: rademacher rate must be <= 1/2");
  }
}

void LabeledDataset::validate() const {
  features.validate();
  if (class_count < 1)
    throw ValidationError("dataset: class_count must be positive");
  if (features.rows() != size())
    throw ValidationError("dataset: feature rows and label count differ");
  for (int y : observed_labels) {
    if (y < 0 || y >= class_count)
      throw ValidationError("dataset: observed label out of range");
  }
  if (true_labels) {
    if (true_labels->size() != observed_labels.size())
      throw ValidationError("dataset: true label count differs");
    for (int y : *true_labels) {
      if (y < 0 || y >= class_count)
        throw ValidationError("dataset: true label out of range");
    }
  }
}

std::vector<int> inject_symmetric(const std::vector<int>& labels,
                                  int class_count, double rate,
                                  std::uint64_t seed) {
  check_labels(labels, class_count);
  check_rate(rate);
  SplitMix64 rng(seed);
  std::vector<int> out = labels;
  for (auto& y : out) {
    if (rng.next_double() < rate) {
      // Uniform over the other class_count - 1 classes, skipping y itself.
      const auto k = static_cast<int>(
          rng.next_below(static_cast<std::uint64_t>(class_count - 1)));
      y = (k >= y) ? k + 1 : k;
    }
  }
  return out;
}

std::vector<int> inject_asymmetric(const std::vector<int>& labels,
                                   int class_count, double rate,
                                   std::uint64_t seed) {
  check_labels(labels, class_count);
  check_rate(rate);
  SplitMix64 rng(seed);
  std::vector<int> out = labels;
  for (auto& y : out) {
    if (rng.next_double() < rate) y = (y + 1) % class_count;
  }
  return out;
}

std::vector<int> rademacher_flip(const std::vector<int>& labels, double p,
                                 std::uint64_t seed) {
  if (labels.empty()) throw ValidationError("rademacher_flip: empty labels");
  if (!(p >= 0.0))
    throw ValidationError("rademacher_flip: p must be non-negative");
  if (p > 0.5)
    throw ValidationError("rademacher_flip: p must not exceed 1/2");
  for (int y : labels) {
    if (y != 1 && y != -1)
      throw ValidationError("rademacher_flip: labels must be +1 or -1");
  }
  SplitMix64 rng(seed);
  std::vector<int> out = labels;
  for (auto& y : out) {
    if (rng.next_double() < p) y = -y;
  }
  return out;
}

LabeledDataset apply_noise(const LabeledDataset& dataset,
                           const NoiseSpec& spec) {
  dataset.validate();
  spec.validate(dataset.class_count);

  LabeledDataset out = dataset;
  if (!out.true_labels) out.true_labels = dataset.observed_labels;

  switch (spec.kind) {
    case NoiseKind::symmetric:
      out.observed_labels = inject_symmetric(
          dataset.observed_labels, dataset.class_count, spec.rate, spec.seed);
      break;
    case NoiseKind::asymmetric:
      out.observed_labels = inject_asymmetric(
          dataset.observed_labels, dataset.class_count, spec.rate, spec.seed);
      break;
    case NoiseKind::rademacher: {
      // Binary datasets map class 0 to +1 and class 1 to -1.
      std::vector<int> pm(dataset.observed_labels.size());
      for (std::size_t i = 0; i < pm.size(); ++i)
        pm[i] = dataset.observed_labels[i] == 0 ? 1 : -1;
      pm = rademacher_flip(pm, spec.rate, spec.seed);
      for (std::size_t i = 0; i < pm.size(); ++i)
        out.observed_labels[i] = pm[i] == 1 ? 0 : 1;
      break;
    }
  }
  return out;
}

FewShotResult few_shot_sample(const LabeledDataset& dataset, int shots,
                              std::uint64_t seed) {
  dataset.validate();
  if (shots < 1) throw ValidationError("few_shot_sample: shots must be >= 1");

  std::vector<std::vector<int>> by_class(
      static_cast<std::size_t>(dataset.class_count));
  for (int i = 0; i < dataset.size(); ++i)
    by_class[static_cast<std::size_t>(dataset.observed_labels[i])].push_back(i);

  SplitMix64 rng(seed);
  FewShotResult result;
  std::vector<int> selected;
  for (int c = 0; c < dataset.class_count; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(pool.size()) <= shots) {
      if (static_cast<int>(pool.size()) < shots)
        result.warnings.push_back("class " + std::to_string(c) + " has only " +
                                  std::to_string(pool.size()) +
                                  " samples; taking all");
      selected.insert(selected.end(), pool.begin(), pool.end());
      continue;
    }
    // Partial Fisher-Yates, then ascending order within the class.
    for (int j = 0; j < shots; ++j) {
      const auto pick = j + static_cast<int>(rng.next_below(
                                static_cast<std::uint64_t>(pool.size()) -
                                static_cast<std::uint64_t>(j)));
      std::swap(pool[static_cast<std::size_t>(j)],
                pool[static_cast<std::size_t>(pick)]);
    }
    std::sort(pool.begin(), pool.begin() + shots);
    selected.insert(selected.end(), pool.begin(), pool.begin() + shots);
  }

  LabeledDataset& out = result.dataset;
  out.class_count = dataset.class_count;
  out.rng_seed = seed;
  out.features.normalized = dataset.features.normalized;
  out.features.data.resize(static_cast<Eigen::Index>(selected.size()),
                           dataset.features.data.cols());
  out.observed_labels.reserve(selected.size());
  if (dataset.true_labels) out.true_labels.emplace();
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const int i = selected[k];
    out.features.data.row(static_cast<Eigen::Index>(k)) =
        dataset.features.data.row(i);
    out.observed_labels.push_back(dataset.observed_labels[static_cast<std::size_t>(i)]);
    if (dataset.true_labels)
      out.true_labels->push_back((*dataset.true_labels)[static_cast<std::size_t>(i)]);
  }
  return result;
}

}  // namespace nlprompt
