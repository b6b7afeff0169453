#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nlprompt/noise.hpp"

namespace nlprompt {

/// On-disk layouts. `binary` is a single self-describing file (magic
/// NLPEMB01, little-endian header, checksummed payload). `json_sidecar`
/// stores the raw payload at `path` and the metadata, labels included, in
/// `path`.json. load_features sniffs the magic and falls back to the sidecar.
enum class EmbeddingFileFormat { binary, json_sidecar };

/// Payload element type. f64 is the default so normalized rows survive a
/// round trip exactly; f32 halves the size but loses the 1e-9 norm
/// guarantee, so normalized f32 rows are renormalized on load.
enum class EmbeddingDtype { f32 = 1, f64 = 2 };

void save_features(const std::filesystem::path& path,
                   const LabeledDataset& dataset,
                   EmbeddingFileFormat format = EmbeddingFileFormat::binary,
                   EmbeddingDtype dtype = EmbeddingDtype::f64);

LabeledDataset load_features(const std::filesystem::path& path);

/// Prototype matrices use the same layout with no label blocks and
/// class_count equal to the row count.
void save_prototypes(const std::filesystem::path& path,
                     const FeatureMatrix& prototypes,
                     EmbeddingFileFormat format = EmbeddingFileFormat::binary,
                     EmbeddingDtype dtype = EmbeddingDtype::f64);

FeatureMatrix load_prototypes(const std::filesystem::path& path);

struct SyntheticEmbeddings {
  LabeledDataset dataset;
  FeatureMatrix prototypes;
  std::vector<std::string> warnings;
};

/// Unit prototypes (orthonormalized when dim >= class_count, else random
/// unit rows plus a warning) and per-class clusters: each sample is the
/// prototype plus gaussian noise of scale 1/cluster_tightness, renormalized.
/// Labels start clean: observed == true.
SyntheticEmbeddings make_synthetic_embeddings(int class_count, int per_class,
                                              int dim,
                                              double cluster_tightness,
                                              std::uint64_t seed);

}  // namespace nlprompt
