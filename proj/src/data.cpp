#include "nlprompt/data.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace nlprompt {

namespace {

constexpr char kMagic[8] = {'N', 'L', 'P', 'E', 'M', 'B', '0', '1'};
constexpr std::size_t kHeaderSize = 40;
constexpr const char* kSidecarSchema = "nlprompt-embeddings-sidecar-v1";

constexpr std::uint8_t kFlagNormalized = 1u << 0;
constexpr std::uint8_t kFlagLabels = 1u << 1;
constexpr std::uint8_t kFlagTrueLabels = 1u << 2;

// Little-endian byte packing, independent of host endianness.
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string encode_payload(const Matrix& data, EmbeddingDtype dtype) {
  std::string payload;
  const auto n = static_cast<std::size_t>(data.rows()) *
                 static_cast<std::size_t>(data.cols());
  if (dtype == EmbeddingDtype::f32) {
    payload.reserve(n * 4);
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      for (Eigen::Index c = 0; c < data.cols(); ++c) {
        const float f = static_cast<float>(data(r, c));
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(payload, bits);
      }
    }
  } else {
    payload.reserve(n * 8);
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      for (Eigen::Index c = 0; c < data.cols(); ++c) {
        std::uint64_t bits;
        const double d = data(r, c);
        std::memcpy(&bits, &d, 8);
        put_u64(payload, bits);
      }
    }
  }
  return payload;
}

Matrix decode_payload(const unsigned char* p, std::uint32_t count,
                      std::uint32_t dim, EmbeddingDtype dtype) {
  Matrix data(count, dim);
  for (std::uint32_t r = 0; r < count; ++r) {
    for (std::uint32_t c = 0; c < dim; ++c) {
      if (dtype == EmbeddingDtype::f32) {
        const std::uint32_t bits = get_u32(p);
        p += 4;
        float f;
        std::memcpy(&f, &bits, 4);
        data(r, c) = static_cast<double>(f);
      } else {
        const std::uint64_t bits = get_u64(p);
        p += 8;
        double d;
        std::memcpy(&d, &bits, 8);
        data(r, c) = d;
      }
    }
  }
  return data;
}

std::string encode_labels(const std::vector<int>& labels) {
  std::string out;
  out.reserve(labels.size() * 4);
  for (int v : labels) put_u32(out, static_cast<std::uint32_t>(v));
  return out;
}

std::vector<int> decode_labels(const unsigned char* p, std::uint32_t count) {
  std::vector<int> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out[i] = static_cast<int>(get_u32(p));
    p += 4;
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

// Everything a file can carry; labels optional so prototype files reuse the
// same layout.
struct RawEmbeddings {
  Matrix data;
  bool normalized = false;
  int class_count = 0;
  std::uint64_t rng_seed = 0;
  std::optional<std::vector<int>> labels;
  std::optional<std::vector<int>> true_labels;
};

void save_raw(const std::filesystem::path& path, const RawEmbeddings& raw,
              EmbeddingFileFormat format, EmbeddingDtype dtype) {
  if (raw.data.rows() == 0 || raw.data.cols() == 0)
    throw ValidationError("save: empty feature matrix");
  const std::string payload = encode_payload(raw.data, dtype);
  const std::uint64_t checksum = fnv1a64(payload.data(), payload.size());

  if (format == EmbeddingFileFormat::binary) {
    std::string bytes;
    bytes.append(kMagic, sizeof kMagic);
    put_u32(bytes, static_cast<std::uint32_t>(raw.data.rows()));
    put_u32(bytes, static_cast<std::uint32_t>(raw.data.cols()));
    put_u32(bytes, static_cast<std::uint32_t>(raw.class_count));
    bytes.push_back(static_cast<char>(dtype));
    std::uint8_t flags = 0;
    if (raw.normalized) flags |= kFlagNormalized;
    if (raw.labels) flags |= kFlagLabels;
    if (raw.true_labels) flags |= kFlagTrueLabels;
    bytes.push_back(static_cast<char>(flags));
    put_u16(bytes, 0);
    put_u64(bytes, checksum);
    put_u64(bytes, raw.rng_seed);
    bytes += payload;
    if (raw.labels) bytes += encode_labels(*raw.labels);
    if (raw.true_labels) bytes += encode_labels(*raw.true_labels);
    write_file(path, bytes);
    return;
  }

  write_file(path, payload);
  nlohmann::json meta{
      {"schema", kSidecarSchema},
      {"count", raw.data.rows()},
      {"dim", raw.data.cols()},
      {"class_count", raw.class_count},
      {"dtype", dtype == EmbeddingDtype::f32 ? "f32le" : "f64le"},
      {"normalized", raw.normalized},
      {"checksum", checksum},
      {"rng_seed", raw.rng_seed},
  };
  if (raw.labels) meta["observed_labels"] = *raw.labels;
  if (raw.true_labels) meta["true_labels"] = *raw.true_labels;
  write_file(path.string() + ".json", meta.dump(2) + "\n");
}

RawEmbeddings load_raw_binary(const std::string& bytes,
                              const std::filesystem::path& path) {
  if (bytes.size() < kHeaderSize)
    throw ValidationError("truncated file: " + path.string() + " (expected at least " +
                          std::to_string(kHeaderSize) + " header bytes, got " +
                          std::to_string(bytes.size()) + ")");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t count = get_u32(p + 8);
  const std::uint32_t dim = get_u32(p + 12);
  const std::uint32_t class_count = get_u32(p + 16);
  const std::uint8_t dtype_tag = p[20];
  const std::uint8_t flags = p[21];
  const std::uint64_t checksum = get_u64(p + 24);
  const std::uint64_t rng_seed = get_u64(p + 32);

  if (dtype_tag != 1 && dtype_tag != 2)
    throw ValidationError("malformed header (unsupported dtype): " + path.string());
  const auto dtype = static_cast<EmbeddingDtype>(dtype_tag);
  const std::size_t esz = dtype == EmbeddingDtype::f32 ? 4 : 8;
  if (count == 0 || dim == 0 || count > 0x7fffffffu || dim > 0x7fffffffu)
    throw ValidationError("malformed header (bad dimensions): " + path.string());
  const std::size_t payload_size = std::size_t(count) * dim * esz;
  if (payload_size / esz / dim != count)
    throw ValidationError("malformed header (dimension overflow): " + path.string());
  std::size_t expected = kHeaderSize + payload_size;
  if (flags & kFlagLabels) expected += std::size_t(count) * 4;
  if (flags & kFlagTrueLabels) expected += std::size_t(count) * 4;
  if (bytes.size() < expected)
    throw ValidationError("truncated file: " + path.string() + " (expected " +
                          std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()) + ")");
  if (bytes.size() > expected)
    throw ValidationError("trailing bytes: " + path.string() + " (expected " +
                          std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()) + ")");

  if (fnv1a64(bytes.data() + kHeaderSize, payload_size) != checksum)
    throw ValidationError("checksum mismatch: " + path.string());

  RawEmbeddings raw;
  raw.data = decode_payload(p + kHeaderSize, count, dim, dtype);
  raw.normalized = flags & kFlagNormalized;
  raw.class_count = static_cast<int>(class_count);
  raw.rng_seed = rng_seed;
  const unsigned char* tail = p + kHeaderSize + payload_size;
  if (flags & kFlagLabels) {
    raw.labels = decode_labels(tail, count);
    tail += std::size_t(count) * 4;
  }
  if (flags & kFlagTrueLabels) raw.true_labels = decode_labels(tail, count);
  if (raw.normalized && dtype == EmbeddingDtype::f32) {
    // f32 cannot hold unit norms to 1e-9; restore the invariant in double.
    for (Eigen::Index r = 0; r < raw.data.rows(); ++r)
      raw.data.row(r) /= raw.data.row(r).norm();
  }
  return raw;
}

RawEmbeddings load_raw_sidecar(const std::filesystem::path& path) {
  const std::string payload = read_file(path);
  const std::filesystem::path meta_path = path.string() + ".json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed sidecar " + meta_path.string() + ": " +
                          e.what());
  }
  if (meta.value("schema", "") != kSidecarSchema)
    throw ValidationError("malformed sidecar (schema): " + meta_path.string());

  const auto count = meta.at("count").get<std::uint32_t>();
  const auto dim = meta.at("dim").get<std::uint32_t>();
  const std::string dtype_name = meta.at("dtype").get<std::string>();
  if (dtype_name != "f32le" && dtype_name != "f64le")
    throw ValidationError("malformed sidecar (dtype): " + meta_path.string());
  const auto dtype =
      dtype_name == "f32le" ? EmbeddingDtype::f32 : EmbeddingDtype::f64;
  const std::size_t esz = dtype == EmbeddingDtype::f32 ? 4 : 8;
  if (payload.size() != std::size_t(count) * dim * esz)
    throw ValidationError("payload size does not match sidecar: " + path.string());
  if (fnv1a64(payload.data(), payload.size()) !=
      meta.at("checksum").get<std::uint64_t>())
    throw ValidationError("checksum mismatch: " + path.string());

  RawEmbeddings raw;
  raw.data = decode_payload(reinterpret_cast<const unsigned char*>(payload.data()),
                            count, dim, dtype);
  raw.normalized = meta.value("normalized", false);
  raw.class_count = meta.at("class_count").get<int>();
  raw.rng_seed = meta.value("rng_seed", std::uint64_t{0});
  if (meta.contains("observed_labels"))
    raw.labels = meta["observed_labels"].get<std::vector<int>>();
  if (meta.contains("true_labels"))
    raw.true_labels = meta["true_labels"].get<std::vector<int>>();
  if (raw.normalized && dtype == EmbeddingDtype::f32) {
    for (Eigen::Index r = 0; r < raw.data.rows(); ++r)
      raw.data.row(r) /= raw.data.row(r).norm();
  }
  return raw;
}

RawEmbeddings load_raw(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= sizeof kMagic &&
      std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0)
    return load_raw_binary(bytes, path);
  if (std::filesystem::exists(path.string() + ".json"))
    return load_raw_sidecar(path);
  throw ValidationError("unrecognized embedding file (no magic, no sidecar): " +
                        path.string());
}

}  // namespace

void save_features(const std::filesystem::path& path,
                   const LabeledDataset& dataset, EmbeddingFileFormat format,
                   EmbeddingDtype dtype) {
  dataset.validate();
  RawEmbeddings raw;
  raw.data = dataset.features.data;
  raw.normalized = dataset.features.normalized;
  raw.class_count = dataset.class_count;
  raw.rng_seed = dataset.rng_seed;
  raw.labels = dataset.observed_labels;
  raw.true_labels = dataset.true_labels;
  save_raw(path, raw, format, dtype);
}

LabeledDataset load_features(const std::filesystem::path& path) {
  RawEmbeddings raw = load_raw(path);
  if (!raw.labels)
    throw ValidationError("embedding file has no labels: " + path.string());
  LabeledDataset dataset;
  dataset.features = FeatureMatrix{std::move(raw.data), raw.normalized};
  dataset.observed_labels = std::move(*raw.labels);
  dataset.true_labels = std::move(raw.true_labels);
  dataset.class_count = raw.class_count;
  dataset.rng_seed = raw.rng_seed;
  dataset.validate();
  return dataset;
}

void save_prototypes(const std::filesystem::path& path,
                     const FeatureMatrix& prototypes,
                     EmbeddingFileFormat format, EmbeddingDtype dtype) {
  prototypes.validate();
  RawEmbeddings raw;
  raw.data = prototypes.data;
  raw.normalized = prototypes.normalized;
  raw.class_count = prototypes.rows();
  save_raw(path, raw, format, dtype);
}

FeatureMatrix load_prototypes(const std::filesystem::path& path) {
  RawEmbeddings raw = load_raw(path);
  FeatureMatrix prototypes{std::move(raw.data), raw.normalized};
  prototypes.validate();
  return prototypes;
}

SyntheticEmbeddings make_synthetic_embeddings(int class_count, int per_class,
                                              int dim,
                                              double cluster_tightness,
                                              std::uint64_t seed) {
  if (class_count < 2)
    throw ValidationError("make_synthetic_embeddings: need at least 2 classes");
  if (per_class < 1)
    throw ValidationError("make_synthetic_embeddings: per_class must be >= 1");
  if (dim < 2)
    throw ValidationError("make_synthetic_embeddings: dim must be >= 2");
  // +infinity is legal: it degenerates the noise scale to 0, so every sample
  // coincides with its prototype.
  if (!(cluster_tightness > 0.0))
    throw ValidationError(
        "make_synthetic_embeddings: cluster_tightness must be positive");

  SplitMix64 rng(seed);
  SyntheticEmbeddings out;

  Matrix protos(class_count, dim);
  const bool orthogonalize = dim >= class_count;
  if (!orthogonalize)
    out.warnings.push_back(
        "dim < class_count: prototypes are random unit vectors, not "
        "orthogonalized");
  for (int r = 0; r < class_count; ++r) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 100)
        throw NumericalError("make_synthetic_embeddings: degenerate prototype draw");
      for (int c = 0; c < dim; ++c) protos(r, c) = rng.next_gaussian();
      if (orthogonalize) {
        for (int pass = 0; pass < 2; ++pass) {
          for (int s = 0; s < r; ++s)
            protos.row(r) -=
                protos.row(r).dot(protos.row(s)) * protos.row(s);
        }
      }
      const double n = protos.row(r).norm();
      if (n > 1e-8) {
        protos.row(r) /= n;
        break;
      }
    }
  }
  out.prototypes = FeatureMatrix{std::move(protos), true};

  const double noise_scale = 1.0 / cluster_tightness;
  LabeledDataset& ds = out.dataset;
  ds.class_count = class_count;
  ds.rng_seed = seed;
  ds.features.normalized = true;
  ds.features.data.resize(static_cast<Eigen::Index>(class_count) * per_class, dim);
  Eigen::Index row = 0;
  for (int c = 0; c < class_count; ++c) {
    for (int k = 0; k < per_class; ++k, ++row) {
      for (int j = 0; j < dim; ++j)
        ds.features.data(row, j) = out.prototypes.data(c, j) +
                                   noise_scale * rng.next_gaussian();
      ds.features.data.row(row) /= ds.features.data.row(row).norm();
      ds.observed_labels.push_back(c);
    }
  }
  ds.true_labels = ds.observed_labels;
  ds.validate();
  return out;
}

}  // namespace nlprompt
