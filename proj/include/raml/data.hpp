#pragma once

#include "raml/random.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace raml {

using Eigen::MatrixXd;

struct ModalityInfo {
  std::string name;
  int dim = 0;
};

/// A batch of samples with per-sample availability flags. `ids` are the
/// source-dataset row indices; per-row corruption noise is keyed on them.
struct MultimodalBatch {
  std::vector<MatrixXd> features;  // one n x D_m matrix per modality
  std::vector<int> labels;
  MatrixXd delta;                  // n x M, 0/1
  std::vector<std::int64_t> ids;

  Eigen::Index size() const { return static_cast<Eigen::Index>(labels.size()); }
  int num_modalities() const { return static_cast<int>(features.size()); }
};

struct Dataset {
  std::vector<ModalityInfo> modalities;
  std::vector<MatrixXd> features;
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;

  Eigen::Index num_samples() const { return static_cast<Eigen::Index>(labels.size()); }
  int num_modalities() const { return static_cast<int>(modalities.size()); }
  std::vector<int> input_dims() const;
  void validate() const;

  /// Full-modality batch over all rows.
  MultimodalBatch full_batch() const;
  MultimodalBatch batch(std::span<const Eigen::Index> rows) const;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Synthetic generator

struct SyntheticSpec {
  int num_modalities = 3;
  int num_classes = 4;
  std::vector<int> input_dims{20, 20, 20};
  int shared_dim = 4;
  int private_dim = 2;
  double center_scale = 1.0;
  double noise = 0.5;
  /// Per sample and modality, the noise level is noise * exp(noise_spread * u)
  /// with u ~ U(-1, 1). Zero keeps one level for every sample.
  double noise_spread = 0.0;
  int train_per_class = 1500;
  int test_per_class = 500;
  std::uint64_t seed = 0;
  /// Use one projection matrix for every modality (needs equal input dims).
  bool identical_projections = false;

  static SyntheticSpec reference();
  void validate() const;
};

struct SyntheticSplit {
  Dataset data;
  MatrixXd shared_latent;               // N x k_s
  std::vector<MatrixXd> private_latent;  // per modality, N x k_p
};

struct SyntheticData {
  SyntheticSplit train;
  SyntheticSplit test;
};

/// Each sample of class c draws z_s ~ N(center_s(c), I) and, per modality,
/// z_m ~ N(center_m(c), I); then x_m = A_m [z_s; z_m] + eps with
/// eps ~ N(0, noise^2 I). Centers and projections are fixed by the seed.
SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Missing patterns

struct MissingPattern {
  std::vector<int> mask;  // M entries in {0, 1}, at least one 1

  int num_modalities() const { return static_cast<int>(mask.size()); }
  /// "101" style, modality 0 first.
  std::string str() const;
  static MissingPattern full(int modalities);
  static MissingPattern parse(const std::string& text);
};

/// All 2^M - 1 non-empty masks in binary ascending order, modality 0 being
/// the most significant bit.
std::vector<MissingPattern> enumerate_patterns(int modalities);

/// Zero-fills masked modalities and sets delta to the pattern on every row.
MultimodalBatch apply_pattern(const MultimodalBatch& batch, const MissingPattern& pattern);

/// One uniformly drawn pattern per sample (full pattern included).
MultimodalBatch augment_missing(const MultimodalBatch& batch, Rng& rng);

/// Every sample repeated under every pattern (pattern-major order).
MultimodalBatch materialize_missing(const MultimodalBatch& batch);

// ---------------------------------------------------------------------------
// Corruptions. One base key is drawn from rng per call; row noise is then
// derived from (key, sample id), so the result commutes with row order.

MultimodalBatch corrupt_gaussian(const MultimodalBatch& batch, int modality, double sigma_noise,
                                 Rng& rng);
MultimodalBatch corrupt_mask(const MultimodalBatch& batch, int modality, double probability,
                             Rng& rng);

enum class CorruptionKind { Gaussian, Mask };
CorruptionKind parse_corruption_kind(const std::string& name);
std::string to_string(CorruptionKind kind);
MultimodalBatch corrupt(const MultimodalBatch& batch, int modality, CorruptionKind kind,
                        double level, Rng& rng);

// ---------------------------------------------------------------------------
// Standardization (per-coordinate zero mean, unit variance)

struct Standardizer {
  std::vector<Eigen::RowVectorXd> mean;
  std::vector<Eigen::RowVectorXd> scale;

  static Standardizer fit(const Dataset& data);
  Dataset apply(const Dataset& data) const;
  bool empty() const { return mean.empty(); }
};

// ---------------------------------------------------------------------------
// Directory I/O: meta.json, features_<name>.csv, labels.csv

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// 17 significant digits; parses back to the same double.
std::string format_double(double v);
/// Shortest decimal text that parses back to the same double (for labels).
std::string format_short(double v);

}  // namespace raml
