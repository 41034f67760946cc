#include "raml/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace raml {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Dataset

std::vector<int> Dataset::input_dims() const {
  std::vector<int> dims;
  for (const auto& m : modalities) dims.push_back(m.dim);
  return dims;
}

void Dataset::validate() const {
  if (modalities.empty()) throw DataError("dataset: no modalities");
  if (features.size() != modalities.size()) {
    throw DataError("dataset: " + std::to_string(modalities.size()) + " modalities declared but " +
                    std::to_string(features.size()) + " feature matrices present");
  }
  if (num_classes < 2) throw DataError("dataset: num_classes must be >= 2");
  const Eigen::Index n = num_samples();
  for (std::size_t m = 0; m < features.size(); ++m) {
    if (features[m].rows() != n) {
      throw DataError("dataset: modality '" + modalities[m].name + "' has " +
                      std::to_string(features[m].rows()) + " rows, expected " + std::to_string(n));
    }
    if (features[m].cols() != modalities[m].dim) {
      throw DataError("dataset: modality '" + modalities[m].name + "' has " +
                      std::to_string(features[m].cols()) + " columns, expected " +
                      std::to_string(modalities[m].dim));
    }
    if (!features[m].allFinite()) {
      throw DataError("dataset: modality '" + modalities[m].name + "' has non-finite values");
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

MultimodalBatch Dataset::full_batch() const {
  MultimodalBatch b;
  b.features = features;
  b.labels = labels;
  b.delta = MatrixXd::Ones(num_samples(), num_modalities());
  b.ids.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) b.ids[i] = static_cast<std::int64_t>(i);
  return b;
}

MultimodalBatch Dataset::batch(std::span<const Eigen::Index> rows) const {
  MultimodalBatch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  for (const MatrixXd& x : features) {
    MatrixXd sub(n, x.cols());
    for (Eigen::Index k = 0; k < n; ++k) sub.row(k) = x.row(rows[static_cast<std::size_t>(k)]);
    b.features.push_back(std::move(sub));
  }
  for (Eigen::Index r : rows) {
    b.labels.push_back(labels.at(static_cast<std::size_t>(r)));
    b.ids.push_back(static_cast<std::int64_t>(r));
  }
  b.delta = MatrixXd::Ones(n, num_modalities());
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic generator

SyntheticSpec SyntheticSpec::reference() { return SyntheticSpec{}; }

void SyntheticSpec::validate() const {
  if (num_modalities < 1) throw std::invalid_argument("synthetic: num_modalities must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("synthetic: num_classes must be >= 2");
  if (static_cast<int>(input_dims.size()) != num_modalities) {
    throw std::invalid_argument("synthetic: input_dims must list one dim per modality");
  }
  for (int d : input_dims) {
    if (d < 1) throw std::invalid_argument("synthetic: input dims must be >= 1");
  }
  if (shared_dim < 1) throw std::invalid_argument("synthetic: shared_dim must be >= 1");
  if (private_dim < 0) throw std::invalid_argument("synthetic: private_dim must be >= 0");
  if (!(noise_spread >= 0)) throw std::invalid_argument("synthetic: noise_spread must be >= 0");
  if (!(noise >= 0)) throw std::invalid_argument("synthetic: noise must be >= 0");
  if (!(center_scale >= 0)) throw std::invalid_argument("synthetic: center_scale must be >= 0");
  if (train_per_class < 0 || test_per_class < 0) {
    throw std::invalid_argument("synthetic: samples per class must be >= 0");
  }
  if (identical_projections &&
      std::adjacent_find(input_dims.begin(), input_dims.end(), std::not_equal_to<>()) !=
          input_dims.end()) {
    throw std::invalid_argument("synthetic: identical_projections needs equal input dims");
  }
}

namespace {

struct SyntheticStructure {
  MatrixXd shared_centers;                // C x k_s
  std::vector<MatrixXd> private_centers;  // per modality, C x k_p
  std::vector<MatrixXd> projections;      // per modality, D_m x (k_s + k_p)
};

SyntheticStructure make_structure(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synthetic.structure"));
  SyntheticStructure s;
  s.shared_centers = spec.center_scale * standard_normal(spec.num_classes, spec.shared_dim, rng);
  const int k = spec.shared_dim + spec.private_dim;
  for (int m = 0; m < spec.num_modalities; ++m) {
    s.private_centers.push_back(spec.center_scale *
                                standard_normal(spec.num_classes, spec.private_dim, rng));
    if (spec.identical_projections && m > 0) {
      s.projections.push_back(s.projections.front());
    } else {
      s.projections.push_back(standard_normal(spec.input_dims[static_cast<std::size_t>(m)], k, rng) /
                              std::sqrt(static_cast<double>(k)));
    }
  }
  return s;
}

SyntheticSplit make_split(const SyntheticSpec& spec, const SyntheticStructure& s, int per_class,
                          const std::string& split, Rng& rng, Rng& scale_rng) {
  const int n = per_class * spec.num_classes;
  SyntheticSplit out;
  Dataset& d = out.data;
  d.num_classes = spec.num_classes;
  d.split = split;
  for (int m = 0; m < spec.num_modalities; ++m) {
    d.modalities.push_back({"m" + std::to_string(m), spec.input_dims[static_cast<std::size_t>(m)]});
    d.features.emplace_back(n, spec.input_dims[static_cast<std::size_t>(m)]);
    out.private_latent.emplace_back(n, spec.private_dim);
  }
  out.shared_latent.resize(n, spec.shared_dim);
  d.labels.resize(static_cast<std::size_t>(n));

  const int k = spec.shared_dim + spec.private_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> spread(-1.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const int c = i % spec.num_classes;
    d.labels[static_cast<std::size_t>(i)] = c;
    Eigen::VectorXd zs(spec.shared_dim);
    for (int j = 0; j < spec.shared_dim; ++j) zs(j) = s.shared_centers(c, j) + normal(rng);
    out.shared_latent.row(i) = zs.transpose();
    for (int m = 0; m < spec.num_modalities; ++m) {
      Eigen::VectorXd z(k);
      z.head(spec.shared_dim) = zs;
      for (int j = 0; j < spec.private_dim; ++j) {
        z(spec.shared_dim + j) = s.private_centers[static_cast<std::size_t>(m)](c, j) + normal(rng);
      }
      out.private_latent[static_cast<std::size_t>(m)].row(i) = z.tail(spec.private_dim).transpose();
      Eigen::VectorXd x = s.projections[static_cast<std::size_t>(m)] * z;
      // The scale stream is separate so a zero spread leaves every other draw untouched.
      const double level =
          spec.noise_spread > 0 ? spec.noise * std::exp(spec.noise_spread * spread(scale_rng)) : spec.noise;
      for (Eigen::Index j = 0; j < x.size(); ++j) x(j) += level * normal(rng);
      d.features[static_cast<std::size_t>(m)].row(i) = x.transpose();
    }
  }
  return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const SyntheticStructure s = make_structure(spec, seed);
  Rng train_rng(derive_seed(seed, "synthetic.train"));
  Rng test_rng(derive_seed(seed, "synthetic.test"));
  Rng train_scale(derive_seed(seed, "synthetic.train.noise_scale"));
  Rng test_scale(derive_seed(seed, "synthetic.test.noise_scale"));
  SyntheticData out;
  out.train = make_split(spec, s, spec.train_per_class, "train", train_rng, train_scale);
  out.test = make_split(spec, s, spec.test_per_class, "test", test_rng, test_scale);
  return out;
}

// ---------------------------------------------------------------------------
// Missing patterns

std::string MissingPattern::str() const {
  std::string s;
  for (int v : mask) s.push_back(v ? '1' : '0');
  return s;
}

MissingPattern MissingPattern::full(int modalities) {
  return MissingPattern{std::vector<int>(static_cast<std::size_t>(modalities), 1)};
}

MissingPattern MissingPattern::parse(const std::string& text) {
  MissingPattern p;
  for (char c : text) {
    if (c != '0' && c != '1') throw std::invalid_argument("pattern '" + text + "': expected 0/1 digits");
    p.mask.push_back(c == '1');
  }
  if (std::find(p.mask.begin(), p.mask.end(), 1) == p.mask.end()) {
    throw std::invalid_argument("pattern '" + text + "': at least one modality must be present");
  }
  return p;
}

std::vector<MissingPattern> enumerate_patterns(int modalities) {
  if (modalities < 1) throw std::invalid_argument("enumerate_patterns: need at least one modality");
  if (modalities > 20) throw std::invalid_argument("enumerate_patterns: too many modalities");
  std::vector<MissingPattern> out;
  const std::uint32_t count = (1u << modalities);
  for (std::uint32_t code = 1; code < count; ++code) {
    MissingPattern p;
    for (int m = 0; m < modalities; ++m) p.mask.push_back((code >> (modalities - 1 - m)) & 1u);
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

void apply_row_pattern(MultimodalBatch& b, Eigen::Index row, const MissingPattern& p) {
  for (int m = 0; m < b.num_modalities(); ++m) {
    b.delta(row, m) = p.mask[static_cast<std::size_t>(m)];
    if (!p.mask[static_cast<std::size_t>(m)]) b.features[static_cast<std::size_t>(m)].row(row).setZero();
  }
}

}  // namespace

MultimodalBatch apply_pattern(const MultimodalBatch& batch, const MissingPattern& pattern) {
  if (pattern.num_modalities() != batch.num_modalities()) {
    throw std::invalid_argument("apply_pattern: pattern has " +
                                std::to_string(pattern.num_modalities()) + " entries for " +
                                std::to_string(batch.num_modalities()) + " modalities");
  }
  MultimodalBatch out = batch;
  for (int m = 0; m < out.num_modalities(); ++m) {
    const bool present = pattern.mask[static_cast<std::size_t>(m)] != 0;
    out.delta.col(m).setConstant(present ? 1.0 : 0.0);
    if (!present) out.features[static_cast<std::size_t>(m)].setZero();
  }
  return out;
}

MultimodalBatch augment_missing(const MultimodalBatch& batch, Rng& rng) {
  const auto patterns = enumerate_patterns(batch.num_modalities());
  std::uniform_int_distribution<std::size_t> pick(0, patterns.size() - 1);
  MultimodalBatch out = batch;
  for (Eigen::Index i = 0; i < out.size(); ++i) apply_row_pattern(out, i, patterns[pick(rng)]);
  return out;
}

MultimodalBatch materialize_missing(const MultimodalBatch& batch) {
  const auto patterns = enumerate_patterns(batch.num_modalities());
  const Eigen::Index n = batch.size();
  const auto copies = static_cast<Eigen::Index>(patterns.size());
  MultimodalBatch out;
  for (const MatrixXd& x : batch.features) out.features.push_back(x.replicate(copies, 1));
  out.delta = MatrixXd::Ones(n * copies, batch.num_modalities());
  for (Eigen::Index c = 0; c < copies; ++c) {
    out.labels.insert(out.labels.end(), batch.labels.begin(), batch.labels.end());
    out.ids.insert(out.ids.end(), batch.ids.begin(), batch.ids.end());
    for (Eigen::Index i = 0; i < n; ++i) {
      apply_row_pattern(out, c * n + i, patterns[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corruptions

namespace {

void check_modality(const MultimodalBatch& b, int modality, const char* who) {
  if (modality < 0 || modality >= b.num_modalities()) {
    throw std::out_of_range(std::string(who) + ": modality " + std::to_string(modality) +
                            " out of range");
  }
}

}  // namespace

MultimodalBatch corrupt_gaussian(const MultimodalBatch& batch, int modality, double sigma_noise,
                                 Rng& rng) {
  if (!(sigma_noise >= 0)) throw std::invalid_argument("corrupt_gaussian: sigma must be >= 0");
  check_modality(batch, modality, "corrupt_gaussian");
  const std::uint64_t key = rng();
  MultimodalBatch out = batch;
  if (sigma_noise == 0) return out;
  MatrixXd& x = out.features[static_cast<std::size_t>(modality)];
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Rng row_rng(derive_seed(key, static_cast<std::uint64_t>(out.ids[static_cast<std::size_t>(i)])));
    std::normal_distribution<double> normal(0.0, sigma_noise);
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) += normal(row_rng);
  }
  return out;
}

MultimodalBatch corrupt_mask(const MultimodalBatch& batch, int modality, double probability,
                             Rng& rng) {
  if (!(probability >= 0 && probability <= 1)) {
    throw std::invalid_argument("corrupt_mask: probability must be in [0, 1]");
  }
  check_modality(batch, modality, "corrupt_mask");
  const std::uint64_t key = rng();
  MultimodalBatch out = batch;
  if (probability == 0) return out;
  MatrixXd& x = out.features[static_cast<std::size_t>(modality)];
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Rng row_rng(derive_seed(key, static_cast<std::uint64_t>(out.ids[static_cast<std::size_t>(i)])));
    std::bernoulli_distribution drop(probability);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (drop(row_rng)) x(i, j) = 0.0;
    }
  }
  return out;
}

CorruptionKind parse_corruption_kind(const std::string& name) {
  if (name == "gaussian") return CorruptionKind::Gaussian;
  if (name == "mask") return CorruptionKind::Mask;
  throw std::invalid_argument("unknown corruption kind '" + name + "' (expected gaussian or mask)");
}

std::string to_string(CorruptionKind kind) {
  return kind == CorruptionKind::Gaussian ? "gaussian" : "mask";
}

MultimodalBatch corrupt(const MultimodalBatch& batch, int modality, CorruptionKind kind,
                        double level, Rng& rng) {
  return kind == CorruptionKind::Gaussian ? corrupt_gaussian(batch, modality, level, rng)
                                          : corrupt_mask(batch, modality, level, rng);
}

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::fit(const Dataset& data) {
  Standardizer s;
  for (const MatrixXd& x : data.features) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::RowVectorXd scale =
        ((x.rowwise() - mean).array().square().colwise().sum() / std::max<double>(1, x.rows()))
            .sqrt()
            .matrix();
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
      if (!(scale(j) > 1e-12)) scale(j) = 1.0;
    }
    s.mean.push_back(mean);
    s.scale.push_back(scale);
  }
  return s;
}

Dataset Standardizer::apply(const Dataset& data) const {
  if (mean.size() != data.features.size()) {
    throw DataError("standardizer: fitted on " + std::to_string(mean.size()) +
                    " modalities, dataset has " + std::to_string(data.features.size()));
  }
  Dataset out = data;
  for (std::size_t m = 0; m < out.features.size(); ++m) {
    MatrixXd& x = out.features[m];
    if (x.cols() != mean[m].size()) throw DataError("standardizer: modality width mismatch");
    x = ((x.rowwise() - mean[m]).array().rowwise() / scale[m].array()).matrix();
  }
  return out;
}

// ---------------------------------------------------------------------------
// I/O

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string format_short(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string features_file(const std::string& name) { return "features_" + name + ".csv"; }

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.push_back(line);
  }
  return lines;
}

double parse_cell(std::string_view cell, const fs::path& file, std::size_t line) {
  double v = 0;
  while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
  while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw DataError(file.string() + ":" + std::to_string(line) + ": non-numeric cell '" +
                    std::string(cell) + "'");
  }
  return v;
}

MatrixXd read_matrix(const fs::path& file, int cols) {
  const auto lines = read_lines(file);
  MatrixXd x(static_cast<Eigen::Index>(lines.size()), cols);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view rest = lines[i];
    int j = 0;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view cell = rest.substr(0, comma);
      if (j >= cols) {
        throw DataError(file.string() + ":" + std::to_string(i + 1) + ": more than " +
                        std::to_string(cols) + " columns");
      }
      x(static_cast<Eigen::Index>(i), j++) = parse_cell(cell, file, i + 1);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (j != cols) {
      throw DataError(file.string() + ":" + std::to_string(i + 1) + ": expected " +
                      std::to_string(cols) + " columns, found " + std::to_string(j));
    }
  }
  return x;
}

}  // namespace

void save_dataset(const Dataset& data, const fs::path& dir) {
  data.validate();
  fs::create_directories(dir);
  json meta;
  meta["modalities"] = json::array();
  for (const auto& m : data.modalities) meta["modalities"].push_back({{"name", m.name}, {"dim", m.dim}});
  meta["num_classes"] = data.num_classes;
  meta["num_samples"] = data.num_samples();
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

  for (std::size_t m = 0; m < data.modalities.size(); ++m) {
    std::ofstream out(dir / features_file(data.modalities[m].name));
    const MatrixXd& x = data.features[m];
    std::string line;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      line.clear();
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (j) line.push_back(',');
        line += format_double(x(i, j));
      }
      out << line << '\n';
    }
  }
  std::ofstream labels(dir / "labels.csv");
  for (int y : data.labels) labels << y << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw DataError("cannot open " + meta_path.string());
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }

  Dataset d;
  d.split = dir.filename().string();
  try {
    for (const auto& m : meta.at("modalities")) {
      d.modalities.push_back({m.at("name").get<std::string>(), m.at("dim").get<int>()});
    }
    d.num_classes = meta.at("num_classes").get<int>();
  } catch (const json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }
  const long declared = meta.value("num_samples", -1L);

  for (const auto& m : d.modalities) {
    const fs::path file = dir / features_file(m.name);
    if (!fs::exists(file)) {
      throw DataError(meta_path.string() + " declares " + std::to_string(d.modalities.size()) +
                      " modalities but " + file.string() + " is missing");
    }
    d.features.push_back(read_matrix(file, m.dim));
  }

  const fs::path labels_path = dir / "labels.csv";
  const auto lines = read_lines(labels_path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    int y = 0;
    const auto res = std::from_chars(lines[i].data(), lines[i].data() + lines[i].size(), y);
    if (res.ec != std::errc() || res.ptr != lines[i].data() + lines[i].size()) {
      throw DataError(labels_path.string() + ":" + std::to_string(i + 1) + ": non-integer label '" +
                      lines[i] + "'");
    }
    if (y < 0 || y >= d.num_classes) {
      throw DataError(labels_path.string() + ":" + std::to_string(i + 1) + ": label " +
                      std::to_string(y) + " outside [0, " + std::to_string(d.num_classes) + ")");
    }
    d.labels.push_back(y);
  }

  for (std::size_t m = 0; m < d.features.size(); ++m) {
    if (d.features[m].rows() != d.num_samples()) {
      throw DataError(features_file(d.modalities[m].name) + " has " +
                      std::to_string(d.features[m].rows()) + " rows but labels.csv has " +
                      std::to_string(d.num_samples()));
    }
  }
  if (declared >= 0 && declared != d.num_samples()) {
    throw DataError(meta_path.string() + " declares " + std::to_string(declared) +
                    " samples, files contain " + std::to_string(d.num_samples()));
  }
  d.validate();
  return d;
}

}  // namespace raml
