#include "calbound/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "calbound/csv.hpp"
#include "calbound/error.hpp"
#include "calbound/rng.hpp"

namespace calbound::synthdata {

namespace {

// Stream tags for per-split RNG derivation.
constexpr std::uint64_t kStreamIdTrain = 0x5354524E01ULL;
constexpr std::uint64_t kStreamIdTest = 0x5354524E02ULL;
constexpr std::uint64_t kStreamOodTest = 0x5354524E03ULL;

LabeledSplit draw_split(Rng& rng, std::size_t n, const ShiftSpec& spec, bool apply_shift) {
  LabeledSplit split;
  split.features = DenseMatrix(n, spec.total_dims);
  split.labels.resize(n);
  const std::size_t b1 = spec.block1_dims;
  const std::size_t b2 = spec.block2_dims;
  for (std::size_t i = 0; i < n; ++i) {
    const int clean = rng.bernoulli(0.5) ? 1 : 0;
    const double sign = clean ? 1.0 : -1.0;
    double* row = split.features.row_ptr(i);
    for (std::size_t j = 0; j < b1; ++j) row[j] = rng.normal() + sign * spec.class_separation;
    for (std::size_t j = 0; j < b2; ++j) row[b1 + j] = rng.normal() + sign * spec.class_separation;
    for (std::size_t j = 0; j < spec.noise_dims; ++j) row[b1 + b2 + j] = rng.normal();
    const bool flip = rng.bernoulli(spec.label_flip_rate);
    split.labels[i] = flip ? 1 - clean : clean;
    if (apply_shift) {
      for (std::size_t j = 0; j < b1; ++j) row[j] += spec.ood_mean_shift;
      for (std::size_t j = 0; j < b2; ++j) row[b1 + j] *= spec.ood_scale;
    }
  }
  return split;
}

}  // namespace

void ShiftSpec::validate() const {
  if (block1_dims + block2_dims + noise_dims != total_dims)
    throw InvalidSpec("block1_dims + block2_dims + noise_dims must equal total_dims");
  if (!(label_flip_rate >= 0.0 && label_flip_rate < 0.5))
    throw InvalidSpec("label_flip_rate must lie in [0, 0.5)");
  if (!(ood_scale > 0.0)) throw InvalidSpec("ood_scale must be > 0");
  if (total_dims == 0) throw InvalidSpec("total_dims must be positive");
  if (sizes.id_train < 2 || sizes.id_test < 2 || sizes.ood_test < 2)
    throw InvalidSpec("every split needs at least 2 samples");
  if (!std::isfinite(ood_mean_shift) || !std::isfinite(ood_scale) ||
      !std::isfinite(class_separation))
    throw InvalidSpec("shift parameters must be finite");
}

ShiftSpec ShiftSpec::small_profile(std::uint64_t seed) {
  ShiftSpec s;
  s.total_dims = 100;
  s.block1_dims = 40;
  s.block2_dims = 40;
  s.noise_dims = 20;
  s.sizes = SplitSizes{1000, 500, 500};
  s.seed = seed;
  return s;
}

ShiftedDataset generate(const ShiftSpec& spec) {
  spec.validate();
  ShiftedDataset data;
  {
    Rng rng(derive_seed(spec.seed, kStreamIdTrain));
    data.id_train = draw_split(rng, spec.sizes.id_train, spec, false);
  }
  {
    Rng rng(derive_seed(spec.seed, kStreamIdTest));
    data.id_test = draw_split(rng, spec.sizes.id_test, spec, false);
  }
  {
    Rng rng(derive_seed(spec.seed, kStreamOodTest));
    data.ood_test = draw_split(rng, spec.sizes.ood_test, spec, true);
  }
  return data;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double gaussian_misclass(double separation, std::size_t signal_dims) {
  return normal_cdf(-separation * std::sqrt(static_cast<double>(signal_dims)));
}

double bayes_error(const ShiftSpec& spec) {
  spec.validate();
  const double g = gaussian_misclass(spec.class_separation, spec.block1_dims + spec.block2_dims);
  return spec.label_flip_rate + (1.0 - 2.0 * spec.label_flip_rate) * g;
}

PairedSplit make_paired_views(const DenseMatrix& features, const ShiftSpec& spec) {
  if (features.cols() != spec.total_dims) throw ShapeMismatch("feature columns vs spec dims");
  const std::size_t n = features.rows();
  const std::size_t b1 = spec.block1_dims;
  const std::size_t b2 = spec.block2_dims;
  PairedSplit out;
  out.view_v = DenseMatrix(n, b1 + spec.noise_dims);
  out.view_l = DenseMatrix(n, b2);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = features.row_ptr(i);
    double* v = out.view_v.row_ptr(i);
    double* l = out.view_l.row_ptr(i);
    for (std::size_t j = 0; j < b1; ++j) v[j] = src[j];
    for (std::size_t j = 0; j < spec.noise_dims; ++j) v[b1 + j] = src[b1 + b2 + j];
    for (std::size_t j = 0; j < b2; ++j) l[j] = src[b1 + j];
  }
  return out;
}

std::string spec_to_json_string(const ShiftSpec& spec) {
  nlohmann::json j;
  j["total_dims"] = spec.total_dims;
  j["block1_dims"] = spec.block1_dims;
  j["block2_dims"] = spec.block2_dims;
  j["noise_dims"] = spec.noise_dims;
  j["label_flip_rate"] = spec.label_flip_rate;
  j["ood_mean_shift"] = spec.ood_mean_shift;
  j["ood_scale"] = spec.ood_scale;
  j["class_separation"] = spec.class_separation;
  j["n_id_train"] = spec.sizes.id_train;
  j["n_id_test"] = spec.sizes.id_test;
  j["n_ood_test"] = spec.sizes.ood_test;
  j["seed"] = spec.seed;
  return j.dump(2) + "\n";
}

ShiftSpec spec_from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ShiftSpec spec;
  spec.total_dims = j.at("total_dims").get<std::size_t>();
  spec.block1_dims = j.at("block1_dims").get<std::size_t>();
  spec.block2_dims = j.at("block2_dims").get<std::size_t>();
  spec.noise_dims = j.at("noise_dims").get<std::size_t>();
  spec.label_flip_rate = j.at("label_flip_rate").get<double>();
  spec.ood_mean_shift = j.at("ood_mean_shift").get<double>();
  spec.ood_scale = j.at("ood_scale").get<double>();
  spec.class_separation = j.at("class_separation").get<double>();
  spec.sizes.id_train = j.at("n_id_train").get<std::size_t>();
  spec.sizes.id_test = j.at("n_id_test").get<std::size_t>();
  spec.sizes.ood_test = j.at("n_ood_test").get<std::size_t>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.validate();
  return spec;
}

namespace {

void save_split(const LabeledSplit& split, const std::filesystem::path& dir,
                const std::string& name) {
  std::vector<std::string> header_fields;
  header_fields.reserve(split.features.cols());
  for (std::size_t j = 0; j < split.features.cols(); ++j)
    header_fields.push_back("f" + std::to_string(j));

  std::vector<std::string> rows;
  rows.reserve(split.features.rows());
  for (std::size_t i = 0; i < split.features.rows(); ++i) {
    std::string row;
    const double* src = split.features.row_ptr(i);
    for (std::size_t j = 0; j < split.features.cols(); ++j) {
      if (j) row.push_back(',');
      row += csv::format_double(src[j]);
    }
    rows.push_back(std::move(row));
  }
  csv::write_file(dir / (name + "_features.csv"), csv::join_row(header_fields), rows);

  std::vector<std::string> label_rows;
  label_rows.reserve(split.labels.size());
  for (int y : split.labels) label_rows.push_back(std::to_string(y));
  csv::write_file(dir / (name + "_labels.csv"), "label", label_rows);
}

LabeledSplit load_split(const std::filesystem::path& dir, const std::string& name,
                        std::size_t expected_cols) {
  LabeledSplit split;
  {
    std::ifstream in(dir / (name + "_features.csv"));
    if (!in) throw Error("missing " + (dir / (name + "_features.csv")).string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string field;
      std::size_t cols = 0;
      while (std::getline(ss, field, ',')) {
        values.push_back(std::stod(field));
        ++cols;
      }
      if (cols != expected_cols) throw SchemaMismatch("feature column count in " + name);
      ++rows;
    }
    split.features = DenseMatrix(rows, expected_cols, std::move(values));
  }
  {
    std::ifstream in(dir / (name + "_labels.csv"));
    if (!in) throw Error("missing " + (dir / (name + "_labels.csv")).string());
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const int y = std::stoi(line);
      if (y != 0 && y != 1) throw SchemaMismatch("label outside {0,1} in " + name);
      split.labels.push_back(y);
    }
  }
  if (split.labels.size() != split.features.rows())
    throw SchemaMismatch("label/feature row mismatch in " + name);
  return split;
}

}  // namespace

void save_dataset(const ShiftedDataset& data, const ShiftSpec& spec,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_split(data.id_train, dir, "id_train");
  save_split(data.id_test, dir, "id_test");
  save_split(data.ood_test, dir, "ood_test");
  std::ofstream out(dir / "spec.json", std::ios::binary);
  out << spec_to_json_string(spec);
}

std::pair<ShiftedDataset, ShiftSpec> load_dataset(const std::filesystem::path& dir) {
  const ShiftSpec spec = spec_from_json_string(csv::read_file(dir / "spec.json"));
  ShiftedDataset data;
  data.id_train = load_split(dir, "id_train", spec.total_dims);
  data.id_test = load_split(dir, "id_test", spec.total_dims);
  data.ood_test = load_split(dir, "ood_test", spec.total_dims);
  return {std::move(data), spec};
}

}  // namespace calbound::synthdata
