#pragma once

// In-memory datasets, the two synthetic generators and CSV ingestion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pgd/error.hpp"
#include "pgd/linalg.hpp"
#include "pgd/network.hpp"
#include "pgd/rng.hpp"

namespace pgd {

enum class TaskKind { regression, classification };

inline std::string to_string(TaskKind k) {
  return k == TaskKind::regression ? "regression" : "classification";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "regression") return TaskKind::regression;
  if (s == "classification") return TaskKind::classification;
  fail(ErrorKind::config, "unknown task kind '" + s + "'");
}

/// Features plus targets. For classification each target is a one-element
/// vector holding the class index.
struct Dataset {
  TaskKind kind = TaskKind::regression;
  std::vector<Vec> features;
  std::vector<Vec> targets;
  Eigen::Index classes = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;

  std::size_t size() const { return features.size(); }
  Eigen::Index input_dim() const { return features.empty() ? 0 : features.front().size(); }
  /// Network output dimension the dataset calls for.
  Eigen::Index output_dim() const {
    if (kind == TaskKind::classification) return classes;
    return targets.empty() ? 0 : targets.front().size();
  }
  int label(std::size_t i) const { return static_cast<int>(targets[i][0]); }

  void validate() const {
    require(features.size() == targets.size(), ErrorKind::data, "dataset: feature/target count mismatch");
    require(size() >= 2, ErrorKind::data, "dataset: need at least 2 examples");
    const auto d = input_dim();
    for (std::size_t i = 0; i < size(); ++i) {
      require(features[i].size() == d, ErrorKind::data,
              "dataset: example " + std::to_string(i) + " has inconsistent feature dim");
      if (kind == TaskKind::classification) {
        require(targets[i].size() == 1, ErrorKind::data, "dataset: classification target must be a label");
        const double y = targets[i][0];
        require(y >= 0 && y < static_cast<double>(classes) && y == std::floor(y), ErrorKind::label,
                "dataset: label " + std::to_string(y) + " out of range at example " + std::to_string(i));
      } else {
        require(targets[i].size() == output_dim(), ErrorKind::data,
                "dataset: example " + std::to_string(i) + " has inconsistent target dim");
      }
    }
    std::vector<char> seen(size(), 0);
    for (auto idx : train) {
      require(idx < size() && !seen[idx], ErrorKind::data, "dataset: invalid or repeated train index");
      seen[idx] = 1;
    }
    for (auto idx : validation) {
      require(idx < size() && !seen[idx], ErrorKind::data, "dataset: train/validation splits overlap");
      seen[idx] = 1;
    }
    require(!train.empty(), ErrorKind::data, "dataset: empty training split");
  }
};

/// Marks the last floor(val_fraction * n) examples as validation.
inline void split_tail(Dataset& d, double val_fraction) {
  require(val_fraction >= 0.0 && val_fraction < 1.0, ErrorKind::config,
          "validation fraction must lie in [0, 1)");
  const std::size_t n = d.size();
  std::size_t nv = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  nv = std::min(nv, n - 1);
  d.train.resize(n - nv);
  std::iota(d.train.begin(), d.train.end(), std::size_t{0});
  d.validation.resize(nv);
  std::iota(d.validation.begin(), d.validation.end(), n - nv);
}

/// Teacher used by gen_regression: a tanh MLP with one hidden layer of 16.
inline Network make_teacher(Eigen::Index input_dim, Eigen::Index output_dim, std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.input_dim = input_dim;
  cfg.hidden_widths = {16};
  cfg.output_dim = output_dim;
  cfg.activation = Activation::tanh;
  cfg.seed = substream(seed, "teacher")();
  Network t = init_network(cfg);
  // Nonzero biases so the teacher is not odd-symmetric.
  Engine rng = substream(seed, "teacher-bias");
  std::normal_distribution<double> normal(0.0, 0.5);
  Vec theta = t.parameters();
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    if (theta[i] == 0.0) theta[i] = normal(rng);
  t.set_parameters(theta);
  return t;
}

/// x ~ N(0, I); y = teacher(x) + noise_sd * N(0, I).
inline Dataset gen_regression(std::size_t n, Eigen::Index input_dim, double noise_sd, std::uint64_t seed,
                              Eigen::Index output_dim = 1, double val_fraction = 0.2) {
  if (n < 2) fail(ErrorKind::data, "gen_regression: n must be >= 2");
  require(input_dim >= 1 && output_dim >= 1, ErrorKind::data, "gen_regression: dims must be >= 1");
  require(noise_sd >= 0.0, ErrorKind::data, "gen_regression: noise_sd must be >= 0");
  const Network teacher = make_teacher(input_dim, output_dim, seed);
  Engine rng = substream(seed, "data");
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.kind = TaskKind::regression;
  for (std::size_t i = 0; i < n; ++i) {
    Vec x(input_dim);
    for (auto& v : x) v = normal(rng);
    Vec y = teacher.cheap_forward(x).output;
    if (noise_sd > 0.0)
      for (auto& v : y) v += noise_sd * normal(rng);
    d.features.push_back(std::move(x));
    d.targets.push_back(std::move(y));
  }
  split_tail(d, val_fraction);
  return d;
}

/// Class centers drawn from N(0, I) and rescaled so the closest pair sits at
/// distance `separation`; points are center + N(0, I). Labels cycle through
/// the classes before shuffling, so counts differ by at most one.
inline Dataset gen_blobs(std::size_t n, Eigen::Index classes, Eigen::Index input_dim, double separation,
                         std::uint64_t seed, double val_fraction = 0.2) {
  if (classes < 2) fail(ErrorKind::data, "gen_blobs: need at least 2 classes");
  if (n < 2) fail(ErrorKind::data, "gen_blobs: n must be >= 2");
  if (input_dim < 1) fail(ErrorKind::data, "gen_blobs: input_dim must be >= 1");
  if (!(separation > 0.0)) fail(ErrorKind::data, "gen_blobs: separation must be positive");
  Engine rng = substream(seed, "data");
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Vec> centers(static_cast<std::size_t>(classes));
  for (auto& c : centers) {
    c.resize(input_dim);
    for (auto& v : c) v = normal(rng);
  }
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.size(); ++i)
    for (std::size_t j = i + 1; j < centers.size(); ++j)
      closest = std::min(closest, (centers[i] - centers[j]).norm());
  if (!(closest > 0.0)) fail(ErrorKind::data, "gen_blobs: coincident centers");
  for (auto& c : centers) c *= separation / closest;

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset d;
  d.kind = TaskKind::classification;
  d.classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    Vec x = centers[static_cast<std::size_t>(labels[i])];
    for (auto& v : x) v += normal(rng);
    d.features.push_back(std::move(x));
    d.targets.push_back(Vec::Constant(1, labels[i]));
  }
  split_tail(d, val_fraction);
  return d;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  std::vector<std::string> feature_cols;  // empty: every column prefixed "x"
  std::vector<std::string> target_cols;   // regression targets, or the single label column
  TaskKind kind = TaskKind::regression;
  std::string split_col = "split";        // used when present in the header
  double val_fraction = 0.2;              // used when there is no split column
  Eigen::Index classes = 0;               // 0: max label + 1
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// Schema implied by a header: "x*" features, "label" for classification or
/// "y*" targets for regression.
inline CsvSchema infer_schema(const std::vector<std::string>& header) {
  CsvSchema s;
  for (const auto& h : header) {
    if (!h.empty() && h[0] == 'x') s.feature_cols.push_back(h);
    else if (h == "label") {
      s.kind = TaskKind::classification;
      s.target_cols = {h};
    }
  }
  if (s.kind == TaskKind::regression)
    for (const auto& h : header)
      if (!h.empty() && h[0] == 'y') s.target_cols.push_back(h);
  return s;
}

inline Dataset load_csv(const std::string& path, CsvSchema schema) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::data, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::data, path + ": empty file (need at least 2 rows)");
  const auto header = detail::split_fields(line);
  auto col = [&](const std::string& name) -> std::ptrdiff_t {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  if (schema.feature_cols.empty() && schema.target_cols.empty()) {
    const auto inferred = infer_schema(header);
    schema.feature_cols = inferred.feature_cols;
    schema.target_cols = inferred.target_cols;
    schema.kind = inferred.kind;
  } else if (schema.feature_cols.empty()) {
    for (const auto& h : header)
      if (!h.empty() && h[0] == 'x') schema.feature_cols.push_back(h);
  }
  require(!schema.feature_cols.empty(), ErrorKind::format, path + ": no feature columns");
  require(!schema.target_cols.empty(), ErrorKind::format, path + ": no target columns");
  if (schema.kind == TaskKind::classification)
    require(schema.target_cols.size() == 1, ErrorKind::format, path + ": classification needs one label column");

  std::vector<std::ptrdiff_t> fidx, tidx;
  for (const auto& c : schema.feature_cols) {
    fidx.push_back(col(c));
    require(fidx.back() >= 0, ErrorKind::format, path + ": missing feature column '" + c + "'");
  }
  for (const auto& c : schema.target_cols) {
    tidx.push_back(col(c));
    require(tidx.back() >= 0, ErrorKind::format, path + ": missing target column '" + c + "'");
  }
  const std::ptrdiff_t sidx = schema.split_col.empty() ? -1 : col(schema.split_col);

  Dataset d;
  d.kind = schema.kind;
  std::vector<int> is_val;
  std::size_t lineno = 1;
  double max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size())
      fail(ErrorKind::format, path + ": line " + std::to_string(lineno) + " has " +
                                  std::to_string(fields.size()) + " fields, header has " +
                                  std::to_string(header.size()));
    auto number = [&](std::ptrdiff_t i) {
      double v;
      if (!detail::parse_double(fields[static_cast<std::size_t>(i)], v))
        fail(ErrorKind::format, path + ": line " + std::to_string(lineno) + ", column '" +
                                    header[static_cast<std::size_t>(i)] + "': not a number: '" +
                                    fields[static_cast<std::size_t>(i)] + "'");
      return v;
    };
    Vec x(static_cast<Eigen::Index>(fidx.size()));
    for (std::size_t j = 0; j < fidx.size(); ++j) x[static_cast<Eigen::Index>(j)] = number(fidx[j]);
    Vec y(static_cast<Eigen::Index>(tidx.size()));
    for (std::size_t j = 0; j < tidx.size(); ++j) y[static_cast<Eigen::Index>(j)] = number(tidx[j]);
    if (d.kind == TaskKind::classification) {
      if (y[0] < 0 || y[0] != std::floor(y[0]))
        fail(ErrorKind::format, path + ": line " + std::to_string(lineno) + ": label must be a nonnegative integer");
      max_label = std::max(max_label, y[0]);
    }
    if (sidx >= 0) {
      const auto& tag = fields[static_cast<std::size_t>(sidx)];
      if (tag != "train" && tag != "val")
        fail(ErrorKind::format, path + ": line " + std::to_string(lineno) + ": split must be 'train' or 'val'");
      is_val.push_back(tag == "val");
    }
    d.features.push_back(std::move(x));
    d.targets.push_back(std::move(y));
  }
  if (d.size() < 2) fail(ErrorKind::data, path + ": need at least 2 data rows, found " + std::to_string(d.size()));
  if (d.kind == TaskKind::classification)
    d.classes = schema.classes > 0 ? schema.classes : static_cast<Eigen::Index>(max_label) + 1;
  if (sidx >= 0) {
    for (std::size_t i = 0; i < d.size(); ++i) (is_val[i] ? d.validation : d.train).push_back(i);
  } else {
    split_tail(d, schema.val_fraction);
  }
  d.validate();
  return d;
}

/// Writes x0..x{d-1}, then y0..y{c-1} (or label), then split. Values are
/// printed with 17 significant digits so they reload exactly.
inline void write_csv(const Dataset& d, std::ostream& os) {
  const auto dim = d.input_dim();
  for (Eigen::Index j = 0; j < dim; ++j) os << 'x' << j << ',';
  if (d.kind == TaskKind::classification) {
    os << "label";
  } else {
    for (Eigen::Index j = 0; j < d.output_dim(); ++j) os << (j ? ",y" : "y") << j;
  }
  os << ",split\n";
  std::vector<char> val(d.size(), 0);
  for (auto i : d.validation) val[i] = 1;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) os << d.features[i][j] << ',';
    for (Eigen::Index j = 0; j < d.targets[i].size(); ++j) os << (j ? "," : "") << d.targets[i][j];
    os << ',' << (val[i] ? "val" : "train") << '\n';
  }
}

inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::data, "cannot open " + path + " for writing");
  write_csv(d, out);
}

}  // namespace pgd
