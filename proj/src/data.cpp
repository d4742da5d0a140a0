#include "spdnet/data.hpp"

#include "binary_io.hpp"
#include "spdnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace spdnet {

Matrix raw_covariance(const Matrix& frames) {
  const Eigen::Index n = frames.rows();
  if (n < 2) {
    throw PreconditionError("covariance_descriptor: need at least 2 frames, got " +
                            std::to_string(n));
  }
  require_finite(frames, "covariance_descriptor frames");
  const Eigen::RowVectorXd mean = frames.colwise().mean();
  const Matrix centered = frames.rowwise() - mean;
  return sym(centered.transpose() * centered / static_cast<double>(n - 1));
}

SpdMatrix covariance_descriptor(const Matrix& frames) {
  Matrix c = raw_covariance(frames);
  const double lambda =
      std::max(kTraceRegularization * c.trace(), kTraceFloor);
  c.diagonal().array() += lambda;
  return SpdMatrix(c);
}

void SpdDataset::validate() const {
  if (dim <= 0) throw PreconditionError("dataset: dim must be positive");
  if (classes < 1) throw PreconditionError("dataset: need at least one class");
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].x.dim() != dim) {
      throw DimensionMismatchError("dataset item " + std::to_string(i) +
                                   ": wrong dimension");
    }
    if (items[i].label < 1 || items[i].label > classes) {
      throw PreconditionError("dataset item " + std::to_string(i) +
                              ": label out of range");
    }
  }
}

SpdDataset synth_generate(const SynthOptions& o) {
  if (o.classes < 2) throw PreconditionError("synth: need at least 2 classes");
  if (o.dim < 4) throw PreconditionError("synth: need dim >= 4");
  if (o.per_class < 1) throw PreconditionError("synth: per_class must be >= 1");
  if (o.frames < 2) throw PreconditionError("synth: need at least 2 frames");
  if (!(o.separation >= 0.0) || !std::isfinite(o.separation)) {
    throw PreconditionError("synth: separation must be finite and >= 0");
  }

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](int rows, int cols) {
    Matrix g(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) g(i, j) = normal(rng);
    }
    return g;
  };

  const double scale = 1.0 / (2.0 * std::sqrt(static_cast<double>(o.dim)));
  std::vector<Matrix> roots;
  for (int c = 0; c < o.classes; ++c) {
    const Matrix g = gaussian(o.dim, o.dim);
    const Matrix z = (g + g.transpose()) * scale;
    // A_c^{1/2} = exp(separation * Z_c / 2)
    roots.push_back(spd_exp(SymMatrix::symmetrize(0.5 * o.separation * z)).matrix());
  }

  SpdDataset ds;
  ds.dim = o.dim;
  ds.classes = o.classes;
  for (int c = 0; c < o.classes; ++c) {
    for (int m = 0; m < o.per_class; ++m) {
      const Matrix frames = gaussian(o.frames, o.dim) * roots[c];
      ds.items.push_back({covariance_descriptor(frames), c + 1});
    }
  }
  return ds;
}

DatasetSplit split_dataset(const SpdDataset& ds, std::size_t n_train,
                           std::uint64_t seed) {
  if (n_train > ds.size()) {
    throw PreconditionError("split_dataset: n_train exceeds dataset size");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit out;
  for (SpdDataset* part : {&out.train, &out.test}) {
    part->dim = ds.dim;
    part->classes = ds.classes;
  }
  out.train.split = Split::kTrain;
  out.test.split = Split::kTest;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_train ? out.train : out.test).items.push_back(ds.items[order[k]]);
  }
  return out;
}

std::vector<std::uint8_t> encode_dataset(const SpdDataset& ds) {
  ds.validate();
  detail::ByteWriter w;
  w.magic("SPDD");
  w.u32(kDatasetFormatVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u32(static_cast<std::uint32_t>(ds.classes));
  for (const auto& item : ds.items) {
    w.u32(static_cast<std::uint32_t>(item.label));
    w.row_major(item.x.matrix());
  }
  return w.take();
}

SpdDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  r.magic("SPDD", "dataset file");
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format version " +
                          std::to_string(version),
                      4);
  }
  const std::uint32_t n = r.u32("item count");
  const std::size_t dim_at = r.offset();
  const std::uint32_t d = r.u32("dim");
  const std::size_t classes_at = r.offset();
  const std::uint32_t c = r.u32("class count");
  if (d == 0 || d > 65535) throw FormatError("invalid matrix dimension", dim_at);
  if (c == 0) throw FormatError("invalid class count", classes_at);
  const std::uint64_t item_bytes = 4 + 8ull * d * d;
  if ((bytes.size() - r.offset()) / item_bytes < n) {
    // Report the first item that does not fit.
    const std::uint64_t whole = (bytes.size() - r.offset()) / item_bytes;
    throw FormatError("truncated file: " + std::to_string(n) +
                          " items declared, " + std::to_string(whole) +
                          " complete",
                      r.offset() + whole * item_bytes);
  }

  SpdDataset ds;
  ds.dim = static_cast<int>(d);
  ds.classes = static_cast<int>(c);
  ds.items.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t label = r.u32("label");
    if (label < 1 || label > c) {
      throw FormatError("item " + std::to_string(i) + ": label " +
                            std::to_string(label) + " out of range",
                        at);
    }
    Matrix m = r.row_major(d, d, "matrix");
    try {
      ds.items.push_back({SpdMatrix(m), static_cast<int>(label)});
    } catch (const Error& e) {
      throw FormatError("item " + std::to_string(i) + " is not SPD: " + e.what(),
                        at + 4);
    }
  }
  if (!r.at_end()) {
    throw FormatError("trailing bytes after dataset", r.offset());
  }
  return ds;
}

void save_dataset(const std::string& path, const SpdDataset& ds) {
  detail::write_file(path, encode_dataset(ds));
}

SpdDataset load_dataset(const std::string& path) {
  return decode_dataset(detail::read_file(path));
}

Matrix read_sequence_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open sequence file " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) {
          throw std::invalid_argument(cell);
        }
      } catch (const std::exception&) {
        throw PreconditionError(path + ":" + std::to_string(line_no) +
                                ": not a number: '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw PreconditionError(path + ":" + std::to_string(line_no) +
                              ": inconsistent column count");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw PreconditionError(path + ": no frames");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

SpdDataset ingest_manifest(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  SpdDataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw PreconditionError(manifest_path + ":" + std::to_string(line_no) +
                              ": expected 'path,label'");
    }
    fs::path p = line.substr(0, comma);
    if (p.is_relative()) p = base / p;
    int label = 0;
    try {
      label = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw PreconditionError(manifest_path + ":" + std::to_string(line_no) +
                              ": bad label");
    }
    if (label < 1) {
      throw PreconditionError(manifest_path + ":" + std::to_string(line_no) +
                              ": labels are 1-based");
    }
    SpdMatrix x = covariance_descriptor(read_sequence_csv(p.string()));
    if (ds.items.empty()) ds.dim = x.dim();
    if (x.dim() != ds.dim) {
      throw DimensionMismatchError(p.string() + ": frame dimension differs");
    }
    ds.classes = std::max(ds.classes, label);
    ds.items.push_back({std::move(x), label});
  }
  if (ds.items.empty()) throw PreconditionError(manifest_path + ": empty");
  return ds;
}

std::vector<SpdMatrix> lem_centroids(const SpdDataset& train) {
  std::vector<std::vector<SpdMatrix>> by_class(train.classes);
  for (const auto& item : train.items) by_class[item.label - 1].push_back(item.x);
  std::vector<SpdMatrix> centroids;
  for (int c = 0; c < train.classes; ++c) {
    if (by_class[c].empty()) {
      throw PreconditionError("nearest centroid: class " + std::to_string(c + 1) +
                              " has no training items");
    }
    centroids.push_back(frechet_mean_lem(by_class[c]));
  }
  return centroids;
}

int nearest_centroid(const std::vector<SpdMatrix>& centroids,
                     const SpdMatrix& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = lem_distance_sq(x, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c) + 1;
    }
  }
  return best;
}

double nearest_centroid_accuracy(const SpdDataset& train,
                                 const SpdDataset& test) {
  if (test.items.empty()) return 0.0;
  const auto centroids = lem_centroids(train);
  std::size_t hits = 0;
  for (const auto& item : test.items) {
    hits += nearest_centroid(centroids, item.x) == item.label;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace spdnet
