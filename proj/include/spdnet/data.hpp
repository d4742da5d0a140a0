#pragma once

// Covariance descriptors, synthetic SPD benchmarks and the "SPDD" dataset
// file format.

#include "spdnet/manifold.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spdnet {

/// n frames of dimension d, stored one frame per row.
struct VectorSequence {
  Matrix frames;  // n x d
  int label = 0;
};

// (1/(n-1)) sum (s - u)(s - u)^T, before regularization.
Matrix raw_covariance(const Matrix& frames);

// raw_covariance + lambda I with lambda = 1e-3 * trace(raw), floored at
// kTraceFloor when the sequence has no variance. Needs n >= 2.
inline constexpr double kTraceFloor = 1e-12;
inline constexpr double kTraceRegularization = 1e-3;
SpdMatrix covariance_descriptor(const Matrix& frames);
inline SpdMatrix covariance_descriptor(const VectorSequence& seq) {
  return covariance_descriptor(seq.frames);
}

enum class Split { kAll, kTrain, kTest };

struct LabeledSpd {
  SpdMatrix x;
  int label = 0;  // 1..C
};

struct SpdDataset {
  int dim = 0;
  int classes = 0;
  std::vector<LabeledSpd> items;
  Split split = Split::kAll;

  std::size_t size() const { return items.size(); }
  // Throws PreconditionError on inconsistent dims or labels.
  void validate() const;
};

struct SynthOptions {
  int classes = 3;
  int per_class = 100;
  int dim = 8;
  double separation = 2.0;
  int frames = 200;
  std::uint64_t seed = 1;
};

// Class c has anchor A_c = exp(separation * Z_c) with Z_c a random symmetric
// matrix; each sample is the covariance descriptor of `frames` Gaussian
// draws with covariance A_c. Items are ordered class by class.
SpdDataset synth_generate(const SynthOptions& opts);

// Shuffles with `seed` and puts the first n_train items in the train split.
struct DatasetSplit {
  SpdDataset train;
  SpdDataset test;
};
DatasetSplit split_dataset(const SpdDataset& ds, std::size_t n_train,
                           std::uint64_t seed);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

std::vector<std::uint8_t> encode_dataset(const SpdDataset& ds);
// Throws FormatError naming the byte offset on bad magic, version mismatch,
// truncation or a stored matrix that is not SPD.
SpdDataset decode_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const std::string& path, const SpdDataset& ds);
SpdDataset load_dataset(const std::string& path);

// One frame per row, comma separated. Blank lines and '#' comments skipped.
Matrix read_sequence_csv(const std::string& path);

// Manifest lines are "path,label"; relative paths resolve against the
// manifest's directory. Labels are 1-based.
SpdDataset ingest_manifest(const std::string& manifest_path);

// Per-class Log-Euclidean Frechet means of `train`.
std::vector<SpdMatrix> lem_centroids(const SpdDataset& train);
int nearest_centroid(const std::vector<SpdMatrix>& centroids,
                     const SpdMatrix& x);
double nearest_centroid_accuracy(const SpdDataset& train,
                                 const SpdDataset& test);

}  // namespace spdnet
