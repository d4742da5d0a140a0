#include "spdnet/data.hpp"
#include "spdnet/errors.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace spdnet;
using oracle::Rng;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("spdnet_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SpdDataset small_set() {
  SynthOptions o;
  o.classes = 3;
  o.per_class = 4;
  o.dim = 5;
  o.frames = 30;
  o.seed = 9;
  return synth_generate(o);
}

}  // namespace

TEST(Descriptor, HandEvaluatedScalar) {
  Matrix frames(2, 1);
  frames << 0, 2;
  EXPECT_DOUBLE_EQ(raw_covariance(frames)(0, 0), 2.0);
  EXPECT_NEAR(covariance_descriptor(frames)(0, 0), 2.002, 1e-15);
}

TEST(Descriptor, ConstantSequenceUsesFloor) {
  const Matrix frames = Matrix::Constant(10, 3, 4.5);
  const SpdMatrix x = covariance_descriptor(frames);
  EXPECT_EQ(x.matrix(), (1e-12 * Matrix::Identity(3, 3)).eval());
}

TEST(Descriptor, RankDeficientIsStillSpd) {
  Rng rng(1);
  const Matrix frames = oracle::gaussian(3, 5, rng);
  const Matrix raw = raw_covariance(frames);
  const double lambda = 1e-3 * raw.trace();
  const SpdMatrix x = covariance_descriptor(frames);
  EXPECT_GE(x.min_eigenvalue(), lambda - 1e-12);
  EXPECT_EQ(x.matrix(), x.matrix().transpose());
}

TEST(Descriptor, TranslationInvariantAndQuadratic) {
  Rng rng(2);
  const Matrix frames = oracle::gaussian(40, 6, rng);
  const Vector shift = oracle::gaussian(6, 1, rng) * 10.0;
  const Matrix moved = frames.rowwise() + shift.transpose();
  EXPECT_LT((covariance_descriptor(moved).matrix() - covariance_descriptor(frames).matrix()).norm(),
            1e-10);
  EXPECT_LT((raw_covariance(3.0 * frames) - 9.0 * raw_covariance(frames)).norm(),
            1e-12 * raw_covariance(frames).norm() * 9.0);
}

TEST(Descriptor, Preconditions) {
  EXPECT_THROW(covariance_descriptor(Matrix::Zero(1, 3)), PreconditionError);
  Matrix bad = Matrix::Zero(3, 2);
  bad(1, 1) = NAN;
  EXPECT_THROW(covariance_descriptor(bad), Error);
}

TEST(Synth, SeparationZeroIsChance) {
  SynthOptions o;
  o.separation = 0.0;
  o.seed = 3;
  const SpdDataset ds = synth_generate(o);
  const DatasetSplit s = split_dataset(ds, 200, 3);
  EXPECT_NEAR(nearest_centroid_accuracy(s.train, s.test), 1.0 / 3.0, 0.1);
}

TEST(Synth, SeparationTwoIsLearnable) {
  SynthOptions o;
  o.seed = 4;
  const SpdDataset ds = synth_generate(o);
  EXPECT_EQ(ds.size(), 300u);
  EXPECT_EQ(ds.dim, 8);
  const DatasetSplit s = split_dataset(ds, 200, 4);
  EXPECT_EQ(s.train.size(), 200u);
  EXPECT_EQ(s.test.size(), 100u);
  EXPECT_EQ(s.train.split, Split::kTrain);
  EXPECT_GE(nearest_centroid_accuracy(s.train, s.test), 0.95);
}

TEST(Synth, Validation) {
  SynthOptions o;
  o.classes = 1;
  EXPECT_THROW(synth_generate(o), PreconditionError);
  o = SynthOptions{};
  o.dim = 3;
  EXPECT_THROW(synth_generate(o), PreconditionError);
}

TEST(Centroids, MatchFrechetMeanOracle) {
  const SpdDataset ds = small_set();
  const auto c = lem_centroids(ds);
  ASSERT_EQ(c.size(), 3u);
  std::vector<Matrix> first;
  for (const auto& item : ds.items) {
    if (item.label == 1) first.push_back(item.x.matrix());
  }
  const Vector w = Vector::Constant(static_cast<Eigen::Index>(first.size()),
                                    1.0 / static_cast<double>(first.size()));
  EXPECT_LT(oracle::lem_sq(c[0].matrix(), oracle::frechet_gd(first, w)), 1e-12);
  EXPECT_EQ(nearest_centroid(c, c[2]), 3);
}

TEST(DatasetFile, ByteIdenticalForSameSeed) {
  EXPECT_EQ(encode_dataset(small_set()), encode_dataset(small_set()));
}

TEST(DatasetFile, RoundTripIsBitExact) {
  const SpdDataset ds = small_set();
  const fs::path dir = scratch("roundtrip");
  save_dataset((dir / "a.spdd").string(), ds);
  const SpdDataset back = load_dataset((dir / "a.spdd").string());
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.dim, ds.dim);
  EXPECT_EQ(back.classes, ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.items[i].label, ds.items[i].label);
    EXPECT_EQ(back.items[i].x.matrix(), ds.items[i].x.matrix());
  }
  EXPECT_EQ(encode_dataset(back), encode_dataset(ds));
  // Header: magic, version, N, d, C, then label + d*d doubles per item.
  EXPECT_EQ(encode_dataset(ds).size(), 4 + 4 * 4 + ds.size() * (4 + 8 * 25));
}

TEST(DatasetFile, CorruptMagicNamesOffsetZero) {
  auto bytes = encode_dataset(small_set());
  bytes[1] = 'Q';
  try {
    decode_dataset(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(DatasetFile, VersionAndTruncation) {
  auto bytes = encode_dataset(small_set());
  auto bad = bytes;
  bad[4] = 9;
  try {
    decode_dataset(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  auto cut = bytes;
  cut.resize(20 + 204 + 100);
  try {
    decode_dataset(cut);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 20u + 204u);
  }
  cut.resize(10);
  EXPECT_THROW(decode_dataset(cut), FormatError);
}

TEST(DatasetFile, NonSpdItemRejected) {
  auto bytes = encode_dataset(small_set());
  // Second item's (0,0) entry set to -1.
  const std::size_t at = 20 + 204 + 4;
  const double neg = -1.0;
  std::memcpy(bytes.data() + at, &neg, sizeof neg);
  try {
    decode_dataset(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("item 1"), std::string::npos) << e.what();
  }
}

TEST(DatasetFile, MissingFile) {
  EXPECT_THROW(load_dataset("/nonexistent/dir/x.spdd"), Error);
}

TEST(Ingest, CsvAndManifest) {
  const fs::path dir = scratch("ingest");
  fs::create_directories(dir / "seq");
  {
    std::ofstream(dir / "seq" / "a.csv") << "# frames\n0,1\n2,3\n\n4,8\n";
    std::ofstream(dir / "seq" / "b.csv") << "1,0\n0,1\n1,1\n";
    std::ofstream(dir / "manifest.txt") << "seq/a.csv,1\nseq/b.csv,2\n";
  }
  const Matrix a = read_sequence_csv((dir / "seq" / "a.csv").string());
  ASSERT_EQ(a.rows(), 3);
  EXPECT_EQ(a(2, 1), 8.0);
  const SpdDataset ds = ingest_manifest((dir / "manifest.txt").string());
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dim, 2);
  EXPECT_EQ(ds.classes, 2);
  EXPECT_EQ(ds.items[1].label, 2);
  EXPECT_EQ(ds.items[0].x.matrix(), covariance_descriptor(a).matrix());

  std::ofstream(dir / "bad.csv") << "1,2\n3\n";
  EXPECT_THROW(read_sequence_csv((dir / "bad.csv").string()), Error);
}
