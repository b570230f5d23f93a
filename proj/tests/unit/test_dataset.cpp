#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "adnnperf/dataset.hpp"
#include "adnnperf/errors.hpp"
#include "doctest.h"

using namespace adnnperf;

namespace {

DatasetDescriptor small_synth(std::uint64_t seed = 42) {
  DatasetDescriptor d;
  d.kind = DatasetDescriptor::Kind::synthetic;
  d.train_count = 64;
  d.test_count = 32;
  d.rng_seed = seed;
  return d;
}

// Writes a tiny archive in the 1-label-byte + C*H*W-pixel-bytes record
// layout and returns a descriptor pointing at it.
DatasetDescriptor write_tiny_archive(const std::filesystem::path& dir,
                                     int records, bool truncate_last = false) {
  std::filesystem::create_directories(dir);
  DatasetDescriptor d;
  d.kind = DatasetDescriptor::Kind::binary_archive;
  d.path = dir.string();
  d.channels = 2;
  d.height = 4;
  d.width = 4;
  d.num_classes = 10;
  d.records_per_file = records;
  d.train_files = {"train.bin"};
  d.test_files = {"test.bin"};
  d.train_count = records / 2;
  d.test_count = records / 2;
  const int record_bytes = 1 + d.channels * d.height * d.width;
  for (const char* name : {"train.bin", "test.bin"}) {
    std::ofstream out(dir / name, std::ios::binary);
    int total = records * record_bytes;
    if (truncate_last) total -= 3;
    for (int i = 0; i < total; ++i) {
      // label byte at the start of each record, pixels otherwise
      const unsigned char byte = (i % record_bytes == 0)
                                     ? static_cast<unsigned char>((i / record_bytes) % 10)
                                     : static_cast<unsigned char>(i % 251);
      out.put(static_cast<char>(byte));
    }
  }
  return d;
}

}  // namespace

TEST_CASE("synthetic dataset: shapes, ranges and label coverage") {
  const Dataset ds = ingest_dataset(small_synth());
  CHECK(ds.train_x.shape == std::vector<int>{64, 3, 32, 32});
  CHECK(ds.test_x.shape == std::vector<int>{32, 3, 32, 32});
  CHECK(ds.train_y.size() == 64);
  CHECK(ds.test_y.size() == 32);
  CHECK(ds.num_classes == 10);

  for (double v : ds.train_x.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::set<int> seen(ds.train_y.begin(), ds.train_y.end());
  for (int y : ds.train_y) {
    CHECK(y >= 0);
    CHECK(y < 10);
  }
  CHECK(seen.size() >= 5);  // 64 draws over 10 classes cover most of them
}

TEST_CASE("synthetic dataset is a pure function of its descriptor") {
  const Dataset a = ingest_dataset(small_synth(42));
  const Dataset b = ingest_dataset(small_synth(42));
  CHECK(a.train_x.data == b.train_x.data);
  CHECK(a.train_y == b.train_y);
  CHECK(a.test_x.data == b.test_x.data);
  CHECK(a.test_y == b.test_y);

  const Dataset c = ingest_dataset(small_synth(43));
  CHECK(a.train_x.data != c.train_x.data);
  // Train and test streams are split, not prefixes of each other.
  std::vector<double> train_head(a.train_x.data.begin(), a.train_x.data.begin() + 64);
  std::vector<double> test_head(a.test_x.data.begin(), a.test_x.data.begin() + 64);
  CHECK(train_head != test_head);
}

TEST_CASE("synthetic samples of one class differ (phase and noise jitter)") {
  DatasetDescriptor d = small_synth(7);
  d.train_count = 200;
  const Dataset ds = ingest_dataset(d);
  // Find two samples with the same label and confirm distinct pixels.
  int first = -1, second = -1;
  for (int i = 0; i < 200 && second < 0; ++i) {
    if (ds.train_y[i] != ds.train_y[0]) continue;
    if (first < 0)
      first = i;
    else
      second = i;
  }
  REQUIRE(second > 0);
  const int plane = 3 * 32 * 32;
  std::vector<double> pa(ds.train_x.data.begin() + first * plane,
                         ds.train_x.data.begin() + (first + 1) * plane);
  std::vector<double> pb(ds.train_x.data.begin() + second * plane,
                         ds.train_x.data.begin() + (second + 1) * plane);
  CHECK(pa != pb);
}

TEST_CASE("binary archive: loads, normalizes and subsamples deterministically") {
  const auto dir = std::filesystem::temp_directory_path() / "adnnperf_ds_ok";
  DatasetDescriptor d = write_tiny_archive(dir, 20);
  const Dataset ds = ingest_dataset(d);
  CHECK(ds.train_x.shape == std::vector<int>{10, 2, 4, 4});
  CHECK(ds.test_x.shape == std::vector<int>{10, 2, 4, 4});
  for (double v : ds.train_x.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // Pixel bytes are mapped through /255.
  bool exact = true;
  for (double v : ds.train_x.data)
    exact = exact && (v * 255.0 == doctest::Approx(std::round(v * 255.0)));
  CHECK(exact);

  const Dataset again = ingest_dataset(d);
  CHECK(ds.train_x.data == again.train_x.data);
  CHECK(ds.train_y == again.train_y);
  std::filesystem::remove_all(dir);
}

TEST_CASE("binary archive: size mismatch is an artifact error") {
  const auto dir = std::filesystem::temp_directory_path() / "adnnperf_ds_bad";
  DatasetDescriptor d = write_tiny_archive(dir, 20, /*truncate_last=*/true);
  CHECK_THROWS_AS(ingest_dataset(d), ArtifactError);

  DatasetDescriptor missing = d;
  missing.path = (dir / "no_such_subdir").string();
  CHECK_THROWS_AS(ingest_dataset(missing), ArtifactError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset descriptor validation") {
  DatasetDescriptor d = small_synth();
  d.num_classes = 1;
  CHECK_THROWS_AS(ingest_dataset(d), ConfigError);
  d = small_synth();
  d.train_count = 0;
  CHECK_THROWS_AS(ingest_dataset(d), ConfigError);
  // Requesting more samples than the archive holds is a configuration error.
  const auto dir = std::filesystem::temp_directory_path() / "adnnperf_ds_over";
  DatasetDescriptor over = write_tiny_archive(dir, 20);
  over.train_count = 21;
  CHECK_THROWS_AS(ingest_dataset(over), ConfigError);
  std::filesystem::remove_all(dir);
}
