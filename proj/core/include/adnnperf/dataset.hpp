#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adnnperf/tensor.hpp"

// Dataset ingestion: either the built-in synthetic image generator (the
// default, keeps the test suite free of downloads) or a standard binary
// image-classification archive on disk (one label byte + C*H*W pixel bytes
// per record, the common 10-class 32x32 layout).
namespace adnnperf {

struct DatasetDescriptor {
  enum class Kind { synthetic, binary_archive };
  Kind kind = Kind::synthetic;

  // binary_archive: directory containing train/test .bin files.
  std::string path;
  std::vector<std::string> train_files{"data_batch_1.bin", "data_batch_2.bin",
                                       "data_batch_3.bin", "data_batch_4.bin",
                                       "data_batch_5.bin"};
  std::vector<std::string> test_files{"test_batch.bin"};
  int records_per_file = 10000;  // the format's published record count

  int num_classes = 10;
  int channels = 3, height = 32, width = 32;
  int train_count = 5000, test_count = 1000;
  std::uint64_t rng_seed = 0;
};

struct Dataset {
  Tensor train_x;  // [Ntr, C, H, W], values in [0,1]
  std::vector<int> train_y;
  Tensor test_x;  // [Nte, C, H, W]
  std::vector<int> test_y;
  int num_classes = 0;
};

// Dispatches on descriptor.kind; output order is deterministic under a fixed
// descriptor (including its rng_seed).
Dataset ingest_dataset(const DatasetDescriptor& desc);

// Class-conditioned sinusoidal textures with per-sample phase jitter and a
// per-sample noise level: classes are separable (distinct frequencies) while
// samples vary in difficulty, which keeps trained gates input-dependent.
Dataset make_synthetic(const DatasetDescriptor& desc);

// Reads the binary archive format, validating each file holds exactly
// records_per_file records; throws ArtifactError on truncation or size
// mismatch.
Dataset load_binary_archive(const DatasetDescriptor& desc);

}  // namespace adnnperf
