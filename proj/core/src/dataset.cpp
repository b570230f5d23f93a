#include "adnnperf/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "adnnperf/errors.hpp"
#include "adnnperf/rng.hpp"

namespace adnnperf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void render_sample(Tensor& x, int n, int y, int C, int H, int W, Rng& rng) {
  // Class identity lives in the spatial frequencies; everything else is
  // per-sample: phase (position jitter), amplitude, and a noise level drawn
  // from a wide range so that samples of one class span easy to hard.
  const double fx = 1.0 + (y % 5);
  const double fy = 1.0 + ((y / 5) % 5);
  const double px = rng.uniform(0.0, kTwoPi);
  const double py = rng.uniform(0.0, kTwoPi);
  const double amp = rng.uniform(0.35, 0.5);
  const double noise = rng.uniform(0.02, 0.30);
  for (int c = 0; c < C; ++c) {
    const double cw = 0.6 + 0.4 * std::cos(kTwoPi * (c + y) / 3.0);
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const double s = std::sin(kTwoPi * fx * i / H + px) *
                         std::cos(kTwoPi * fy * j / W + py);
        double v = 0.5 + amp * cw * s + rng.normal(0.0, noise);
        x.at4(n, c, i, j) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      }
    }
  }
}

void fill_split(Tensor& x, std::vector<int>& labels, int count,
                const DatasetDescriptor& d, Rng rng) {
  x = Tensor(std::vector<int>{count, d.channels, d.height, d.width});
  labels.resize(count);
  for (int n = 0; n < count; ++n) {
    Rng sample_rng = rng.split(static_cast<std::uint64_t>(n));
    const int y = static_cast<int>(sample_rng.below(d.num_classes));
    labels[n] = y;
    render_sample(x, n, y, d.channels, d.height, d.width, sample_rng);
  }
}

struct RawRecord {
  int label;
  std::vector<unsigned char> pixels;
};

std::vector<RawRecord> read_archive_file(const std::string& file, int record_bytes,
                                         int expected_records, int num_classes) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ArtifactError("dataset archive not readable: " + file);
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  const std::streamoff expected = static_cast<std::streamoff>(1 + record_bytes) * expected_records;
  if (size != expected) {
    throw ArtifactError("dataset archive " + file + " holds " +
                        std::to_string(size) + " bytes, expected " +
                        std::to_string(expected) + " (" +
                        std::to_string(expected_records) + " records)");
  }
  std::vector<RawRecord> records(expected_records);
  std::vector<unsigned char> buf(1 + record_bytes);
  for (int r = 0; r < expected_records; ++r) {
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!in) throw ArtifactError("dataset archive truncated mid-record: " + file);
    if (buf[0] >= num_classes) {
      throw ArtifactError("dataset archive " + file + ": label " +
                          std::to_string(buf[0]) + " out of range");
    }
    records[r].label = buf[0];
    records[r].pixels.assign(buf.begin() + 1, buf.end());
  }
  return records;
}

void records_to_split(const std::vector<RawRecord>& records, int count,
                      const DatasetDescriptor& d, Rng& rng, Tensor& x,
                      std::vector<int>& labels) {
  if (count > static_cast<int>(records.size())) {
    throw ConfigError("dataset: requested " + std::to_string(count) +
                      " samples but archive provides only " +
                      std::to_string(records.size()));
  }
  std::vector<int> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  x = Tensor(std::vector<int>{count, d.channels, d.height, d.width});
  labels.resize(count);
  const int plane = d.height * d.width;
  for (int n = 0; n < count; ++n) {
    const RawRecord& rec = records[order[n]];
    labels[n] = rec.label;
    for (int c = 0; c < d.channels; ++c)
      for (int p = 0; p < plane; ++p)
        x.data[(static_cast<std::size_t>(n) * d.channels + c) * plane + p] =
            rec.pixels[static_cast<std::size_t>(c) * plane + p] / 255.0;
  }
}

}  // namespace

Dataset make_synthetic(const DatasetDescriptor& d) {
  if (d.num_classes < 2) throw ConfigError("dataset: num_classes must be >= 2");
  if (d.train_count < 1 || d.test_count < 1)
    throw ConfigError("dataset: split sizes must be positive");
  Dataset out;
  out.num_classes = d.num_classes;
  Rng root(d.rng_seed);
  fill_split(out.train_x, out.train_y, d.train_count, d, root.split(1));
  fill_split(out.test_x, out.test_y, d.test_count, d, root.split(2));
  return out;
}

Dataset load_binary_archive(const DatasetDescriptor& d) {
  if (d.path.empty()) throw ConfigError("dataset: archive path not set");
  const int record_bytes = d.channels * d.height * d.width;
  auto read_files = [&](const std::vector<std::string>& names) {
    std::vector<RawRecord> all;
    for (const std::string& name : names) {
      const std::string file = (std::filesystem::path(d.path) / name).string();
      std::vector<RawRecord> recs =
          read_archive_file(file, record_bytes, d.records_per_file, d.num_classes);
      all.insert(all.end(), recs.begin(), recs.end());
    }
    return all;
  };
  Dataset out;
  out.num_classes = d.num_classes;
  Rng root(d.rng_seed);
  Rng tr = root.split(1), te = root.split(2);
  std::vector<RawRecord> train = read_files(d.train_files);
  records_to_split(train, d.train_count, d, tr, out.train_x, out.train_y);
  std::vector<RawRecord> test = read_files(d.test_files);
  records_to_split(test, d.test_count, d, te, out.test_x, out.test_y);
  return out;
}

Dataset ingest_dataset(const DatasetDescriptor& d) {
  switch (d.kind) {
    case DatasetDescriptor::Kind::synthetic:
      return make_synthetic(d);
    case DatasetDescriptor::Kind::binary_archive:
      return load_binary_archive(d);
  }
  throw ConfigError("dataset: unknown descriptor kind");
}

}  // namespace adnnperf
