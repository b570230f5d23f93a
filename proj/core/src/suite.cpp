#include "adnnperf/suite.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "adnnperf/errors.hpp"

namespace adnnperf {

namespace {

using nlohmann::json;

constexpr std::uint32_t kArraysMagic = 0x414e5053;  // "ANPS"
constexpr std::uint32_t kArraysVersion = 1;

void put_doubles(std::ofstream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
}

void get_doubles(std::ifstream& in, double* p, std::size_t n, const char* what) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8));
  if (!in) throw ArtifactError(std::string("suite arrays truncated reading ") + what);
}

}  // namespace

const char* producer_name(Producer p) {
  return p == Producer::deepperform ? "deepperform" : "iterative_baseline";
}

Producer producer_from_name(const std::string& name) {
  if (name == "deepperform") return Producer::deepperform;
  if (name == "iterative_baseline") return Producer::iterative_baseline;
  throw ConfigError("unknown producer \"" + name + "\"");
}

void TestSuite::validate(const CostProfile& profile) const {
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const SuiteEntry& it = entries[e];
    const std::string at = "suite entry " + std::to_string(e);
    if (it.seed_cost != hard_cost(it.seed_trace, profile))
      throw ArtifactError(at + ": stored seed cost disagrees with its trace");
    if (it.generated_cost != hard_cost(it.generated_trace, profile))
      throw ArtifactError(at + ": stored generated cost disagrees with its trace");
    if (!budget_compliant(it.seed, it.generated, budget, 1e-6))
      throw ArtifactError(at + ": generated sample violates the budget");
  }
}

void save_suite(const TestSuite& suite, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  const std::size_t count = suite.entries.size();
  std::vector<int> sample_shape;
  int num_blocks = 0, num_classes = 0;
  if (count > 0) {
    sample_shape = suite.entries.front().seed.shape;
    num_blocks = static_cast<int>(suite.entries.front().seed_trace.gate_scores.size());
    num_classes = static_cast<int>(suite.entries.front().seed_trace.logits.size());
  }

  json manifest;
  manifest["format"] = "adnnperf-suite";
  manifest["version"] = 1;
  manifest["count"] = count;
  manifest["sample_shape"] = sample_shape;
  manifest["num_blocks"] = num_blocks;
  manifest["num_classes"] = num_classes;
  manifest["producer"] = producer_name(suite.producer);
  manifest["budget"] = {{"norm_order", norm_order_name(suite.budget.norm_order)},
                        {"epsilon", suite.budget.epsilon}};
  {
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw ArtifactError("cannot write suite manifest in " + dir);
    mf << manifest.dump(2) << "\n";
  }

  std::ofstream bin(fs::path(dir) / "arrays.bin", std::ios::binary);
  if (!bin) throw ArtifactError("cannot write suite arrays in " + dir);
  const std::uint32_t head[2] = {kArraysMagic, kArraysVersion};
  bin.write(reinterpret_cast<const char*>(head), sizeof(head));

  for (const SuiteEntry& it : suite.entries) {
    if (it.seed.shape != sample_shape || it.generated.shape != sample_shape)
      throw ArtifactError("save_suite: entries have inconsistent sample shapes");
    const auto encode_trace = [&](const BlockTrace& t) {
      if (static_cast<int>(t.gate_scores.size()) != num_blocks ||
          static_cast<int>(t.activated.size()) != num_blocks ||
          static_cast<int>(t.logits.size()) != num_classes)
        throw ArtifactError("save_suite: trace sizes inconsistent across entries");
      std::vector<double> flat;
      flat.reserve(2 * num_blocks + num_classes + 1);
      flat.insert(flat.end(), t.gate_scores.begin(), t.gate_scores.end());
      for (bool a : t.activated) flat.push_back(a ? 1.0 : 0.0);
      flat.push_back(t.exit_index ? static_cast<double>(*t.exit_index) : -1.0);
      flat.insert(flat.end(), t.logits.begin(), t.logits.end());
      put_doubles(bin, flat.data(), flat.size());
    };
    const double scalars[4] = {static_cast<double>(it.seed_id), it.seed_cost,
                               it.generated_cost, it.gen_time_seconds};
    put_doubles(bin, scalars, 4);
    put_doubles(bin, it.seed.data.data(), it.seed.data.size());
    put_doubles(bin, it.generated.data.data(), it.generated.data.size());
    encode_trace(it.seed_trace);
    encode_trace(it.generated_trace);
  }
  if (!bin) throw ArtifactError("failed writing suite arrays in " + dir);
}

TestSuite load_suite(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw ArtifactError("no suite manifest in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ArtifactError("suite manifest in " + dir + " is not valid JSON: " + e.what());
  }
  if (manifest.value("format", "") != "adnnperf-suite")
    throw ArtifactError("not a suite directory: " + dir);

  TestSuite suite;
  suite.producer = producer_from_name(manifest.at("producer").get<std::string>());
  const std::string order = manifest.at("budget").at("norm_order").get<std::string>();
  suite.budget.norm_order = order == "L2" ? NormOrder::l2 : NormOrder::linf;
  suite.budget.epsilon = manifest.at("budget").at("epsilon").get<double>();
  const std::size_t count = manifest.at("count").get<std::size_t>();
  const std::vector<int> sample_shape =
      manifest.at("sample_shape").get<std::vector<int>>();
  const int num_blocks = manifest.at("num_blocks").get<int>();
  const int num_classes = manifest.at("num_classes").get<int>();

  std::ifstream bin(fs::path(dir) / "arrays.bin", std::ios::binary);
  if (!bin) throw ArtifactError("no suite arrays in " + dir);
  std::uint32_t head[2];
  bin.read(reinterpret_cast<char*>(head), sizeof(head));
  if (!bin || head[0] != kArraysMagic)
    throw ArtifactError("suite arrays in " + dir + " have a wrong header");
  if (head[1] != kArraysVersion)
    throw ArtifactError("suite arrays in " + dir + " use an unsupported version");

  suite.entries.resize(count);
  for (SuiteEntry& it : suite.entries) {
    const auto decode_trace = [&](BlockTrace& t) {
      std::vector<double> flat(2 * num_blocks + num_classes + 1);
      get_doubles(bin, flat.data(), flat.size(), "trace");
      t.gate_scores.assign(flat.begin(), flat.begin() + num_blocks);
      t.activated.resize(num_blocks);
      for (int i = 0; i < num_blocks; ++i) t.activated[i] = flat[num_blocks + i] != 0.0;
      const double exit_raw = flat[2 * num_blocks];
      if (exit_raw >= 0.0) t.exit_index = static_cast<int>(exit_raw);
      t.logits.assign(flat.begin() + 2 * num_blocks + 1, flat.end());
    };
    double scalars[4];
    get_doubles(bin, scalars, 4, "entry scalars");
    it.seed_id = static_cast<int>(scalars[0]);
    it.seed_cost = scalars[1];
    it.generated_cost = scalars[2];
    it.gen_time_seconds = scalars[3];
    it.seed = Tensor(sample_shape);
    get_doubles(bin, it.seed.data.data(), it.seed.data.size(), "seed");
    it.generated = Tensor(sample_shape);
    get_doubles(bin, it.generated.data.data(), it.generated.data.size(), "generated");
    decode_trace(it.seed_trace);
    decode_trace(it.generated_trace);
  }
  // Exactly at EOF?
  char extra;
  bin.read(&extra, 1);
  if (!bin.eof())
    throw ArtifactError("suite arrays in " + dir + " carry trailing bytes");
  return suite;
}

}  // namespace adnnperf
