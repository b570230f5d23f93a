#pragma once

#include <string>
#include <vector>

#include "adnnperf/budget.hpp"
#include "adnnperf/flops.hpp"
#include "adnnperf/tensor.hpp"
#include "adnnperf/trace.hpp"

// A test suite is the unit of exchange between the generators (learned or
// iterative) and the measurement code: seed inputs, their perturbed
// counterparts, both execution traces, both costs, and how long each sample
// took to produce.
namespace adnnperf {

enum class Producer { deepperform, iterative_baseline };

const char* producer_name(Producer p);
Producer producer_from_name(const std::string& name);  // ConfigError on unknown

struct SuiteEntry {
  int seed_id = 0;
  Tensor seed;       // [C,H,W]
  Tensor generated;  // [C,H,W], inside the budget ball around seed
  BlockTrace seed_trace, generated_trace;
  double seed_cost = 0.0, generated_cost = 0.0;
  double gen_time_seconds = 0.0;
};

struct TestSuite {
  std::vector<SuiteEntry> entries;
  PerturbationBudget budget;
  Producer producer = Producer::deepperform;

  // Checks the storage invariants: each stored cost equals hard_cost of its
  // stored trace, and every generated sample lies inside the budget (1e-6
  // norm slack for serialization round-trips). profile must belong to the
  // model that produced the traces. Throws ArtifactError.
  void validate(const CostProfile& profile) const;
};

// Directory layout: manifest.json (counts, shapes, budget, producer) plus
// arrays.bin (all numeric payloads as little-endian doubles in entry order).
// Round-trips bit-exactly.
void save_suite(const TestSuite& suite, const std::string& dir);
TestSuite load_suite(const std::string& dir);

}  // namespace adnnperf
