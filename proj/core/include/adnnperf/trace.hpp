#pragma once

#include <optional>
#include <vector>

// Per-input execution record of an adaptive model: which gates fired, which
// blocks ran, where inference exited. This is the raw material for all cost
// accounting and coverage metrics.
namespace adnnperf {

struct BlockTrace {
  // Gate score of block i in [0,1]. Conditional skipping evaluates every
  // gate, so all entries are meaningful; early termination stops evaluating
  // at the exit block, and entries past it are recorded as 0.
  std::vector<double> gate_scores;

  // Whether block i's gated computation ran. Conditional skipping:
  // activated[i] == (gate_scores[i] > threshold[i]) with strict inequality.
  // Early termination: the executed prefix, activated[i] == (i <= exit_index)
  // — costs sum over exactly the blocks that ran.
  std::vector<bool> activated;

  // Early termination only: the block whose exit head fired (smallest i with
  // confidence strictly above threshold, or N-1 when none fires).
  std::optional<int> exit_index;

  // Final output scores, length num_classes.
  std::vector<double> logits;

  int activated_count() const {
    int n = 0;
    for (bool a : activated) n += a ? 1 : 0;
    return n;
  }
};

}  // namespace adnnperf
