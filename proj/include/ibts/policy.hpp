#pragma once

#include "ibts/env/types.hpp"
#include "ibts/nn/tensor.hpp"

namespace ibts {

// Read-only view of a team's per-agent action distributions.
class TeamPolicy {
 public:
  virtual ~TeamPolicy() = default;
  virtual int num_agents() const = 0;
  // obs rows are ego observations of `agent`; returns rows of kNumActions
  // probabilities.
  virtual nn::Matrix action_probs(int agent, const nn::Matrix& obs) const = 0;
};

}  // namespace ibts
