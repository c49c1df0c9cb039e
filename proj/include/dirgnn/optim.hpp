#pragma once

#include <cstdint>
#include <vector>

#include "dirgnn/autodiff.hpp"

namespace dirgnn::optim {

enum class Kind : std::uint8_t { Adam, Sgd };

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-group optimizer state; moments are shaped like the group's tensors.
struct State {
  Kind kind = Kind::Adam;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

State init_state(const ParamGroup& group, Kind kind);

// Applies one update from group's accumulated gradients.
void step(ParamGroup& group, State& state, double lr, const AdamConstants& c = {});

}  // namespace dirgnn::optim
