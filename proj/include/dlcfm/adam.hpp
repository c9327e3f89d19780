#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dlcfm/array.hpp"

namespace dlcfm::ad {

using ParamMap = std::map<std::string, Array>;

struct AdamState {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    ParamMap m;
    ParamMap v;
};

// Standard Adam update with bias correction. Moment arrays are created
// lazily on the first step; shapes must match the parameters thereafter.
void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state);

}  // namespace dlcfm::ad
