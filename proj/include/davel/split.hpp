#pragma once

#include <array>
#include <string>
#include <vector>

#include "davel/annotations.hpp"
#include "davel/rng.hpp"

namespace davel::data {

struct StratificationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Iterative stratification over multi-label class presence. Assigns every
// video to exactly one of train/val/test so per-class video counts follow
// the ratios. Deterministic given the seed.
void stratified_split(DatasetIndex& index, const std::array<double, 3>& ratios, uint64_t seed);

}  // namespace davel::data
