#pragma once

#include <stdexcept>
#include <vector>

#include "davel/annotations.hpp"
#include "davel/model_config.hpp"

namespace davel::train {

struct AssignmentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PositiveSample {
    int level = 0;  // 0-based
    int step = 0;
    int label = 0;
    double d_start = 0;  // level-step units
    double d_end = 0;
    int event_index = -1;
};

struct TargetAssignment {
    std::vector<PositiveSample> positives;
    int total_steps = 0;     // valid steps summed over levels
    int dropped_events = 0;  // entirely beyond the valid window
    int skipped_events = 0;  // inside the window but produced no positive
    std::vector<model::LevelMeta> levels;
};

// Level grid derived from the config without running the model: ceil-halving
// lengths and valid prefixes, strides in base steps.
std::vector<model::LevelMeta> level_grid(const model::ModelConfig& cfg, int valid_len);

// A step (l, i) is positive for class c iff some event of class c contains
// the step center t = (i+0.5)*hop*stride_l and max(d_s, d_e) in level units
// falls inside level l's band. Among same-class matches the shortest event
// wins.
TargetAssignment assign_targets(const data::AnnotatedVideo& video, double hop_s,
                                const std::vector<model::LevelMeta>& levels,
                                const std::vector<double>& range_edges);

}  // namespace davel::train
