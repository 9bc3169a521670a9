#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "davel/annotations.hpp"

namespace davel::infer {
struct Candidate;
}

namespace davel::eval {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Temporal IoU of two intervals; a zero-length interval scores 0 against
// anything, including itself.
double tiou(double start_a, double end_a, double start_b, double end_b);

struct ScoredInterval {
    std::string video_id;
    double start_s = 0;
    double end_s = 0;
    double score = 0;
};

struct Interval {
    double start_s = 0;
    double end_s = 0;
};

// AP for one class at one tIoU threshold. Greedy matching over predictions
// sorted by score (ties by earlier start, then insertion order); each GT
// matches at most once; all-point interpolation of the PR curve. No GT
// instances -> nullopt (class excluded from the mean at that threshold).
std::optional<double> average_precision(std::vector<ScoredInterval> predictions,
                                        const std::map<std::string, std::vector<Interval>>& gt,
                                        double threshold);

struct APReport {
    struct Entry {
        int label_id = 0;
        double threshold = 0;
        double ap = 0;
        int gt_count = 0;
    };
    std::vector<Entry> per_class;           // classes with GT, every threshold
    std::vector<double> thresholds;         // evaluated thresholds, ascending
    std::map<double, double> map_at;        // threshold -> mAP
    double avg_map = 0;                     // mean of map_at over all thresholds
    int evaluated_videos = 0;
    std::vector<std::string> warnings;      // lenient-mode skips
};

inline std::vector<double> default_thresholds() {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

// Evaluates predictions against the subset's ground truth. strict mode
// rejects predictions for unknown or out-of-subset videos; lenient mode
// skips them with a warning in the report.
APReport mean_ap(const std::map<std::string, std::vector<infer::Candidate>>& predictions,
                 const data::DatasetIndex& gt, const std::string& subset,
                 const std::vector<double>& thresholds = default_thresholds(),
                 bool strict = false);

void write_report_json(const std::string& path, const APReport& report,
                       const data::Taxonomy& taxonomy);
void write_report_csv(const std::string& path, const APReport& report,
                      const data::Taxonomy& taxonomy);

}  // namespace davel::eval
