#pragma once

#include <map>
#include <string>
#include <vector>

#include "davel/features.hpp"
#include "davel/model.hpp"

namespace davel::infer {

struct Candidate {
    std::string video_id;
    double start_s = 0;
    double end_s = 0;
    int label_id = 0;
    double score = 0;
};

struct DecodeConfig {
    double score_threshold = 0.001;
    int pre_nms_topk = 2000;
    double soft_nms_sigma = 0.9;
    int max_kept = 100;
    double min_score = 0.001;
};

// Boundary decoding: every (level, valid step, class) with
// probability above the threshold emits [t - d_s, t + d_e] scaled to seconds
// and clamped to [0, duration]. Keeps the global top-k by score.
std::vector<Candidate> decode_candidates(const model::RawPredictions& raw,
                                         const std::string& video_id, double hop_s,
                                         double duration_s, const DecodeConfig& cfg);

// Multi-class Soft-NMS: repeatedly freeze the highest-score remaining
// candidate and Gaussian-decay same-class candidates by their tIoU with it.
// Stops at max_kept or when the best remaining score drops below min_score.
std::vector<Candidate> soft_nms(std::vector<Candidate> candidates, double sigma,
                                const DecodeConfig& cfg);

// forward -> decode -> soft_nms on one padded video.
std::vector<Candidate> localize_video(const data::FeatureStreams& padded,
                                      const model::ModelConfig& cfg,
                                      num::ParamStore<float>& params, double duration_s,
                                      const DecodeConfig& dcfg);

// Predictions file: {"results": {"<video_id>": [{start_s,end_s,label_id,score}...]}}
void write_predictions(const std::string& path,
                       const std::map<std::string, std::vector<Candidate>>& by_video);
std::map<std::string, std::vector<Candidate>> read_predictions(const std::string& path);

}  // namespace davel::infer
