#pragma once

#include <string>

#include "davel/checkpoint.hpp"
#include "davel/tensor.hpp"

namespace davel::data {

// Temporally aligned per-video feature streams. The mask marks the valid
// prefix; audio and visual share T and hop.
struct FeatureStreams {
    std::string video_id;
    num::Tensor<float> audio;   // [T, D_a]
    num::Tensor<float> visual;  // [T, D_v]
    float hop_s = 0;
    float offset_s = 0;
    int valid_len = 0;
    num::Mask mask;  // length T, prefix-contiguous ones
};

// One modality as stored on disk: magic "DAVF", u32 version=1, u32 T, u32 D,
// f32 hop_s, f32 offset_s, then T*D little-endian f32 row-major.
struct FeatureFile {
    num::Tensor<float> values;  // [T, D]
    float hop_s = 0;
    float offset_s = 0;
};

void write_feature_file(const std::string& path, const FeatureFile& f);
FeatureFile read_feature_file(const std::string& path);

// Layout: <dir>/<modality>/<video_id>.davf with modality in {audio, visual}.
std::string feature_path(const std::string& dir, const std::string& modality,
                         const std::string& video_id);

// Loads both modalities and checks alignment (equal T and hop).
FeatureStreams load_features(const std::string& video_id, const std::string& feature_dir);

// Zero-pads (or crops from the end) to t_max and sets the mask.
FeatureStreams pad_and_mask(const FeatureStreams& s, int t_max);

class FeatureSource {
  public:
    virtual ~FeatureSource() = default;
    virtual FeatureStreams load(const std::string& video_id) const = 0;
};

class DirFeatureSource final : public FeatureSource {
  public:
    explicit DirFeatureSource(std::string dir) : dir_(std::move(dir)) {}
    FeatureStreams load(const std::string& video_id) const override {
        return load_features(video_id, dir_);
    }

  private:
    std::string dir_;
};

}  // namespace davel::data
