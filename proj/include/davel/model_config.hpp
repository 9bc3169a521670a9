#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace davel::model {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LevelMeta {
    int length = 0;  // steps at this level
    int valid = 0;   // valid prefix
    int stride = 1;  // level step in base steps
};

struct ModelConfig {
    int embed_dim = 512;       // D; fused pyramid channels are 2D
    int unimodal_blocks = 2;   // self-attention blocks per modality
    int pyramid_levels = 6;    // cross-modal blocks / pyramid depth
    int heads = 4;
    int classes = 0;           // from the taxonomy
    int hidden_classes = 100;  // dependency groups
    int dependency_dim = 128;  // per-group width inside dependency modeling
    int ffn_ratio = 4;
    int t_max = 224;
    bool use_positional = true;
    bool use_dependency = true;
    bool dep_simultaneous = true;
    bool dep_consecutive = true;
    bool class_aware_regression = true;
    bool use_downsampling = true;
    int audio_dim = 128;
    int visual_dim = 2048;
    // Interior regression band edges in level-step units; level l owns
    // max(d_s, d_e) in [edges[l-2], edges[l-1]) with an implicit trailing
    // infinity. Empty selects 4 * 2^k.
    std::vector<double> range_edges;
    std::string modality = "av";  // av | audio | visual

    void validate() const;

    int regression_channels() const { return class_aware_regression ? classes : 1; }
    int level_stride(int level /*1-based*/) const {
        return use_downsampling && level > 1 ? 1 << (level - 1) : 1;
    }
    std::vector<double> resolved_edges() const;
};

ModelConfig model_config_from_json(const std::string& json_text);
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig load_model_config(const std::string& path);
void save_model_config(const ModelConfig& cfg, const std::string& path);

}  // namespace davel::model
