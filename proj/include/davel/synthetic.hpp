#pragma once

#include <map>
#include <string>
#include <vector>

#include "davel/annotations.hpp"
#include "davel/features.hpp"
#include "davel/rng.hpp"
#include "davel/tensor.hpp"

namespace davel::data {

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Planted-event corpus description. An annotated event injects its class
// signature into BOTH streams; a distractor injects it into exactly one and
// is not annotated, so it is indistinguishable from a real event unimodally.
struct SyntheticSpec {
    int classes = 6;
    int train_videos = 300;
    int val_videos = 60;
    int test_videos = 60;
    int t_min = 48;
    int t_max = 64;
    double hop_s = 0.32;
    int audio_dim = 16;
    int visual_dim = 16;
    double mean_events = 3.0;
    double overlap_prob = 0.3;
    std::vector<std::vector<double>> cooccurrence;  // C x C, symmetric, non-negative; empty = uniform
    double distractor_rate = 0.2;                   // expected distractors per video = rate * mean_events
    double noise_sigma = 0.5;
    double event_len_min_s = 0.8;
    double event_len_max_s = 12.0;
    double signature_amplitude = 1.0;
    uint64_t seed = 1;

    void validate() const;
};

struct SyntheticCorpus {
    DatasetIndex index;
    std::map<std::string, FeatureFile> audio;
    std::map<std::string, FeatureFile> visual;
};

// Deterministic per (class, dim): entries are +/- amplitude.
num::Tensor<float> class_signature(int label_id, int dim, const std::string& modality,
                                   double amplitude = 1.0);

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Writes annotations.json plus features/{audio,visual}/<id>.davf under dir.
void write_corpus(const SyntheticCorpus& corpus, const std::string& dir);

SyntheticSpec synthetic_spec_from_json_file(const std::string& path);
void write_synthetic_spec(const SyntheticSpec& spec, const std::string& path);

// In-memory feature access over a generated corpus.
class MemoryFeatureSource final : public FeatureSource {
  public:
    explicit MemoryFeatureSource(const SyntheticCorpus& corpus) : corpus_(&corpus) {}
    FeatureStreams load(const std::string& video_id) const override {
        const FeatureFile& a = corpus_->audio.at(video_id);
        const FeatureFile& v = corpus_->visual.at(video_id);
        FeatureStreams s;
        s.video_id = video_id;
        s.hop_s = a.hop_s;
        s.offset_s = a.offset_s;
        s.valid_len = static_cast<int>(a.values.dim(0));
        s.audio = a.values;
        s.visual = v.values;
        s.mask.assign(static_cast<size_t>(s.valid_len), 1);
        return s;
    }

  private:
    const SyntheticCorpus* corpus_;
};

}  // namespace davel::data
