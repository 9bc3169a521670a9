#include "davel/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace davel::data {

namespace {

int poisson(SeededRng& rng, double lambda) {
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.uniform();
    } while (p > limit);
    return k - 1;
}

bool intervals_overlap(double s1, double e1, double s2, double e2) {
    return std::min(e1, e2) - std::max(s1, s2) > 0;
}

struct PlantedInterval {
    double start = 0;
    double end = 0;
    int label = 0;
};

// rows whose step center falls inside [start, end]
void add_signature(num::Tensor<float>& feat, double start, double end, double hop,
                   const num::Tensor<float>& sig) {
    const int64_t t = feat.dim(0), d = feat.dim(1);
    for (int64_t i = 0; i < t; ++i) {
        const double center = (static_cast<double>(i) + 0.5) * hop;
        if (center < start || center > end) continue;
        for (int64_t c = 0; c < d; ++c) feat.at2(i, c) += sig.data[static_cast<size_t>(c)];
    }
}

}  // namespace

void SyntheticSpec::validate() const {
    if (classes < 1) throw GenerationError("classes must be >= 1");
    if (t_min < 1 || t_max < t_min) throw GenerationError("invalid T range");
    if (hop_s <= 0) throw GenerationError("hop_s must be positive");
    if (overlap_prob < 0 || overlap_prob > 1) throw GenerationError("overlap_prob must be in [0,1]");
    if (distractor_rate < 0) throw GenerationError("distractor_rate must be >= 0");
    if (noise_sigma < 0) throw GenerationError("noise_sigma must be >= 0");
    if (event_len_min_s <= 0 || event_len_max_s < event_len_min_s)
        throw GenerationError("invalid event length range");
    if (!cooccurrence.empty()) {
        if (static_cast<int>(cooccurrence.size()) != classes)
            throw GenerationError("cooccurrence matrix must be C x C");
        for (int a = 0; a < classes; ++a) {
            if (static_cast<int>(cooccurrence[static_cast<size_t>(a)].size()) != classes)
                throw GenerationError("cooccurrence matrix must be C x C");
            for (int b = 0; b < classes; ++b) {
                const double v = cooccurrence[static_cast<size_t>(a)][static_cast<size_t>(b)];
                if (v < 0) throw GenerationError("cooccurrence entries must be non-negative");
                if (std::fabs(v - cooccurrence[static_cast<size_t>(b)][static_cast<size_t>(a)]) > 1e-12)
                    throw GenerationError("cooccurrence matrix must be symmetric");
            }
        }
    }
    // capacity check: the expected event time must fit the shortest video
    if (mean_events * event_len_min_s > t_min * hop_s)
        throw GenerationError("infeasible spec: mean events exceed capacity at minimum duration");
}

num::Tensor<float> class_signature(int label_id, int dim, const std::string& modality,
                                   double amplitude) {
    num::Tensor<float> sig({dim});
    // Hadamard rows where the width allows: signatures of concurrent events
    // add without cross-talk, and the two modalities draw from disjoint rows.
    const bool pow2 = dim > 0 && (dim & (dim - 1)) == 0;
    const int row = modality == "audio" ? 1 + label_id : 1 + dim / 2 + label_id;
    if (pow2 && row < dim) {
        for (int j = 0; j < dim; ++j) {
            const int parity = __builtin_popcount(static_cast<unsigned>(row & j)) & 1;
            sig.data[static_cast<size_t>(j)] = static_cast<float>(parity ? -amplitude : amplitude);
        }
        return sig;
    }
    const uint64_t tag = modality == "audio" ? 0x41u : 0x56u;
    SeededRng rng(0x5157AB1Eu ^ (static_cast<uint64_t>(label_id) * 0x9E37u) ^ (tag << 32));
    for (float& v : sig.data)
        v = static_cast<float>((rng.uniform() < 0.5 ? -1.0 : 1.0) * amplitude);
    return sig;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SeededRng root(spec.seed);

    std::vector<num::Tensor<float>> sig_a, sig_v;
    for (int c = 0; c < spec.classes; ++c) {
        sig_a.push_back(class_signature(c, spec.audio_dim, "audio", spec.signature_amplitude));
        sig_v.push_back(class_signature(c, spec.visual_dim, "visual", spec.signature_amplitude));
    }

    auto sample_class_uniform = [&](SeededRng& rng) {
        return static_cast<int>(rng.uniform_int(spec.classes));
    };
    auto sample_cooccurring = [&](SeededRng& rng, int base) {
        if (spec.cooccurrence.empty()) return sample_class_uniform(rng);
        const auto& row = spec.cooccurrence[static_cast<size_t>(base)];
        double total = 0;
        for (double w : row) total += w;
        if (total <= 0) return sample_class_uniform(rng);
        double x = rng.uniform() * total;
        for (int c = 0; c < spec.classes; ++c) {
            x -= row[static_cast<size_t>(c)];
            if (x <= 0) return c;
        }
        return spec.classes - 1;
    };

    Taxonomy tax;
    for (int c = 0; c < spec.classes; ++c) tax.names.push_back("class_" + std::to_string(c));

    SyntheticCorpus corpus;
    std::vector<AnnotatedVideo> videos;
    const std::vector<std::pair<std::string, int>> subsets = {
        {"train", spec.train_videos}, {"val", spec.val_videos}, {"test", spec.test_videos}};
    uint64_t video_counter = 0;
    for (const auto& [subset, count] : subsets) {
        for (int k = 0; k < count; ++k, ++video_counter) {
            SeededRng rng = root.fork(video_counter);
            AnnotatedVideo v;
            {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "%04llu",
                              static_cast<unsigned long long>(video_counter));
                v.id = subset + "_" + buf;
            }
            v.subset = subset;
            const int t = spec.t_min + static_cast<int>(rng.uniform_int(spec.t_max - spec.t_min + 1));
            v.duration_s = t * spec.hop_s;

            std::vector<PlantedInterval> planted;
            const int n_events = poisson(rng, spec.mean_events);
            for (int e = 0; e < n_events; ++e) {
                const double len = std::min(
                    rng.uniform(spec.event_len_min_s, spec.event_len_max_s), v.duration_s);
                const bool overlap = !planted.empty() && rng.uniform() < spec.overlap_prob;
                double start = -1;
                int label;
                if (overlap) {
                    const PlantedInterval& base =
                        planted[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(planted.size())))];
                    label = sample_cooccurring(rng, base.label);
                    const double lo = std::max(0.0, base.start - 0.5 * len);
                    const double hi = std::min(std::max(lo, base.end - 0.5 * len), v.duration_s - len);
                    start = rng.uniform(lo, std::max(lo, hi));
                    if (!intervals_overlap(start, start + len, base.start, base.end)) continue;
                } else {
                    label = sample_class_uniform(rng);
                    // insist on a disjoint placement; give up after a few tries
                    bool placed = false;
                    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
                        const double cand = rng.uniform(0.0, std::max(1e-9, v.duration_s - len));
                        placed = true;
                        for (const PlantedInterval& p : planted)
                            placed = placed && !intervals_overlap(cand, cand + len, p.start, p.end);
                        if (placed) start = cand;
                    }
                    if (!placed) continue;
                }
                PlantedInterval p{start, std::min(start + len, v.duration_s), label};
                if (p.end - p.start <= 0) continue;
                planted.push_back(p);
                v.events.push_back({p.start, p.end, p.label});
            }

            FeatureFile audio, visual;
            audio.hop_s = static_cast<float>(spec.hop_s);
            visual.hop_s = static_cast<float>(spec.hop_s);
            audio.values = num::Tensor<float>({t, spec.audio_dim});
            visual.values = num::Tensor<float>({t, spec.visual_dim});
            for (const PlantedInterval& p : planted) {
                add_signature(audio.values, p.start, p.end, spec.hop_s, sig_a[static_cast<size_t>(p.label)]);
                add_signature(visual.values, p.start, p.end, spec.hop_s, sig_v[static_cast<size_t>(p.label)]);
            }

            const int n_distractors = poisson(rng, spec.distractor_rate * spec.mean_events);
            for (int d = 0; d < n_distractors; ++d) {
                const double len = std::min(
                    rng.uniform(spec.event_len_min_s, spec.event_len_max_s), v.duration_s);
                const double start = rng.uniform(0.0, std::max(1e-9, v.duration_s - len));
                const int label = sample_class_uniform(rng);
                if (rng.uniform() < 0.5) {
                    add_signature(audio.values, start, start + len, spec.hop_s,
                                  sig_a[static_cast<size_t>(label)]);
                } else {
                    add_signature(visual.values, start, start + len, spec.hop_s,
                                  sig_v[static_cast<size_t>(label)]);
                }
            }

            if (spec.noise_sigma > 0) {
                for (float& x : audio.values.data)
                    x += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
                for (float& x : visual.values.data)
                    x += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
            }

            corpus.audio.emplace(v.id, std::move(audio));
            corpus.visual.emplace(v.id, std::move(visual));
            videos.push_back(std::move(v));
        }
    }
    corpus.index = build_index(std::move(tax), std::move(videos));
    return corpus;
}

void write_corpus(const SyntheticCorpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "features" / "audio");
    fs::create_directories(fs::path(dir) / "features" / "visual");
    save_annotations((fs::path(dir) / "annotations.json").string(), corpus.index);
    const std::string fdir = (fs::path(dir) / "features").string();
    for (const auto& [id, f] : corpus.audio) write_feature_file(feature_path(fdir, "audio", id), f);
    for (const auto& [id, f] : corpus.visual) write_feature_file(feature_path(fdir, "visual", id), f);
}

namespace {

using nlohmann::ordered_json;

}  // namespace

SyntheticSpec synthetic_spec_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw GenerationError("cannot open synthetic spec: " + path);
    ordered_json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw GenerationError("synthetic spec " + path + ": " + e.what());
    }
    SyntheticSpec s;
    s.classes = j.value("classes", s.classes);
    s.train_videos = j.value("train_videos", s.train_videos);
    s.val_videos = j.value("val_videos", s.val_videos);
    s.test_videos = j.value("test_videos", s.test_videos);
    s.t_min = j.value("t_min", s.t_min);
    s.t_max = j.value("t_max", s.t_max);
    s.hop_s = j.value("hop_s", s.hop_s);
    s.audio_dim = j.value("audio_dim", s.audio_dim);
    s.visual_dim = j.value("visual_dim", s.visual_dim);
    s.mean_events = j.value("mean_events", s.mean_events);
    s.overlap_prob = j.value("overlap_prob", s.overlap_prob);
    s.distractor_rate = j.value("distractor_rate", s.distractor_rate);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.event_len_min_s = j.value("event_len_min_s", s.event_len_min_s);
    s.event_len_max_s = j.value("event_len_max_s", s.event_len_max_s);
    s.signature_amplitude = j.value("signature_amplitude", s.signature_amplitude);
    s.seed = j.value("seed", s.seed);
    if (j.contains("cooccurrence"))
        s.cooccurrence = j["cooccurrence"].get<std::vector<std::vector<double>>>();
    s.validate();
    return s;
}

void write_synthetic_spec(const SyntheticSpec& s, const std::string& path) {
    ordered_json j;
    j["classes"] = s.classes;
    j["train_videos"] = s.train_videos;
    j["val_videos"] = s.val_videos;
    j["test_videos"] = s.test_videos;
    j["t_min"] = s.t_min;
    j["t_max"] = s.t_max;
    j["hop_s"] = s.hop_s;
    j["audio_dim"] = s.audio_dim;
    j["visual_dim"] = s.visual_dim;
    j["mean_events"] = s.mean_events;
    j["overlap_prob"] = s.overlap_prob;
    j["distractor_rate"] = s.distractor_rate;
    j["noise_sigma"] = s.noise_sigma;
    j["event_len_min_s"] = s.event_len_min_s;
    j["event_len_max_s"] = s.event_len_max_s;
    j["signature_amplitude"] = s.signature_amplitude;
    j["seed"] = s.seed;
    if (!s.cooccurrence.empty()) j["cooccurrence"] = s.cooccurrence;
    std::ofstream os(path);
    if (!os) throw GenerationError("cannot write synthetic spec: " + path);
    os << j.dump(2) << "\n";
}

}  // namespace davel::data
