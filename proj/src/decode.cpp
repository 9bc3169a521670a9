#include "davel/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "davel/metrics.hpp"

namespace davel::infer {

namespace {

// deterministic candidate ordering: score desc, then interval, then class
bool candidate_before(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    if (a.end_s != b.end_s) return a.end_s < b.end_s;
    return a.label_id < b.label_id;
}

}  // namespace

std::vector<Candidate> decode_candidates(const model::RawPredictions& raw,
                                         const std::string& video_id, double hop_s,
                                         double duration_s, const DecodeConfig& cfg) {
    std::vector<Candidate> out;
    for (size_t l = 0; l < raw.probs.size(); ++l) {
        const auto& probs = raw.probs[l];  // [T_l, C]
        const auto& dist = raw.dist[l];    // [2, Creg, T_l]
        const model::LevelMeta& meta = raw.levels[l];
        const int64_t classes = probs.dim(1);
        const int64_t creg = dist.dim(1);
        const int64_t tl = dist.dim(2);
        const double scale = hop_s * meta.stride;
        for (int i = 0; i < meta.valid; ++i) {
            const double center = (i + 0.5) * scale;
            for (int64_t c = 0; c < classes; ++c) {
                const double p = probs.at2(i, c);
                if (p <= cfg.score_threshold) continue;
                const int64_t cr = creg == 1 ? 0 : c;
                const double ds = dist.data[static_cast<size_t>((0 * creg + cr) * tl + i)];
                const double de = dist.data[static_cast<size_t>((1 * creg + cr) * tl + i)];
                Candidate cand;
                cand.video_id = video_id;
                cand.start_s = std::max(0.0, center - ds * scale);
                cand.end_s = std::min(duration_s, center + de * scale);
                cand.label_id = static_cast<int>(c);
                cand.score = p;
                if (cand.start_s >= cand.end_s) continue;
                out.push_back(std::move(cand));
            }
        }
    }
    std::sort(out.begin(), out.end(), candidate_before);
    if (static_cast<int>(out.size()) > cfg.pre_nms_topk) out.resize(static_cast<size_t>(cfg.pre_nms_topk));
    return out;
}

std::vector<Candidate> soft_nms(std::vector<Candidate> candidates, double sigma,
                                const DecodeConfig& cfg) {
    std::vector<Candidate> kept;
    std::vector<char> alive(candidates.size(), 1);
    while (static_cast<int>(kept.size()) < cfg.max_kept) {
        int best = -1;
        for (size_t i = 0; i < candidates.size(); ++i) {
            if (!alive[i]) continue;
            if (best < 0 || candidate_before(candidates[i], candidates[static_cast<size_t>(best)]))
                best = static_cast<int>(i);
        }
        if (best < 0) break;
        const Candidate m = candidates[static_cast<size_t>(best)];
        if (m.score < cfg.min_score) break;
        alive[static_cast<size_t>(best)] = 0;
        kept.push_back(m);
        for (size_t i = 0; i < candidates.size(); ++i) {
            if (!alive[i] || candidates[i].label_id != m.label_id) continue;
            const double o = eval::tiou(m.start_s, m.end_s, candidates[i].start_s, candidates[i].end_s);
            if (o > 0) candidates[i].score *= std::exp(-(o * o) / sigma);
        }
    }
    std::sort(kept.begin(), kept.end(), candidate_before);
    return kept;
}

std::vector<Candidate> localize_video(const data::FeatureStreams& padded,
                                      const model::ModelConfig& cfg,
                                      num::ParamStore<float>& params, double duration_s,
                                      const DecodeConfig& dcfg) {
    num::Tape<float> tape;
    num::BoundParams<float> bp(tape, params);
    auto fwd = model::forward(bp, cfg, padded.audio, padded.visual, padded.mask, padded.valid_len);
    model::RawPredictions raw = model::detach(tape, fwd);
    auto cands = decode_candidates(raw, padded.video_id, padded.hop_s, duration_s, dcfg);
    return soft_nms(std::move(cands), dcfg.soft_nms_sigma, dcfg);
}

void write_predictions(const std::string& path,
                       const std::map<std::string, std::vector<Candidate>>& by_video) {
    nlohmann::ordered_json results = nlohmann::ordered_json::object();
    for (const auto& [vid, cands] : by_video) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const Candidate& c : cands)
            arr.push_back({{"start_s", c.start_s},
                           {"end_s", c.end_s},
                           {"label_id", c.label_id},
                           {"score", c.score}});
        results[vid] = std::move(arr);
    }
    nlohmann::ordered_json j;
    j["results"] = std::move(results);
    std::ofstream os(path);
    if (!os) throw num::FormatError("cannot write predictions: " + path);
    os << j.dump(2) << "\n";
}

std::map<std::string, std::vector<Candidate>> read_predictions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw num::FormatError("cannot open predictions: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw num::FormatError("predictions " + path + ": " + e.what());
    }
    if (!j.contains("results") || !j["results"].is_object())
        throw num::FormatError("predictions " + path + ": missing results object");
    std::map<std::string, std::vector<Candidate>> out;
    for (const auto& [vid, arr] : j["results"].items()) {
        std::vector<Candidate> cands;
        for (const auto& cj : arr) {
            Candidate c;
            c.video_id = vid;
            c.start_s = cj.at("start_s").get<double>();
            c.end_s = cj.at("end_s").get<double>();
            c.label_id = cj.at("label_id").get<int>();
            c.score = cj.at("score").get<double>();
            cands.push_back(std::move(c));
        }
        out.emplace(vid, std::move(cands));
    }
    return out;
}

}  // namespace davel::infer
