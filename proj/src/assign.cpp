#include "davel/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace davel::train {

std::vector<model::LevelMeta> level_grid(const model::ModelConfig& cfg, int valid_len) {
    std::vector<model::LevelMeta> levels;
    int len = cfg.t_max;
    int valid = valid_len;
    int stride = 1;
    for (int l = 1; l <= cfg.pyramid_levels; ++l) {
        const int s = l == 1 || !cfg.use_downsampling ? 1 : 2;
        if (s == 2) {
            len = (len + 1) / 2;
            valid = (valid + 1) / 2;
            stride *= 2;
        }
        levels.push_back({len, valid, stride});
    }
    return levels;
}

TargetAssignment assign_targets(const data::AnnotatedVideo& video, double hop_s,
                                const std::vector<model::LevelMeta>& levels,
                                const std::vector<double>& range_edges) {
    if (hop_s <= 0) throw AssignmentError("hop_s must be positive");
    if (range_edges.size() + 1 != levels.size())
        throw AssignmentError("range_edges must have one entry fewer than levels");

    TargetAssignment out;
    out.levels = levels;
    for (const auto& m : levels) out.total_steps += m.valid;

    const double window_end = levels.empty() ? 0.0 : levels[0].valid * hop_s;
    std::vector<char> event_hit(video.events.size(), 0);
    std::vector<char> event_dropped(video.events.size(), 0);
    for (size_t e = 0; e < video.events.size(); ++e) {
        if (video.events[e].start_s >= window_end) {
            event_dropped[e] = 1;
            ++out.dropped_events;
        }
    }

    for (size_t l = 0; l < levels.size(); ++l) {
        const model::LevelMeta& meta = levels[l];
        const double scale = hop_s * meta.stride;
        const double lo = l == 0 ? 0.0 : range_edges[l - 1];
        const double hi =
            l + 1 == levels.size() ? std::numeric_limits<double>::infinity() : range_edges[l];
        for (int i = 0; i < meta.valid; ++i) {
            const double center = (i + 0.5) * scale;
            // best (shortest) candidate per class at this step
            std::map<int, size_t> winner;
            for (size_t e = 0; e < video.events.size(); ++e) {
                if (event_dropped[e]) continue;
                const data::EventInstance& ev = video.events[e];
                if (center < ev.start_s || center > ev.end_s) continue;
                const double ds = (center - ev.start_s) / scale;
                const double de = (ev.end_s - center) / scale;
                const double reach = std::max(ds, de);
                if (reach < lo || reach >= hi) continue;
                auto it = winner.find(ev.label_id);
                if (it == winner.end()) {
                    winner.emplace(ev.label_id, e);
                } else {
                    const data::EventInstance& cur = video.events[it->second];
                    if (ev.end_s - ev.start_s < cur.end_s - cur.start_s) it->second = e;
                }
            }
            for (const auto& [label, e] : winner) {
                const data::EventInstance& ev = video.events[e];
                PositiveSample p;
                p.level = static_cast<int>(l);
                p.step = i;
                p.label = label;
                p.d_start = (center - ev.start_s) / scale;
                p.d_end = (ev.end_s - center) / scale;
                p.event_index = static_cast<int>(e);
                out.positives.push_back(p);
                event_hit[e] = 1;
            }
        }
    }

    for (size_t e = 0; e < video.events.size(); ++e)
        if (!event_hit[e] && !event_dropped[e]) ++out.skipped_events;
    return out;
}

}  // namespace davel::train
