#include "davel/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace davel::data {

double overlap_rate(const AnnotatedVideo& video) {
    if (video.events.empty())
        throw StatsError("overlap_rate undefined for video " + video.id + " with zero events");
    // Sweep over boundaries, measuring time covered by >=1 and >=2 events.
    std::vector<std::pair<double, int>> edges;
    edges.reserve(video.events.size() * 2);
    for (const EventInstance& e : video.events) {
        edges.emplace_back(e.start_s, +1);
        edges.emplace_back(e.end_s, -1);
    }
    std::sort(edges.begin(), edges.end());
    double union_all = 0, union_overlap = 0;
    int depth = 0;
    double prev = edges.front().first;
    for (const auto& [t, d] : edges) {
        const double len = t - prev;
        if (depth >= 1) union_all += len;
        if (depth >= 2) union_overlap += len;
        depth += d;
        prev = t;
    }
    return union_all > 0 ? union_overlap / union_all : 0.0;
}

namespace {

bool consecutive_pair(const EventInstance& a, const EventInstance& b, double gap_s) {
    return b.start_s >= a.end_s && b.start_s - a.end_s <= gap_s;
}

}  // namespace

std::vector<NpmiEntry> npmi_pairs(const DatasetIndex& index, PairMode mode, double gap_s) {
    if (index.videos.empty()) throw StatsError("npmi_pairs: empty corpus");
    if (mode == PairMode::kConsecutive && gap_s < 0) throw StatsError("npmi_pairs: gap_s must be >= 0");
    const double total = static_cast<double>(index.videos.size());

    std::map<int, int> class_videos;                 // class -> videos containing it
    std::map<std::pair<int, int>, int> pair_videos;  // pair -> videos where relation holds
    for (const AnnotatedVideo& v : index.videos) {
        std::set<int> present;
        for (const EventInstance& e : v.events) present.insert(e.label_id);
        for (int c : present) ++class_videos[c];
        std::set<std::pair<int, int>> pairs;
        for (size_t i = 0; i < v.events.size(); ++i) {
            for (size_t j = 0; j < v.events.size(); ++j) {
                if (i == j) continue;
                const EventInstance& a = v.events[i];
                const EventInstance& b = v.events[j];
                if (a.label_id == b.label_id) continue;
                if (mode == PairMode::kSimultaneous) {
                    if (std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s) > 0)
                        pairs.insert({std::min(a.label_id, b.label_id), std::max(a.label_id, b.label_id)});
                } else {
                    if (consecutive_pair(a, b, gap_s)) pairs.insert({a.label_id, b.label_id});
                }
            }
        }
        for (const auto& p : pairs) ++pair_videos[p];
    }

    std::vector<NpmiEntry> out;
    for (const auto& [p, count] : pair_videos) {
        const double p_ab = count / total;
        const double p_a = class_videos[p.first] / total;
        const double p_b = class_videos[p.second] / total;
        NpmiEntry e;
        e.class_a = p.first;
        e.class_b = p.second;
        e.count = count;
        e.npmi = p_ab >= 1.0 ? 1.0 : std::log(p_ab / (p_a * p_b)) / (-std::log(p_ab));
        out.push_back(e);
    }
    std::sort(out.begin(), out.end(), [](const NpmiEntry& a, const NpmiEntry& b) {
        if (a.npmi != b.npmi) return a.npmi > b.npmi;
        if (a.class_a != b.class_a) return a.class_a < b.class_a;
        return a.class_b < b.class_b;
    });
    return out;
}

std::vector<RepetitionEntry> repetition_rates(const DatasetIndex& index, double gap_s) {
    const int C = index.taxonomy.num_classes();
    std::vector<RepetitionEntry> out(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) out[static_cast<size_t>(c)].label_id = c;
    for (const AnnotatedVideo& v : index.videos) {
        for (size_t i = 0; i < v.events.size(); ++i) {
            ++out[static_cast<size_t>(v.events[i].label_id)].event_count;
            for (size_t j = 0; j < v.events.size(); ++j) {
                if (i == j) continue;
                const EventInstance& a = v.events[i];
                const EventInstance& b = v.events[j];
                if (a.label_id == b.label_id && consecutive_pair(a, b, gap_s))
                    ++out[static_cast<size_t>(a.label_id)].pair_count;
            }
        }
    }
    for (RepetitionEntry& e : out)
        e.rate = e.event_count > 0 ? static_cast<double>(e.pair_count) / e.event_count : 0.0;
    return out;
}

std::vector<HistogramBin> duration_histogram(const DatasetIndex& index, double bin_width_s,
                                             int num_bins) {
    std::vector<HistogramBin> bins(static_cast<size_t>(num_bins));
    for (int i = 0; i < num_bins; ++i) {
        bins[static_cast<size_t>(i)].bin_start_s = i * bin_width_s;
        bins[static_cast<size_t>(i)].bin_end_s = (i + 1) * bin_width_s;
    }
    for (const AnnotatedVideo& v : index.videos) {
        for (const EventInstance& e : v.events) {
            int b = static_cast<int>((e.end_s - e.start_s) / bin_width_s);
            b = std::clamp(b, 0, num_bins - 1);
            ++bins[static_cast<size_t>(b)].count;
        }
    }
    return bins;
}

void write_npmi_csv(const std::string& path, const std::vector<NpmiEntry>& entries,
                    const Taxonomy& taxonomy) {
    std::ofstream os(path);
    if (!os) throw StatsError("cannot write " + path);
    os << "class_a,class_b,count,npmi\n";
    for (const NpmiEntry& e : entries)
        os << taxonomy.name(e.class_a) << "," << taxonomy.name(e.class_b) << "," << e.count << ","
           << e.npmi << "\n";
}

void write_repetition_csv(const std::string& path, const std::vector<RepetitionEntry>& entries,
                          const Taxonomy& taxonomy) {
    std::ofstream os(path);
    if (!os) throw StatsError("cannot write " + path);
    os << "class,pair_count,event_count,rate\n";
    for (const RepetitionEntry& e : entries)
        os << taxonomy.name(e.label_id) << "," << e.pair_count << "," << e.event_count << "," << e.rate
           << "\n";
}

void write_histogram_csv(const std::string& path, const std::vector<HistogramBin>& bins) {
    std::ofstream os(path);
    if (!os) throw StatsError("cannot write " + path);
    os << "bin_start_s,bin_end_s,count\n";
    for (const HistogramBin& b : bins)
        os << b.bin_start_s << "," << b.bin_end_s << "," << b.count << "\n";
}

void write_overlap_csv(const std::string& path, const DatasetIndex& index) {
    std::ofstream os(path);
    if (!os) throw StatsError("cannot write " + path);
    os << "video_id,overlap_rate\n";
    for (const AnnotatedVideo& v : index.videos) {
        if (v.events.empty()) continue;
        os << v.id << "," << overlap_rate(v) << "\n";
    }
}

}  // namespace davel::data
