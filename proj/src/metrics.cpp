#include "davel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "davel/decode.hpp"

namespace davel::eval {

double tiou(double start_a, double end_a, double start_b, double end_b) {
    const double len_a = end_a - start_a;
    const double len_b = end_b - start_b;
    if (len_a <= 0 || len_b <= 0) return 0.0;
    const double inter = std::min(end_a, end_b) - std::max(start_a, start_b);
    if (inter <= 0) return 0.0;
    const double uni = len_a + len_b - inter;
    return inter / uni;
}

std::optional<double> average_precision(std::vector<ScoredInterval> predictions,
                                        const std::map<std::string, std::vector<Interval>>& gt,
                                        double threshold) {
    int num_gt = 0;
    for (const auto& [vid, ivs] : gt) num_gt += static_cast<int>(ivs.size());
    if (num_gt == 0) return std::nullopt;

    std::vector<size_t> order(predictions.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (predictions[a].score != predictions[b].score)
            return predictions[a].score > predictions[b].score;
        if (predictions[a].start_s != predictions[b].start_s)
            return predictions[a].start_s < predictions[b].start_s;
        return a < b;
    });

    std::map<std::string, std::vector<char>> matched;
    for (const auto& [vid, ivs] : gt) matched[vid].assign(ivs.size(), 0);

    std::vector<char> is_tp(order.size(), 0);
    for (size_t k = 0; k < order.size(); ++k) {
        const ScoredInterval& p = predictions[order[k]];
        auto git = gt.find(p.video_id);
        if (git == gt.end()) continue;
        const auto& ivs = git->second;
        auto& used = matched[p.video_id];
        int best = -1;
        double best_o = 0;
        for (size_t g = 0; g < ivs.size(); ++g) {
            if (used[g]) continue;
            const double o = tiou(p.start_s, p.end_s, ivs[g].start_s, ivs[g].end_s);
            if (o > best_o) {
                best_o = o;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0 && best_o >= threshold) {
            used[static_cast<size_t>(best)] = 1;
            is_tp[k] = 1;
        }
    }

    // all-point interpolation via the precision envelope
    const size_t n = order.size();
    std::vector<double> precision(n), recall(n);
    int tp = 0;
    for (size_t k = 0; k < n; ++k) {
        tp += is_tp[k];
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / num_gt;
    }
    double ap = 0;
    double env = 0;
    for (size_t k = n; k-- > 0;) {
        env = std::max(env, precision[k]);
        const double prev_recall = k == 0 ? 0.0 : recall[k - 1];
        if (recall[k] > prev_recall) ap += (recall[k] - prev_recall) * env;
    }
    return ap;
}

APReport mean_ap(const std::map<std::string, std::vector<infer::Candidate>>& predictions,
                 const data::DatasetIndex& gt, const std::string& subset,
                 const std::vector<double>& thresholds, bool strict) {
    const int C = gt.taxonomy.num_classes();
    std::set<std::string> subset_ids;
    for (const data::AnnotatedVideo* v : gt.subset(subset)) subset_ids.insert(v->id);

    APReport report;
    report.thresholds = thresholds;
    std::sort(report.thresholds.begin(), report.thresholds.end());
    report.evaluated_videos = static_cast<int>(subset_ids.size());

    // ground truth per class
    std::vector<std::map<std::string, std::vector<Interval>>> gt_by_class(static_cast<size_t>(C));
    for (const data::AnnotatedVideo* v : gt.subset(subset))
        for (const data::EventInstance& e : v->events)
            gt_by_class[static_cast<size_t>(e.label_id)][v->id].push_back({e.start_s, e.end_s});

    // predictions per class, subset-filtered
    std::vector<std::vector<ScoredInterval>> pred_by_class(static_cast<size_t>(C));
    for (const auto& [vid, cands] : predictions) {
        if (!subset_ids.count(vid)) {
            const bool known = gt.find(vid) != nullptr;
            std::ostringstream msg;
            msg << "predictions for " << (known ? "out-of-subset" : "unknown") << " video '" << vid
                << "'";
            if (strict) throw EvalError(msg.str());
            report.warnings.push_back(msg.str() + " skipped");
            continue;
        }
        for (const infer::Candidate& c : cands) {
            if (c.label_id < 0 || c.label_id >= C)
                throw EvalError("prediction label_id " + std::to_string(c.label_id) +
                                " not in taxonomy (video " + vid + ")");
            pred_by_class[static_cast<size_t>(c.label_id)].push_back(
                {vid, c.start_s, c.end_s, c.score});
        }
    }

    for (double thr : report.thresholds) {
        double sum = 0;
        int counted = 0;
        for (int c = 0; c < C; ++c) {
            auto ap = average_precision(pred_by_class[static_cast<size_t>(c)],
                                        gt_by_class[static_cast<size_t>(c)], thr);
            if (!ap.has_value()) continue;
            int gt_count = 0;
            for (const auto& [vid, ivs] : gt_by_class[static_cast<size_t>(c)])
                gt_count += static_cast<int>(ivs.size());
            report.per_class.push_back({c, thr, *ap, gt_count});
            sum += *ap;
            ++counted;
        }
        report.map_at[thr] = counted ? sum / counted : 0.0;
    }
    double total = 0;
    for (const auto& [thr, m] : report.map_at) total += m;
    report.avg_map = report.map_at.empty() ? 0.0 : total / static_cast<double>(report.map_at.size());
    return report;
}

namespace {

std::string threshold_key(double thr) {
    std::ostringstream os;
    os << thr;
    return os.str();
}

}  // namespace

void write_report_json(const std::string& path, const APReport& report,
                       const data::Taxonomy& taxonomy) {
    nlohmann::ordered_json j;
    j["per_class"] = nlohmann::ordered_json::array();
    for (const auto& e : report.per_class)
        j["per_class"].push_back({{"class", taxonomy.name(e.label_id)},
                                  {"label_id", e.label_id},
                                  {"threshold", e.threshold},
                                  {"ap", e.ap},
                                  {"gt_count", e.gt_count}});
    nlohmann::ordered_json maps = nlohmann::ordered_json::object();
    for (const auto& [thr, m] : report.map_at) maps[threshold_key(thr)] = m;
    j["map"] = std::move(maps);
    j["avg_map_0.1_0.9"] = report.avg_map;
    j["evaluated_videos"] = report.evaluated_videos;
    if (!report.warnings.empty()) j["warnings"] = report.warnings;
    std::ofstream os(path);
    if (!os) throw EvalError("cannot write report: " + path);
    os << j.dump(2) << "\n";
}

void write_report_csv(const std::string& path, const APReport& report,
                      const data::Taxonomy& taxonomy) {
    std::ofstream os(path);
    if (!os) throw EvalError("cannot write report: " + path);
    os << "class,threshold,ap,gt_count\n";
    for (const auto& e : report.per_class)
        os << taxonomy.name(e.label_id) << "," << e.threshold << "," << e.ap << "," << e.gt_count
           << "\n";
    os << "\nthreshold,map\n";
    for (const auto& [thr, m] : report.map_at) os << thr << "," << m << "\n";
    os << "\navg_map_0.1_0.9," << report.avg_map << "\n";
}

}  // namespace davel::eval
