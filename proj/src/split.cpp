#include "davel/split.hpp"

#include <algorithm>
#include <set>

namespace davel::data {

namespace {
const char* kSubsetNames[3] = {"train", "val", "test"};
}

// Sechidis-style iterative stratification: repeatedly take the label with the
// fewest remaining examples and hand its examples to the subset with the
// largest remaining per-label demand; ties fall back to total demand, then to
// a seeded draw.
void stratified_split(DatasetIndex& index, const std::array<double, 3>& ratios, uint64_t seed) {
    const int C = index.taxonomy.num_classes();
    const size_t n = index.videos.size();
    double total_ratio = ratios[0] + ratios[1] + ratios[2];
    if (!(total_ratio > 0)) throw StratificationError("ratios must sum to a positive value");

    std::vector<std::set<int>> labels(n);
    std::vector<int> class_video_count(static_cast<size_t>(C), 0);
    for (size_t i = 0; i < n; ++i) {
        for (const EventInstance& e : index.videos[i].events) labels[i].insert(e.label_id);
        for (int c : labels[i]) ++class_video_count[static_cast<size_t>(c)];
    }
    for (int c = 0; c < C; ++c)
        if (class_video_count[static_cast<size_t>(c)] == 0)
            throw StratificationError("class " + index.taxonomy.name(c) +
                                      " absent from corpus; cannot stratify");

    // Desired counts, fractional.
    std::array<double, 3> want_total;
    std::vector<std::array<double, 3>> want_class(static_cast<size_t>(C));
    for (int j = 0; j < 3; ++j) want_total[static_cast<size_t>(j)] = static_cast<double>(n) * ratios[static_cast<size_t>(j)] / total_ratio;
    for (int c = 0; c < C; ++c)
        for (int j = 0; j < 3; ++j)
            want_class[static_cast<size_t>(c)][static_cast<size_t>(j)] =
                class_video_count[static_cast<size_t>(c)] * ratios[static_cast<size_t>(j)] / total_ratio;

    SeededRng rng(seed);
    std::vector<int> assignment(n, -1);
    std::vector<int> remaining_per_class(class_video_count);
    size_t unassigned_labeled = 0;
    for (size_t i = 0; i < n; ++i) unassigned_labeled += !labels[i].empty();

    while (unassigned_labeled > 0) {
        // label with fewest remaining unassigned examples
        int pick = -1;
        for (int c = 0; c < C; ++c) {
            if (remaining_per_class[static_cast<size_t>(c)] == 0) continue;
            if (pick < 0 || remaining_per_class[static_cast<size_t>(c)] < remaining_per_class[static_cast<size_t>(pick)]) pick = c;
        }
        if (pick < 0) break;
        for (size_t i = 0; i < n && remaining_per_class[static_cast<size_t>(pick)] > 0; ++i) {
            if (assignment[i] >= 0 || !labels[i].count(pick)) continue;
            // subset with max demand for this label
            std::vector<int> best;
            double best_val = -1e18;
            for (int j = 0; j < 3; ++j) {
                const double v = want_class[static_cast<size_t>(pick)][static_cast<size_t>(j)];
                if (v > best_val + 1e-12) {
                    best_val = v;
                    best = {j};
                } else if (v > best_val - 1e-12) {
                    best.push_back(j);
                }
            }
            if (best.size() > 1) {
                std::vector<int> best2;
                double bt = -1e18;
                for (int j : best) {
                    const double v = want_total[static_cast<size_t>(j)];
                    if (v > bt + 1e-12) {
                        bt = v;
                        best2 = {j};
                    } else if (v > bt - 1e-12) {
                        best2.push_back(j);
                    }
                }
                best = best2;
            }
            const int subset = best[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(best.size())))];
            assignment[i] = subset;
            --unassigned_labeled;
            want_total[static_cast<size_t>(subset)] -= 1.0;
            for (int c : labels[i]) {
                --remaining_per_class[static_cast<size_t>(c)];
                want_class[static_cast<size_t>(c)][static_cast<size_t>(subset)] -= 1.0;
            }
        }
    }

    // videos with no events: fill by remaining total demand
    for (size_t i = 0; i < n; ++i) {
        if (assignment[i] >= 0) continue;
        int subset = 0;
        for (int j = 1; j < 3; ++j)
            if (want_total[static_cast<size_t>(j)] > want_total[static_cast<size_t>(subset)] + 1e-12) subset = j;
        assignment[i] = subset;
        want_total[static_cast<size_t>(subset)] -= 1.0;
    }

    for (size_t i = 0; i < n; ++i) index.videos[i].subset = kSubsetNames[assignment[i]];
}

}  // namespace davel::data
