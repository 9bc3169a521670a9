#pragma once

#include <string>
#include <vector>

#include "davel/annotations.hpp"

namespace davel::data {

struct StatsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fraction of a video's event-covered time that is covered by two or more
// events simultaneously. Requires at least one event.
double overlap_rate(const AnnotatedVideo& video);

enum class PairMode { kSimultaneous, kConsecutive };

struct NpmiEntry {
    int class_a = 0;
    int class_b = 0;
    int count = 0;  // videos where the pair relation holds
    double npmi = 0;
};

// NPMI over per-video pair presence for distinct class pairs. Simultaneous
// pairs are unordered (a < b) and need a positive temporal intersection;
// consecutive pairs are ordered and need b to start within gap_s after a
// ends. Each pair counts at most once per video. Pairs with zero joint count
// are omitted. Output sorted by npmi descending, ties by (a, b).
std::vector<NpmiEntry> npmi_pairs(const DatasetIndex& index, PairMode mode, double gap_s = 5.0);

struct RepetitionEntry {
    int label_id = 0;
    int pair_count = 0;   // same-class consecutive event pairs across the corpus
    int event_count = 0;  // events of the class across the corpus
    double rate = 0;      // pair_count / event_count
};

// Same-category consecutive repetition, reported separately from NPMI.
std::vector<RepetitionEntry> repetition_rates(const DatasetIndex& index, double gap_s = 5.0);

struct HistogramBin {
    double bin_start_s = 0;
    double bin_end_s = 0;
    int count = 0;
};

std::vector<HistogramBin> duration_histogram(const DatasetIndex& index, double bin_width_s,
                                             int num_bins);

// CSV emitters (header + rows).
void write_npmi_csv(const std::string& path, const std::vector<NpmiEntry>& entries,
                    const Taxonomy& taxonomy);
void write_repetition_csv(const std::string& path, const std::vector<RepetitionEntry>& entries,
                          const Taxonomy& taxonomy);
void write_histogram_csv(const std::string& path, const std::vector<HistogramBin>& bins);
void write_overlap_csv(const std::string& path, const DatasetIndex& index);

}  // namespace davel::data
