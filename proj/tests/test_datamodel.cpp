#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "davel/annotations.hpp"
#include "davel/features.hpp"
#include "davel/split.hpp"
#include "davel/stats.hpp"
#include "davel/synthetic.hpp"

using namespace davel;
using namespace davel::data;

namespace {

Taxonomy make_taxonomy(int c) {
    Taxonomy t;
    for (int i = 0; i < c; ++i) t.names.push_back("class_" + std::to_string(i));
    return t;
}

AnnotatedVideo video(const std::string& id, double dur, std::vector<EventInstance> events) {
    AnnotatedVideo v;
    v.id = id;
    v.duration_s = dur;
    v.events = std::move(events);
    return v;
}

std::filesystem::path tmp_dir() {
    auto p = std::filesystem::temp_directory_path() / "davel_datamodel_test";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("load_and_validate accepts a well-formed file") {
    const auto path = tmp_dir() / "ok.json";
    {
        std::ofstream os(path);
        os << R"({"version":1,
              "taxonomy":[{"id":0,"name":"dog"},{"id":1,"name":"rain"}],
              "videos":[
                {"id":"a","duration_s":10.0,"subset":"train",
                 "events":[{"label_id":0,"start_s":1.0,"end_s":2.0}]},
                {"id":"b","duration_s":5.0,"subset":"val","events":[]}
              ]})";
    }
    DatasetIndex idx = load_and_validate(path.string());
    CHECK(idx.videos.size() == 2);
    CHECK(idx.taxonomy.num_classes() == 2);
    CHECK(idx.find("a") != nullptr);
    CHECK(idx.find("missing") == nullptr);
}

TEST_CASE("validation errors name the offending video") {
    Taxonomy tax = make_taxonomy(1);

    SUBCASE("event past duration") {
        try {
            build_index(tax, {video("vid_x", 5.0, {{1.0, 6.0, 0}})});
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("vid_x") != std::string::npos);
        }
    }
    SUBCASE("start >= end") {
        CHECK_THROWS_AS(build_index(tax, {video("v", 5.0, {{2.0, 2.0, 0}})}), ValidationError);
    }
    SUBCASE("duplicate id") {
        CHECK_THROWS_AS(build_index(tax, {video("v", 5.0, {}), video("v", 4.0, {})}),
                        ValidationError);
    }
    SUBCASE("label outside taxonomy") {
        CHECK_THROWS_AS(build_index(tax, {video("v", 5.0, {{0.0, 1.0, 3}})}), ValidationError);
    }
}

TEST_CASE("stratified split: one class, five videos, 3:1:1") {
    std::vector<AnnotatedVideo> vs;
    for (int i = 0; i < 5; ++i)
        vs.push_back(video("v" + std::to_string(i), 10.0, {{0.0, 1.0, 0}}));
    DatasetIndex idx = build_index(make_taxonomy(1), std::move(vs));
    stratified_split(idx, {3, 1, 1}, 7);
    std::map<std::string, int> counts;
    for (const auto& v : idx.videos) ++counts[v.subset];
    CHECK(counts["train"] == 3);
    CHECK(counts["val"] == 1);
    CHECK(counts["test"] == 1);
}

TEST_CASE("stratified split: two disjoint classes of ten videos each split 6/2/2") {
    std::vector<AnnotatedVideo> vs;
    for (int i = 0; i < 10; ++i) vs.push_back(video("a" + std::to_string(i), 10.0, {{0.0, 1.0, 0}}));
    for (int i = 0; i < 10; ++i) vs.push_back(video("b" + std::to_string(i), 10.0, {{0.0, 1.0, 1}}));
    DatasetIndex idx = build_index(make_taxonomy(2), std::move(vs));
    stratified_split(idx, {3, 1, 1}, 11);
    std::map<std::pair<int, std::string>, int> counts;
    for (const auto& v : idx.videos) ++counts[{v.events[0].label_id, v.subset}];
    for (int c = 0; c < 2; ++c) {
        CHECK(counts[{c, "train"}] == 6);
        CHECK(counts[{c, "val"}] == 2);
        CHECK(counts[{c, "test"}] == 2);
    }
}

TEST_CASE("stratified split: identical multi-labels reduce to a plain ratio split") {
    std::vector<AnnotatedVideo> vs;
    for (int i = 0; i < 15; ++i)
        vs.push_back(video("v" + std::to_string(i), 10.0, {{0.0, 1.0, 0}, {2.0, 3.0, 1}}));
    DatasetIndex idx = build_index(make_taxonomy(2), std::move(vs));
    stratified_split(idx, {3, 1, 1}, 3);
    std::map<std::string, int> counts;
    for (const auto& v : idx.videos) ++counts[v.subset];
    CHECK(counts["train"] == 9);
    CHECK(counts["val"] == 3);
    CHECK(counts["test"] == 3);
}

TEST_CASE("stratified split partitions the corpus and is seed-deterministic") {
    SeededRng rng(5);
    std::vector<AnnotatedVideo> vs;
    for (int i = 0; i < 60; ++i) {
        std::vector<EventInstance> evs;
        const int k = 1 + static_cast<int>(rng.uniform_int(3));
        for (int e = 0; e < k; ++e)
            evs.push_back({0.0, 1.0, static_cast<int>(rng.uniform_int(4))});
        vs.push_back(video("v" + std::to_string(i), 10.0, std::move(evs)));
    }
    // a few event-less videos must be assigned too
    vs.push_back(video("empty0", 3.0, {}));
    vs.push_back(video("empty1", 3.0, {}));
    DatasetIndex idx = build_index(make_taxonomy(4), std::move(vs));
    stratified_split(idx, {3, 1, 1}, 99);
    for (const auto& v : idx.videos) {
        CHECK((v.subset == "train" || v.subset == "val" || v.subset == "test"));
    }
    std::vector<std::string> first;
    for (const auto& v : idx.videos) first.push_back(v.subset);
    stratified_split(idx, {3, 1, 1}, 99);
    std::vector<std::string> second;
    for (const auto& v : idx.videos) second.push_back(v.subset);
    CHECK(first == second);
}

TEST_CASE("stratified split rejects a class absent from the corpus") {
    DatasetIndex idx = build_index(make_taxonomy(2), {video("v", 5.0, {{0.0, 1.0, 0}})});
    CHECK_THROWS_AS(stratified_split(idx, {3, 1, 1}, 1), StratificationError);
}

TEST_CASE("overlap rate hand cases") {
    CHECK(overlap_rate(video("v", 10, {{0, 4, 0}})) == doctest::Approx(0.0));
    CHECK(overlap_rate(video("v", 10, {{0, 4, 0}, {2, 6, 1}})) == doctest::Approx(1.0 / 3.0));
    CHECK(overlap_rate(video("v", 10, {{0, 4, 0}, {0, 4, 1}})) == doctest::Approx(1.0));
    CHECK_THROWS_AS(overlap_rate(video("v", 10, {})), StatsError);
}

TEST_CASE("overlap rate is invariant under reordering and time translation") {
    SeededRng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EventInstance> evs;
        const int k = 1 + static_cast<int>(rng.uniform_int(6));
        for (int e = 0; e < k; ++e) {
            const double s = rng.uniform(0.0, 50.0);
            evs.push_back({s, s + rng.uniform(0.1, 20.0), 0});
        }
        AnnotatedVideo base = video("v", 1000, evs);
        const double r0 = overlap_rate(base);

        rng.shuffle(evs.begin(), evs.end());
        CHECK(overlap_rate(video("v", 1000, evs)) == doctest::Approx(r0).epsilon(1e-12));

        std::vector<EventInstance> shifted = evs;
        for (auto& e : shifted) {
            e.start_s += 7.5;
            e.end_s += 7.5;
        }
        CHECK(overlap_rate(video("v", 1000, shifted)) == doctest::Approx(r0).epsilon(1e-9));
    }
}

TEST_CASE("npmi: perfectly co-occurring pair scores 1.0") {
    // a and b overlap in every video containing either; c is background noise
    std::vector<AnnotatedVideo> vs;
    for (int i = 0; i < 4; ++i)
        vs.push_back(video("p" + std::to_string(i), 10.0, {{0, 4, 0}, {2, 6, 1}}));
    for (int i = 0; i < 6; ++i)
        vs.push_back(video("n" + std::to_string(i), 10.0, {{0, 3, 2}}));
    DatasetIndex idx = build_index(make_taxonomy(3), std::move(vs));
    auto entries = npmi_pairs(idx, PairMode::kSimultaneous);
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].class_a == 0);
    CHECK(entries[0].class_b == 1);
    CHECK(entries[0].npmi == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("npmi: classes never in one video produce no pair") {
    std::vector<AnnotatedVideo> vs;
    vs.push_back(video("a", 10.0, {{0, 4, 0}}));
    vs.push_back(video("b", 10.0, {{0, 4, 1}}));
    DatasetIndex idx = build_index(make_taxonomy(2), std::move(vs));
    CHECK(npmi_pairs(idx, PairMode::kSimultaneous).empty());
    CHECK(npmi_pairs(idx, PairMode::kConsecutive).empty());
}

TEST_CASE("npmi values stay in (-1, 1] and consecutive respects order and gap") {
    std::vector<AnnotatedVideo> vs;
    // 0 then 1 with a 1 s gap; also unrelated singles to vary marginals
    vs.push_back(video("v0", 20.0, {{0, 2, 0}, {3, 5, 1}}));
    vs.push_back(video("v1", 20.0, {{0, 2, 0}, {3, 5, 1}}));
    vs.push_back(video("v2", 20.0, {{0, 2, 0}}));
    vs.push_back(video("v3", 20.0, {{0, 2, 1}}));
    DatasetIndex idx = build_index(make_taxonomy(2), std::move(vs));

    auto entries = npmi_pairs(idx, PairMode::kConsecutive, 5.0);
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].class_a == 0);
    CHECK(entries[0].class_b == 1);
    CHECK(entries[0].npmi > -1.0);
    CHECK(entries[0].npmi <= 1.0);

    // too small a gap: pair disappears
    CHECK(npmi_pairs(idx, PairMode::kConsecutive, 0.5).empty());
}

TEST_CASE("repetition rate counts same-class consecutive pairs") {
    std::vector<AnnotatedVideo> vs;
    vs.push_back(video("v", 30.0, {{0, 2, 0}, {3, 5, 0}, {20, 22, 1}}));
    DatasetIndex idx = build_index(make_taxonomy(2), std::move(vs));
    auto reps = repetition_rates(idx, 5.0);
    REQUIRE(reps.size() == 2);
    CHECK(reps[0].pair_count == 1);
    CHECK(reps[0].event_count == 2);
    CHECK(reps[0].rate == doctest::Approx(0.5));
    CHECK(reps[1].pair_count == 0);
}

TEST_CASE("feature file round trip and pad/crop") {
    const auto dir = tmp_dir();
    std::filesystem::create_directories(dir / "audio");
    std::filesystem::create_directories(dir / "visual");

    FeatureFile f;
    f.hop_s = 0.32f;
    f.values = num::Tensor<float>({100, 4});
    SeededRng rng(2);
    for (float& v : f.values.data) v = static_cast<float>(rng.normal());
    write_feature_file(feature_path(dir.string(), "audio", "vid"), f);
    write_feature_file(feature_path(dir.string(), "visual", "vid"), f);

    FeatureStreams s = load_features("vid", dir.string());
    CHECK(s.valid_len == 100);
    CHECK(s.audio.data == f.values.data);

    FeatureStreams padded = pad_and_mask(s, 224);
    CHECK(padded.audio.dim(0) == 224);
    CHECK(static_cast<int>(padded.mask.size()) == 224);
    CHECK(num::mask_valid_count(padded.mask) == 100);
    CHECK(padded.mask[99] == 1);
    CHECK(padded.mask[100] == 0);
    CHECK(padded.audio.at2(150, 2) == 0.0f);

    FeatureStreams identity = pad_and_mask(s, 100);
    CHECK(identity.valid_len == 100);
    CHECK(identity.audio.data == s.audio.data);

    FeatureStreams cropped = pad_and_mask(padded, 64);
    CHECK(cropped.valid_len == 64);
    CHECK(num::mask_valid_count(cropped.mask) == 64);
    CHECK(cropped.audio.at2(10, 1) == padded.audio.at2(10, 1));

    // length mismatch between modalities
    FeatureFile shorter = f;
    shorter.values = num::Tensor<float>({50, 4});
    write_feature_file(feature_path(dir.string(), "visual", "vid"), shorter);
    CHECK_THROWS_AS(load_features("vid", dir.string()), davel::num::FormatError);

    // corrupt header
    {
        std::ofstream os(feature_path(dir.string(), "audio", "vid"), std::ios::binary);
        os << "junk";
    }
    CHECK_THROWS_AS(read_feature_file(feature_path(dir.string(), "audio", "vid")),
                    davel::num::FormatError);
}

TEST_CASE("synthetic: fixed seed twice gives identical corpora") {
    SyntheticSpec spec;
    spec.train_videos = 6;
    spec.val_videos = 2;
    spec.test_videos = 2;
    SyntheticCorpus a = generate_synthetic(spec);
    SyntheticCorpus b = generate_synthetic(spec);
    REQUIRE(a.index.videos.size() == b.index.videos.size());
    for (size_t i = 0; i < a.index.videos.size(); ++i) {
        CHECK(a.index.videos[i].id == b.index.videos[i].id);
        CHECK(a.index.videos[i].events.size() == b.index.videos[i].events.size());
    }
    for (const auto& [id, f] : a.audio) CHECK(f.values.data == b.audio.at(id).values.data);
    for (const auto& [id, f] : a.visual) CHECK(f.values.data == b.visual.at(id).values.data);
}

TEST_CASE("synthetic: zero overlap probability gives overlap-free videos") {
    SyntheticSpec spec;
    spec.train_videos = 20;
    spec.val_videos = 0;
    spec.test_videos = 0;
    spec.overlap_prob = 0.0;
    spec.seed = 5;
    SyntheticCorpus c = generate_synthetic(spec);
    for (const auto& v : c.index.videos) {
        if (v.events.empty()) continue;
        CHECK(overlap_rate(v) == doctest::Approx(0.0));
    }
}

TEST_CASE("synthetic: no distractors, no noise leaves exact signatures") {
    SyntheticSpec spec;
    spec.train_videos = 10;
    spec.val_videos = 0;
    spec.test_videos = 0;
    spec.overlap_prob = 0.0;
    spec.distractor_rate = 0.0;
    spec.noise_sigma = 0.0;
    spec.seed = 9;
    SyntheticCorpus c = generate_synthetic(spec);
    bool saw_event = false;
    for (const auto& v : c.index.videos) {
        const FeatureFile& audio = c.audio.at(v.id);
        for (const auto& e : v.events) {
            saw_event = true;
            const auto sig = class_signature(e.label_id, spec.audio_dim, "audio",
                                             spec.signature_amplitude);
            for (int64_t i = 0; i < audio.values.dim(0); ++i) {
                const double center = (i + 0.5) * spec.hop_s;
                if (center < e.start_s || center > e.end_s) continue;
                for (int64_t d = 0; d < spec.audio_dim; ++d)
                    CHECK(audio.values.at2(i, d) == sig.data[static_cast<size_t>(d)]);
            }
        }
    }
    CHECK(saw_event);
}

TEST_CASE("synthetic: a forced co-occurrence pair ranks first in simultaneous npmi") {
    SyntheticSpec spec;
    spec.classes = 6;
    spec.train_videos = 120;
    spec.val_videos = 0;
    spec.test_videos = 0;
    spec.overlap_prob = 0.5;
    spec.mean_events = 3.0;
    spec.seed = 31;
    spec.cooccurrence.assign(6, std::vector<double>(6, 0.02));
    spec.cooccurrence[0][1] = spec.cooccurrence[1][0] = 1.0;
    SyntheticCorpus c = generate_synthetic(spec);
    auto entries = npmi_pairs(c.index, PairMode::kSimultaneous);
    REQUIRE(!entries.empty());
    CHECK(entries[0].class_a == 0);
    CHECK(entries[0].class_b == 1);
}

TEST_CASE("synthetic: infeasible spec is rejected") {
    SyntheticSpec spec;
    spec.mean_events = 100.0;
    spec.event_len_min_s = 5.0;
    CHECK_THROWS_AS(generate_synthetic(spec), GenerationError);
}

TEST_CASE("synthetic corpus writes and reloads") {
    SyntheticSpec spec;
    spec.train_videos = 3;
    spec.val_videos = 1;
    spec.test_videos = 1;
    SyntheticCorpus c = generate_synthetic(spec);
    const auto dir = tmp_dir() / "corpus";
    std::filesystem::remove_all(dir);
    write_corpus(c, dir.string());
    DatasetIndex idx = load_and_validate((dir / "annotations.json").string());
    CHECK(idx.videos.size() == c.index.videos.size());
    FeatureStreams s = load_features(idx.videos[0].id, (dir / "features").string());
    CHECK(s.audio.data == c.audio.at(idx.videos[0].id).values.data);
}
