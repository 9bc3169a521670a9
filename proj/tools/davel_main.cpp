#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "davel/annotations.hpp"
#include "davel/checkpoint.hpp"
#include "davel/decode.hpp"
#include "davel/grad_check.hpp"
#include "davel/losses.hpp"
#include "davel/metrics.hpp"
#include "davel/model.hpp"
#include "davel/run_config.hpp"
#include "davel/split.hpp"
#include "davel/stats.hpp"
#include "davel/synthetic.hpp"
#include "davel/trainer.hpp"

namespace fs = std::filesystem;
using namespace davel;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    std::string out;
    bool strict = false;
    bool force = false;
};

cli::RunConfig resolve_config(const GlobalOpts& g) {
    cli::RunConfig cfg = cli::load_run_config(g.config_path, g.overrides);
    if (g.seed_set) cfg.train.seed = g.seed;
    if (!g.out.empty()) cfg.paths.out = g.out;
    return cfg;
}

void require_fresh_dir(const std::string& dir, bool force) {
    if (fs::exists(fs::path(dir) / "config.json") && !force)
        throw model::ConfigError("run directory " + dir +
                                 " already holds a run; pass --force to overwrite");
    fs::create_directories(dir);
}

// index-deterministic parallel map over videos
template <typename Fn>
void parallel_for(int threads, size_t n, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min<int>(threads, static_cast<int>(n));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& t : pool) t.join();
}

int cmd_generate(const GlobalOpts& g, const std::string& spec_path) {
    data::SyntheticSpec spec;
    if (!spec_path.empty()) spec = data::synthetic_spec_from_json_file(spec_path);
    if (g.seed_set) spec.seed = g.seed;
    if (g.out.empty()) throw model::ConfigError("generate: --out directory required");
    spec.validate();
    data::SyntheticCorpus corpus = data::generate_synthetic(spec);
    fs::create_directories(g.out);
    data::write_corpus(corpus, g.out);
    data::write_synthetic_spec(spec, (fs::path(g.out) / "synthetic_spec.json").string());
    std::cout << "generated " << corpus.index.videos.size() << " videos ("
              << corpus.index.taxonomy.num_classes() << " classes) into " << g.out << "\n";
    return 0;
}

int cmd_split(const GlobalOpts& g, const std::string& annotations, const std::string& ratios_str) {
    data::DatasetIndex index = data::load_and_validate(annotations);
    std::array<double, 3> ratios = {3, 1, 1};
    if (!ratios_str.empty()) {
        if (std::sscanf(ratios_str.c_str(), "%lf,%lf,%lf", &ratios[0], &ratios[1], &ratios[2]) != 3)
            throw model::ConfigError("split: --ratios expects three comma-separated numbers");
    }
    data::stratified_split(index, ratios, g.seed_set ? g.seed : 1);
    const std::string out = g.out.empty() ? annotations : g.out;
    data::save_annotations(out, index);
    int train = 0, val = 0, test = 0;
    for (const auto& v : index.videos) {
        train += v.subset == "train";
        val += v.subset == "val";
        test += v.subset == "test";
    }
    std::cout << "split " << index.videos.size() << " videos into " << train << "/" << val << "/"
              << test << " -> " << out << "\n";
    return 0;
}

int cmd_stats(const GlobalOpts& g, const std::string& annotations, double gap_s) {
    data::DatasetIndex index = data::load_and_validate(annotations);
    if (g.out.empty()) throw model::ConfigError("stats: --out directory required");
    fs::create_directories(g.out);
    const fs::path out(g.out);
    data::write_npmi_csv((out / "npmi_simultaneous.csv").string(),
                         data::npmi_pairs(index, data::PairMode::kSimultaneous), index.taxonomy);
    data::write_npmi_csv((out / "npmi_consecutive.csv").string(),
                         data::npmi_pairs(index, data::PairMode::kConsecutive, gap_s),
                         index.taxonomy);
    data::write_repetition_csv((out / "repetition.csv").string(),
                               data::repetition_rates(index, gap_s), index.taxonomy);
    data::write_histogram_csv((out / "event_durations.csv").string(),
                              data::duration_histogram(index, 2.0, 32));
    data::write_overlap_csv((out / "overlap_rates.csv").string(), index);
    std::cout << "stats written to " << g.out << "\n";
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& annotations, const std::string& features) {
    cli::RunConfig cfg = resolve_config(g);
    if (!annotations.empty()) cfg.paths.annotations = annotations;
    if (!features.empty()) cfg.paths.features = features;
    if (cfg.paths.annotations.empty()) throw model::ConfigError("train: annotations path required");
    if (cfg.paths.features.empty()) throw model::ConfigError("train: features path required");
    if (cfg.paths.out.empty()) throw model::ConfigError("train: --out run directory required");

    data::DatasetIndex index = data::load_and_validate(cfg.paths.annotations);
    if (cfg.model.classes == 0) cfg.model.classes = index.taxonomy.num_classes();
    if (cfg.model.classes != index.taxonomy.num_classes())
        throw model::ConfigError("train: configured classes disagree with the taxonomy");
    cfg.model.validate();

    // feature dims from the first train video
    data::DirFeatureSource source(cfg.paths.features);
    for (const auto& v : index.videos) {
        if (v.subset != "train") continue;
        const data::FeatureStreams probe = source.load(v.id);
        cfg.model.audio_dim = static_cast<int>(probe.audio.dim(1));
        cfg.model.visual_dim = static_cast<int>(probe.visual.dim(1));
        break;
    }

    require_fresh_dir(cfg.paths.out, g.force);
    const fs::path out(cfg.paths.out);
    cli::echo_run_config(cfg, (out / "config.json").string());

    train::FitResult result = train::fit(index, source, cfg.model, cfg.train, cfg.decode,
                                         (out / "metrics.jsonl").string());
    num::save_checkpoint((out / "checkpoint.davt").string(), result.params);
    model::save_model_config(cfg.model, (out / "checkpoint.json").string());
    std::cout << "trained " << cfg.train.epochs << " epochs; best val avg mAP "
              << result.best_val_map << " at epoch " << result.best_epoch << "; run dir "
              << cfg.paths.out << "\n";
    return 0;
}

int cmd_infer(const GlobalOpts& g, const std::string& checkpoint, const std::string& annotations,
              const std::string& features, const std::string& subset) {
    cli::RunConfig cfg = resolve_config(g);
    if (!annotations.empty()) cfg.paths.annotations = annotations;
    if (!features.empty()) cfg.paths.features = features;
    if (cfg.paths.annotations.empty()) throw model::ConfigError("infer: annotations path required");
    if (cfg.paths.features.empty()) throw model::ConfigError("infer: features path required");
    if (g.out.empty()) throw model::ConfigError("infer: --out predictions path required");

    num::ParamStore<float> params = num::load_checkpoint(checkpoint);
    model::ModelConfig mcfg =
        model::load_model_config(fs::path(checkpoint).replace_extension(".json").string());
    data::DatasetIndex index = data::load_and_validate(cfg.paths.annotations);
    data::DirFeatureSource source(cfg.paths.features);

    std::vector<const data::AnnotatedVideo*> videos = index.subset(subset);
    std::vector<std::vector<infer::Candidate>> results(videos.size());
    parallel_for(g.threads, videos.size(), [&](size_t i) {
        const data::AnnotatedVideo* v = videos[i];
        data::FeatureStreams padded = data::pad_and_mask(source.load(v->id), mcfg.t_max);
        padded.video_id = v->id;
        results[i] = infer::localize_video(padded, mcfg, params, v->duration_s, cfg.decode);
    });
    std::map<std::string, std::vector<infer::Candidate>> by_video;
    for (size_t i = 0; i < videos.size(); ++i) by_video[videos[i]->id] = std::move(results[i]);

    if (fs::path(g.out).has_parent_path()) fs::create_directories(fs::path(g.out).parent_path());
    infer::write_predictions(g.out, by_video);
    std::cout << "wrote predictions for " << videos.size() << " " << subset << " videos to "
              << g.out << "\n";
    return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& predictions, const std::string& annotations,
             const std::string& subset) {
    data::DatasetIndex index = data::load_and_validate(annotations);
    auto preds = infer::read_predictions(predictions);
    eval::APReport report = eval::mean_ap(preds, index, subset, eval::default_thresholds(),
                                          g.strict);
    for (const std::string& w : report.warnings) std::cerr << "warning: " << w << "\n";
    if (!g.out.empty()) {
        fs::create_directories(g.out);
        eval::write_report_json((fs::path(g.out) / "report.json").string(), report, index.taxonomy);
        eval::write_report_csv((fs::path(g.out) / "report.csv").string(), report, index.taxonomy);
    }
    std::cout << "avg mAP [0.1:0.1:0.9] = " << report.avg_map << "\n";
    for (const auto& [thr, m] : report.map_at)
        if (thr >= 0.45) std::cout << "  mAP@" << thr << " = " << m << "\n";
    return 0;
}

int cmd_validate(const GlobalOpts& g, const std::string& annotations, const std::string& features) {
    (void)g;
    data::DatasetIndex index = data::load_and_validate(annotations);
    std::cout << "annotations ok: " << index.videos.size() << " videos, "
              << index.taxonomy.num_classes() << " classes\n";
    if (!features.empty()) {
        int checked = 0;
        for (const auto& v : index.videos) {
            const data::FeatureStreams s = data::load_features(v.id, features);
            const double feature_span = s.valid_len * s.hop_s;
            if (v.duration_s > feature_span + 2.0 * s.hop_s)
                std::cerr << "warning: video " << v.id << " duration " << v.duration_s
                          << "s exceeds feature span " << feature_span << "s\n";
            ++checked;
        }
        std::cout << "features ok: " << checked << " videos aligned\n";
    }
    return 0;
}

int cmd_gradcheck(const GlobalOpts& g) {
    (void)g;
    using num::Tape;
    using num::BoundParams;
    using num::Val;
    SeededRng data_rng(23);
    bool all_ok = true;

    // every substrate primitive through small randomized instances
    struct PrimCheck {
        const char* name;
        std::function<Val<double>(Tape<double>&, BoundParams<double>&)> build;
        std::vector<std::pair<std::string, std::vector<int64_t>>> params;
    };
    auto rand_init = [&](num::ParamStore<double>& store,
                         const std::vector<std::pair<std::string, std::vector<int64_t>>>& ps,
                         double lo, double hi) {
        for (const auto& [name, shape] : ps) {
            auto& p = store.create(name, shape);
            for (double& v : p.value.data) v = data_rng.uniform(lo, hi);
        }
    };

    const num::Mask mask5{1, 1, 1, 0, 0};
    std::vector<PrimCheck> checks = {
        {"matmul",
         [](Tape<double>& t, BoundParams<double>& bp) { return t.matmul(bp("a"), bp("b")); },
         {{"a", {4, 5}}, {"b", {5, 3}}}},
        {"attention",
         [&](Tape<double>& t, BoundParams<double>& bp) {
             return t.attention(bp("q"), bp("k"), bp("v"), mask5, 2);
         },
         {{"q", {2, 4, 6}}, {"k", {2, 5, 6}}, {"v", {2, 5, 6}}}},
        {"softmax", [](Tape<double>& t, BoundParams<double>& bp) { return t.softmax(bp("x")); },
         {{"x", {4, 6}}}},
        {"layernorm",
         [](Tape<double>& t, BoundParams<double>& bp) {
             return t.layernorm(bp("x"), bp("g"), bp("b"));
         },
         {{"x", {4, 6}}, {"g", {6}}, {"b", {6}}}},
        {"conv1d",
         [](Tape<double>& t, BoundParams<double>& bp) {
             return t.conv1d(bp("x"), bp("w"), bp("b"), 1);
         },
         {{"x", {7, 3}}, {"w", {4, 3, 3}}, {"b", {4}}}},
        {"dwconv1d",
         [](Tape<double>& t, BoundParams<double>& bp) {
             return t.dwconv1d(bp("x"), bp("w"), Val<double>{}, 2);
         },
         {{"x", {8, 5}}, {"w", {5, 3}}}},
        {"relu", [](Tape<double>& t, BoundParams<double>& bp) { return t.relu(bp("x")); },
         {{"x", {4, 5}}}},
        {"sigmoid", [](Tape<double>& t, BoundParams<double>& bp) { return t.sigmoid(bp("x")); },
         {{"x", {4, 5}}}},
        {"add", [](Tape<double>& t, BoundParams<double>& bp) { return t.add(bp("a"), bp("b")); },
         {{"a", {3, 4}}, {"b", {3, 4}}}},
        {"mul", [](Tape<double>& t, BoundParams<double>& bp) { return t.mul(bp("a"), bp("b")); },
         {{"a", {3, 4}}, {"b", {3, 4}}}},
        {"concat",
         [](Tape<double>& t, BoundParams<double>& bp) { return t.concat_cols(bp("a"), bp("b")); },
         {{"a", {3, 4}}, {"b", {3, 2}}}},
        {"reshape",
         [](Tape<double>& t, BoundParams<double>& bp) { return t.reshape(bp("x"), {2, 10}); },
         {{"x", {4, 5}}}},
        {"transpose",
         [](Tape<double>& t, BoundParams<double>& bp) { return t.transpose(bp("x")); },
         {{"x", {4, 5}}}},
        {"masked_mean",
         [&](Tape<double>& t, BoundParams<double>& bp) {
             return t.masked_mean(bp("x"), mask5);
         },
         {{"x", {5, 4}}}},
    };

    for (const auto& check : checks) {
        num::ParamStore<double> store;
        rand_init(store, check.params, 0.25, 1.5);  // positive, away from relu kinks
        num::Tensor<double> weight;
        std::function<Val<double>(Tape<double>&, BoundParams<double>&)> build =
            [&](Tape<double>& tape, BoundParams<double>& bp) -> Val<double> {
            Val<double> out = check.build(tape, bp);
            if (weight.numel() == 0) {
                SeededRng wr(99);
                weight = num::Tensor<double>(tape.value(out).shape);
                for (double& v : weight.data) v = wr.uniform(-1.0, 1.0);
            }
            return tape.sum(tape.mul(out, tape.constant(weight)));
        };
        auto rep = num::grad_check<double>(build, store, 1e-4, 128);
        const bool ok = rep.max_rel_err < 1e-4;
        all_ok = all_ok && ok;
        std::printf("%-12s max rel err %.3e  (%lld coords)  %s\n", check.name, rep.max_rel_err,
                    static_cast<long long>(rep.coords_checked), ok ? "ok" : "FAIL");
    }

    // end-to-end tiny model through the full loss
    model::ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.unimodal_blocks = 1;
    cfg.pyramid_levels = 2;
    cfg.heads = 2;
    cfg.classes = 3;
    cfg.hidden_classes = 2;
    cfg.dependency_dim = 4;
    cfg.ffn_ratio = 2;
    cfg.t_max = 8;
    cfg.audio_dim = 5;
    cfg.visual_dim = 6;
    num::ParamStore<double> store;
    SeededRng rng(19);
    model::init_params(cfg, store, rng);
    num::Tensor<double> audio({8, 5}), visual({8, 6});
    for (auto& v : audio.data) v = data_rng.normal();
    for (auto& v : visual.data) v = data_rng.normal();
    num::Mask mask(8, 1);
    mask[6] = mask[7] = 0;
    data::AnnotatedVideo video;
    video.id = "tiny";
    video.duration_s = 8.0;
    video.events = {{0.5, 3.5, 0}, {2.0, 5.5, 2}};
    auto targets =
        train::assign_targets(video, 1.0, train::level_grid(cfg, 6), cfg.resolved_edges());
    auto build = [&](Tape<double>& tape, BoundParams<double>& bp) {
        auto fwd = model::forward(bp, cfg, audio, visual, mask, 6);
        return train::total_loss(tape, fwd, targets, cfg, train::LossParams{}).total;
    };
    auto rep = num::grad_check<double>(build, store, 1e-3, 6, 23);
    const bool ok = rep.max_rel_err < 1e-4;
    all_ok = all_ok && ok;
    std::printf("%-12s max rel err %.3e  (%lld coords, %lld off-kink skips)  %s\n", "end-to-end",
                rep.max_rel_err, static_cast<long long>(rep.coords_checked),
                static_cast<long long>(rep.coords_nonsmooth), ok ? "ok" : "FAIL");
    std::printf("gradcheck %s\n", all_ok ? "PASS" : "FAIL");
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dense audio-visual event localization pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON config file (model/train/decode/paths)");
    app.add_option("--set", g.overrides, "override config entries, e.g. --set model.embed_dim=64")
        ->take_all();
    auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
    app.add_option("--threads", g.threads, "worker threads for per-video inference (default 1)");
    app.add_option("--out", g.out, "output file or directory");
    app.add_flag("--strict", g.strict, "strict validation mode");
    app.add_flag("--force", g.force, "allow overwriting an existing run directory");

    std::string spec_path, annotations, features, checkpoint, predictions;
    std::string subset = "test";
    std::string ratios;
    double gap_s = 5.0;

    auto* c_generate = app.add_subcommand("generate", "generate a synthetic planted-event corpus");
    c_generate->add_option("--spec", spec_path, "synthetic spec JSON (defaults when omitted)");

    auto* c_split = app.add_subcommand("split", "assign train/val/test subsets");
    c_split->add_option("--annotations", annotations, "annotation JSON")->required();
    c_split->add_option("--ratios", ratios, "subset ratios, default 3,1,1");

    auto* c_stats = app.add_subcommand("stats", "corpus statistics CSVs");
    c_stats->add_option("--annotations", annotations, "annotation JSON")->required();
    c_stats->add_option("--gap-s", gap_s, "max gap for consecutive pairs (default 5)");

    auto* c_train = app.add_subcommand("train", "train a model");
    c_train->add_option("--annotations", annotations, "annotation JSON");
    c_train->add_option("--features", features, "feature directory");

    auto* c_infer = app.add_subcommand("infer", "localize events with a checkpoint");
    c_infer->add_option("--checkpoint", checkpoint, "checkpoint .davt")->required();
    c_infer->add_option("--annotations", annotations, "annotation JSON");
    c_infer->add_option("--features", features, "feature directory");
    c_infer->add_option("--subset", subset, "subset to run (default test)");

    auto* c_eval = app.add_subcommand("eval", "score predictions against ground truth");
    c_eval->add_option("--predictions", predictions, "predictions JSON")->required();
    c_eval->add_option("--annotations", annotations, "annotation JSON")->required();
    c_eval->add_option("--subset", subset, "subset to evaluate (default test)");

    auto* c_validate = app.add_subcommand("validate", "lint annotations and features");
    c_validate->add_option("--annotations", annotations, "annotation JSON")->required();
    c_validate->add_option("--features", features, "feature directory (optional)");

    app.add_subcommand("gradcheck", "finite-difference check of every primitive and a tiny model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    g.seed_set = seed_opt->count() > 0;
    try {
        if (c_generate->parsed()) return cmd_generate(g, spec_path);
        if (c_split->parsed()) return cmd_split(g, annotations, ratios);
        if (c_stats->parsed()) return cmd_stats(g, annotations, gap_s);
        if (c_train->parsed()) return cmd_train(g, annotations, features);
        if (c_infer->parsed()) return cmd_infer(g, checkpoint, annotations, features, subset);
        if (c_eval->parsed()) return cmd_eval(g, predictions, annotations, subset);
        if (c_validate->parsed()) return cmd_validate(g, annotations, features);
        return cmd_gradcheck(g);
    } catch (const model::ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
