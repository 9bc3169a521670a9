#include "davel/run_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace davel::cli {

namespace {

using nlohmann::ordered_json;
using model::ConfigError;

const std::set<std::string> kDecodeKeys = {"score_threshold", "pre_nms_topk", "soft_nms_sigma",
                                           "max_kept", "min_score"};
const std::set<std::string> kPathKeys = {"annotations", "features", "out"};

infer::DecodeConfig decode_from_json(const ordered_json& j) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!kDecodeKeys.count(key)) throw ConfigError("decode config: unknown key '" + key + "'");
    }
    infer::DecodeConfig c;
    c.score_threshold = j.value("score_threshold", c.score_threshold);
    c.pre_nms_topk = j.value("pre_nms_topk", c.pre_nms_topk);
    c.soft_nms_sigma = j.value("soft_nms_sigma", c.soft_nms_sigma);
    c.max_kept = j.value("max_kept", c.max_kept);
    c.min_score = j.value("min_score", c.min_score);
    if (c.score_threshold < 0 || c.score_threshold > 1)
        throw ConfigError("decode config: score_threshold must be in [0,1]");
    if (c.soft_nms_sigma <= 0) throw ConfigError("decode config: soft_nms_sigma must be positive");
    if (c.pre_nms_topk < 1 || c.max_kept < 1)
        throw ConfigError("decode config: top-k values must be >= 1");
    return c;
}

ordered_json decode_to_json(const infer::DecodeConfig& c) {
    ordered_json j;
    j["score_threshold"] = c.score_threshold;
    j["pre_nms_topk"] = c.pre_nms_topk;
    j["soft_nms_sigma"] = c.soft_nms_sigma;
    j["max_kept"] = c.max_kept;
    j["min_score"] = c.min_score;
    return j;
}

// parse an override value as JSON when possible, else as a string
ordered_json parse_value(const std::string& text) {
    try {
        return ordered_json::parse(text);
    } catch (const std::exception&) {
        return ordered_json(text);
    }
}

}  // namespace

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
    ordered_json doc = ordered_json::object();
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config: " + config_path);
        try {
            is >> doc;
        } catch (const std::exception& e) {
            throw ConfigError("config " + config_path + ": " + e.what());
        }
    }
    for (const std::string& kv : overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        std::string pointer = "/" + kv.substr(0, eq);
        for (char& c : pointer)
            if (c == '.') c = '/';
        doc[ordered_json::json_pointer(pointer)] = parse_value(kv.substr(eq + 1));
    }

    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (key != "model" && key != "train" && key != "decode" && key != "paths")
            throw ConfigError("config: unknown section '" + key + "'");
    }

    RunConfig cfg;
    if (doc.contains("model")) cfg.model = model::model_config_from_json(doc["model"].dump());
    if (doc.contains("train")) cfg.train = train::train_config_from_json(doc["train"].dump());
    if (doc.contains("decode")) cfg.decode = decode_from_json(doc["decode"]);
    if (doc.contains("paths")) {
        for (const auto& [key, value] : doc["paths"].items()) {
            (void)value;
            if (!kPathKeys.count(key)) throw ConfigError("paths: unknown key '" + key + "'");
        }
        cfg.paths.annotations = doc["paths"].value("annotations", "");
        cfg.paths.features = doc["paths"].value("features", "");
        cfg.paths.out = doc["paths"].value("out", "");
    }
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    ordered_json j;
    j["model"] = ordered_json::parse(model::model_config_to_json(cfg.model));
    j["train"] = ordered_json::parse(train::train_config_to_json(cfg.train));
    j["decode"] = decode_to_json(cfg.decode);
    ordered_json paths;
    paths["annotations"] = cfg.paths.annotations;
    paths["features"] = cfg.paths.features;
    paths["out"] = cfg.paths.out;
    j["paths"] = std::move(paths);
    return j.dump(2);
}

void echo_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write config echo: " + path);
    os << run_config_to_json(cfg) << "\n";
}

}  // namespace davel::cli
