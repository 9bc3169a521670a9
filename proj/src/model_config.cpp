#include "davel/model_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace davel::model {

namespace {

using nlohmann::ordered_json;

const std::set<std::string> kKnownKeys = {
    "embed_dim",      "unimodal_blocks", "pyramid_levels",  "heads",
    "classes",        "hidden_classes",  "dependency_dim",  "ffn_ratio",
    "t_max",          "use_positional",  "use_dependency",  "dep_simultaneous",
    "dep_consecutive", "class_aware_regression", "use_downsampling",
    "audio_dim",      "visual_dim",      "range_edges",     "modality"};

}  // namespace

void ModelConfig::validate() const {
    if (embed_dim < 1 || embed_dim % heads != 0)
        throw ConfigError("embed_dim must be positive and divisible by heads");
    if (dependency_dim < 1 || dependency_dim % heads != 0)
        throw ConfigError("dependency_dim must be positive and divisible by heads");
    if (unimodal_blocks < 0) throw ConfigError("unimodal_blocks must be >= 0");
    if (pyramid_levels < 1) throw ConfigError("pyramid_levels must be >= 1");
    if (classes < 0) throw ConfigError("classes must be >= 0");
    if (hidden_classes < 1) throw ConfigError("hidden_classes must be >= 1");
    if (ffn_ratio < 1) throw ConfigError("ffn_ratio must be >= 1");
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
    if (audio_dim < 1 || visual_dim < 1) throw ConfigError("feature dims must be >= 1");
    if (modality != "av" && modality != "audio" && modality != "visual")
        throw ConfigError("modality must be av, audio or visual");
    if (!range_edges.empty()) {
        if (static_cast<int>(range_edges.size()) != pyramid_levels - 1)
            throw ConfigError("range_edges must have pyramid_levels-1 entries");
        double prev = 0;
        for (double e : range_edges) {
            if (e <= prev) throw ConfigError("range_edges must be strictly increasing and positive");
            prev = e;
        }
    }
}

std::vector<double> ModelConfig::resolved_edges() const {
    if (!range_edges.empty()) return range_edges;
    std::vector<double> edges;
    for (int k = 0; k < pyramid_levels - 1; ++k) edges.push_back(4.0 * static_cast<double>(1 << k));
    return edges;
}

ModelConfig model_config_from_json(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!kKnownKeys.count(key)) throw ConfigError("model config: unknown key '" + key + "'");
    }
    ModelConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.unimodal_blocks = j.value("unimodal_blocks", c.unimodal_blocks);
    c.pyramid_levels = j.value("pyramid_levels", c.pyramid_levels);
    c.heads = j.value("heads", c.heads);
    c.classes = j.value("classes", c.classes);
    c.hidden_classes = j.value("hidden_classes", c.hidden_classes);
    c.dependency_dim = j.value("dependency_dim", c.dependency_dim);
    c.ffn_ratio = j.value("ffn_ratio", c.ffn_ratio);
    c.t_max = j.value("t_max", c.t_max);
    c.use_positional = j.value("use_positional", c.use_positional);
    c.use_dependency = j.value("use_dependency", c.use_dependency);
    c.dep_simultaneous = j.value("dep_simultaneous", c.dep_simultaneous);
    c.dep_consecutive = j.value("dep_consecutive", c.dep_consecutive);
    c.class_aware_regression = j.value("class_aware_regression", c.class_aware_regression);
    c.use_downsampling = j.value("use_downsampling", c.use_downsampling);
    c.audio_dim = j.value("audio_dim", c.audio_dim);
    c.visual_dim = j.value("visual_dim", c.visual_dim);
    if (j.contains("range_edges")) c.range_edges = j["range_edges"].get<std::vector<double>>();
    c.modality = j.value("modality", c.modality);
    c.validate();
    return c;
}

std::string model_config_to_json(const ModelConfig& c) {
    ordered_json j;
    j["embed_dim"] = c.embed_dim;
    j["unimodal_blocks"] = c.unimodal_blocks;
    j["pyramid_levels"] = c.pyramid_levels;
    j["heads"] = c.heads;
    j["classes"] = c.classes;
    j["hidden_classes"] = c.hidden_classes;
    j["dependency_dim"] = c.dependency_dim;
    j["ffn_ratio"] = c.ffn_ratio;
    j["t_max"] = c.t_max;
    j["use_positional"] = c.use_positional;
    j["use_dependency"] = c.use_dependency;
    j["dep_simultaneous"] = c.dep_simultaneous;
    j["dep_consecutive"] = c.dep_consecutive;
    j["class_aware_regression"] = c.class_aware_regression;
    j["use_downsampling"] = c.use_downsampling;
    j["audio_dim"] = c.audio_dim;
    j["visual_dim"] = c.visual_dim;
    j["range_edges"] = c.resolved_edges();
    j["modality"] = c.modality;
    return j.dump(2);
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open model config: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return model_config_from_json(text);
}

void save_model_config(const ModelConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write model config: " + path);
    os << model_config_to_json(cfg) << "\n";
}

}  // namespace davel::model
