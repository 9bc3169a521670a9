#include "davel/annotations.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

namespace davel::data {

namespace {

using nlohmann::ordered_json;

const std::set<std::string> kSubsets = {"train", "val", "test", "unassigned"};

}  // namespace

DatasetIndex build_index(Taxonomy taxonomy, std::vector<AnnotatedVideo> videos) {
    if (taxonomy.names.empty()) throw ValidationError("taxonomy: at least one class required");
    DatasetIndex index;
    index.taxonomy = std::move(taxonomy);
    index.videos = std::move(videos);
    std::sort(index.videos.begin(), index.videos.end(),
              [](const AnnotatedVideo& a, const AnnotatedVideo& b) { return a.id < b.id; });
    const int C = index.taxonomy.num_classes();
    for (size_t i = 0; i < index.videos.size(); ++i) {
        const AnnotatedVideo& v = index.videos[i];
        if (v.id.empty()) throw ValidationError("video with empty id");
        if (!index.by_id.emplace(v.id, i).second)
            throw ValidationError("duplicate video id: " + v.id);
        if (!(v.duration_s > 0))
            throw ValidationError("video " + v.id + ": duration_s must be positive");
        if (!kSubsets.count(v.subset))
            throw ValidationError("video " + v.id + ": unknown subset '" + v.subset + "'");
        for (const EventInstance& e : v.events) {
            if (e.label_id < 0 || e.label_id >= C)
                throw ValidationError("video " + v.id + ": label_id " + std::to_string(e.label_id) +
                                      " not in taxonomy");
            if (!(e.start_s >= 0))
                throw ValidationError("video " + v.id + ": event start_s must be >= 0");
            if (!(e.start_s < e.end_s))
                throw ValidationError("video " + v.id + ": event start_s >= end_s");
            if (e.end_s > v.duration_s + 1e-9)
                throw ValidationError("video " + v.id + ": event end_s exceeds duration_s");
        }
    }
    return index;
}

DatasetIndex load_and_validate(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open annotation file: " + path);
    ordered_json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ValidationError("annotation file " + path + ": " + e.what());
    }
    if (!j.is_object() || j.value("version", 0) != 1)
        throw ValidationError("annotation file " + path + ": missing or unsupported version");

    Taxonomy tax;
    if (!j.contains("taxonomy") || !j["taxonomy"].is_array() || j["taxonomy"].empty())
        throw ValidationError("annotation file " + path + ": taxonomy missing or empty");
    std::vector<std::pair<int, std::string>> entries;
    for (const auto& t : j["taxonomy"]) {
        if (!t.contains("id") || !t.contains("name"))
            throw ValidationError("taxonomy entry missing id or name");
        entries.emplace_back(t["id"].get<int>(), t["name"].get<std::string>());
    }
    std::sort(entries.begin(), entries.end());
    for (size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != static_cast<int>(i))
            throw ValidationError("taxonomy ids must be dense and unique starting at 0");
        tax.names.push_back(entries[i].second);
    }

    std::vector<AnnotatedVideo> videos;
    for (const auto& vj : j.value("videos", ordered_json::array())) {
        AnnotatedVideo v;
        if (!vj.contains("id")) throw ValidationError("video entry missing id");
        v.id = vj["id"].get<std::string>();
        if (!vj.contains("duration_s"))
            throw ValidationError("video " + v.id + ": missing duration_s");
        v.duration_s = vj["duration_s"].get<double>();
        v.subset = vj.value("subset", "unassigned");
        for (const auto& ej : vj.value("events", ordered_json::array())) {
            EventInstance e;
            if (!ej.contains("label_id") || !ej.contains("start_s") || !ej.contains("end_s"))
                throw ValidationError("video " + v.id + ": event missing label_id/start_s/end_s");
            e.label_id = ej["label_id"].get<int>();
            e.start_s = ej["start_s"].get<double>();
            e.end_s = ej["end_s"].get<double>();
            v.events.push_back(e);
        }
        videos.push_back(std::move(v));
    }
    return build_index(std::move(tax), std::move(videos));
}

void save_annotations(const std::string& path, const DatasetIndex& index) {
    ordered_json j;
    j["version"] = 1;
    j["taxonomy"] = ordered_json::array();
    for (int i = 0; i < index.taxonomy.num_classes(); ++i)
        j["taxonomy"].push_back({{"id", i}, {"name", index.taxonomy.names[static_cast<size_t>(i)]}});
    j["videos"] = ordered_json::array();
    for (const AnnotatedVideo& v : index.videos) {
        ordered_json vj;
        vj["id"] = v.id;
        vj["duration_s"] = v.duration_s;
        vj["subset"] = v.subset;
        vj["events"] = ordered_json::array();
        for (const EventInstance& e : v.events)
            vj["events"].push_back(
                {{"label_id", e.label_id}, {"start_s", e.start_s}, {"end_s", e.end_s}});
        j["videos"].push_back(std::move(vj));
    }
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write annotation file: " + path);
    os << j.dump(2) << "\n";
}

}  // namespace davel::data
