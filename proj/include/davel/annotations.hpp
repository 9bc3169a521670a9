#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace davel::data {

// Annotation file fails schema or invariant checks; message names the video
// and field.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Taxonomy {
    std::vector<std::string> names;  // index == label id, dense

    int num_classes() const { return static_cast<int>(names.size()); }
    const std::string& name(int label_id) const { return names.at(static_cast<size_t>(label_id)); }
};

struct EventInstance {
    double start_s = 0;
    double end_s = 0;
    int label_id = 0;
};

struct AnnotatedVideo {
    std::string id;
    double duration_s = 0;
    std::string subset = "unassigned";  // train | val | test | unassigned
    std::vector<EventInstance> events;
};

// Validated corpus, videos sorted by id.
struct DatasetIndex {
    Taxonomy taxonomy;
    std::vector<AnnotatedVideo> videos;
    std::map<std::string, size_t> by_id;

    const AnnotatedVideo* find(const std::string& id) const {
        auto it = by_id.find(id);
        return it == by_id.end() ? nullptr : &videos[it->second];
    }
    std::vector<const AnnotatedVideo*> subset(const std::string& name) const {
        std::vector<const AnnotatedVideo*> out;
        for (const auto& v : videos)
            if (v.subset == name) out.push_back(&v);
        return out;
    }
};

// Builds the index from parsed pieces, enforcing every invariant.
DatasetIndex build_index(Taxonomy taxonomy, std::vector<AnnotatedVideo> videos);

DatasetIndex load_and_validate(const std::string& path);
void save_annotations(const std::string& path, const DatasetIndex& index);

}  // namespace davel::data
