#include "davel/features.hpp"

#include <cstring>
#include <fstream>

namespace davel::data {

using num::FormatError;

namespace {

constexpr char kMagic[4] = {'D', 'A', 'V', 'F'};

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("feature file: truncated " + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

float read_f32(std::istream& is, const std::string& what) {
    const uint32_t bits = read_u32(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_feature_file(const std::string& path, const FeatureFile& f) {
    if (f.values.rank() != 2) throw FormatError("feature payload must be [T, D]");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, 1);
    write_u32(os, static_cast<uint32_t>(f.values.dim(0)));
    write_u32(os, static_cast<uint32_t>(f.values.dim(1)));
    write_f32(os, f.hop_s);
    write_f32(os, f.offset_s);
    for (float v : f.values.data) write_f32(os, v);
    if (!os) throw FormatError("write failed: " + path);
}

FeatureFile read_feature_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not a DAVF feature file: " + path);
    const uint32_t version = read_u32(is, "version");
    if (version != 1) throw FormatError("unsupported feature version in " + path);
    const uint32_t t = read_u32(is, "T");
    const uint32_t d = read_u32(is, "D");
    FeatureFile f;
    f.hop_s = read_f32(is, "hop_s");
    f.offset_s = read_f32(is, "offset_s");
    if (f.hop_s <= 0) throw FormatError("feature file " + path + ": hop_s must be positive");
    f.values = num::Tensor<float>({static_cast<int64_t>(t), static_cast<int64_t>(d)});
    for (float& v : f.values.data) v = read_f32(is, "payload");
    return f;
}

std::string feature_path(const std::string& dir, const std::string& modality,
                         const std::string& video_id) {
    return dir + "/" + modality + "/" + video_id + ".davf";
}

FeatureStreams load_features(const std::string& video_id, const std::string& feature_dir) {
    FeatureFile audio = read_feature_file(feature_path(feature_dir, "audio", video_id));
    FeatureFile visual = read_feature_file(feature_path(feature_dir, "visual", video_id));
    if (audio.values.dim(0) != visual.values.dim(0))
        throw FormatError("video " + video_id + ": audio/visual length mismatch, " +
                          std::to_string(audio.values.dim(0)) + " vs " +
                          std::to_string(visual.values.dim(0)));
    if (audio.hop_s != visual.hop_s)
        throw FormatError("video " + video_id + ": audio/visual hop mismatch");
    FeatureStreams s;
    s.video_id = video_id;
    s.hop_s = audio.hop_s;
    s.offset_s = audio.offset_s;
    s.valid_len = static_cast<int>(audio.values.dim(0));
    s.audio = std::move(audio.values);
    s.visual = std::move(visual.values);
    s.mask.assign(static_cast<size_t>(s.valid_len), 1);
    return s;
}

FeatureStreams pad_and_mask(const FeatureStreams& s, int t_max) {
    if (t_max < 1) throw FormatError("t_max must be >= 1");
    FeatureStreams out;
    out.video_id = s.video_id;
    out.hop_s = s.hop_s;
    out.offset_s = s.offset_s;
    const int t_in = static_cast<int>(s.audio.dim(0));
    const int keep = std::min(t_in, t_max);
    out.valid_len = keep;
    const int64_t da = s.audio.dim(1), dv = s.visual.dim(1);
    out.audio = num::Tensor<float>({t_max, da});
    out.visual = num::Tensor<float>({t_max, dv});
    std::copy(s.audio.ptr(), s.audio.ptr() + keep * da, out.audio.ptr());
    std::copy(s.visual.ptr(), s.visual.ptr() + keep * dv, out.visual.ptr());
    out.mask.assign(static_cast<size_t>(t_max), 0);
    std::fill(out.mask.begin(), out.mask.begin() + keep, 1);
    return out;
}

}  // namespace davel::data
