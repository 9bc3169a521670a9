#include "davel/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace davel::num {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'V', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("checkpoint: truncated while reading " + what);
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

void check_header(std::istream& is, const std::string& path) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not a DAVT checkpoint: " + path);
    const uint32_t version = read_u32(is, "version");
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(store.size()));
    for (const auto& [name, p] : store) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(p.value.shape.size()));
        for (int64_t d : p.value.shape) write_u32(os, static_cast<uint32_t>(d));
        for (float v : p.value.data) write_f32(os, v);
    }
    if (!os) throw FormatError("write failed: " + path);
}

ParamStore<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    check_header(is, path);
    const uint32_t count = read_u32(is, "tensor count");
    ParamStore<float> store;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("checkpoint: truncated name in " + path);
        const uint32_t rank = read_u32(is, "rank");
        std::vector<int64_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = read_u32(is, "dim");
        auto& p = store.create(name, shape);
        for (float& v : p.value.data) v = read_f32(is, "payload of " + name);
    }
    return store;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> checkpoint_entries(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    check_header(is, path);
    const uint32_t count = read_u32(is, "tensor count");
    std::vector<std::pair<std::string, std::vector<int64_t>>> out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("checkpoint: truncated name in " + path);
        const uint32_t rank = read_u32(is, "rank");
        std::vector<int64_t> shape(rank);
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = read_u32(is, "dim");
            numel *= shape[d];
        }
        is.seekg(numel * 4, std::ios::cur);
        if (!is) throw FormatError("checkpoint: truncated payload in " + path);
        out.emplace_back(std::move(name), std::move(shape));
    }
    return out;
}

}  // namespace davel::num
