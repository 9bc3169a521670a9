#pragma once

#include <string>
#include <vector>

#include "davel/param_store.hpp"
#include "davel/tensor.hpp"

namespace davel::num {

// File with a bad magic, truncated payload, or malformed header.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor container: magic "DAVT", u32 version, u32 tensor count, then per
// tensor: u32 name length, UTF-8 name, u32 rank, u32 dims, little-endian
// f32 payload, row-major. Entries are written sorted by name.
void save_checkpoint(const std::string& path, const ParamStore<float>& store);
ParamStore<float> load_checkpoint(const std::string& path);

// Name/shape listing without keeping the payloads around.
std::vector<std::pair<std::string, std::vector<int64_t>>> checkpoint_entries(const std::string& path);

}  // namespace davel::num
