#pragma once

#include "hfcr/model.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hfcr {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Named float32 tensors plus free-form metadata. Serialized as a text manifest
/// (one line per tensor: name, shape, byte offset) followed by a little-endian
/// payload whose crc32 is stored in the manifest.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const std::string* find_meta(const std::string& key) const;
    const Tensor<float>* find_tensor(const std::string& name) const;
};

inline constexpr int checkpoint_version = 1;

std::string serialize_checkpoint(const Checkpoint& ck);
/// Throws CheckpointError on a bad header, unknown version, truncated payload or checksum mismatch.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint capture(HfcrModel<T>& model);

/// All-or-nothing: every model tensor must be present with a matching shape
/// before anything is written into the model.
template <typename T>
void restore(HfcrModel<T>& model, const Checkpoint& ck);

}  // namespace hfcr
