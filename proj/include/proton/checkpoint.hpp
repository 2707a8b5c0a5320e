#pragma once

#include "proton/tensor.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace proton {

inline constexpr int kCheckpointFormatVersion = 1;

struct TensorBlock {
    std::string name;
    Shape shape;
    Vector values;
};

/// Textual header (format version + config echo as key/value lines) followed
/// by length-prefixed tensor blocks, little-endian fp64 payloads.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> header;
    std::vector<TensorBlock> blocks;

    const TensorBlock* find(const std::string& name) const;
    const std::string* header_value(const std::string& key) const;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace proton
