#include "proton/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace proton {

namespace {

constexpr const char* kMagic = "proton-checkpoint";
constexpr const char* kEndHeader = "end-header";

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
public:
    Reader(const std::string& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    std::string text(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }

    const std::string& bytes_;
    std::size_t pos_;
};

}  // namespace

const TensorBlock* Checkpoint::find(const std::string& name) const {
    for (const auto& b : blocks) {
        if (b.name == name) return &b;
    }
    return nullptr;
}

const std::string* Checkpoint::header_value(const std::string& key) const {
    for (const auto& [k, v] : header) {
        if (k == key) return &v;
    }
    return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out = std::string(kMagic) + " v" + std::to_string(kCheckpointFormatVersion) + "\n";
    for (const auto& [k, v] : ckpt.header) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw CheckpointError("header entry cannot be encoded: " + k);
        }
        out += k + " = " + v + "\n";
    }
    out += std::string(kEndHeader) + " " + std::to_string(ckpt.blocks.size()) + "\n";
    for (const auto& b : ckpt.blocks) {
        if (shape_size(b.shape) != b.values.size()) throw CheckpointError("block " + b.name + " has inconsistent shape");
        put_u32(out, static_cast<std::uint32_t>(b.name.size()));
        out += b.name;
        put_u32(out, static_cast<std::uint32_t>(b.shape.size()));
        for (Index e : b.shape) put_u64(out, static_cast<std::uint64_t>(e));
        for (Index i = 0; i < b.values.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(b.values[i]));
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    Checkpoint ckpt;
    std::size_t pos = 0;
    auto next_line = [&]() {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw CheckpointError("checkpoint header is not terminated");
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    const std::string magic = next_line();
    const std::string expected = std::string(kMagic) + " v" + std::to_string(kCheckpointFormatVersion);
    if (magic != expected) throw CheckpointError("not a checkpoint or unsupported version: '" + magic + "'");
    std::size_t count = 0;
    for (;;) {
        const std::string line = next_line();
        if (line.rfind(kEndHeader, 0) == 0) {
            count = std::stoull(line.substr(std::strlen(kEndHeader)));
            break;
        }
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw CheckpointError("malformed header line: '" + line + "'");
        ckpt.header.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    }
    Reader in(bytes, pos);
    for (std::size_t b = 0; b < count; ++b) {
        TensorBlock block;
        block.name = in.text(in.uint(4));
        const auto rank = in.uint(4);
        if (rank == 0 || rank > 8) throw CheckpointError("block " + block.name + " has invalid rank");
        for (std::uint64_t i = 0; i < rank; ++i) block.shape.push_back(static_cast<Index>(in.uint(8)));
        const Index n = shape_size(block.shape);
        block.values.resize(n);
        for (Index i = 0; i < n; ++i) block.values[i] = std::bit_cast<double>(in.uint(8));
        ckpt.blocks.push_back(std::move(block));
    }
    if (!in.done()) throw CheckpointError("trailing bytes after last block");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace proton
