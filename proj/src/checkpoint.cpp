#include "hfcr/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hfcr {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

const std::string* Checkpoint::find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return &v;
    return nullptr;
}

const Tensor<float>* Checkpoint::find_tensor(const std::string& name) const {
    for (const auto& [k, t] : tensors)
        if (k == name) return &t;
    return nullptr;
}

namespace {

std::uint32_t checksum(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32_z(crc, reinterpret_cast<const Bytef*>(data), n);
    return static_cast<std::uint32_t>(crc);
}

bool plain_token(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r') return false;
    return true;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
    std::string payload;
    std::ostringstream man;
    man << "hfcr-checkpoint\n"
        << "version " << checkpoint_version << "\n"
        << "dtype f32\n";
    for (const auto& [k, v] : ck.meta) {
        if (!plain_token(k) || v.find('\n') != std::string::npos) {
            throw CheckpointError("checkpoint meta entry '" + k + "' cannot be stored on one line");
        }
        man << "meta " << k << ' ' << v << '\n';
    }
    for (const auto& [name, t] : ck.tensors) {
        if (!plain_token(name)) throw CheckpointError("checkpoint tensor name '" + name + "' contains whitespace");
        man << "tensor " << name << ' ' << t.rank();
        for (auto d : t.shape()) man << ' ' << d;
        man << " offset " << payload.size() << '\n';
        payload.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
    }
    char hex[16];
    std::snprintf(hex, sizeof hex, "%08x", checksum(payload.data(), payload.size()));
    man << "payload_bytes " << payload.size() << '\n' << "checksum crc32 " << hex << '\n' << "end\n";
    return man.str() + payload;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw CheckpointError("checkpoint manifest is truncated");
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    if (next_line() != "hfcr-checkpoint") throw CheckpointError("not a checkpoint file (bad magic line)");
    {
        std::istringstream in(next_line());
        std::string kw;
        int version = 0;
        if (!(in >> kw >> version) || kw != "version") throw CheckpointError("checkpoint manifest lacks a version line");
        if (version != checkpoint_version) {
            throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                  std::to_string(checkpoint_version) + ")");
        }
    }
    if (next_line() != "dtype f32") throw CheckpointError("unsupported checkpoint element type");

    struct Entry {
        std::string name;
        Shape shape;
        std::size_t offset;
    };
    Checkpoint ck;
    std::vector<Entry> entries;
    std::size_t payload_bytes = 0;
    std::string expected_crc;
    for (;;) {
        const std::string line = next_line();
        if (line == "end") break;
        std::istringstream in(line);
        std::string kw;
        in >> kw;
        if (kw == "meta") {
            std::string key;
            in >> key;
            std::string value;
            std::getline(in, value);
            if (!value.empty() && value[0] == ' ') value.erase(0, 1);
            ck.meta.emplace_back(key, value);
        } else if (kw == "tensor") {
            Entry e;
            std::size_t rank = 0;
            in >> e.name >> rank;
            e.shape.resize(rank);
            for (auto& d : e.shape) in >> d;
            std::string off;
            in >> off >> e.offset;
            if (!in || off != "offset") throw CheckpointError("malformed tensor line: " + line);
            entries.push_back(std::move(e));
        } else if (kw == "payload_bytes") {
            in >> payload_bytes;
        } else if (kw == "checksum") {
            std::string algo;
            in >> algo >> expected_crc;
            if (algo != "crc32") throw CheckpointError("unsupported checksum algorithm " + algo);
        } else {
            throw CheckpointError("unknown checkpoint manifest line: " + line);
        }
    }
    if (expected_crc.empty()) throw CheckpointError("checkpoint manifest lacks a checksum");
    const std::size_t have = bytes.size() - pos;
    char hex[16];
    std::snprintf(hex, sizeof hex, "%08x", checksum(bytes.data() + pos, have));
    if (have != payload_bytes || expected_crc != hex) {
        throw CheckpointError("checkpoint checksum mismatch (payload " + std::to_string(have) + " of " +
                              std::to_string(payload_bytes) + " bytes, crc " + hex + ", expected " + expected_crc + ")");
    }
    for (const auto& e : entries) {
        Tensor<float> t(e.shape);
        const std::size_t n = t.size() * sizeof(float);
        if (e.offset + n > payload_bytes) throw CheckpointError("tensor " + e.name + " extends past the payload");
        std::memcpy(t.data().data(), bytes.data() + pos + e.offset, n);
        ck.tensors.emplace_back(e.name, std::move(t));
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const std::string bytes = serialize_checkpoint(ck);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

template <typename T>
Checkpoint capture(HfcrModel<T>& model) {
    Checkpoint ck;
    for (auto& [name, t] : model.state()) ck.tensors.emplace_back(name, t->template cast<float>());
    return ck;
}

template <typename T>
void restore(HfcrModel<T>& model, const Checkpoint& ck) {
    auto st = model.state();
    for (const auto& [name, t] : st) {
        const Tensor<float>* src = ck.find_tensor(name);
        if (!src) throw CheckpointError("checkpoint lacks tensor " + name);
        if (src->shape() != t->shape()) {
            throw CheckpointError("shape mismatch for " + name + ": checkpoint " + to_string(src->shape()) + ", model " +
                                  to_string(t->shape()));
        }
    }
    for (auto& [name, t] : st) *t = ck.find_tensor(name)->template cast<T>();
}

template Checkpoint capture<float>(HfcrModel<float>&);
template Checkpoint capture<double>(HfcrModel<double>&);
template void restore<float>(HfcrModel<float>&, const Checkpoint&);
template void restore<double>(HfcrModel<double>&, const Checkpoint&);

}  // namespace hfcr
