#include "htc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace htc {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'C', '1'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n) const {
        HTC_CHECK(pos + n <= buf.size(), checkpoint, "checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = static_cast<uint32_t>(buf[pos]) | (static_cast<uint32_t>(buf[pos + 1]) << 8) |
                     (static_cast<uint32_t>(buf[pos + 2]) << 16) |
                     (static_cast<uint32_t>(buf[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

} // namespace

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed) {
    static const auto table = [] {
        std::vector<uint32_t> t(256);
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = seed ^ 0xffffffffu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

std::vector<uint8_t> checkpoint_to_bytes(const Checkpoint& ckpt) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, static_cast<uint32_t>(ckpt.config.size()));
    for (const auto& [k, v] : ckpt.config) put_string(out, k + "=" + v);
    put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_string(out, name);
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (int e : t.shape) put_u32(out, static_cast<uint32_t>(e));
        const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
        const size_t at = out.size();
        out.resize(at + bytes);
        std::memcpy(out.data() + at, t.ptr(), bytes);
    }
    put_u32(out, crc32(out.data(), out.size()));
    return out;
}

Checkpoint checkpoint_from_bytes(const std::vector<uint8_t>& bytes) {
    HTC_CHECK(bytes.size() >= 8, checkpoint, "checkpoint: truncated file");
    HTC_CHECK(std::memcmp(bytes.data(), kMagic, 4) == 0, checkpoint,
              "checkpoint: bad magic (not an HVC1 file or unsupported version)");
    const uint32_t stored = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
    HTC_CHECK(crc32(bytes.data(), bytes.size() - 4) == stored, checkpoint,
              "checkpoint: checksum failure");

    Reader r{bytes, 4};
    Checkpoint ckpt;
    const uint32_t nlines = r.u32();
    for (uint32_t i = 0; i < nlines; ++i) {
        const std::string line = r.str();
        const size_t eq = line.find('=');
        HTC_CHECK(eq != std::string::npos, checkpoint, "checkpoint: malformed config line");
        ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    const uint32_t ntensors = r.u32();
    for (uint32_t i = 0; i < ntensors; ++i) {
        const std::string name = r.str();
        const uint32_t rank = r.u32();
        HTC_CHECK(rank <= 8, checkpoint, "checkpoint: implausible tensor rank");
        std::vector<int> shape(rank);
        for (uint32_t j = 0; j < rank; ++j) shape[j] = static_cast<int>(r.u32());
        const int64_t n = shape_numel(shape);
        r.need(static_cast<size_t>(n) * sizeof(float));
        std::vector<float> data(static_cast<size_t>(n));
        std::memcpy(data.data(), bytes.data() + r.pos, static_cast<size_t>(n) * sizeof(float));
        r.pos += static_cast<size_t>(n) * sizeof(float);
        ckpt.tensors.emplace_back(name, Tensor(std::move(shape), std::move(data)));
    }
    HTC_CHECK(r.pos == bytes.size() - 4, checkpoint, "checkpoint: trailing bytes");
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::vector<uint8_t> bytes = checkpoint_to_bytes(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    HTC_CHECK(f.good(), io, "cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    HTC_CHECK(f.good(), io, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    HTC_CHECK(f.good(), io, "cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return checkpoint_from_bytes(bytes);
}

} // namespace htc
