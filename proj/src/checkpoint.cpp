#include "spar/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "spar/errors.hpp"

namespace spar {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'R', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + 4);
}

void append_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + len);
}

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;

    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n) throw IoError("checkpoint: truncated data");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, p, 4);
        p += 4;
        return v;
    }
};

}  // namespace

void Checkpoint::put(const std::string& name, std::vector<double> data) {
    Entry e;
    e.dims = {static_cast<std::uint32_t>(data.size())};
    e.data = std::move(data);
    entries[name] = std::move(e);
}

void Checkpoint::put(const std::string& name, std::vector<double> data,
                     std::vector<std::uint32_t> dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    if (n != data.size()) throw IoError("checkpoint: dims do not match payload for " + name);
    entries[name] = Entry{std::move(dims), std::move(data)};
}

void Checkpoint::put_scalar(const std::string& name, double value) {
    put(name, std::vector<double>{value});
}

const std::vector<double>& Checkpoint::get(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint: missing entry '" + name + "'");
    return it->second.data;
}

double Checkpoint::get_scalar(const std::string& name) const {
    const auto& v = get(name);
    if (v.size() != 1) throw IoError("checkpoint: entry '" + name + "' is not a scalar");
    return v[0];
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<std::uint8_t> out;
    append_bytes(out, kMagic, 8);
    append_u32(out, kVersion);
    append_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, e] : entries) {
        append_u32(out, static_cast<std::uint32_t>(name.size()));
        append_bytes(out, name.data(), name.size());
        append_u32(out, static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) append_u32(out, d);
        append_bytes(out, e.data.data(), e.data.size() * sizeof(double));
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::uint8_t* bytes, std::size_t len) {
    Reader r{bytes, bytes + len};
    r.need(8);
    if (std::memcmp(r.p, kMagic, 8) != 0) throw IoError("checkpoint: bad magic");
    r.p += 8;
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        r.need(name_len);
        std::string name(reinterpret_cast<const char*>(r.p), name_len);
        r.p += name_len;
        const std::uint32_t rank = r.u32();
        Entry e;
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            e.dims.push_back(r.u32());
            n *= e.dims.back();
        }
        r.need(n * sizeof(double));
        e.data.resize(n);
        std::memcpy(e.data.data(), r.p, n * sizeof(double));
        r.p += n * sizeof(double);
        ck.entries[name] = std::move(e);
    }
    return ck;
}

void Checkpoint::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes.data(), bytes.size());
}

}  // namespace spar
