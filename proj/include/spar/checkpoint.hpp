#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace spar {

// Tagged container of named float64 tensors. On-disk layout (little-endian):
//   magic "SPARCKPT" | version u32 | entry count u32
//   per entry: name length u32 | name bytes | rank u32 | dims u32[rank] | f64 payload
struct Checkpoint {
    struct Entry {
        std::vector<std::uint32_t> dims;
        std::vector<double> data;
    };

    std::map<std::string, Entry> entries;

    static constexpr std::uint32_t kVersion = 1;

    bool has(const std::string& name) const { return entries.count(name) != 0; }

    void put(const std::string& name, std::vector<double> data);
    void put(const std::string& name, std::vector<double> data, std::vector<std::uint32_t> dims);
    void put_scalar(const std::string& name, double value);

    const std::vector<double>& get(const std::string& name) const;
    double get_scalar(const std::string& name) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::uint8_t* bytes, std::size_t len);
};

}  // namespace spar
