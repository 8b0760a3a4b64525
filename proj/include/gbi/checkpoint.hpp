#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gbi/tensor.hpp"

namespace gbi {

// Named-tensor container persisted as:
//   magic "GBICKPT1", then u32 tensor count, then per tensor
//   (u32 name length, name, u32 rank, u32 dims..., f32 row-major payload),
//   then a trailing UTF-8 JSON metadata blob running to end of file.
// All integers and floats little-endian.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> entries;
    std::string metadata_json = "{}";

    void add(const std::string& name, const Tensor& t) { entries.emplace_back(name, t); }
    const Tensor* find(const std::string& name) const;
    // Errors if the name is missing or the stored shape differs.
    Tensor require(const std::string& name, const Shape& shape) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace gbi
