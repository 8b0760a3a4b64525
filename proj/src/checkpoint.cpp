#include "gbi/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace gbi {

namespace {

constexpr char kMagic[8] = {'G', 'B', 'I', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const std::string& in, size_t& pos) {
    if (pos + 4 > in.size()) throw Error("checkpoint: truncated file");
    const auto b = reinterpret_cast<const unsigned char*>(in.data() + pos);
    pos += 4;
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(const std::string& in, size_t& pos) {
    const uint32_t bits = get_u32(in, pos);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

Tensor Checkpoint::require(const std::string& name, const Shape& shape) const {
    const Tensor* t = find(name);
    if (t == nullptr) throw Error("checkpoint: missing tensor '" + name + "'");
    if (t->shape() != shape)
        throw Error("checkpoint: tensor '" + name + "' has shape " + shape_str(t->shape()) +
                    ", expected " + shape_str(shape));
    return *t;
}

void Checkpoint::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) put_u32(out, static_cast<uint32_t>(t.dim(d)));
        for (float v : t.data()) put_f32(out, v);
    }
    out.append(metadata_json);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open '" + path + "'");
    std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
        const std::string found = in.substr(0, std::min<size_t>(in.size(), sizeof(kMagic)));
        throw Error("checkpoint: bad magic in '" + path + "', expected 'GBICKPT1', found '" + found +
                    "'");
    }
    size_t pos = sizeof(kMagic);
    const uint32_t count = get_u32(in, pos);

    Checkpoint ckpt;
    ckpt.entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = get_u32(in, pos);
        if (pos + name_len > in.size()) throw Error("checkpoint: truncated tensor name");
        std::string name = in.substr(pos, name_len);
        pos += name_len;
        const uint32_t rank = get_u32(in, pos);
        if (rank == 0 || rank > 8) throw Error("checkpoint: implausible rank for '" + name + "'");
        Shape shape;
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            const uint32_t dim = get_u32(in, pos);
            if (dim == 0) throw Error("checkpoint: zero dimension for '" + name + "'");
            shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        if (pos + numel * 4 > in.size()) throw Error("checkpoint: truncated payload for '" + name + "'");
        std::vector<float> data(numel);
        for (size_t j = 0; j < numel; ++j) data[j] = get_f32(in, pos);
        ckpt.entries.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
    }
    ckpt.metadata_json = in.substr(pos);
    if (ckpt.metadata_json.empty()) ckpt.metadata_json = "{}";
    return ckpt;
}

}  // namespace gbi
