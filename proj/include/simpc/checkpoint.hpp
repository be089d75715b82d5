#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "simpc/autodiff.hpp"
#include "simpc/error.hpp"

namespace simpc::ckpt {

// Flat binary container:
//   "SIMPCKPT" | u32 version | u64 manifest offset | tensor payloads (f64 LE)
//   manifest: u64 count, then per tensor u32 name len, name bytes, u32 ndim,
//   i32 dims, u64 payload byte offset.
// Payload bytes are raw little-endian doubles, so identical tensors produce
// identical files.

constexpr char kMagic[8] = {'S', 'I', 'M', 'P', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

namespace detail {

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

} // namespace detail

inline void save(const std::string& path, const std::vector<NamedTensor>& tensors) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("checkpoint: cannot open for writing: " + tmp);
        os.write(kMagic, sizeof(kMagic));
        detail::put(os, kVersion);
        const auto manifest_pos_field = os.tellp();
        detail::put(os, uint64_t{0});  // patched below

        std::vector<uint64_t> offsets;
        offsets.reserve(tensors.size());
        for (const NamedTensor& nt : tensors) {
            offsets.push_back(static_cast<uint64_t>(os.tellp()));
            os.write(reinterpret_cast<const char*>(nt.tensor.v.data()),
                     static_cast<std::streamsize>(nt.tensor.v.size() * sizeof(double)));
        }
        const uint64_t manifest_offset = static_cast<uint64_t>(os.tellp());
        detail::put(os, static_cast<uint64_t>(tensors.size()));
        for (size_t i = 0; i < tensors.size(); ++i) {
            const NamedTensor& nt = tensors[i];
            detail::put(os, static_cast<uint32_t>(nt.name.size()));
            os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
            detail::put(os, static_cast<uint32_t>(nt.tensor.shape.size()));
            for (int d : nt.tensor.shape) detail::put(os, static_cast<int32_t>(d));
            detail::put(os, offsets[i]);
        }
        os.seekp(manifest_pos_field);
        detail::put(os, manifest_offset);
        if (!os) throw IoError("checkpoint: write failed: " + tmp);
    }
    // atomic publish keeps the previous checkpoint loadable if we die mid-write
    fs::rename(tmp, path);
}

inline std::vector<NamedTensor> load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const uint32_t version = detail::get<uint32_t>(is);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const uint64_t manifest_offset = detail::get<uint64_t>(is);

    is.seekg(static_cast<std::streamoff>(manifest_offset));
    const uint64_t count = detail::get<uint64_t>(is);
    struct Entry {
        std::string name;
        std::vector<int> shape;
        uint64_t offset;
    };
    std::vector<Entry> entries(count);
    for (Entry& e : entries) {
        const uint32_t len = detail::get<uint32_t>(is);
        e.name.resize(len);
        is.read(e.name.data(), len);
        const uint32_t ndim = detail::get<uint32_t>(is);
        e.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) e.shape[d] = detail::get<int32_t>(is);
        e.offset = detail::get<uint64_t>(is);
        if (!is) throw IoError("checkpoint: truncated manifest");
    }

    std::vector<NamedTensor> out;
    out.reserve(count);
    for (const Entry& e : entries) {
        ad::Tensor t(e.shape);
        is.seekg(static_cast<std::streamoff>(e.offset));
        is.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!is) throw IoError("checkpoint: truncated payload for tensor " + e.name);
        out.push_back({e.name, std::move(t)});
    }
    return out;
}

} // namespace simpc::ckpt
