#include "univ2d/archive.hpp"

#include "univ2d/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace univ2d {

namespace {

constexpr char kMagic[8] = {'U', 'V', '2', 'D', 'A', 'R', 'C', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive IO assumes a little-endian host");

} // namespace

void Archive::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    manifest["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : arrays) {
        const Shape s = t.shape();
        manifest["arrays"].push_back(
            {{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
        offset += t.numel();
    }
    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ArchiveError("cannot write " + path);
    }
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, t] : arrays) {
        out.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) {
        throw ArchiveError("write failed for " + path);
    }
}

Archive Archive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ArchiveError("cannot open " + path);
    }
    char magic[8] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ArchiveError(path + " is not a univ2d archive");
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ULL << 30)) {
        throw ArchiveError(path + ": corrupt manifest length");
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) {
        throw ArchiveError(path + ": truncated manifest");
    }
    Archive ar;
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
        ar.meta = manifest.value("meta", nlohmann::json::object());
        const auto payload_start = in.tellg();
        for (const auto& entry : manifest.at("arrays")) {
            const auto name = entry.at("name").get<std::string>();
            const auto dims = entry.at("shape").get<std::vector<int>>();
            if (dims.size() != 4) {
                throw ArchiveError(path + ": array " + name + " must have 4 dims");
            }
            const Shape s{dims[0], dims[1], dims[2], dims[3]};
            const auto offset = entry.at("offset").get<std::uint64_t>();
            Tensor t(s);
            in.seekg(payload_start + static_cast<std::streamoff>(offset * sizeof(double)));
            in.read(reinterpret_cast<char*>(t.ptr()),
                    static_cast<std::streamsize>(t.numel() * sizeof(double)));
            if (!in) {
                throw ArchiveError(path + ": truncated payload for " + name);
            }
            ar.arrays.emplace(name, std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(path + ": bad manifest: " + e.what());
    }
    return ar;
}

} // namespace univ2d
