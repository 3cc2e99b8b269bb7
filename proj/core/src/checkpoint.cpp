#include "lclip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace lclip {

using nlohmann::json;

void Checkpoint::save(const std::string& path) const {
    check(!model_kind.empty(), "checkpoint save: model_kind must be set");
    json index = json::object();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
        index[name] = {{"dtype", "f32"},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"length", bytes}};
        offset += bytes;
    }
    json header = {{"model_kind", model_kind}, {"config", config}, {"tensors", index}};
    const std::string header_str = header.dump();
    const uint64_t header_len = header_str.size();

    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "checkpoint save: cannot open ", path);
    out.write("LCKP", 4);
    const uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_len));
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t.values().data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(float)));
    out.flush();
    check(out.good(), "checkpoint save: write failed for ", path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "checkpoint load: cannot open ", path);
    char magic[4];
    in.read(magic, 4);
    check(in.good() && std::memcmp(magic, "LCKP", 4) == 0,
          "checkpoint load: ", path, " is not an LCKP file");
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    check(version == kVersion, "checkpoint load: unsupported version ", version);
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    check(in.good() && header_len > 0 && header_len < (1ull << 30),
          "checkpoint load: corrupt header length");
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    check(in.good(), "checkpoint load: truncated header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        fail("checkpoint load: bad JSON header in ", path, ": ", e.what());
    }

    Checkpoint ckpt;
    ckpt.model_kind = header.at("model_kind").get<std::string>();
    ckpt.config = header.at("config");

    std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    for (const auto& [name, meta] : header.at("tensors").items()) {
        check(meta.at("dtype").get<std::string>() == "f32",
              "checkpoint load: tensor ", name, " has unsupported dtype");
        const Shape shape = meta.at("shape").get<Shape>();
        const uint64_t offset = meta.at("offset").get<uint64_t>();
        const uint64_t length = meta.at("length").get<uint64_t>();
        check(length == static_cast<uint64_t>(numel_of(shape)) * sizeof(float),
              "checkpoint load: tensor ", name, " length/shape mismatch");
        check(offset + length <= payload.size(),
              "checkpoint load: tensor ", name, " exceeds the payload");
        std::vector<float> values(static_cast<size_t>(numel_of(shape)));
        std::memcpy(values.data(), payload.data() + offset, length);
        ckpt.tensors.emplace(name, TensorF::from(shape, std::move(values)));
    }
    return ckpt;
}

const TensorF& Checkpoint::tensor(const std::string& name) const {
    const auto it = tensors.find(name);
    check(it != tensors.end(), "checkpoint: missing tensor \"", name, "\" (model_kind ",
          model_kind, ")");
    return it->second;
}

void Checkpoint::put(const std::string& name, const TensorF& t) {
    check(!tensors.count(name), "checkpoint: duplicate tensor name \"", name, "\"");
    tensors.emplace(name, t);
}

} // namespace lclip
