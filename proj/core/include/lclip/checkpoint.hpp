#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "lclip/tensor.hpp"

namespace lclip {

// Shared checkpoint container: magic "LCKP", u32 version, u64 little-endian
// JSON header length, JSON header {model_kind, config, tensor index}, then
// the raw little-endian f32 payload. Round-trips are bit-exact.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    std::string model_kind;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, TensorF> tensors; // name order fixes payload layout

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    const TensorF& tensor(const std::string& name) const;
    void put(const std::string& name, const TensorF& t);
};

} // namespace lclip
