#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lclip/scene.hpp"
#include "lclip/tokenizer.hpp"

namespace lclip {

inline constexpr uint16_t kNoClass = 0xFFFF; // multi-object records carry no class id
inline constexpr int kLatentChannels = 4;
inline constexpr int kLatentSide = 8;
inline constexpr int kLatentSize = kLatentChannels * kLatentSide * kLatentSide; // 256

struct DatasetRecord {
    uint16_t class_id = kNoClass;
    TokenSequence tokens;
    PixelImage image;
};

struct DatasetManifest {
    int version = 1;
    int64_t record_count = 0;
    std::vector<int64_t> class_counts;  // kClassCount entries + trailing unlabeled count
    std::vector<std::string> class_list;
    std::vector<std::string> vocabulary;
    std::string payload_sha256;
    std::string provenance = "rendered"; // rendered | generated
    std::string latents_sha256;          // empty until latents.bin exists
};

struct DatasetBuildConfig {
    int64_t size = 0;
    uint64_t seed_start = 0;
    GrammarConfig grammar;
};

// On-disk layout: <dir>/manifest.json + records.bin (+ optional latents.bin).
// records.bin holds fixed little-endian records:
//   u16 class_id, u16 token_count, 16 x u16 token ids, 12288 x u8 RGB pixels.
// latents.bin holds one 256 x f32 latent per record in (channel, row, col)
// nesting.
class Dataset {
public:
    static Dataset build(const DatasetBuildConfig& cfg, const std::string& dir);
    static Dataset load(const std::string& dir);

    // Assembles a generated-provenance dataset from prepared records/latents.
    static Dataset write(const std::string& dir, const std::vector<DatasetRecord>& records,
                         const std::vector<float>& latents, const std::string& provenance);

    int64_t size() const { return static_cast<int64_t>(records_.size()); }
    const DatasetRecord& record(int64_t i) const { return records_[static_cast<size_t>(i)]; }
    const DatasetManifest& manifest() const { return manifest_; }
    const std::string& dir() const { return dir_; }

    bool has_latents() const { return !latents_.empty(); }
    std::span<const float> latent(int64_t i) const;

    // Writes latents.bin (kLatentSize floats per record) and re-emits the
    // manifest with its hash.
    void attach_latents(std::vector<float> latents);

private:
    std::string dir_;
    DatasetManifest manifest_;
    std::vector<DatasetRecord> records_;
    std::vector<float> latents_;
};

} // namespace lclip
