#include "lclip/dataset.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lclip/hashing.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset format assumes a little-endian host");

namespace lclip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr size_t kPixelBytes = static_cast<size_t>(kCanvas) * kCanvas * 3;
constexpr size_t kRecordBytes = 2 + 2 + 2 * kMaxTokens + kPixelBytes;

void append_record(std::vector<uint8_t>& out, const DatasetRecord& r) {
    const uint16_t token_count = static_cast<uint16_t>(r.tokens.content_count());
    out.insert(out.end(), reinterpret_cast<const uint8_t*>(&r.class_id),
               reinterpret_cast<const uint8_t*>(&r.class_id) + 2);
    out.insert(out.end(), reinterpret_cast<const uint8_t*>(&token_count),
               reinterpret_cast<const uint8_t*>(&token_count) + 2);
    out.insert(out.end(), reinterpret_cast<const uint8_t*>(r.tokens.ids.data()),
               reinterpret_cast<const uint8_t*>(r.tokens.ids.data()) + 2 * kMaxTokens);
    out.insert(out.end(), r.image.rgb.begin(), r.image.rgb.end());
}

json manifest_to_json(const DatasetManifest& m) {
    json j;
    j["version"] = m.version;
    j["record_count"] = m.record_count;
    j["class_counts"] = m.class_counts;
    j["class_list"] = m.class_list;
    j["vocabulary"] = m.vocabulary;
    j["payload_sha256"] = m.payload_sha256;
    j["provenance"] = m.provenance;
    if (!m.latents_sha256.empty()) j["latents_sha256"] = m.latents_sha256;
    return j;
}

void write_manifest(const std::string& dir, const DatasetManifest& m) {
    std::ofstream out(dir + "/manifest.json", std::ios::binary);
    check(out.good(), "dataset: cannot write manifest in ", dir);
    out << manifest_to_json(m).dump(2) << "\n";
    check(out.good(), "dataset: manifest write failed in ", dir);
}

void write_file_or_cleanup(const std::string& dir, const std::string& name,
                           const std::vector<uint8_t>& bytes) {
    const std::string path = dir + "/" + name;
    std::ofstream out(path, std::ios::binary);
    if (!out.good()) fail("dataset: cannot open ", path, " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out.good()) {
        out.close();
        std::error_code ec;
        fs::remove(path, ec); // leave no partial payload behind
        fail("dataset: write failed for ", path);
    }
}

DatasetManifest make_manifest(const std::vector<DatasetRecord>& records,
                              const std::string& payload_hash, const std::string& provenance) {
    DatasetManifest m;
    m.record_count = static_cast<int64_t>(records.size());
    m.class_counts.assign(kClassCount + 1, 0);
    for (const auto& r : records) {
        if (r.class_id == kNoClass)
            ++m.class_counts[kClassCount];
        else
            ++m.class_counts[r.class_id];
    }
    m.class_list = all_class_labels();
    m.vocabulary = Tokenizer::instance().vocabulary();
    m.payload_sha256 = payload_hash;
    m.provenance = provenance;
    return m;
}

} // namespace

Dataset Dataset::build(const DatasetBuildConfig& cfg, const std::string& dir) {
    check(cfg.size >= 1, "dataset build: requested size must be >= 1");
    fs::create_directories(dir);

    Dataset ds;
    ds.dir_ = dir;
    ds.records_.reserve(static_cast<size_t>(cfg.size));
    std::vector<uint8_t> payload;
    payload.reserve(static_cast<size_t>(cfg.size) * kRecordBytes);
    const auto& tok = Tokenizer::instance();
    for (int64_t i = 0; i < cfg.size; ++i) {
        const SceneSample sample = sample_scene(cfg.seed_start + static_cast<uint64_t>(i),
                                                cfg.grammar);
        DatasetRecord rec;
        rec.class_id = sample.class_id < 0 ? kNoClass : static_cast<uint16_t>(sample.class_id);
        rec.tokens = tok.tokenize(sample.caption);
        rec.image = render_scene(sample.spec);
        append_record(payload, rec);
        ds.records_.push_back(std::move(rec));
    }
    const std::string payload_hash = sha256_hex(payload);
    write_file_or_cleanup(dir, "records.bin", payload);
    ds.manifest_ = make_manifest(ds.records_, payload_hash, "rendered");
    write_manifest(dir, ds.manifest_);
    return ds;
}

Dataset Dataset::write(const std::string& dir, const std::vector<DatasetRecord>& records,
                       const std::vector<float>& latents, const std::string& provenance) {
    check(!records.empty(), "dataset write: no records");
    check(latents.size() == records.size() * static_cast<size_t>(kLatentSize),
          "dataset write: latent payload must hold ", kLatentSize, " floats per record");
    fs::create_directories(dir);
    Dataset ds;
    ds.dir_ = dir;
    ds.records_ = records;
    std::vector<uint8_t> payload;
    payload.reserve(records.size() * kRecordBytes);
    for (const auto& r : records) append_record(payload, r);
    const std::string payload_hash = sha256_hex(payload);
    write_file_or_cleanup(dir, "records.bin", payload);
    ds.manifest_ = make_manifest(ds.records_, payload_hash, provenance);
    write_manifest(dir, ds.manifest_);
    ds.attach_latents(latents);
    return ds;
}

Dataset Dataset::load(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    check(mf.good(), "dataset: missing manifest.json in ", dir);
    json j;
    mf >> j;

    Dataset ds;
    ds.dir_ = dir;
    DatasetManifest& m = ds.manifest_;
    m.version = j.at("version").get<int>();
    check(m.version == 1, "dataset: unsupported manifest version ", m.version);
    m.record_count = j.at("record_count").get<int64_t>();
    m.class_counts = j.at("class_counts").get<std::vector<int64_t>>();
    m.class_list = j.at("class_list").get<std::vector<std::string>>();
    m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    m.payload_sha256 = j.at("payload_sha256").get<std::string>();
    m.provenance = j.at("provenance").get<std::string>();
    if (j.contains("latents_sha256")) m.latents_sha256 = j["latents_sha256"].get<std::string>();
    check(m.vocabulary == Tokenizer::instance().vocabulary(),
          "dataset: vocabulary in ", dir, " does not match this build's tokenizer");

    const std::string rec_path = dir + "/records.bin";
    std::ifstream in(rec_path, std::ios::binary);
    check(in.good(), "dataset: missing records.bin in ", dir);
    std::vector<uint8_t> payload((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
    check(payload.size() == static_cast<size_t>(m.record_count) * kRecordBytes,
          "dataset: records.bin holds ", payload.size(), " bytes, manifest expects ",
          static_cast<size_t>(m.record_count) * kRecordBytes);
    check(sha256_hex(payload) == m.payload_sha256,
          "dataset: records.bin hash does not match the manifest in ", dir);

    ds.records_.resize(static_cast<size_t>(m.record_count));
    const uint8_t* p = payload.data();
    for (auto& rec : ds.records_) {
        std::memcpy(&rec.class_id, p, 2);
        p += 4; // skip token_count, recomputable from the ids
        std::memcpy(rec.tokens.ids.data(), p, 2 * kMaxTokens);
        p += 2 * kMaxTokens;
        rec.image.rgb.assign(p, p + kPixelBytes);
        p += kPixelBytes;
        Tokenizer::instance().validate(rec.tokens);
    }

    const std::string lat_path = dir + "/latents.bin";
    if (fs::exists(lat_path)) {
        std::ifstream lin(lat_path, std::ios::binary);
        check(lin.good(), "dataset: cannot open ", lat_path);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(lin)),
                                   std::istreambuf_iterator<char>());
        check(bytes.size() == static_cast<size_t>(m.record_count) * kLatentSize * sizeof(float),
              "dataset: latents.bin has unexpected size");
        if (!m.latents_sha256.empty())
            check(sha256_hex(bytes) == m.latents_sha256,
                  "dataset: latents.bin hash does not match the manifest");
        ds.latents_.resize(static_cast<size_t>(m.record_count) * kLatentSize);
        std::memcpy(ds.latents_.data(), bytes.data(), bytes.size());
    }
    return ds;
}

std::span<const float> Dataset::latent(int64_t i) const {
    check(has_latents(), "dataset: latents.bin not present in ", dir_,
          " (run train-vae with latent emission first)");
    return {latents_.data() + static_cast<size_t>(i) * kLatentSize,
            static_cast<size_t>(kLatentSize)};
}

void Dataset::attach_latents(std::vector<float> latents) {
    check(latents.size() == records_.size() * static_cast<size_t>(kLatentSize),
          "attach_latents: expected ", records_.size() * kLatentSize, " floats, got ",
          latents.size());
    latents_ = std::move(latents);
    std::vector<uint8_t> bytes(latents_.size() * sizeof(float));
    std::memcpy(bytes.data(), latents_.data(), bytes.size());
    write_file_or_cleanup(dir_, "latents.bin", bytes);
    manifest_.latents_sha256 = sha256_hex(bytes);
    write_manifest(dir_, manifest_);
}

} // namespace lclip
