#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lclip {

inline constexpr const char* kProjectVersion = "0.1.0";

// Machine-readable record of one subcommand run: what ran, with which seed,
// over which inputs, producing which outputs. Timing-bearing files are listed
// as volatile; everything else must rerun to identical hashes.
struct RunManifest {
    std::string command;
    std::string version = kProjectVersion;
    uint64_t seed = 0;
    std::map<std::string, std::string> input_hashes;
    std::map<std::string, std::string> output_hashes;
    std::vector<std::string> volatile_outputs;

    nlohmann::json to_json() const;
};

// Writes <out_dir>/run.json; hashes every listed file.
void write_run_manifest(const std::string& out_dir, const std::string& command, uint64_t seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs,
                        const std::vector<std::string>& volatile_outputs = {});

void write_text_file(const std::string& path, const std::string& content);

} // namespace lclip
