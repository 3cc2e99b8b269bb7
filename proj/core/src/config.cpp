#include "lclip/config.hpp"

#include <filesystem>
#include <fstream>

#include "lclip/common.hpp"
#include "lclip/hashing.hpp"

namespace lclip {

nlohmann::json RunManifest::to_json() const {
    return {{"command", command},
            {"version", version},
            {"seed", seed},
            {"input_hashes", input_hashes},
            {"output_hashes", output_hashes},
            {"volatile_outputs", volatile_outputs}};
}

void write_run_manifest(const std::string& out_dir, const std::string& command, uint64_t seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs,
                        const std::vector<std::string>& volatile_outputs) {
    RunManifest m;
    m.command = command;
    m.seed = seed;
    for (const std::string& p : inputs)
        if (std::filesystem::exists(p) && std::filesystem::is_regular_file(p))
            m.input_hashes[p] = sha256_file(p);
    for (const std::string& p : outputs) m.output_hashes[p] = sha256_file(p);
    m.volatile_outputs = volatile_outputs;
    write_text_file(out_dir + "/run.json", m.to_json().dump(2) + "\n");
}

void write_text_file(const std::string& path, const std::string& content) {
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "write_text_file: cannot open ", path);
    out << content;
    out.flush();
    check(out.good(), "write_text_file: write failed for ", path);
}

} // namespace lclip
