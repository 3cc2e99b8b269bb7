#pragma once

#include "lclip/reward.hpp"

namespace lclip {

// Timing comparison of the decode-free latent reward path against the
// decode-then-pixel-CLIP path, plus the oracle-scored compositional
// evaluation.

struct TimingPath {
    double gen_fb_ms = 0;     // per-iteration medians over repeats
    double decode_fb_ms = 0;
    double reward_fb_ms = 0;
    double per_iter_ms = 0;
    double total_s = 0;       // full timed run (median over repeats)
    double final_reward = 0;  // determinism witness
};

struct TimingReport {
    TimingPath latent, pixel;
    double standalone_decode_fb_ms = 0; // one decode forward+backward
    int iterations = 0, warmup = 0, repeats = 0;
    uint64_t latent_loop_decode_calls = 0; // decode-counter delta, must be 0
    std::string environment;

    nlohmann::json to_json() const;
    std::vector<std::vector<std::string>> to_csv_rows() const;
};

// Runs the identical ReNO loop on both paths (same generator, same step
// count, same update rule); only the reward input pathway differs.
TimingReport time_reward_paths(const GeneratorModel<float>& gen, const VaeModel<float>& vae,
                               const ClipModel<float>& latent_clip,
                               const ClipModel<float>& pixel_clip, const std::string& prompt,
                               int iterations = 50, int warmup = 5, int repeats = 5,
                               uint64_t seed = 0, const RenoConfig& reno = {});

// prompt suite ---------------------------------------------------------------

struct PromptCase {
    std::string category; // color_binding | shape_binding | counting | two_object
    std::string prompt;
};

// Grammar-drawn prompts, fixed seed; the committed suite lives in
// assets/prompt_suite.json.
std::vector<PromptCase> build_prompt_suite(int per_category, uint64_t seed);
std::vector<PromptCase> load_prompt_suite(const std::string& path);
void save_prompt_suite(const std::vector<PromptCase>& suite, const std::string& path);

struct CompositionReport {
    struct Category {
        std::string name;
        int64_t n = 0;
        double success_rate = 0;
    };
    std::vector<Category> categories;
    double aesthetic = 0; // mean oracle edge sharpness of the decoded outputs
    int n_seeds = 0;
    bool optimized = false; // reward-guided or baseline generation

    double rate_of(const std::string& category) const;
    nlohmann::json to_json() const;
    std::vector<std::vector<std::string>> to_csv_rows() const;
};

// generate -> decode (evaluation only) -> analyze_scene -> compare against
// the prompt's attributes; success is the exact attribute match per category.
CompositionReport compositional_eval(const GeneratorModel<float>& gen,
                                     const VaeModel<float>& vae,
                                     const std::vector<RewardTerm<float>>* rewards,
                                     const RenoConfig& reno_cfg,
                                     const std::vector<PromptCase>& suite, int n_seeds,
                                     uint64_t seed);

// report emission ------------------------------------------------------------

// Sorted-key UTF-8 JSON.
void emit_report_json(const nlohmann::json& report, const std::string& path);
// RFC-4180: CRLF rows, quotes doubled, fields quoted when needed.
void emit_report_csv(const std::vector<std::vector<std::string>>& rows, const std::string& path);

} // namespace lclip
