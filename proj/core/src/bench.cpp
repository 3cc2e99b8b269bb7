#include "lclip/bench.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

namespace lclip {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

// Smallest observable nonzero clock delta.
double clock_resolution_us() {
    double best = 1e9;
    for (int i = 0; i < 64; ++i) {
        const auto t0 = Clock::now();
        auto t1 = Clock::now();
        while (t1 == t0) t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    return best;
}

double median(std::vector<double> v) {
    check(!v.empty(), "median of empty set");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct PathRun {
    RenoSectionTimers timers; // timed iterations only
    double total_ms = 0;
    double final_reward = 0;
};

// warmup + timed ReNO iterations with the shared staged loop body
PathRun run_path(const GeneratorModel<float>& gen, const std::vector<RewardTerm<float>>& terms,
                 const TokenSequence& prompt, int iterations, int warmup, uint64_t seed,
                 const RenoConfig& cfg) {
    const TokenBatch prompt_batch = TokenBatch::from({prompt});
    const auto embeds = reward_text_embeds(terms, prompt);
    std::vector<float> eps = NoiseState::draw(seed).eps;

    PathRun run;
    const auto step = [&](bool timed) {
        RenoSectionTimers local;
        const auto t0 = Clock::now();
        auto ev = detail_reno::eval_objective(gen, terms, prompt_batch, embeds, eps, cfg.w_reg,
                                              true, timed ? &local : nullptr);
        const double wall = ms_between(t0, Clock::now());
        double norm_sq = 0;
        for (float g : ev.eps_grad) norm_sq += double(g) * g;
        const double denom = std::sqrt(norm_sq) / std::sqrt(double(eps.size())) + cfg.grad_eps;
        const double scale = cfg.step_size / denom;
        for (size_t i = 0; i < eps.size(); ++i)
            eps[i] = static_cast<float>(eps[i] + scale * ev.eps_grad[i]);
        if (timed) {
            run.timers.gen_fb += local.gen_fb;
            run.timers.decode_fb += local.decode_fb;
            run.timers.reward_fb += local.reward_fb;
            run.total_ms += wall;
            run.final_reward = ev.rewards.empty() ? 0 : ev.rewards[0];
        }
    };
    for (int i = 0; i < warmup; ++i) step(false);
    for (int i = 0; i < iterations; ++i) step(true);
    return run;
}

} // namespace

TimingReport time_reward_paths(const GeneratorModel<float>& gen, const VaeModel<float>& vae,
                               const ClipModel<float>& latent_clip,
                               const ClipModel<float>& pixel_clip, const std::string& prompt,
                               int iterations, int warmup, int repeats, uint64_t seed,
                               const RenoConfig& reno) {
    check(latent_clip.cfg.input_kind == "latent" && pixel_clip.cfg.input_kind == "pixel",
          "time_reward_paths: pass one latent and one pixel checkpoint");
    check(latent_clip.cfg.token_count() == pixel_clip.cfg.token_count(),
          "time_reward_paths: token counts differ (", latent_clip.cfg.token_count(), " vs ",
          pixel_clip.cfg.token_count(), "); the comparison would be unfair");
    check(iterations >= 1 && warmup >= 0 && repeats >= 1, "time_reward_paths: bad counts");
    const double res_us = clock_resolution_us();
    check(res_us <= 1.0, "time_reward_paths: clock resolution ", res_us,
          " us is insufficient (need <= 1 us)");

    const TokenSequence prompt_tokens = Tokenizer::instance().tokenize(prompt);
    RewardTerm<float> latent_term{RewardKind::ClipScore, &latent_clip, nullptr, 1.0, ""};
    RewardTerm<float> pixel_term{RewardKind::ClipScore, &pixel_clip, &vae, 1.0, ""};

    TimingReport rep;
    rep.iterations = iterations;
    rep.warmup = warmup;
    rep.repeats = repeats;

    const auto summarize = [&](const std::vector<PathRun>& runs) {
        TimingPath p;
        std::vector<double> gen, dec, rew, iter, tot;
        for (const auto& r : runs) {
            gen.push_back(r.timers.gen_fb / iterations);
            dec.push_back(r.timers.decode_fb / iterations);
            rew.push_back(r.timers.reward_fb / iterations);
            iter.push_back(r.total_ms / iterations);
            tot.push_back(r.total_ms / 1000.0);
        }
        p.gen_fb_ms = median(gen);
        p.decode_fb_ms = median(dec);
        p.reward_fb_ms = median(rew);
        p.per_iter_ms = median(iter);
        p.total_s = median(tot);
        p.final_reward = runs.back().final_reward;
        return p;
    };

    const uint64_t decode_calls_before = vae_decode_calls();
    std::vector<PathRun> latent_runs;
    for (int r = 0; r < repeats; ++r)
        latent_runs.push_back(
            run_path(gen, {latent_term}, prompt_tokens, iterations, warmup, seed, reno));
    rep.latent_loop_decode_calls = vae_decode_calls() - decode_calls_before;
    rep.latent = summarize(latent_runs);

    std::vector<PathRun> pixel_runs;
    for (int r = 0; r < repeats; ++r)
        pixel_runs.push_back(
            run_path(gen, {pixel_term}, prompt_tokens, iterations, warmup, seed, reno));
    rep.pixel = summarize(pixel_runs);

    // standalone decode forward+backward on a fresh latent
    {
        Rng rng(Rng::derive_seed(seed, 0xdec0));
        std::vector<double> times;
        for (int r = 0; r < std::max(repeats, 5); ++r) {
            TensorF z =
                TensorF::randn({1, kLatentSide, kLatentSide, kLatentChannels}, rng)
                    .set_requires_grad();
            const auto t0 = Clock::now();
            backward(ops::sum(vae.decode(z)));
            times.push_back(ms_between(t0, Clock::now()));
        }
        rep.standalone_decode_fb_ms = median(times);
    }

    std::ostringstream env;
    env << "threads=" << std::thread::hardware_concurrency() << " scalar=f32 clock_res_us="
        << res_us;
    rep.environment = env.str();
    return rep;
}

json TimingReport::to_json() const {
    const auto path_json = [](const TimingPath& p) {
        return json{{"gen_fb_ms", p.gen_fb_ms},       {"decode_fb_ms", p.decode_fb_ms},
                    {"reward_fb_ms", p.reward_fb_ms}, {"per_iter_ms", p.per_iter_ms},
                    {"total_s", p.total_s},           {"final_reward", p.final_reward}};
    };
    return {{"latent", path_json(latent)},
            {"pixel", path_json(pixel)},
            {"standalone_decode_fb_ms", standalone_decode_fb_ms},
            {"iterations", iterations},
            {"warmup", warmup},
            {"repeats", repeats},
            {"latent_loop_decode_calls", latent_loop_decode_calls},
            {"environment", environment}};
}

std::vector<std::vector<std::string>> TimingReport::to_csv_rows() const {
    const auto fmt = [](double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    };
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"path", "gen_fb_ms", "decode_fb_ms", "reward_fb_ms", "per_iter_ms",
                    "total_s"});
    rows.push_back({"latent", fmt(latent.gen_fb_ms), fmt(latent.decode_fb_ms),
                    fmt(latent.reward_fb_ms), fmt(latent.per_iter_ms), fmt(latent.total_s)});
    rows.push_back({"pixel", fmt(pixel.gen_fb_ms), fmt(pixel.decode_fb_ms),
                    fmt(pixel.reward_fb_ms), fmt(pixel.per_iter_ms), fmt(pixel.total_s)});
    return rows;
}

std::vector<PromptCase> build_prompt_suite(int per_category, uint64_t seed) {
    check(per_category >= 1, "build_prompt_suite: per_category must be >= 1");
    Rng rng(Rng::derive_seed(seed, 0x5017e));
    std::vector<PromptCase> suite;
    const auto color = [&] {
        return std::string(color_name(static_cast<ColorName>(rng.uniform_int(kObjectColorCount))));
    };
    const auto shape = [&] {
        return std::string(shape_name(static_cast<ShapeKind>(rng.uniform_int(kShapeCount))));
    };
    for (int i = 0; i < per_category; ++i)
        suite.push_back({"color_binding", strcat_all("a ", color(), " ", shape())});
    for (int i = 0; i < per_category; ++i)
        suite.push_back({"shape_binding", strcat_all("a ", color(), " ", shape())});
    for (int i = 0; i < per_category; ++i) {
        const char* count = rng.uniform() < 0.5 ? "two" : "three";
        suite.push_back({"counting", strcat_all(count, " ", color(), " ", shape(), "s")});
    }
    for (int i = 0; i < per_category; ++i) {
        std::string a_color = color(), a_shape = shape(), b_color = color(), b_shape = shape();
        while (a_color == b_color && a_shape == b_shape) {
            b_color = color();
            b_shape = shape();
        }
        suite.push_back({"two_object", strcat_all("a ", a_color, " ", a_shape, " and a ",
                                                  b_color, " ", b_shape)});
    }
    return suite;
}

void save_prompt_suite(const std::vector<PromptCase>& suite, const std::string& path) {
    json arr = json::array();
    for (const auto& p : suite) arr.push_back({{"category", p.category}, {"prompt", p.prompt}});
    emit_report_json(arr, path);
}

std::vector<PromptCase> load_prompt_suite(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "load_prompt_suite: cannot open ", path);
    json arr;
    in >> arr;
    std::vector<PromptCase> suite;
    for (const auto& item : arr)
        suite.push_back({item.at("category").get<std::string>(),
                         item.at("prompt").get<std::string>()});
    check(!suite.empty(), "load_prompt_suite: empty suite in ", path);
    return suite;
}

namespace {

struct PromptExpectation {
    std::vector<std::pair<ColorName, ShapeKind>> objects;
    int count = 1; // for counting prompts, applies to objects[0]
};

PromptExpectation parse_prompt(const std::string& prompt) {
    std::istringstream ss(prompt);
    std::vector<std::string> words;
    for (std::string w; ss >> w;) words.push_back(w);
    check(words.size() >= 3, "prompt outside the grammar: ", prompt);
    PromptExpectation ex;
    if (words[0] == "a") {
        ex.objects.emplace_back(color_from_name(words.at(1)), shape_from_name(words.at(2)));
        if (words.size() == 7 && words[3] == "and") {
            check(words[4] == "a", "prompt outside the grammar: ", prompt);
            ex.objects.emplace_back(color_from_name(words.at(5)), shape_from_name(words.at(6)));
        } else {
            check(words.size() == 3, "prompt outside the grammar: ", prompt);
        }
    } else if (words[0] == "two" || words[0] == "three") {
        ex.count = words[0] == "two" ? 2 : 3;
        std::string shape_word = words.at(2);
        check(!shape_word.empty() && shape_word.back() == 's',
              "prompt outside the grammar: ", prompt);
        shape_word.pop_back();
        ex.objects.emplace_back(color_from_name(words.at(1)), shape_from_name(shape_word));
        check(words.size() == 3, "prompt outside the grammar: ", prompt);
    } else {
        fail("prompt outside the grammar: ", prompt);
    }
    return ex;
}

bool prompt_success(const std::string& category, const PromptExpectation& ex,
                    const SceneAnalysis& analysis) {
    if (category == "color_binding") return analysis.has_color(ex.objects[0].first);
    if (category == "shape_binding") {
        for (const auto& o : analysis.objects)
            if (o.shape == ex.objects[0].second) return true;
        return false;
    }
    if (category == "counting")
        return analysis.count_of(ex.objects[0].first, ex.objects[0].second) == ex.count;
    if (category == "two_object")
        return analysis.has_object(ex.objects[0].first, ex.objects[0].second) &&
               analysis.has_object(ex.objects[1].first, ex.objects[1].second);
    fail("compositional_eval: unknown category \"", category, "\"");
}

} // namespace

double CompositionReport::rate_of(const std::string& category) const {
    for (const auto& c : categories)
        if (c.name == category) return c.success_rate;
    fail("CompositionReport: no category \"", category, "\"");
}

CompositionReport compositional_eval(const GeneratorModel<float>& gen,
                                     const VaeModel<float>& vae,
                                     const std::vector<RewardTerm<float>>* rewards,
                                     const RenoConfig& reno_cfg,
                                     const std::vector<PromptCase>& suite, int n_seeds,
                                     uint64_t seed) {
    check(!suite.empty(), "compositional_eval: empty prompt suite");
    check(n_seeds >= 1, "compositional_eval: n_seeds must be >= 1");
    const auto& tok = Tokenizer::instance();

    std::map<std::string, std::pair<int64_t, int64_t>> tally; // category -> (success, n)
    double sharp_sum = 0;
    int64_t sharp_n = 0;
    for (const auto& pc : suite) {
        const PromptExpectation ex = parse_prompt(pc.prompt);
        const TokenSequence prompt_tokens = tok.tokenize(pc.prompt);
        for (int s = 0; s < n_seeds; ++s) {
            const uint64_t es = Rng::derive_seed(
                seed, 0xc0de ^ (std::hash<std::string>{}(pc.prompt) + static_cast<uint64_t>(s)));
            const NoiseState eps = NoiseState::draw(es);
            LatentImage z;
            if (rewards && !rewards->empty()) {
                auto trace = reno_optimize(gen, *rewards, prompt_tokens, eps, reno_cfg);
                check(!trace.aborted, "compositional_eval: optimization aborted: ",
                      trace.abort_reason);
                z = trace.final_latent;
            } else {
                z = generate_latent(gen, eps, prompt_tokens);
            }
            const SceneAnalysis analysis = analyze_scene(vae_decode_image(vae, z));
            auto& t = tally[pc.category];
            t.first += prompt_success(pc.category, ex, analysis) ? 1 : 0;
            t.second += 1;
            sharp_sum += analysis.edge_sharpness;
            ++sharp_n;
        }
    }

    CompositionReport rep;
    rep.n_seeds = n_seeds;
    rep.optimized = rewards && !rewards->empty();
    rep.aesthetic = sharp_sum / double(sharp_n);
    for (const auto& [name, t] : tally)
        rep.categories.push_back({name, t.second, double(t.first) / double(t.second)});
    return rep;
}

json CompositionReport::to_json() const {
    json cats = json::array();
    for (const auto& c : categories)
        cats.push_back({{"name", c.name}, {"n", c.n}, {"success_rate", c.success_rate}});
    return {{"categories", cats},
            {"aesthetic_edge_sharpness", aesthetic},
            {"n_seeds", n_seeds},
            {"optimized", optimized}};
}

std::vector<std::vector<std::string>> CompositionReport::to_csv_rows() const {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"category", "n", "success_rate"});
    for (const auto& c : categories) {
        std::ostringstream rate;
        rate << c.success_rate;
        rows.push_back({c.name, std::to_string(c.n), rate.str()});
    }
    return rows;
}

void emit_report_json(const json& report, const std::string& path) {
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "emit_report_json: cannot open ", path);
    out << report.dump(2) << "\n";
    check(out.good(), "emit_report_json: write failed for ", path);
}

void emit_report_csv(const std::vector<std::vector<std::string>>& rows, const std::string& path) {
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "emit_report_csv: cannot open ", path);
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            const std::string& f = row[i];
            if (f.find_first_of(",\"\r\n") != std::string::npos) {
                out << '"';
                for (char ch : f) {
                    if (ch == '"') out << '"';
                    out << ch;
                }
                out << '"';
            } else {
                out << f;
            }
        }
        out << "\r\n";
    }
    check(out.good(), "emit_report_csv: write failed for ", path);
}

} // namespace lclip
