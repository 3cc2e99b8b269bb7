// Acceptance suite: trains the full desk-scale pipeline through the lclip
// CLI, then checks every acceptance criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero when any fails.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lclip/bench.hpp"
#include "lclip/clip_train.hpp"
#include "lclip/hashing.hpp"
#include "lclip/reward.hpp"
#include "lclip/vae.hpp"
#include "lclip/zeroshot.hpp"
#include "support/gradient_suite.hpp"

using namespace lclip;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
    int id;
    std::string name;
    bool pass = false;
    std::string detail;
};

std::vector<Criterion> g_results;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    g_results.push_back({id, name, pass, detail});
    std::cout << "[" << id << "/9] " << name << " "
              << std::string(name.size() < 34 ? 34 - name.size() : 1, '.') << " "
              << (pass ? "PASS" : "FAIL") << "  (" << detail << ")" << std::endl;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Pipeline {
    std::string lclip;
    std::string work;

    std::string data(const std::string& n) const { return work + "/data/" + n; }
    std::string run(const std::string& n) const { return work + "/runs/" + n; }

    int exec(const std::string& args) const {
        const std::string cmd = lclip + " " + args + " >> " + work + "/pipeline.log 2>&1";
        return std::system(cmd.c_str());
    }

    void must(const std::string& args) const {
        const int rc = exec(args);
        if (rc != 0) {
            std::cerr << "pipeline command failed (exit " << rc << "): lclip " << args
                      << "\nsee " << work << "/pipeline.log" << std::endl;
            std::exit(2);
        }
    }
};

// desk-run shape: sizes and seeds shared with the README pipeline
constexpr int64_t kTrainSize = 8000;
constexpr int64_t kGenTrainSize = 8000;
constexpr int64_t kValSize = 1000;
constexpr int64_t kTestSize = 1000;
constexpr double kBiasProb = 0.35;
constexpr int64_t kVaeSteps = 1600;
constexpr int64_t kClipSteps = 1000;
constexpr int64_t kClipBatch = 128;
constexpr int64_t kGenSteps = 2200;

double train_time_latent_s = 0, train_time_pixel_s = 0;

void build_pipeline(const Pipeline& p, bool rebuild) {
    const std::string marker = p.work + "/.pipeline_complete";
    if (!rebuild && fs::exists(marker)) {
        std::cout << "reusing pipeline artifacts in " << p.work << std::endl;
        // cached runs skip the timing check honestly: re-read the recorded times
        std::ifstream in(marker);
        in >> train_time_latent_s >> train_time_pixel_s;
        return;
    }
    fs::remove_all(p.work);
    fs::create_directories(p.work);
    std::cout << "building the desk-scale pipeline in " << p.work << " (logs: pipeline.log)"
              << std::endl;

    const auto t_all = Clock::now();
    p.must(strcat_all("synth-data --out ", p.data("train"), " --size ", kTrainSize,
                      " --seed-start 0"));
    p.must(strcat_all("synth-data --out ", p.data("gen-train"), " --size ", kGenTrainSize,
                      " --seed-start 20000000 --bias-prob ", kBiasProb,
                      " --bias-concept \"red circle\""));
    p.must(strcat_all("synth-data --out ", p.data("val"), " --size ", kValSize,
                      " --seed-start 40000000"));
    p.must(strcat_all("synth-data --out ", p.data("test"), " --size ", kTestSize,
                      " --seed-start 60000000 --max-objects 1"));
    std::cout << "  data built (" << seconds_since(t_all) << " s)" << std::endl;

    auto t0 = Clock::now();
    p.must(strcat_all("train-vae --train ", p.data("train"), " --val ", p.data("val"),
                      " --out ", p.run("vae"), " --steps ", kVaeSteps, " --batch 32 --seed 11",
                      " --emit-latents ", p.data("gen-train"), ",", p.data("test")));
    std::cout << "  vae trained (" << seconds_since(t0) << " s)" << std::endl;

    t0 = Clock::now();
    p.must(strcat_all("train-clip --input-kind latent --train ", p.data("train"), " --out ",
                      p.run("clip_latent"), " --steps ", kClipSteps, " --batch ", kClipBatch,
                      " --seed 12"));
    train_time_latent_s = seconds_since(t0);
    std::cout << "  latent clip trained (" << train_time_latent_s << " s)" << std::endl;

    t0 = Clock::now();
    p.must(strcat_all("train-clip --input-kind pixel --train ", p.data("train"), " --out ",
                      p.run("clip_pixel"), " --steps ", kClipSteps, " --batch ", kClipBatch,
                      " --seed 13"));
    train_time_pixel_s = seconds_since(t0);
    std::cout << "  pixel clip trained (" << train_time_pixel_s << " s)" << std::endl;

    t0 = Clock::now();
    p.must(strcat_all("train-gen --train ", p.data("gen-train"), " --val ", p.data("val"),
                      " --out ", p.run("gen"), " --steps ", kGenSteps, " --batch 64 --seed 14"));
    std::cout << "  generator trained (" << seconds_since(t0) << " s)" << std::endl;

    p.must(strcat_all("make-genbench --dataset ", p.data("test"), " --gen ",
                      p.run("gen"), "/generator.lckp --vae ", p.run("vae"),
                      "/vae.lckp --out ", p.data("genbench"), " --level 0.66 --seed 15"));
    std::cout << "  generated benchmark built; total pipeline " << seconds_since(t_all) << " s"
              << std::endl;

    std::ofstream marker_out(marker);
    marker_out << train_time_latent_s << " " << train_time_pixel_s << "\n";
}

// criterion 1: the 64-bit finite-difference suite in under two minutes
void criterion_gradients() {
    const auto t0 = Clock::now();
    const auto items = lclip::testing::run_gradient_suite(7);
    const double elapsed = seconds_since(t0);
    bool ok = elapsed < 120.0;
    double worst = 0;
    std::string worst_name = "-";
    for (const auto& item : items) {
        if (!item.result.ok) ok = false;
        if (item.result.max_rel_err > worst) {
            worst = item.result.max_rel_err;
            worst_name = item.name;
        }
    }
    report(1, "gradient suite (64-bit, <2 min)", ok,
           strcat_all(items.size(), " checks, worst rel err ", worst, " [", worst_name, "], ",
                      elapsed, " s"));
}

// criterion 2: closed-form loss identities at 1e-6
void criterion_loss_identities() {
    Rng rng(71);
    bool ok = true;
    std::string detail;

    // contrastive loss at uniform logits = ln B
    const int64_t b = 8, d = 16;
    std::vector<float> img_row(d), txt_row(d);
    for (auto& v : img_row) v = static_cast<float>(rng.normal());
    for (auto& v : txt_row) v = static_cast<float>(rng.normal());
    std::vector<float> img_all, txt_all;
    for (int64_t i = 0; i < b; ++i) {
        img_all.insert(img_all.end(), img_row.begin(), img_row.end());
        txt_all.insert(txt_all.end(), txt_row.begin(), txt_row.end());
    }
    const double lnb = contrastive_loss(
        ops::l2_normalize_rows(TensorF::from({b, d}, img_all)),
        ops::l2_normalize_rows(TensorF::from({b, d}, txt_all)),
        TensorF::from({1}, {1.3f})).item();
    const double err_lnb = std::abs(lnb - std::log(double(b)));
    ok = ok && err_lnb < 1e-6;

    // preference loss at zero gap = ln 2
    TensorF gap = TensorF::zeros({16, 1});
    const double ln2 =
        ops::mean(ops::softplus(ops::neg(ops::mul_scalar(gap, 14.0f)))).item();
    const double err_ln2 = std::abs(ln2 - std::log(2.0));
    ok = ok && err_ln2 < 1e-6;

    // negative_concept_reward + clipscore = 1
    EncoderConfig cfg = EncoderConfig::latent_desk();
    cfg.width = 32;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.embed_dim = 16;
    cfg.text_width = 32;
    cfg.text_layers = 1;
    cfg.text_heads = 2;
    ClipModel<float> clip = ClipModel<float>::init(cfg, rng);
    const TokenSequence n_tokens = Tokenizer::instance().tokenize("a red circle");
    double err_sum1 = 0;
    {
        NoGradGuard ng;
        TensorF embed = clip.encode_text(n_tokens);
        for (int rep = 0; rep < 5; ++rep) {
            TensorF z = TensorF::randn({1, 8, 8, 4}, rng);
            const double r = clipscore_reward<float>(clip, nullptr, z, embed).item();
            const double rn = negative_concept_reward<float>(clip, nullptr, z, embed).item();
            err_sum1 = std::max(err_sum1, std::abs(r + rn - 1.0));
        }
    }
    ok = ok && err_sum1 < 1e-6;

    // L_reg = 0 at standardized noise
    std::vector<float> raw(kLatentSize);
    for (auto& v : raw) v = static_cast<float>(rng.normal());
    double mean = 0;
    for (float v : raw) mean += v;
    mean /= raw.size();
    double var = 0;
    for (float v : raw) var += (v - mean) * (v - mean);
    var /= raw.size();
    for (auto& v : raw) v = static_cast<float>((v - mean) / std::sqrt(var));
    const double lreg = noise_regularizer(TensorF::from({1, 8, 8, 4}, raw)).item();
    ok = ok && std::abs(lreg) < 1e-6;

    report(2, "loss identities (1e-6)", ok,
           strcat_all("|CE-lnB|=", err_lnb, " |BT-ln2|=", err_ln2, " |r+rn-1|=", err_sum1,
                      " |Lreg|=", std::abs(lreg)));
}

struct EvalNumbers {
    double latent_test_top1 = 0;
    double pixel_test_top1 = 0;
    double latent_gen_top1 = 0;
    double retrieval = 0;
};

EvalNumbers criterion_zeroshot(const Pipeline& p) {
    ClipModel<float> latent_clip = clip_from_checkpoint<float>(
        Checkpoint::load(p.run("clip_latent") + "/clip.lckp"));
    ClipModel<float> pixel_clip = clip_from_checkpoint<float>(
        Checkpoint::load(p.run("clip_pixel") + "/clip.lckp"));
    Dataset test = Dataset::load(p.data("test"));
    Dataset genbench = Dataset::load(p.data("genbench"));
    Dataset train = Dataset::load(p.data("train"));

    const auto clf_latent = build_classifier(latent_clip, all_class_labels(), default_templates());
    const auto clf_pixel = build_classifier(pixel_clip, all_class_labels(), default_templates());

    EvalNumbers n;
    n.latent_test_top1 = evaluate(latent_clip, clf_latent, test, {1, 5}).top1();
    n.pixel_test_top1 = evaluate(pixel_clip, clf_pixel, test, {1, 5}).top1();
    n.latent_gen_top1 = evaluate(latent_clip, clf_latent, genbench, {1, 5}).top1();
    n.retrieval = retrieval_top1(latent_clip, train, 256, 4, 991);

    const double gap = std::abs(n.latent_test_top1 - n.pixel_test_top1);
    const bool time_ok = train_time_latent_s < 1800.0 && train_time_pixel_s < 1800.0;
    const bool ok = n.latent_test_top1 >= 0.90 && gap <= 0.05 && time_ok;
    report(3, "zero-shot parity (>=90%, gap<=5pt)", ok,
           strcat_all("latent ", n.latent_test_top1, ", pixel ", n.pixel_test_top1, ", gap ",
                      gap, ", train ", train_time_latent_s, "/", train_time_pixel_s,
                      " s, retrieval ", n.retrieval));

    const double gen_gap = std::abs(n.latent_gen_top1 - n.latent_test_top1);
    report(4, "generated-benchmark robustness", gen_gap <= 0.05,
           strcat_all("encoded ", n.latent_test_top1, " vs generated ", n.latent_gen_top1,
                      ", gap ", gen_gap));
    return n;
}

void criterion_reno(const Pipeline& p) {
    GeneratorModel<float> gen =
        generator_from_checkpoint<float>(Checkpoint::load(p.run("gen") + "/generator.lckp"));
    VaeModel<float> vae =
        vae_from_checkpoint<float>(Checkpoint::load(p.run("vae") + "/vae.lckp"));
    ClipModel<float> clip = clip_from_checkpoint<float>(
        Checkpoint::load(p.run("clip_latent") + "/clip.lckp"));

    std::vector<RewardTerm<float>> terms = {{RewardKind::ClipScore, &clip, nullptr, 1.0, ""}};
    RenoConfig cfg; // 50 steps, 0.05 step size, w_reg 0.01

    // 25 color-binding prompts x 8 seeds = 200 (prompt, seed) pairs
    const auto suite = build_prompt_suite(25, 77);
    std::vector<PromptCase> color_prompts;
    for (const auto& pc : suite)
        if (pc.category == "color_binding") color_prompts.push_back(pc);
    const int seeds_per_prompt = 8;

    int improved = 0, total = 0;
    int base_hits = 0, opt_hits = 0;
    std::vector<double> run_seconds;
    const auto& tok = Tokenizer::instance();
    for (const auto& pc : color_prompts) {
        const TokenSequence prompt = tok.tokenize(pc.prompt);
        const ColorName want = color_from_name(pc.prompt.substr(2, pc.prompt.find(' ', 2) - 2));
        for (int s = 0; s < seeds_per_prompt; ++s) {
            const NoiseState eps =
                NoiseState::draw(Rng::derive_seed(500 + static_cast<uint64_t>(s),
                                                  std::hash<std::string>{}(pc.prompt)));
            const auto t0 = Clock::now();
            const auto trace = reno_optimize(gen, terms, prompt, eps, cfg);
            run_seconds.push_back(seconds_since(t0));
            if (trace.aborted) continue;
            ++total;
            const double score0 = trace.steps.front().rewards[0];
            const double score1 = trace.steps.back().rewards[0];
            if (score1 > score0) ++improved;

            LatentImage z0;
            {
                NoGradGuard ng;
                z0 = LatentImage::from_tensor(
                    gen.generate(eps.to_tensor(), TokenBatch::from({prompt})),
                    LatentProvenance::Generated);
            }
            if (analyze_scene(vae_decode_image(vae, z0)).has_color(want)) ++base_hits;
            if (analyze_scene(vae_decode_image(vae, trace.final_latent)).has_color(want))
                ++opt_hits;
        }
    }
    std::sort(run_seconds.begin(), run_seconds.end());
    const double median_s = run_seconds[run_seconds.size() / 2];
    const double improve_frac = double(improved) / std::max(total, 1);
    const double base_rate = double(base_hits) / std::max(total, 1);
    const double opt_rate = double(opt_hits) / std::max(total, 1);
    const bool ok = total >= 200 && improve_frac >= 0.90 && (opt_rate - base_rate) >= 0.10 &&
                    median_s <= 2.0;
    report(5, "ReNO effectiveness (200 runs)", ok,
           strcat_all("clipscore improved in ", improve_frac * 100, "% of ", total,
                      " runs; color binding ", base_rate, " -> ", opt_rate, "; median ",
                      median_s, " s/run"));
}

void criterion_safety(const Pipeline& p) {
    GeneratorModel<float> gen =
        generator_from_checkpoint<float>(Checkpoint::load(p.run("gen") + "/generator.lckp"));
    VaeModel<float> vae =
        vae_from_checkpoint<float>(Checkpoint::load(p.run("vae") + "/vae.lckp"));
    ClipModel<float> clip = clip_from_checkpoint<float>(
        Checkpoint::load(p.run("clip_latent") + "/clip.lckp"));

    std::vector<RewardTerm<float>> terms = {
        {RewardKind::ClipScore, &clip, nullptr, 1.0, ""},
        {RewardKind::NegativeConcept, &clip, nullptr, 1.0, "a red circle"}};
    RenoConfig cfg;
    const ConceptPredicate predicate = ConceptPredicate::parse("color:red");
    const std::string prompt = "a green square";
    const int seeds = 200;

    const auto baseline =
        concept_probability(gen, vae, clip, nullptr, cfg, prompt, predicate, seeds, 31337);
    const auto optimized =
        concept_probability(gen, vae, clip, &terms, cfg, prompt, predicate, seeds, 31337);

    const double rel_drop = baseline.probability > 0
                                ? (baseline.probability - optimized.probability) /
                                      baseline.probability
                                : 0.0;
    const double score_drop = baseline.mean_clipscore - optimized.mean_clipscore;
    const bool ok = rel_drop >= 0.50 && score_drop <= 0.05;
    report(6, "safety suppression (200 seeds)", ok,
           strcat_all("concept prob ", baseline.probability, " -> ", optimized.probability,
                      " (rel drop ", rel_drop * 100, "%); clipscore ", baseline.mean_clipscore,
                      " -> ", optimized.mean_clipscore));
}

void criterion_timing(const Pipeline& p) {
    GeneratorModel<float> gen =
        generator_from_checkpoint<float>(Checkpoint::load(p.run("gen") + "/generator.lckp"));
    VaeModel<float> vae =
        vae_from_checkpoint<float>(Checkpoint::load(p.run("vae") + "/vae.lckp"));
    ClipModel<float> latent_clip = clip_from_checkpoint<float>(
        Checkpoint::load(p.run("clip_latent") + "/clip.lckp"));
    ClipModel<float> pixel_clip = clip_from_checkpoint<float>(
        Checkpoint::load(p.run("clip_pixel") + "/clip.lckp"));

    const TimingReport rep =
        time_reward_paths(gen, vae, latent_clip, pixel_clip, "a red circle", 50, 5, 5, 3);
    const double gap = rep.pixel.per_iter_ms - rep.latent.per_iter_ms;
    const bool ok = rep.latent.per_iter_ms < rep.pixel.per_iter_ms &&
                    gap >= 0.8 * rep.standalone_decode_fb_ms &&
                    rep.latent_loop_decode_calls == 0;
    report(7, "decode-free speedup", ok,
           strcat_all("latent ", rep.latent.per_iter_ms, " ms/iter vs pixel ",
                      rep.pixel.per_iter_ms, " ms/iter; gap ", gap, " ms vs 0.8x decode ",
                      0.8 * rep.standalone_decode_fb_ms, " ms; latent-loop decode calls ",
                      rep.latent_loop_decode_calls));
}

void criterion_determinism(const Pipeline& p) {
    bool ok = true;
    std::string detail;

    // LCKP round trip is bit-exact for every trained checkpoint
    for (const std::string name :
         {std::string("vae/vae"), std::string("clip_latent/clip"), std::string("clip_pixel/clip"),
          std::string("gen/generator")}) {
        const std::string src = p.run(name) + ".lckp";
        Checkpoint ckpt = Checkpoint::load(src);
        const std::string copy = p.work + "/roundtrip.lckp";
        ckpt.save(copy);
        if (sha256_file(src) != sha256_file(copy)) {
            ok = false;
            detail += "round-trip mismatch: " + src + "; ";
        }
    }

    // rerunning subcommands with the same resolved config reproduces hashes
    const auto rerun_hashes = [&](const std::string& args, const std::string& out_a,
                                  const std::string& out_b) {
        p.must(args + " --out " + out_a + " --threads 1");
        p.must(args + " --out " + out_b + " --threads 1");
        std::ifstream ja(out_a + "/run.json"), jb(out_b + "/run.json");
        nlohmann::json a, b;
        ja >> a;
        jb >> b;
        // compare hash values only: paths differ by directory
        std::vector<std::string> ha, hb;
        for (const auto& [k, v] : a.at("output_hashes").items()) ha.push_back(v);
        for (const auto& [k, v] : b.at("output_hashes").items()) hb.push_back(v);
        std::sort(ha.begin(), ha.end());
        std::sort(hb.begin(), hb.end());
        return !ha.empty() && ha == hb;
    };

    if (!rerun_hashes(strcat_all(p.lclip, " synth-data --size 300 --seed-start 123"),
                      p.work + "/det_a", p.work + "/det_b")) {
        ok = false;
        detail += "synth-data rerun hashes differ; ";
    }
    if (!rerun_hashes(strcat_all(p.lclip, " zeroshot --ckpt ", p.run("clip_latent"),
                                 "/clip.lckp --dataset ", p.data("test")),
                      p.work + "/det_c", p.work + "/det_d")) {
        ok = false;
        detail += "zeroshot rerun hashes differ; ";
    }
    if (!rerun_hashes(strcat_all(p.lclip, " reno --gen ", p.run("gen"), "/generator.lckp --vae ",
                                 p.run("vae"), "/vae.lckp --clip ", p.run("clip_latent"),
                                 "/clip.lckp --prompt \"a red circle\" --opt-steps 8 --seed 5"),
                      p.work + "/det_e", p.work + "/det_f")) {
        ok = false;
        detail += "reno rerun hashes differ; ";
    }
    if (detail.empty()) detail = "4 checkpoints bit-exact; 3 subcommand reruns hash-identical";
    report(8, "determinism & persistence", ok, detail);
}

void criterion_oracle() {
    // analyze(render()) exact on 1000 random scenes
    GrammarConfig g;
    int exact = 0;
    for (uint64_t s = 0; s < 1000; ++s) {
        const SceneSample smp = sample_scene(777000 + s, g);
        const SceneAnalysis an = analyze_scene(render_scene(smp.spec));
        bool rec = an.background == smp.spec.background &&
                   an.objects.size() == smp.spec.objects.size();
        for (const auto& o : smp.spec.objects) {
            int want = 0;
            for (const auto& q : smp.spec.objects)
                if (q.color == o.color && q.shape == o.shape) ++want;
            if (an.count_of(o.color, o.shape) != want) rec = false;
        }
        if (rec) ++exact;
    }

    // tokenizer round trip over the full grammar language
    const auto& tok = Tokenizer::instance();
    int caption_count = 0;
    bool tok_ok = true;
    std::vector<std::string> bases;
    for (int c = 0; c < kObjectColorCount; ++c)
        for (int s = 0; s < kShapeCount; ++s) {
            const std::string cs = strcat_all(color_name(static_cast<ColorName>(c)), " ",
                                              shape_name(static_cast<ShapeKind>(s)));
            bases.push_back("a " + cs);
            bases.push_back(strcat_all("two ", cs, "s"));
            bases.push_back(strcat_all("three ", cs, "s"));
        }
    // all ordered two-object combinations
    std::vector<std::string> singles;
    for (int c = 0; c < kObjectColorCount; ++c)
        for (int s = 0; s < kShapeCount; ++s)
            singles.push_back(strcat_all(color_name(static_cast<ColorName>(c)), " ",
                                         shape_name(static_cast<ShapeKind>(s))));
    for (const auto& a : singles)
        for (const auto& b : singles)
            if (a != b) bases.push_back(strcat_all("a ", a, " and a ", b));
    for (const auto& base : bases) {
        std::vector<std::string> variants = {base};
        for (int bg = 0; bg < kColorCount; ++bg)
            variants.push_back(
                strcat_all(base, " on a ", color_name(static_cast<ColorName>(bg)), " background"));
        for (const auto& caption : variants) {
            ++caption_count;
            if (tok.detokenize(tok.tokenize(caption)) != caption) tok_ok = false;
        }
    }

    const bool ok = exact == 1000 && tok_ok;
    report(9, "oracle soundness", ok,
           strcat_all(exact, "/1000 scenes exact; tokenizer round trip on ", caption_count,
                      " grammar captions ", tok_ok ? "exact" : "BROKEN"));
}

} // namespace

int main(int argc, char** argv) {
    std::string workdir = "acceptance_work";
    std::string lclip_path;
    bool rebuild = std::getenv("LCLIP_ACCEPT_REBUILD") != nullptr;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--workdir" && i + 1 < argc) workdir = argv[++i];
        else if (arg == "--lclip" && i + 1 < argc) lclip_path = argv[++i];
        else if (arg == "--rebuild") rebuild = true;
    }
    if (lclip_path.empty()) {
        // default: the CLI built next to this binary's build tree
        lclip_path = (fs::path(argv[0]).parent_path().parent_path().parent_path() / "tools" /
                      "lclip").string();
    }
    if (!fs::exists(lclip_path)) {
        std::cerr << "cannot find the lclip binary at " << lclip_path
                  << "; pass --lclip <path>" << std::endl;
        return 2;
    }

    Pipeline p{fs::absolute(lclip_path).string(), fs::absolute(workdir).string()};
    fs::create_directories(p.work);

    try {
        criterion_gradients();
        criterion_loss_identities();
        build_pipeline(p, rebuild);
        criterion_zeroshot(p);
        criterion_reno(p);
        criterion_safety(p);
        criterion_timing(p);
        criterion_determinism(p);
        criterion_oracle();
    } catch (const std::exception& e) {
        std::cerr << "acceptance run aborted: " << e.what() << std::endl;
        return 2;
    }

    std::sort(g_results.begin(), g_results.end(),
              [](const Criterion& a, const Criterion& b) { return a.id < b.id; });
    int failed = 0;
    for (const auto& c : g_results) failed += c.pass ? 0 : 1;
    std::cout << "\n" << (g_results.size() - static_cast<size_t>(failed)) << "/"
              << g_results.size() << " acceptance criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
