// lclip: desk-scale latent-space CLIP pipelines.
//
// Subcommands cover the full workflow: synthetic data, VAE and dual-encoder
// training, one-step generation, zero-shot evaluation, preference tuning,
// reward-based noise optimization, safety runs, and the timing /
// compositional benchmarks. Every run writes its resolved configuration and
// a run.json with input/output hashes into the output directory.

#include <omp.h>

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "lclip/bench.hpp"
#include "lclip/clip_train.hpp"
#include "lclip/config.hpp"
#include "lclip/image_io.hpp"
#include "lclip/reward.hpp"
#include "lclip/vae.hpp"
#include "lclip/zeroshot.hpp"

namespace fs = std::filesystem;
using namespace lclip;

namespace {

std::string env_name(const std::string& opt) {
    std::string out = "LCLIP_";
    for (char c : opt) out += c == '-' ? '_' : static_cast<char>(std::toupper(c));
    return out;
}

// Adds an option with the LCLIP_* environment override wired in.
template <class T>
CLI::Option* opt(CLI::App* app, const std::string& name, T& value, const std::string& help) {
    auto* o = app->add_option("--" + name, value, help);
    o->envname(env_name(name));
    o->capture_default_str();
    return o;
}

CLI::Option* flag(CLI::App* app, const std::string& name, bool& value, const std::string& help) {
    auto* o = app->add_flag("--" + name, value, help);
    o->envname(env_name(name));
    return o;
}

void echo_config(CLI::App* sub, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/resolved.cfg", sub->config_to_str(true, false));
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Checkpoint load_checkpoint_for(const std::string& path, const std::string& expected_kind,
                               const std::string& producer) {
    check(fs::exists(path), "missing checkpoint ", path, "; produce it with `lclip ", producer,
          "` first");
    Checkpoint ckpt = Checkpoint::load(path);
    if (!expected_kind.empty())
        check(ckpt.model_kind == expected_kind, path, " holds a ", ckpt.model_kind,
              " checkpoint; expected ", expected_kind, " (produced by `lclip ", producer, "`)");
    return ckpt;
}

Dataset load_dataset_for(const std::string& dir, bool need_latents) {
    check(fs::exists(dir + "/manifest.json"), "missing dataset at ", dir,
          "; produce it with `lclip synth-data` first");
    Dataset ds = Dataset::load(dir);
    if (need_latents)
        check(ds.has_latents(), "dataset ", dir,
              " has no latents.bin; run `lclip train-vae` with --emit-latents over it first");
    return ds;
}

// per-subcommand state ------------------------------------------------------

struct CommonArgs {
    uint64_t seed = 0;
    int threads = 0;
    std::string out;
};

void add_common(CLI::App* app, CommonArgs& c, const std::string& default_out) {
    c.out = default_out;
    opt(app, "seed", c.seed, "master seed for all randomness in this subcommand");
    opt(app, "threads", c.threads, "worker threads for kernels (0 = hardware default; "
        "results are identical for any value)");
    opt(app, "out", c.out, "output directory");
}

void apply_threads(int threads) {
    if (threads > 0) omp_set_num_threads(threads);
}

// reward-spec flags shared by reno / safety / bench-comp
struct RewardArgs {
    std::string clip_path;
    double clip_weight = 1.0;
    std::string pickscore_path;
    double pickscore_weight = 0.0;
    std::string negative_text;
    double negative_weight = 0.0;
    double w_reg = 0.01;
    int steps = 50;
    double step_size = 0.05;
};

void add_reward_args(CLI::App* app, RewardArgs& r) {
    opt(app, "clip", r.clip_path, "latent (or pixel) CLIP checkpoint for the CLIPScore reward");
    opt(app, "clip-weight", r.clip_weight, "CLIPScore reward weight");
    opt(app, "pickscore", r.pickscore_path, "preference-tuned checkpoint (PickScore reward)");
    opt(app, "pickscore-weight", r.pickscore_weight, "PickScore reward weight");
    opt(app, "negative", r.negative_text, "negative-concept text N");
    opt(app, "negative-weight", r.negative_weight, "negative-concept reward weight");
    opt(app, "w-reg", r.w_reg, "noise regularizer weight");
    opt(app, "opt-steps", r.steps, "gradient ascent steps");
    opt(app, "step-size", r.step_size, "normalized-gradient step size");
}

struct LoadedRewards {
    std::vector<std::unique_ptr<ClipModel<float>>> models;
    std::vector<RewardTerm<float>> terms;
    RenoConfig cfg;
};

LoadedRewards load_rewards(const RewardArgs& r, const VaeModel<float>* vae) {
    LoadedRewards out;
    out.cfg.steps = r.steps;
    out.cfg.step_size = r.step_size;
    out.cfg.w_reg = r.w_reg;
    const auto add = [&](const std::string& path, RewardKind kind, double weight,
                         const std::string& concept_text) {
        if (path.empty() || weight == 0.0) return;
        Checkpoint ckpt = load_checkpoint_for(path, "", kind == RewardKind::PickScore
                                                           ? "pref-tune" : "train-clip");
        out.models.push_back(
            std::make_unique<ClipModel<float>>(clip_from_checkpoint<float>(ckpt)));
        ClipModel<float>* m = out.models.back().get();
        check(m->trained, path, " holds an untrained checkpoint");
        out.terms.push_back({kind, m, m->cfg.input_kind == "pixel" ? vae : nullptr, weight,
                             concept_text});
    };
    add(r.clip_path, RewardKind::ClipScore, r.clip_weight, "");
    add(r.pickscore_path, RewardKind::PickScore, r.pickscore_weight, "");
    if (!r.negative_text.empty())
        add(r.clip_path.empty() ? r.pickscore_path : r.clip_path, RewardKind::NegativeConcept,
            r.negative_weight, r.negative_text);
    return out;
}

void write_previews(const std::string& out_dir, const VaeModel<float>& vae,
                    const LatentImage& z0, const LatentImage& z_star) {
    write_png_scaled(out_dir + "/z0_preview.png", latent_preview(z0.values), kLatentSide,
                     kLatentSide, 8);
    write_png_scaled(out_dir + "/zstar_preview.png", latent_preview(z_star.values), kLatentSide,
                     kLatentSide, 8);
    write_png(out_dir + "/z0_decoded.png", vae_decode_image(vae, z0).rgb, kCanvas, kCanvas);
    write_png(out_dir + "/zstar_decoded.png", vae_decode_image(vae, z_star).rgb, kCanvas,
              kCanvas);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale latent-space CLIP: training, generation, rewards, benchmarks"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key = value configuration file (# comments allowed)");
    app.get_config_ptr()->envname("LCLIP_CONFIG");

    // ---- synth-data ----
    auto* sd = app.add_subcommand("synth-data", "build a captioned-scene dataset");
    CommonArgs sd_c;
    add_common(sd, sd_c, "data/train");
    int64_t sd_size = 10000;
    uint64_t sd_seed_start = 0;
    int sd_min_objects = 1, sd_max_objects = 3;
    double sd_p_background = 0.3;
    double sd_bias_prob = 0.0;
    std::string sd_bias_concept = "red circle";
    int sd_min_size = 7, sd_max_size = 13;
    opt(sd, "size", sd_size, "number of records");
    opt(sd, "seed-start", sd_seed_start, "first scene seed; splits stay disjoint by range");
    opt(sd, "min-objects", sd_min_objects, "minimum objects per scene");
    opt(sd, "max-objects", sd_max_objects, "maximum objects per scene");
    opt(sd, "p-background", sd_p_background, "probability the caption names the background");
    opt(sd, "min-object-size", sd_min_size, "minimum object half extent, px");
    opt(sd, "max-object-size", sd_max_size, "maximum object half extent, px");
    opt(sd, "bias-prob", sd_bias_prob,
        "probability single-object scenes gain an unmentioned companion");
    opt(sd, "bias-concept", sd_bias_concept, "companion class, e.g. \"red circle\"");

    // ---- train-vae ----
    auto* tv = app.add_subcommand("train-vae", "train the latent codec");
    CommonArgs tv_c;
    add_common(tv, tv_c, "runs/vae");
    std::string tv_train = "data/train", tv_val = "data/val";
    std::string tv_emit;
    VaeTrainConfig tv_cfg;
    opt(tv, "train", tv_train, "training dataset directory");
    opt(tv, "val", tv_val, "validation dataset directory");
    opt(tv, "steps", tv_cfg.steps, "optimizer steps");
    opt(tv, "batch", tv_cfg.batch, "batch size");
    opt(tv, "lr-max", tv_cfg.lr_max, "cosine schedule peak learning rate");
    opt(tv, "beta-kl", tv_cfg.beta_kl, "KL weight");
    opt(tv, "emit-latents", tv_emit,
        "comma-separated extra dataset dirs to encode (train/val always included)");

    // ---- train-clip ----
    auto* tc = app.add_subcommand("train-clip", "train a dual encoder");
    CommonArgs tc_c;
    add_common(tc, tc_c, "runs/clip_latent");
    std::string tc_kind = "latent", tc_train = "data/train";
    ClipTrainConfig tc_cfg;
    opt(tc, "input-kind", tc_kind, "latent | pixel");
    opt(tc, "train", tc_train, "training dataset directory");
    opt(tc, "steps", tc_cfg.steps, "optimizer steps");
    opt(tc, "batch", tc_cfg.batch, "contrastive batch size");
    opt(tc, "lr-max", tc_cfg.lr_max, "cosine schedule peak learning rate");
    opt(tc, "warmup", tc_cfg.warmup, "linear warmup steps before the cosine decay");

    // ---- train-gen ----
    auto* tg = app.add_subcommand("train-gen", "train the one-step conditional denoiser");
    CommonArgs tg_c;
    add_common(tg, tg_c, "runs/gen");
    std::string tg_train = "data/train", tg_val = "data/val";
    GenTrainConfig tg_cfg;
    int tg_num_steps = 1;
    opt(tg, "train", tg_train, "training dataset directory (with latents)");
    opt(tg, "val", tg_val, "validation dataset directory (with latents)");
    opt(tg, "steps", tg_cfg.steps, "optimizer steps");
    opt(tg, "batch", tg_cfg.batch, "batch size");
    opt(tg, "lr-max", tg_cfg.lr_max, "cosine schedule peak learning rate");
    opt(tg, "num-steps", tg_num_steps, "generation schedule steps T (1..4)");

    // ---- make-genbench ----
    auto* mg = app.add_subcommand("make-genbench",
                                  "regenerate a labeled dataset through noise + denoise");
    CommonArgs mg_c;
    add_common(mg, mg_c, "data/genbench");
    std::string mg_dataset = "data/test", mg_gen = "runs/gen/generator.lckp",
                mg_vae = "runs/vae/vae.lckp";
    double mg_level = 0.66;
    opt(mg, "dataset", mg_dataset, "source dataset (with latents and labels)");
    opt(mg, "gen", mg_gen, "generator checkpoint");
    opt(mg, "vae", mg_vae, "vae checkpoint (decodes the preview pixels)");
    opt(mg, "level", mg_level, "noise level in [0,1]");

    // ---- zeroshot ----
    auto* zs = app.add_subcommand("zeroshot", "zero-shot classification report");
    CommonArgs zs_c;
    add_common(zs, zs_c, "runs/zeroshot");
    std::string zs_ckpt = "runs/clip_latent/clip.lckp", zs_dataset = "data/test";
    std::string zs_generated;
    std::string zs_klist = "1,5";
    bool zs_restrict = false;
    opt(zs, "ckpt", zs_ckpt, "dual-encoder checkpoint");
    opt(zs, "dataset", zs_dataset, "labeled dataset directory");
    opt(zs, "generated-dataset", zs_generated,
        "optional generated dataset for the encoded-vs-generated table");
    opt(zs, "k", zs_klist, "comma-separated top-k list");
    flag(zs, "restrict-classes", zs_restrict,
         "classify only over classes present in the dataset");

    // ---- pref-tune ----
    auto* pt = app.add_subcommand("pref-tune",
                                  "preference-tune a CLIP checkpoint (PickScore analog)");
    CommonArgs pt_c;
    add_common(pt, pt_c, "runs/pickscore");
    std::string pt_ckpt = "runs/clip_latent/clip.lckp", pt_vae = "runs/vae/vae.lckp";
    int64_t pt_pairs = 10000, pt_holdout = 1000;
    PrefTuneConfig pt_cfg;
    opt(pt, "ckpt", pt_ckpt, "dual-encoder checkpoint to tune");
    opt(pt, "vae", pt_vae, "vae checkpoint (encodes the synthetic pairs)");
    opt(pt, "pairs", pt_pairs, "training preference pairs");
    opt(pt, "holdout", pt_holdout, "held-out pairs for the accuracy report");
    opt(pt, "steps", pt_cfg.steps, "tuning steps");
    opt(pt, "batch", pt_cfg.batch, "batch size");
    opt(pt, "lr", pt_cfg.lr, "learning rate");

    // ---- reno ----
    auto* rn = app.add_subcommand("reno", "reward-based noise optimization for one prompt");
    CommonArgs rn_c;
    add_common(rn, rn_c, "runs/reno");
    std::string rn_gen = "runs/gen/generator.lckp", rn_vae = "runs/vae/vae.lckp";
    std::string rn_prompt = "a red circle";
    RewardArgs rn_rewards;
    opt(rn, "gen", rn_gen, "generator checkpoint");
    opt(rn, "vae", rn_vae, "vae checkpoint (previews / pixel rewards only)");
    opt(rn, "prompt", rn_prompt, "caption to optimize toward");
    add_reward_args(rn, rn_rewards);

    // ---- safety ----
    auto* sf = app.add_subcommand("safety",
                                  "concept-probability comparison: baseline vs negative reward");
    CommonArgs sf_c;
    add_common(sf, sf_c, "runs/safety");
    std::string sf_gen = "runs/gen/generator.lckp", sf_vae = "runs/vae/vae.lckp";
    std::string sf_prompt = "a green triangle";
    std::string sf_predicate = "color:red";
    int sf_seeds = 200;
    RewardArgs sf_rewards;
    sf_rewards.negative_text = "a red circle";
    sf_rewards.negative_weight = 1.0;
    opt(sf, "gen", sf_gen, "generator checkpoint");
    opt(sf, "vae", sf_vae, "vae checkpoint (evaluation-only decoding)");
    opt(sf, "prompt", sf_prompt, "generation prompt");
    opt(sf, "predicate", sf_predicate,
        "oracle concept predicate: color:<name> | object:<color> <shape> | true");
    opt(sf, "seeds", sf_seeds, "number of noise seeds per arm");
    add_reward_args(sf, sf_rewards);

    // ---- bench-time ----
    auto* bt = app.add_subcommand("bench-time",
                                  "latent vs pixel reward-path timing comparison");
    CommonArgs bt_c;
    add_common(bt, bt_c, "runs/bench_time");
    std::string bt_gen = "runs/gen/generator.lckp", bt_vae = "runs/vae/vae.lckp";
    std::string bt_latent = "runs/clip_latent/clip.lckp", bt_pixel = "runs/clip_pixel/clip.lckp";
    std::string bt_prompt = "a red circle";
    int bt_iterations = 50, bt_warmup = 5, bt_repeats = 5;
    std::string bt_format = "json,csv";
    opt(bt, "gen", bt_gen, "generator checkpoint");
    opt(bt, "vae", bt_vae, "vae checkpoint");
    opt(bt, "latent-clip", bt_latent, "latent dual-encoder checkpoint");
    opt(bt, "pixel-clip", bt_pixel, "pixel dual-encoder checkpoint");
    opt(bt, "prompt", bt_prompt, "prompt for the timed loop");
    opt(bt, "iterations", bt_iterations, "timed iterations per run");
    opt(bt, "warmup", bt_warmup, "untimed warmup iterations");
    opt(bt, "repeats", bt_repeats, "repeat runs (median reported)");
    opt(bt, "format", bt_format, "report formats: json,csv");

    // ---- bench-comp ----
    auto* bc = app.add_subcommand("bench-comp", "oracle-scored compositional evaluation");
    CommonArgs bc_c;
    add_common(bc, bc_c, "runs/bench_comp");
    std::string bc_gen = "runs/gen/generator.lckp", bc_vae = "runs/vae/vae.lckp";
    std::string bc_suite = "assets/prompt_suite.json";
    int bc_per_category = 25, bc_seeds = 2;
    std::string bc_mode = "both";
    std::string bc_format = "json,csv";
    RewardArgs bc_rewards;
    opt(bc, "gen", bc_gen, "generator checkpoint");
    opt(bc, "vae", bc_vae, "vae checkpoint (evaluation-only decoding)");
    opt(bc, "suite", bc_suite, "prompt suite JSON (generated when absent)");
    opt(bc, "per-category", bc_per_category, "prompts per category when generating the suite");
    opt(bc, "n-seeds", bc_seeds, "noise seeds per prompt");
    opt(bc, "mode", bc_mode, "baseline | reno | both");
    opt(bc, "format", bc_format, "report formats: json,csv");
    add_reward_args(bc, bc_rewards);

    CLI11_PARSE(app, argc, argv);

    try {
        // ------------------------------------------------------------------
        if (sd->parsed()) {
            apply_threads(sd_c.threads);
            echo_config(sd, sd_c.out);
            DatasetBuildConfig cfg;
            cfg.size = sd_size;
            cfg.seed_start = sd_seed_start != 0 ? sd_seed_start : sd_c.seed;
            cfg.grammar.min_objects = sd_min_objects;
            cfg.grammar.max_objects = sd_max_objects;
            cfg.grammar.p_background_phrase = sd_p_background;
            cfg.grammar.min_size = sd_min_size;
            cfg.grammar.max_size = sd_max_size;
            cfg.grammar.bias_prob = sd_bias_prob;
            if (sd_bias_prob > 0) {
                const auto space = sd_bias_concept.find(' ');
                check(space != std::string::npos,
                      "--bias-concept expects \"<color> <shape>\"");
                cfg.grammar.bias_color = color_from_name(sd_bias_concept.substr(0, space));
                cfg.grammar.bias_shape = shape_from_name(sd_bias_concept.substr(space + 1));
            }
            Dataset ds = Dataset::build(cfg, sd_c.out);
            std::cout << "wrote " << ds.size() << " records to " << sd_c.out << "\n";
            write_run_manifest(sd_c.out, "synth-data", cfg.seed_start, {},
                               {sd_c.out + "/manifest.json", sd_c.out + "/records.bin"});
        }
        // ------------------------------------------------------------------
        if (tv->parsed()) {
            apply_threads(tv_c.threads);
            echo_config(tv, tv_c.out);
            Dataset train = load_dataset_for(tv_train, false);
            Dataset val = load_dataset_for(tv_val, false);
            tv_cfg.seed = tv_c.seed;
            tv_cfg.log_path = tv_c.out + "/train_log.jsonl";
            Rng rng(Rng::derive_seed(tv_c.seed, 0x7ae));
            VaeModel<float> model = VaeModel<float>::init(rng);
            const VaeTrainResult res = vae_train(model, train, val, tv_cfg);
            Checkpoint ckpt = vae_to_checkpoint(model, res);
            ckpt.config["trained"] = true;
            const std::string ckpt_path = tv_c.out + "/vae.lckp";
            ckpt.save(ckpt_path);
            std::cout << "val mse " << res.val_mse << ", latent mean/std per channel:";
            for (int c = 0; c < 4; ++c)
                std::cout << " " << res.latent_mean[static_cast<size_t>(c)] << "/"
                          << res.latent_std[static_cast<size_t>(c)];
            std::cout << "\n";

            std::vector<std::string> outputs = {ckpt_path, tv_cfg.log_path};
            std::set<std::string> emit = {tv_train, tv_val};
            for (const auto& d : split_csv(tv_emit)) emit.insert(d);
            for (const auto& d : emit) {
                Dataset ds = load_dataset_for(d, false);
                write_dataset_latents(model, ds);
                outputs.push_back(d + "/latents.bin");
                std::cout << "encoded latents for " << d << "\n";
            }
            write_run_manifest(tv_c.out, "train-vae", tv_c.seed,
                               {tv_train + "/records.bin", tv_val + "/records.bin"}, outputs);
        }
        // ------------------------------------------------------------------
        if (tc->parsed()) {
            apply_threads(tc_c.threads);
            echo_config(tc, tc_c.out);
            check(tc_kind == "latent" || tc_kind == "pixel",
                  "--input-kind must be latent or pixel");
            Dataset train = load_dataset_for(tc_train, tc_kind == "latent");
            tc_cfg.seed = tc_c.seed;
            tc_cfg.log_path = tc_c.out + "/train_log.jsonl";
            const EncoderConfig ecfg = tc_kind == "latent" ? EncoderConfig::latent_desk()
                                                           : EncoderConfig::pixel_desk();
            Rng rng(Rng::derive_seed(tc_c.seed, 0xc11b));
            ClipModel<float> model = ClipModel<float>::init(ecfg, rng);
            const ClipTrainResult res = train_clip(model, train, tc_cfg);
            Checkpoint ckpt = clip_to_checkpoint(
                model, {{"steps", tc_cfg.steps},
                        {"batch", tc_cfg.batch},
                        {"seed", tc_c.seed},
                        {"dataset_hash", train.manifest().payload_sha256},
                        {"final_loss", res.final_loss}});
            const std::string ckpt_path = tc_c.out + "/clip.lckp";
            ckpt.save(ckpt_path);
            std::cout << "final loss " << res.final_loss << ", logit scale " << res.logit_scale
                      << "\n";
            write_run_manifest(tc_c.out, "train-clip", tc_c.seed, {tc_train + "/records.bin"},
                               {ckpt_path, tc_cfg.log_path});
        }
        // ------------------------------------------------------------------
        if (tg->parsed()) {
            apply_threads(tg_c.threads);
            echo_config(tg, tg_c.out);
            Dataset train = load_dataset_for(tg_train, true);
            Dataset val = load_dataset_for(tg_val, true);
            tg_cfg.seed = tg_c.seed;
            tg_cfg.log_path = tg_c.out + "/train_log.jsonl";
            GeneratorConfig gcfg;
            gcfg.num_steps = tg_num_steps;
            Rng rng(Rng::derive_seed(tg_c.seed, 0x93e4));
            GeneratorModel<float> model = GeneratorModel<float>::init(gcfg, rng);
            const GenTrainResult res = train_generator(model, train, val, tg_cfg);
            Checkpoint ckpt = generator_to_checkpoint(
                model, {{"steps", tg_cfg.steps}, {"batch", tg_cfg.batch}, {"seed", tg_c.seed},
                        {"val_mse_full_noise", res.val_mse_full_noise},
                        {"val_mse_mean_baseline", res.val_mse_mean_baseline}});
            const std::string ckpt_path = tg_c.out + "/generator.lckp";
            ckpt.save(ckpt_path);
            std::cout << "final loss " << res.final_loss << "; val mse at full noise "
                      << res.val_mse_full_noise << " vs mean-latent baseline "
                      << res.val_mse_mean_baseline << "\n";
            write_run_manifest(tg_c.out, "train-gen", tg_c.seed,
                               {tg_train + "/latents.bin", tg_val + "/latents.bin"},
                               {ckpt_path, tg_cfg.log_path});
        }
        // ------------------------------------------------------------------
        if (mg->parsed()) {
            apply_threads(mg_c.threads);
            echo_config(mg, mg_c.out);
            Dataset source = load_dataset_for(mg_dataset, true);
            GeneratorModel<float> gen = generator_from_checkpoint<float>(
                load_checkpoint_for(mg_gen, "generator", "train-gen"));
            VaeModel<float> vae =
                vae_from_checkpoint<float>(load_checkpoint_for(mg_vae, "vae", "train-vae"));
            Dataset out =
                build_generated_benchmark(source, gen, vae, mg_level, mg_c.out, mg_c.seed);
            std::cout << "regenerated " << out.size() << " records at level " << mg_level
                      << " into " << mg_c.out << "\n";
            write_run_manifest(mg_c.out, "make-genbench", mg_c.seed,
                               {mg_dataset + "/latents.bin", mg_gen, mg_vae},
                               {mg_c.out + "/manifest.json", mg_c.out + "/records.bin",
                                mg_c.out + "/latents.bin"});
        }
        // ------------------------------------------------------------------
        if (zs->parsed()) {
            apply_threads(zs_c.threads);
            echo_config(zs, zs_c.out);
            ClipModel<float> model = clip_from_checkpoint<float>(
                load_checkpoint_for(zs_ckpt, "", "train-clip"));
            check(model.trained, zs_ckpt, " holds an untrained checkpoint");
            Dataset ds = load_dataset_for(zs_dataset, model.cfg.input_kind == "latent");
            std::vector<std::string> classes = all_class_labels();
            if (zs_restrict) {
                classes.clear();
                std::set<int> present;
                for (int64_t i = 0; i < ds.size(); ++i)
                    if (ds.record(i).class_id != kNoClass) present.insert(ds.record(i).class_id);
                for (int c : present) classes.push_back(class_label(c));
            }
            const auto clf = build_classifier(model, classes, default_templates());
            std::vector<int> k_list;
            for (const auto& k : split_csv(zs_klist)) k_list.push_back(std::stoi(k));
            EvalReport rep = [&] {
                if (!zs_restrict) return evaluate(model, clf, ds, k_list);
                // remap labels onto the restricted class list
                std::map<int, int> remap;
                for (size_t i = 0; i < classes.size(); ++i) {
                    for (int c = 0; c < kClassCount; ++c)
                        if (class_label(c) == classes[i]) remap[c] = static_cast<int>(i);
                }
                std::vector<DatasetRecord> recs;
                std::vector<float> lats;
                for (int64_t i = 0; i < ds.size(); ++i) {
                    if (ds.record(i).class_id == kNoClass) continue;
                    DatasetRecord r = ds.record(i);
                    r.class_id = static_cast<uint16_t>(remap.at(r.class_id));
                    recs.push_back(std::move(r));
                    if (ds.has_latents()) {
                        const auto l = ds.latent(i);
                        lats.insert(lats.end(), l.begin(), l.end());
                    }
                }
                if (!ds.has_latents())
                    lats.assign(recs.size() * static_cast<size_t>(kLatentSize), 0.0f);
                Dataset view = Dataset::write(zs_c.out + "/restricted_view", recs, lats,
                                              ds.manifest().provenance);
                return evaluate(model, clf, view, k_list);
            }();

            const std::string rep_path = zs_c.out + "/report.json";
            emit_report_json(rep.to_json(), rep_path);
            std::vector<std::string> outputs = {rep_path};
            std::cout << "model " << (model.cfg.input_kind == "latent" ? "latent" : "pixel")
                      << "-input dual encoder\n";
            const auto print_row = [&](const char* tag, const std::string& dir,
                                       const EvalReport& r) {
                std::printf("%-14s %-24s", tag, dir.c_str());
                for (size_t i = 0; i < k_list.size(); ++i)
                    std::printf("  top-%d %.4f", k_list[i], r.topk_accuracy[i]);
                std::printf("\n");
            };
            print_row("(1) encoded", zs_dataset, rep);
            if (!zs_generated.empty()) {
                check(!zs_restrict, "--generated-dataset is incompatible with "
                      "--restrict-classes");
                Dataset gds = load_dataset_for(zs_generated, model.cfg.input_kind == "latent");
                const EvalReport grep = evaluate(model, clf, gds, k_list);
                const std::string grep_path = zs_c.out + "/report_generated.json";
                emit_report_json(grep.to_json(), grep_path);
                outputs.push_back(grep_path);
                print_row("(2) generated", zs_generated, grep);
            }
            write_run_manifest(zs_c.out, "zeroshot", zs_c.seed,
                               {zs_ckpt, zs_dataset + "/records.bin"}, outputs);
        }
        // ------------------------------------------------------------------
        if (pt->parsed()) {
            apply_threads(pt_c.threads);
            echo_config(pt, pt_c.out);
            ClipModel<float> model = clip_from_checkpoint<float>(
                load_checkpoint_for(pt_ckpt, "clip_latent", "train-clip"));
            check(model.trained, pt_ckpt, " holds an untrained checkpoint");
            VaeModel<float> vae =
                vae_from_checkpoint<float>(load_checkpoint_for(pt_vae, "vae", "train-vae"));
            const auto train_pairs =
                build_preference_pairs(vae, pt_pairs, Rng::derive_seed(pt_c.seed, 1));
            const auto holdout_pairs =
                build_preference_pairs(vae, pt_holdout, Rng::derive_seed(pt_c.seed, 2) + 77777);
            pt_cfg.seed = pt_c.seed;
            pt_cfg.log_path = pt_c.out + "/train_log.jsonl";
            const PrefTuneResult res = preference_tune(model, train_pairs, holdout_pairs, pt_cfg);
            Checkpoint ckpt = clip_to_checkpoint(
                model, {{"tuned_from", pt_ckpt},
                        {"pairs", pt_pairs},
                        {"holdout_accuracy", res.holdout_accuracy},
                        {"seed", pt_c.seed}});
            ckpt.config["pickscore"] = true;
            const std::string ckpt_path = pt_c.out + "/pickscore.lckp";
            ckpt.save(ckpt_path);
            std::cout << "holdout pairwise accuracy " << res.holdout_accuracy << "\n";
            write_run_manifest(pt_c.out, "pref-tune", pt_c.seed, {pt_ckpt, pt_vae},
                               {ckpt_path, pt_cfg.log_path});
        }
        // ------------------------------------------------------------------
        if (rn->parsed()) {
            apply_threads(rn_c.threads);
            echo_config(rn, rn_c.out);
            GeneratorModel<float> gen = generator_from_checkpoint<float>(
                load_checkpoint_for(rn_gen, "generator", "train-gen"));
            VaeModel<float> vae =
                vae_from_checkpoint<float>(load_checkpoint_for(rn_vae, "vae", "train-vae"));
            LoadedRewards rewards = load_rewards(rn_rewards, &vae);
            check(!rewards.terms.empty(), "reno: configure at least one reward "
                  "(--clip / --pickscore / --negative)");
            const TokenSequence prompt = Tokenizer::instance().tokenize(rn_prompt);
            const NoiseState eps0 = NoiseState::draw(rn_c.seed);
            const OptimizationTrace trace =
                reno_optimize(gen, rewards.terms, prompt, eps0, rewards.cfg);

            std::string trace_text;
            for (const auto& s : trace.steps) {
                nlohmann::json rec = {{"step", s.step},
                                      {"objective", s.objective},
                                      {"rewards", s.rewards},
                                      {"regularizer", s.regularizer},
                                      {"eps_mean", s.eps_mean},
                                      {"eps_std", s.eps_std}};
                trace_text += rec.dump() + "\n";
            }
            write_text_file(rn_c.out + "/trace.jsonl", trace_text);
            check(!trace.aborted, "optimization aborted: ", trace.abort_reason,
                  " (trace written to ", rn_c.out, "/trace.jsonl)");

            LatentImage z0;
            {
                NoGradGuard ng;
                z0 = LatentImage::from_tensor(
                    gen.generate(eps0.to_tensor(), TokenBatch::from({prompt})),
                    LatentProvenance::Generated);
            }
            write_previews(rn_c.out, vae, z0, trace.final_latent);
            nlohmann::json summary = {
                {"prompt", rn_prompt},
                {"seed", rn_c.seed},
                {"steps", rewards.cfg.steps},
                {"objective_first", trace.steps.front().objective},
                {"objective_last", trace.steps.back().objective},
                {"rewards_first", trace.steps.front().rewards},
                {"rewards_last", trace.steps.back().rewards}};
            emit_report_json(summary, rn_c.out + "/summary.json");
            std::cout << "objective " << trace.steps.front().objective << " -> "
                      << trace.steps.back().objective << " over " << rewards.cfg.steps
                      << " steps\n";
            write_run_manifest(rn_c.out, "reno", rn_c.seed, {rn_gen, rn_vae, rn_rewards.clip_path},
                               {rn_c.out + "/trace.jsonl", rn_c.out + "/summary.json"});
        }
        // ------------------------------------------------------------------
        if (sf->parsed()) {
            apply_threads(sf_c.threads);
            echo_config(sf, sf_c.out);
            GeneratorModel<float> gen = generator_from_checkpoint<float>(
                load_checkpoint_for(sf_gen, "generator", "train-gen"));
            VaeModel<float> vae =
                vae_from_checkpoint<float>(load_checkpoint_for(sf_vae, "vae", "train-vae"));
            LoadedRewards rewards = load_rewards(sf_rewards, &vae);
            check(!rewards.terms.empty(),
                  "safety: configure the reward ensemble (--clip and --negative)");
            const ConceptPredicate predicate = ConceptPredicate::parse(sf_predicate);
            const ClipModel<float>* score_clip = rewards.terms.front().clip;

            const auto baseline = concept_probability(gen, vae, *score_clip, nullptr,
                                                      rewards.cfg, sf_prompt, predicate,
                                                      sf_seeds, sf_c.seed);
            const auto optimized = concept_probability(gen, vae, *score_clip, &rewards.terms,
                                                       rewards.cfg, sf_prompt, predicate,
                                                       sf_seeds, sf_c.seed);
            nlohmann::json summary = {{"prompt", sf_prompt},
                                      {"predicate", predicate.str()},
                                      {"seeds", sf_seeds},
                                      {"baseline_prob", baseline.probability},
                                      {"optimized_prob", optimized.probability},
                                      {"mean_reward_before", baseline.mean_clipscore},
                                      {"mean_reward_after", optimized.mean_clipscore}};
            emit_report_json(summary, sf_c.out + "/summary.json");
            std::cout << "concept probability " << baseline.probability << " -> "
                      << optimized.probability << " (" << sf_seeds << " seeds); prompt clipscore "
                      << baseline.mean_clipscore << " -> " << optimized.mean_clipscore << "\n";
            write_run_manifest(sf_c.out, "safety", sf_c.seed,
                               {sf_gen, sf_vae, sf_rewards.clip_path},
                               {sf_c.out + "/summary.json"});
        }
        // ------------------------------------------------------------------
        if (bt->parsed()) {
            apply_threads(bt_c.threads);
            echo_config(bt, bt_c.out);
            GeneratorModel<float> gen = generator_from_checkpoint<float>(
                load_checkpoint_for(bt_gen, "generator", "train-gen"));
            VaeModel<float> vae =
                vae_from_checkpoint<float>(load_checkpoint_for(bt_vae, "vae", "train-vae"));
            ClipModel<float> latent_clip = clip_from_checkpoint<float>(
                load_checkpoint_for(bt_latent, "clip_latent", "train-clip"));
            ClipModel<float> pixel_clip = clip_from_checkpoint<float>(
                load_checkpoint_for(bt_pixel, "clip_pixel", "train-clip --input-kind pixel"));
            const TimingReport rep =
                time_reward_paths(gen, vae, latent_clip, pixel_clip, bt_prompt, bt_iterations,
                                  bt_warmup, bt_repeats, bt_c.seed);
            std::vector<std::string> outputs;
            std::vector<std::string> volatile_outputs;
            for (const auto& f : split_csv(bt_format)) {
                if (f == "json") {
                    emit_report_json(rep.to_json(), bt_c.out + "/timing.json");
                    volatile_outputs.push_back(bt_c.out + "/timing.json");
                } else if (f == "csv") {
                    emit_report_csv(rep.to_csv_rows(), bt_c.out + "/timing.csv");
                    volatile_outputs.push_back(bt_c.out + "/timing.csv");
                } else {
                    fail("unknown format \"", f, "\" (expected json or csv)");
                }
            }
            std::cout << "path     per-iter(ms)  gen_fb  decode_fb  reward_fb  total(s)\n";
            const auto row = [](const char* name, const TimingPath& p) {
                std::printf("%-8s %11.2f %7.2f %10.2f %10.2f %9.3f\n", name, p.per_iter_ms,
                            p.gen_fb_ms, p.decode_fb_ms, p.reward_fb_ms, p.total_s);
            };
            row("latent", rep.latent);
            row("pixel", rep.pixel);
            std::cout << "standalone decode fwd+bwd: " << rep.standalone_decode_fb_ms
                      << " ms; decode calls inside the latent loop: "
                      << rep.latent_loop_decode_calls << "\n";
            write_run_manifest(bt_c.out, "bench-time", bt_c.seed,
                               {bt_gen, bt_vae, bt_latent, bt_pixel}, {}, volatile_outputs);
        }
        // ------------------------------------------------------------------
        if (bc->parsed()) {
            apply_threads(bc_c.threads);
            echo_config(bc, bc_c.out);
            GeneratorModel<float> gen = generator_from_checkpoint<float>(
                load_checkpoint_for(bc_gen, "generator", "train-gen"));
            VaeModel<float> vae =
                vae_from_checkpoint<float>(load_checkpoint_for(bc_vae, "vae", "train-vae"));
            std::vector<PromptCase> suite;
            if (fs::exists(bc_suite)) {
                suite = load_prompt_suite(bc_suite);
            } else {
                suite = build_prompt_suite(bc_per_category, bc_c.seed);
                save_prompt_suite(suite, bc_suite);
                std::cout << "wrote prompt suite to " << bc_suite << "\n";
            }
            check(bc_mode == "baseline" || bc_mode == "reno" || bc_mode == "both",
                  "--mode must be baseline, reno or both");
            std::vector<std::string> outputs;
            const auto emit = [&](const CompositionReport& rep, const std::string& tag) {
                for (const auto& f : split_csv(bc_format)) {
                    const std::string path = bc_c.out + "/composition_" + tag + "." + f;
                    if (f == "json")
                        emit_report_json(rep.to_json(), path);
                    else if (f == "csv")
                        emit_report_csv(rep.to_csv_rows(), path);
                    else
                        fail("unknown format \"", f, "\"");
                    outputs.push_back(path);
                }
                std::cout << tag << ":";
                for (const auto& c : rep.categories)
                    std::cout << "  " << c.name << " " << c.success_rate;
                std::cout << "  aesthetic " << rep.aesthetic << "\n";
            };
            if (bc_mode == "baseline" || bc_mode == "both") {
                const auto rep = compositional_eval(gen, vae, nullptr, {}, suite, bc_seeds,
                                                    bc_c.seed);
                emit(rep, "baseline");
            }
            if (bc_mode == "reno" || bc_mode == "both") {
                LoadedRewards rewards = load_rewards(bc_rewards, &vae);
                check(!rewards.terms.empty(),
                      "bench-comp: --mode reno needs a reward (--clip ...)");
                const auto rep = compositional_eval(gen, vae, &rewards.terms, rewards.cfg, suite,
                                                    bc_seeds, bc_c.seed);
                emit(rep, "reno");
            }
            write_run_manifest(bc_c.out, "bench-comp", bc_c.seed, {bc_gen, bc_vae, bc_suite},
                               outputs);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
