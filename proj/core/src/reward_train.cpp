#include "lclip/reward.hpp"

#include <chrono>
#include <fstream>

#include "lclip/clip_train.hpp"

namespace lclip {

using nlohmann::json;

json OptimizationTrace::to_json() const {
    json steps_j = json::array();
    for (const auto& s : steps)
        steps_j.push_back({{"step", s.step},
                           {"objective", s.objective},
                           {"rewards", s.rewards},
                           {"regularizer", s.regularizer},
                           {"eps_mean", s.eps_mean},
                           {"eps_std", s.eps_std}});
    return {{"steps", steps_j}, {"aborted", aborted}, {"abort_reason", abort_reason}};
}

namespace detail_reno {

// The generator, the (optional) decode and the reward ensemble run as
// separate graphs joined by gradient injection, which keeps the decode cost
// attributable without changing the math: the proxy sum(z * g) reproduces
// the fused chain rule exactly.
StagedEval eval_objective(const GeneratorModel<float>& gen,
                          const std::vector<RewardTerm<float>>& terms,
                          const TokenBatch& prompt,
                          const std::vector<TensorF>& term_embeds,
                          const std::vector<float>& eps_values, double w_reg, bool compute_grad,
                          RenoSectionTimers* timers) {
    const auto now = [] { return std::chrono::steady_clock::now(); };
    const auto ms = [](auto a, auto b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };

    StagedEval out;
    bool any_pixel = false, any_latent = false;
    for (const auto& t : terms)
        (t.clip->cfg.input_kind == "pixel" ? any_pixel : any_latent) = true;
    const VaeModel<float>* vae = nullptr;
    for (const auto& t : terms)
        if (t.clip->cfg.input_kind == "pixel") vae = t.vae;

    TensorF eps = TensorF::from({1, kLatentSide, kLatentSide, kLatentChannels}, eps_values);
    if (compute_grad) eps.set_requires_grad();

    // generator forward
    auto t0 = now();
    TensorF z = gen.generate(eps, prompt);
    if (timers) timers->gen_fb += ms(t0, now());
    out.z_values.assign(z.values().begin(), z.values().end());

    TensorF z_d = z.detach_copy();
    if (compute_grad) z_d.set_requires_grad();

    // decode forward (pixel reward path only)
    TensorF img, img_d;
    if (any_pixel) {
        t0 = now();
        img = vae->decode(z_d);
        if (timers) timers->decode_fb += ms(t0, now());
        img_d = img.detach_copy();
        if (compute_grad) img_d.set_requires_grad();
    }

    // reward forward (+ backward to the staged inputs); the pixel input is
    // already decoded here, so the similarity is computed directly
    t0 = now();
    TensorF reward_sum;
    out.rewards.reserve(terms.size());
    for (size_t i = 0; i < terms.size(); ++i) {
        const auto& t = terms[i];
        const TensorF& input = t.clip->cfg.input_kind == "pixel" ? img_d : z_d;
        TensorF sim = clip_similarity(t.clip->encode_visual(input), term_embeds[i]);
        TensorF r = t.kind == RewardKind::NegativeConcept
                        ? ops::add_scalar(ops::neg(sim), 1.0f)
                        : sim;
        out.rewards.push_back(r.item());
        TensorF weighted = ops::mul_scalar(r, static_cast<float>(t.weight));
        reward_sum = reward_sum.defined() ? ops::add(reward_sum, weighted) : weighted;
    }
    if (compute_grad && reward_sum.defined() && reward_sum.requires_grad()) backward(reward_sum);
    if (timers) timers->reward_fb += ms(t0, now());

    // decode backward: inject the image gradient through the decoder
    if (any_pixel && compute_grad && img_d.has_grad()) {
        t0 = now();
        TensorF g_img = TensorF::from(img_d.shape(),
                                      std::vector<float>(img_d.grad().begin(), img_d.grad().end()));
        backward(ops::sum(ops::mul(img, g_img)));
        if (timers) timers->decode_fb += ms(t0, now());
    }

    // regularizer value (graph attached to eps when grads are needed)
    TensorF reg = noise_regularizer(eps);
    out.reg = reg.item();

    out.objective = -w_reg * out.reg;
    for (size_t i = 0; i < terms.size(); ++i) out.objective += terms[i].weight * out.rewards[i];

    if (compute_grad) {
        // generator backward: inject the latent gradient, fold in the regularizer
        t0 = now();
        TensorF tail = ops::mul_scalar(reg, static_cast<float>(-w_reg));
        if (z_d.has_grad()) {
            TensorF gz = TensorF::from(z_d.shape(),
                                       std::vector<float>(z_d.grad().begin(), z_d.grad().end()));
            tail = ops::add(tail, ops::sum(ops::mul(z, gz)));
        }
        backward(tail);
        if (timers) timers->gen_fb += ms(t0, now());
        if (eps.has_grad())
            out.eps_grad.assign(eps.grad().begin(), eps.grad().end());
        else
            out.eps_grad.assign(static_cast<size_t>(kLatentSize), 0.0f);
    }
    (void)any_latent;
    return out;
}

} // namespace detail_reno

OptimizationTrace reno_optimize(const GeneratorModel<float>& gen,
                                const std::vector<RewardTerm<float>>& rewards,
                                const TokenSequence& prompt, const NoiseState& eps0,
                                const RenoConfig& cfg) {
    check(gen.trained, "reno_optimize: generator checkpoint is untrained");
    check(cfg.steps >= 0, "reno_optimize: steps must be >= 0");
    for (const auto& t : rewards) t.validate();
    check(!rewards.empty() || cfg.w_reg > 0,
          "reno_optimize: need at least one reward or a positive regularizer weight");

    const TokenBatch prompt_batch = TokenBatch::from({prompt});
    const auto embeds = reward_text_embeds(rewards, prompt);

    std::vector<float> eps(eps0.eps);
    OptimizationTrace trace;
    for (int k = 0; k <= cfg.steps; ++k) {
        detail_reno::StagedEval ev;
        try {
            ev = detail_reno::eval_objective(gen, rewards, prompt_batch, embeds, eps, cfg.w_reg,
                                             /*compute_grad=*/k < cfg.steps, nullptr);
        } catch (const Error& e) {
            trace.aborted = true;
            trace.abort_reason = e.what();
            break;
        }
        if (!std::isfinite(ev.objective)) {
            trace.aborted = true;
            trace.abort_reason = strcat_all("non-finite objective at step ", k);
            break;
        }

        OptimizationTrace::StepRecord rec;
        rec.step = k;
        rec.objective = ev.objective;
        rec.rewards = ev.rewards;
        rec.regularizer = ev.reg;
        double mean = 0;
        for (float v : eps) mean += v;
        mean /= double(eps.size());
        double var = 0;
        for (float v : eps) var += (v - mean) * (v - mean);
        rec.eps_mean = mean;
        rec.eps_std = std::sqrt(var / double(eps.size()));
        trace.steps.push_back(rec);

        if (k == cfg.steps) {
            trace.final_latent =
                LatentImage::from_tensor(TensorF::from({1, kLatentSide, kLatentSide,
                                                        kLatentChannels},
                                                       ev.z_values),
                                         LatentProvenance::Generated);
            break;
        }

        // eps <- eps + step * g / (||g|| / sqrt(dim) + delta)
        double norm_sq = 0;
        for (float g : ev.eps_grad) norm_sq += double(g) * g;
        const double denom = std::sqrt(norm_sq) / std::sqrt(double(eps.size())) + cfg.grad_eps;
        const double scale = cfg.step_size / denom;
        for (size_t i = 0; i < eps.size(); ++i)
            eps[i] = static_cast<float>(eps[i] + scale * ev.eps_grad[i]);
    }
    trace.final_eps = eps;
    return trace;
}

std::vector<PreferencePair> build_preference_pairs(const VaeModel<float>& vae, int64_t count,
                                                   uint64_t seed) {
    check(count >= 1, "build_preference_pairs: count must be >= 1");
    GrammarConfig grammar;
    grammar.max_objects = 1;
    const auto& tok = Tokenizer::instance();

    std::vector<PreferencePair> pairs;
    pairs.reserve(static_cast<size_t>(count));
    const int64_t bs = 64;
    std::vector<SceneSample> winners;
    std::vector<SceneSpec> losers;
    for (int64_t at = 0; at < count; at += bs) {
        const int64_t n = std::min(bs, count - at);
        winners.clear();
        losers.clear();
        std::vector<const PixelImage*> ptrs;
        std::vector<PixelImage> imgs;
        imgs.reserve(static_cast<size_t>(2 * n));
        for (int64_t i = 0; i < n; ++i) {
            const uint64_t s = Rng::derive_seed(seed, 0x9a17 + static_cast<uint64_t>(at + i));
            SceneSample sample = sample_scene(s, grammar);
            Rng corrupt_rng(Rng::derive_seed(s, 0xbad));
            SceneSpec corrupted = sample.spec;
            SceneObject& obj = corrupted.objects[0];
            if (corrupt_rng.uniform() < 0.5) {
                // corrupt the color
                ColorName c;
                do {
                    c = static_cast<ColorName>(corrupt_rng.uniform_int(kObjectColorCount));
                } while (c == obj.color || c == corrupted.background);
                obj.color = c;
            } else {
                ShapeKind sh;
                do {
                    sh = static_cast<ShapeKind>(corrupt_rng.uniform_int(kShapeCount));
                } while (sh == obj.shape);
                obj.shape = sh;
            }
            imgs.push_back(render_scene(sample.spec));
            imgs.push_back(render_scene(corrupted));
            winners.push_back(std::move(sample));
            losers.push_back(std::move(corrupted));
        }
        for (const auto& img : imgs) ptrs.push_back(&img);
        const TensorF latents = vae_encode_batch(vae, ptrs, EncodeMode::Mean);
        for (int64_t i = 0; i < n; ++i) {
            PreferencePair p;
            const float* base = latents.values().data();
            p.latent_win.assign(base + (2 * i) * kLatentSize, base + (2 * i + 1) * kLatentSize);
            p.latent_lose.assign(base + (2 * i + 1) * kLatentSize,
                                 base + (2 * i + 2) * kLatentSize);
            p.tokens = tok.tokenize(winners[static_cast<size_t>(i)].caption);
            pairs.push_back(std::move(p));
        }
    }
    return pairs;
}

namespace {

TensorF pair_latents_tensor(const std::vector<PreferencePair>& pairs,
                            std::span<const int64_t> idx, bool winners) {
    std::vector<float> data;
    data.reserve(idx.size() * kLatentSize);
    for (int64_t i : idx) {
        const auto& v = winners ? pairs[static_cast<size_t>(i)].latent_win
                                : pairs[static_cast<size_t>(i)].latent_lose;
        data.insert(data.end(), v.begin(), v.end());
    }
    return TensorF::from({static_cast<int64_t>(idx.size()), kLatentSide, kLatentSide,
                          kLatentChannels},
                         std::move(data));
}

// row-wise dot products of two [B,d] embeddings -> [B,1]
TensorF row_dots(const TensorF& a, const TensorF& b) {
    TensorF ones = TensorF::filled({a.dim(1), 1}, 1.0f);
    return ops::matmul(ops::mul(a, b), ones);
}

} // namespace

PrefTuneResult preference_tune(ClipModel<float>& clip, const std::vector<PreferencePair>& train,
                               const std::vector<PreferencePair>& holdout,
                               const PrefTuneConfig& cfg) {
    check(!train.empty(), "preference_tune: empty pair set");
    check(clip.cfg.input_kind == "latent",
          "preference_tune: desk-scale preference tuning targets the latent model");
    check(cfg.steps >= 1 && cfg.batch >= 1, "preference_tune: bad steps/batch");

    // update the encoders; the logit scale stays frozen
    std::vector<TensorF> params;
    clip.visual.for_each_param([&](const std::string&, TensorF& t) { params.push_back(t); });
    clip.text.for_each_param([&](const std::string&, TensorF& t) { params.push_back(t); });
    AdamWConfig acfg;
    acfg.weight_decay = 0.0; // fine-tuning stays close to the pretrained weights
    AdamW<float> opt(params, acfg);
    const float scale = clip.scale_value();

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        check(log.good(), "preference_tune: cannot open log ", cfg.log_path);
    }

    Rng rng(Rng::derive_seed(cfg.seed, 0x91cc));
    std::vector<int64_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();

    double loss_val = 0;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<int64_t> idx(static_cast<size_t>(cfg.batch));
        for (int64_t i = 0; i < cfg.batch; ++i) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            idx[static_cast<size_t>(i)] = order[cursor++];
        }
        std::vector<TokenSequence> seqs;
        for (int64_t i : idx) seqs.push_back(train[static_cast<size_t>(i)].tokens);
        const TokenBatch tokens = TokenBatch::from(seqs);

        TensorF e_w = clip.encode_visual(pair_latents_tensor(train, idx, true));
        TensorF e_l = clip.encode_visual(pair_latents_tensor(train, idx, false));
        TensorF e_t = clip.encode_text(tokens);
        TensorF gap = ops::sub(row_dots(e_w, e_t), row_dots(e_l, e_t));
        TensorF loss = ops::mean(ops::softplus(ops::neg(ops::mul_scalar(gap, scale))));

        loss_val = loss.item();
        check(std::isfinite(loss_val), "preference_tune: loss diverged at step ", step);
        opt.zero_grad();
        backward(loss);
        opt.step(cfg.lr);
        if (log.is_open())
            log << "{\"step\":" << step << ",\"lr\":" << cfg.lr << ",\"loss\":" << loss_val
                << "}\n";
    }

    PrefTuneResult res;
    res.final_loss = loss_val;
    res.holdout_accuracy = holdout.empty() ? 0.0 : preference_accuracy(clip, holdout);
    return res;
}

double preference_accuracy(const ClipModel<float>& clip,
                           const std::vector<PreferencePair>& pairs) {
    check(!pairs.empty(), "preference_accuracy: empty pair set");
    NoGradGuard ng;
    int64_t correct = 0;
    const int64_t bs = 128;
    for (size_t at = 0; at < pairs.size(); at += static_cast<size_t>(bs)) {
        const size_t n = std::min(static_cast<size_t>(bs), pairs.size() - at);
        std::vector<int64_t> idx(n);
        std::iota(idx.begin(), idx.end(), static_cast<int64_t>(at));
        std::vector<TokenSequence> seqs;
        for (int64_t i : idx) seqs.push_back(pairs[static_cast<size_t>(i)].tokens);
        TensorF e_w = clip.encode_visual(pair_latents_tensor(pairs, idx, true));
        TensorF e_l = clip.encode_visual(pair_latents_tensor(pairs, idx, false));
        TensorF e_t = clip.encode_text(TokenBatch::from(seqs));
        TensorF d = ops::sub(row_dots(e_w, e_t), row_dots(e_l, e_t));
        for (int64_t r = 0; r < static_cast<int64_t>(n); ++r)
            correct += d.at({r, 0}) > 0;
    }
    return double(correct) / double(pairs.size());
}

ConceptPredicate ConceptPredicate::parse(const std::string& text) {
    ConceptPredicate p;
    if (text == "true" || text == "always") {
        p.kind = Kind::AlwaysTrue;
        return p;
    }
    const auto colon = text.find(':');
    check(colon != std::string::npos, "concept predicate: expected \"color:<name>\" or "
          "\"object:<color> <shape>\", got \"", text, "\"");
    const std::string head = text.substr(0, colon);
    const std::string rest = text.substr(colon + 1);
    if (head == "color") {
        p.kind = Kind::Color;
        p.color = color_from_name(rest);
    } else if (head == "object") {
        const auto space = rest.find(' ');
        check(space != std::string::npos, "concept predicate: object form needs color and shape");
        p.kind = Kind::Object;
        p.color = color_from_name(rest.substr(0, space));
        p.shape = shape_from_name(rest.substr(space + 1));
    } else {
        fail("concept predicate: unknown form \"", head, "\"");
    }
    return p;
}

std::string ConceptPredicate::str() const {
    switch (kind) {
        case Kind::AlwaysTrue: return "true";
        case Kind::Color: return strcat_all("color:", color_name(color));
        default: return strcat_all("object:", color_name(color), " ", shape_name(shape));
    }
}

ConceptProbabilityResult concept_probability(const GeneratorModel<float>& gen,
                                             const VaeModel<float>& vae,
                                             const ClipModel<float>& score_clip,
                                             const std::vector<RewardTerm<float>>* rewards,
                                             const RenoConfig& reno_cfg,
                                             const std::string& prompt,
                                             const ConceptPredicate& predicate, int n_seeds,
                                             uint64_t seed) {
    check(n_seeds >= 1, "concept_probability: n_seeds must be >= 1");
    const TokenSequence prompt_tokens = Tokenizer::instance().tokenize(prompt);
    TensorF prompt_embed;
    {
        NoGradGuard ng;
        prompt_embed = score_clip.encode_text(prompt_tokens);
    }

    ConceptProbabilityResult out;
    out.prompt = prompt;
    out.n_seeds = n_seeds;
    int hits = 0;
    double score_sum = 0;
    for (int s = 0; s < n_seeds; ++s) {
        const NoiseState eps = NoiseState::draw(Rng::derive_seed(seed, static_cast<uint64_t>(s)));
        LatentImage z;
        if (rewards && !rewards->empty()) {
            OptimizationTrace trace = reno_optimize(gen, *rewards, prompt_tokens, eps, reno_cfg);
            check(!trace.aborted, "concept_probability: optimization aborted: ",
                  trace.abort_reason);
            z = trace.final_latent;
        } else {
            z = generate_latent(gen, eps, prompt_tokens);
        }
        // evaluation-only decode, outside any optimization loop
        const PixelImage img = vae_decode_image(vae, z);
        if (predicate(analyze_scene(img))) ++hits;
        NoGradGuard ng;
        score_sum += clipscore_reward<float>(score_clip, nullptr, z.to_tensor(), prompt_embed)
                         .item();
    }
    out.probability = double(hits) / double(n_seeds);
    out.mean_clipscore = score_sum / double(n_seeds);
    return out;
}

} // namespace lclip
