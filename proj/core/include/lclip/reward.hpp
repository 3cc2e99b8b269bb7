#pragma once

#include "lclip/clip_model.hpp"
#include "lclip/generator.hpp"

namespace lclip {

// Reward-based noise optimization: gradient ascent on the generator's input
// noise against a weighted ensemble of CLIP-based rewards minus a noise
// regularizer. With a latent reward model the loop never decodes.

enum class RewardKind : uint8_t { ClipScore, PickScore, NegativeConcept };

inline const char* reward_kind_name(RewardKind k) {
    switch (k) {
        case RewardKind::ClipScore: return "clipscore";
        case RewardKind::PickScore: return "pickscore";
        default: return "negative_concept";
    }
}

// One reward term bound to a CLIP model. Pixel-kind models additionally need
// the VAE (the measured decode-then-score baseline path).
template <class S>
struct RewardTerm {
    RewardKind kind = RewardKind::ClipScore;
    const ClipModel<S>* clip = nullptr;
    const VaeModel<S>* vae = nullptr;
    double weight = 1.0;
    std::string concept_text; // negative_concept only

    void validate() const {
        check(clip != nullptr, "reward term: missing CLIP model");
        check(std::isfinite(weight), "reward term: non-finite weight");
        if (kind == RewardKind::NegativeConcept)
            check(!concept_text.empty(), "reward term: negative_concept needs concept text");
        if (clip->cfg.input_kind == "pixel")
            check(vae != nullptr, "reward term: a pixel CLIP reward needs the VAE for decoding");
    }
};

// CLIP similarity between a latent (or its decoded image, for pixel models)
// and a precomputed normalized text embedding. Differentiable w.r.t. z.
template <class S>
Tensor<S> clipscore_reward(const ClipModel<S>& clip, const VaeModel<S>* vae, const Tensor<S>& z,
                           const Tensor<S>& text_embed) {
    Tensor<S> visual_in = z;
    if (clip.cfg.input_kind == "pixel") {
        check(vae != nullptr, "clipscore_reward: pixel CLIP model without a VAE");
        visual_in = vae->decode(z);
    }
    return clip_similarity(clip.encode_visual(visual_in), text_embed);
}

template <class S>
Tensor<S> clipscore_reward(const ClipModel<S>& clip, const VaeModel<S>* vae, const Tensor<S>& z,
                           const TokenSequence& caption) {
    Tensor<S> text_embed;
    {
        NoGradGuard ng;
        text_embed = clip.encode_text(caption);
    }
    return clipscore_reward(clip, vae, z, text_embed);
}

// 1 - CLIPScore(z, N): maximized to steer away from the concept N.
template <class S>
Tensor<S> negative_concept_reward(const ClipModel<S>& clip, const VaeModel<S>* vae,
                                  const Tensor<S>& z, const Tensor<S>& concept_embed) {
    return ops::add_scalar(ops::neg(clipscore_reward(clip, vae, z, concept_embed)), S(1));
}

// (mean eps)^2 + (var eps - 1)^2; zero exactly at standardized noise.
template <class S>
Tensor<S> noise_regularizer(const Tensor<S>& eps) {
    Tensor<S> m = ops::mean(eps);
    Tensor<S> centered = ops::sub(eps, m);
    Tensor<S> var = ops::mean(ops::mul(centered, centered));
    Tensor<S> dv = ops::add_scalar(var, S(-1));
    return ops::add(ops::mul(m, m), ops::mul(dv, dv));
}

struct RenoConfig {
    int steps = 50;
    double step_size = 0.05;
    double w_reg = 0.01;
    double grad_eps = 1e-8; // delta in the normalized-gradient update
};

// Wall-time accumulators for the three loop sections, filled by the staged
// evaluation when a timer sink is supplied (milliseconds).
struct RenoSectionTimers {
    double gen_fb = 0;    // generator forward + backward (incl. regularizer)
    double decode_fb = 0; // vae decode forward + backward (pixel path only)
    double reward_fb = 0; // reward forward + backward
};

namespace detail_reno {

struct StagedEval {
    double objective = 0;
    std::vector<double> rewards;
    double reg = 0;
    std::vector<float> z_values;
    std::vector<float> eps_grad;
};

// One staged evaluation of J(eps); shared by the optimizer and the timing
// harness so both run the identical loop body.
StagedEval eval_objective(const GeneratorModel<float>& gen,
                          const std::vector<RewardTerm<float>>& terms, const TokenBatch& prompt,
                          const std::vector<TensorF>& term_embeds,
                          const std::vector<float>& eps_values, double w_reg, bool compute_grad,
                          RenoSectionTimers* timers);

} // namespace detail_reno

struct OptimizationTrace {
    struct StepRecord {
        int step = 0;
        double objective = 0;
        std::vector<double> rewards; // one value per term
        double regularizer = 0;
        double eps_mean = 0, eps_std = 0;
    };
    std::vector<StepRecord> steps; // length = configured steps + 1
    std::vector<float> final_eps;  // kLatentSize
    LatentImage final_latent;      // provenance generated
    bool aborted = false;
    std::string abort_reason;

    nlohmann::json to_json() const;
};

// Objective evaluation shared by the optimizer and the verification suites:
// J(eps) = sum_i w_i R_i(G(eps, c), .) - w_reg * L_reg(eps), single fused
// graph so gradients can be checked end to end.
template <class S>
Tensor<S> reno_objective(const GeneratorModel<S>& gen, const std::vector<RewardTerm<S>>& terms,
                         const TokenBatch& prompt, const Tensor<S>& eps, double w_reg,
                         const std::vector<Tensor<S>>& term_text_embeds) {
    check(terms.size() == term_text_embeds.size(), "reno_objective: embeds per term required");
    Tensor<S> z = gen.generate(eps, prompt);
    Tensor<S> j = ops::mul_scalar(noise_regularizer(eps), static_cast<S>(-w_reg));
    for (size_t i = 0; i < terms.size(); ++i) {
        const auto& t = terms[i];
        Tensor<S> r;
        if (t.kind == RewardKind::NegativeConcept)
            r = negative_concept_reward(*t.clip, t.vae, z, term_text_embeds[i]);
        else
            r = clipscore_reward(*t.clip, t.vae, z, term_text_embeds[i]);
        j = ops::add(j, ops::mul_scalar(r, static_cast<S>(t.weight)));
    }
    return j;
}

// Precomputes the per-term text embeddings (prompt or concept) without
// recording a graph.
template <class S>
std::vector<Tensor<S>> reward_text_embeds(const std::vector<RewardTerm<S>>& terms,
                                          const TokenSequence& prompt) {
    NoGradGuard ng;
    std::vector<Tensor<S>> out;
    out.reserve(terms.size());
    for (const auto& t : terms) {
        t.validate();
        if (t.kind == RewardKind::NegativeConcept)
            out.push_back(t.clip->encode_text(Tokenizer::instance().tokenize(t.concept_text)));
        else
            out.push_back(t.clip->encode_text(prompt));
    }
    return out;
}

// Normalized-gradient ascent over the noise; deterministic given the seed
// inside eps0. Records the objective before any update and after every step.
OptimizationTrace reno_optimize(const GeneratorModel<float>& gen,
                                const std::vector<RewardTerm<float>>& rewards,
                                const TokenSequence& prompt, const NoiseState& eps0,
                                const RenoConfig& cfg);

// preference tuning (the PickScore analog) ---------------------------------

struct PreferencePair {
    std::vector<float> latent_win;  // [H,W,C] order
    std::vector<float> latent_lose;
    TokenSequence tokens;
};

// Winner = VAE latent of a render matching the caption; loser = the same
// scene with one attribute corrupted.
std::vector<PreferencePair> build_preference_pairs(const VaeModel<float>& vae, int64_t count,
                                                   uint64_t seed);

struct PrefTuneConfig {
    int64_t steps = 300;
    int64_t batch = 64;
    double lr = 1e-4;
    uint64_t seed = 0;
    std::string log_path;
};

struct PrefTuneResult {
    double final_loss = 0;
    double holdout_accuracy = 0;
};

// Bradley-Terry loss on the similarity gap scaled by the (frozen) logit
// scale; updates both encoders.
PrefTuneResult preference_tune(ClipModel<float>& clip, const std::vector<PreferencePair>& train,
                               const std::vector<PreferencePair>& holdout,
                               const PrefTuneConfig& cfg);

double preference_accuracy(const ClipModel<float>& clip,
                           const std::vector<PreferencePair>& pairs);

// concept probability -------------------------------------------------------

// Deterministic predicate over analyzed decodes, e.g. "color:red" (any red
// object) or "object:red circle" (exact class present).
struct ConceptPredicate {
    enum class Kind { AlwaysTrue, Color, Object } kind = Kind::Color;
    ColorName color = ColorName::Red;
    ShapeKind shape = ShapeKind::Circle;

    bool operator()(const SceneAnalysis& a) const {
        switch (kind) {
            case Kind::AlwaysTrue: return true;
            case Kind::Color: return a.has_color(color);
            default: return a.has_object(color, shape);
        }
    }
    static ConceptPredicate parse(const std::string& text);
    std::string str() const;
};

struct ConceptProbabilityResult {
    std::string prompt;
    int n_seeds = 0;
    double probability = 0;       // fraction of generations satisfying the predicate
    double mean_clipscore = 0;    // similarity of the outputs to the prompt
};

// Fraction of n_seeds generations (optionally reward-optimized) whose decoded
// output satisfies the predicate. Decoding happens for evaluation only, after
// the optimization loop.
ConceptProbabilityResult concept_probability(const GeneratorModel<float>& gen,
                                             const VaeModel<float>& vae,
                                             const ClipModel<float>& score_clip,
                                             const std::vector<RewardTerm<float>>* rewards,
                                             const RenoConfig& reno_cfg,
                                             const std::string& prompt,
                                             const ConceptPredicate& predicate, int n_seeds,
                                             uint64_t seed);

} // namespace lclip
