#pragma once

#include "lclip/checkpoint.hpp"
#include "lclip/dataset.hpp"
#include "lclip/nn.hpp"
#include "lclip/tokenizer.hpp"
#include "lclip/vae.hpp"

namespace lclip {

// One-step conditional denoiser G(eps, c): a FiLM-conditioned conv stack on
// the 8x8 latent grid predicting the clean latent directly (x0-prediction),
// so generation is a single forward pass per schedule step and the noise
// gradient path stays short.

struct NoiseState {
    std::vector<float> eps; // kLatentSize, [H,W,C] order
    uint64_t seed = 0;
    int step = 0; // advanced by the optimizer

    static NoiseState draw(uint64_t seed) {
        NoiseState n;
        n.seed = seed;
        Rng rng(Rng::derive_seed(seed, 0xe9));
        n.eps.resize(kLatentSize);
        for (float& v : n.eps) v = static_cast<float>(rng.normal());
        return n;
    }

    TensorF to_tensor() const {
        check(eps.size() == kLatentSize, "NoiseState: bad size");
        return TensorF::from({1, kLatentSide, kLatentSide, kLatentChannels}, eps);
    }
};

// Variance-preserving interpolation toward pure noise:
// z_l = sqrt(1-l) * z + sqrt(l) * eps; l=0 is the identity, l=1 is eps.
template <class S>
Tensor<S> add_noise(const Tensor<S>& z, const Tensor<S>& eps, double level) {
    check(level >= 0.0 && level <= 1.0, "add_noise: level ", level, " outside [0,1]");
    check(z.shape() == eps.shape(), "add_noise: latent and noise shapes differ");
    const S a = static_cast<S>(std::sqrt(1.0 - level));
    const S b = static_cast<S>(std::sqrt(level));
    return ops::add(ops::mul_scalar(z, a), ops::mul_scalar(eps, b));
}

LatentImage add_noise(const LatentImage& z, const NoiseState& eps, double level);

struct GeneratorConfig {
    int num_steps = 1; // T in [1,4]
    int hidden = 64;
    int cond_dim = 32;
    int cond_hidden = 64;

    void validate() const {
        check(num_steps >= 1 && num_steps <= 4, "generator config: num_steps must be in [1,4]");
        check(hidden >= 4 && cond_dim >= 1 && cond_hidden >= 1, "generator config: bad sizes");
    }

    nlohmann::json to_json() const {
        return {{"num_steps", num_steps}, {"hidden", hidden}, {"cond_dim", cond_dim},
                {"cond_hidden", cond_hidden}};
    }
    static GeneratorConfig from_json(const nlohmann::json& j) {
        GeneratorConfig c;
        c.num_steps = j.at("num_steps").get<int>();
        c.hidden = j.at("hidden").get<int>();
        c.cond_dim = j.at("cond_dim").get<int>();
        c.cond_hidden = j.at("cond_hidden").get<int>();
        c.validate();
        return c;
    }
};

template <class S>
struct GeneratorModel {
    GeneratorConfig cfg;
    Tensor<S> tok_emb;      // [vocab, cond_dim]
    Linear<S> cond_fc;      // [cond_dim + 1, cond_hidden]; +1 carries the level
    Linear<S> gamma1, beta1, gamma2, beta2, gamma3, beta3;
    Conv<S> conv_in, conv_mid1, conv_mid2, conv_out;
    bool trained = false;

    static GeneratorModel init(const GeneratorConfig& cfg, Rng& rng) {
        cfg.validate();
        GeneratorModel m;
        m.cfg = cfg;
        const int64_t vocab = Tokenizer::instance().vocab_size();
        m.tok_emb = Tensor<S>::trunc_normal({vocab, cfg.cond_dim}, rng, kInitStd)
                        .set_requires_grad();
        m.cond_fc = Linear<S>::init(cfg.cond_dim + 1, cfg.cond_hidden, rng);
        m.gamma1 = Linear<S>::init(cfg.cond_hidden, cfg.hidden, rng);
        m.beta1 = Linear<S>::init(cfg.cond_hidden, cfg.hidden, rng);
        m.gamma2 = Linear<S>::init(cfg.cond_hidden, cfg.hidden, rng);
        m.beta2 = Linear<S>::init(cfg.cond_hidden, cfg.hidden, rng);
        m.gamma3 = Linear<S>::init(cfg.cond_hidden, cfg.hidden, rng);
        m.beta3 = Linear<S>::init(cfg.cond_hidden, cfg.hidden, rng);
        m.conv_in = Conv<S>::init(3, 3, kLatentChannels, cfg.hidden, 1, 1, rng);
        m.conv_mid1 = Conv<S>::init(3, 3, cfg.hidden, cfg.hidden, 1, 1, rng);
        m.conv_mid2 = Conv<S>::init(3, 3, cfg.hidden, cfg.hidden, 1, 1, rng);
        m.conv_out = Conv<S>::init(3, 3, cfg.hidden, kLatentChannels, 1, 1, rng);
        return m;
    }

    // x0-prediction: z_t [B,8,8,4] + caption + level -> clean-latent estimate.
    Tensor<S> denoise(const Tensor<S>& z_t, const TokenBatch& c, double level) const {
        check(z_t.ndim() == 4 && z_t.dim(1) == kLatentSide && z_t.dim(3) == kLatentChannels,
              "denoise: latent must be [B,8,8,4], got ", shape_str(z_t.shape()));
        check(z_t.dim(0) == c.batch, "denoise: latent batch ", z_t.dim(0),
              " != caption batch ", c.batch);
        check(level >= 0.0 && level <= 1.0, "denoise: level outside [0,1]");
        Tensor<S> emb = ops::embedding(tok_emb, c.ids, c.batch, c.length);
        Tensor<S> pooled = ops::masked_mean_tokens(emb, c.valid);
        Tensor<S> level_col = Tensor<S>::filled({c.batch, 1}, static_cast<S>(level));
        Tensor<S> h = ops::gelu(cond_fc.forward(ops::concat_cols(pooled, level_col)));
        // FiLM scales stay near one at init
        auto g1 = ops::add_scalar(gamma1.forward(h), S(1));
        auto g2 = ops::add_scalar(gamma2.forward(h), S(1));
        auto g3 = ops::add_scalar(gamma3.forward(h), S(1));
        Tensor<S> x = ops::gelu(ops::film(conv_in.forward(z_t), g1, beta1.forward(h)));
        x = ops::gelu(ops::film(conv_mid1.forward(x), g2, beta2.forward(h)));
        x = ops::gelu(ops::film(conv_mid2.forward(x), g3, beta3.forward(h)));
        return conv_out.forward(x);
    }

    // T schedule steps from pure noise, re-noising the running estimate with
    // the same eps; differentiable with respect to eps end-to-end.
    Tensor<S> generate(const Tensor<S>& eps, const TokenBatch& c) const {
        Tensor<S> z = eps;
        Tensor<S> x0;
        for (int t = 0; t < cfg.num_steps; ++t) {
            const double level = 1.0 - double(t) / cfg.num_steps;
            x0 = denoise(z, c, level);
            if (t + 1 < cfg.num_steps) {
                const double next = 1.0 - double(t + 1) / cfg.num_steps;
                z = add_noise(x0, eps, next);
            }
        }
        return x0;
    }

    void for_each_param(const ParamVisitor<S>& fn) {
        fn("tok_emb", tok_emb);
        cond_fc.visit("cond_fc", fn);
        gamma1.visit("gamma1", fn);
        beta1.visit("beta1", fn);
        gamma2.visit("gamma2", fn);
        beta2.visit("beta2", fn);
        gamma3.visit("gamma3", fn);
        beta3.visit("beta3", fn);
        conv_in.visit("conv_in", fn);
        conv_mid1.visit("conv_mid1", fn);
        conv_mid2.visit("conv_mid2", fn);
        conv_out.visit("conv_out", fn);
    }
};

// Value-level generation stamping provenance; requires a trained model.
LatentImage generate_latent(const GeneratorModel<float>& gen, const NoiseState& eps,
                            const TokenSequence& caption);

struct GenTrainConfig {
    int64_t steps = 2000;
    int64_t batch = 64;
    double lr_max = 1e-3;
    double lr_min = 0.0;
    double level_min = 0.3;
    double level_max = 1.0;
    uint64_t seed = 0;
    std::string log_path;
};

struct GenTrainResult {
    double final_loss = 0;
    double val_mse_full_noise = 0; // denoising MSE at level 1.0
    double val_mse_mean_baseline = 0; // predicting the dataset-mean latent
};

// Minimizes || f(add_noise(z, eps, l), c, l) - z ||^2 over random levels.
GenTrainResult train_generator(GeneratorModel<float>& model, const Dataset& train,
                               const Dataset& val, const GenTrainConfig& cfg);

Checkpoint generator_to_checkpoint(GeneratorModel<float>& model, const nlohmann::json& meta);

template <class S>
GeneratorModel<S> generator_from_checkpoint(const Checkpoint& ckpt) {
    check(ckpt.model_kind == "generator", "expected a generator checkpoint, got \"",
          ckpt.model_kind, "\"");
    const GeneratorConfig cfg = GeneratorConfig::from_json(ckpt.config.at("generator"));
    Rng dummy(0);
    GeneratorModel<S> m = GeneratorModel<S>::init(cfg, dummy);
    m.for_each_param([&](const std::string& name, Tensor<S>& t) {
        const TensorF& src = ckpt.tensor(name);
        check(src.shape() == t.shape(), "generator checkpoint: tensor ", name, " shape mismatch");
        auto dst = t.values_mut();
        for (int64_t i = 0; i < src.numel(); ++i)
            dst[static_cast<size_t>(i)] = static_cast<S>(src.values()[static_cast<size_t>(i)]);
    });
    m.trained = ckpt.config.value("trained", false);
    return m;
}

// The generated benchmark: noise every labeled record's latent to `level`,
// re-denoise conditioned on a template caption of its class label, and write
// the result as a generated-provenance dataset (decoded pixels included).
Dataset build_generated_benchmark(const Dataset& source, const GeneratorModel<float>& gen,
                                  const VaeModel<float>& vae, double level,
                                  const std::string& out_dir, uint64_t seed);

} // namespace lclip
