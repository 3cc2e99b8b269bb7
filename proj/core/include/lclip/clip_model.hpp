#pragma once

#include "lclip/checkpoint.hpp"
#include "lclip/dataset.hpp"
#include "lclip/nn.hpp"
#include "lclip/tokenizer.hpp"

namespace lclip {

// Dual encoder over latent grids (or the matched pixel baseline) and token
// sequences, with the symmetric contrastive objective. The latent and pixel
// presets are sized so both produce the same token count.

struct EncoderConfig {
    std::string input_kind = "latent"; // "latent" | "pixel"
    int patch_size = 2;
    int width = 128;
    int layers = 4;
    int heads = 4;
    int embed_dim = 64;
    int mlp_ratio = 2;
    int text_width = 128;
    int text_layers = 2;
    int text_heads = 4;
    int grid_side_override = 0; // 0 = the desk-scale side for the input kind

    int grid_side() const {
        if (grid_side_override > 0) return grid_side_override;
        return input_kind == "latent" ? kLatentSide : kCanvas;
    }
    int grid_channels() const { return input_kind == "latent" ? kLatentChannels : 3; }
    int token_count() const {
        const int n = grid_side() / patch_size;
        return n * n;
    }

    void validate() const {
        check(input_kind == "latent" || input_kind == "pixel",
              "encoder config: input_kind must be latent or pixel, got ", input_kind);
        check(patch_size >= 1 && grid_side() % patch_size == 0,
              "encoder config: patch size ", patch_size, " does not divide grid side ",
              grid_side());
        check(width % heads == 0, "encoder config: width ", width, " not divisible by ",
              heads, " heads");
        check(text_width % text_heads == 0, "encoder config: text width not divisible by heads");
        check(layers >= 1 && text_layers >= 1 && embed_dim >= 1, "encoder config: bad sizes");
    }

    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);

    // desk-scale presets: both yield 16 tokens
    static EncoderConfig latent_desk();
    static EncoderConfig pixel_desk();
    // full-scale presets mirroring the published architecture table; kept as
    // inert documentation (training them is out of scope at desk scale)
    static EncoderConfig latent_vit_b8_full();
    static EncoderConfig latent_vit_b4_plus_full();
};

template <class S>
struct TransformerBlock {
    LayerNorm<S> ln1, ln2;
    Linear<S> q, k, v, proj, fc1, fc2;

    static TransformerBlock init(int64_t width, int64_t mlp_hidden, Rng& rng) {
        TransformerBlock b;
        b.ln1 = LayerNorm<S>::init(width);
        b.ln2 = LayerNorm<S>::init(width);
        b.q = Linear<S>::init(width, width, rng);
        b.k = Linear<S>::init(width, width, rng);
        b.v = Linear<S>::init(width, width, rng);
        b.proj = Linear<S>::init(width, width, rng);
        b.fc1 = Linear<S>::init(width, mlp_hidden, rng);
        b.fc2 = Linear<S>::init(mlp_hidden, width, rng);
        return b;
    }

    Tensor<S> forward(const Tensor<S>& x, int heads,
                      const std::vector<uint8_t>* key_mask = nullptr) const {
        Tensor<S> h = ln1.forward(x);
        Tensor<S> att =
            ops::attention(q.forward(h), k.forward(h), v.forward(h), heads, key_mask);
        Tensor<S> y = ops::add(x, proj.forward(att));
        Tensor<S> m = ln2.forward(y);
        return ops::add(y, fc2.forward(ops::gelu(fc1.forward(m))));
    }

    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        ln1.visit(prefix + ".ln1", fn);
        ln2.visit(prefix + ".ln2", fn);
        q.visit(prefix + ".q", fn);
        k.visit(prefix + ".k", fn);
        v.visit(prefix + ".v", fn);
        proj.visit(prefix + ".proj", fn);
        fc1.visit(prefix + ".fc1", fn);
        fc2.visit(prefix + ".fc2", fn);
    }
};

template <class S>
struct VisualTower {
    Linear<S> patch_embed;
    Tensor<S> cls;       // [width]
    Tensor<S> pos;       // [tokens + 1, width]
    std::vector<TransformerBlock<S>> blocks;
    LayerNorm<S> ln_final;
    Linear<S> head;      // [width, embed_dim]
    // input standardization buffers (not trained)
    Tensor<S> in_mean, in_std, in_inv_std; // [channels]

    static VisualTower init(const EncoderConfig& cfg, Rng& rng) {
        VisualTower t;
        const int64_t patch_dim =
            static_cast<int64_t>(cfg.patch_size) * cfg.patch_size * cfg.grid_channels();
        t.patch_embed = Linear<S>::init(patch_dim, cfg.width, rng);
        t.cls = Tensor<S>::trunc_normal({cfg.width}, rng, kInitStd).set_requires_grad();
        t.pos = Tensor<S>::trunc_normal({cfg.token_count() + 1, cfg.width}, rng, kInitStd)
                    .set_requires_grad();
        for (int i = 0; i < cfg.layers; ++i)
            t.blocks.push_back(TransformerBlock<S>::init(cfg.width, cfg.width * cfg.mlp_ratio, rng));
        t.ln_final = LayerNorm<S>::init(cfg.width);
        t.head = Linear<S>::init(cfg.width, cfg.embed_dim, rng);
        t.set_standardization(std::vector<double>(static_cast<size_t>(cfg.grid_channels()), 0.0),
                              std::vector<double>(static_cast<size_t>(cfg.grid_channels()), 1.0));
        return t;
    }

    void set_standardization(const std::vector<double>& mean, const std::vector<double>& std) {
        check(mean.size() == std.size(), "standardization: mean/std size mismatch");
        std::vector<S> m(mean.size()), s(std.size()), inv(std.size());
        for (size_t i = 0; i < std.size(); ++i) {
            check(std[i] > 1e-8, "standardization: non-positive std");
            m[i] = static_cast<S>(mean[i]);
            s[i] = static_cast<S>(std[i]);
            // derive the reciprocal from the stored-precision value so a
            // checkpoint round trip reproduces it bit-exactly
            inv[i] = static_cast<S>(1.0 / static_cast<double>(s[i]));
        }
        const int64_t c = static_cast<int64_t>(mean.size());
        in_mean = Tensor<S>::from({c}, std::move(m));
        in_std = Tensor<S>::from({c}, std::move(s));
        in_inv_std = Tensor<S>::from({c}, std::move(inv));
    }

    // grid [B, side, side, channels] -> normalized [B, embed_dim]
    Tensor<S> forward(const Tensor<S>& grid, const EncoderConfig& cfg) const {
        Tensor<S> x = ops::mul(ops::sub(grid, in_mean), in_inv_std);
        Tensor<S> tokens = ops::matmul(ops::patchify(x, cfg.patch_size), patch_embed.w);
        tokens = ops::add(tokens, patch_embed.b);
        Tensor<S> seq = ops::prepend_token(tokens, cls);
        seq = ops::add(seq, pos);
        for (const auto& b : blocks) seq = b.forward(seq, cfg.heads);
        Tensor<S> readout = ops::select_token(ln_final.forward(seq),
                                              std::vector<int64_t>(static_cast<size_t>(seq.dim(0)), 0));
        return ops::l2_normalize_rows(head.forward(readout));
    }

    void for_each_param(const ParamVisitor<S>& fn) {
        patch_embed.visit("visual.patch_embed", fn);
        fn("visual.cls", cls);
        fn("visual.pos", pos);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit(strcat_all("visual.blocks.", i), fn);
        ln_final.visit("visual.ln_final", fn);
        head.visit("visual.head", fn);
    }
};

template <class S>
struct TextTower {
    Tensor<S> tok_emb; // [vocab, width]
    Tensor<S> pos;     // [kMaxTokens, width]
    std::vector<TransformerBlock<S>> blocks;
    LayerNorm<S> ln_final;
    Linear<S> head;

    static TextTower init(const EncoderConfig& cfg, Rng& rng) {
        TextTower t;
        const int64_t vocab = Tokenizer::instance().vocab_size();
        t.tok_emb = Tensor<S>::trunc_normal({vocab, cfg.text_width}, rng, kInitStd)
                        .set_requires_grad();
        t.pos = Tensor<S>::trunc_normal({kMaxTokens, cfg.text_width}, rng, kInitStd)
                    .set_requires_grad();
        for (int i = 0; i < cfg.text_layers; ++i)
            t.blocks.push_back(
                TransformerBlock<S>::init(cfg.text_width, cfg.text_width * cfg.mlp_ratio, rng));
        t.ln_final = LayerNorm<S>::init(cfg.text_width);
        t.head = Linear<S>::init(cfg.text_width, cfg.embed_dim, rng);
        return t;
    }

    // PAD positions are masked out of attention and never read out, so
    // appending PAD after EOS cannot change the embedding.
    Tensor<S> forward(const TokenBatch& batch, const EncoderConfig& cfg) const {
        check(batch.batch >= 1 && batch.length == kMaxTokens, "text encoder: bad token batch");
        Tensor<S> x = ops::embedding(tok_emb, batch.ids, batch.batch, batch.length);
        x = ops::add(x, pos);
        for (const auto& b : blocks) x = b.forward(x, cfg.text_heads, &batch.valid);
        Tensor<S> readout = ops::select_token(ln_final.forward(x), batch.eos_pos);
        return ops::l2_normalize_rows(head.forward(readout));
    }

    void for_each_param(const ParamVisitor<S>& fn) {
        fn("text.tok_emb", tok_emb);
        fn("text.pos", pos);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit(strcat_all("text.blocks.", i), fn);
        ln_final.visit("text.ln_final", fn);
        head.visit("text.head", fn);
    }
};

inline constexpr double kLogitScaleInit = 2.659260036932778; // ln(1/0.07)
inline constexpr double kLogitScaleMax = 4.605170185988091;  // ln(100)

template <class S>
struct ClipModel {
    EncoderConfig cfg;
    VisualTower<S> visual;
    TextTower<S> text;
    Tensor<S> logit_scale; // [1], stored as log value, exp clamped to 100
    bool trained = false;

    static ClipModel init(const EncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        ClipModel m;
        m.cfg = cfg;
        m.visual = VisualTower<S>::init(cfg, rng);
        m.text = TextTower<S>::init(cfg, rng);
        m.logit_scale =
            Tensor<S>::from({1}, {static_cast<S>(kLogitScaleInit)}).set_requires_grad();
        return m;
    }

    Tensor<S> encode_visual(const Tensor<S>& grid) const {
        check(grid.ndim() == 4, "encode_visual: input must be [B,side,side,channels]");
        const bool looks_latent = grid.dim(3) == kLatentChannels && grid.dim(1) == kLatentSide;
        const bool looks_pixel = grid.dim(3) == 3 && grid.dim(1) == kCanvas;
        check(looks_latent || looks_pixel, "encode_visual: unrecognized input shape ",
              shape_str(grid.shape()));
        if (cfg.input_kind == "latent")
            check(looks_latent, "encode_visual: this checkpoint encodes latent grids; "
                  "refusing pixel input ", shape_str(grid.shape()));
        else
            check(looks_pixel, "encode_visual: this checkpoint encodes pixel images; "
                  "refusing latent input ", shape_str(grid.shape()));
        return visual.forward(grid, cfg);
    }

    Tensor<S> encode_text(const TokenBatch& batch) const { return text.forward(batch, cfg); }

    Tensor<S> encode_text(const TokenSequence& seq) const {
        return encode_text(TokenBatch::from({seq}));
    }

    S scale_value() const { return std::exp(logit_scale.item()); }

    void clamp_logit_scale() {
        auto v = logit_scale.values_mut();
        if (v[0] > static_cast<S>(kLogitScaleMax)) v[0] = static_cast<S>(kLogitScaleMax);
    }

    void for_each_param(const ParamVisitor<S>& fn) {
        visual.for_each_param(fn);
        text.for_each_param(fn);
        fn("logit_scale", logit_scale);
    }
};

// Cosine similarity of two normalized embeddings, as a scalar graph node.
template <class S>
Tensor<S> clip_similarity(const Tensor<S>& e_img, const Tensor<S>& e_txt) {
    check(e_img.shape() == e_txt.shape(), "clip_similarity: embedding shapes differ, ",
          shape_str(e_img.shape()), " vs ", shape_str(e_txt.shape()));
    check(e_img.numel() == e_img.shape().back(),
          "clip_similarity: expects a single embedding per side");
    return ops::sum(ops::mul(e_img, e_txt));
}

// Symmetric InfoNCE over a batch of matched pairs:
// logits = exp(logit_scale) * img txt^T, loss = (CE over rows + CE over cols) / 2.
template <class S>
Tensor<S> contrastive_loss(const Tensor<S>& img_embeds, const Tensor<S>& txt_embeds,
                           const Tensor<S>& logit_scale) {
    check(img_embeds.ndim() == 2 && img_embeds.shape() == txt_embeds.shape(),
          "contrastive_loss: need matching [B,d] embeddings, got ",
          shape_str(img_embeds.shape()), " vs ", shape_str(txt_embeds.shape()));
    const int64_t b = img_embeds.dim(0);
    check(b >= 2, "contrastive_loss: batch must be >= 2, got ", b);
    check(logit_scale.numel() == 1, "contrastive_loss: logit_scale must be scalar");
    Tensor<S> logits =
        ops::mul(ops::matmul(img_embeds, txt_embeds, /*transpose_b=*/true),
                 ops::exp_(logit_scale));
    std::vector<int32_t> diag(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) diag[static_cast<size_t>(i)] = static_cast<int32_t>(i);
    Tensor<S> loss = ops::add(ops::cross_entropy(logits, diag),
                              ops::cross_entropy(ops::transpose2d(logits), diag));
    return ops::mul_scalar(loss, S(0.5));
}

// checkpoint glue (model_kind "clip_latent" | "clip_pixel")
Checkpoint clip_to_checkpoint(ClipModel<float>& model, const nlohmann::json& train_meta);

template <class S>
ClipModel<S> clip_from_checkpoint(const Checkpoint& ckpt) {
    check(ckpt.model_kind == "clip_latent" || ckpt.model_kind == "clip_pixel",
          "expected a clip checkpoint, got model_kind \"", ckpt.model_kind, "\"");
    const EncoderConfig cfg = EncoderConfig::from_json(ckpt.config.at("encoder"));
    Rng dummy(0);
    ClipModel<S> m = ClipModel<S>::init(cfg, dummy);
    m.for_each_param([&](const std::string& name, Tensor<S>& t) {
        const TensorF& src = ckpt.tensor(name);
        check(src.shape() == t.shape(), "clip checkpoint: tensor ", name, " shape mismatch");
        auto dst = t.values_mut();
        for (int64_t i = 0; i < src.numel(); ++i)
            dst[static_cast<size_t>(i)] = static_cast<S>(src.values()[static_cast<size_t>(i)]);
    });
    const auto mean = ckpt.config.at("input_mean").get<std::vector<double>>();
    const auto stdv = ckpt.config.at("input_std").get<std::vector<double>>();
    m.visual.set_standardization(mean, stdv);
    m.trained = ckpt.config.value("trained", false);
    return m;
}

} // namespace lclip
