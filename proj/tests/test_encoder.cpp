#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>

#include "lclip/clip_train.hpp"

using namespace lclip;

namespace {
ClipModel<float> tiny_latent_model(uint64_t seed = 21) {
    EncoderConfig cfg = EncoderConfig::latent_desk();
    cfg.width = 64;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.embed_dim = 32;
    cfg.text_width = 64;
    cfg.text_layers = 1;
    Rng rng(seed);
    return ClipModel<float>::init(cfg, rng);
}
} // namespace

TEST_CASE("patchify: token arithmetic and round trip") {
    Rng rng(20);
    // 8x8x4 latent, patch 2 -> 16 tokens of length 16
    TensorF z = TensorF::randn({1, 8, 8, 4}, rng);
    TensorF t = ops::patchify(z, 2);
    CHECK(t.shape() == Shape{1, 16, 16});
    // full-scale latent geometry: 64x64x4, patch 8 -> sequence length 64
    TensorF big = TensorF::randn({1, 64, 64, 4}, rng);
    CHECK(ops::patchify(big, 8).shape() == Shape{1, 64, 256});
    // inverse round trip
    TensorF back = ops::unpatchify(t, 2, 4);
    CHECK(back.shape() == z.shape());
    for (int64_t i = 0; i < z.numel(); ++i)
        CHECK(back.values()[static_cast<size_t>(i)] == z.values()[static_cast<size_t>(i)]);
    CHECK_THROWS_AS(ops::patchify(z, 3), Error); // non-dividing patch size
}

TEST_CASE("sequence-length parity of the desk presets") {
    CHECK(EncoderConfig::latent_desk().token_count() == EncoderConfig::pixel_desk().token_count());
    // published full-scale preset keeps the 64-token sequence
    CHECK(EncoderConfig::latent_vit_b8_full().token_count() == 64);
}

TEST_CASE("encode_visual: normalization, determinism, kind mismatch") {
    ClipModel<float> model = tiny_latent_model();
    Rng rng(22);
    NoGradGuard ng;
    TensorF z = TensorF::randn({3, 8, 8, 4}, rng);
    TensorF e1 = model.encode_visual(z);
    TensorF e2 = model.encode_visual(z);
    CHECK(e1.shape() == Shape{3, 32});
    for (int64_t r = 0; r < 3; ++r) {
        double norm = 0;
        for (int64_t j = 0; j < 32; ++j) norm += double(e1.at({r, j})) * e1.at({r, j});
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));
    }
    for (int64_t i = 0; i < e1.numel(); ++i)
        CHECK(e1.values()[static_cast<size_t>(i)] == e2.values()[static_cast<size_t>(i)]);

    TensorF pixels = TensorF::randn({1, kCanvas, kCanvas, 3}, rng);
    CHECK_THROWS_AS(model.encode_visual(pixels), Error); // latent checkpoint refuses pixels
}

TEST_CASE("encode_text: normalization, EOS readout, PAD independence") {
    ClipModel<float> model = tiny_latent_model();
    const auto& tok = Tokenizer::instance();
    NoGradGuard ng;
    const TokenSequence seq = tok.tokenize("a green star");
    TensorF e = model.encode_text(seq);
    double norm = 0;
    for (int64_t j = 0; j < 32; ++j) norm += double(e.at({0, j})) * e.at({0, j});
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));

    // changing the PAD embedding row must not change any embedding: PAD
    // positions are masked keys and are never read out
    ClipModel<float> tweaked = tiny_latent_model();
    auto v = tweaked.text.tok_emb.values_mut();
    for (int64_t j = 0; j < tweaked.cfg.text_width; ++j)
        v[static_cast<size_t>(Tokenizer::kPad * tweaked.cfg.text_width + j)] += 3.0f;
    TensorF e_tweaked = tweaked.encode_text(seq);
    for (int64_t i = 0; i < e.numel(); ++i)
        CHECK(e.values()[static_cast<size_t>(i)] ==
              e_tweaked.values()[static_cast<size_t>(i)]);

    // malformed sequence: no EOS
    TokenSequence bad = seq;
    for (auto& id : bad.ids)
        if (id == Tokenizer::kEos) id = Tokenizer::kPad;
    CHECK_THROWS_AS(model.encode_text(bad), Error);
}

TEST_CASE("clip_similarity identities") {
    TensorF a = TensorF::from({1, 4}, {1, 0, 0, 0});
    TensorF b = TensorF::from({1, 4}, {0, 1, 0, 0});
    TensorF na = ops::l2_normalize_rows(a);
    CHECK(clip_similarity(na, na).item() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(clip_similarity(na, ops::l2_normalize_rows(b)).item() ==
          doctest::Approx(0.0).epsilon(1e-6));
    TensorF neg = ops::mul_scalar(na, -1.0f);
    CHECK(clip_similarity(na, neg).item() == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK_THROWS_AS(clip_similarity(na, TensorF::zeros({1, 5})), Error);
}

TEST_CASE("contrastive loss: uniform logits give ln B") {
    const int64_t b = 4, d = 8;
    std::vector<float> img_data, txt_data;
    Rng rng(23);
    std::vector<float> one_img(d), one_txt(d);
    for (auto& v : one_img) v = static_cast<float>(rng.normal());
    for (auto& v : one_txt) v = static_cast<float>(rng.normal());
    for (int64_t i = 0; i < b; ++i) {
        img_data.insert(img_data.end(), one_img.begin(), one_img.end());
        txt_data.insert(txt_data.end(), one_txt.begin(), one_txt.end());
    }
    TensorF img = ops::l2_normalize_rows(TensorF::from({b, d}, img_data));
    TensorF txt = ops::l2_normalize_rows(TensorF::from({b, d}, txt_data));
    TensorF scale = TensorF::from({1}, {static_cast<float>(kLogitScaleInit)});
    const double loss = contrastive_loss(img, txt, scale).item();
    CHECK(loss == doctest::Approx(std::log(double(b))).epsilon(1e-6));
}

TEST_CASE("contrastive loss: perfectly aligned pairs at large scale approach zero") {
    const int64_t b = 6, d = 16;
    Rng rng(24);
    TensorF img = ops::l2_normalize_rows(TensorF::randn({b, d}, rng));
    TensorF scale = TensorF::from({1}, {std::log(400.0f)});
    const double loss = contrastive_loss(img, img, scale).item();
    CHECK(loss < 0.01);
    CHECK(loss >= 0.0);
}

TEST_CASE("contrastive loss: brute-force oracle, symmetry, permutation") {
    const int64_t b = 4, d = 8;
    Rng rng(25);
    TensorF img = ops::l2_normalize_rows(TensorF::randn({b, d}, rng));
    TensorF txt = ops::l2_normalize_rows(TensorF::randn({b, d}, rng));
    TensorF scale = TensorF::from({1}, {1.7f});
    const double loss = contrastive_loss(img, txt, scale).item();

    // direct summation oracle in double precision
    const double s = std::exp(1.7);
    auto logit = [&](int64_t i, int64_t j) {
        double dot = 0;
        for (int64_t c = 0; c < d; ++c) dot += double(img.at({i, c})) * txt.at({j, c});
        return s * dot;
    };
    double total = 0;
    for (int64_t i = 0; i < b; ++i) {
        double denom_row = 0, denom_col = 0;
        for (int64_t j = 0; j < b; ++j) {
            denom_row += std::exp(logit(i, j));
            denom_col += std::exp(logit(j, i));
        }
        total += -std::log(std::exp(logit(i, i)) / denom_row);
        total += -std::log(std::exp(logit(i, i)) / denom_col);
    }
    CHECK(loss == doctest::Approx(total / (2 * b)).epsilon(1e-6));

    // symmetry: swapping image and text sides leaves the loss unchanged
    const double swapped = contrastive_loss(txt, img, scale).item();
    CHECK(loss == doctest::Approx(swapped).epsilon(1e-6));

    // permutation equivariance: permuting both batches together
    std::vector<int64_t> perm = {2, 0, 3, 1};
    std::vector<float> pi, pt;
    for (int64_t r : perm)
        for (int64_t c = 0; c < d; ++c) {
            pi.push_back(img.at({r, c}));
            pt.push_back(txt.at({r, c}));
        }
    const double permuted = contrastive_loss(TensorF::from({b, d}, pi),
                                             TensorF::from({b, d}, pt), scale)
                                .item();
    CHECK(loss == doctest::Approx(permuted).epsilon(1e-6));

    CHECK_THROWS_AS(contrastive_loss(ops::l2_normalize_rows(TensorF::randn({1, 4}, rng)),
                                     ops::l2_normalize_rows(TensorF::randn({1, 4}, rng)), scale),
                    Error); // B < 2
}

TEST_CASE("logit scale clamp") {
    ClipModel<float> model = tiny_latent_model();
    model.logit_scale.values_mut()[0] = 10.0f; // exp would be ~22026
    model.clamp_logit_scale();
    CHECK(model.scale_value() == doctest::Approx(100.0).epsilon(1e-4));
}

TEST_CASE("clip checkpoint round trip preserves embeddings bit-exactly") {
    ClipModel<float> model = tiny_latent_model();
    model.visual.set_standardization({0.1, -0.2, 0.3, 0.05}, {1.1, 0.9, 1.3, 0.7});
    model.trained = true;
    Checkpoint ckpt = clip_to_checkpoint(model, {{"note", "test"}});
    const std::string path =
        (std::filesystem::temp_directory_path() / "lclip_clip_rt.lckp").string();
    ckpt.save(path);
    ClipModel<float> back = clip_from_checkpoint<float>(Checkpoint::load(path));
    CHECK(back.trained);
    CHECK(back.cfg.input_kind == "latent");

    Rng rng(26);
    NoGradGuard ng;
    TensorF z = TensorF::randn({2, 8, 8, 4}, rng);
    TensorF e1 = model.encode_visual(z);
    TensorF e2 = back.encode_visual(z);
    for (int64_t i = 0; i < e1.numel(); ++i) {
        const float a = e1.values()[static_cast<size_t>(i)];
        const float b = e2.values()[static_cast<size_t>(i)];
        CHECK(std::memcmp(&a, &b, sizeof a) == 0);
    }
}
