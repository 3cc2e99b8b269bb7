#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lclip/hashing.hpp"
#include "lclip/vae.hpp"

using namespace lclip;
namespace fs = std::filesystem;

namespace {
std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("lclip_codec_" + name)).string();
}
} // namespace

TEST_CASE("checkpoint: bit-exact round trip and deterministic bytes") {
    Rng rng(11);
    Checkpoint ckpt;
    ckpt.model_kind = "vae";
    ckpt.config = {{"alpha", 1}, {"note", "test"}};
    ckpt.put("a.w", TensorF::randn({3, 5}, rng));
    ckpt.put("b.bias", TensorF::randn({7}, rng));
    const std::string p1 = temp_path("rt1.lckp"), p2 = temp_path("rt2.lckp");
    ckpt.save(p1);
    ckpt.save(p2);
    CHECK(sha256_file(p1) == sha256_file(p2));

    const Checkpoint back = Checkpoint::load(p1);
    CHECK(back.model_kind == "vae");
    CHECK(back.config.at("alpha") == 1);
    for (const auto& [name, t] : ckpt.tensors) {
        const TensorF& r = back.tensor(name);
        REQUIRE(r.shape() == t.shape());
        for (int64_t i = 0; i < t.numel(); ++i) {
            const float a = t.values()[static_cast<size_t>(i)];
            const float b = r.values()[static_cast<size_t>(i)];
            CHECK(std::memcmp(&a, &b, sizeof a) == 0);
        }
    }
    // save the loaded copy: must be byte-identical to the original file
    const std::string p3 = temp_path("rt3.lckp");
    Checkpoint mutable_back = back;
    mutable_back.save(p3);
    CHECK(sha256_file(p1) == sha256_file(p3));
}

TEST_CASE("checkpoint: corrupt files are rejected") {
    const std::string p = temp_path("bad.lckp");
    {
        std::ofstream out(p, std::ios::binary);
        out << "NOPEgarbage";
    }
    CHECK_THROWS_AS(Checkpoint::load(p), Error);
    CHECK_THROWS_AS(Checkpoint::load(temp_path("missing.lckp")), Error);
}

TEST_CASE("vae: encode/decode shape contract") {
    Rng rng(12);
    VaeModel<float> vae = VaeModel<float>::init(rng);
    SceneSpec spec;
    spec.background = ColorName::White;
    spec.objects.push_back({ShapeKind::Star, ColorName::Blue, 30, 30, 9});
    const PixelImage img = render_scene(spec);

    NoGradGuard ng;
    TensorF x = TensorF::from({1, kCanvas, kCanvas, 3}, img.to_float());
    auto [mu, logvar] = vae.encode_moments(x);
    CHECK(mu.shape() == Shape{1, 8, 8, 4});
    CHECK(logvar.shape() == Shape{1, 8, 8, 4});
    TensorF out = vae.decode(mu);
    CHECK(out.shape() == Shape{1, kCanvas, kCanvas, 3});
    for (float v : out.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK_THROWS_AS(vae.decode(TensorF::zeros({1, 4, 4, 4})), Error);
}

TEST_CASE("vae: mean mode deterministic, sample mode seeded") {
    Rng rng(13);
    VaeModel<float> vae = VaeModel<float>::init(rng);
    vae.trained = true; // random weights; the wrappers only check the flag
    SceneSpec spec;
    spec.background = ColorName::Black;
    spec.objects.push_back({ShapeKind::Square, ColorName::Yellow, 20, 40, 8});
    const PixelImage img = render_scene(spec);

    const LatentImage a = vae_encode(vae, img, EncodeMode::Mean);
    const LatentImage b = vae_encode(vae, img, EncodeMode::Mean);
    CHECK(a.values == b.values);
    CHECK(a.provenance == LatentProvenance::VaeEncoded);

    const LatentImage s1 = vae_encode(vae, img, EncodeMode::Sample, 42);
    const LatentImage s2 = vae_encode(vae, img, EncodeMode::Sample, 42);
    const LatentImage s3 = vae_encode(vae, img, EncodeMode::Sample, 43);
    CHECK(s1.values == s2.values);
    CHECK(s1.values != s3.values);

    vae.trained = false;
    CHECK_THROWS_AS(vae_encode(vae, img, EncodeMode::Mean), Error);
    CHECK_THROWS_AS(vae_decode_image(vae, a), Error);
}

TEST_CASE("vae: checkpoint round trip re-encodes bit-identically") {
    Rng rng(14);
    VaeModel<float> vae = VaeModel<float>::init(rng);
    vae.trained = true;
    vae.set_recalibration({0.1, -0.3, 0.02, 0.7}, {0.8, 1.3, 0.5, 2.1});
    VaeTrainResult stats;
    stats.val_mse = 0.001;
    Checkpoint ckpt = vae_to_checkpoint(vae, stats);
    const std::string p = temp_path("vae.lckp");
    ckpt.save(p);
    VaeModel<float> back = vae_from_checkpoint<float>(Checkpoint::load(p));

    SceneSpec spec;
    spec.background = ColorName::Gray;
    spec.objects.push_back({ShapeKind::Triangle, ColorName::Green, 40, 25, 10});
    const PixelImage img = render_scene(spec);
    const LatentImage za = vae_encode(vae, img, EncodeMode::Mean);
    const LatentImage zb = vae_encode(back, img, EncodeMode::Mean);
    CHECK(za.values == zb.values);
}

TEST_CASE("latent file order round trip") {
    Rng rng(15);
    std::vector<float> hwc(kLatentSize);
    for (float& v : hwc) v = static_cast<float>(rng.normal());
    const auto chw = latent_to_file_order(hwc);
    const auto back = latent_from_file_order(chw);
    CHECK(back == hwc);
    // spot-check the (channel, row, col) nesting
    CHECK(chw[0] == hwc[0]);                      // c0,y0,x0
    CHECK(chw[1] == hwc[kLatentChannels]);        // c0,y0,x1
    CHECK(chw[kLatentSide * kLatentSide] == hwc[1]); // c1,y0,x0
}

TEST_CASE("latent preview: constant latents and offset invariance") {
    // all-zero latent -> uniform mid-gray
    std::vector<float> zero(kLatentSize, 0.0f);
    const auto grey = latent_preview(zero);
    for (uint8_t v : grey) CHECK(v == 128);

    // adding a global constant to all channels leaves the preview unchanged
    Rng rng(16);
    std::vector<float> z(kLatentSize);
    for (float& v : z) v = static_cast<float>(rng.normal());
    std::vector<float> shifted = z;
    for (float& v : shifted) v += 0.73f;
    CHECK(latent_preview(z) == latent_preview(shifted));
}

TEST_CASE("vae_train input validation") {
    Rng rng(17);
    VaeModel<float> vae = VaeModel<float>::init(rng);
    const std::string dir = (fs::temp_directory_path() / "lclip_codec_tiny_ds").string();
    fs::remove_all(dir);
    DatasetBuildConfig cfg;
    cfg.size = 8;
    const Dataset tiny = Dataset::build(cfg, dir);
    VaeTrainConfig tcfg;
    CHECK_THROWS_AS(vae_train(vae, tiny, tiny, tcfg), Error); // needs >= 1000 records
}
