#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "lclip/generator.hpp"

using namespace lclip;

namespace {
GeneratorModel<float> tiny_generator(int num_steps = 1, uint64_t seed = 31) {
    GeneratorConfig cfg;
    cfg.num_steps = num_steps;
    cfg.hidden = 32;
    cfg.cond_dim = 16;
    cfg.cond_hidden = 32;
    Rng rng(seed);
    return GeneratorModel<float>::init(cfg, rng);
}
} // namespace

TEST_CASE("add_noise: schedule endpoints are exact") {
    Rng rng(30);
    TensorF z = TensorF::randn({1, 8, 8, 4}, rng);
    TensorF eps = TensorF::randn({1, 8, 8, 4}, rng);
    TensorF z0 = add_noise(z, eps, 0.0);
    TensorF z1 = add_noise(z, eps, 1.0);
    for (int64_t i = 0; i < z.numel(); ++i) {
        CHECK(z0.values()[static_cast<size_t>(i)] == z.values()[static_cast<size_t>(i)]);
        CHECK(z1.values()[static_cast<size_t>(i)] == eps.values()[static_cast<size_t>(i)]);
    }
    CHECK_THROWS_AS(add_noise(z, eps, 1.5), Error);
    CHECK_THROWS_AS(add_noise(z, eps, -0.1), Error);
}

TEST_CASE("add_noise: 66% level coefficients") {
    TensorF z = TensorF::filled({1, 8, 8, 4}, 1.0f);
    TensorF eps = TensorF::filled({1, 8, 8, 4}, 0.0f);
    TensorF a = add_noise(z, eps, 0.66);
    CHECK(a.values()[0] == doctest::Approx(0.5831).epsilon(1e-3)); // sqrt(0.34)
    TensorF b = add_noise(eps, z, 0.66);
    CHECK(b.values()[0] == doctest::Approx(0.8124).epsilon(1e-3)); // sqrt(0.66)
}

TEST_CASE("add_noise: variance preservation over 10^4 draws") {
    Rng rng(32);
    const int n = 10000;
    double sum = 0, sumsq = 0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal(), e = rng.normal();
        const double v = std::sqrt(1.0 - 0.66) * z + std::sqrt(0.66) * e;
        sum += v;
        sumsq += v * v;
    }
    const double var = sumsq / n - (sum / n) * (sum / n);
    CHECK(var == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("generate: T=1 equals a single denoise at level 1") {
    GeneratorModel<float> gen = tiny_generator(1);
    const auto& tok = Tokenizer::instance();
    const TokenBatch c = TokenBatch::from({tok.tokenize("a blue square")});
    Rng rng(33);
    NoGradGuard ng;
    TensorF eps = TensorF::randn({1, 8, 8, 4}, rng);
    TensorF g = gen.generate(eps, c);
    TensorF f = gen.denoise(eps, c, 1.0);
    for (int64_t i = 0; i < g.numel(); ++i)
        CHECK(g.values()[static_cast<size_t>(i)] == f.values()[static_cast<size_t>(i)]);

    // repeatability
    TensorF g2 = gen.generate(eps, c);
    for (int64_t i = 0; i < g.numel(); ++i)
        CHECK(g.values()[static_cast<size_t>(i)] == g2.values()[static_cast<size_t>(i)]);
}

TEST_CASE("generate: multi-step schedule runs and differs from single-step") {
    GeneratorModel<float> gen1 = tiny_generator(1, 34);
    GeneratorModel<float> gen4 = tiny_generator(4, 34);
    const TokenBatch c = TokenBatch::from({Tokenizer::instance().tokenize("a red star")});
    Rng rng(35);
    NoGradGuard ng;
    TensorF eps = TensorF::randn({1, 8, 8, 4}, rng);
    TensorF a = gen1.generate(eps, c);
    TensorF b = gen4.generate(eps, c);
    CHECK(a.shape() == b.shape());
    bool any_diff = false;
    for (int64_t i = 0; i < a.numel(); ++i)
        any_diff |= a.values()[static_cast<size_t>(i)] != b.values()[static_cast<size_t>(i)];
    CHECK(any_diff);
    CHECK_THROWS_AS(GeneratorConfig{.num_steps = 5}.validate(), Error);
}

TEST_CASE("caption conditioning changes the output") {
    GeneratorModel<float> gen = tiny_generator();
    const auto& tok = Tokenizer::instance();
    Rng rng(36);
    NoGradGuard ng;
    TensorF eps = TensorF::randn({1, 8, 8, 4}, rng);
    TensorF a = gen.generate(eps, TokenBatch::from({tok.tokenize("a red circle")}));
    TensorF b = gen.generate(eps, TokenBatch::from({tok.tokenize("a blue square")}));
    bool any_diff = false;
    for (int64_t i = 0; i < a.numel(); ++i)
        any_diff |= a.values()[static_cast<size_t>(i)] != b.values()[static_cast<size_t>(i)];
    CHECK(any_diff);
}

TEST_CASE("provenance stamping") {
    Rng rng(37);
    std::vector<float> vals(kLatentSize);
    for (float& v : vals) v = static_cast<float>(rng.normal());
    LatentImage z;
    z.values = vals;
    z.provenance = LatentProvenance::VaeEncoded;
    const NoiseState eps = NoiseState::draw(5);
    const LatentImage noised = add_noise(z, eps, 0.5);
    CHECK(noised.provenance == LatentProvenance::Noised);

    GeneratorModel<float> gen = tiny_generator();
    gen.trained = true;
    const LatentImage generated =
        generate_latent(gen, eps, Tokenizer::instance().tokenize("a red circle"));
    CHECK(generated.provenance == LatentProvenance::Generated);

    gen.trained = false;
    CHECK_THROWS_AS(generate_latent(gen, eps, Tokenizer::instance().tokenize("a red circle")),
                    Error); // untrained checkpoint refuses to generate
}

TEST_CASE("noise state: seeded draws are standard-normal-ish and reproducible") {
    const NoiseState a = NoiseState::draw(77);
    const NoiseState b = NoiseState::draw(77);
    CHECK(a.eps == b.eps);
    const NoiseState c = NoiseState::draw(78);
    CHECK(a.eps != c.eps);
    double mean = 0;
    for (float v : a.eps) mean += v;
    mean /= double(a.eps.size());
    CHECK(std::abs(mean) < 0.2);
}

TEST_CASE("generator checkpoint round trip") {
    GeneratorModel<float> gen = tiny_generator();
    gen.trained = true;
    Checkpoint ckpt = generator_to_checkpoint(gen, {});
    const std::string path =
        (std::filesystem::temp_directory_path() / "lclip_gen_rt.lckp").string();
    ckpt.save(path);
    GeneratorModel<float> back = generator_from_checkpoint<float>(Checkpoint::load(path));
    CHECK(back.trained);
    CHECK(back.cfg.num_steps == gen.cfg.num_steps);

    const TokenBatch c = TokenBatch::from({Tokenizer::instance().tokenize("a green triangle")});
    Rng rng(38);
    NoGradGuard ng;
    TensorF eps = TensorF::randn({1, 8, 8, 4}, rng);
    TensorF za = gen.generate(eps, c);
    TensorF zb = back.generate(eps, c);
    for (int64_t i = 0; i < za.numel(); ++i)
        CHECK(za.values()[static_cast<size_t>(i)] == zb.values()[static_cast<size_t>(i)]);
}
