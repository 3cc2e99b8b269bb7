// End-to-end model benchmarks: the encoders, the decoder, and one full
// noise-optimization iteration on randomly initialized weights.

#include <benchmark/benchmark.h>

#include "lclip/reward.hpp"

using namespace lclip;

namespace {

struct Models {
    ClipModel<float> latent_clip;
    ClipModel<float> pixel_clip;
    VaeModel<float> vae;
    GeneratorModel<float> gen;

    Models()
        : latent_clip([] {
              Rng rng(11);
              return ClipModel<float>::init(EncoderConfig::latent_desk(), rng);
          }()),
          pixel_clip([] {
              Rng rng(12);
              return ClipModel<float>::init(EncoderConfig::pixel_desk(), rng);
          }()),
          vae([] {
              Rng rng(13);
              return VaeModel<float>::init(rng);
          }()),
          gen([] {
              Rng rng(14);
              GeneratorModel<float> g = GeneratorModel<float>::init(GeneratorConfig{}, rng);
              g.trained = true;
              return g;
          }()) {}
};

Models& models() {
    static Models m;
    return m;
}

void BM_EncodeVisualLatent(benchmark::State& state) {
    Rng rng(21);
    TensorF z = TensorF::randn({state.range(0), 8, 8, 4}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF e = models().latent_clip.encode_visual(z);
        benchmark::DoNotOptimize(e.values().data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeVisualLatent)->Arg(1)->Arg(128);

void BM_EncodeVisualPixel(benchmark::State& state) {
    Rng rng(22);
    TensorF x = TensorF::randn({state.range(0), 64, 64, 3}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF e = models().pixel_clip.encode_visual(x);
        benchmark::DoNotOptimize(e.values().data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeVisualPixel)->Arg(1)->Arg(128);

void BM_VaeDecode(benchmark::State& state) {
    Rng rng(23);
    TensorF z = TensorF::randn({1, 8, 8, 4}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF img = models().vae.decode(z);
        benchmark::DoNotOptimize(img.values().data());
    }
}
BENCHMARK(BM_VaeDecode);

void BM_GeneratorStep(benchmark::State& state) {
    Rng rng(24);
    TensorF eps = TensorF::randn({1, 8, 8, 4}, rng);
    const TokenBatch c = TokenBatch::from({Tokenizer::instance().tokenize("a red circle")});
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF z = models().gen.generate(eps, c);
        benchmark::DoNotOptimize(z.values().data());
    }
}
BENCHMARK(BM_GeneratorStep);

void BM_RenoIterationLatent(benchmark::State& state) {
    const TokenSequence prompt = Tokenizer::instance().tokenize("a red circle");
    std::vector<RewardTerm<float>> terms = {
        {RewardKind::ClipScore, &models().latent_clip, nullptr, 1.0, ""}};
    const auto embeds = reward_text_embeds(terms, prompt);
    const TokenBatch batch = TokenBatch::from({prompt});
    const NoiseState eps = NoiseState::draw(7);
    for (auto _ : state) {
        auto ev = detail_reno::eval_objective(models().gen, terms, batch, embeds, eps.eps, 0.01,
                                              true, nullptr);
        benchmark::DoNotOptimize(ev.eps_grad.data());
    }
}
BENCHMARK(BM_RenoIterationLatent);

void BM_RenoIterationPixel(benchmark::State& state) {
    const TokenSequence prompt = Tokenizer::instance().tokenize("a red circle");
    std::vector<RewardTerm<float>> terms = {
        {RewardKind::ClipScore, &models().pixel_clip, &models().vae, 1.0, ""}};
    const auto embeds = reward_text_embeds(terms, prompt);
    const TokenBatch batch = TokenBatch::from({prompt});
    const NoiseState eps = NoiseState::draw(7);
    for (auto _ : state) {
        auto ev = detail_reno::eval_objective(models().gen, terms, batch, embeds, eps.eps, 0.01,
                                              true, nullptr);
        benchmark::DoNotOptimize(ev.eps_grad.data());
    }
}
BENCHMARK(BM_RenoIterationPixel);

} // namespace
