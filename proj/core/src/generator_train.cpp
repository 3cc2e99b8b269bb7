#include "lclip/generator.hpp"

#include <fstream>

#include "lclip/clip_train.hpp"

namespace lclip {

LatentImage add_noise(const LatentImage& z, const NoiseState& eps, double level) {
    const TensorF out = add_noise(z.to_tensor(), eps.to_tensor(), level);
    return LatentImage::from_tensor(out, LatentProvenance::Noised, z.class_id);
}

LatentImage generate_latent(const GeneratorModel<float>& gen, const NoiseState& eps,
                            const TokenSequence& caption) {
    check(gen.trained, "generate: generator checkpoint is untrained");
    NoGradGuard ng;
    const TensorF z = gen.generate(eps.to_tensor(), TokenBatch::from({caption}));
    return LatentImage::from_tensor(z, LatentProvenance::Generated);
}

GenTrainResult train_generator(GeneratorModel<float>& model, const Dataset& train,
                               const Dataset& val, const GenTrainConfig& cfg) {
    check(train.has_latents(), "train_generator: dataset has no latents; run train-vae first");
    check(val.has_latents(), "train_generator: validation set has no latents");
    check(cfg.steps >= 1 && cfg.batch >= 1, "train_generator: bad steps/batch");
    check(cfg.level_min >= 0.0 && cfg.level_max <= 1.0 && cfg.level_min <= cfg.level_max,
          "train_generator: level range must sit inside [0,1]");

    AdamW<float> opt(collect_params<float>(model));
    Rng rng(Rng::derive_seed(cfg.seed, 0x9e4));

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        check(log.good(), "train_generator: cannot open log ", cfg.log_path);
    }

    std::vector<int64_t> order(static_cast<size_t>(train.size()));
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
        TensorF z = dataset_latent_tensor(train, idx);
        std::vector<TokenSequence> seqs;
        for (int64_t i : idx) seqs.push_back(train.record(i).tokens);
        const TokenBatch tokens = TokenBatch::from(seqs);

        const double level = rng.uniform(cfg.level_min, cfg.level_max);
        TensorF eps = TensorF::randn(z.shape(), rng);
        TensorF noised = add_noise(z, eps, level);
        TensorF pred = model.denoise(noised, tokens, level);
        TensorF diff = ops::sub(pred, z);
        TensorF loss = ops::mean(ops::mul(diff, diff));

        loss_val = loss.item();
        check(std::isfinite(loss_val), "train_generator: loss diverged at step ", step);
        opt.zero_grad();
        backward(loss);
        const double lr = cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min);
        opt.step(lr);
        if (log.is_open())
            log << "{\"step\":" << step << ",\"lr\":" << lr << ",\"loss\":" << loss_val
                << ",\"level\":" << level << "}\n";
    }
    model.trained = true;

    // validation at full noise vs the dataset-mean predictor
    GenTrainResult res;
    res.final_loss = loss_val;
    NoGradGuard ng;
    std::vector<double> mean_latent(kLatentSize, 0.0);
    for (int64_t i = 0; i < train.size(); ++i) {
        const auto hwc = latent_from_file_order(train.latent(i));
        for (int j = 0; j < kLatentSize; ++j) mean_latent[static_cast<size_t>(j)] += hwc[static_cast<size_t>(j)];
    }
    for (double& v : mean_latent) v /= double(train.size());

    Rng vrng(Rng::derive_seed(cfg.seed, 0x9e5));
    double mse_model = 0, mse_base = 0;
    int64_t count = 0;
    const int64_t vb = 64;
    for (int64_t at = 0; at < val.size(); at += vb) {
        const int64_t n = std::min(vb, val.size() - at);
        std::vector<int64_t> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), at);
        TensorF z = dataset_latent_tensor(val, idx);
        std::vector<TokenSequence> seqs;
        for (int64_t i : idx) seqs.push_back(val.record(i).tokens);
        TensorF eps = TensorF::randn(z.shape(), vrng);
        TensorF pred = model.denoise(add_noise(z, eps, 1.0), TokenBatch::from(seqs), 1.0);
        for (int64_t i = 0; i < z.numel(); ++i) {
            const double d = double(pred.values()[static_cast<size_t>(i)]) -
                             double(z.values()[static_cast<size_t>(i)]);
            const double db = mean_latent[static_cast<size_t>(i % kLatentSize)] -
                              double(z.values()[static_cast<size_t>(i)]);
            mse_model += d * d;
            mse_base += db * db;
        }
        count += z.numel();
    }
    res.val_mse_full_noise = mse_model / double(count);
    res.val_mse_mean_baseline = mse_base / double(count);
    return res;
}

Checkpoint generator_to_checkpoint(GeneratorModel<float>& model, const nlohmann::json& meta) {
    Checkpoint ckpt;
    ckpt.model_kind = "generator";
    ckpt.config = {{"generator", model.cfg.to_json()}, {"trained", model.trained},
                   {"training", meta}};
    model.for_each_param([&](const std::string& name, Tensor<float>& t) {
        ckpt.put(name, t.detach_copy());
    });
    return ckpt;
}

Dataset build_generated_benchmark(const Dataset& source, const GeneratorModel<float>& gen,
                                  const VaeModel<float>& vae, double level,
                                  const std::string& out_dir, uint64_t seed) {
    check(gen.trained, "build_generated_benchmark: generator is untrained");
    check(source.has_latents(), "build_generated_benchmark: source dataset has no latents");
    check(level >= 0.0 && level <= 1.0, "build_generated_benchmark: level outside [0,1]");

    NoGradGuard ng;
    const auto& tok = Tokenizer::instance();
    std::vector<DatasetRecord> records;
    records.reserve(static_cast<size_t>(source.size()));
    std::vector<float> latents;
    latents.reserve(static_cast<size_t>(source.size()) * kLatentSize);

    const int64_t bs = 64;
    for (int64_t at = 0; at < source.size(); at += bs) {
        const int64_t n = std::min(bs, source.size() - at);
        std::vector<int64_t> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), at);
        TensorF z = dataset_latent_tensor(source, idx);

        // conditioning caption: the class template when labeled, else the
        // record's own caption
        std::vector<TokenSequence> seqs;
        for (int64_t i : idx) {
            const auto& rec = source.record(i);
            if (rec.class_id != kNoClass)
                seqs.push_back(tok.tokenize(strcat_all("a ", class_label(rec.class_id))));
            else
                seqs.push_back(rec.tokens);
        }

        TensorF z_out;
        if (level == 0.0) {
            z_out = z; // the denoiser is skipped at the identity endpoint
        } else {
            Rng nrng(Rng::derive_seed(seed, 0xb3 + static_cast<uint64_t>(at)));
            TensorF eps = TensorF::randn(z.shape(), nrng);
            z_out = gen.denoise(add_noise(z, eps, level), TokenBatch::from(seqs), level);
        }
        TensorF decoded = vae.decode(z_out);

        for (int64_t i = 0; i < n; ++i) {
            DatasetRecord rec;
            rec.class_id = source.record(at + i).class_id;
            rec.tokens = seqs[static_cast<size_t>(i)];
            std::vector<float> px(decoded.values().begin() + i * kCanvas * kCanvas * 3,
                                  decoded.values().begin() + (i + 1) * kCanvas * kCanvas * 3);
            rec.image = PixelImage::from_float(px);
            records.push_back(std::move(rec));
            const std::span<const float> row(z_out.values().data() + i * kLatentSize,
                                             kLatentSize);
            const auto chw = latent_to_file_order(row);
            latents.insert(latents.end(), chw.begin(), chw.end());
        }
    }
    return Dataset::write(out_dir, records, latents, "generated");
}

} // namespace lclip
