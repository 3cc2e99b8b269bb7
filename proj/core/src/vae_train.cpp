#include "lclip/vae.hpp"

#include <fstream>

namespace lclip {

TensorF LatentImage::to_tensor() const {
    check(values.size() == kLatentSize, "LatentImage holds ", values.size(), " values");
    return TensorF::from({1, kLatentSide, kLatentSide, kLatentChannels}, values);
}

LatentImage LatentImage::from_tensor(const TensorF& t, LatentProvenance prov, int class_id) {
    check(t.numel() == kLatentSize, "LatentImage::from_tensor: expected ", kLatentSize,
          " values, got ", t.numel());
    LatentImage z;
    z.values.assign(t.values().begin(), t.values().end());
    z.provenance = prov;
    z.class_id = class_id;
    for (float v : z.values)
        check(std::isfinite(v), "LatentImage: non-finite latent value");
    return z;
}

std::vector<float> latent_to_file_order(std::span<const float> hwc) {
    check(hwc.size() == kLatentSize, "latent_to_file_order: bad size");
    std::vector<float> chw(kLatentSize);
    for (int c = 0; c < kLatentChannels; ++c)
        for (int y = 0; y < kLatentSide; ++y)
            for (int x = 0; x < kLatentSide; ++x)
                chw[static_cast<size_t>((c * kLatentSide + y) * kLatentSide + x)] =
                    hwc[static_cast<size_t>((y * kLatentSide + x) * kLatentChannels + c)];
    return chw;
}

std::vector<float> latent_from_file_order(std::span<const float> chw) {
    check(chw.size() == kLatentSize, "latent_from_file_order: bad size");
    std::vector<float> hwc(kLatentSize);
    for (int c = 0; c < kLatentChannels; ++c)
        for (int y = 0; y < kLatentSide; ++y)
            for (int x = 0; x < kLatentSide; ++x)
                hwc[static_cast<size_t>((y * kLatentSide + x) * kLatentChannels + c)] =
                    chw[static_cast<size_t>((c * kLatentSide + y) * kLatentSide + x)];
    return hwc;
}

namespace {

TensorF pixels_to_tensor(const std::vector<const PixelImage*>& imgs) {
    const int64_t b = static_cast<int64_t>(imgs.size());
    std::vector<float> data;
    data.reserve(static_cast<size_t>(b) * kCanvas * kCanvas * 3);
    for (const PixelImage* img : imgs) {
        auto v = img->to_float();
        data.insert(data.end(), v.begin(), v.end());
    }
    return TensorF::from({b, kCanvas, kCanvas, 3}, std::move(data));
}

} // namespace

TensorF vae_encode_batch(const VaeModel<float>& model, const std::vector<const PixelImage*>& imgs,
                         EncodeMode mode, uint64_t seed) {
    check(!imgs.empty(), "vae_encode_batch: empty batch");
    check(model.trained, "vae encode: untrained checkpoint");
    NoGradGuard ng;
    auto [mean, logvar] = model.encode_moments(pixels_to_tensor(imgs));
    if (mode == EncodeMode::Mean) return mean;
    Rng rng(seed);
    std::vector<float> z(static_cast<size_t>(mean.numel()));
    for (size_t i = 0; i < z.size(); ++i) {
        const float sigma = std::exp(0.5f * logvar.values()[i]);
        z[i] = mean.values()[i] + sigma * static_cast<float>(rng.normal());
    }
    return TensorF::from(mean.shape(), std::move(z));
}

LatentImage vae_encode(const VaeModel<float>& model, const PixelImage& img, EncodeMode mode,
                       uint64_t seed) {
    const TensorF z = vae_encode_batch(model, {&img}, mode, seed);
    return LatentImage::from_tensor(z, LatentProvenance::VaeEncoded);
}

PixelImage vae_decode_image(const VaeModel<float>& model, const LatentImage& z) {
    check(model.trained, "vae decode: untrained checkpoint");
    NoGradGuard ng;
    const TensorF out = model.decode(z.to_tensor());
    std::vector<float> v(out.values().begin(), out.values().end());
    return PixelImage::from_float(v);
}

std::vector<uint8_t> latent_preview(std::span<const float> latent_hwc) {
    check(latent_hwc.size() == kLatentSize, "latent_preview: expected ", kLatentSize, " floats");
    // rows sum to the same constant, so a global offset in the latent shifts
    // every preview value equally and the rescale removes it
    static constexpr float kProj[3][4] = {
        {0.3f, -0.2f, 0.2f, 0.0f},
        {-0.2f, 0.3f, 0.2f, 0.0f},
        {0.2f, 0.0f, -0.2f, 0.3f},
    };
    std::array<float, kLatentSide * kLatentSide * 3> v{};
    float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
    for (int p = 0; p < kLatentSide * kLatentSide; ++p) {
        for (int r = 0; r < 3; ++r) {
            float acc = 0;
            for (int c = 0; c < kLatentChannels; ++c)
                acc += kProj[r][c] * latent_hwc[static_cast<size_t>(p * kLatentChannels + c)];
            v[static_cast<size_t>(p * 3 + r)] = acc;
            lo = std::min(lo, acc);
            hi = std::max(hi, acc);
        }
    }
    std::vector<uint8_t> out(v.size());
    const float range = hi - lo;
    for (size_t i = 0; i < v.size(); ++i) {
        const float x = range < 1e-8f ? 0.5f : (v[i] - lo) / range;
        out[i] = static_cast<uint8_t>(std::lround(x * 255.0f));
    }
    return out;
}

VaeTrainResult vae_train(VaeModel<float>& model, const Dataset& train, const Dataset& val,
                         const VaeTrainConfig& cfg) {
    check(train.size() >= 1000, "vae_train: needs at least 1000 records, got ", train.size());
    check(val.size() >= 1, "vae_train: empty validation set");
    check(cfg.steps >= 1 && cfg.batch >= 1, "vae_train: steps and batch must be positive");

    AdamW<float> opt(collect_params<float>(model));
    Rng rng(Rng::derive_seed(cfg.seed, 0xae));

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        check(log.good(), "vae_train: cannot open log ", cfg.log_path);
    }

    std::vector<int64_t> order(static_cast<size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();

    double loss_val = 0;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<const PixelImage*> batch;
        batch.reserve(static_cast<size_t>(cfg.batch));
        for (int64_t i = 0; i < cfg.batch; ++i) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(&train.record(order[cursor++]).image);
        }
        TensorF x = pixels_to_tensor(batch);

        auto [mu, logvar] = model.encode_moments_raw(x);
        // reparameterized sample
        TensorF eta = TensorF::randn(mu.shape(), rng);
        TensorF z = ops::add(mu, ops::mul(ops::exp_(ops::mul_scalar(logvar, 0.5f)), eta));
        TensorF recon = model.decode_raw(z);
        TensorF diff = ops::sub(recon, x);
        TensorF mse = ops::mean(ops::mul(diff, diff));
        // KL toward N(0, I), averaged per latent element:
        // 0.5 * mean(mu^2 + e^lv - 1 - lv)
        TensorF kl_terms = ops::sub(ops::add(ops::mul(mu, mu), ops::exp_(logvar)),
                                    ops::add_scalar(logvar, 1.0f));
        TensorF kl = ops::mul_scalar(ops::mean(kl_terms), 0.5f);
        TensorF loss = ops::add(mse, ops::mul_scalar(kl, static_cast<float>(cfg.beta_kl)));

        loss_val = loss.item();
        check(std::isfinite(loss_val), "vae_train: loss diverged (non-finite) at step ", step);
        opt.zero_grad();
        backward(loss);
        const double lr = cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min);
        opt.step(lr);
        if (log.is_open())
            log << "{\"step\":" << step << ",\"lr\":" << lr << ",\"loss\":" << loss_val
                << ",\"mse\":" << mse.item() << ",\"kl\":" << kl.item() << "}\n";
    }

    model.trained = true;

    // fit the per-channel recalibration on raw train-set posterior means,
    // so emitted latents are standardized by construction
    {
        NoGradGuard ng;
        std::array<double, 4> rsum{}, rsumsq{};
        int64_t rn = 0;
        const int64_t fit_n = std::min<int64_t>(train.size(), 4000);
        for (int64_t at = 0; at < fit_n; at += 64) {
            const int64_t n = std::min<int64_t>(64, fit_n - at);
            std::vector<const PixelImage*> batch;
            for (int64_t i = 0; i < n; ++i) batch.push_back(&train.record(at + i).image);
            auto [mu, logvar] = model.encode_moments_raw(pixels_to_tensor(batch));
            const auto mv = mu.values();
            for (int64_t i = 0; i < mu.numel(); ++i) {
                const int c = static_cast<int>(i % kLatentChannels);
                rsum[static_cast<size_t>(c)] += mv[static_cast<size_t>(i)];
                rsumsq[static_cast<size_t>(c)] +=
                    double(mv[static_cast<size_t>(i)]) * mv[static_cast<size_t>(i)];
            }
            rn += mu.numel() / kLatentChannels;
        }
        std::vector<double> shift(kLatentChannels), scale(kLatentChannels);
        for (int c = 0; c < kLatentChannels; ++c) {
            const double m = rsum[static_cast<size_t>(c)] / double(rn);
            const double var =
                rsumsq[static_cast<size_t>(c)] / double(rn) - m * m;
            shift[static_cast<size_t>(c)] = m;
            scale[static_cast<size_t>(c)] = std::sqrt(std::max(var, 1e-12));
        }
        model.set_recalibration(shift, scale);
    }

    // validation statistics on (recalibrated) posterior means
    VaeTrainResult res;
    res.final_loss = loss_val;
    double mse_acc = 0;
    std::array<double, 4> sum{}, sumsq{};
    int64_t latent_n = 0;
    const int64_t vb = 64;
    NoGradGuard ng;
    for (int64_t at = 0; at < val.size(); at += vb) {
        const int64_t n = std::min(vb, val.size() - at);
        std::vector<const PixelImage*> batch;
        for (int64_t i = 0; i < n; ++i) batch.push_back(&val.record(at + i).image);
        TensorF x = pixels_to_tensor(batch);
        auto [mu, logvar] = model.encode_moments(x);
        TensorF recon = model.decode(mu);
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double d = double(recon.values()[static_cast<size_t>(i)]) -
                             double(x.values()[static_cast<size_t>(i)]);
            mse_acc += d * d;
        }
        const auto mv = mu.values();
        for (int64_t i = 0; i < mu.numel(); ++i) {
            const int c = static_cast<int>(i % kLatentChannels);
            sum[static_cast<size_t>(c)] += mv[static_cast<size_t>(i)];
            sumsq[static_cast<size_t>(c)] += double(mv[static_cast<size_t>(i)]) * mv[static_cast<size_t>(i)];
        }
        latent_n += mu.numel() / kLatentChannels;
    }
    res.val_mse = mse_acc / (double(val.size()) * kCanvas * kCanvas * 3);
    for (int c = 0; c < 4; ++c) {
        const double m = sum[static_cast<size_t>(c)] / double(latent_n);
        res.latent_mean[static_cast<size_t>(c)] = m;
        res.latent_std[static_cast<size_t>(c)] =
            std::sqrt(std::max(0.0, sumsq[static_cast<size_t>(c)] / double(latent_n) - m * m));
    }
    return res;
}

Checkpoint vae_to_checkpoint(VaeModel<float>& model, const VaeTrainResult& stats) {
    Checkpoint ckpt;
    ckpt.model_kind = "vae";
    std::vector<double> shift(model.latent_shift.values().begin(),
                              model.latent_shift.values().end());
    std::vector<double> scale(model.latent_scale.values().begin(),
                              model.latent_scale.values().end());
    ckpt.config = {{"latent_channels", kLatentChannels},
                   {"latent_side", kLatentSide},
                   {"canvas", kCanvas},
                   {"val_mse", stats.val_mse},
                   {"latent_mean", stats.latent_mean},
                   {"latent_std", stats.latent_std},
                   {"latent_shift", shift},
                   {"latent_scale", scale},
                   {"trained", model.trained}};
    model.for_each_param([&](const std::string& name, Tensor<float>& t) {
        ckpt.put(name, t.detach_copy());
    });
    return ckpt;
}

void write_dataset_latents(const VaeModel<float>& model, Dataset& ds) {
    std::vector<float> all;
    all.reserve(static_cast<size_t>(ds.size()) * kLatentSize);
    const int64_t bs = 64;
    for (int64_t at = 0; at < ds.size(); at += bs) {
        const int64_t n = std::min(bs, ds.size() - at);
        std::vector<const PixelImage*> batch;
        for (int64_t i = 0; i < n; ++i) batch.push_back(&ds.record(at + i).image);
        const TensorF z = vae_encode_batch(model, batch, EncodeMode::Mean);
        for (int64_t i = 0; i < n; ++i) {
            const auto row = std::span<const float>(
                z.values().data() + static_cast<size_t>(i) * kLatentSize, kLatentSize);
            const auto chw = latent_to_file_order(row);
            all.insert(all.end(), chw.begin(), chw.end());
        }
    }
    ds.attach_latents(std::move(all));
}

} // namespace lclip
