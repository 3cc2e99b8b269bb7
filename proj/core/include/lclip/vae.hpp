#pragma once

#include <atomic>
#include <optional>

#include "lclip/checkpoint.hpp"
#include "lclip/dataset.hpp"
#include "lclip/nn.hpp"
#include "lclip/scene.hpp"

namespace lclip {

// Convolutional VAE with the 8x spatial reduction and 4 latent channels:
// encoder 3 -> 32 -> 64 -> 8 (stride-2 blocks) with a 1x1 head splitting
// 8 channels into mean/logvar, mirror decoder with nearest-upsample + conv.

enum class LatentProvenance : uint8_t { VaeEncoded, Generated, Noised };

inline const char* provenance_name(LatentProvenance p) {
    switch (p) {
        case LatentProvenance::VaeEncoded: return "vae_encoded";
        case LatentProvenance::Generated: return "generated";
        default: return "noised";
    }
}

// Value-type latent grid used at module boundaries; the differentiable paths
// work on tensors directly. Values are stored in [H, W, C] order.
struct LatentImage {
    std::vector<float> values; // kLatentSize floats
    LatentProvenance provenance = LatentProvenance::VaeEncoded;
    int class_id = -1;

    TensorF to_tensor() const; // [1, 8, 8, 4]
    static LatentImage from_tensor(const TensorF& t, LatentProvenance prov, int class_id = -1);
};

// Conversion between internal [H,W,C] order and the on-disk [C,H,W] order of
// latents.bin.
std::vector<float> latent_to_file_order(std::span<const float> hwc);
std::vector<float> latent_from_file_order(std::span<const float> chw);

namespace detail {
inline std::atomic<uint64_t> vae_decode_counter{0};
}

// Total decode invocations in this process; the decode-free guarantee of the
// latent reward path is asserted against this counter.
inline uint64_t vae_decode_calls() { return detail::vae_decode_counter.load(); }

template <class S>
struct VaeModel {
    Conv<S> enc1, enc2, enc3, moments;
    Conv<S> dec1, dec2, dec3, dec_out;
    // Per-channel latent recalibration, fitted after training so the emitted
    // latents are standardized exactly; decode applies the inverse, keeping
    // decode(encode(x)) unchanged.
    Tensor<S> latent_shift, latent_scale;      // [C]
    Tensor<S> latent_inv_scale, latent_log_adj; // derived: 1/scale, -2 ln scale
    bool trained = false;

    static VaeModel init(Rng& rng) {
        VaeModel m;
        m.enc1 = Conv<S>::init(3, 3, 3, 32, 2, 1, rng);
        m.enc2 = Conv<S>::init(3, 3, 32, 64, 2, 1, rng);
        m.enc3 = Conv<S>::init(3, 3, 64, 8, 2, 1, rng);
        m.moments = Conv<S>::init(1, 1, 8, 8, 1, 0, rng);
        m.dec1 = Conv<S>::init(3, 3, 4, 64, 1, 1, rng);
        m.dec2 = Conv<S>::init(3, 3, 64, 32, 1, 1, rng);
        m.dec3 = Conv<S>::init(3, 3, 32, 16, 1, 1, rng);
        m.dec_out = Conv<S>::init(3, 3, 16, 3, 1, 1, rng);
        m.set_recalibration(std::vector<double>(kLatentChannels, 0.0),
                            std::vector<double>(kLatentChannels, 1.0));
        return m;
    }

    void set_recalibration(const std::vector<double>& shift, const std::vector<double>& scale) {
        check(shift.size() == kLatentChannels && scale.size() == kLatentChannels,
              "vae recalibration: need ", kLatentChannels, " channel values");
        std::vector<S> sh(kLatentChannels), sc(kLatentChannels), inv(kLatentChannels),
            adj(kLatentChannels);
        for (int c = 0; c < kLatentChannels; ++c) {
            check(scale[static_cast<size_t>(c)] > 1e-8, "vae recalibration: non-positive scale");
            sh[static_cast<size_t>(c)] = static_cast<S>(shift[static_cast<size_t>(c)]);
            sc[static_cast<size_t>(c)] = static_cast<S>(scale[static_cast<size_t>(c)]);
            inv[static_cast<size_t>(c)] =
                static_cast<S>(1.0 / static_cast<double>(sc[static_cast<size_t>(c)]));
            adj[static_cast<size_t>(c)] = static_cast<S>(
                -2.0 * std::log(static_cast<double>(sc[static_cast<size_t>(c)])));
        }
        latent_shift = Tensor<S>::from({kLatentChannels}, sh);
        latent_scale = Tensor<S>::from({kLatentChannels}, sc);
        latent_inv_scale = Tensor<S>::from({kLatentChannels}, inv);
        latent_log_adj = Tensor<S>::from({kLatentChannels}, adj);
    }

    // Raw encoder moments, before recalibration (training path).
    std::pair<Tensor<S>, Tensor<S>> encode_moments_raw(const Tensor<S>& x) const {
        check(x.ndim() == 4 && x.dim(1) == kCanvas && x.dim(2) == kCanvas && x.dim(3) == 3,
              "vae encode: input must be [B,64,64,3], got ", shape_str(x.shape()));
        Tensor<S> h = ops::gelu(enc1.forward(x));
        h = ops::gelu(enc2.forward(h));
        h = ops::gelu(enc3.forward(h));
        h = moments.forward(h);
        return {ops::slice_channels(h, 0, kLatentChannels),
                ops::slice_channels(h, kLatentChannels, 2 * kLatentChannels)};
    }

    // x [B,64,64,3] in [0,1] -> (mean [B,8,8,4], logvar [B,8,8,4]),
    // recalibrated so latents are standardized per channel.
    std::pair<Tensor<S>, Tensor<S>> encode_moments(const Tensor<S>& x) const {
        auto [mu, logvar] = encode_moments_raw(x);
        return {ops::mul(ops::sub(mu, latent_shift), latent_inv_scale),
                ops::add(logvar, latent_log_adj)};
    }

    // z [B,8,8,4] -> [B,64,64,3] in (0,1); differentiable w.r.t. z.
    Tensor<S> decode(const Tensor<S>& z) const {
        check(z.ndim() == 4 && z.dim(1) == kLatentSide && z.dim(2) == kLatentSide &&
                  z.dim(3) == kLatentChannels,
              "vae decode: latent must be [B,8,8,4], got ", shape_str(z.shape()));
        detail::vae_decode_counter.fetch_add(1, std::memory_order_relaxed);
        Tensor<S> raw = ops::add(ops::mul(z, latent_scale), latent_shift);
        return decode_raw(raw);
    }

    Tensor<S> decode_raw(const Tensor<S>& z) const {
        Tensor<S> h = ops::gelu(dec1.forward(z));
        h = ops::upsample_nearest2(h);
        h = ops::gelu(dec2.forward(h));
        h = ops::upsample_nearest2(h);
        h = ops::gelu(dec3.forward(h));
        h = ops::upsample_nearest2(h);
        return ops::sigmoid(dec_out.forward(h));
    }

    void for_each_param(const ParamVisitor<S>& fn) {
        enc1.visit("enc1", fn);
        enc2.visit("enc2", fn);
        enc3.visit("enc3", fn);
        moments.visit("moments", fn);
        dec1.visit("dec1", fn);
        dec2.visit("dec2", fn);
        dec3.visit("dec3", fn);
        dec_out.visit("dec_out", fn);
    }
};

enum class EncodeMode { Mean, Sample };

// Inference encode of a pixel batch (no graph): posterior mean, or
// mean + sigma * eta with eta drawn from `seed`.
TensorF vae_encode_batch(const VaeModel<float>& model, const std::vector<const PixelImage*>& imgs,
                         EncodeMode mode, uint64_t seed = 0);

LatentImage vae_encode(const VaeModel<float>& model, const PixelImage& img, EncodeMode mode,
                       uint64_t seed = 0);
PixelImage vae_decode_image(const VaeModel<float>& model, const LatentImage& z);

// Fixed full-rank 4->3 projection followed by a global affine rescale to
// [0,1]; 8x8 RGB bytes out.
std::vector<uint8_t> latent_preview(std::span<const float> latent_hwc);

struct VaeTrainConfig {
    int64_t steps = 1600;
    int64_t batch = 32;
    double lr_max = 1e-3;
    double lr_min = 0.0;
    double beta_kl = 1e-3;
    uint64_t seed = 0;
    std::string log_path; // JSON-lines per step when set
};

struct VaeTrainResult {
    double final_loss = 0;
    double val_mse = 0;                   // per pixel-channel, validation
    std::array<double, 4> latent_mean{};  // per-channel posterior-mean stats
    std::array<double, 4> latent_std{};
};

// Minimizes reconstruction MSE + beta * KL(posterior || N(0,I)).
VaeTrainResult vae_train(VaeModel<float>& model, const Dataset& train, const Dataset& val,
                         const VaeTrainConfig& cfg);

Checkpoint vae_to_checkpoint(VaeModel<float>& model, const VaeTrainResult& stats);

template <class S>
VaeModel<S> vae_from_checkpoint(const Checkpoint& ckpt) {
    check(ckpt.model_kind == "vae", "expected a vae checkpoint, got model_kind \"",
          ckpt.model_kind, "\"");
    Rng dummy(0);
    VaeModel<S> m = VaeModel<S>::init(dummy);
    m.for_each_param([&](const std::string& name, Tensor<S>& t) {
        const TensorF& src = ckpt.tensor(name);
        check(src.shape() == t.shape(), "vae checkpoint: tensor ", name, " has shape ",
              shape_str(src.shape()), ", model expects ", shape_str(t.shape()));
        auto dst = t.values_mut();
        for (int64_t i = 0; i < src.numel(); ++i)
            dst[static_cast<size_t>(i)] = static_cast<S>(src.values()[static_cast<size_t>(i)]);
    });
    if (ckpt.config.contains("latent_shift"))
        m.set_recalibration(ckpt.config.at("latent_shift").get<std::vector<double>>(),
                            ckpt.config.at("latent_scale").get<std::vector<double>>());
    m.trained = ckpt.config.value("trained", false);
    return m;
}

// Encodes every record (posterior mean) and writes latents.bin.
void write_dataset_latents(const VaeModel<float>& model, Dataset& ds);

} // namespace lclip
