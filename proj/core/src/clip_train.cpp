#include "lclip/clip_train.hpp"

#include <fstream>
#include <set>

#include "lclip/vae.hpp"

namespace lclip {

using nlohmann::json;

json EncoderConfig::to_json() const {
    return {{"input_kind", input_kind}, {"patch_size", patch_size},
            {"width", width},           {"layers", layers},
            {"heads", heads},           {"embed_dim", embed_dim},
            {"mlp_ratio", mlp_ratio},   {"text_width", text_width},
            {"text_layers", text_layers}, {"text_heads", text_heads},
            {"grid_side_override", grid_side_override}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
    EncoderConfig c;
    c.input_kind = j.at("input_kind").get<std::string>();
    c.patch_size = j.at("patch_size").get<int>();
    c.width = j.at("width").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.text_width = j.at("text_width").get<int>();
    c.text_layers = j.at("text_layers").get<int>();
    c.text_heads = j.at("text_heads").get<int>();
    c.grid_side_override = j.value("grid_side_override", 0);
    c.validate();
    return c;
}

EncoderConfig EncoderConfig::latent_desk() {
    EncoderConfig c;
    c.input_kind = "latent";
    c.patch_size = 2; // 8/2 -> 16 tokens, equal to the pixel preset
    return c;
}

EncoderConfig EncoderConfig::pixel_desk() {
    EncoderConfig c;
    c.input_kind = "pixel";
    c.patch_size = 16; // 64/16 -> 16 tokens, equal to the latent preset
    return c;
}

EncoderConfig EncoderConfig::latent_vit_b8_full() {
    // published Latent-ViT-B-8-512 sizes; ViT-B depth/heads convention
    EncoderConfig c;
    c.input_kind = "latent";
    c.patch_size = 8;
    c.grid_side_override = 64; // the published 64x64x4 latent geometry
    c.width = 768;
    c.layers = 12;
    c.heads = 12;
    c.embed_dim = 512;
    c.text_width = 512;
    c.text_layers = 12;
    c.text_heads = 8;
    return c;
}

EncoderConfig EncoderConfig::latent_vit_b4_plus_full() {
    // published Latent-ViT-B-4-512-plus sizes
    EncoderConfig c;
    c.input_kind = "latent";
    c.patch_size = 4;
    c.grid_side_override = 64;
    c.width = 768;
    c.layers = 12;
    c.heads = 12;
    c.embed_dim = 640;
    c.text_width = 640;
    c.text_layers = 12;
    c.text_heads = 8;
    return c;
}

TensorF dataset_latent_tensor(const Dataset& ds, std::span<const int64_t> indices) {
    check(ds.has_latents(), "dataset ", ds.dir(), " has no latents.bin; run train-vae first");
    std::vector<float> data;
    data.reserve(indices.size() * kLatentSize);
    for (int64_t i : indices) {
        const auto hwc = latent_from_file_order(ds.latent(i));
        data.insert(data.end(), hwc.begin(), hwc.end());
    }
    return TensorF::from({static_cast<int64_t>(indices.size()), kLatentSide, kLatentSide,
                          kLatentChannels},
                         std::move(data));
}

TensorF dataset_pixel_tensor(const Dataset& ds, std::span<const int64_t> indices) {
    std::vector<float> data;
    data.reserve(indices.size() * static_cast<size_t>(kCanvas) * kCanvas * 3);
    for (int64_t i : indices) {
        const auto v = ds.record(i).image.to_float();
        data.insert(data.end(), v.begin(), v.end());
    }
    return TensorF::from({static_cast<int64_t>(indices.size()), kCanvas, kCanvas, 3},
                         std::move(data));
}

TensorF dataset_input_tensor(const ClipModel<float>& model, const Dataset& ds,
                             std::span<const int64_t> indices) {
    return model.cfg.input_kind == "latent" ? dataset_latent_tensor(ds, indices)
                                            : dataset_pixel_tensor(ds, indices);
}

namespace {

// Per-channel mean/std of the model's training inputs.
std::pair<std::vector<double>, std::vector<double>> input_stats(const EncoderConfig& cfg,
                                                                const Dataset& ds) {
    const int64_t c = cfg.grid_channels();
    std::vector<double> sum(static_cast<size_t>(c), 0), sumsq(static_cast<size_t>(c), 0);
    int64_t n_per_c = 0;
    const int64_t sample = std::min<int64_t>(ds.size(), 4000);
    for (int64_t i = 0; i < sample; ++i) {
        std::vector<float> v;
        if (cfg.input_kind == "latent")
            v = latent_from_file_order(ds.latent(i));
        else
            v = ds.record(i).image.to_float();
        for (size_t j = 0; j < v.size(); ++j) {
            sum[j % static_cast<size_t>(c)] += v[j];
            sumsq[j % static_cast<size_t>(c)] += double(v[j]) * v[j];
        }
        n_per_c += static_cast<int64_t>(v.size()) / c;
    }
    std::vector<double> mean(static_cast<size_t>(c)), stdv(static_cast<size_t>(c));
    for (int64_t j = 0; j < c; ++j) {
        mean[static_cast<size_t>(j)] = sum[static_cast<size_t>(j)] / double(n_per_c);
        const double var = sumsq[static_cast<size_t>(j)] / double(n_per_c) -
                           mean[static_cast<size_t>(j)] * mean[static_cast<size_t>(j)];
        stdv[static_cast<size_t>(j)] = std::sqrt(std::max(var, 1e-8));
    }
    return {mean, stdv};
}

} // namespace

ClipTrainResult train_clip(ClipModel<float>& model, const Dataset& train,
                           const ClipTrainConfig& cfg) {
    check(cfg.steps >= 1 && cfg.batch >= 2, "train_clip: need steps >= 1 and batch >= 2");
    check(cfg.warmup >= 0 && cfg.warmup < cfg.steps, "train_clip: warmup must sit inside steps");
    check(train.size() >= cfg.batch, "train_clip: dataset smaller than one batch");
    if (model.cfg.input_kind == "latent")
        check(train.has_latents(), "train_clip: latent encoder needs dataset latents; "
              "run train-vae over the dataset first");

    const auto [mean, stdv] = input_stats(model.cfg, train);
    model.visual.set_standardization(mean, stdv);

    AdamW<float> opt(collect_params<float>(model));
    Rng rng(Rng::derive_seed(cfg.seed, 0xc11b));

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        check(log.good(), "train_clip: cannot open log ", cfg.log_path);
    }

    std::vector<int64_t> order(static_cast<size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();

    // Batches avoid duplicate captions: the closed grammar repeats captions
    // across records, and identical texts are impossible negatives under the
    // contrastive objective.
    const auto caption_key = [&](int64_t i) {
        const auto& ids = train.record(i).tokens.ids;
        std::string key(reinterpret_cast<const char*>(ids.data()), sizeof(ids));
        return key;
    };

    double loss_val = 0;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<int64_t> idx;
        idx.reserve(static_cast<size_t>(cfg.batch));
        std::set<std::string> seen;
        int64_t scanned = 0;
        const int64_t scan_limit = 8 * cfg.batch;
        while (static_cast<int64_t>(idx.size()) < cfg.batch) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const int64_t cand = order[cursor++];
            ++scanned;
            if (scanned <= scan_limit && !seen.insert(caption_key(cand)).second) continue;
            idx.push_back(cand);
        }
        TensorF grids = dataset_input_tensor(model, train, idx);
        std::vector<TokenSequence> seqs;
        seqs.reserve(idx.size());
        for (int64_t i : idx) seqs.push_back(train.record(i).tokens);
        const TokenBatch tokens = TokenBatch::from(seqs);

        TensorF img_e = model.encode_visual(grids);
        TensorF txt_e = model.encode_text(tokens);
        TensorF loss = contrastive_loss(img_e, txt_e, model.logit_scale);

        loss_val = loss.item();
        check(std::isfinite(loss_val), "train_clip: loss diverged (non-finite) at step ", step);
        opt.zero_grad();
        backward(loss);
        const double lr =
            step < cfg.warmup
                ? cfg.lr_max * double(step + 1) / double(cfg.warmup)
                : cosine_lr(step - cfg.warmup, std::max<int64_t>(cfg.steps - cfg.warmup, 1),
                            cfg.lr_max, cfg.lr_min);
        opt.step(lr);
        model.clamp_logit_scale();
        if (log.is_open())
            log << "{\"step\":" << step << ",\"lr\":" << lr << ",\"loss\":" << loss_val << "}\n";
    }
    model.trained = true;

    ClipTrainResult res;
    res.final_loss = loss_val;
    res.logit_scale = model.scale_value();
    return res;
}

double retrieval_top1(const ClipModel<float>& model, const Dataset& ds, int64_t batch,
                      int64_t max_batches, uint64_t seed) {
    check(batch >= 2, "retrieval_top1: batch must be >= 2");
    NoGradGuard ng;
    Rng rng(Rng::derive_seed(seed, 0x3e7));
    std::vector<int64_t> order(static_cast<size_t>(ds.size()));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    int64_t correct = 0, total = 0;
    for (int64_t b = 0; b < max_batches && (b + 1) * batch <= ds.size(); ++b) {
        std::span<const int64_t> idx(order.data() + b * batch, static_cast<size_t>(batch));
        TensorF grids = dataset_input_tensor(model, ds, idx);
        std::vector<TokenSequence> seqs;
        for (int64_t i : idx) seqs.push_back(ds.record(i).tokens);
        TensorF img_e = model.encode_visual(grids);
        TensorF txt_e = model.encode_text(TokenBatch::from(seqs));
        TensorF logits = ops::matmul(img_e, txt_e, true);
        for (int64_t r = 0; r < batch; ++r) {
            int64_t arg = 0;
            for (int64_t j = 1; j < batch; ++j)
                if (logits.at({r, j}) > logits.at({r, arg})) arg = j;
            correct += arg == r;
            ++total;
        }
    }
    check(total > 0, "retrieval_top1: dataset smaller than one batch");
    return double(correct) / double(total);
}

Checkpoint clip_to_checkpoint(ClipModel<float>& model, const json& train_meta) {
    Checkpoint ckpt;
    ckpt.model_kind = model.cfg.input_kind == "latent" ? "clip_latent" : "clip_pixel";
    std::vector<double> mean(model.visual.in_mean.values().begin(),
                             model.visual.in_mean.values().end());
    std::vector<double> stdv(model.visual.in_std.values().begin(),
                             model.visual.in_std.values().end());
    ckpt.config = {{"encoder", model.cfg.to_json()},
                   {"input_mean", mean},
                   {"input_std", stdv},
                   {"trained", model.trained},
                   {"training", train_meta}};
    model.for_each_param([&](const std::string& name, Tensor<float>& t) {
        ckpt.put(name, t.detach_copy());
    });
    return ckpt;
}

} // namespace lclip
