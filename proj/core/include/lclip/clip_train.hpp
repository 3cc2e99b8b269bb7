#pragma once

#include "lclip/clip_model.hpp"

namespace lclip {

struct ClipTrainConfig {
    int64_t steps = 1200;
    int64_t batch = 128;
    double lr_max = 1e-3;
    double lr_min = 0.0;
    int64_t warmup = 100; // linear ramp before the cosine decay
    uint64_t seed = 0;
    std::string log_path; // JSON-lines {step, lr, loss} per step when set
};

struct ClipTrainResult {
    double final_loss = 0;
    double logit_scale = 0; // exp value after training
};

// AdamW + cosine schedule over shuffled caption/grid pairs; the logit scale
// is learned from ln(1/0.07) and clamped at 100 after every step.
ClipTrainResult train_clip(ClipModel<float>& model, const Dataset& train,
                           const ClipTrainConfig& cfg);

// Within-batch image->text retrieval accuracy on shuffled batches.
double retrieval_top1(const ClipModel<float>& model, const Dataset& ds, int64_t batch,
                      int64_t max_batches, uint64_t seed);

// batch assembly: [B, side, side, channels] grids for a model's input kind
TensorF dataset_latent_tensor(const Dataset& ds, std::span<const int64_t> indices);
TensorF dataset_pixel_tensor(const Dataset& ds, std::span<const int64_t> indices);
TensorF dataset_input_tensor(const ClipModel<float>& model, const Dataset& ds,
                             std::span<const int64_t> indices);

} // namespace lclip
