#pragma once

#include "lclip/clip_train.hpp"

namespace lclip {

// Zero-shot classification: template-averaged class embeddings scored by
// scaled cosine similarity.

inline const std::vector<std::string>& default_templates() {
    static const std::vector<std::string> t = {"a {label}", "an image of a {label}",
                                               "a picture of a {label}"};
    return t;
}

struct ZeroShotClassifier {
    std::vector<std::string> classes;
    TensorF embeddings; // [num_classes, embed_dim], unit rows
    std::string checkpoint_id;
};

// Embeds every template instantiation per class, averages and renormalizes.
ZeroShotClassifier build_classifier(const ClipModel<float>& model,
                                    const std::vector<std::string>& classes,
                                    const std::vector<std::string>& templates);

// softmax(exp(logit_scale) * cosine similarities) over the classes.
std::vector<float> classify(const ClipModel<float>& model, const ZeroShotClassifier& clf,
                            const TensorF& input_grid);

struct PerClassStats {
    std::string label;
    int64_t count = 0;
    int64_t top1_correct = 0;
    std::vector<int64_t> confusion; // predicted-class counts
};

struct EvalReport {
    std::string checkpoint_id;
    std::string dataset_dir;
    int64_t evaluated = 0;
    std::vector<int> k_list;
    std::vector<double> topk_accuracy; // aligned with k_list
    std::vector<PerClassStats> per_class;

    double top1() const { return topk_accuracy.at(0); }
    nlohmann::json to_json() const;
};

// Top-k accuracy over the labeled records of a dataset; ties resolve to the
// lowest class index.
EvalReport evaluate(const ClipModel<float>& model, const ZeroShotClassifier& clf,
                    const Dataset& ds, const std::vector<int>& k_list = {1, 5});

} // namespace lclip
