#include "lclip/zeroshot.hpp"

#include <algorithm>

namespace lclip {

namespace {

std::string instantiate(const std::string& tmpl, const std::string& label) {
    const auto pos = tmpl.find("{label}");
    check(pos != std::string::npos, "template \"", tmpl, "\" lacks a {label} placeholder");
    std::string out = tmpl;
    out.replace(pos, 7, label);
    return out;
}

} // namespace

ZeroShotClassifier build_classifier(const ClipModel<float>& model,
                                    const std::vector<std::string>& classes,
                                    const std::vector<std::string>& templates) {
    check(!classes.empty(), "build_classifier: no classes");
    check(!templates.empty(), "build_classifier: at least one template required");
    const auto& tok = Tokenizer::instance();
    NoGradGuard ng;

    std::vector<float> all;
    all.reserve(classes.size() * static_cast<size_t>(model.cfg.embed_dim));
    for (const std::string& label : classes) {
        std::vector<TokenSequence> seqs;
        for (const std::string& tmpl : templates) {
            const std::string text = instantiate(tmpl, label);
            try {
                seqs.push_back(tok.tokenize(text));
            } catch (const Error& e) {
                fail("build_classifier: template instantiation \"", text,
                     "\" is not tokenizable: ", e.what());
            }
        }
        const TensorF embeds = model.encode_text(TokenBatch::from(seqs)); // [T, d]
        const int64_t d = embeds.dim(1);
        std::vector<float> avg(static_cast<size_t>(d), 0.0f);
        for (int64_t t = 0; t < embeds.dim(0); ++t)
            for (int64_t j = 0; j < d; ++j)
                avg[static_cast<size_t>(j)] += embeds.at({t, j}) / float(embeds.dim(0));
        double norm = 0;
        for (float v : avg) norm += double(v) * v;
        norm = std::sqrt(std::max(norm, 1e-24));
        for (float& v : avg) v = static_cast<float>(v / norm);
        all.insert(all.end(), avg.begin(), avg.end());
    }
    ZeroShotClassifier clf;
    clf.classes = classes;
    clf.embeddings = TensorF::from(
        {static_cast<int64_t>(classes.size()), model.cfg.embed_dim}, std::move(all));
    clf.checkpoint_id = model.cfg.input_kind == "latent" ? "clip_latent" : "clip_pixel";
    return clf;
}

std::vector<float> classify(const ClipModel<float>& model, const ZeroShotClassifier& clf,
                            const TensorF& input_grid) {
    NoGradGuard ng;
    const TensorF e = model.encode_visual(input_grid);
    check(e.dim(0) == 1, "classify: one input at a time");
    const TensorF sims = ops::matmul(e, clf.embeddings, /*transpose_b=*/true); // [1, C]
    const float scale = model.scale_value();
    const int64_t c = sims.dim(1);
    std::vector<float> probs(static_cast<size_t>(c));
    float mx = -std::numeric_limits<float>::infinity();
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, scale * sims.at({0, j}));
    double denom = 0;
    for (int64_t j = 0; j < c; ++j) {
        probs[static_cast<size_t>(j)] = std::exp(scale * sims.at({0, j}) - mx);
        denom += probs[static_cast<size_t>(j)];
    }
    for (float& p : probs) p = static_cast<float>(p / denom);
    return probs;
}

EvalReport evaluate(const ClipModel<float>& model, const ZeroShotClassifier& clf,
                    const Dataset& ds, const std::vector<int>& k_list) {
    check(ds.size() > 0, "evaluate: empty dataset");
    check(!k_list.empty(), "evaluate: empty k list");
    const int64_t nc = static_cast<int64_t>(clf.classes.size());
    for (int k : k_list)
        check(k >= 1 && k <= nc, "evaluate: k=", k, " outside [1,", nc, "]");

    std::vector<int64_t> labeled;
    for (int64_t i = 0; i < ds.size(); ++i)
        if (ds.record(i).class_id != kNoClass) labeled.push_back(i);
    check(!labeled.empty(), "evaluate: dataset has no labeled records");

    EvalReport rep;
    rep.checkpoint_id = clf.checkpoint_id;
    rep.dataset_dir = ds.dir();
    rep.k_list = k_list;
    rep.topk_accuracy.assign(k_list.size(), 0.0);
    rep.per_class.resize(clf.classes.size());
    for (size_t c = 0; c < clf.classes.size(); ++c) {
        rep.per_class[c].label = clf.classes[c];
        rep.per_class[c].confusion.assign(clf.classes.size(), 0);
    }

    NoGradGuard ng;
    const int64_t bs = 128;
    std::vector<int64_t> rank_buf(static_cast<size_t>(nc));
    for (size_t at = 0; at < labeled.size(); at += static_cast<size_t>(bs)) {
        const size_t n = std::min(static_cast<size_t>(bs), labeled.size() - at);
        std::span<const int64_t> idx(labeled.data() + at, n);
        TensorF grids = dataset_input_tensor(model, ds, idx);
        TensorF embeds = model.encode_visual(grids);
        TensorF sims = ops::matmul(embeds, clf.embeddings, true); // [n, C]
        for (size_t r = 0; r < n; ++r) {
            const int label = ds.record(idx[r]).class_id;
            check(label >= 0 && label < nc, "evaluate: record label ", label,
                  " outside the classifier's class list");
            std::iota(rank_buf.begin(), rank_buf.end(), 0);
            std::stable_sort(rank_buf.begin(), rank_buf.end(), [&](int64_t a, int64_t b) {
                const float sa = sims.at({static_cast<int64_t>(r), a});
                const float sb = sims.at({static_cast<int64_t>(r), b});
                if (sa != sb) return sa > sb;
                return a < b; // ties to the lowest class index
            });
            auto& pc = rep.per_class[static_cast<size_t>(label)];
            ++pc.count;
            ++pc.confusion[static_cast<size_t>(rank_buf[0])];
            if (rank_buf[0] == label) ++pc.top1_correct;
            for (size_t ki = 0; ki < k_list.size(); ++ki) {
                const int k = k_list[ki];
                if (std::find(rank_buf.begin(), rank_buf.begin() + k, label) !=
                    rank_buf.begin() + k)
                    rep.topk_accuracy[ki] += 1.0;
            }
        }
        rep.evaluated += static_cast<int64_t>(n);
    }
    for (double& a : rep.topk_accuracy) a /= double(rep.evaluated);
    return rep;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json per;
    for (const auto& pc : per_class)
        per.push_back({{"label", pc.label},
                       {"count", pc.count},
                       {"top1_correct", pc.top1_correct},
                       {"confusion", pc.confusion}});
    nlohmann::json out = {{"checkpoint", checkpoint_id},
                          {"dataset", dataset_dir},
                          {"evaluated", evaluated},
                          {"per_class", per}};
    for (size_t i = 0; i < k_list.size(); ++i)
        out[strcat_all("top", k_list[i])] = topk_accuracy[i];
    return out;
}

} // namespace lclip
