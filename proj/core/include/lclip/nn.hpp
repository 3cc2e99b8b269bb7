#pragma once

#include <functional>
#include <string>

#include "lclip/ops.hpp"
#include "lclip/optim.hpp"

namespace lclip {

// Parameter plumbing shared by the models: projection weights start from a
// truncated normal (sigma 0.02), biases from zero, layer-norm gains from one.
inline constexpr double kInitStd = 0.02;

template <class S>
using ParamVisitor = std::function<void(const std::string&, Tensor<S>&)>;

template <class S>
struct Linear {
    Tensor<S> w; // [in, out]
    Tensor<S> b; // [out]

    static Linear init(int64_t in, int64_t out, Rng& rng) {
        Linear l;
        l.w = Tensor<S>::trunc_normal({in, out}, rng, kInitStd).set_requires_grad();
        l.b = Tensor<S>::zeros({out}).set_requires_grad();
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x) const { return ops::add(ops::matmul(x, w), b); }

    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        fn(prefix + ".w", w);
        fn(prefix + ".b", b);
    }
};

template <class S>
struct Conv {
    Tensor<S> w; // [kh, kw, in, out]
    Tensor<S> b; // [out]
    int stride = 1;
    int pad = 0;

    static Conv init(int kh, int kw, int64_t in, int64_t out, int stride, int pad, Rng& rng) {
        Conv c;
        c.w = Tensor<S>::trunc_normal({kh, kw, in, out}, rng, kInitStd).set_requires_grad();
        c.b = Tensor<S>::zeros({out}).set_requires_grad();
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        return ops::add(ops::conv2d(x, w, stride, pad), b);
    }

    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        fn(prefix + ".w", w);
        fn(prefix + ".b", b);
    }
};

template <class S>
struct LayerNorm {
    Tensor<S> gamma, beta;

    static LayerNorm init(int64_t width) {
        LayerNorm n;
        n.gamma = Tensor<S>::filled({width}, S(1)).set_requires_grad();
        n.beta = Tensor<S>::zeros({width}).set_requires_grad();
        return n;
    }

    Tensor<S> forward(const Tensor<S>& x) const { return ops::layer_norm(x, gamma, beta); }

    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        fn(prefix + ".gamma", gamma);
        fn(prefix + ".beta", beta);
    }
};

// Gathers the model's parameters in declaration order for the optimizer.
template <class S, class Model>
std::vector<Tensor<S>> collect_params(Model& model) {
    std::vector<Tensor<S>> out;
    model.for_each_param([&](const std::string&, Tensor<S>& t) { out.push_back(t); });
    return out;
}

} // namespace lclip
