#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>

#include "lclip/optim.hpp"
#include "support/gradient_suite.hpp"

using namespace lclip;

TEST_CASE("tensor basics and shape errors") {
    TensorF t = TensorF::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6.0f);
    CHECK_THROWS_AS(TensorF::from({2, 2}, {1, 2, 3}), Error);
    CHECK_THROWS_AS((void)t.item(), Error);
}

TEST_CASE("matmul identity and shape errors") {
    Rng rng(1);
    TensorD a = TensorD::randn({3, 3}, rng);
    TensorD id = TensorD::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    TensorD out = ops::matmul(id, a);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j) CHECK(out.at({i, j}) == a.at({i, j}));
    CHECK_THROWS_AS(ops::matmul(TensorD::zeros({2, 3}), TensorD::zeros({4, 2})), Error);
}

TEST_CASE("non-finite inputs are rejected") {
    TensorF bad = TensorF::from({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    TensorF good = TensorF::from({2}, {1.0f, 2.0f});
    CHECK_THROWS_AS(ops::add(bad, good), Error);
    CHECK_THROWS_AS(ops::matmul(TensorF::from({1, 1}, {INFINITY}), TensorF::from({1, 1}, {1.f})),
                    Error);
}

TEST_CASE("softmax of uniform logits and its invariants") {
    TensorF u = ops::softmax(TensorF::from({4}, {0, 0, 0, 0}), -1);
    for (int64_t i = 0; i < 4; ++i) CHECK(u.at({i}) == doctest::Approx(0.25).epsilon(1e-7));

    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        TensorF x = TensorF::randn({5, 7}, rng, 3.0);
        TensorF p = ops::softmax(x, -1);
        for (int64_t r = 0; r < 5; ++r) {
            double sum = 0;
            for (int64_t c = 0; c < 7; ++c) {
                const float v = p.at({r, c});
                CHECK(v > 0.0f);
                CHECK(v < 1.0f);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("conv2d output shape and brute-force value oracle") {
    // channels-last layout of the 1x4x8x8 / 8x4x3x3 stride-1 pad-1 case
    Rng rng(3);
    TensorD x = TensorD::randn({1, 8, 8, 4}, rng);
    TensorD k = TensorD::randn({3, 3, 4, 8}, rng);
    TensorD out = ops::conv2d(x, k, 1, 1);
    CHECK(out.shape() == Shape{1, 8, 8, 8});

    // independent index-enumeration oracle
    for (int oy = 0; oy < 8; ++oy)
        for (int ox = 0; ox < 8; ++ox)
            for (int oc = 0; oc < 8; ++oc) {
                double acc = 0;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        for (int c = 0; c < 4; ++c) {
                            const int iy = oy - 1 + ky, ix = ox - 1 + kx;
                            if (iy < 0 || iy >= 8 || ix < 0 || ix >= 8) continue;
                            acc += x.at({0, iy, ix, c}) * k.at({ky, kx, c, oc});
                        }
                CHECK(out.at({0, oy, ox, oc}) == doctest::Approx(acc).epsilon(1e-10));
            }

    // output-size formula at other strides
    CHECK(ops::conv2d(x, k, 2, 1).shape() == Shape{1, 4, 4, 8});
}

TEST_CASE("backward: analytic examples") {
    TensorD x = TensorD::from({3}, {1, 2, 3}).set_requires_grad();
    TensorD loss = ops::sum(ops::mul(x, x));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    CHECK(x.grad()[2] == doctest::Approx(6.0));

    // loss constant in x -> zero gradient
    TensorD y = TensorD::from({3}, {5, 5, 5}).set_requires_grad();
    TensorD z = ops::sum(ops::mul_scalar(y, 0.0));
    backward(z);
    for (double g : y.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward error paths") {
    TensorD x = TensorD::from({2}, {1, 2}).set_requires_grad();
    TensorD vec = ops::mul(x, x);
    CHECK_THROWS_AS(backward(vec), Error); // non-scalar loss

    TensorD loss = ops::sum(ops::mul(x, x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), Error); // second backward without re-forward
}

TEST_CASE("attention reduces to the softmax(qk/sqrt d)v loop oracle") {
    Rng rng(4);
    const int64_t t = 5, d = 8;
    TensorD q = TensorD::randn({1, t, d}, rng);
    TensorD k = TensorD::randn({1, t, d}, rng);
    TensorD v = TensorD::randn({1, t, d}, rng);
    TensorD out = ops::attention(q, k, v, 1);
    for (int64_t i = 0; i < t; ++i) {
        std::vector<double> scores(t);
        double mx = -1e300;
        for (int64_t j = 0; j < t; ++j) {
            double s = 0;
            for (int64_t c = 0; c < d; ++c) s += q.at({0, i, c}) * k.at({0, j, c});
            scores[j] = s / std::sqrt(double(d));
            mx = std::max(mx, scores[j]);
        }
        double denom = 0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            denom += s;
        }
        for (int64_t c = 0; c < d; ++c) {
            double acc = 0;
            for (int64_t j = 0; j < t; ++j) acc += scores[j] / denom * v.at({0, j, c});
            CHECK(out.at({0, i, c}) == doctest::Approx(acc).epsilon(1e-9));
        }
    }
}

TEST_CASE("attention key mask equals truncated computation") {
    Rng rng(5);
    const int64_t t = 6, keep = 4, w = 8;
    TensorD q = TensorD::randn({1, t, w}, rng);
    TensorD k = TensorD::randn({1, t, w}, rng);
    TensorD v = TensorD::randn({1, t, w}, rng);
    std::vector<uint8_t> mask(t, 0);
    for (int64_t i = 0; i < keep; ++i) mask[static_cast<size_t>(i)] = 1;
    TensorD masked = ops::attention(q, k, v, 2, &mask);

    auto trunc = [&](const TensorD& x) {
        std::vector<double> d2;
        for (int64_t i = 0; i < keep * w; ++i) d2.push_back(x.values()[static_cast<size_t>(i)]);
        return TensorD::from({1, keep, w}, d2);
    };
    TensorD ref = ops::attention(trunc(q), trunc(k), trunc(v), 2);
    for (int64_t i = 0; i < keep; ++i)
        for (int64_t c = 0; c < w; ++c)
            CHECK(masked.at({0, i, c}) == doctest::Approx(ref.at({0, i, c})).epsilon(1e-12));
}

TEST_CASE("adamw: decoupled decay and reference recurrence") {
    // zero gradient: pure decay by (1 - lr * wd)
    {
        TensorD p = TensorD::from({1}, {1.5}).set_requires_grad();
        AdamW<double> opt({p});
        opt.step(0.001);
        CHECK(p.item() == doctest::Approx(1.5 * (1.0 - 0.001 * 0.2)).epsilon(1e-14));
    }
    // lr = 0: unchanged
    {
        TensorD p = TensorD::from({1}, {0.7}).set_requires_grad();
        AdamW<double> opt({p});
        p.grad_mut()[0] = 0.3;
        opt.step(0.0);
        CHECK(p.item() == 0.7);
    }
    // constant gradient vs an independent recurrence oracle
    {
        const double g = 0.25, lr = 0.01;
        AdamWConfig cfg;
        TensorD p = TensorD::from({1}, {1.0}).set_requires_grad();
        AdamW<double> opt({p}, cfg);
        double w = 1.0, m = 0, v = 0;
        for (int step = 1; step <= 10; ++step) {
            p.zero_grad();
            p.grad_mut()[0] = g;
            opt.step(lr);
            m = cfg.beta1 * m + (1 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
            const double mhat = m / (1 - std::pow(cfg.beta1, step));
            const double vhat = v / (1 - std::pow(cfg.beta2, step));
            w -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w);
            CHECK(p.item() == doctest::Approx(w).epsilon(1e-12));
        }
        CHECK(opt.step_count() == 10);
    }
    // non-finite gradient aborts
    {
        TensorD p = TensorD::from({1}, {1.0}).set_requires_grad();
        AdamW<double> opt({p});
        p.grad_mut()[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(opt.step(0.01), Error);
    }
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0, 100, 0.001, 0.0) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(cosine_lr(100, 100, 0.001, 0.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_lr(50, 100, 0.001, 0.0) == doctest::Approx(0.0005).epsilon(1e-12));
    CHECK(cosine_lr(150, 100, 0.001, 0.0) == 0.0); // clamp past the end
    CHECK_THROWS_AS(cosine_lr(10, 100, 0.0, 0.001), Error);
}

TEST_CASE("gradient suite: every primitive passes finite differences") {
    const auto items = lclip::testing::run_gradient_suite(7);
    CHECK(items.size() >= 30);
    for (const auto& item : items) {
        INFO(item.name << ": " << item.result.worst << " (max rel err "
                       << item.result.max_rel_err << ")");
        CHECK(item.result.ok);
    }
}

TEST_CASE("determinism: identical seeds give bit-identical training arithmetic") {
    auto run = [] {
        Rng rng(99);
        TensorF w = TensorF::randn({8, 8}, rng).set_requires_grad();
        AdamW<float> opt({w});
        float last = 0;
        for (int step = 0; step < 5; ++step) {
            TensorF x = TensorF::randn({4, 8}, rng);
            TensorF loss = ops::mean(ops::mul(ops::matmul(x, w), ops::matmul(x, w)));
            opt.zero_grad();
            backward(loss);
            opt.step(1e-3);
            last = loss.item();
        }
        return last;
    };
    const float a = run();
    const float b = run();
    CHECK(std::memcmp(&a, &b, sizeof a) == 0);
}
