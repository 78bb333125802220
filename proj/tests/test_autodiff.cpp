// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape: every differentiable op is checked against central
// finite differences of a scalar head, plus value-level oracles for the
// structured ops (padding, convolution, normalization, graph aggregation).

#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "wxlab/autodiff.hpp"
#include "wxlab/tensor.hpp"

using namespace wxlab;
namespace ad = wxlab::ad;

namespace {

using Builder = std::function<ad::Var(const std::vector<ad::Var>&)>;

// Reduces builder output to mean((y - R)^2) with a fixed random R, then
// compares every leaf gradient against central differences.
void check_gradients(const char* what, const std::vector<Tensor>& inputs, const Builder& f,
                     double eps = 1e-5, double tol = 1e-4) {
    INFO(what);
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(ad::leaf(t));
    ad::Var out = f(leaves);
    Tensor target(out->value.shape());
    Rng trng(99887);
    trng.fill_normal(target, 0.0, 1.0);
    LossConfig mse;
    ad::Var loss = ad::loss_op(out, target, mse);
    ad::backward(loss);

    auto scalar_at = [&](size_t li, int64_t ei, double v) {
        std::vector<ad::Var> probe;
        for (size_t k = 0; k < inputs.size(); ++k) {
            Tensor t = inputs[k];
            if (k == li) t[ei] = v;
            probe.push_back(ad::constant(std::move(t)));
        }
        return loss_value(f(probe)->value, target, mse);
    };

    for (size_t li = 0; li < inputs.size(); ++li) {
        const Tensor g = leaves[li]->grad_or_zeros();
        REQUIRE(g.same_shape(inputs[li]));
        for (int64_t ei = 0; ei < inputs[li].numel(); ++ei) {
            const double x0 = inputs[li][ei];
            const double fd = (scalar_at(li, ei, x0 + eps) - scalar_at(li, ei, x0 - eps)) /
                              (2.0 * eps);
            const double rel = std::abs(g[ei] - fd) / std::max(1.0, std::abs(fd));
            if (rel > tol) {
                CAPTURE(li);
                CAPTURE(ei);
                CAPTURE(g[ei]);
                CAPTURE(fd);
            }
            CHECK(rel <= tol);
        }
    }
}

Tensor randn(Rng& rng, const std::vector<int64_t>& shape, double std = 1.0) {
    Tensor t(shape);
    rng.fill_normal(t, 0.0, std);
    return t;
}

// Pushes values away from zero so relu has no kink in the FD neighborhood.
Tensor randn_offset(Rng& rng, const std::vector<int64_t>& shape) {
    Tensor t = randn(rng, shape);
    for (int64_t i = 0; i < t.numel(); ++i) {
        if (std::abs(t[i]) < 0.05) t[i] = t[i] >= 0 ? 0.1 : -0.1;
    }
    return t;
}

}  // namespace

TEST_CASE("elementwise ops differentiate") {
    Rng rng(1);
    const Tensor a = randn(rng, {2, 3}), b = randn(rng, {2, 3});
    check_gradients("add", {a, b}, [](const auto& v) { return ad::add(v[0], v[1]); });
    check_gradients("sub", {a, b}, [](const auto& v) { return ad::sub(v[0], v[1]); });
    check_gradients("mul", {a, b}, [](const auto& v) { return ad::mul(v[0], v[1]); });
    check_gradients("scale", {a}, [](const auto& v) { return ad::scale(v[0], -2.5); });
    check_gradients("add_scaled", {a, b},
                    [](const auto& v) { return ad::add_scaled(v[0], v[1], 0.3, 0.7); });
    check_gradients("relu", {randn_offset(rng, {2, 5})},
                    [](const auto& v) { return ad::relu(v[0]); });
}

TEST_CASE("shared subexpressions accumulate gradients") {
    // b = a + a doubles the gradient; a diamond a*a + 3a mixes paths.
    const Tensor a0 = Tensor::full({1, 3}, 2.0);
    ad::Var a = ad::leaf(a0);
    ad::Var loss = ad::loss_op(ad::add(a, a), Tensor::zeros({1, 3}), LossConfig{});
    ad::backward(loss);
    // d/da mean((2a)^2) = 8a/3
    for (int64_t i = 0; i < 3; ++i) {
        CHECK(a->grad[i] == doctest::Approx(8.0 * 2.0 / 3.0));
    }

    Rng rng(2);
    check_gradients("diamond", {randn(rng, {1, 4})}, [](const auto& v) {
        return ad::add(ad::mul(v[0], v[0]), ad::scale(v[0], 3.0));
    });
}

TEST_CASE("pad2d reproduces the documented row and column patterns") {
    // One 3x3 image, channels first: values 1..9.
    Tensor x({1, 1, 3, 3});
    for (int64_t i = 0; i < 9; ++i) x[i] = static_cast<double>(i + 1);
    ad::Var v = ad::constant(x);

    // Circular x on the middle row [4,5,6] gives [6,4,5,6,4].
    const Tensor cx = ad::pad2d(v, 0, 1, ad::PadX::circular, ad::PadY::zero)->value;
    CHECK(cx.shape() == std::vector<int64_t>({1, 1, 3, 5}));
    const double want_row[5] = {6, 4, 5, 6, 4};
    for (int64_t j = 0; j < 5; ++j) CHECK(cx.at(0, 0, 1, j) == want_row[j]);

    // Reflect y on the middle column [2,5,8] gives [5,2,5,8,5].
    const Tensor ry = ad::pad2d(v, 1, 0, ad::PadX::zero, ad::PadY::reflect)->value;
    CHECK(ry.shape() == std::vector<int64_t>({1, 1, 5, 3}));
    const double want_col[5] = {5, 2, 5, 8, 5};
    for (int64_t i = 0; i < 5; ++i) CHECK(ry.at(0, 0, i, 1) == want_col[i]);

    // Zero modes produce a zero border.
    const Tensor zz = ad::pad2d(v, 1, 1, ad::PadX::zero, ad::PadY::zero)->value;
    CHECK(zz.at(0, 0, 0, 0) == 0.0);
    CHECK(zz.at(0, 0, 4, 4) == 0.0);
    CHECK(zz.at(0, 0, 1, 1) == 1.0);

    // Pads that consume the whole field are rejected.
    CHECK_THROWS_AS(ad::pad2d(v, 3, 0, ad::PadX::zero, ad::PadY::reflect),
                    std::invalid_argument);
}

TEST_CASE("pad2d differentiates in every mode combination") {
    Rng rng(3);
    const Tensor x = randn(rng, {1, 2, 4, 5});
    for (ad::PadX px : {ad::PadX::zero, ad::PadX::circular}) {
        for (ad::PadY py : {ad::PadY::zero, ad::PadY::reflect}) {
            check_gradients("pad2d", {x}, [=](const auto& v) {
                return ad::pad2d(v[0], 1, 2, px, py);
            });
        }
    }
}

TEST_CASE("conv2d matches a hand loop and differentiates") {
    Rng rng(4);
    const Tensor x = randn(rng, {1, 2, 4, 5});
    const Tensor w = randn(rng, {3, 2, 3, 3});
    const Tensor b = randn(rng, {3});

    const Tensor y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), 1)->value;
    REQUIRE(y.shape() == std::vector<int64_t>({1, 3, 2, 3}));
    for (int64_t o = 0; o < 3; ++o) {
        for (int64_t i = 0; i < 2; ++i) {
            for (int64_t j = 0; j < 3; ++j) {
                double acc = b[o];
                for (int64_t c = 0; c < 2; ++c) {
                    for (int64_t ki = 0; ki < 3; ++ki) {
                        for (int64_t kj = 0; kj < 3; ++kj) {
                            acc += w.at(o, c, ki, kj) * x.at(0, c, i + ki, j + kj);
                        }
                    }
                }
                CHECK(y.at(0, o, i, j) == doctest::Approx(acc).epsilon(1e-12));
            }
        }
    }

    check_gradients("conv2d stride 1", {x, w, b}, [](const auto& v) {
        return ad::conv2d(v[0], v[1], v[2], 1);
    });

    // Stride 2, no bias: output 1x1x2 from 4x5 with a 3x3 kernel.
    const Tensor y2 = ad::conv2d(ad::constant(x), ad::constant(w), nullptr, 2)->value;
    CHECK(y2.shape() == std::vector<int64_t>({1, 3, 1, 2}));
    check_gradients("conv2d stride 2", {x, w}, [](const auto& v) {
        return ad::conv2d(v[0], v[1], nullptr, 2);
    });

    CHECK_THROWS_AS(ad::conv2d(ad::constant(x), ad::constant(randn(rng, {3, 9, 3, 3})),
                               nullptr, 1),
                    std::invalid_argument);
}

TEST_CASE("conv_transpose2d doubles the grid and differentiates") {
    Rng rng(5);
    const Tensor x = randn(rng, {2, 3, 2, 3});
    const Tensor w = randn(rng, {3, 2, 2, 2});
    const Tensor b = randn(rng, {2});

    const Tensor y = ad::conv_transpose2d(ad::constant(x), ad::constant(w),
                                          ad::constant(b))->value;
    REQUIRE(y.shape() == std::vector<int64_t>({2, 2, 4, 6}));
    // Disjoint 2x2 blocks at stride 2: y[n,o,2i+a,2j+b] = b[o] + sum_c w[c,o,a,b]x[n,c,i,j].
    double acc = b[1];
    for (int64_t c = 0; c < 3; ++c) acc += w.at(c, 1, 1, 0) * x.at(1, c, 1, 2);
    CHECK(y.at(1, 1, 3, 4) == doctest::Approx(acc).epsilon(1e-12));

    check_gradients("conv_transpose2d", {x, w, b}, [](const auto& v) {
        return ad::conv_transpose2d(v[0], v[1], v[2]);
    });
}

TEST_CASE("group_norm normalizes groups and differentiates") {
    Rng rng(6);
    const Tensor x = randn(rng, {2, 4, 3, 3}, 2.5);
    const Tensor gamma = Tensor::full({4}, 1.0);
    const Tensor beta = Tensor::zeros({4});

    const Tensor y = ad::group_norm(ad::constant(x), ad::constant(gamma), ad::constant(beta), 2,
                                    1e-5)->value;
    for (int64_t n = 0; n < 2; ++n) {
        for (int64_t g = 0; g < 2; ++g) {
            double sum = 0.0, sq = 0.0;
            for (int64_t c = 2 * g; c < 2 * g + 2; ++c) {
                for (int64_t i = 0; i < 3; ++i) {
                    for (int64_t j = 0; j < 3; ++j) {
                        sum += y.at(n, c, i, j);
                        sq += y.at(n, c, i, j) * y.at(n, c, i, j);
                    }
                }
            }
            const double mean = sum / 18.0;
            CHECK(std::abs(mean) <= 1e-9);
            CHECK(std::abs(sq / 18.0 - mean * mean - 1.0) <= 1e-3);  // eps skews slightly
        }
    }

    check_gradients("group_norm", {x, randn(rng, {4}), randn(rng, {4})},
                    [](const auto& v) { return ad::group_norm(v[0], v[1], v[2], 2, 1e-5); },
                    1e-5, 5e-4);

    CHECK_THROWS_AS(ad::group_norm(ad::constant(x), ad::constant(gamma), ad::constant(beta), 3,
                                   1e-5),
                    std::invalid_argument);
}

TEST_CASE("concat and slice are inverse layouts and differentiate") {
    Rng rng(7);
    const Tensor a = randn(rng, {1, 2, 3, 3});
    const Tensor b = randn(rng, {1, 1, 3, 3});

    ad::Var cat = ad::concat_channels({ad::constant(a), ad::constant(b)});
    CHECK(cat->value.shape() == std::vector<int64_t>({1, 3, 3, 3}));
    const Tensor back = ad::slice_channels(cat, 2, 3)->value;
    for (int64_t i = 0; i < 9; ++i) CHECK(back[i] == b[i]);

    check_gradients("concat_channels", {a, b}, [](const auto& v) {
        return ad::concat_channels({v[0], v[1]});
    });
    check_gradients("slice_channels", {a}, [](const auto& v) {
        return ad::slice_channels(v[0], 1, 2);
    });
    CHECK_THROWS_AS(ad::slice_channels(cat, 2, 2), std::invalid_argument);
}

TEST_CASE("linear and feature bias differentiate") {
    Rng rng(8);
    const Tensor x = randn(rng, {2, 5, 3});  // [N,P,F], applied along F
    const Tensor w = randn(rng, {3, 4});
    const Tensor b = randn(rng, {4});

    const Tensor y = ad::linear(ad::constant(x), ad::constant(w), ad::constant(b))->value;
    REQUIRE(y.shape() == std::vector<int64_t>({2, 5, 4}));
    double acc = b[2];
    for (int64_t f = 0; f < 3; ++f) acc += x.at(1, 4, f) * w.at(f, 2);
    CHECK(y.at(1, 4, 2) == doctest::Approx(acc).epsilon(1e-12));

    check_gradients("linear", {x, w, b},
                    [](const auto& v) { return ad::linear(v[0], v[1], v[2]); });
    check_gradients("linear no bias", {x, w},
                    [](const auto& v) { return ad::linear(v[0], v[1], nullptr); });
    check_gradients("add_feature_bias", {x, randn(rng, {3})},
                    [](const auto& v) { return ad::add_feature_bias(v[0], v[1]); });
}

TEST_CASE("layout moves round trip and differentiate") {
    Rng rng(9);
    const Tensor x = randn(rng, {2, 3, 2, 4});
    ad::Var last = ad::channels_last(ad::constant(x));
    CHECK(last->value.shape() == std::vector<int64_t>({2, 8, 3}));
    CHECK(last->value.at(1, 5, 2) == x.at(1, 2, 1, 1));  // point 5 = (row 1, col 1)
    const Tensor back = ad::channels_first(last, 2, 4)->value;
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);

    check_gradients("channels_last", {x},
                    [](const auto& v) { return ad::channels_last(v[0]); });
    check_gradients("channels_first", {randn(rng, {2, 8, 3})},
                    [](const auto& v) { return ad::channels_first(v[0], 2, 4); });
}

TEST_CASE("graph ops aggregate neighbors and differentiate") {
    // Two destinations; dst 0 reads sources {0,2}, dst 1 reads {1}.
    const std::vector<int64_t> src = {0, 2, 1};
    const std::vector<int64_t> offsets = {0, 2, 3};
    Rng rng(10);
    const Tensor kernels = randn(rng, {3, 6});  // 3 edges, d_out=2 x d_in=3
    const Tensor u = randn(rng, {2, 3, 3});     // [N=2, P=3, F=3]

    const Tensor e =
        ad::edge_matvec(ad::constant(kernels), ad::constant(u), src, 2)->value;
    REQUIRE(e.shape() == std::vector<int64_t>({2, 3, 2}));
    double acc = 0.0;
    for (int64_t c = 0; c < 3; ++c) acc += kernels.at(1, 1 * 3 + c) * u.at(1, 2, c);
    CHECK(e.at(1, 1, 1) == doctest::Approx(acc).epsilon(1e-12));

    ad::Var agg = ad::scatter_mean(ad::edge_matvec(ad::constant(kernels), ad::constant(u), src,
                                                   2),
                                   offsets);
    REQUIRE(agg->value.shape() == std::vector<int64_t>({2, 2, 2}));
    CHECK(agg->value.at(0, 0, 1) ==
          doctest::Approx(0.5 * (e.at(0, 0, 1) + e.at(0, 1, 1))).epsilon(1e-12));
    CHECK(agg->value.at(0, 1, 0) == doctest::Approx(e.at(0, 2, 0)).epsilon(1e-12));

    check_gradients("edge_matvec + scatter_mean", {kernels, u}, [&](const auto& v) {
        return ad::scatter_mean(ad::edge_matvec(v[0], v[1], src, 2), offsets);
    });
}

TEST_CASE("loss ops differentiate through the tape") {
    Rng rng(11);
    const Tensor pred = randn_offset(rng, {2, 3, 4});
    const Tensor target = randn(rng, {2, 3, 4});

    for (LossKind kind : {LossKind::mse, LossKind::l1, LossKind::huber, LossKind::geo_mse,
                          LossKind::geo_l1, LossKind::l1_l2}) {
        LossConfig cfg;
        cfg.kind = kind;
        cfg.huber_delta = 10.0;  // keep the FD probes on one branch
        const bool geo = kind == LossKind::geo_mse || kind == LossKind::geo_l1;
        const std::vector<double> w = geo ? std::vector<double>{0.9, 1.2, 0.9}
                                          : std::vector<double>{};

        ad::Var p = ad::leaf(pred);
        ad::Var loss = ad::loss_op(p, target, cfg, w);
        ad::backward(loss);
        const Tensor g = p->grad;
        const double eps = 1e-6;
        for (int64_t i = 0; i < pred.numel(); ++i) {
            Tensor plus = pred, minus = pred;
            plus[i] += eps;
            minus[i] -= eps;
            const double fd =
                (loss_value(plus, target, cfg, w) - loss_value(minus, target, cfg, w)) /
                (2.0 * eps);
            CHECK(std::abs(g[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("masked channel loss ignores unmasked channels exactly") {
    Rng rng(12);
    const Tensor pred_t = randn(rng, {2, 3, 2, 2});
    const Tensor target = randn(rng, {2, 3, 2, 2});
    Tensor mask = Tensor::zeros({2, 3});
    mask.at(0, 1) = 1.0;  // sample 0 masks channel 1
    mask.at(1, 0) = 1.0;  // sample 1 masks channel 0
    mask.at(1, 2) = 1.0;  // and channel 2

    ad::Var p = ad::leaf(pred_t);
    ad::Var loss = ad::masked_channel_loss(p, target, LossConfig{}, mask);
    ad::backward(loss);

    for (int64_t n = 0; n < 2; ++n) {
        for (int64_t c = 0; c < 3; ++c) {
            double gmax = 0.0;
            for (int64_t i = 0; i < 2; ++i) {
                for (int64_t j = 0; j < 2; ++j) {
                    gmax = std::max(gmax, std::abs(p->grad.at(n, c, i, j)));
                }
            }
            if (mask.at(n, c) != 0.0) {
                CHECK(gmax > 0.0);
            } else {
                CHECK(gmax == 0.0);  // bitwise zero, not just small
            }
        }
    }

    // Value: mean over masked elements only.
    double sum = 0.0;
    int64_t count = 0;
    for (int64_t n = 0; n < 2; ++n) {
        for (int64_t c = 0; c < 3; ++c) {
            if (mask.at(n, c) == 0.0) continue;
            for (int64_t i = 0; i < 2; ++i) {
                for (int64_t j = 0; j < 2; ++j) {
                    const double e = pred_t.at(n, c, i, j) - target.at(n, c, i, j);
                    sum += e * e;
                    ++count;
                }
            }
        }
    }
    CHECK(loss->value[0] == doctest::Approx(sum / count).epsilon(1e-12));
}

TEST_CASE("weighted_sum combines scalar terms") {
    ad::Var a = ad::leaf(Tensor::full({1, 2}, 3.0));
    ad::Var b = ad::leaf(Tensor::full({1, 2}, -1.0));
    LossConfig mse;
    ad::Var la = ad::loss_op(a, Tensor::zeros({1, 2}), mse);  // 9
    ad::Var lb = ad::loss_op(b, Tensor::zeros({1, 2}), mse);  // 1
    ad::Var total = ad::weighted_sum({la, lb}, {1.0, 0.9});
    CHECK(total->value[0] == doctest::Approx(9.0 + 0.9).epsilon(1e-12));
    ad::backward(total);
    CHECK(a->grad[0] == doctest::Approx(3.0));        // 1.0 * 2*3/2
    CHECK(b->grad[0] == doctest::Approx(0.9 * -1.0));  // 0.9 * 2*(-1)/2

    CHECK_THROWS_AS(ad::weighted_sum({la}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("no-grad mode detaches results and backward demands a scalar") {
    Rng rng(13);
    const Tensor x = randn(rng, {2, 2});
    {
        ad::NoGradGuard guard;
        CHECK(!ad::grad_enabled());
        ad::Var a = ad::leaf(x);
        ad::Var y = ad::add(a, a);
        CHECK(!y->requires_grad);
        CHECK(!y->backward_fn);
    }
    CHECK(ad::grad_enabled());

    ad::Var a = ad::leaf(x);
    ad::Var y = ad::add(a, a);  // not a scalar
    CHECK_THROWS_AS(ad::backward(y), std::invalid_argument);

    // Constants never accumulate.
    ad::Var c = ad::constant(x);
    c->accumulate(Tensor::full({2, 2}, 1.0));
    CHECK(c->grad.empty());
}
