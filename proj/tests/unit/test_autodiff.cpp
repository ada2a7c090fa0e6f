#include <doctest.h>

#include <cmath>

#include "camogen/core/graph.hpp"
#include "camogen/core/rng.hpp"
#include "test_util.hpp"

using namespace camogen;
using namespace camogen::ad;
using testutil::check_grad_wrt_leaf;
using testutil::random_tensor;

TEST_CASE("autodiff: elementwise op gradients match finite differences") {
    Rng rng(101);
    const Tensor x0 = random_tensor({4, 5}, rng);
    const Tensor other = random_tensor({4, 5}, rng);

    check_grad_wrt_leaf(x0, [&](Tape& t, Var x) {
        return t.mean_all(t.mul(t.add(x, t.constant(other)), x));
    });
    check_grad_wrt_leaf(x0, [&](Tape& t, Var x) {
        return t.mean_all(t.silu(t.scale(x, 1.5)));
    });
    check_grad_wrt_leaf(x0, [&](Tape& t, Var x) {
        return t.mean_all(t.sigmoid(t.sub(x, t.constant(other))));
    });
    check_grad_wrt_leaf(x0, [&](Tape& t, Var x) {
        return t.mse(t.add_weighted(x, 0.3, t.constant(other), 0.7), t.constant(other));
    });
}

TEST_CASE("autodiff: matmul family gradients") {
    Rng rng(102);
    const Tensor a0 = random_tensor({3, 4}, rng);
    const Tensor b0 = random_tensor({4, 6}, rng);
    const Tensor bt0 = random_tensor({6, 4}, rng);
    const Tensor bias0 = random_tensor({1, 6}, rng);
    const Tensor target = random_tensor({3, 6}, rng);

    check_grad_wrt_leaf(a0, [&](Tape& t, Var x) {
        return t.mse(t.matmul(x, t.constant(b0)), t.constant(target));
    });
    check_grad_wrt_leaf(b0, [&](Tape& t, Var x) {
        return t.mse(t.matmul(t.constant(a0), x), t.constant(target));
    });
    check_grad_wrt_leaf(bt0, [&](Tape& t, Var x) {
        return t.mse(t.matmul_nt(t.constant(a0), x), t.constant(target));
    });
    check_grad_wrt_leaf(bias0, [&](Tape& t, Var x) {
        return t.mse(t.linear(t.constant(a0), t.constant(b0), x), t.constant(target));
    });
}

TEST_CASE("autodiff: shape ops route gradients exactly") {
    Rng rng(103);
    const Tensor a0 = random_tensor({5, 3}, rng);
    const Tensor b0 = random_tensor({2, 3}, rng);
    const Tensor tgt = random_tensor({7, 3}, rng);

    check_grad_wrt_leaf(a0, [&](Tape& t, Var x) {
        return t.mse(t.concat_rows({x, t.constant(b0)}), t.constant(tgt));
    });
    check_grad_wrt_leaf(a0, [&](Tape& t, Var x) {
        return t.mean_all(t.slice_rows(x, 1, 3));
    });
    check_grad_wrt_leaf(a0, [&](Tape& t, Var x) {
        return t.mse(t.broadcast_row(t.mean_rows(x), 4),
                     t.constant(Tensor::full({4, 3}, 0.25)));
    });
    check_grad_wrt_leaf(a0, [&](Tape& t, Var x) {
        return t.mean_all(t.reshape(x, {3, 5}));
    });
}

TEST_CASE("autodiff: softmax and attention gradients") {
    Rng rng(104);
    const Tensor x0 = random_tensor({4, 6}, rng);
    check_grad_wrt_leaf(x0, [&](Tape& t, Var x) {
        return t.mse(t.softmax_rows(x), t.constant(Tensor::full({4, 6}, 1.0 / 6)));
    });

    // additive bias mask: blocked entries get exactly zero weight
    Tensor bias({4, 6});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j) bias.at(i, j) = (j % 2 == 0) ? 0.0 : -1e9;
    check_grad_wrt_leaf(x0, [&](Tape& t, Var x) {
        return t.mean_all(t.softmax_rows(x, &bias));
    });

    const Tensor q0 = random_tensor({5, 8}, rng);
    const Tensor k0 = random_tensor({3, 8}, rng);
    const Tensor v0 = random_tensor({3, 8}, rng);
    const Tensor tgt = random_tensor({5, 8}, rng);
    const double scale = 1.0 / std::sqrt(8.0);
    for (int heads : {1, 2, 4}) {
        check_grad_wrt_leaf(q0, [&](Tape& t, Var x) {
            return t.mse(t.attention(x, t.constant(k0), t.constant(v0), heads, scale),
                         t.constant(tgt));
        });
        check_grad_wrt_leaf(k0, [&](Tape& t, Var x) {
            return t.mse(t.attention(t.constant(q0), x, t.constant(v0), heads, scale),
                         t.constant(tgt));
        });
        check_grad_wrt_leaf(v0, [&](Tape& t, Var x) {
            return t.mse(t.attention(t.constant(q0), t.constant(k0), x, heads, scale),
                         t.constant(tgt));
        });
    }
}

TEST_CASE("autodiff: single-head attention equals explicit formula") {
    Rng rng(105);
    const Tensor q0 = random_tensor({3, 4}, rng);
    const Tensor k0 = random_tensor({5, 4}, rng);
    const Tensor v0 = random_tensor({5, 4}, rng);
    const double scale = 0.5;

    Tape t;
    Var out = t.attention(t.constant(q0), t.constant(k0), t.constant(v0), 1, scale);

    Tape t2;
    Var logits = t2.scale(t2.matmul_nt(t2.constant(q0), t2.constant(k0)), scale);
    Var ref = t2.matmul(t2.softmax_rows(logits), t2.constant(v0));

    for (size_t i = 0; i < t.val(out).data.size(); ++i)
        CHECK(t.val(out).data[i] == doctest::Approx(t2.val(ref).data[i]).epsilon(1e-12));
}

TEST_CASE("autodiff: conv2d matches direct convolution and its gradients check out") {
    Rng rng(106);
    const Tensor x0 = random_tensor({2, 3, 6, 6}, rng);
    const Tensor w0 = random_tensor({4, 3, 3, 3}, rng, 0.5);
    const Tensor b0 = random_tensor({4}, rng, 0.1);

    Tape t;
    Var y = t.conv2d(t.constant(x0), t.constant(w0), t.constant(b0), 1, 1);
    REQUIRE(t.val(y).shape == std::vector<int>({2, 4, 6, 6}));
    // direct nested-loop oracle
    for (int b = 0; b < 2; ++b)
        for (int co = 0; co < 4; ++co)
            for (int oy = 0; oy < 6; ++oy)
                for (int ox = 0; ox < 6; ++ox) {
                    double s = b0.data[static_cast<size_t>(co)];
                    for (int ci = 0; ci < 3; ++ci)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = oy - 1 + ky, ix = ox - 1 + kx;
                                if (iy < 0 || iy >= 6 || ix < 0 || ix >= 6) continue;
                                s += x0.data[((static_cast<size_t>(b) * 3 + ci) * 6 + iy) * 6 + ix] *
                                     w0.data[((static_cast<size_t>(co) * 3 + ci) * 3 + ky) * 3 + kx];
                            }
                    const double got =
                        t.val(y).data[((static_cast<size_t>(b) * 4 + co) * 6 + oy) * 6 + ox];
                    CHECK(got == doctest::Approx(s).epsilon(1e-12));
                }

    const Tensor tgt = random_tensor({2, 4, 6, 6}, rng);
    check_grad_wrt_leaf(x0, [&](Tape& tp, Var v) {
        return tp.mse(tp.conv2d(v, tp.constant(w0), tp.constant(b0), 1, 1), tp.constant(tgt));
    });
    check_grad_wrt_leaf(w0, [&](Tape& tp, Var v) {
        return tp.mse(tp.conv2d(tp.constant(x0), v, tp.constant(b0), 1, 1), tp.constant(tgt));
    });
    check_grad_wrt_leaf(b0, [&](Tape& tp, Var v) {
        return tp.mse(tp.conv2d(tp.constant(x0), tp.constant(w0), v, 1, 1), tp.constant(tgt));
    });

    // strided variant: shape and gradient
    Tape ts;
    Var ys = ts.conv2d(ts.constant(x0), ts.constant(w0), ts.constant(b0), 2, 1);
    CHECK(ts.val(ys).shape == std::vector<int>({2, 4, 3, 3}));
    const Tensor tgt_s = random_tensor({2, 4, 3, 3}, rng);
    check_grad_wrt_leaf(x0, [&](Tape& tp, Var v) {
        return tp.mse(tp.conv2d(v, tp.constant(w0), tp.constant(b0), 2, 1), tp.constant(tgt_s));
    });
}

TEST_CASE("autodiff: upsample2x and channel bias") {
    Rng rng(107);
    const Tensor x0 = random_tensor({1, 2, 3, 3}, rng);
    Tape t;
    Var y = t.upsample2x(t.constant(x0));
    CHECK(t.val(y).shape == std::vector<int>({1, 2, 6, 6}));
    CHECK(t.val(y).data[0] == x0.data[0]);
    CHECK(t.val(y).data[1] == x0.data[0]);

    const Tensor tgt = random_tensor({1, 2, 6, 6}, rng);
    check_grad_wrt_leaf(x0, [&](Tape& tp, Var v) {
        return tp.mse(tp.upsample2x(v), tp.constant(tgt));
    });

    const Tensor s0 = random_tensor({1, 2}, rng);
    const Tensor tgt2 = random_tensor({1, 2, 3, 3}, rng);
    check_grad_wrt_leaf(s0, [&](Tape& tp, Var v) {
        return tp.mse(tp.add_channel_bias(tp.constant(x0), v), tp.constant(tgt2));
    });
    check_grad_wrt_leaf(x0, [&](Tape& tp, Var v) {
        return tp.mse(tp.add_channel_bias(v, tp.constant(s0)), tp.constant(tgt2));
    });
}

TEST_CASE("autodiff: rows_gather scatters gradients to the right table rows") {
    Rng rng(108);
    const Tensor table0 = random_tensor({6, 4}, rng);
    const std::vector<int> idx = {2, 0, 2, 5};
    const Tensor tgt = random_tensor({4, 4}, rng);
    check_grad_wrt_leaf(table0, [&](Tape& tp, Var v) {
        return tp.mse(tp.rows_gather(v, idx), tp.constant(tgt));
    });
}

TEST_CASE("autodiff: param gradients accumulate into Param::grad") {
    Rng rng(109);
    Param p("w", random_tensor({3, 3}, rng));
    const Tensor x = random_tensor({2, 3}, rng);
    const Tensor tgt = random_tensor({2, 3}, rng);

    Tape t;
    Var loss = t.mse(t.matmul(t.constant(x), t.param(p)), t.constant(tgt));
    t.backward(loss);
    // finite difference on one coordinate
    const double h = 1e-6;
    Param pp = p, pm = p;
    pp.value.data[4] += h;
    pm.value.data[4] -= h;
    Tape tp_, tm_;
    const double lp = tp_.val(tp_.mse(tp_.matmul(tp_.constant(x), tp_.param(pp)), tp_.constant(tgt))).data[0];
    const double lm = tm_.val(tm_.mse(tm_.matmul(tm_.constant(x), tm_.param(pm)), tm_.constant(tgt))).data[0];
    CHECK(testutil::rel_err(p.grad.data[4], (lp - lm) / (2 * h)) < 1e-6);

    // a second backward adds on top (per-sample accumulation contract)
    const Tensor g1 = p.grad;
    Tape t2;
    t2.backward(t2.mse(t2.matmul(t2.constant(x), t2.param(p)), t2.constant(tgt)));
    for (size_t i = 0; i < g1.data.size(); ++i)
        CHECK(p.grad.data[i] == doctest::Approx(2 * g1.data[i]).epsilon(1e-12));
}

TEST_CASE("autodiff: dlc loss gradient (unique minimizer) matches finite differences") {
    Rng rng(110);
    const Tensor fq0 = random_tensor({4, 6}, rng);
    const Tensor p0 = random_tensor({2, 6}, rng);
    check_grad_wrt_leaf(fq0, [&](Tape& tp, Var v) {
        return tp.dlc_loss(v, tp.constant(p0), 1e-8);
    });
    check_grad_wrt_leaf(p0, [&](Tape& tp, Var v) {
        return tp.dlc_loss(tp.constant(fq0), v, 1e-8);
    });
}

TEST_CASE("autodiff: clamp01 passes gradient only inside the open interval") {
    Tensor x({3}, {-0.5, 0.5, 1.5});
    Tape t;
    Var v = t.leaf(x);
    Var y = t.clamp01(v);
    CHECK(t.val(y).data == std::vector<double>({0.0, 0.5, 1.0}));
    t.backward(t.sum_all(y));
    CHECK(t.grad(v).data == std::vector<double>({0.0, 1.0, 0.0}));
}
