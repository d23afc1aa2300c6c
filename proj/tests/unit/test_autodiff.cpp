#include <doctest.h>

#include <cmath>

#include "lsic/autodiff.hpp"
#include "lsic/rng.hpp"
#include "verify/verify.hpp"

using namespace lsic;
using namespace lsic::ad;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

// Checks d(weighted_sum(f(x)))/dx against central differences for a graph
// builder f. The random weighting makes the scalarization sensitive to every
// output component.
template <typename BuildFn>
void gradcheck(std::vector<int> x_shape, BuildFn build, double tol = 1e-6, double scale = 1.0) {
    Rng rng = seeded_rng(99);
    Tensor x0 = random_tensor(x_shape, rng, scale);

    Tape probe;
    Var probe_out = build(probe, probe.leaf(x0, true));
    Tensor w = random_tensor(probe_out.val().shape, rng);

    auto f = [&](const std::vector<double>& xs) {
        Tape t;
        Tensor xt(x_shape, xs);
        Var out = build(t, t.leaf(xt, true));
        return weighted_sum(out, w).val().item();
    };

    Tape t;
    Var x = t.leaf(x0, true);
    Var loss = weighted_sum(build(t, x), w);
    t.backward(loss);
    std::vector<double> analytic = t.grad_of(x).data;
    std::vector<double> numeric = verify::finite_diff_grad(f, x0.data, 1e-5);
    CHECK(verify::max_rel_err(analytic, numeric, 1e-6) < tol);
}

} // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    gradcheck({3, 4}, [](Tape& t, Var x) { return leaky_relu(x, 0.2); });
    gradcheck({3, 4}, [](Tape& t, Var x) { return sigmoid(x); });
    gradcheck({3, 4}, [](Tape& t, Var x) { return tanh_op(x); });
    gradcheck({2, 5}, [](Tape& t, Var x) { return mul(x, add_scalar(x, 0.5)); });
    gradcheck({2, 5}, [](Tape& t, Var x) { return sub(mul_scalar(x, 2.0), x); });
    gradcheck({6}, [](Tape& t, Var x) { return abs_op(add_scalar(x, 0.1)); });
    gradcheck({4}, [](Tape& t, Var x) { return log_clamped(add_scalar(sigmoid(x), 0.01), 1e-7); });
}

TEST_CASE("matmul family gradients") {
    Rng rng = seeded_rng(5);
    Tensor b0 = random_tensor({4, 3}, rng);
    gradcheck({2, 4}, [&](Tape& t, Var x) { return matmul(x, t.constant(b0)); });
    gradcheck({3, 2}, [&](Tape& t, Var x) { return matmul(t.constant(b0), x); });
    Tensor c0 = random_tensor({5, 4}, rng);
    gradcheck({2, 4}, [&](Tape& t, Var x) { return matmul_nt(x, t.constant(c0)); });
    Tensor w0 = random_tensor({3, 4}, rng);
    Tensor bias0 = random_tensor({3}, rng);
    gradcheck({2, 4}, [&](Tape& t, Var x) {
        return linear(x, t.constant(w0), t.constant(bias0));
    });
    // gradient w.r.t. the weight as well
    Tensor x0 = random_tensor({2, 4}, rng);
    gradcheck({3, 4}, [&](Tape& t, Var w) {
        return linear(t.constant(x0), w, t.constant(bias0));
    });
}

TEST_CASE("reduction and broadcast gradients") {
    gradcheck({3, 4}, [](Tape& t, Var x) { return mean_rows(x); });
    gradcheck({4}, [](Tape& t, Var x) { return row_broadcast(x, 5); });
    Rng rng = seeded_rng(6);
    Tensor s0 = random_tensor({3, 1}, rng);
    gradcheck({3, 4}, [&](Tape& t, Var x) { return mul_colvec(x, t.constant(s0)); });
    Tensor x0 = random_tensor({3, 4}, rng);
    gradcheck({3, 1}, [&](Tape& t, Var s) { return mul_colvec(t.constant(x0), s); });
    gradcheck({3, 4}, [](Tape& t, Var x) { return softmax_rows(x); });
    Tensor b0 = random_tensor({3, 2}, rng);
    gradcheck({3, 4}, [&](Tape& t, Var x) { return concat_cols(x, t.constant(b0)); });
    gradcheck({3, 4}, [](Tape& t, Var x) { return mean_all(mul(x, x)); });
}

TEST_CASE("conv2d gradients w.r.t. input, weight and bias") {
    Rng rng = seeded_rng(7);
    Tensor w0 = random_tensor({3, 2, 3, 3}, rng, 0.5);
    Tensor b0 = random_tensor({3}, rng, 0.5);
    Tensor x0 = random_tensor({2, 2, 5, 5}, rng);

    gradcheck({2, 2, 5, 5}, [&](Tape& t, Var x) {
        return conv2d(x, t.constant(w0), t.constant(b0), 1, 1);
    });
    gradcheck({3, 2, 3, 3}, [&](Tape& t, Var w) {
        return conv2d(t.constant(x0), w, t.constant(b0), 2, 1);
    });
    gradcheck({3}, [&](Tape& t, Var b) {
        return conv2d(t.constant(x0), t.constant(w0), b, 1, 0);
    });
}

TEST_CASE("spatial op gradients") {
    gradcheck({2, 3, 2, 2}, [](Tape& t, Var x) { return upsample_nearest2x(x); });
    gradcheck({2, 3, 2, 2}, [](Tape& t, Var x) { return mean_spatial(x); });
    gradcheck({2, 3}, [](Tape& t, Var x) { return spatial_broadcast(x, 2, 2); });
    gradcheck({2, 2, 3, 3}, [](Tape& t, Var x) { return spatial_to_rows(x, 1); });
    Rng rng = seeded_rng(8);
    Tensor v0 = random_tensor({2, 3}, rng);
    gradcheck({2, 3, 2, 2}, [&](Tape& t, Var x) {
        return broadcast_add_channels(x, t.constant(v0));
    });
    Tensor other0 = random_tensor({2, 2, 3, 3}, rng);
    gradcheck({2, 1, 3, 3}, [&](Tape& t, Var x) {
        return concat_channels(x, t.constant(other0));
    });
    Tensor m(std::vector<int>{2, 1, 3, 3});
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = (i % 2 == 0) ? 1.0 : 0.0;
    gradcheck({2, 2, 3, 3}, [&](Tape& t, Var x) { return mul_mask(x, m); });
}

TEST_CASE("rows_to_spatial round trip and gradient") {
    Rng rng = seeded_rng(9);
    Tensor x0 = random_tensor({2, 3, 2, 2}, rng);
    Tape t;
    Var x = t.leaf(x0, true);
    std::vector<Var> rows{spatial_to_rows(x, 0), spatial_to_rows(x, 1)};
    Var back = rows_to_spatial(rows, 3, 2, 2);
    for (std::size_t i = 0; i < x0.data.size(); ++i)
        CHECK(back.val().data[i] == doctest::Approx(x0.data[i]));

    gradcheck({4, 3}, [](Tape& tp, Var r) {
        return rows_to_spatial({r, mul_scalar(r, 2.0)}, 3, 2, 2);
    });
}

TEST_CASE("crop_resize_nearest selects and backpropagates correctly") {
    Tensor x(std::vector<int>{1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) x.data[static_cast<std::size_t>(i)] = i;
    Tape t;
    Var xv = t.leaf(x, true);
    std::vector<CropBox> boxes{{1, 1, 2, 2}};
    Var out = crop_resize_nearest(xv, boxes, 4, 4);
    // nearest upsampling of the 2x2 patch {5,6;9,10}
    CHECK(out.val().data[0] == 5.0);
    CHECK(out.val().data[3] == 6.0);
    CHECK(out.val().data[15] == 10.0);

    gradcheck({1, 1, 4, 4}, [&](Tape& tp, Var v) {
        return crop_resize_nearest(v, boxes, 3, 3);
    });
}

TEST_CASE("gather and cross entropy gradients") {
    std::vector<int> ids{0, 2, 2, 1};
    gradcheck({3, 4}, [&](Tape& t, Var tab) { return gather_rows(tab, ids); });

    std::vector<int> targets{1, 0};
    gradcheck({2, 3}, [&](Tape& t, Var logits) {
        return cross_entropy_rows(logits, targets);
    });

    // uniform logits -> loss = ln(V)
    Tape t;
    Var logits = t.leaf(Tensor::zeros({2, 7}), true);
    Var ce = cross_entropy_rows(logits, {3, 6});
    CHECK(ce.val().item() == doctest::Approx(std::log(7.0)));
}

TEST_CASE("spectral_scale value and gradient") {
    Rng rng = seeded_rng(11);
    Tensor u = random_tensor({3}, rng);
    Tensor v = random_tensor({4}, rng);
    gradcheck({3, 4}, [&](Tape& t, Var w) { return spectral_scale(w, u, v); });

    // with u, v the exact singular vectors, y = W / sigma_max
    Tensor w(std::vector<int>{2, 2}, {3.0, 0.0, 0.0, 1.0});
    Tensor ue({2}), ve({2});
    ue.data = {1.0, 0.0};
    ve.data = {1.0, 0.0};
    Tape t;
    Var y = spectral_scale(t.leaf(w, true), ue, ve);
    CHECK(y.val().data[0] == doctest::Approx(1.0));
    CHECK(y.val().data[3] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("gradient accumulates across shared subexpressions") {
    // f(x) = sum(x*x + 3x) -> df/dx = 2x + 3
    Tape t;
    Tensor x0(std::vector<int>{3}, {1.0, -2.0, 0.5});
    Var x = t.leaf(x0, true);
    Var loss = sum_all(add(mul(x, x), mul_scalar(x, 3.0)));
    t.backward(loss);
    for (int i = 0; i < 3; ++i)
        CHECK(t.grad_of(x).data[static_cast<std::size_t>(i)] ==
              doctest::Approx(2.0 * x0.data[static_cast<std::size_t>(i)] + 3.0));
}

TEST_CASE("parameter binding accumulates into grad buffers") {
    ad::Parameter p("p", Tensor(std::vector<int>{2}, {2.0, -1.0}));
    Tape t;
    Var a = t.param(p);
    Var b = t.param(p); // registered twice, e.g. shared weights
    Var loss = sum_all(add(mul(a, a), b));
    t.backward(loss);
    CHECK(p.grad.data[0] == doctest::Approx(2.0 * 2.0 + 1.0));
    CHECK(p.grad.data[1] == doctest::Approx(2.0 * -1.0 + 1.0));
}

TEST_CASE("finite_diff_grad sanity: quadratic and convergence order") {
    auto f = [](const std::vector<double>& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return 0.5 * s;
    };
    std::vector<double> x{0.3, -1.2, 4.0};
    auto g = verify::finite_diff_grad(f, x, 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == doctest::Approx(x[i]).epsilon(1e-8));

    // cubic: error of central differences scales as O(h^2)
    auto fc = [](const std::vector<double>& x) { return x[0] * x[0] * x[0]; };
    std::vector<double> at{1.0};
    double e1 = std::fabs(verify::finite_diff_grad(fc, at, 1e-1)[0] - 3.0);
    double e2 = std::fabs(verify::finite_diff_grad(fc, at, 1e-2)[0] - 3.0);
    CHECK(e1 / e2 == doctest::Approx(100.0).epsilon(0.05));
}
