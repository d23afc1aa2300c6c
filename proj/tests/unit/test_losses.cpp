#include <doctest.h>

#include <cmath>

#include "lsic/losses.hpp"
#include "verify/verify.hpp"

using namespace lsic;

namespace {

DiscriminatorConfig d_cfg(bool conditional) {
    DiscriminatorConfig c;
    c.resolution = 32;
    c.base_channels = 4;
    c.cond_dim = conditional ? 5 : 0;
    c.cond_channels = 3;
    return c;
}

Tensor random_image(int n, int res, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t({n, 3, res, res});
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

void zero_all(PatchDiscriminator& d) {
    std::vector<ad::Parameter*> params;
    d.collect(params);
    for (ad::Parameter* p : params) std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
}

} // namespace

TEST_CASE("zeroed discriminator outputs 0.5, pinning the loss constants") {
    Rng rng = seeded_rng(1);
    PatchDiscriminator d_r(d_cfg(true), rng, "dr");
    PatchDiscriminator d_c(d_cfg(false), rng, "dc");
    zero_all(d_r);
    zero_all(d_c);
    Rng drng = seeded_rng(2);
    Tensor real = random_image(2, 32, drng);
    Tensor fake = random_image(2, 32, drng);
    Tensor v0({2, 5});
    for (double& v : v0.data) v = drng.normal();

    ad::Tape t;
    // D(real)=D(fake)=0.5 -> discriminator loss = 2 ln 2
    ad::Var dl = recon_discriminator_loss(t, d_r, real, fake, v0, false);
    CHECK(dl.val().item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
    ad::Var dlc = creation_discriminator_loss(t, d_c, real, fake, false);
    CHECK(dlc.val().item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));

    // D(fake)=0.5 and perfect l1 -> generator loss = ln 2
    LossWeights w{1.0, 20.0, 1.0};
    std::vector<ad::Var> fake_scales{t.constant(real)};
    ad::Var gl = recon_generator_loss(t, d_r, t.constant(real), fake_scales, {real}, v0, w, false);
    CHECK(gl.val().item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    // creation loss: -ln 0.5 + lambda_ce * context
    ad::Var ctx = t.constant(Tensor::scalar(0.5));
    ad::Var cl = creation_generator_loss(t, d_c, t.constant(fake), ctx, w, false);
    CHECK(cl.val().item() == doctest::Approx(std::log(2.0) + 0.5).epsilon(1e-9));
}

TEST_CASE("recon generator loss matches its hand-assembled formula") {
    Rng rng = seeded_rng(3);
    PatchDiscriminator d_r(d_cfg(true), rng, "dr");
    Rng drng = seeded_rng(4);
    Tensor real = random_image(2, 32, drng);
    Tensor real_half({2, 3, 16, 16});
    for (double& v : real_half.data) v = drng.uniform(-1.0, 1.0);
    Tensor fake = random_image(2, 32, drng);
    Tensor fake_half({2, 3, 16, 16});
    for (double& v : fake_half.data) v = drng.uniform(-1.0, 1.0);
    Tensor v0({2, 5});
    for (double& v : v0.data) v = drng.normal();
    LossWeights w{1.5, 7.0, 1.0};

    ad::Tape t;
    std::vector<ad::Var> fs{t.constant(fake_half), t.constant(fake)};
    ad::Var loss = recon_generator_loss(t, d_r, t.constant(fake), fs, {real_half, real}, v0, w, false);

    auto probs = d_r.discriminate(t, t.constant(fake), &v0, false).prob;
    double logp = 0.0;
    for (double p : probs.val().data) logp += std::log(std::max(p, kLogEps));
    logp /= static_cast<double>(probs.val().size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < fake_half.data.size(); ++i)
        l1 += std::fabs(fake_half.data[i] - real_half.data[i]);
    l1 /= static_cast<double>(fake_half.data.size());
    double l1b = 0.0;
    for (std::size_t i = 0; i < fake.data.size(); ++i) l1b += std::fabs(fake.data[i] - real.data[i]);
    l1b /= static_cast<double>(fake.data.size());

    CHECK(loss.val().item() ==
          doctest::Approx(-w.adv * logp + w.l1 * (l1 + l1b)).epsilon(1e-9));
}

TEST_CASE("all four losses are nonnegative for probabilities in (0,1)") {
    Rng rng = seeded_rng(5);
    PatchDiscriminator d_r(d_cfg(true), rng, "dr");
    PatchDiscriminator d_c(d_cfg(false), rng, "dc");
    Rng drng = seeded_rng(6);
    LossWeights w;
    for (int trial = 0; trial < 5; ++trial) {
        Tensor real = random_image(2, 32, drng);
        Tensor fake = random_image(2, 32, drng);
        Tensor v0({2, 5});
        for (double& v : v0.data) v = drng.normal();
        ad::Tape t;
        CHECK(recon_discriminator_loss(t, d_r, real, fake, v0, false).val().item() >= 0.0);
        CHECK(creation_discriminator_loss(t, d_c, real, fake, false).val().item() >= 0.0);
        std::vector<ad::Var> fs{t.constant(fake)};
        CHECK(recon_generator_loss(t, d_r, t.constant(fake), fs, {real}, v0, w, false).val().item() >=
              0.0);
        ad::Var ctx = t.constant(Tensor::scalar(drng.uniform(0.0, 2.0)));
        CHECK(creation_generator_loss(t, d_c, t.constant(fake), ctx, w, false).val().item() >= 0.0);
    }
}

TEST_CASE("discriminator loss gradients match finite differences through D") {
    Rng rng = seeded_rng(7);
    DiscriminatorConfig cfg = d_cfg(false);
    cfg.spectral_norm = false; // keep the loss a plain smooth function
    PatchDiscriminator d(cfg, rng, "d");
    std::vector<ad::Parameter*> params;
    d.collect(params);

    Rng drng = seeded_rng(8);
    Tensor real = random_image(1, 32, drng);
    Tensor fake = random_image(1, 32, drng);

    for (ad::Parameter* p : params) {
        if (p->value.size() > 200) continue; // keep the check cheap
        auto f = [&](const std::vector<double>& xs) {
            std::vector<double> saved = p->value.data;
            p->value.data = xs;
            ad::Tape t;
            double v = creation_discriminator_loss(t, d, real, fake, false).val().item();
            p->value.data = saved;
            return v;
        };
        p->zero_grad();
        ad::Tape t;
        t.backward(creation_discriminator_loss(t, d, real, fake, false));
        auto num = verify::finite_diff_grad(f, p->value.data, 1e-5);
        CHECK(verify::max_rel_err(p->grad.data, num, 1e-5) < 1e-4);
    }
}

TEST_CASE("generator adversarial gradient flows into the fake image") {
    Rng rng = seeded_rng(9);
    PatchDiscriminator d_c(d_cfg(false), rng, "dc");
    Rng drng = seeded_rng(10);
    Tensor fake0 = random_image(1, 32, drng, -0.5, 0.5);
    LossWeights w;

    ad::Tape t;
    ad::Var fake = t.leaf(fake0, true);
    ad::Var ctx = t.constant(Tensor::scalar(0.0));
    ad::Var loss = creation_generator_loss(t, d_c, fake, ctx, w, false);
    t.backward(loss);
    const Tensor& g = t.grad_of(fake);
    double norm = 0.0;
    for (double v : g.data) norm += v * v;
    CHECK(norm > 0.0);

    Rng pick = seeded_rng(11);
    auto f = [&](const std::vector<double>& xs) {
        ad::Tape tp;
        ad::Var fk = tp.leaf(Tensor(fake0.shape, xs), true);
        ad::Var cx = tp.constant(Tensor::scalar(0.0));
        return creation_generator_loss(tp, d_c, fk, cx, w, false).val().item();
    };
    for (int k = 0; k < 16; ++k) {
        std::size_t i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(fake0.data.size()) - 1));
        std::vector<double> xs = fake0.data;
        double h = 1e-5;
        xs[i] += h;
        double fp = f(xs);
        xs[i] = fake0.data[i] - h;
        double fm = f(xs);
        double num = (fp - fm) / (2.0 * h);
        CHECK(std::fabs(g.data[i] - num) < 1e-4 * std::max(1.0, std::fabs(num)));
    }
}
