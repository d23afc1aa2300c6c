#include <doctest.h>

#include "lsic/adversary.hpp"
#include "verify/verify.hpp"

using namespace lsic;

namespace {

DiscriminatorConfig small_cfg(bool conditional) {
    DiscriminatorConfig c;
    c.resolution = 64;
    c.base_channels = 8;
    c.cond_dim = conditional ? 6 : 0;
    c.cond_channels = 4;
    return c;
}

Tensor random_image(int n, int res, Rng& rng) {
    Tensor t({n, 3, res, res});
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("conditional usage is enforced both ways") {
    Rng rng = seeded_rng(1);
    PatchDiscriminator cond(small_cfg(true), rng, "dr");
    PatchDiscriminator uncond(small_cfg(false), rng, "dc");
    Rng drng = seeded_rng(2);
    Tensor img = random_image(2, 64, drng);
    Tensor v0({2, 6});
    for (double& v : v0.data) v = drng.normal();

    ad::Tape t;
    CHECK_THROWS_AS(cond.discriminate(t, t.constant(img), nullptr, false), std::invalid_argument);
    CHECK_THROWS_AS(uncond.discriminate(t, t.constant(img), &v0, false), std::invalid_argument);
    CHECK_NOTHROW(cond.discriminate(t, t.constant(img), &v0, false));
    CHECK_NOTHROW(uncond.discriminate(t, t.constant(img), nullptr, false));
}

TEST_CASE("scalar score is a probability and patch map is spatial") {
    Rng rng = seeded_rng(3);
    PatchDiscriminator d(small_cfg(false), rng, "d");
    Rng drng = seeded_rng(4);
    ad::Tape t;
    auto out = d.discriminate(t, t.constant(random_image(3, 64, drng)), nullptr, false);
    CHECK(out.patch_logits.val().dim(1) == 1);
    CHECK(out.patch_logits.val().dim(2) == 8); // 64 -> 32 -> 16 -> 8
    for (double p : out.prob.val().data) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("fully convolutional: larger inputs give larger patch maps") {
    Rng rng = seeded_rng(5);
    PatchDiscriminator d(small_cfg(true), rng, "d");
    Rng drng = seeded_rng(6);
    Tensor v0({1, 6});
    for (double& v : v0.data) v = drng.normal();

    ad::Tape t;
    auto out64 = d.discriminate(t, t.constant(random_image(1, 64, drng)), &v0, false);
    auto out128 = d.discriminate(t, t.constant(random_image(1, 128, drng)), &v0, false);
    CHECK(out64.patch_logits.val().dim(2) == 8);
    CHECK(out128.patch_logits.val().dim(2) == 16);
}

TEST_CASE("conditioning is not degenerate at initialization") {
    Rng rng = seeded_rng(7);
    PatchDiscriminator d(small_cfg(true), rng, "d");
    Rng drng = seeded_rng(8);
    Tensor img = random_image(1, 64, drng);
    Tensor v1({1, 6}), v2({1, 6});
    for (double& v : v1.data) v = drng.normal();
    for (double& v : v2.data) v = drng.normal();

    ad::Tape t;
    auto o1 = d.discriminate(t, t.constant(img), &v1, false);
    auto o2 = d.discriminate(t, t.constant(img), &v2, false);
    CHECK(o1.prob.val().data[0] != o2.prob.val().data[0]);
}

TEST_CASE("every spectrally normalized discriminator weight lands near unit norm") {
    Rng rng = seeded_rng(9);
    PatchDiscriminator d(small_cfg(true), rng, "d");
    std::vector<nn::SnEntry> sn;
    d.collect_sn(sn);
    CHECK(!sn.empty());

    std::vector<ad::Parameter*> params;
    d.collect(params);
    for (auto& [name, st] : sn) {
        ad::Parameter* w = nullptr;
        for (ad::Parameter* p : params)
            if (p->name == name) w = p;
        REQUIRE(w != nullptr);
        double sigma = 0.0;
        for (int i = 0; i < 50; ++i) sigma = nn::power_iterate(w->value, *st);
        double exact = verify::svd_sigma_max(w->value);
        // normalized weight's true top singular value
        double ratio = exact / sigma;
        CHECK(ratio > 0.9);
        CHECK(ratio < 1.1);
    }
}
