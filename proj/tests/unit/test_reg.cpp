#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "lsic/reg.hpp"
#include "verify/verify.hpp"

using namespace lsic;

namespace {

RegConfig tiny_cfg() {
    RegConfig c;
    c.enc_channels = 4;
    c.enc_out = 6;
    c.embed_dim = 5;
    c.hidden_dim = 7;
    c.att_dim = 4;
    c.max_len = 8;
    return c;
}

Vocabulary toy_vocab() {
    return Vocabulary::from_corpus_tokens({"red", "bird", "blue", "circle", "a"});
}

Tensor random_image(int n, int res, Rng& rng) {
    Tensor t({n, 3, res, res});
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("vocabulary reserves PAD/BOS/EOS/UNK and round-trips through disk") {
    Vocabulary v = toy_vocab();
    CHECK(v.tokens[0] == "<pad>");
    CHECK(v.tokens[1] == "<bos>");
    CHECK(v.tokens[2] == "<eos>");
    CHECK(v.tokens[3] == "<unk>");
    CHECK(v.id("bird") >= 4);
    CHECK(v.id("zebra") == Vocabulary::UNK);

    v.save("vocab_test.txt");
    Vocabulary w = Vocabulary::load("vocab_test.txt");
    CHECK(w.tokens == v.tokens);
    CHECK(w.id("circle") == v.id("circle"));
    std::remove("vocab_test.txt");
}

TEST_CASE("box validation rejects out-of-bounds and empty boxes") {
    BoxSpec ok{4, 4, 8, 8};
    CHECK_NOTHROW(ok.validate(16, 16));
    CHECK_THROWS(BoxSpec{0, 0, 0, 4}.validate(16, 16));
    CHECK_THROWS(BoxSpec{-1, 0, 4, 4}.validate(16, 16));
    CHECK_THROWS(BoxSpec{10, 10, 8, 8}.validate(16, 16));
}

TEST_CASE("reg_encode: full-image box duplicates the context code") {
    Rng rng = seeded_rng(1);
    RegModel reg(tiny_cfg(), toy_vocab(), rng);
    Rng drng = seeded_rng(2);
    Tensor img = random_image(1, 16, drng);

    ad::Tape t;
    ad::Var joint = reg.encode(t, t.constant(img), {BoxSpec{0, 0, 16, 16}}, false);
    const Tensor& j = joint.val();
    int half = j.dim(1) / 2;
    std::size_t plane = static_cast<std::size_t>(j.dim(2)) * j.dim(3);
    for (int c = 0; c < half; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            CHECK(j.data[static_cast<std::size_t>(c) * plane + i] ==
                  doctest::Approx(j.data[static_cast<std::size_t>(half + c) * plane + i]));
}

TEST_CASE("reg_encode: boxed crop is upsampled before encoding") {
    Rng rng = seeded_rng(3);
    RegModel reg(tiny_cfg(), toy_vocab(), rng);
    Rng drng = seeded_rng(4);
    Tensor img = random_image(1, 16, drng);

    ad::Tape t;
    // center 8x8 box upsamples x2 before encoding; deterministic given params
    ad::Var j1 = reg.encode(t, t.constant(img), {BoxSpec{4, 4, 8, 8}}, false);
    ad::Var j2 = reg.encode(t, t.constant(img), {BoxSpec{4, 4, 8, 8}}, false);
    CHECK(j1.val().data == j2.val().data);
    CHECK(j1.val().dim(2) == 2); // 16 / 8
    CHECK_THROWS(reg.encode(t, t.constant(img), {BoxSpec{12, 12, 8, 8}}, false));
}

TEST_CASE("teacher forcing: zeroed output head gives the uniform cross entropy") {
    Rng rng = seeded_rng(5);
    Vocabulary vocab = toy_vocab();
    RegModel reg(tiny_cfg(), vocab, rng);
    std::vector<ad::Parameter*> params = reg.parameters();
    for (ad::Parameter* p : params)
        if (p->name == "reg.out.w" || p->name == "reg.out.b")
            std::fill(p->value.data.begin(), p->value.data.end(), 0.0);

    Rng drng = seeded_rng(6);
    Tensor img = random_image(1, 16, drng);
    std::vector<std::vector<int>> caps{{vocab.id("red"), vocab.id("bird")}};

    ad::Tape t;
    ad::Var loss = reg.teacher_forcing_loss(t, t.constant(img), {BoxSpec{4, 4, 8, 8}}, caps, false);
    CHECK(loss.val().item() == doctest::Approx(std::log(static_cast<double>(vocab.size()))));
}

TEST_CASE("teacher forcing loss is positive for an imperfect decoder") {
    Rng rng = seeded_rng(7);
    Vocabulary vocab = toy_vocab();
    RegModel reg(tiny_cfg(), vocab, rng);
    Rng drng = seeded_rng(8);
    Tensor img = random_image(2, 16, drng);
    std::vector<std::vector<int>> caps{{vocab.id("red")}, {vocab.id("blue"), vocab.id("circle")}};

    ad::Tape t;
    ad::Var loss = reg.teacher_forcing_loss(t, t.constant(img),
                                            {BoxSpec{0, 0, 16, 16}, BoxSpec{4, 4, 8, 8}}, caps, false);
    CHECK(loss.val().item() > 0.0);

    // captions longer than max_len are rejected
    std::vector<std::vector<int>> toolong{std::vector<int>(20, vocab.id("red")),
                                          std::vector<int>{vocab.id("red")}};
    CHECK_THROWS(reg.teacher_forcing_loss(t, t.constant(img),
                                          {BoxSpec{0, 0, 16, 16}, BoxSpec{4, 4, 8, 8}}, toolong,
                                          false));
}

TEST_CASE("greedy generation: zero max_len yields the empty caption, runs deterministic") {
    Rng rng = seeded_rng(9);
    RegModel reg(tiny_cfg(), toy_vocab(), rng);
    Rng drng = seeded_rng(10);
    Tensor img({3, 16, 16});
    for (double& v : img.data) v = drng.uniform(-1.0, 1.0);

    CHECK(reg.generate(img, BoxSpec{4, 4, 8, 8}, 0).empty());
    auto a = reg.generate(img, BoxSpec{4, 4, 8, 8}, 6);
    auto b = reg.generate(img, BoxSpec{4, 4, 8, 8}, 6);
    CHECK(a == b);
    CHECK(a.size() <= 6);
}

TEST_CASE("context loss gradient w.r.t. the input image is nonzero and correct") {
    Rng rng = seeded_rng(11);
    RegConfig cfg = tiny_cfg();
    Vocabulary vocab = toy_vocab();
    RegModel reg(cfg, vocab, rng);
    Rng drng = seeded_rng(12);
    Tensor img0({1, 3, 16, 16});
    for (double& v : img0.data) v = drng.uniform(-0.9, 0.9);
    std::vector<std::vector<int>> caps{{vocab.id("red"), vocab.id("bird")}};
    std::vector<BoxSpec> boxes{BoxSpec{4, 4, 8, 8}};

    ad::Tape t;
    ad::Var img = t.leaf(img0, true);
    ad::Var loss = reg.teacher_forcing_loss(t, img, boxes, caps, false);
    t.backward(loss);
    const Tensor& g = t.grad_of(img);
    double norm = 0.0;
    for (double v : g.data) norm += v * v;
    CHECK(norm > 0.0);

    // spot-check 24 random coordinates against central differences
    auto f = [&](const std::vector<double>& xs) {
        ad::Tape tp;
        ad::Var im = tp.leaf(Tensor(img0.shape, xs), true);
        return reg.teacher_forcing_loss(tp, im, boxes, caps, false).val().item();
    };
    Rng pick = seeded_rng(13);
    for (int k = 0; k < 24; ++k) {
        std::size_t i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(img0.data.size()) - 1));
        std::vector<double> xs = img0.data;
        double h = 1e-5;
        xs[i] = img0.data[i] + h;
        double fp = f(xs);
        xs[i] = img0.data[i] - h;
        double fm = f(xs);
        double num = (fp - fm) / (2.0 * h);
        CHECK(std::fabs(g.data[i] - num) < 1e-4 * std::max(1.0, std::fabs(num)));
    }
}
