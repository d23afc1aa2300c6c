#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "lsic/metrics.hpp"
#include "verify/verify.hpp"

using namespace lsic;
namespace m = lsic::metrics;

namespace {

m::Sentence words(std::initializer_list<const char*> ws) {
    m::Sentence s;
    for (const char* w : ws) s.emplace_back(w);
    return s;
}

// 20-pair fixture used to pin the caption metrics against the reference
struct Fixture {
    std::vector<m::Sentence> candidates;
    std::vector<std::vector<m::Sentence>> references;
};

Fixture fixture_corpus() {
    Fixture f;
    Rng rng = seeded_rng(2024);
    std::vector<std::string> vocab{"a",     "the",   "red",    "blue",  "green", "bird",
                                   "circle", "square", "flies",  "sits",  "on",    "over",
                                   "small", "big",   "bright", "field", "sky",   "tree"};
    for (int i = 0; i < 20; ++i) {
        int len = rng.uniform_int(3, 9);
        m::Sentence cand;
        for (int k = 0; k < len; ++k)
            cand.push_back(vocab[static_cast<std::size_t>(rng.uniform_int(0, 17))]);
        std::vector<m::Sentence> refs;
        int nref = rng.uniform_int(1, 3);
        for (int r = 0; r < nref; ++r) {
            int rl = rng.uniform_int(3, 9);
            m::Sentence ref;
            // bias references toward the candidate so overlaps actually occur
            for (int k = 0; k < rl; ++k) {
                if (k < len && rng.uniform() < 0.6)
                    ref.push_back(cand[static_cast<std::size_t>(k)]);
                else
                    ref.push_back(vocab[static_cast<std::size_t>(rng.uniform_int(0, 17))]);
            }
            refs.push_back(ref);
        }
        f.candidates.push_back(cand);
        f.references.push_back(refs);
    }
    return f;
}

} // namespace

TEST_CASE("psnr: zero error caps at 100dB, max-range error is 0dB") {
    Tensor a = Tensor::zeros({3, 4, 4});
    Tensor b = Tensor::full({3, 4, 4}, 255.0);
    CHECK(m::psnr(a, a, 255.0) == 100.0);
    CHECK(m::psnr(a, b, 255.0) == doctest::Approx(0.0));

    // 8-bit images with MSE 64: 10*log10(255^2/64) ~ 30.07 dB
    Tensor c = Tensor::full({3, 4, 4}, 8.0);
    CHECK(m::psnr(a, c, 255.0) == doctest::Approx(10.0 * std::log10(255.0 * 255.0 / 64.0)));
    CHECK(m::psnr(c, a, 255.0) == m::psnr(a, c, 255.0)); // symmetry
}

TEST_CASE("tv: constant image is 0; unit ramp has mean diff 1") {
    CHECK(m::tv_loss(Tensor::full({3, 5, 5}, 0.7)) == 0.0);

    Tensor ramp({3, 1, 4});
    for (int c = 0; c < 3; ++c)
        for (int x = 0; x < 4; ++x) ramp.data[static_cast<std::size_t>(c) * 4 + x] = x;
    CHECK(m::tv_mean(ramp) == doctest::Approx(1.0));
    CHECK(m::tv_loss(ramp) == doctest::Approx(100.0));
}

TEST_CASE("tv: checkerboard maximizes over all binary 2x2 patterns") {
    auto tv_of_bits = [](int bits) {
        Tensor img({1, 2, 2});
        for (int i = 0; i < 4; ++i) img.data[static_cast<std::size_t>(i)] = (bits >> i) & 1;
        return m::tv_mean(img);
    };
    // checkerboard = bits 0b0110 or 0b1001
    double checker = tv_of_bits(0b0110);
    CHECK(checker == doctest::Approx(1.0));
    for (int bits = 0; bits < 16; ++bits) CHECK(tv_of_bits(bits) <= checker + 1e-12);
}

TEST_CASE("tv is invariant under periodic shifts of a periodic image") {
    // period-2 stripes on an even grid
    Tensor img({1, 4, 4}), shifted({1, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            img.data[static_cast<std::size_t>(y) * 4 + x] = (x % 2 == 0) ? 1.0 : 0.0;
            shifted.data[static_cast<std::size_t>(y) * 4 + x] = ((x + 1) % 2 == 0) ? 1.0 : 0.0;
        }
    CHECK(m::tv_mean(img) == doctest::Approx(m::tv_mean(shifted)));
}

TEST_CASE("ssim: identity, negation, and noise continuity") {
    Rng rng = seeded_rng(5);
    Tensor a({3, 16, 16});
    for (double& v : a.data) v = rng.uniform(-0.9, 0.9);
    CHECK(m::ssim(a, a) == doctest::Approx(1.0));
    CHECK(m::ssim(a, a) == m::ssim(a, a));

    // negating a strong zero-mean pattern flips the covariance sign
    Tensor neg = a;
    for (double& v : neg.data) v = -v;
    CHECK(m::ssim(a, neg) < 0.0);

    double prev = -2.0;
    for (double eps : {0.3, 0.1, 0.02}) {
        Tensor noisy = a;
        Rng nr = seeded_rng(6);
        for (double& v : noisy.data) v = std::clamp(v + eps * nr.normal(), -1.0, 1.0);
        double s = m::ssim(a, noisy);
        CHECK(s < 1.0);
        CHECK(s > prev);
        prev = s;
    }

    CHECK_THROWS(m::ssim(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8})));
}

TEST_CASE("inception score: uniform posteriors give 1, distinct one-hots give K") {
    std::vector<std::vector<double>> uniform(12, std::vector<double>(5, 0.2));
    auto [mu, su] = m::inception_score(uniform, 3);
    CHECK(mu == doctest::Approx(1.0));
    CHECK(su == doctest::Approx(0.0));

    // 10 images over 5 classes, each split of 5 holds every class once
    std::vector<std::vector<double>> onehot;
    for (int i = 0; i < 10; ++i) {
        std::vector<double> p(5, 0.0);
        p[static_cast<std::size_t>(i % 5)] = 1.0;
        onehot.push_back(p);
    }
    auto [mk, sk] = m::inception_score(onehot, 2);
    CHECK(mk == doctest::Approx(5.0));
    CHECK(sk == doctest::Approx(0.0));

    // fewer images than splits reduces the split count instead of failing
    auto [ms, ss] = m::inception_score(uniform, 50);
    CHECK(ms == doctest::Approx(1.0));
}

TEST_CASE("bleu basics") {
    m::Sentence cand = words({"a", "red", "bird", "sits"});
    CHECK(m::bleu(cand, {cand}) == doctest::Approx(1.0));
    CHECK(m::bleu(cand, {words({"green", "circle", "flies"})}) == doctest::Approx(0.0));
    CHECK_THROWS(m::bleu({}, {cand}));

    // short sentences skip the impossible n-gram orders
    m::Sentence two = words({"red", "bird"});
    CHECK(m::bleu(two, {two}) == doctest::Approx(1.0));
}

TEST_CASE("rouge_l basics and the a-b-c vs a-x-c case") {
    m::Sentence cand = words({"a", "b", "c"});
    CHECK(m::rouge_l(cand, {cand}) == doctest::Approx(1.0));
    CHECK(m::rouge_l(cand, {words({"x", "y", "z"})}) == doctest::Approx(0.0));
    // LCS 2 of 3: P = R = 2/3 and the F-measure collapses to 2/3
    CHECK(m::rouge_l(cand, {words({"a", "x", "c"})}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("cider: identical pairs on a varied corpus reach the x10 maximum") {
    std::vector<m::Sentence> cands{words({"a", "red", "bird", "sits"}),
                                   words({"the", "blue", "circle", "flies"}),
                                   words({"a", "green", "square", "rests"})};
    std::vector<std::vector<m::Sentence>> refs{{cands[0]}, {cands[1]}, {cands[2]}};
    CHECK(m::cider(cands, refs) == doctest::Approx(10.0));
    CHECK(verify::cider_reference(cands, refs) == doctest::Approx(10.0));

    // disjoint vocabulary scores zero
    std::vector<m::Sentence> off{words({"x", "y", "z", "w"}), words({"p", "q", "r", "s"}),
                                 words({"m", "n", "o", "k"})};
    CHECK(m::cider(off, refs) == doctest::Approx(0.0));

    // single-document corpora degenerate to zero with a warning
    CHECK(m::cider({cands[0]}, {{cands[0]}}) == doctest::Approx(0.0));
}

TEST_CASE("meteor_lite: identical, disjoint and scrambled candidates") {
    m::Sentence cand = words({"a", "small", "red", "bird", "sits"});
    double mm = 5.0;
    CHECK(m::meteor_lite(cand, {cand}) ==
          doctest::Approx(1.0 - 0.5 * std::pow(1.0 / mm, 3.0)));
    CHECK(m::meteor_lite(cand, {words({"x", "y"})}) == doctest::Approx(0.0));

    m::Sentence scrambled = words({"sits", "red", "a", "bird", "small"});
    double s = m::meteor_lite(scrambled, {cand});
    CHECK(s < m::meteor_lite(cand, {cand}));
    CHECK(s > 0.0);
}

TEST_CASE("caption metrics agree with the independent reference on 20 pairs") {
    Fixture f = fixture_corpus();
    CHECK(std::fabs(m::corpus_bleu(f.candidates, f.references) -
                    verify::bleu_reference(f.candidates, f.references)) < 1e-6);
    CHECK(std::fabs(m::cider(f.candidates, f.references) -
                    verify::cider_reference(f.candidates, f.references)) < 1e-6);
    for (std::size_t i = 0; i < f.candidates.size(); ++i) {
        CHECK(std::fabs(m::rouge_l(f.candidates[i], f.references[i]) -
                        verify::rouge_l_reference(f.candidates[i], f.references[i])) < 1e-6);
        CHECK(std::fabs(m::meteor_lite(f.candidates[i], f.references[i]) -
                        verify::meteor_lite_reference(f.candidates[i], f.references[i])) < 1e-6);
        CHECK(std::fabs(m::bleu(f.candidates[i], f.references[i]) -
                        verify::bleu_reference({f.candidates[i]}, {f.references[i]})) < 1e-6);
    }
}

TEST_CASE("metric report aggregates are recomputable and serialize") {
    m::MetricReport r;
    r.metadata["mask"] = "center:0.5";
    r.add("psnr", 10.0);
    r.add("psnr", 20.0);
    r.add("psnr", 30.0);
    r.scalars["is_mean"] = 2.5;
    CHECK(r.mean("psnr") == doctest::Approx(20.0));
    CHECK(r.stddev("psnr") == doctest::Approx(std::sqrt(200.0 / 3.0)));
    CHECK(r.to_json().find("per_image") != std::string::npos);
    CHECK(r.to_table().find("psnr") != std::string::npos);

    r.save("report_test.json", "report_test.txt");
    std::remove("report_test.json");
    std::remove("report_test.txt");
}

TEST_CASE("proxy classifier learns a separable toy problem") {
    Rng rng = seeded_rng(31);
    m::ProxyClassifier clf(16, {"dark", "bright"}, rng);
    std::vector<Tensor> images;
    std::vector<int> labels;
    Rng drng = seeded_rng(32);
    for (int i = 0; i < 60; ++i) {
        int label = i % 2;
        Tensor img({3, 16, 16});
        for (double& v : img.data)
            v = (label == 0 ? -0.6 : 0.6) + 0.1 * drng.normal();
        images.push_back(img);
        labels.push_back(label);
    }
    clf.train(images, labels, 4, 8, 3e-3, drng);
    CHECK(clf.accuracy(images, labels) > 0.9);
}
