#pragma once

#include <map>
#include <string>
#include <vector>

#include "lsic/nn.hpp"
#include "lsic/rng.hpp"
#include "lsic/tensor.hpp"

namespace lsic::metrics {

using Sentence = std::vector<std::string>;

// 10*log10(max_value^2 / MSE), capped at 100 dB for identical inputs.
double psnr(const Tensor& a, const Tensor& b, double max_value);

// PSNR restricted to mask==1 pixels (mask (H,W), images (3,H,W)).
double psnr_masked(const Tensor& a, const Tensor& b, const Tensor& mask, double max_value);

// mean absolute difference over mask==1 pixels
double l1_masked(const Tensor& a, const Tensor& b, const Tensor& mask);

// anisotropic total variation: mean of |horizontal diff| + |vertical diff|
// over all difference positions and channels; tv_loss reports 100x that.
double tv_mean(const Tensor& image);
double tv_loss(const Tensor& image);

// windowed SSIM on the luma channel: 11x11 Gaussian window, sigma 1.5,
// K1=0.01, K2=0.03, dynamic range 1 (images mapped from [-1,1] to [0,1]).
double ssim(const Tensor& a, const Tensor& b);

// exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std) across splits.
// probs: one class-posterior row per image. Reduces the split count with a
// stderr warning when there are fewer images than splits.
std::pair<double, double> inception_score(const std::vector<std::vector<double>>& probs,
                                          int splits = 10);

// ---- caption metrics ----
double bleu(const Sentence& candidate, const std::vector<Sentence>& references, int max_n = 4);
double corpus_bleu(const std::vector<Sentence>& candidates,
                   const std::vector<std::vector<Sentence>>& references, int max_n = 4);
double rouge_l(const Sentence& candidate, const std::vector<Sentence>& references);
// corpus-level, IDF from the reference corpus, x10 convention; returns 0 with
// a warning on single-document corpora (IDF degenerates).
double cider(const std::vector<Sentence>& candidates,
             const std::vector<std::vector<Sentence>>& references);
// exact-match unigram harmonic mean (recall weighted 9:1) with a 0.5*(ch/m)^3
// fragmentation penalty, max over references.
double meteor_lite(const Sentence& candidate, const std::vector<Sentence>& references);

// Per-image values plus aggregates; serializes to JSON and a plain table.
struct MetricReport {
    std::map<std::string, std::vector<double>> per_image;
    std::map<std::string, double> scalars;
    std::map<std::string, std::string> metadata;

    void add(const std::string& metric, double value) { per_image[metric].push_back(value); }
    double mean(const std::string& metric) const;
    double stddev(const std::string& metric) const;

    std::string to_json() const;
    std::string to_table() const;
    void save(const std::string& json_path, const std::string& table_path) const;
};

// Small convolutional classifier standing in for a fine-tuned inception
// model at desk scale. Maps (3,H,W) images to class posteriors.
class ProxyClassifier {
public:
    ProxyClassifier() = default;
    ProxyClassifier(int resolution, std::vector<std::string> class_names, Rng& rng);

    void train(const std::vector<Tensor>& images, const std::vector<int>& labels, int epochs,
               int batch_size, double lr, Rng& rng);
    std::vector<double> predict(const Tensor& image3);
    double accuracy(const std::vector<Tensor>& images, const std::vector<int>& labels);

    const std::vector<std::string>& classes() const { return classes_; }

private:
    ad::Var logits(ad::Tape& t, const ad::Var& images, bool training);
    std::vector<std::string> classes_;
    nn::Conv2d c1_, c2_, c3_;
    nn::Dense fc_;
    std::vector<ad::Parameter*> params_;
};

} // namespace lsic::metrics
