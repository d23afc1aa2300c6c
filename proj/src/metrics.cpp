#include "lsic/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include "lsic/autodiff.hpp"

namespace lsic::metrics {

using nlohmann::json;

double psnr(const Tensor& a, const Tensor& b, double max_value) {
    check_shape(a.same_shape(b), "psnr shapes");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(max_value * max_value / mse));
}

double psnr_masked(const Tensor& a, const Tensor& b, const Tensor& mask, double max_value) {
    check_shape(a.same_shape(b) && a.rank() == 3 && mask.rank() == 2 && a.dim(1) == mask.dim(0) &&
                    a.dim(2) == mask.dim(1),
                "psnr_masked shapes");
    std::size_t plane = static_cast<std::size_t>(mask.size());
    double mse = 0.0;
    long n = 0;
    for (int c = 0; c < a.dim(0); ++c)
        for (std::size_t i = 0; i < plane; ++i)
            if (mask.data[i] > 0.5) {
                double d = a.data[static_cast<std::size_t>(c) * plane + i] -
                           b.data[static_cast<std::size_t>(c) * plane + i];
                mse += d * d;
                ++n;
            }
    if (n == 0) throw std::invalid_argument("psnr_masked: empty mask");
    mse /= static_cast<double>(n);
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(max_value * max_value / mse));
}

double l1_masked(const Tensor& a, const Tensor& b, const Tensor& mask) {
    check_shape(a.same_shape(b) && a.rank() == 3 && mask.rank() == 2, "l1_masked shapes");
    std::size_t plane = static_cast<std::size_t>(mask.size());
    double acc = 0.0;
    long n = 0;
    for (int c = 0; c < a.dim(0); ++c)
        for (std::size_t i = 0; i < plane; ++i)
            if (mask.data[i] > 0.5) {
                acc += std::fabs(a.data[static_cast<std::size_t>(c) * plane + i] -
                                 b.data[static_cast<std::size_t>(c) * plane + i]);
                ++n;
            }
    if (n == 0) throw std::invalid_argument("l1_masked: empty mask");
    return acc / static_cast<double>(n);
}

double tv_mean(const Tensor& image) {
    check_shape(image.rank() == 3, "tv expects (C,H,W)");
    int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    double acc = 0.0;
    long terms = 0;
    for (int ch = 0; ch < c; ++ch) {
        const double* p = image.data.data() + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x + 1 < w; ++x) {
                acc += std::fabs(p[y * w + x + 1] - p[y * w + x]);
                ++terms;
            }
        for (int y = 0; y + 1 < h; ++y)
            for (int x = 0; x < w; ++x) {
                acc += std::fabs(p[(y + 1) * w + x] - p[y * w + x]);
                ++terms;
            }
    }
    return terms == 0 ? 0.0 : acc / static_cast<double>(terms);
}

double tv_loss(const Tensor& image) { return 100.0 * tv_mean(image); }

namespace {

// luma in [0,1] from a [-1,1] RGB tensor
std::vector<double> to_luma(const Tensor& img) {
    int h = img.dim(1), w = img.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> out(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        double r = (img.data[i] + 1.0) / 2.0;
        double g = (img.data[plane + i] + 1.0) / 2.0;
        double b = (img.data[2 * plane + i] + 1.0) / 2.0;
        out[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    }
    return out;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b) {
    check_shape(a.same_shape(b) && a.rank() == 3 && a.dim(0) == 3, "ssim expects (3,H,W) pairs");
    constexpr int win = 11;
    const double sigma = 1.5;
    int h = a.dim(1), w = a.dim(2);
    if (h < win || w < win) throw std::invalid_argument("ssim: image smaller than 11x11 window");

    std::vector<double> kernel(win * win);
    double ksum = 0.0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            double dy = y - win / 2, dx = x - win / 2;
            kernel[static_cast<std::size_t>(y * win + x)] =
                std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            ksum += kernel[static_cast<std::size_t>(y * win + x)];
        }
    for (double& k : kernel) k /= ksum;

    std::vector<double> xa = to_luma(a), xb = to_luma(b);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03; // dynamic range 1

    double total = 0.0;
    long count = 0;
    for (int y = 0; y + win <= h; ++y)
        for (int x = 0; x + win <= w; ++x) {
            double ma = 0.0, mb = 0.0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double k = kernel[static_cast<std::size_t>(i * win + j)];
                    ma += k * xa[static_cast<std::size_t>((y + i) * w + x + j)];
                    mb += k * xb[static_cast<std::size_t>((y + i) * w + x + j)];
                }
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double k = kernel[static_cast<std::size_t>(i * win + j)];
                    double da = xa[static_cast<std::size_t>((y + i) * w + x + j)] - ma;
                    double db = xb[static_cast<std::size_t>((y + i) * w + x + j)] - mb;
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            ++count;
        }
    return total / static_cast<double>(count);
}

std::pair<double, double> inception_score(const std::vector<std::vector<double>>& probs,
                                          int splits) {
    if (probs.empty()) throw std::invalid_argument("inception_score: no samples");
    int n = static_cast<int>(probs.size());
    if (n < splits) {
        std::cerr << "inception_score: only " << n << " images; reducing splits from " << splits
                  << "\n";
        splits = n;
    }
    std::size_t k = probs.front().size();
    for (const auto& p : probs)
        if (p.size() != k) throw std::invalid_argument("inception_score: ragged probability rows");

    std::vector<double> scores;
    for (int s = 0; s < splits; ++s) {
        int lo = static_cast<int>(static_cast<long>(s) * n / splits);
        int hi = static_cast<int>(static_cast<long>(s + 1) * n / splits);
        if (hi <= lo) continue;
        std::vector<double> marginal(k, 0.0);
        for (int i = lo; i < hi; ++i)
            for (std::size_t j = 0; j < k; ++j) marginal[j] += probs[static_cast<std::size_t>(i)][j];
        for (double& m : marginal) m /= static_cast<double>(hi - lo);
        double kl_mean = 0.0;
        for (int i = lo; i < hi; ++i) {
            double kl = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                double p = probs[static_cast<std::size_t>(i)][j];
                if (p > 1e-12) kl += p * (std::log(p) - std::log(std::max(marginal[j], 1e-12)));
            }
            kl_mean += kl;
        }
        kl_mean /= static_cast<double>(hi - lo);
        scores.push_back(std::exp(kl_mean));
    }
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    double stddev = scores.size() > 1 ? std::sqrt(var / static_cast<double>(scores.size())) : 0.0;
    return {mean, stddev};
}

// ---------------------------------------------------------------------------
// caption metrics
// ---------------------------------------------------------------------------

namespace {

// n-grams as joined keys for hashing
std::unordered_map<std::string, int> ngrams(const Sentence& s, int n) {
    std::unordered_map<std::string, int> out;
    for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += s[static_cast<std::size_t>(i + j)];
        }
        out[key] += 1;
    }
    return out;
}

int lcs(const Sentence& a, const Sentence& b) {
    std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace

double corpus_bleu(const std::vector<Sentence>& candidates,
                   const std::vector<std::vector<Sentence>>& references, int max_n) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("corpus_bleu: candidate/reference count mismatch");
    if (candidates.empty()) return 0.0;

    long cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        long cl = static_cast<long>(candidates[i].size());
        cand_len += cl;
        long best = -1;
        for (const auto& r : references[i]) {
            long rl = static_cast<long>(r.size());
            if (best < 0 || std::llabs(rl - cl) < std::llabs(best - cl) ||
                (std::llabs(rl - cl) == std::llabs(best - cl) && rl < best))
                best = rl;
        }
        ref_len += std::max(best, 0l);
    }
    if (cand_len == 0) return 0.0;

    double log_sum = 0.0;
    int used = 0;
    for (int n = 1; n <= max_n; ++n) {
        long matched = 0, total = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            auto cc = ngrams(candidates[i], n);
            std::unordered_map<std::string, int> cap;
            for (const auto& r : references[i])
                for (auto& [g, c] : ngrams(r, n)) {
                    auto it = cap.find(g);
                    if (it == cap.end() || it->second < c) cap[g] = c;
                }
            for (const auto& [g, c] : cc) {
                total += c;
                auto it = cap.find(g);
                matched += std::min(c, it == cap.end() ? 0 : it->second);
            }
        }
        if (total == 0) continue; // order longer than every candidate
        if (matched == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
        ++used;
    }
    if (used == 0) return 0.0;
    double bp = cand_len >= ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return bp * std::exp(log_sum / used);
}

double bleu(const Sentence& candidate, const std::vector<Sentence>& references, int max_n) {
    if (candidate.empty()) throw std::invalid_argument("bleu: empty candidate");
    return corpus_bleu({candidate}, {references}, max_n);
}

double rouge_l(const Sentence& candidate, const std::vector<Sentence>& references) {
    const double beta = 1.2;
    double best = 0.0;
    for (const auto& ref : references) {
        if (candidate.empty() || ref.empty()) continue;
        double l = lcs(candidate, ref);
        if (l <= 0.0) continue;
        double p = l / static_cast<double>(candidate.size());
        double r = l / static_cast<double>(ref.size());
        double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
        best = std::max(best, f);
    }
    return best;
}

double cider(const std::vector<Sentence>& candidates,
             const std::vector<std::vector<Sentence>>& references) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("cider: candidate/reference count mismatch");
    std::size_t docs = candidates.size();
    if (docs == 0) return 0.0;
    if (docs == 1) {
        std::cerr << "cider: single-document corpus; IDF degenerates, returning 0\n";
        return 0.0;
    }

    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
        std::unordered_map<std::string, int> df;
        for (const auto& refs : references) {
            std::unordered_map<std::string, int> seen;
            for (const auto& r : refs)
                for (auto& [g, c] : ngrams(r, n)) seen[g] = 1;
            for (const auto& [g, c] : seen) df[g] += 1;
        }
        auto tfidf = [&](const Sentence& s) {
            std::unordered_map<std::string, double> v;
            auto counts = ngrams(s, n);
            double tot = 0.0;
            for (const auto& [g, c] : counts) tot += c;
            if (tot <= 0.0) return v;
            for (const auto& [g, c] : counts) {
                auto it = df.find(g);
                double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
                v[g] = (static_cast<double>(c) / tot) *
                       std::log(static_cast<double>(docs) / std::max(1.0, d));
            }
            return v;
        };
        auto cosine = [](const std::unordered_map<std::string, double>& x,
                         const std::unordered_map<std::string, double>& y) {
            double dot = 0.0, nx = 0.0, ny = 0.0;
            for (const auto& [g, v] : x) {
                nx += v * v;
                auto it = y.find(g);
                if (it != y.end()) dot += v * it->second;
            }
            for (const auto& [g, v] : y) ny += v * v;
            return (nx <= 0.0 || ny <= 0.0) ? 0.0 : dot / (std::sqrt(nx) * std::sqrt(ny));
        };

        double level = 0.0;
        for (std::size_t i = 0; i < docs; ++i) {
            auto cv = tfidf(candidates[i]);
            double acc = 0.0;
            for (const auto& r : references[i]) acc += cosine(cv, tfidf(r));
            level += acc / static_cast<double>(references[i].size());
        }
        total += level / static_cast<double>(docs);
    }
    return 10.0 * total / 4.0;
}

double meteor_lite(const Sentence& candidate, const std::vector<Sentence>& references) {
    double best = 0.0;
    for (const auto& ref : references) {
        if (candidate.empty() || ref.empty()) continue;
        // exact alignment: each candidate token takes the earliest unused
        // matching reference slot, scanning left to right
        std::vector<int> amap(candidate.size(), -1);
        std::vector<char> used(ref.size(), 0);
        int m = 0;
        for (std::size_t i = 0; i < candidate.size(); ++i)
            for (std::size_t j = 0; j < ref.size(); ++j)
                if (!used[j] && candidate[i] == ref[j]) {
                    used[j] = 1;
                    amap[i] = static_cast<int>(j);
                    ++m;
                    break;
                }
        if (m == 0) continue;
        double p = static_cast<double>(m) / static_cast<double>(candidate.size());
        double r = static_cast<double>(m) / static_cast<double>(ref.size());
        double fmean = 10.0 * p * r / (r + 9.0 * p);
        int chunks = 0, pi = -10, pj = -10;
        for (std::size_t i = 0; i < candidate.size(); ++i) {
            if (amap[i] < 0) continue;
            if (!(static_cast<int>(i) == pi + 1 && amap[i] == pj + 1)) ++chunks;
            pi = static_cast<int>(i);
            pj = amap[i];
        }
        double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
        best = std::max(best, fmean * (1.0 - penalty));
    }
    return best;
}

// ---------------------------------------------------------------------------

double MetricReport::mean(const std::string& metric) const {
    auto it = per_image.find(metric);
    if (it == per_image.end() || it->second.empty())
        throw std::invalid_argument("MetricReport: no values for " + metric);
    double s = 0.0;
    for (double v : it->second) s += v;
    return s / static_cast<double>(it->second.size());
}

double MetricReport::stddev(const std::string& metric) const {
    const auto& v = per_image.at(metric);
    double m = mean(metric);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return v.size() > 1 ? std::sqrt(acc / static_cast<double>(v.size())) : 0.0;
}

std::string MetricReport::to_json() const {
    json j;
    j["metadata"] = metadata;
    json agg;
    for (const auto& [k, v] : per_image) {
        agg[k] = {{"mean", mean(k)}, {"std", stddev(k)}, {"count", v.size()}};
    }
    for (const auto& [k, v] : scalars) agg[k] = v;
    j["aggregate"] = agg;
    json per;
    for (const auto& [k, v] : per_image) per[k] = v;
    j["per_image"] = per;
    return j.dump(2);
}

std::string MetricReport::to_table() const {
    std::ostringstream out;
    for (const auto& [k, v] : metadata) out << "# " << k << ": " << v << "\n";
    out << std::left;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-16s %12s %12s %8s\n", "metric", "mean", "std", "n");
    out << buf;
    for (const auto& [k, v] : per_image) {
        std::snprintf(buf, sizeof(buf), "%-16s %12.4f %12.4f %8zu\n", k.c_str(), mean(k), stddev(k),
                      v.size());
        out << buf;
    }
    for (const auto& [k, v] : scalars) {
        std::snprintf(buf, sizeof(buf), "%-16s %12.4f\n", k.c_str(), v);
        out << buf;
    }
    return out.str();
}

void MetricReport::save(const std::string& json_path, const std::string& table_path) const {
    std::ofstream j(json_path);
    if (!j) throw std::runtime_error("MetricReport: cannot write " + json_path);
    j << to_json() << "\n";
    std::ofstream t(table_path);
    if (!t) throw std::runtime_error("MetricReport: cannot write " + table_path);
    t << to_table();
}

// ---------------------------------------------------------------------------

ProxyClassifier::ProxyClassifier(int resolution, std::vector<std::string> class_names, Rng& rng)
    : classes_(std::move(class_names)) {
    (void)resolution;
    nn::LayerOptions opt;
    opt.spectral_norm = false;
    c1_ = nn::Conv2d("proxy.c1", 3, 16, 3, 2, 1, rng, opt);
    c2_ = nn::Conv2d("proxy.c2", 16, 32, 3, 2, 1, rng, opt);
    c3_ = nn::Conv2d("proxy.c3", 32, 48, 3, 2, 1, rng, opt);
    fc_ = nn::Dense("proxy.fc", 48, static_cast<int>(classes_.size()), rng, opt);
    c1_.collect(params_);
    c2_.collect(params_);
    c3_.collect(params_);
    fc_.collect(params_);
}

ad::Var ProxyClassifier::logits(ad::Tape& t, const ad::Var& images, bool training) {
    ad::Var h = ad::leaky_relu(c1_.forward(t, images, training), 0.2);
    h = ad::leaky_relu(c2_.forward(t, h, training), 0.2);
    h = ad::leaky_relu(c3_.forward(t, h, training), 0.2);
    return fc_.forward(t, ad::mean_spatial(h), training);
}

void ProxyClassifier::train(const std::vector<Tensor>& images, const std::vector<int>& labels,
                            int epochs, int batch_size, double lr, Rng& rng) {
    if (images.size() != labels.size() || images.empty())
        throw std::invalid_argument("proxy train: bad dataset");
    nn::AdamConfig ac;
    ac.lr = lr;
    ac.beta1 = 0.9;
    nn::Adam opt(ac);
    int res = images.front().dim(1);
    std::size_t img_sz = images.front().data.size();

    for (int e = 0; e < epochs; ++e) {
        std::vector<std::size_t> order(images.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
            std::size_t hi = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
            int b = static_cast<int>(hi - at);
            Tensor batch({b, 3, res, res});
            std::vector<int> targets;
            for (int i = 0; i < b; ++i) {
                std::copy_n(images[order[at + static_cast<std::size_t>(i)]].data.data(), img_sz,
                            batch.data.data() + static_cast<std::size_t>(i) * img_sz);
                targets.push_back(labels[order[at + static_cast<std::size_t>(i)]]);
            }
            ad::Tape t;
            for (ad::Parameter* p : params_) p->zero_grad();
            ad::Var loss = ad::cross_entropy_rows(logits(t, t.constant(batch), true), targets);
            t.backward(loss);
            opt.step(params_);
        }
    }
}

std::vector<double> ProxyClassifier::predict(const Tensor& image3) {
    Tensor batch({1, image3.dim(0), image3.dim(1), image3.dim(2)}, image3.data);
    ad::Tape t;
    ad::Var lg = logits(t, t.constant(batch), false);
    ad::Var sm = ad::softmax_rows(lg);
    return sm.val().data;
}

double ProxyClassifier::accuracy(const std::vector<Tensor>& images, const std::vector<int>& labels) {
    int correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto p = predict(images[i]);
        int best = 0;
        for (int j = 1; j < static_cast<int>(p.size()); ++j)
            if (p[static_cast<std::size_t>(j)] > p[static_cast<std::size_t>(best)]) best = j;
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(images.size());
}

} // namespace lsic::metrics
