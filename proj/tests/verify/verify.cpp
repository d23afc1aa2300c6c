#include "verify/verify.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace lsic::verify {

Tensor gcn_oracle(const Tensor& node_features, const Tensor& adjacency, const Tensor& theta) {
    int n = adjacency.dim(0);
    int din = node_features.dim(1);
    int dout = theta.dim(1);
    if (adjacency.dim(1) != n || node_features.dim(0) != n || theta.dim(0) != din)
        throw std::invalid_argument("gcn_oracle: dimension mismatch");

    // D_uu = sum_v A_uv
    std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) deg[static_cast<std::size_t>(i)] += adjacency.at2(i, j);

    // A_hat = D^{-1/2} A D^{-1/2}, written out entry by entry
    Tensor ahat({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            ahat.at2(i, j) = adjacency.at2(i, j) /
                             (std::sqrt(deg[static_cast<std::size_t>(i)]) *
                              std::sqrt(deg[static_cast<std::size_t>(j)]));

    // A_hat * V
    Tensor av({n, din});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < din; ++j) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) s += ahat.at2(i, k) * node_features.at2(k, j);
            av.at2(i, j) = s;
        }

    // (A_hat V) * Theta
    Tensor out({n, dout});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dout; ++j) {
            double s = 0.0;
            for (int k = 0; k < din; ++k) s += av.at2(i, k) * theta.at2(k, j);
            out.at2(i, j) = s;
        }
    return out;
}

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double orig = x[i];
        x[i] = orig + h;
        double fp = f(x);
        x[i] = orig - h;
        double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double svd_sigma_max(const Tensor& w) {
    if (w.rank() < 2) throw std::invalid_argument("svd_sigma_max: need >= 2 dims");
    long rows = w.dim(0);
    long cols = w.size() / rows;
    Eigen::MatrixXd m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = w.data[static_cast<std::size_t>(i * cols + j)];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor) {
    if (a.size() != b.size()) throw std::invalid_argument("max_rel_err: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = std::max(std::fabs(b[i]), floor);
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// caption metric references
// ---------------------------------------------------------------------------

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const Sentence& s, int n) {
    std::map<Ngram, int> c;
    for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
        Ngram g(s.begin() + i, s.begin() + i + n);
        c[g] += 1;
    }
    return c;
}

int lcs_len(const Sentence& a, const Sentence& b) {
    std::vector<std::vector<int>> dp(a.size() + 1, std::vector<int>(b.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i)
        for (std::size_t j = 1; j <= b.size(); ++j)
            dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                            : std::max(dp[i - 1][j], dp[i][j - 1]);
    return dp[a.size()][b.size()];
}

} // namespace

double bleu_reference(const std::vector<Sentence>& candidates,
                      const std::vector<std::vector<Sentence>>& references, int max_n) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("bleu_reference: candidate/reference count mismatch");

    long cand_total = 0, ref_total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        long clen = static_cast<long>(candidates[i].size());
        cand_total += clen;
        // closest reference length; ties resolved to the shorter one
        long best = -1;
        for (const auto& r : references[i]) {
            long rl = static_cast<long>(r.size());
            if (best < 0 || std::llabs(rl - clen) < std::llabs(best - clen) ||
                (std::llabs(rl - clen) == std::llabs(best - clen) && rl < best))
                best = rl;
        }
        ref_total += best;
    }

    double log_sum = 0.0;
    int used = 0;
    for (int n = 1; n <= max_n; ++n) {
        long num = 0, den = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            auto cc = ngram_counts(candidates[i], n);
            std::map<Ngram, int> best;
            for (const auto& r : references[i]) {
                auto rc = ngram_counts(r, n);
                for (const auto& [g, c] : rc) best[g] = std::max(best[g], c);
            }
            for (const auto& [g, c] : cc) {
                den += c;
                auto it = best.find(g);
                num += std::min(c, it == best.end() ? 0 : it->second);
            }
        }
        if (den == 0) continue; // no candidate n-grams of this order at all
        if (num == 0) return 0.0;
        log_sum += std::log(static_cast<double>(num) / static_cast<double>(den));
        ++used;
    }
    if (used == 0 || cand_total == 0) return 0.0;
    double bp = cand_total >= ref_total
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_total) / static_cast<double>(cand_total));
    return bp * std::exp(log_sum / used);
}

double rouge_l_reference(const Sentence& candidate, const std::vector<Sentence>& references) {
    const double beta = 1.2;
    double best = 0.0;
    for (const auto& ref : references) {
        if (candidate.empty() || ref.empty()) continue;
        double l = lcs_len(candidate, ref);
        double p = l / static_cast<double>(candidate.size());
        double r = l / static_cast<double>(ref.size());
        if (p <= 0.0 || r <= 0.0) continue;
        double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
        best = std::max(best, f);
    }
    return best;
}

double cider_reference(const std::vector<Sentence>& candidates,
                       const std::vector<std::vector<Sentence>>& references) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("cider_reference: candidate/reference count mismatch");
    std::size_t n_docs = candidates.size();
    if (n_docs == 0) return 0.0;

    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
        // document frequency over reference sets
        std::map<Ngram, int> df;
        for (const auto& refs : references) {
            std::map<Ngram, int> seen;
            for (const auto& r : refs)
                for (auto& [g, c] : ngram_counts(r, n)) seen[g] = 1;
            for (const auto& [g, c] : seen) df[g] += 1;
        }
        auto tfidf = [&](const Sentence& s) {
            std::map<Ngram, double> v;
            auto counts = ngram_counts(s, n);
            double tot = 0.0;
            for (const auto& [g, c] : counts) tot += c;
            if (tot == 0.0) return v;
            for (const auto& [g, c] : counts) {
                auto it = df.find(g);
                double d = it == df.end() ? 0.0 : it->second;
                double idf = std::log(static_cast<double>(n_docs) / std::max(1.0, d));
                v[g] = (c / tot) * idf;
            }
            return v;
        };
        auto cosine = [](const std::map<Ngram, double>& a, const std::map<Ngram, double>& b) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (const auto& [g, x] : a) {
                na += x * x;
                auto it = b.find(g);
                if (it != b.end()) dot += x * it->second;
            }
            for (const auto& [g, x] : b) nb += x * x;
            if (na <= 0.0 || nb <= 0.0) return 0.0;
            return dot / (std::sqrt(na) * std::sqrt(nb));
        };

        double level = 0.0;
        for (std::size_t i = 0; i < n_docs; ++i) {
            auto cv = tfidf(candidates[i]);
            double s = 0.0;
            for (const auto& r : references[i]) s += cosine(cv, tfidf(r));
            level += s / static_cast<double>(references[i].size());
        }
        total += level / static_cast<double>(n_docs);
    }
    return 10.0 * total / 4.0;
}

double meteor_lite_reference(const Sentence& candidate, const std::vector<Sentence>& references) {
    double best = 0.0;
    for (const auto& ref : references) {
        if (candidate.empty() || ref.empty()) continue;
        // earliest-unused exact alignment, scanning the candidate left to right
        std::vector<int> map_to_ref(candidate.size(), -1);
        std::vector<char> used(ref.size(), 0);
        int m = 0;
        for (std::size_t i = 0; i < candidate.size(); ++i)
            for (std::size_t j = 0; j < ref.size(); ++j)
                if (!used[j] && candidate[i] == ref[j]) {
                    used[j] = 1;
                    map_to_ref[i] = static_cast<int>(j);
                    ++m;
                    break;
                }
        if (m == 0) continue;
        double p = static_cast<double>(m) / static_cast<double>(candidate.size());
        double r = static_cast<double>(m) / static_cast<double>(ref.size());
        double fmean = 10.0 * p * r / (r + 9.0 * p);
        // chunks: maximal runs contiguous on both sides
        int chunks = 0;
        int prev_i = -10, prev_j = -10;
        for (std::size_t i = 0; i < candidate.size(); ++i) {
            if (map_to_ref[i] < 0) continue;
            if (!(static_cast<int>(i) == prev_i + 1 && map_to_ref[i] == prev_j + 1)) ++chunks;
            prev_i = static_cast<int>(i);
            prev_j = map_to_ref[i];
        }
        double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
        best = std::max(best, fmean * (1.0 - penalty));
    }
    return best;
}

} // namespace lsic::verify
