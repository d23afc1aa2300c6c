#include "lsic/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>

namespace lsic::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor orthogonal_init(const std::vector<int>& shape, Rng& rng, double gain) {
    if (shape.size() < 2) throw std::invalid_argument("orthogonal_init: need >= 2 dims");
    long rows = shape[0];
    long cols = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) cols *= shape[i];

    // QR of a Gaussian matrix; orthogonalize the smaller side
    long r = std::max(rows, cols), c = std::min(rows, cols);
    RowMat a(r, c);
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) a(i, j) = rng.normal();
    Eigen::HouseholderQR<RowMat> qr(a);
    RowMat q = qr.householderQ() * RowMat::Identity(r, c);
    RowMat rm = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
    for (long j = 0; j < c; ++j)
        if (rm(j, j) < 0.0) q.col(j) = -q.col(j);

    Tensor out(shape);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) {
            double v = rows >= cols ? q(i, j) : q(j, i);
            out.data[static_cast<std::size_t>(i * cols + j)] = gain * v;
        }
    return out;
}

namespace {

void l2_normalize(Tensor& t) {
    double n = 0.0;
    for (double v : t.data) n += v * v;
    n = std::sqrt(std::max(n, 1e-24));
    for (double& v : t.data) v /= n;
}

void ensure_sn_vectors(const Tensor& w, SpectralState& st) {
    long rows = w.dim(0);
    long cols = w.size() / rows;
    if (st.initialized && st.u.size() == rows && st.v.size() == cols) return;
    // deterministic start: seeded from the weight's own content so restored
    // checkpoints without vectors still converge to the same estimates
    Rng r = seeded_rng(0x5eedu ^ static_cast<std::uint64_t>(rows * 131 + cols));
    st.u = Tensor({static_cast<int>(rows)});
    st.v = Tensor({static_cast<int>(cols)});
    for (auto& x : st.u.data) x = r.normal();
    for (auto& x : st.v.data) x = r.normal();
    l2_normalize(st.u);
    l2_normalize(st.v);
    st.initialized = true;
}

} // namespace

double power_iterate(const Tensor& w, SpectralState& st) {
    ensure_sn_vectors(w, st);
    long rows = w.dim(0);
    long cols = w.size() / rows;
    Eigen::Map<const RowMat> wm(w.data.data(), rows, cols);
    Eigen::Map<Eigen::VectorXd> u(st.u.data.data(), rows);
    Eigen::Map<Eigen::VectorXd> v(st.v.data.data(), cols);
    v = wm.transpose() * u;
    double vn = std::max(v.norm(), 1e-24);
    v /= vn;
    u = wm * v;
    double un = std::max(u.norm(), 1e-24);
    u /= un;
    return u.dot(wm * v);
}

double spectral_sigma(const Tensor& w, const SpectralState& st) {
    if (!st.initialized) throw std::logic_error("spectral_sigma: state not initialized");
    long rows = w.dim(0);
    long cols = w.size() / rows;
    Eigen::Map<const RowMat> wm(w.data.data(), rows, cols);
    Eigen::Map<const Eigen::VectorXd> u(st.u.data.data(), rows);
    Eigen::Map<const Eigen::VectorXd> v(st.v.data.data(), cols);
    return u.dot(wm * v);
}

Tensor spectral_normalize(const Tensor& w, SpectralState& st, int extra_iterations) {
    double sigma = power_iterate(w, st);
    for (int i = 0; i < extra_iterations; ++i) sigma = power_iterate(w, st);
    if (std::fabs(sigma) < 1e-12) sigma = 1e-12;
    Tensor out = w;
    for (double& v : out.data) v /= sigma;
    return out;
}

// ---------------------------------------------------------------------------

Dense::Dense(const std::string& name, int din, int dout, Rng& rng, LayerOptions opt)
    : w_(name + ".w", orthogonal_init({dout, din}, rng, opt.init_gain)),
      b_(name + ".b", Tensor::zeros({dout})),
      opt_(opt) {}

ad::Var Dense::normalized_weight(ad::Tape& t, bool training) {
    ad::Var w = t.param(w_);
    if (!opt_.spectral_norm) return w;
    if (training || !sn_.initialized) power_iterate(w_.value, sn_);
    return ad::spectral_scale(w, sn_.u, sn_.v);
}

ad::Var Dense::forward(ad::Tape& t, const ad::Var& x, bool training) {
    return ad::linear(x, normalized_weight(t, training), t.param(b_));
}

void Dense::collect(std::vector<ad::Parameter*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

void Dense::collect_sn(std::vector<SnEntry>& out) {
    if (opt_.spectral_norm) out.emplace_back(w_.name, &sn_);
}

Conv2d::Conv2d(const std::string& name, int cin, int cout, int k, int stride, int pad, Rng& rng,
               LayerOptions opt)
    : w_(name + ".w", orthogonal_init({cout, cin, k, k}, rng, opt.init_gain)),
      b_(name + ".b", Tensor::zeros({cout})),
      opt_(opt),
      stride_(stride),
      pad_(pad) {}

ad::Var Conv2d::forward(ad::Tape& t, const ad::Var& x, bool training) {
    ad::Var w = t.param(w_);
    if (opt_.spectral_norm) {
        if (training || !sn_.initialized) power_iterate(w_.value, sn_);
        w = ad::spectral_scale(w, sn_.u, sn_.v);
    }
    return ad::conv2d(x, w, t.param(b_), stride_, pad_);
}

void Conv2d::collect(std::vector<ad::Parameter*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

void Conv2d::collect_sn(std::vector<SnEntry>& out) {
    if (opt_.spectral_norm) out.emplace_back(w_.name, &sn_);
}

ResBlock::ResBlock(const std::string& name, int cin, int cout, int stride, Rng& rng, LayerOptions opt)
    : conv1_(name + ".conv1", cin, cout, 3, stride, 1, rng, opt),
      conv2_(name + ".conv2", cout, cout, 3, 1, 1, rng, opt),
      projected_(cin != cout || stride != 1) {
    if (projected_) skip_ = Conv2d(name + ".skip", cin, cout, 1, stride, 0, rng, opt);
}

ad::Var ResBlock::forward(ad::Tape& t, const ad::Var& x, bool training) {
    ad::Var h = ad::leaky_relu(x, kLeakySlope);
    h = conv1_.forward(t, h, training);
    h = ad::leaky_relu(h, kLeakySlope);
    h = conv2_.forward(t, h, training);
    ad::Var s = projected_ ? skip_.forward(t, x, training) : x;
    return ad::add(h, s);
}

void ResBlock::collect(std::vector<ad::Parameter*>& out) {
    conv1_.collect(out);
    conv2_.collect(out);
    if (projected_) skip_.collect(out);
}

void ResBlock::collect_sn(std::vector<SnEntry>& out) {
    conv1_.collect_sn(out);
    conv2_.collect_sn(out);
    if (projected_) skip_.collect_sn(out);
}

void Adam::step(const std::vector<ad::Parameter*>& params) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (ad::Parameter* p : params) {
        if (p->m.size() == 0) {
            p->m = Tensor::zeros(p->value.shape);
            p->v = Tensor::zeros(p->value.shape);
        }
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            double g = p->grad.data[i];
            p->m.data[i] = cfg_.beta1 * p->m.data[i] + (1.0 - cfg_.beta1) * g;
            p->v.data[i] = cfg_.beta2 * p->v.data[i] + (1.0 - cfg_.beta2) * g * g;
            double mhat = p->m.data[i] / bc1;
            double vhat = p->v.data[i] / bc2;
            p->value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

std::uint64_t param_hash(const std::vector<ad::Parameter*>& params) {
    std::uint64_t h = 14695981039346656037ULL;
    for (const ad::Parameter* p : params) {
        for (double d : p->value.data) {
            std::uint64_t bits = 0;
            std::memcpy(&bits, &d, sizeof(bits));
            for (int k = 0; k < 8; ++k) {
                h ^= (bits >> (8 * k)) & 0xffu;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

} // namespace lsic::nn
