#pragma once

#include <string>
#include <vector>

#include "lsic/autodiff.hpp"
#include "lsic/rng.hpp"
#include "lsic/tensor.hpp"

namespace lsic::nn {

// Draws a random Gaussian matrix and orthogonalizes it via QR with sign
// correction. Conv shapes are treated as (out, in*kh*kw); for wide matrices
// the rows are orthonormal instead of the columns.
Tensor orthogonal_init(const std::vector<int>& shape, Rng& rng, double gain = 1.0);

// Persistent power-iteration vectors for one weight.
struct SpectralState {
    Tensor u, v;
    bool initialized = false;
};

// One power-iteration step on the 2-D view of w; updates st and returns the
// current estimate of the largest singular value.
double power_iterate(const Tensor& w, SpectralState& st);

// Current sigma estimate without advancing the iteration.
double spectral_sigma(const Tensor& w, const SpectralState& st);

// w divided by its estimated largest singular value (plain-tensor path).
Tensor spectral_normalize(const Tensor& w, SpectralState& st, int extra_iterations = 0);

using SnEntry = std::pair<std::string, SpectralState*>;

struct LayerOptions {
    bool spectral_norm = true;
    double init_gain = 1.0;
};

// Fully connected layer, weight (dout, din).
class Dense {
public:
    Dense() = default;
    Dense(const std::string& name, int din, int dout, Rng& rng, LayerOptions opt = {});

    // training=true advances power iteration once per call
    ad::Var forward(ad::Tape& t, const ad::Var& x, bool training);

    void collect(std::vector<ad::Parameter*>& out);
    void collect_sn(std::vector<SnEntry>& out);
    ad::Parameter& weight() { return w_; }
    ad::Parameter& bias() { return b_; }
    SpectralState& sn_state() { return sn_; }
    bool spectral() const { return opt_.spectral_norm; }

private:
    ad::Var normalized_weight(ad::Tape& t, bool training);
    ad::Parameter w_, b_;
    SpectralState sn_;
    LayerOptions opt_;
    friend class GateHead;
};

// 3x3 (or any kxk) convolution, weight (out, in, kh, kw).
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int cin, int cout, int k, int stride, int pad, Rng& rng,
           LayerOptions opt = {});

    ad::Var forward(ad::Tape& t, const ad::Var& x, bool training);

    void collect(std::vector<ad::Parameter*>& out);
    void collect_sn(std::vector<SnEntry>& out);
    ad::Parameter& weight() { return w_; }
    SpectralState& sn_state() { return sn_; }
    bool spectral() const { return opt_.spectral_norm; }
    int stride() const { return stride_; }

private:
    ad::Parameter w_, b_;
    SpectralState sn_;
    LayerOptions opt_;
    int stride_ = 1, pad_ = 1;
};

// Pre-activation residual block: two 3x3 convolutions with a leaky-rectifier
// in front of each, plus a 1x1 projection skip when shape changes. stride
// downsamples on the first conv and the skip.
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(const std::string& name, int cin, int cout, int stride, Rng& rng, LayerOptions opt = {});

    ad::Var forward(ad::Tape& t, const ad::Var& x, bool training);
    void collect(std::vector<ad::Parameter*>& out);
    void collect_sn(std::vector<SnEntry>& out);

    static constexpr double kLeakySlope = 0.2;

private:
    Conv2d conv1_, conv2_, skip_;
    bool projected_ = false;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over an externally owned parameter set. Moments live in the
// Parameters themselves so checkpoints capture optimizer state.
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(const std::vector<ad::Parameter*>& params);
    long steps_taken() const { return t_; }
    void set_steps_taken(long t) { t_ = t; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
};

// 64-bit FNV-1a over the raw parameter bytes; used to verify stage freezes.
std::uint64_t param_hash(const std::vector<ad::Parameter*>& params);

} // namespace lsic::nn
