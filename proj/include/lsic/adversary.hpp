#pragma once

#include <optional>
#include <vector>

#include "lsic/autodiff.hpp"
#include "lsic/nn.hpp"

namespace lsic {

struct DiscriminatorConfig {
    int resolution = 256;  // model resolution; sets the condition injection depth
    int in_channels = 3;
    int base_channels = 32;
    int cond_dim = 0;       // 0 builds an unconditional discriminator
    int cond_channels = 16; // projected condition width
    bool spectral_norm = true;

    void validate() const;
};

// Fully convolutional patch discriminator built from the generator's residual
// blocks. The conditional variant projects the pooled graph vector and tiles
// it over the feature map that sits at 16x16 for model-resolution input;
// other input sizes keep working with proportionally sized patch maps.
class PatchDiscriminator {
public:
    struct Output {
        ad::Var patch_logits; // (N,1,h,w)
        ad::Var logit_mean;   // (N,1) mean over patches
        ad::Var prob;         // (N,1) sigmoid of the mean logit
    };

    PatchDiscriminator() = default;
    PatchDiscriminator(const DiscriminatorConfig& cfg, Rng& rng, const std::string& name);

    bool conditional() const { return cfg_.cond_dim > 0; }
    const DiscriminatorConfig& config() const { return cfg_; }

    // condition: (N, cond_dim), required iff conditional. The condition is
    // treated as constant (no gradient into the embedding through D).
    Output discriminate(ad::Tape& t, const ad::Var& image, const Tensor* condition, bool training);

    void collect(std::vector<ad::Parameter*>& out);
    void collect_sn(std::vector<nn::SnEntry>& out);
    std::vector<ad::Parameter*> parameters();

private:
    DiscriminatorConfig cfg_;
    std::vector<nn::ResBlock> pre_;  // downsampling stack before conditioning
    nn::Dense cond_proj_;
    nn::ResBlock post_;
    nn::Conv2d head_;
};

} // namespace lsic
