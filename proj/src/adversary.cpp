#include "lsic/adversary.hpp"

#include <cmath>
#include <string>

namespace lsic {

using ad::Tape;
using ad::Var;

void DiscriminatorConfig::validate() const {
    if (resolution < 16 || (resolution & (resolution - 1)) != 0)
        throw std::invalid_argument("discriminator: resolution must be a power of two >= 16");
    if (base_channels < 1) throw std::invalid_argument("discriminator: base_channels");
    if (cond_dim < 0 || cond_channels < 1) throw std::invalid_argument("discriminator: condition dims");
}

PatchDiscriminator::PatchDiscriminator(const DiscriminatorConfig& cfg, Rng& rng,
                                       const std::string& name)
    : cfg_(cfg) {
    cfg_.validate();
    nn::LayerOptions opt;
    opt.spectral_norm = cfg_.spectral_norm;

    int depth_to_16 = 0;
    for (int r = cfg_.resolution; r > 16; r /= 2) ++depth_to_16;

    int cin = cfg_.in_channels;
    int ch = cfg_.base_channels;
    for (int i = 0; i < depth_to_16; ++i) {
        pre_.push_back(nn::ResBlock(name + ".pre" + std::to_string(i), cin, ch, 2, rng, opt));
        cin = ch;
        ch = std::min(4 * cfg_.base_channels, 2 * ch);
    }
    if (conditional())
        cond_proj_ = nn::Dense(name + ".cond_proj", cfg_.cond_dim, cfg_.cond_channels, rng, opt);
    int post_in = cin + (conditional() ? cfg_.cond_channels : 0);
    post_ = nn::ResBlock(name + ".post", post_in, ch, 2, rng, opt);
    head_ = nn::Conv2d(name + ".head", ch, 1, 1, 1, 0, rng, opt);
}

PatchDiscriminator::Output PatchDiscriminator::discriminate(Tape& t, const Var& image,
                                                            const Tensor* condition,
                                                            bool training) {
    if (conditional() && condition == nullptr)
        throw std::invalid_argument("discriminator: conditional variant requires a condition");
    if (!conditional() && condition != nullptr)
        throw std::invalid_argument("discriminator: unconditional variant forbids a condition");
    const Tensor& img = image.val();
    check_shape(img.rank() == 4 && img.dim(1) == cfg_.in_channels, "discriminator input (N,3,H,W)");

    Var h = image;
    for (auto& blk : pre_) h = blk.forward(t, h, training);

    if (conditional()) {
        check_shape(condition->rank() == 2 && condition->dim(0) == img.dim(0) &&
                        condition->dim(1) == cfg_.cond_dim,
                    "discriminator condition (N,cond_dim)");
        Var cv = cond_proj_.forward(t, t.constant(*condition), training);
        Var tiled = ad::spatial_broadcast(cv, h.val().dim(2), h.val().dim(3));
        h = ad::concat_channels(h, tiled);
    }

    h = post_.forward(t, h, training);
    Output out;
    out.patch_logits = head_.forward(t, ad::leaky_relu(h, nn::ResBlock::kLeakySlope), training);
    out.logit_mean = ad::mean_spatial(out.patch_logits);
    out.prob = ad::sigmoid(out.logit_mean);
    return out;
}

void PatchDiscriminator::collect(std::vector<ad::Parameter*>& out) {
    for (auto& blk : pre_) blk.collect(out);
    if (conditional()) cond_proj_.collect(out);
    post_.collect(out);
    head_.collect(out);
}

std::vector<ad::Parameter*> PatchDiscriminator::parameters() {
    std::vector<ad::Parameter*> out;
    collect(out);
    return out;
}

void PatchDiscriminator::collect_sn(std::vector<nn::SnEntry>& out) {
    for (auto& blk : pre_) blk.collect_sn(out);
    if (conditional()) cond_proj_.collect_sn(out);
    post_.collect_sn(out);
    head_.collect_sn(out);
}

} // namespace lsic
