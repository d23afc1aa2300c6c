#include "lsic/losses.hpp"

namespace lsic {

using ad::Tape;
using ad::Var;

Var mean_log_prob(const Var& probs) { return ad::mean_all(ad::log_clamped(probs, kLogEps)); }

Var recon_generator_loss(Tape& t, PatchDiscriminator& d_r, const Var& fake_for_d,
                         const std::vector<Var>& fake_scales, const std::vector<Tensor>& real_scales,
                         const Tensor& v0, const LossWeights& w, bool training) {
    w.validate();
    check_shape(fake_scales.size() == real_scales.size(),
                "recon_generator_loss: scale count mismatch");
    auto d_out = d_r.discriminate(t, fake_for_d, &v0, training);
    Var loss = ad::mul_scalar(ad::neg(mean_log_prob(d_out.prob)), w.adv);
    for (std::size_t s = 0; s < fake_scales.size(); ++s) {
        check_shape(fake_scales[s].val().same_shape(real_scales[s]),
                    "recon_generator_loss: scale " + std::to_string(s) + " shape");
        Var diff = ad::sub(fake_scales[s], t.constant(real_scales[s]));
        loss = ad::add(loss, ad::mul_scalar(ad::mean_all(ad::abs_op(diff)), w.l1));
    }
    return loss;
}

Var recon_discriminator_loss(Tape& t, PatchDiscriminator& d_r, const Tensor& real,
                             const Tensor& fake, const Tensor& v0, bool training) {
    auto real_out = d_r.discriminate(t, t.constant(real), &v0, training);
    auto fake_out = d_r.discriminate(t, t.constant(fake), &v0, training);
    Var one_minus_fake = ad::add_scalar(ad::neg(fake_out.prob), 1.0);
    return ad::neg(ad::add(mean_log_prob(real_out.prob),
                           ad::mean_all(ad::log_clamped(one_minus_fake, kLogEps))));
}

Var creation_generator_loss(Tape& t, PatchDiscriminator& d_c, const Var& fake_for_d,
                            const Var& context_loss, const LossWeights& w, bool training) {
    w.validate();
    auto d_out = d_c.discriminate(t, fake_for_d, nullptr, training);
    Var adv = ad::mul_scalar(ad::neg(mean_log_prob(d_out.prob)), w.adv);
    return ad::add(adv, ad::mul_scalar(context_loss, w.ce));
}

Var creation_discriminator_loss(Tape& t, PatchDiscriminator& d_c, const Tensor& real,
                                const Tensor& fake, bool training) {
    auto real_out = d_c.discriminate(t, t.constant(real), nullptr, training);
    auto fake_out = d_c.discriminate(t, t.constant(fake), nullptr, training);
    Var one_minus_fake = ad::add_scalar(ad::neg(fake_out.prob), 1.0);
    return ad::neg(ad::add(mean_log_prob(real_out.prob),
                           ad::mean_all(ad::log_clamped(one_minus_fake, kLogEps))));
}

} // namespace lsic
