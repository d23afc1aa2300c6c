#pragma once

#include <vector>

#include "lsic/adversary.hpp"
#include "lsic/autodiff.hpp"

namespace lsic {

struct LossWeights {
    double adv = 1.0;
    double l1 = 20.0;
    double ce = 1.0;

    void validate() const {
        if (adv < 0.0 || l1 < 0.0 || ce < 0.0)
            throw std::invalid_argument("loss weights must be nonnegative");
    }
};

// probabilities are clamped here before the log to keep losses finite
constexpr double kLogEps = 1e-7;

// mean over the batch of log D(...)
ad::Var mean_log_prob(const ad::Var& probs);

// -lambda_adv * E log D_R(fake, v0) + lambda_l1 * sum_scales E |I_s - fake_s|.
// fake_for_d is the image handed to the discriminator (final scale, composited
// when compositing is on); the l1 terms run on the raw scale outputs against
// area-downsampled ground truth.
ad::Var recon_generator_loss(ad::Tape& t, PatchDiscriminator& d_r, const ad::Var& fake_for_d,
                             const std::vector<ad::Var>& fake_scales,
                             const std::vector<Tensor>& real_scales, const Tensor& v0,
                             const LossWeights& w, bool training);

// -E log D_R(real, v0) - E log(1 - D_R(fake, v0)); fake is detached.
ad::Var recon_discriminator_loss(ad::Tape& t, PatchDiscriminator& d_r, const Tensor& real,
                                 const Tensor& fake, const Tensor& v0, bool training);

// -lambda_adv * E log D_C(fake) + lambda_ce * context_loss (no l1: the
// creation path has no ground-truth image).
ad::Var creation_generator_loss(ad::Tape& t, PatchDiscriminator& d_c, const ad::Var& fake_for_d,
                                const ad::Var& context_loss, const LossWeights& w, bool training);

// -E log D_C(real) - E log(1 - D_C(fake)); fake is detached.
ad::Var creation_discriminator_loss(ad::Tape& t, PatchDiscriminator& d_c, const Tensor& real,
                                    const Tensor& fake, bool training);

} // namespace lsic
