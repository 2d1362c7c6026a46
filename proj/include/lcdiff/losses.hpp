#pragma once

#include <vector>

#include "lcdiff/autodiff.hpp"
#include "lcdiff/metrics.hpp"
#include "lcdiff/schedule.hpp"

namespace lcdiff {

struct LossWeights {
    double eta = 1.0;
    double theta = 0.5;
    double lambda = 0.1;
};

struct DtsConfig {
    double k = 5.0;
};

namespace ad {

// Differentiable SSIM, same 11x11 Gaussian window and constants as
// metrics::ssim. Returns the mean over valid window positions and channels.
template <typename T>
typename Tape<T>::Ref ssim_graph(Tape<T>& tape, typename Tape<T>::Ref a, typename Tape<T>::Ref b,
                                 double peak = 1.0) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("ssim_graph: shape mismatch");
    const auto& wd = metrics::ssim_window();
    std::vector<T> k1d(wd.size());
    for (std::size_t i = 0; i < wd.size(); ++i) k1d[i] = static_cast<T>(wd[i]);
    const double c1 = 0.01 * peak * 0.01 * peak, c2 = 0.03 * peak * 0.03 * peak;

    auto mu_a = tape.sep_filter_valid(a, k1d);
    auto mu_b = tape.sep_filter_valid(b, k1d);
    auto e_aa = tape.sep_filter_valid(tape.mul(a, a), k1d);
    auto e_bb = tape.sep_filter_valid(tape.mul(b, b), k1d);
    auto e_ab = tape.sep_filter_valid(tape.mul(a, b), k1d);
    auto var_a = tape.sub(e_aa, tape.mul(mu_a, mu_a));
    auto var_b = tape.sub(e_bb, tape.mul(mu_b, mu_b));
    auto cov = tape.sub(e_ab, tape.mul(mu_a, mu_b));

    auto num = tape.mul(tape.add_scalar(tape.scale(tape.mul(mu_a, mu_b), 2.0), c1),
                        tape.add_scalar(tape.scale(cov, 2.0), c2));
    auto den = tape.mul(tape.add_scalar(tape.add(tape.mul(mu_a, mu_a), tape.mul(mu_b, mu_b)), c1),
                        tape.add_scalar(tape.add(var_a, var_b), c2));
    return tape.mean_all(tape.div(num, den));
}

// L_res = eta * L1 + theta * (1 - SSIM) + lambda * L_fft.
template <typename T>
typename Tape<T>::Ref restoration_loss(Tape<T>& tape, typename Tape<T>::Ref pred,
                                       typename Tape<T>::Ref target, const LossWeights& w) {
    if (!pred->val.same_shape(target->val)) throw std::invalid_argument("restoration_loss: shape mismatch");
    auto loss = tape.scale(tape.l1(pred, target), w.eta);
    if (w.theta != 0.0) {
        auto one_minus = tape.add_scalar(tape.scale(ssim_graph(tape, pred, target), -1.0), 1.0);
        loss = tape.add(loss, tape.scale(one_minus, w.theta));
    }
    if (w.lambda != 0.0) loss = tape.add(loss, tape.scale(tape.spectrum_l1(pred, target), w.lambda));
    return loss;
}

// L_dts = omega_t * MSE(ll) + (1-omega_t) * mean over {lh,hl,hh} of (1-SSIM).
template <typename T>
typename Tape<T>::Ref dts_loss(Tape<T>& tape, typename Tape<T>::Ref x0_hat, typename Tape<T>::Ref x0,
                               int t, const lgdm::NoiseSchedule& sched, const DtsConfig& cfg) {
    if (!x0_hat->val.same_shape(x0->val)) throw std::invalid_argument("dts_loss: shape mismatch");
    const double w = lgdm::omega(static_cast<double>(t), static_cast<double>(sched.T), cfg.k);
    using HB = typename Tape<T>::HaarBand;
    auto low = tape.mse(tape.haar_band(x0_hat, HB::LL), tape.haar_band(x0, HB::LL));
    auto loss = tape.scale(low, w);
    if (w != 1.0) {
        typename Tape<T>::Ref high = nullptr;
        for (HB band : {HB::LH, HB::HL, HB::HH}) {
            auto s = ssim_graph(tape, tape.haar_band(x0_hat, band), tape.haar_band(x0, band));
            auto term = tape.add_scalar(tape.scale(s, -1.0), 1.0);
            high = high ? tape.add(high, term) : term;
        }
        loss = tape.add(loss, tape.scale(high, (1.0 - w) / 3.0));
    }
    return loss;
}

template <typename T>
typename Tape<T>::Ref denoise_loss(Tape<T>& tape, typename Tape<T>::Ref eps_hat,
                                   typename Tape<T>::Ref eps) {
    if (!eps_hat->val.same_shape(eps->val)) throw std::invalid_argument("denoise_loss: shape mismatch");
    return tape.mse(eps_hat, eps);
}

}  // namespace ad
}  // namespace lcdiff
