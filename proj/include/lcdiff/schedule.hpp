#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcdiff/rng.hpp"
#include "lcdiff/tensor.hpp"

namespace lcdiff::lgdm {

// Linear DDPM schedule. Arrays are 1-indexed by timestep (index 0 is the
// t=0 convention: beta[0]=0, alpha_bar[0]=1) so formulas read like the math.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t], t in [1,T]
    std::vector<double> alpha_bar;  // prod_{s<=t} (1-beta[s])
    std::vector<double> sigma;      // posterior std: sqrt((1-abar_{t-1})/(1-abar_t) * beta_t)
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw std::invalid_argument("make_schedule: need 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.sigma.assign(static_cast<std::size_t>(T) + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
        s.beta[static_cast<std::size_t>(t)] =
            beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
        s.alpha_bar[static_cast<std::size_t>(t)] =
            s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - s.beta[static_cast<std::size_t>(t)]);
    }
    for (int t = 1; t <= T; ++t) {
        const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
        const double abp = s.alpha_bar[static_cast<std::size_t>(t) - 1];
        s.sigma[static_cast<std::size_t>(t)] = std::sqrt((1.0 - abp) / (1.0 - ab) * s.beta[static_cast<std::size_t>(t)]);
    }
    return s;
}

inline void check_t(int t, const NoiseSchedule& s, const char* who) {
    if (t < 1 || t > s.T)
        throw std::invalid_argument(std::string(who) + ": t=" + std::to_string(t) + " outside [1," +
                                    std::to_string(s.T) + "]");
}

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& s) {
    check_t(t, s, "q_sample");
    if (!x0.same_shape(eps)) throw std::invalid_argument("q_sample: eps shape differs from x0");
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const T c0 = static_cast<T>(std::sqrt(ab)), ce = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0[i] + ce * eps[i];
    return out;
}

// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t), clamped to the
// [-1,2] guard range before any loss sees it.
template <typename T>
Tensor<T> predict_x0(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, const NoiseSchedule& s,
                     bool clamp_guard = true) {
    check_t(t, s, "predict_x0");
    if (!x_t.same_shape(eps_hat)) throw std::invalid_argument("predict_x0: shape mismatch");
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    if (ab < 1e-12) throw std::invalid_argument("predict_x0: alpha_bar underflow at t=" + std::to_string(t));
    const T inv = static_cast<T>(1.0 / std::sqrt(ab)), ce = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        T v = inv * (x_t[i] - ce * eps_hat[i]);
        if (clamp_guard) v = v < T(-1) ? T(-1) : (v > T(2) ? T(2) : v);
        out[i] = v;
    }
    return out;
}

// omega_t = exp(-k t / T), the dynamic time-step weight.
inline double omega(double t, double T, double k) {
    if (T <= 0.0) throw std::invalid_argument("omega: T must be positive");
    if (k < 0.0) throw std::invalid_argument("omega: k must be nonnegative");
    return std::exp(-k * t / T);
}

template <typename T>
Tensor<T> sample_noise(const std::vector<int>& shape, Rng& rng) {
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.normal());
    return out;
}

}  // namespace lcdiff::lgdm
