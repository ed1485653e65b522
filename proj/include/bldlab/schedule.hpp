#pragma once

#include "bldlab/tensor.hpp"

namespace bldlab {

// Per-timestep beta/alpha/alpha_bar tables, t in [1, T]; alpha_bar[0] == 1.
// Tables are kept in double so the algebraic identities between the
// forward/recovery formulas survive float training math.
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
        if (beta_.empty())
            throw std::invalid_argument("noise schedule: empty beta table");
        alpha_.resize(beta_.size());
        alpha_bar_.resize(beta_.size() + 1);
        alpha_bar_[0] = 1.0;
        for (size_t i = 0; i < beta_.size(); ++i) {
            if (!(beta_[i] > 0.0 && beta_[i] < 1.0))
                throw std::invalid_argument("noise schedule: beta[" +
                                            std::to_string(i + 1) + "] = " +
                                            std::to_string(beta_[i]) +
                                            " outside (0,1)");
            alpha_[i] = 1.0 - beta_[i];
            alpha_bar_[i + 1] = alpha_bar_[i] * alpha_[i];
        }
    }

    // Classic linear beta ramp.
    static NoiseSchedule linear(int t_count = 1000, double beta_start = 1e-4,
                                double beta_end = 2e-2) {
        if (t_count < 1)
            throw std::invalid_argument("noise schedule: T must be >= 1");
        std::vector<double> betas(t_count);
        for (int i = 0; i < t_count; ++i) {
            double f = t_count == 1 ? 0.0 : (double)i / (double)(t_count - 1);
            betas[i] = beta_start + f * (beta_end - beta_start);
        }
        return NoiseSchedule(std::move(betas));
    }

    int steps() const { return (int)beta_.size(); }
    double beta(int t) const { return beta_[check(t) - 1]; }
    double alpha(int t) const { return alpha_[check(t) - 1]; }
    double alpha_bar(int t) const {
        if (t < 0 || t > steps())
            throw std::invalid_argument("noise schedule: timestep " + std::to_string(t) +
                                        " outside [0," + std::to_string(steps()) + "]");
        return alpha_bar_[t];
    }
    double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }
    double sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }
    const std::vector<double>& betas() const { return beta_; }

private:
    int check(int t) const {
        if (t < 1 || t > steps())
            throw std::invalid_argument("noise schedule: timestep " + std::to_string(t) +
                                        " outside [1," + std::to_string(steps()) + "]");
        return t;
    }
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;  // index 0..T
};

struct SamplerConfig {
    int num_steps = 50;
    int stride = 20;
    double guidance_scale = 3.0;
    double eta = 0.0;  // deterministic sampler only

    // {T, T-stride, ..., stride}
    std::vector<int> visited_timesteps(const NoiseSchedule& ns) const {
        if (num_steps < 1 || stride < 1 || (int64_t)num_steps * stride > ns.steps())
            throw std::invalid_argument("sampler: num_steps*stride = " +
                                        std::to_string((int64_t)num_steps * stride) +
                                        " exceeds schedule T = " +
                                        std::to_string(ns.steps()));
        std::vector<int> ts(num_steps);
        for (int i = 0; i < num_steps; ++i) ts[i] = ns.steps() - i * stride;
        return ts;
    }
};

template <class T>
inline void require_shapes_match(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

namespace detail {

template <class T>
Tensor<T> combine2(const Tensor<T>& a, double ca, const Tensor<T>& b, double cb) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data().data();
    T fa = (T)ca, fb = (T)cb;
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = fa * pa[i] + fb * pb[i];
    return out;
}

}  // namespace detail

// z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.  t = 0 is the identity.
template <class T>
Tensor<T> forward_diffuse(const NoiseSchedule& ns, const Tensor<T>& z0,
                          const Tensor<T>& eps, int t) {
    require_shapes_match("forward_diffuse", z0, eps);
    return detail::combine2(z0, ns.sqrt_alpha_bar(t), eps, ns.sqrt_one_minus_alpha_bar(t));
}

// v = sqrt(abar_t) * eps - sqrt(1 - abar_t) * z0
template <class T>
Tensor<T> v_target(const NoiseSchedule& ns, const Tensor<T>& z0, const Tensor<T>& eps,
                   int t) {
    require_shapes_match("v_target", z0, eps);
    return detail::combine2(eps, ns.sqrt_alpha_bar(t), z0, -ns.sqrt_one_minus_alpha_bar(t));
}

// z0_hat = sqrt(abar_t) * z_t - sqrt(1 - abar_t) * v
template <class T>
Tensor<T> recover_z0(const NoiseSchedule& ns, const Tensor<T>& z_t, const Tensor<T>& v,
                     int t) {
    require_shapes_match("recover_z0", z_t, v);
    return detail::combine2(z_t, ns.sqrt_alpha_bar(t), v, -ns.sqrt_one_minus_alpha_bar(t));
}

// Deterministic strided update: recover z0_hat, derive the implied noise,
// and re-project at t_prev (which may be 0, yielding z0_hat itself).
template <class T>
Tensor<T> ddim_step(const NoiseSchedule& ns, const Tensor<T>& z_t, const Tensor<T>& v_pred,
                    int t, int t_prev) {
    if (t_prev >= t || t_prev < 0)
        throw std::invalid_argument("ddim_step: t_prev " + std::to_string(t_prev) +
                                    " must lie in [0, t) with t = " + std::to_string(t));
    Tensor<T> z0_hat = recover_z0(ns, z_t, v_pred, t);
    // eps_hat = (z_t - sqrt(abar_t) * z0_hat) / sqrt(1 - abar_t)
    double inv = 1.0 / ns.sqrt_one_minus_alpha_bar(t);
    Tensor<T> eps_hat =
        detail::combine2(z_t, inv, z0_hat, -ns.sqrt_alpha_bar(t) * inv);
    return detail::combine2(z0_hat, ns.sqrt_alpha_bar(t_prev), eps_hat,
                            ns.sqrt_one_minus_alpha_bar(t_prev));
}

// v_uncond + scale * (v_cond - v_uncond)
template <class T>
Tensor<T> cfg_combine(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, double scale) {
    require_shapes_match("cfg_combine", v_cond, v_uncond);
    return detail::combine2(v_cond, scale, v_uncond, 1.0 - scale);
}

}  // namespace bldlab
