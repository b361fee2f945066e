#include "fd/schedule.hpp"

#include <cmath>
#include <cstdio>

namespace fd::diffusion {

namespace {

void check_t(int t, int steps) {
    if (t < 1 || t > steps)
        raise("diffusion step t=" + std::to_string(t) + " outside [1," + std::to_string(steps) + "]");
}

}  // namespace

double NoiseSchedule::alpha(int t) const {
    check_t(t, steps);
    return alphas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_t(t, steps);
    return alpha_bars[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::sigma(int t) const {
    check_t(t, steps);
    return sigmas[static_cast<size_t>(t - 1)];
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max) {
    if (steps < 1) raise("make_schedule: T must be >= 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
        raise("make_schedule: need 0 < beta_min <= beta_max < 1");
    NoiseSchedule s;
    s.kind = kind;
    s.steps = steps;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.alphas.resize(static_cast<size_t>(steps));
    if (kind == ScheduleKind::LinearBeta) {
        for (int t = 1; t <= steps; ++t) {
            const double frac = steps > 1 ? static_cast<double>(t - 1) / (steps - 1) : 0.0;
            const double beta = beta_min + (beta_max - beta_min) * frac;
            s.alphas[static_cast<size_t>(t - 1)] = 1.0 - beta;
        }
    } else {
        // abar(t) follows a squared-cosine profile; alphas are its step ratios.
        const double offset = 0.008;
        auto profile = [&](double t) {
            const double v = std::cos((t / steps + offset) / (1.0 + offset) * M_PI / 2.0);
            return v * v;
        };
        const double norm = profile(0.0);
        double prev = 1.0;
        for (int t = 1; t <= steps; ++t) {
            const double abar = profile(static_cast<double>(t)) / norm;
            double beta = 1.0 - abar / prev;
            if (beta > 0.999) beta = 0.999;
            if (beta < 0.0) beta = 0.0;
            s.alphas[static_cast<size_t>(t - 1)] = 1.0 - beta;
            prev *= 1.0 - beta;
        }
    }
    s.alpha_bars.resize(static_cast<size_t>(steps));
    double abar = 1.0;
    for (int t = 1; t <= steps; ++t) {
        abar *= s.alphas[static_cast<size_t>(t - 1)];
        s.alpha_bars[static_cast<size_t>(t - 1)] = abar;
    }
    s.sigmas.resize(static_cast<size_t>(steps));
    for (int t = 1; t <= steps; ++t) {
        const double at = s.alphas[static_cast<size_t>(t - 1)];
        const double abar_t = s.alpha_bars[static_cast<size_t>(t - 1)];
        const double abar_prev = t > 1 ? s.alpha_bars[static_cast<size_t>(t - 2)] : 1.0;
        // "Small" ancestral variance: (1-abar_{t-1})/(1-abar_t) * (1-alpha_t).
        const double denom = 1.0 - abar_t;
        const double var = denom > 0.0 ? (1.0 - abar_prev) / denom * (1.0 - at) : 0.0;
        s.sigmas[static_cast<size_t>(t - 1)] = std::sqrt(std::max(var, 0.0));
    }
    return s;
}

ScheduleKind schedule_kind_from_string(const std::string& str) {
    if (str == "linear") return ScheduleKind::LinearBeta;
    if (str == "cosine") return ScheduleKind::SquaredCosine;
    raise("unknown schedule kind '" + str + "' (want linear|cosine)");
}

std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::LinearBeta ? "linear" : "cosine";
}

Array forward_diffuse(const Array& a0, int t, const Array& noise, const NoiseSchedule& sched) {
    check_t(t, sched.steps);
    if (!a0.same_shape(noise)) raise("forward_diffuse: noise shape mismatch");
    const double abar = sched.alpha_bar(t);
    const double ca = std::sqrt(abar);
    const double cn = std::sqrt(1.0 - abar);
    Array out(a0.shape());
    for (int64_t i = 0; i < a0.numel(); ++i) out[i] = ca * a0[i] + cn * noise[i];
    return out;
}

Array ddpm_step(const Array& a_t, const Array& eps_pred, int t, const NoiseSchedule& sched,
                const Array& z) {
    check_t(t, sched.steps);
    if (!a_t.same_shape(eps_pred) || !a_t.same_shape(z)) raise("ddpm_step: shape mismatch");
    const double at = sched.alpha(t);
    const double abar = sched.alpha_bar(t);
    const double sig = sched.sigma(t);
    const double inv_sqrt_a = 1.0 / std::sqrt(at);
    const double coef = (1.0 - at) / std::sqrt(1.0 - abar);
    Array out(a_t.shape());
    for (int64_t i = 0; i < a_t.numel(); ++i)
        out[i] = inv_sqrt_a * (a_t[i] - coef * eps_pred[i]) + sig * z[i];
    return out;
}

Array ddpm_step_alpha_scaled(const Array& a_t, const Array& eps_pred, int t,
                             const NoiseSchedule& sched, const Array& z) {
    check_t(t, sched.steps);
    if (!a_t.same_shape(eps_pred) || !a_t.same_shape(z)) raise("ddpm_step: shape mismatch");
    const double at = sched.alpha(t);
    const double abar = sched.alpha_bar(t);
    const double sig = sched.sigma(t);
    const double coef = (1.0 - at) / std::sqrt(1.0 - abar);
    Array out(a_t.shape());
    for (int64_t i = 0; i < a_t.numel(); ++i)
        out[i] = at * (a_t[i] - coef * eps_pred[i]) + sig * z[i];
    return out;
}

Array ddim_step(const Array& a_t, const Array& eps_pred, int t, int t_prev, double eta,
                const NoiseSchedule& sched, const Array& z, double x0_clip) {
    check_t(t, sched.steps);
    if (t_prev >= t) raise("ddim_step: t_prev must be < t");
    if (t_prev < 0) raise("ddim_step: t_prev must be >= 0");
    if (eta < 0.0 || eta > 1.0) raise("ddim_step: eta must be in [0,1]");
    if (!a_t.same_shape(eps_pred) || !a_t.same_shape(z)) raise("ddim_step: shape mismatch");
    const double abar_t = sched.alpha_bar(t);
    const double abar_p = sched.alpha_bar(t_prev);
    const double sqrt_abar_t = std::sqrt(abar_t);
    const double sqrt_one_minus = std::sqrt(1.0 - abar_t);
    // Eta-scaled variance of the strided step.
    double sig = 0.0;
    if (eta > 0.0 && abar_t < 1.0) {
        const double var =
            (1.0 - abar_p) / (1.0 - abar_t) * (1.0 - abar_t / abar_p);
        sig = eta * std::sqrt(std::max(var, 0.0));
    }
    const double dir = std::sqrt(std::max(1.0 - abar_p - sig * sig, 0.0));
    const double sqrt_abar_p = std::sqrt(abar_p);
    Array out(a_t.shape());
    for (int64_t i = 0; i < a_t.numel(); ++i) {
        double x0_hat = (a_t[i] - sqrt_one_minus * eps_pred[i]) / sqrt_abar_t;
        if (x0_clip > 0.0) x0_hat = std::min(std::max(x0_hat, -x0_clip), x0_clip);
        out[i] = sqrt_abar_p * x0_hat + dir * eps_pred[i] + sig * z[i];
    }
    return out;
}

Array energy_descent_step(const Array& a, const Array& grad_energy, double gamma) {
    if (!a.same_shape(grad_energy)) raise("energy_descent_step: shape mismatch");
    if (!(gamma > 0.0)) raise("energy_descent_step: gamma must be > 0");
    Array out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - gamma * grad_energy[i];
    return out;
}

std::vector<int> strided_steps(int steps, int count) {
    if (count < 1 || count > steps) raise("strided_steps: count must be in [1, T]");
    std::vector<int> ts;
    ts.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int t = steps - (steps * i) / count;
        ts.push_back(t);
    }
    return ts;
}

std::string schedule_csv(const NoiseSchedule& sched) {
    std::string out = "t,alpha,alpha_bar,sigma\n";
    char line[128];
    for (int t = 1; t <= sched.steps; ++t) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", t, sched.alpha(t),
                      sched.alpha_bar(t), sched.sigma(t));
        out += line;
    }
    return out;
}

}  // namespace fd::diffusion
