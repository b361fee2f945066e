// Noise-schedule tables and forward/reverse diffusion steps. All functions are
// pure; a schedule is immutable after construction.
#pragma once

#include <string>
#include <vector>

#include "fd/array.hpp"

namespace fd::diffusion {

enum class ScheduleKind { LinearBeta, SquaredCosine };

struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::SquaredCosine;
    int steps = 0;                   // T
    double beta_min = 0.0, beta_max = 0.0;
    std::vector<double> alphas;      // alpha_t, index t-1
    std::vector<double> alpha_bars;  // cumulative product
    std::vector<double> sigmas;      // ancestral "small" variance choice

    double alpha(int t) const;       // t in [1, T]
    double alpha_bar(int t) const;   // t in [0, T], alpha_bar(0) == 1
    double sigma(int t) const;       // t in [1, T]
};

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max);

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind kind);

// sqrt(abar_t)*a0 + sqrt(1-abar_t)*noise
Array forward_diffuse(const Array& a0, int t, const Array& noise, const NoiseSchedule& sched);

// Ancestral step with the standard 1/sqrt(alpha_t) prefactor.
Array ddpm_step(const Array& a_t, const Array& eps_pred, int t, const NoiseSchedule& sched,
                const Array& z);

// Diagnostic variant with a leading alpha_t factor instead of 1/sqrt(alpha_t).
// It does not invert the forward process; kept for side-by-side comparison
// and excluded from training and sampling.
Array ddpm_step_alpha_scaled(const Array& a_t, const Array& eps_pred, int t,
                             const NoiseSchedule& sched, const Array& z);

// Strided step t -> t_prev; eta = 0 is fully deterministic. A positive
// x0_clip bounds the reconstructed sample to [-x0_clip, x0_clip] before the
// step is re-noised (action sequences live in [-1,1]); 0 disables it.
Array ddim_step(const Array& a_t, const Array& eps_pred, int t, int t_prev, double eta,
                const NoiseSchedule& sched, const Array& z, double x0_clip = 0.0);

// a - gamma * grad_E; diagnostic reading of a denoising update.
Array energy_descent_step(const Array& a, const Array& grad_energy, double gamma);

// Evenly strided inference step list T -> 0 (descending), `count` entries.
std::vector<int> strided_steps(int steps, int count);

// CSV dump: t, alpha, alpha_bar, sigma per row.
std::string schedule_csv(const NoiseSchedule& sched);

}  // namespace fd::diffusion
