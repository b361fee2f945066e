// Conditional 1D U-Net noise predictor over action sequences. The global
// condition modulates every block through FiLM; the future condition enters
// per the configured injection position.
#pragma once

#include <array>

#include "fd/graph.hpp"
#include "fd/params.hpp"
#include "fd/perception.hpp"
#include "fd/schedule.hpp"

namespace fd::denoiser {

enum class Injection { None, Early, MidStage };

Injection injection_from_string(const std::string& s);
std::string to_string(Injection inj);

struct DenoiserConfig {
    int action_dim = 2;
    int horizon = 8;  // divisible by 4 (two stride-2 stages)
    std::array<int, 2> down_channels{64, 128};
    int bottleneck_channels = 256;
    int cond_dim_down = 384;
    int cond_dim_up = 512;
    Injection injection = Injection::MidStage;
    int norm_groups = 8;

    void validate() const;
};

struct NoisyActionSeq {
    Array values;  // [horizon, action_dim]
    int step = 0;  // diffusion step k
};

// Node ids of stage outputs, for activation-tap tests.
struct DenoiserTaps {
    int down1 = -1, down2 = -1, mid = -1, up1 = -1, up2 = -1, out = -1;
};

void init_denoiser_params(ParamStore& ps, const DenoiserConfig& cfg, Rng& rng);
int64_t denoiser_param_count(const DenoiserConfig& cfg);

// actions:[B,A,H], cond_g:[B,192], cond_ghat:[B,192] or -1 when absent.
int build_denoiser(Graph& g, const ParamStore& ps, const DenoiserConfig& cfg, int actions,
                   int cond_g, int cond_ghat, DenoiserTaps* taps = nullptr);

// Standalone FiLM primitive: h:[C,L], cond:[D], projections wg/wd:[D,C].
Array film_modulate(const Array& h, const Array& cond, const Array& wg, const Array& bg,
                    const Array& wd, const Array& bd);

// One denoiser evaluation; a.values is [H,A], result is [H,A].
Array predict_noise(const NoisyActionSeq& a, const perception::ConditionPair& cond,
                    const DenoiserConfig& cfg, const ParamStore& ps);

// Reverse-diffusion sampling loop with a cached graph. Reconstructed samples
// are clipped to the action range at each step (x0_clip, 0 disables). A
// batched instance denoises several independent sequences in lockstep.
class Sampler {
  public:
    Sampler(const DenoiserConfig& cfg, const ParamStore& ps, diffusion::NoiseSchedule sched,
            int infer_steps = 10, double eta = 0.0, double x0_clip = 1.0, int batch = 1);

    // Returns an action sequence [H,A]; conditions are rebuilt per step so the
    // step embedding tracks the schedule position. Requires batch == 1.
    Array sample(const perception::Feature& f_cur, const perception::Feature& f_cons, Rng& rng);

    // Lockstep variant over `batch` sequences: features are [B,feat] rows and
    // the caller supplies the initial noise [B,A,H] (one stream per row).
    // Deterministic sampling only (eta must be 0); returns [B,H,A].
    Array sample_batch(const Array& f_cur, const Array& f_cons, const Array& init_noise);

  private:
    DenoiserConfig cfg_;
    diffusion::NoiseSchedule sched_;
    int infer_steps_;
    double eta_;
    double x0_clip_;
    int batch_;
    Graph graph_;
};

// Convenience wrapper: encode the pair, construct the future view, sample.
Array sample_actions(const perception::ObservationPair& pair, const ParamStore& ps,
                     const perception::PerceptionConfig& pcfg, const DenoiserConfig& cfg,
                     const diffusion::NoiseSchedule& sched, Rng& rng, int infer_steps = 10,
                     double eta = 0.0);

}  // namespace fd::denoiser
