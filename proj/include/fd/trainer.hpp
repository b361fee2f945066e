// Dual-loss training: denoising loss plus weighted future-view consistency,
// AdamW with warmup+cosine decay, and an EMA shadow of all parameters.
#pragma once

#include <functional>
#include <memory>

#include "fd/dataset.hpp"
#include "fd/denoiser.hpp"
#include "fd/graph.hpp"
#include "fd/params.hpp"
#include "fd/perception.hpp"
#include "fd/schedule.hpp"

namespace fd::training {

struct ScheduleSpec {
    diffusion::ScheduleKind kind = diffusion::ScheduleKind::SquaredCosine;
    int steps = 100;
    double beta_min = 1e-4;
    double beta_max = 0.02;

    diffusion::NoiseSchedule build() const {
        return diffusion::make_schedule(kind, steps, beta_min, beta_max);
    }
};

enum class BetaMode { Off, Fixed, Dynamic };

std::string to_string(BetaMode mode);

struct TrainConfig {
    double lr = 1e-4;
    int warmup_steps = 500;
    int epochs = 300;
    int batch = 32;
    BetaMode beta_mode = BetaMode::Fixed;
    double beta = 0.1;          // Fixed weight, or the Dynamic ceiling
    double beta_growth = 1e-3;  // Dynamic rate
    double ema_decay = 0.999;
    uint64_t seed = 0;
    double weight_decay = 1e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // Optional variant: also stop consistency-loss gradients from reaching the
    // encoder through the current feature (the target path is always stopped).
    bool detach_current_feature = false;
    int infer_steps = 10;  // DDIM steps at sampling time
};

// "off" | "fixed:<w>" | "dynamic:<w>,<rate>"
void parse_beta_mode(const std::string& text, TrainConfig& cfg);
std::string beta_mode_string(const TrainConfig& cfg);

double beta_at(const TrainConfig& cfg, int64_t step);
double lr_at(const TrainConfig& cfg, int64_t step, int64_t total_steps);
double total_loss(double l_diff, double l_cons, const TrainConfig& cfg, int64_t step);

double construction_loss(const perception::Feature& f_cons, const perception::Feature& f_gt);

void ema_update(Array& shadow, const Array& live, double decay);
void ema_update(ParamStore& shadow, const ParamStore& live, double decay);

class AdamW {
  public:
    explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
    void step(ParamStore& params, const ArrayMap& grads, double lr);

  private:
    TrainConfig cfg_;
    std::map<std::string, Array> m_, v_;
    int64_t t_ = 0;
};

struct PolicyCheckpoint {
    ParamStore params;
    ParamStore ema;
    denoiser::DenoiserConfig dcfg;
    ScheduleSpec sched;
    TrainConfig tcfg;
    perception::PerceptionConfig pcfg;
    std::string task;  // toy task label the policy was trained for
    int64_t step = 0;
};

struct StepStats {
    int64_t step = 0;
    double l_diff = 0.0;
    double l_cons = 0.0;
    double l_total = 0.0;
    double lr = 0.0;
};

// One batch evaluated without touching optimizer state: loss terms plus the
// parameter gradients of the composite loss and of each term alone.
struct LossProbe {
    StepStats stats;
    ArrayMap grads_total;
    ArrayMap grads_diff;
    ArrayMap grads_cons;  // empty when the consistency term is absent
};

class Trainer {
  public:
    Trainer(const toy::DemoDataset& ds, TrainConfig tcfg, denoiser::DenoiserConfig dcfg,
            ScheduleSpec sspec, perception::PerceptionConfig pcfg);
    ~Trainer();

    // Called after every epoch with the epoch's mean stats.
    using EpochHook = std::function<void(int epoch, const StepStats&, const PolicyCheckpoint&)>;
    PolicyCheckpoint train(const EpochHook& hook = {});

    LossProbe probe_step(const std::vector<int>& sample_indices, int64_t step);
    int64_t sample_count() const;
    const PolicyCheckpoint& checkpoint() const;
    int64_t total_steps() const { return total_steps_; }

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int64_t total_steps_ = 0;
};

// Denoising objective on a batch of samples: per item draw k and epsilon from
// a per-item stream keyed on (rng_seed, episode seed, t), q-sample the window
// and score the prediction. `eps_pred_override` replaces the network output
// (verification hook: passing the true noise yields exactly zero).
double diffusion_loss(const std::vector<toy::TrainSample>& batch, const PolicyCheckpoint& ckpt,
                      uint64_t rng_seed, const Array* eps_pred_override = nullptr);

}  // namespace fd::training
