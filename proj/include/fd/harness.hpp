// Rollout evaluation protocol, training-run orchestration, and ablations.
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fd/checkpoint.hpp"
#include "fd/dataset.hpp"
#include "fd/denoiser.hpp"
#include "fd/toy.hpp"
#include "fd/trainer.hpp"

namespace fd::harness {

struct EvalProtocol {
    std::vector<int> seeds{0, 1, 2};
    int eval_every = 20;  // epochs between evaluations
    int rollouts_per_eval = 15;
    int top_k = 5;
    uint64_t eval_scene_seed = 900000;  // env seeds for eval scenes
    int execute_steps = 4;              // receding-horizon prefix length
};

struct EvalEvent {
    int epoch = 0;
    double success_rate = 0.0;
};

struct SeedRun {
    int seed = 0;
    std::vector<EvalEvent> events;
    double score = 0.0;  // mean of the top-k event rates
};

struct RunReport {
    std::string label;
    std::string task;
    std::string fingerprint;
    std::vector<SeedRun> per_seed;
    double mean = 0.0;
    double stddev = 0.0;  // population convention over seeds
};

// Protocol arithmetic (kept pure so it can be fuzzed against an oracle).
double top_k_mean(const std::vector<double>& rates, int top_k);
RunReport aggregate_report(const std::string& label, const std::string& task,
                           const std::string& fingerprint, std::vector<SeedRun> per_seed,
                           int top_k);

// Anything that yields horizon-length action sequences for rollouts.
class ActionSource {
  public:
    virtual ~ActionSource() = default;
    virtual Array plan(const toy::EnvState& state, const perception::ObservationPair& pair,
                       Rng& rng) = 0;
    virtual int horizon() const = 0;
};

// Frozen checkpoint driving the sampler (EMA parameters by default).
class Policy : public ActionSource {
  public:
    explicit Policy(const training::PolicyCheckpoint& ckpt, bool use_ema = true);
    Array plan(const toy::EnvState&, const perception::ObservationPair& pair, Rng& rng) override;
    int horizon() const override { return dcfg_.horizon; }

  private:
    ParamStore params_;
    perception::PerceptionConfig pcfg_;
    denoiser::DenoiserConfig dcfg_;
    Graph percep_;
    std::unique_ptr<denoiser::Sampler> sampler_;
};

// The scripted expert wrapped as an action-sequence oracle (harness self-test).
class ExpertOracle : public ActionSource {
  public:
    ExpertOracle(const toy::ToyTask& task, int horizon) : task_(task), horizon_(horizon) {}
    Array plan(const toy::EnvState& state, const perception::ObservationPair&, Rng&) override;
    int horizon() const override { return horizon_; }

  private:
    toy::ToyTask task_;
    int horizon_;
};

struct RolloutResult {
    bool success = false;
    int steps = 0;
};

// Receding execution: plan a horizon, execute the first `execute_steps`
// actions, re-observe, repeat until done or the step budget runs out.
RolloutResult rollout(ActionSource& source, const toy::ToyTask& task, uint64_t env_seed,
                      int max_steps, int execute_steps = 4, uint64_t plan_seed = 0);

// One evaluation event: all protocol rollouts advance in lockstep through one
// batched policy graph. Matches sequential Policy rollouts outcome-for-outcome
// (every environment keeps its own noise stream).
double eval_success_rate(const training::PolicyCheckpoint& ckpt, const toy::ToyTask& task,
                         const EvalProtocol& proto, int epoch);

// One (config, training seed) leg: trains with periodic evaluation events and
// optionally appends one JSON object per event to `metrics_path`.
struct RunSpec {
    std::string label;
    toy::TaskKind task = toy::TaskKind::Reach;
    training::TrainConfig tcfg;
    denoiser::DenoiserConfig dcfg;
    training::ScheduleSpec sched;
    perception::PerceptionConfig pcfg;
};

SeedRun train_and_eval(const toy::DemoDataset& demos, RunSpec spec, int seed,
                       const EvalProtocol& proto, const std::string& metrics_path = "",
                       const std::string& ckpt_path = "");

// All seeds of one spec; runs legs through the worker pool.
RunReport run_spec(const toy::DemoDataset& demos, const RunSpec& spec, const EvalProtocol& proto,
                   const std::string& out_dir = "");

// Evaluating existing artifacts instead of a live training stream.
RunReport evaluate_checkpoints(const std::vector<std::string>& paths, const EvalProtocol& proto,
                               const std::string& label = "checkpoints");
RunReport evaluate_streams(const std::vector<std::string>& jsonl_paths, const EvalProtocol& proto,
                           const std::string& label = "stream");

enum class AblationAxis { Injection, BetaMode, DemoCount };
AblationAxis axis_from_string(const std::string& s);
std::string to_string(AblationAxis axis);

struct AblationConfig {
    RunSpec base;
    EvalProtocol protocol;
    int demo_count = 10;  // demos for the Injection / BetaMode axes
    uint64_t demo_seed = 1000;
    std::vector<int> demo_counts{1, 5, 10, 20, 50};
    std::vector<double> beta_sweep{0.01, 0.1, 0.5, 1.0};
};

// Builds the per-axis run specs (one per axis value), all else held fixed.
std::vector<RunSpec> ablation_specs(AblationAxis axis, const RunSpec& base,
                                    const std::vector<double>& beta_sweep);

std::vector<RunReport> run_ablation(AblationAxis axis, const AblationConfig& cfg,
                                    const std::vector<toy::TaskKind>& tasks,
                                    const std::string& out_dir);

// Worker pool bounded by FD_THREADS (default: logical cores). Jobs run on
// worker threads with kernel parallelism pinned to one thread each whenever
// more than one worker is active.
int worker_count();
void run_jobs(const std::vector<std::function<void()>>& jobs);

}  // namespace fd::harness
