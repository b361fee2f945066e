#include "fd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include "fd/kernels.hpp"
#include "fd/report.hpp"

namespace fd::harness {

double top_k_mean(const std::vector<double>& rates, int top_k) {
    if (top_k < 1) raise("top_k must be >= 1");
    if (static_cast<int>(rates.size()) < top_k)
        raise("evaluate: " + std::to_string(rates.size()) + " events but top_k=" +
              std::to_string(top_k));
    std::vector<double> sorted(rates);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double acc = 0.0;
    for (int i = 0; i < top_k; ++i) acc += sorted[static_cast<size_t>(i)];
    return acc / top_k;
}

RunReport aggregate_report(const std::string& label, const std::string& task,
                           const std::string& fingerprint, std::vector<SeedRun> per_seed,
                           int top_k) {
    RunReport rep;
    rep.label = label;
    rep.task = task;
    rep.fingerprint = fingerprint;
    for (auto& sr : per_seed) {
        std::vector<double> rates;
        rates.reserve(sr.events.size());
        for (const auto& ev : sr.events) rates.push_back(ev.success_rate);
        sr.score = top_k_mean(rates, top_k);
    }
    double mean = 0.0;
    for (const auto& sr : per_seed) mean += sr.score;
    mean /= static_cast<double>(per_seed.size());
    double var = 0.0;
    for (const auto& sr : per_seed) {
        const double d = sr.score - mean;
        var += d * d;
    }
    var /= static_cast<double>(per_seed.size());  // population convention
    rep.per_seed = std::move(per_seed);
    rep.mean = mean;
    rep.stddev = std::sqrt(var);
    return rep;
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

Policy::Policy(const training::PolicyCheckpoint& ckpt, bool use_ema)
    : params_(use_ema ? ckpt.ema : ckpt.params), pcfg_(ckpt.pcfg), dcfg_(ckpt.dcfg) {
    const int n = toy::kPointCount;
    const int dr = pcfg_.proprio_dim;
    const int pp = percep_.input("pp", {1, n, 3});
    const int pr = percep_.input("pr", {1, dr});
    const int cp = percep_.input("cp", {1, n, 3});
    const int cr = percep_.input("cr", {1, dr});
    const int f_cur = perception::build_pair_encoder(percep_, params_, pp, pr, cp, cr);
    const int f_cons = perception::build_constructor(percep_, params_, f_cur);
    percep_.mark_output("f_cur", f_cur);
    percep_.mark_output("f_cons", f_cons);
    sampler_ = std::make_unique<denoiser::Sampler>(dcfg_, params_, ckpt.sched.build(),
                                                   ckpt.tcfg.infer_steps, 0.0);
}

Array Policy::plan(const toy::EnvState&, const perception::ObservationPair& pair, Rng& rng) {
    const int n = toy::kPointCount;
    const int dr = pcfg_.proprio_dim;
    auto out = percep_.forward({{"pp", pair.prev.points.reshaped({1, n, 3})},
                                {"pr", pair.prev.proprio.reshaped({1, dr})},
                                {"cp", pair.curr.points.reshaped({1, n, 3})},
                                {"cr", pair.curr.proprio.reshaped({1, dr})}});
    perception::Feature f_cur{out.at("f_cur").reshaped({perception::kFeatureDim}),
                              perception::FeatureRole::Current};
    perception::Feature f_cons{out.at("f_cons").reshaped({perception::kFeatureDim}),
                               perception::FeatureRole::Constructed};
    return sampler_->sample(f_cur, f_cons, rng);
}

Array ExpertOracle::plan(const toy::EnvState& state, const perception::ObservationPair&, Rng&) {
    const int adim = toy::action_dim_of(task_.kind);
    Array out({horizon_, adim});
    toy::EnvState sim = state;
    bool done = false;
    Array last({adim});
    for (int i = 0; i < horizon_; ++i) {
        if (!done) {
            last = toy::scripted_expert(task_, sim);
            auto r = toy::step(task_, sim, last);
            sim = std::move(r.state);
            done = r.done;
        }
        std::memcpy(out.data() + static_cast<int64_t>(i) * adim, last.data(),
                    sizeof(double) * static_cast<size_t>(adim));
    }
    return out;
}

RolloutResult rollout(ActionSource& source, const toy::ToyTask& task, uint64_t env_seed,
                      int max_steps, int execute_steps, uint64_t plan_seed) {
    if (execute_steps < 1) raise("rollout: execute_steps must be >= 1");
    RolloutResult res;
    auto [state, obs] = toy::reset(task, env_seed);
    perception::Observation prev = obs;
    perception::Observation curr = obs;
    Rng rng(mix_seed(plan_seed, env_seed, 0x9e3779b9ULL));
    const int adim = toy::action_dim_of(task.kind);
    while (res.steps < max_steps) {
        const Array seq = source.plan(state, perception::ObservationPair{prev, curr}, rng);
        for (int i = 0; i < execute_steps && res.steps < max_steps; ++i) {
            Array a({adim});
            std::memcpy(a.data(), seq.data() + static_cast<int64_t>(i) * seq.dim(1),
                        sizeof(double) * static_cast<size_t>(adim));
            auto r = toy::step(task, state, a);
            state = std::move(r.state);
            prev = std::move(curr);
            curr = std::move(r.obs);
            ++res.steps;
            if (r.done) {
                res.success = r.success;
                return res;
            }
        }
    }
    res.success = false;
    return res;
}

// ---------------------------------------------------------------------------
// Training legs and specs
// ---------------------------------------------------------------------------

double eval_success_rate(const training::PolicyCheckpoint& ckpt, const toy::ToyTask& task,
                         const EvalProtocol& proto, int epoch) {
    const int b = proto.rollouts_per_eval;
    const int n = toy::kPointCount;
    const int dr = ckpt.pcfg.proprio_dim;
    const int adim = ckpt.dcfg.action_dim;
    const int horizon = ckpt.dcfg.horizon;

    // Batched perception graph over all rollouts of the event.
    Graph percep;
    const int pp = percep.input("pp", {b, n, 3});
    const int pr = percep.input("pr", {b, dr});
    const int cp = percep.input("cp", {b, n, 3});
    const int cr = percep.input("cr", {b, dr});
    const int f_cur = perception::build_pair_encoder(percep, ckpt.ema, pp, pr, cp, cr);
    const int f_cons = perception::build_constructor(percep, ckpt.ema, f_cur);
    percep.mark_output("f_cur", f_cur);
    percep.mark_output("f_cons", f_cons);
    denoiser::Sampler sampler(ckpt.dcfg, ckpt.ema, ckpt.sched.build(), ckpt.tcfg.infer_steps,
                              0.0, 1.0, b);

    struct Lane {
        toy::EnvState state;
        perception::Observation prev, curr;
        Rng rng{0};
        bool done = false;
        bool success = false;
        int steps = 0;
    };
    std::vector<Lane> lanes(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        Lane& lane = lanes[static_cast<size_t>(i)];
        const uint64_t env_seed = proto.eval_scene_seed + static_cast<uint64_t>(i);
        auto [st, obs] = toy::reset(task, env_seed);
        lane.state = std::move(st);
        lane.prev = obs;
        lane.curr = std::move(obs);
        lane.rng.reseed(mix_seed(mix_seed(proto.eval_scene_seed, static_cast<uint64_t>(epoch),
                                          static_cast<uint64_t>(i)),
                                 env_seed, 0x9e3779b9ULL));
    }

    Array prev_pts({b, n, 3}), prev_prop({b, dr}), curr_pts({b, n, 3}), curr_prop({b, dr});
    Array noise({b, adim, horizon});
    bool any_active = true;
    while (any_active) {
        for (int i = 0; i < b; ++i) {
            const Lane& lane = lanes[static_cast<size_t>(i)];
            std::memcpy(prev_pts.data() + static_cast<int64_t>(i) * n * 3,
                        lane.prev.points.data(), sizeof(double) * static_cast<size_t>(n) * 3);
            std::memcpy(prev_prop.data() + static_cast<int64_t>(i) * dr,
                        lane.prev.proprio.data(), sizeof(double) * static_cast<size_t>(dr));
            std::memcpy(curr_pts.data() + static_cast<int64_t>(i) * n * 3,
                        lane.curr.points.data(), sizeof(double) * static_cast<size_t>(n) * 3);
            std::memcpy(curr_prop.data() + static_cast<int64_t>(i) * dr,
                        lane.curr.proprio.data(), sizeof(double) * static_cast<size_t>(dr));
        }
        auto feats = percep.forward({{"pp", prev_pts},
                                     {"pr", prev_prop},
                                     {"cp", curr_pts},
                                     {"cr", curr_prop}});
        for (int i = 0; i < b; ++i) {
            Lane& lane = lanes[static_cast<size_t>(i)];
            double* dst = noise.data() + static_cast<int64_t>(i) * adim * horizon;
            for (int j = 0; j < adim * horizon; ++j) dst[j] = lane.rng.normal();
        }
        const Array plans =
            sampler.sample_batch(feats.at("f_cur"), feats.at("f_cons"), noise);  // [B,H,A]
        any_active = false;
        for (int i = 0; i < b; ++i) {
            Lane& lane = lanes[static_cast<size_t>(i)];
            if (lane.done) continue;
            for (int k = 0; k < proto.execute_steps && !lane.done &&
                            lane.steps < task.max_steps;
                 ++k) {
                Array a({adim});
                std::memcpy(a.data(),
                            plans.data() +
                                (static_cast<int64_t>(i) * horizon + k) * adim,
                            sizeof(double) * static_cast<size_t>(adim));
                auto r = toy::step(task, lane.state, a);
                lane.state = std::move(r.state);
                lane.prev = std::move(lane.curr);
                lane.curr = std::move(r.obs);
                ++lane.steps;
                if (r.done) {
                    lane.done = true;
                    lane.success = r.success;
                }
            }
            if (lane.steps >= task.max_steps) lane.done = true;
            if (!lane.done) any_active = true;
        }
    }
    int hits = 0;
    for (const auto& lane : lanes) hits += lane.success;
    return static_cast<double>(hits) / proto.rollouts_per_eval;
}

SeedRun train_and_eval(const toy::DemoDataset& demos, RunSpec spec, int seed,
                       const EvalProtocol& proto, const std::string& metrics_path,
                       const std::string& ckpt_path) {
    spec.tcfg.seed = static_cast<uint64_t>(seed);
    spec.dcfg.action_dim = demos.action_dim;
    const toy::ToyTask task = toy::ToyTask::make(demos.task);
    SeedRun run;
    run.seed = seed;
    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::app);
        if (!metrics) raise("cannot open metrics stream '" + metrics_path + "'");
    }
    training::Trainer trainer(demos, spec.tcfg, spec.dcfg, spec.sched, spec.pcfg);
    auto hook = [&](int epoch, const training::StepStats& st,
                    const training::PolicyCheckpoint& ckpt) {
        if ((epoch + 1) % proto.eval_every != 0) return;
        const double rate = eval_success_rate(ckpt, task, proto, epoch);
        run.events.push_back(EvalEvent{epoch + 1, rate});
        if (metrics.is_open()) {
            nlohmann::json line{{"seed", seed},          {"epoch", epoch + 1},
                                {"l_diff", st.l_diff},   {"l_cons", st.l_cons},
                                {"l_total", st.l_total}, {"lr", st.lr},
                                {"success_rate", rate}};
            metrics << line.dump() << "\n";
            metrics.flush();
        }
    };
    auto ckpt = trainer.train(hook);
    if (!ckpt_path.empty()) training::save_checkpoint(ckpt_path, ckpt);
    return run;
}

namespace {

std::string spec_fingerprint(const RunSpec& spec) {
    training::PolicyCheckpoint probe;
    probe.dcfg = spec.dcfg;
    probe.tcfg = spec.tcfg;
    probe.sched = spec.sched;
    probe.pcfg = spec.pcfg;
    probe.task = toy::to_string(spec.task);
    return training::fingerprint(training::config_json(probe));
}

}  // namespace

RunReport run_spec(const toy::DemoDataset& demos, const RunSpec& spec, const EvalProtocol& proto,
                   const std::string& out_dir) {
    std::vector<SeedRun> runs(proto.seeds.size());
    std::vector<std::function<void()>> jobs;
    for (size_t i = 0; i < proto.seeds.size(); ++i) {
        jobs.push_back([&, i] {
            std::string metrics;
            if (!out_dir.empty())
                metrics = out_dir + "/" + spec.label + "_s" +
                          std::to_string(proto.seeds[i]) + ".metrics.jsonl";
            runs[i] = train_and_eval(demos, spec, proto.seeds[i], proto, metrics);
        });
    }
    run_jobs(jobs);
    return aggregate_report(spec.label, toy::to_string(spec.task), spec_fingerprint(spec),
                            std::move(runs), proto.top_k);
}

RunReport evaluate_checkpoints(const std::vector<std::string>& paths, const EvalProtocol& proto,
                               const std::string& label) {
    if (paths.empty()) raise("evaluate: no checkpoints given");
    std::map<int, SeedRun> by_seed;
    std::string task_name;
    std::string fp;
    for (const auto& path : paths) {
        const auto ckpt = training::load_checkpoint(path);
        task_name = ckpt.task;
        fp = training::fingerprint(training::config_json(ckpt));
        const toy::ToyTask task = toy::ToyTask::make(toy::task_from_string(ckpt.task));
        const int seed = static_cast<int>(ckpt.tcfg.seed);
        const double rate =
            eval_success_rate(ckpt, task, proto, static_cast<int>(ckpt.step));
        auto& run = by_seed[seed];
        run.seed = seed;
        run.events.push_back(EvalEvent{static_cast<int>(ckpt.step), rate});
    }
    std::vector<SeedRun> runs;
    for (auto& [seed, run] : by_seed) runs.push_back(std::move(run));
    return aggregate_report(label, task_name, fp, std::move(runs), proto.top_k);
}

RunReport evaluate_streams(const std::vector<std::string>& jsonl_paths, const EvalProtocol& proto,
                           const std::string& label) {
    if (jsonl_paths.empty()) raise("evaluate: no metric streams given");
    std::map<int, SeedRun> by_seed;
    for (const auto& path : jsonl_paths) {
        std::ifstream is(path);
        if (!is) raise("cannot open metrics stream '" + path + "'");
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            const int seed = j.at("seed").get<int>();
            auto& run = by_seed[seed];
            run.seed = seed;
            run.events.push_back(
                EvalEvent{j.at("epoch").get<int>(), j.at("success_rate").get<double>()});
        }
    }
    std::vector<SeedRun> runs;
    for (auto& [seed, run] : by_seed) runs.push_back(std::move(run));
    return aggregate_report(label, "", "", std::move(runs), proto.top_k);
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

AblationAxis axis_from_string(const std::string& s) {
    if (s == "injection") return AblationAxis::Injection;
    if (s == "beta") return AblationAxis::BetaMode;
    if (s == "demos") return AblationAxis::DemoCount;
    raise("unknown ablation axis '" + s + "' (want injection|beta|demos)");
}

std::string to_string(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::Injection: return "injection";
        case AblationAxis::BetaMode: return "beta";
        case AblationAxis::DemoCount: return "demos";
    }
    return "?";
}

std::vector<RunSpec> ablation_specs(AblationAxis axis, const RunSpec& base,
                                    const std::vector<double>& beta_sweep) {
    std::vector<RunSpec> specs;
    switch (axis) {
        case AblationAxis::Injection:
            for (const auto inj : {denoiser::Injection::None, denoiser::Injection::Early,
                                   denoiser::Injection::MidStage}) {
                RunSpec s = base;
                s.dcfg.injection = inj;
                s.label = "injection=" + denoiser::to_string(inj);
                specs.push_back(std::move(s));
            }
            break;
        case AblationAxis::BetaMode: {
            RunSpec off = base;
            off.tcfg.beta_mode = training::BetaMode::Off;
            off.label = "beta=off";
            specs.push_back(std::move(off));
            RunSpec dyn = base;
            dyn.tcfg.beta_mode = training::BetaMode::Dynamic;
            dyn.label = "beta=dynamic";
            specs.push_back(std::move(dyn));
            for (const double b : beta_sweep) {
                RunSpec s = base;
                s.tcfg.beta_mode = training::BetaMode::Fixed;
                s.tcfg.beta = b;
                char buf[32];
                std::snprintf(buf, sizeof(buf), "beta=fixed:%g", b);
                s.label = buf;
                specs.push_back(std::move(s));
            }
            break;
        }
        case AblationAxis::DemoCount:
            break;  // the demo axis varies data, not the spec
    }
    return specs;
}

std::vector<RunReport> run_ablation(AblationAxis axis, const AblationConfig& cfg,
                                    const std::vector<toy::TaskKind>& tasks,
                                    const std::string& out_dir) {
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    std::vector<RunReport> reports;
    for (const auto kind : tasks) {
        const toy::ToyTask task = toy::ToyTask::make(kind);
        RunSpec base = cfg.base;
        base.task = kind;
        base.dcfg.action_dim = toy::action_dim_of(kind);
        if (axis == AblationAxis::DemoCount) {
            const int max_count = *std::max_element(cfg.demo_counts.begin(), cfg.demo_counts.end());
            const auto superset = toy::generate_demos(task, max_count, cfg.demo_seed);
            for (const int n : cfg.demo_counts) {
                RunSpec s = base;
                s.label = "demos=" + std::to_string(n);
                reports.push_back(run_spec(superset.truncated(n), s, cfg.protocol, out_dir));
            }
        } else {
            const auto demos = toy::generate_demos(task, cfg.demo_count, cfg.demo_seed);
            for (const auto& s : ablation_specs(axis, base, cfg.beta_sweep))
                reports.push_back(run_spec(demos, s, cfg.protocol, out_dir));
        }
    }
    if (!out_dir.empty())
        export_report(reports, out_dir, to_string(axis), {"csv", "json", "svg"});
    return reports;
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

int worker_count() {
    if (const char* env = std::getenv("FD_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void run_jobs(const std::vector<std::function<void()>>& jobs) {
    const int workers = std::min<int>(worker_count(), static_cast<int>(jobs.size()));
    if (workers <= 1) {
        for (const auto& job : jobs) job();
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs.size());
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            kernels::set_threads(1);
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= jobs.size()) break;
                try {
                    jobs[i]();
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace fd::harness
