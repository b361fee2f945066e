#include "fd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace fd::training {

std::string to_string(BetaMode mode) {
    switch (mode) {
        case BetaMode::Off: return "off";
        case BetaMode::Fixed: return "fixed";
        case BetaMode::Dynamic: return "dynamic";
    }
    return "?";
}

void parse_beta_mode(const std::string& text, TrainConfig& cfg) {
    if (text == "off") {
        cfg.beta_mode = BetaMode::Off;
        return;
    }
    if (text.rfind("fixed:", 0) == 0) {
        cfg.beta_mode = BetaMode::Fixed;
        cfg.beta = std::stod(text.substr(6));
        if (cfg.beta < 0) raise("beta must be >= 0");
        return;
    }
    if (text.rfind("dynamic:", 0) == 0) {
        const std::string rest = text.substr(8);
        const size_t comma = rest.find(',');
        if (comma == std::string::npos) raise("dynamic beta needs '<max>,<rate>'");
        cfg.beta_mode = BetaMode::Dynamic;
        cfg.beta = std::stod(rest.substr(0, comma));
        cfg.beta_growth = std::stod(rest.substr(comma + 1));
        if (cfg.beta < 0 || cfg.beta_growth <= 0) raise("dynamic beta needs max >= 0 and rate > 0");
        return;
    }
    raise("bad beta mode '" + text + "' (want off|fixed:<w>|dynamic:<w>,<rate>)");
}

std::string beta_mode_string(const TrainConfig& cfg) {
    switch (cfg.beta_mode) {
        case BetaMode::Off: return "off";
        case BetaMode::Fixed: return "fixed:" + std::to_string(cfg.beta);
        case BetaMode::Dynamic:
            return "dynamic:" + std::to_string(cfg.beta) + "," + std::to_string(cfg.beta_growth);
    }
    return "?";
}

double beta_at(const TrainConfig& cfg, int64_t step) {
    switch (cfg.beta_mode) {
        case BetaMode::Off: return 0.0;
        case BetaMode::Fixed: return cfg.beta;
        case BetaMode::Dynamic:
            // Saturating growth toward the ceiling.
            return cfg.beta * (1.0 - std::exp(-cfg.beta_growth * static_cast<double>(step)));
    }
    return 0.0;
}

double lr_at(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    const int64_t tail = std::max<int64_t>(total_steps - cfg.warmup_steps, 1);
    const double frac = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(tail);
    return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * std::min(frac, 1.0)));
}

double total_loss(double l_diff, double l_cons, const TrainConfig& cfg, int64_t step) {
    if (!std::isfinite(l_diff) || !std::isfinite(l_cons)) raise("total_loss: non-finite input");
    if (cfg.beta_mode == BetaMode::Off) return l_diff;
    return l_diff + beta_at(cfg, step) * l_cons;
}

double construction_loss(const perception::Feature& f_cons, const perception::Feature& f_gt) {
    if (f_cons.role != perception::FeatureRole::Constructed)
        raise("construction_loss: first argument must be a constructed feature");
    if (f_gt.role != perception::FeatureRole::Target)
        raise("construction_loss: second argument must be a target feature");
    if (!f_cons.vec.same_shape(f_gt.vec)) raise("construction_loss: width mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < f_cons.vec.numel(); ++i) {
        const double d = f_cons.vec[i] - f_gt.vec[i];
        acc += d * d;
    }
    return acc / static_cast<double>(f_cons.vec.numel());
}

void ema_update(Array& shadow, const Array& live, double decay) {
    if (!shadow.same_shape(live)) raise("ema_update: shape mismatch");
    if (decay < 0.0 || decay >= 1.0) raise("ema_update: decay must be in [0,1)");
    for (int64_t i = 0; i < shadow.numel(); ++i)
        shadow[i] = decay * shadow[i] + (1.0 - decay) * live[i];
}

void ema_update(ParamStore& shadow, const ParamStore& live, double decay) {
    auto& sm = shadow.map();
    const auto& lm = live.map();
    if (sm.size() != lm.size()) raise("ema_update: store size mismatch");
    auto si = sm.begin();
    for (const auto& [name, arr] : lm) {
        if (si->first != name) raise("ema_update: store key mismatch at '" + name + "'");
        ema_update(si->second, arr, decay);
        ++si;
    }
}

void AdamW::step(ParamStore& params, const ArrayMap& grads, double lr) {
    ++t_;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto& [name, p] : params.map()) {
        const auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Array& g = it->second;
        auto mi = m_.find(name);
        if (mi == m_.end()) {
            mi = m_.emplace(name, Array(p.shape())).first;
            v_.emplace(name, Array(p.shape()));
        }
        Array& m = mi->second;
        Array& v = v_.at(name);
        for (int64_t i = 0; i < p.numel(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) + cfg_.weight_decay * p[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

// Per-item noise stream: stable under batch reordering.
uint64_t item_stream(uint64_t seed, uint64_t a, uint64_t b) { return mix_seed(seed, a, b); }

struct BatchInputs {
    ArrayMap map;
    int b = 0, bcons = 0;
};

struct TrainGraph {
    Graph g;
    int l_diff = -1, l_cons = -1, l_total = -1;
};

}  // namespace

struct Trainer::Impl {
    toy::DemoDataset dataset;
    std::vector<toy::TrainSample> samples;
    TrainConfig tcfg;
    denoiser::DenoiserConfig dcfg;
    ScheduleSpec sspec;
    perception::PerceptionConfig pcfg;
    diffusion::NoiseSchedule sched;
    PolicyCheckpoint ckpt;
    int64_t total_steps = 0;

    std::map<std::pair<int, int>, std::unique_ptr<TrainGraph>> graph_cache;
    std::map<int, std::unique_ptr<Graph>> target_cache;  // F_gt encoder per batch size

    Impl(const toy::DemoDataset& ds, TrainConfig tc, denoiser::DenoiserConfig dc,
         ScheduleSpec ss, perception::PerceptionConfig pc)
        : dataset(ds), tcfg(tc), dcfg(dc), sspec(ss), pcfg(pc), sched(ss.build()) {
        if (dataset.episodes.empty()) raise("train: dataset is empty");
        if (dataset.action_dim != dcfg.action_dim)
            raise("train: dataset action dim " + std::to_string(dataset.action_dim) +
                  " != denoiser config " + std::to_string(dcfg.action_dim));
        if (dataset.proprio_dim != pcfg.proprio_dim)
            raise("train: dataset proprio width mismatch vs perception config");
        dcfg.validate();
        samples = toy::make_samples(dataset);
        const int64_t per_epoch =
            (static_cast<int64_t>(samples.size()) + tcfg.batch - 1) / tcfg.batch;
        total_steps = per_epoch * tcfg.epochs;
        Rng rng(mix_seed(tcfg.seed, 1));
        perception::init_perception_params(ckpt.params, pcfg, rng);
        denoiser::init_denoiser_params(ckpt.params, dcfg, rng);
        ckpt.ema = ckpt.params;
        ckpt.dcfg = dcfg;
        ckpt.sched = sspec;
        ckpt.tcfg = tcfg;
        ckpt.pcfg = pcfg;
        ckpt.task = toy::to_string(dataset.task);
    }

    TrainGraph& graph_for(int b, int bcons) {
        auto key = std::make_pair(b, bcons);
        auto it = graph_cache.find(key);
        if (it != graph_cache.end()) return *it->second;
        auto tg = std::make_unique<TrainGraph>();
        Graph& g = tg->g;
        const int n = dataset.point_count;
        const int dr = pcfg.proprio_dim;
        const int a = dcfg.action_dim, h = dcfg.horizon;
        const int pp = g.input("prev_pts", {b, n, 3});
        const int pr = g.input("prev_prop", {b, dr});
        const int cp = g.input("curr_pts", {b, n, 3});
        const int cr = g.input("curr_prop", {b, dr});
        const int an = g.input("a_noisy", {b, a, h});
        const int en = g.input("eps", {b, a, h});
        const int kn = g.input("kstep", {b});
        const int f_cur = perception::build_pair_encoder(g, ckpt.params, pp, pr, cp, cr);
        int cons_in = f_cur;
        if (tcfg.detach_current_feature)
            cons_in = g.input("f_cur_det", {b, perception::kFeatureDim});
        const int f_cons = perception::build_constructor(g, ckpt.params, cons_in);
        const int emb = g.sin_embed(kn, perception::kTimeEmbedDim);
        const int cond_g = g.concat(f_cur, emb, 1);
        const int cond_ghat = g.concat(f_cons, emb, 1);
        const int eps_hat = denoiser::build_denoiser(g, ckpt.params, dcfg, an, cond_g, cond_ghat);
        tg->l_diff = g.mse(eps_hat, en);
        const bool with_cons = bcons > 0 && tcfg.beta_mode != BetaMode::Off;
        if (with_cons) {
            const int fgt = g.input("f_gt", {bcons, perception::kFeatureDim});
            const int head =
                bcons == b ? f_cons : g.split(f_cons, 0, 0, bcons);
            tg->l_cons = g.mse(head, fgt);
            const int bn = g.input("beta", {1});
            tg->l_total = g.add(tg->l_diff, g.mul(tg->l_cons, bn));
        } else {
            tg->l_total = tg->l_diff;
        }
        g.mark_output("l_total", tg->l_total);
        auto [pos, ok] = graph_cache.emplace(key, std::move(tg));
        (void)ok;
        return *pos->second;
    }

    // Frozen pair encoder (forward only) reused for the F_gt targets and the
    // optional detached current feature.
    Graph& pair_graph(int rows) {
        auto it = target_cache.find(rows);
        if (it != target_cache.end()) return *it->second;
        auto g = std::make_unique<Graph>();
        const int n = dataset.point_count;
        const int dr = pcfg.proprio_dim;
        const int ap = g->input("a_pts", {rows, n, 3});
        const int ar = g->input("a_prop", {rows, dr});
        const int bp = g->input("b_pts", {rows, n, 3});
        const int br = g->input("b_prop", {rows, dr});
        const int f = perception::build_pair_encoder(*g, ckpt.params, ap, ar, bp, br);
        g->mark_output("f", f);
        auto [pos, ok] = target_cache.emplace(rows, std::move(g));
        (void)ok;
        return *pos->second;
    }

    // Gathers one batch; samples with a next observation are ordered first.
    BatchInputs assemble(const std::vector<int>& idx, int64_t step) {
        const int b = static_cast<int>(idx.size());
        std::vector<int> order(idx.begin(), idx.end());
        std::stable_partition(order.begin(), order.end(), [&](int i) {
            return samples[static_cast<size_t>(i)].next_observation().has_value();
        });
        int bcons = 0;
        for (int i : order)
            if (samples[static_cast<size_t>(i)].next_observation().has_value()) ++bcons;

        const int n = dataset.point_count;
        const int dr = pcfg.proprio_dim;
        const int a = dcfg.action_dim, h = dcfg.horizon;
        BatchInputs in;
        in.b = b;
        in.bcons = bcons;
        Array prev_pts({b, n, 3}), prev_prop({b, dr}), curr_pts({b, n, 3}), curr_prop({b, dr});
        Array a_noisy({b, a, h}), eps({b, a, h}), kstep({b});
        Array next_pts, next_prop;
        if (bcons > 0) {
            next_pts = Array({bcons, n, 3});
            next_prop = Array({bcons, dr});
        }
        for (int i = 0; i < b; ++i) {
            const auto& s = samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
            const auto pair = s.pair();
            std::memcpy(prev_pts.data() + static_cast<int64_t>(i) * n * 3,
                        pair.prev.points.data(), sizeof(double) * static_cast<size_t>(n) * 3);
            std::memcpy(prev_prop.data() + static_cast<int64_t>(i) * dr,
                        pair.prev.proprio.data(), sizeof(double) * static_cast<size_t>(dr));
            std::memcpy(curr_pts.data() + static_cast<int64_t>(i) * n * 3,
                        pair.curr.points.data(), sizeof(double) * static_cast<size_t>(n) * 3);
            std::memcpy(curr_prop.data() + static_cast<int64_t>(i) * dr,
                        pair.curr.proprio.data(), sizeof(double) * static_cast<size_t>(dr));
            if (i < bcons) {
                const auto next = s.next_observation();
                std::memcpy(next_pts.data() + static_cast<int64_t>(i) * n * 3,
                            next->points.data(), sizeof(double) * static_cast<size_t>(n) * 3);
                std::memcpy(next_prop.data() + static_cast<int64_t>(i) * dr,
                            next->proprio.data(), sizeof(double) * static_cast<size_t>(dr));
            }
            // Per-item diffusion draw.
            Rng rng(item_stream(tcfg.seed, static_cast<uint64_t>(step),
                                static_cast<uint64_t>(order[static_cast<size_t>(i)])));
            const int k = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(sched.steps)));
            kstep[i] = static_cast<double>(k);
            const Array window = s.action_window(h);  // [H,A]
            const double ca = std::sqrt(sched.alpha_bar(k));
            const double cn = std::sqrt(1.0 - sched.alpha_bar(k));
            for (int ch = 0; ch < a; ++ch)
                for (int t = 0; t < h; ++t) {
                    const int64_t at = (static_cast<int64_t>(i) * a + ch) * h + t;
                    const double e = rng.normal();
                    eps[at] = e;
                    a_noisy[at] = ca * window.at2(t, ch) + cn * e;
                }
        }
        in.map = {{"prev_pts", std::move(prev_pts)}, {"prev_prop", std::move(prev_prop)},
                  {"curr_pts", std::move(curr_pts)}, {"curr_prop", std::move(curr_prop)},
                  {"a_noisy", std::move(a_noisy)},   {"eps", std::move(eps)},
                  {"kstep", std::move(kstep)}};
        if (bcons > 0 && tcfg.beta_mode != BetaMode::Off) {
            Graph& tgt = pair_graph(bcons);
            Array f_gt =
                tgt.forward({{"a_pts", bcons == b ? in.map.at("curr_pts")
                                                  : slice_axis(in.map.at("curr_pts"), 0, 0, bcons)},
                             {"a_prop", bcons == b
                                            ? in.map.at("curr_prop")
                                            : slice_axis(in.map.at("curr_prop"), 0, 0, bcons)},
                             {"b_pts", std::move(next_pts)},
                             {"b_prop", std::move(next_prop)}})
                    .at("f");
            in.map["f_gt"] = std::move(f_gt);
            in.map["beta"] = Array({1}, {beta_at(tcfg, step)});
        }
        if (tcfg.detach_current_feature) {
            Graph& enc = pair_graph(b);
            in.map["f_cur_det"] = enc.forward({{"a_pts", in.map.at("prev_pts")},
                                               {"a_prop", in.map.at("prev_prop")},
                                               {"b_pts", in.map.at("curr_pts")},
                                               {"b_prop", in.map.at("curr_prop")}})
                                      .at("f");
        }
        return in;
    }

    struct EvalOut {
        TrainGraph* tg = nullptr;
        StepStats stats;
    };

    EvalOut eval_batch(const std::vector<int>& idx, int64_t step) {
        BatchInputs in = assemble(idx, step);
        TrainGraph& tg = graph_for(in.b, tcfg.beta_mode != BetaMode::Off ? in.bcons : 0);
        ArrayMap out;
        try {
            out = tg.g.forward(in.map);
        } catch (const Error& e) {
            raise("training step " + std::to_string(step) + ": " + e.what());
        }
        EvalOut ev;
        ev.tg = &tg;
        ev.stats.step = step;
        ev.stats.l_total = out.at("l_total")[0];
        ev.stats.l_diff = tg.g.value(tg.l_diff)[0];
        ev.stats.l_cons = tg.l_cons >= 0 ? tg.g.value(tg.l_cons)[0] : 0.0;
        ev.stats.lr = lr_at(tcfg, step, total_steps);
        if (!std::isfinite(ev.stats.l_total))
            raise("training aborted: non-finite loss at step " + std::to_string(step));
        return ev;
    }

    StepStats run_step(const std::vector<int>& idx, int64_t step, AdamW& opt) {
        EvalOut ev = eval_batch(idx, step);
        const ArrayMap grads = ev.tg->g.backward(ev.tg->l_total);
        opt.step(ckpt.params, grads, ev.stats.lr);
        ema_update(ckpt.ema, ckpt.params, tcfg.ema_decay);
        ckpt.step = step + 1;
        return ev.stats;
    }
};

Trainer::Trainer(const toy::DemoDataset& ds, TrainConfig tcfg, denoiser::DenoiserConfig dcfg,
                 ScheduleSpec sspec, perception::PerceptionConfig pcfg)
    : impl_(std::make_unique<Impl>(ds, tcfg, dcfg, sspec, pcfg)) {
    total_steps_ = impl_->total_steps;
}

Trainer::~Trainer() = default;

LossProbe Trainer::probe_step(const std::vector<int>& sample_indices, int64_t step) {
    Impl& im = *impl_;
    Impl::EvalOut ev = im.eval_batch(sample_indices, step);
    LossProbe probe;
    probe.stats = ev.stats;
    probe.grads_total = ev.tg->g.backward(ev.tg->l_total);
    if (ev.tg->l_cons >= 0) {
        probe.grads_diff = ev.tg->g.backward(ev.tg->l_diff);
        probe.grads_cons = ev.tg->g.backward(ev.tg->l_cons);
    } else {
        probe.grads_diff = probe.grads_total;
    }
    return probe;
}

int64_t Trainer::sample_count() const { return static_cast<int64_t>(impl_->samples.size()); }

const PolicyCheckpoint& Trainer::checkpoint() const { return impl_->ckpt; }

PolicyCheckpoint Trainer::train(const EpochHook& hook) {
    Impl& im = *impl_;
    AdamW opt(im.tcfg);
    const int64_t count = static_cast<int64_t>(im.samples.size());
    std::vector<int> order(static_cast<size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    int64_t step = 0;
    for (int epoch = 0; epoch < im.tcfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(im.tcfg.seed, 777, static_cast<uint64_t>(epoch)));
        for (int64_t i = count - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.below(static_cast<uint64_t>(i + 1)))]);
        StepStats acc;
        int64_t batches = 0;
        for (int64_t start = 0; start < count; start += im.tcfg.batch) {
            const int64_t stop = std::min(count, start + im.tcfg.batch);
            std::vector<int> idx(order.begin() + start, order.begin() + stop);
            const StepStats st = im.run_step(idx, step, opt);
            acc.l_diff += st.l_diff;
            acc.l_cons += st.l_cons;
            acc.l_total += st.l_total;
            acc.lr = st.lr;
            acc.step = st.step;
            ++step;
            ++batches;
        }
        if (hook && batches > 0) {
            acc.l_diff /= static_cast<double>(batches);
            acc.l_cons /= static_cast<double>(batches);
            acc.l_total /= static_cast<double>(batches);
            hook(epoch, acc, im.ckpt);
        }
    }
    return std::move(im.ckpt);
}

double diffusion_loss(const std::vector<toy::TrainSample>& batch, const PolicyCheckpoint& ckpt,
                      uint64_t rng_seed, const Array* eps_pred_override) {
    if (batch.empty()) raise("diffusion_loss: empty batch");
    const auto sched = ckpt.sched.build();
    const int a = ckpt.dcfg.action_dim, h = ckpt.dcfg.horizon;
    double acc = 0.0;
    for (const auto& s : batch) {
        Rng rng(item_stream(rng_seed, s.episode->seed, static_cast<uint64_t>(s.t)));
        const int k = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(sched.steps)));
        const Array window = s.action_window(h);
        Array eps({h, a});
        // Channel-major draw matches the trainer's per-item stream layout.
        for (int ch = 0; ch < a; ++ch)
            for (int t = 0; t < h; ++t) eps.at2(t, ch) = rng.normal();
        const Array a_k = diffusion::forward_diffuse(window, k, eps, sched);
        Array pred;
        if (eps_pred_override) {
            pred = *eps_pred_override;
        } else {
            const auto pair = s.pair();
            const auto f_cur = perception::encode_pair(pair, ckpt.params, ckpt.pcfg);
            const auto f_cons = perception::construct_future(f_cur, ckpt.params);
            const auto cond = perception::make_conditions(f_cur, f_cons, k, sched.steps);
            pred = denoiser::predict_noise(denoiser::NoisyActionSeq{a_k, k}, cond, ckpt.dcfg,
                                           ckpt.params);
        }
        double item = 0.0;
        for (int64_t i = 0; i < eps.numel(); ++i) {
            const double d = pred[i] - eps[i];
            item += d * d;
        }
        acc += item / static_cast<double>(eps.numel());
    }
    return acc / static_cast<double>(batch.size());
}

}  // namespace fd::training
