#include "fd/denoiser.hpp"

namespace fd::denoiser {

Injection injection_from_string(const std::string& s) {
    if (s == "none") return Injection::None;
    if (s == "early") return Injection::Early;
    if (s == "mid") return Injection::MidStage;
    raise("unknown injection position '" + s + "' (want none|early|mid)");
}

std::string to_string(Injection inj) {
    switch (inj) {
        case Injection::None: return "none";
        case Injection::Early: return "early";
        case Injection::MidStage: return "mid";
    }
    return "?";
}

void DenoiserConfig::validate() const {
    if (action_dim < 1) raise("denoiser: action_dim must be >= 1");
    if (horizon < 4 || horizon % 4 != 0) raise("denoiser: horizon must be a positive multiple of 4");
    for (int c : down_channels)
        if (c % norm_groups != 0) raise("denoiser: down channels must divide into norm groups");
    if (bottleneck_channels % norm_groups != 0)
        raise("denoiser: bottleneck channels must divide into norm groups");
    if (cond_dim_down < 1 || cond_dim_up < 1) raise("denoiser: conditioning dims must be >= 1");
}

namespace {

constexpr int kCondWidth = perception::kConditionDim;

int cond_input_width(const DenoiserConfig& cfg) {
    return cfg.injection == Injection::Early ? 2 * kCondWidth : kCondWidth;
}

void init_film(ParamStore& ps, const std::string& prefix, int cond_dim, int channels) {
    // Zero projections make FiLM the identity at initialization.
    ps.add(prefix + ".wg", Array({cond_dim, channels}));
    ps.add(prefix + ".bg", Array({channels}));
    ps.add(prefix + ".wd", Array({cond_dim, channels}));
    ps.add(prefix + ".bd", Array({channels}));
}

void init_block(ParamStore& ps, const std::string& prefix, int cin, int cout, int ksize,
                int film_dim, bool second_film, Rng& rng) {
    ps.add(prefix + ".conv.w", init_weight({cout, cin, ksize}, cin * ksize, rng));
    ps.add(prefix + ".conv.b", Array({cout}));
    ps.add(prefix + ".gn.g", Array::full({cout}, 1.0));
    ps.add(prefix + ".gn.b", Array({cout}));
    init_film(ps, prefix + ".film", film_dim, cout);
    if (second_film) init_film(ps, prefix + ".film2", film_dim, cout);
    // 1x1 bypass: normalization strips per-sample scale, the residual path
    // carries it through
    ps.add(prefix + ".res.w", init_weight({cout, cin, 1}, cin, rng));
    ps.add(prefix + ".res.b", Array({cout}));
}

}  // namespace

void init_denoiser_params(ParamStore& ps, const DenoiserConfig& cfg, Rng& rng) {
    cfg.validate();
    const int a = cfg.action_dim;
    const int c0 = cfg.down_channels[0];
    const int c1 = cfg.down_channels[1];
    const int cb = cfg.bottleneck_channels;
    const int cw = cond_input_width(cfg);
    const bool mid2 = cfg.injection == Injection::MidStage;

    ps.add("denoiser.gproj_down.w", init_weight({cw, cfg.cond_dim_down}, cw, rng));
    ps.add("denoiser.gproj_down.b", Array({cfg.cond_dim_down}));
    ps.add("denoiser.gproj_up.w", init_weight({cw, cfg.cond_dim_up}, cw, rng));
    ps.add("denoiser.gproj_up.b", Array({cfg.cond_dim_up}));
    if (mid2) {
        ps.add("denoiser.hproj.w", init_weight({kCondWidth, cfg.cond_dim_up}, kCondWidth, rng));
        ps.add("denoiser.hproj.b", Array({cfg.cond_dim_up}));
    }

    init_block(ps, "denoiser.d1", a, c0, 3, cfg.cond_dim_down, false, rng);
    init_block(ps, "denoiser.d2", c0, c1, 3, cfg.cond_dim_down, false, rng);
    init_block(ps, "denoiser.mid", c1, cb, 3, cfg.cond_dim_up, mid2, rng);

    ps.add("denoiser.u1.tconv.w", init_weight({cb, c1, 4}, cb * 4, rng));
    ps.add("denoiser.u1.tconv.b", Array({c1}));
    init_block(ps, "denoiser.u1", c1 + c0, c1, 3, cfg.cond_dim_up, mid2, rng);

    ps.add("denoiser.u2.tconv.w", init_weight({c1, c0, 4}, c1 * 4, rng));
    ps.add("denoiser.u2.tconv.b", Array({c0}));
    init_block(ps, "denoiser.u2", c0 + a, c0, 3, cfg.cond_dim_up, mid2, rng);

    // Zero final projection: an untrained denoiser predicts zero noise.
    ps.add("denoiser.final.w", Array({a, c0, 1}));
    ps.add("denoiser.final.b", Array({a}));
}

int64_t denoiser_param_count(const DenoiserConfig& cfg) {
    ParamStore tmp;
    Rng rng(0);
    init_denoiser_params(tmp, cfg, rng);
    return tmp.total_elems();
}

namespace {

struct BlockCtx {
    Graph* g;
    const ParamStore* ps;
    int groups;
};

int film(BlockCtx& ctx, const std::string& prefix, int h, int stage_cond) {
    Graph& g = *ctx.g;
    auto p = [&](const std::string& n) { return g.param(n, ctx.ps->ptr(n)); };
    const int gamma = g.affine(stage_cond, p(prefix + ".wg"), p(prefix + ".bg"));
    const int delta = g.affine(stage_cond, p(prefix + ".wd"), p(prefix + ".bd"));
    return g.scale_shift(h, gamma, delta);
}

int block(BlockCtx& ctx, const std::string& prefix, int x, int stage_cond, int stage_cond2,
          int stride) {
    Graph& g = *ctx.g;
    auto p = [&](const std::string& n) { return g.param(n, ctx.ps->ptr(n)); };
    int h = g.conv1d(x, p(prefix + ".conv.w"), p(prefix + ".conv.b"), stride, Padding::Same);
    h = g.group_norm(h, p(prefix + ".gn.g"), p(prefix + ".gn.b"), ctx.groups);
    h = g.mish(h);
    h = film(ctx, prefix + ".film", h, stage_cond);
    if (stage_cond2 >= 0) h = film(ctx, prefix + ".film2", h, stage_cond2);
    const int res =
        g.conv1d(x, p(prefix + ".res.w"), p(prefix + ".res.b"), stride, Padding::Same);
    return g.add(h, res);
}

}  // namespace

int build_denoiser(Graph& g, const ParamStore& ps, const DenoiserConfig& cfg, int actions,
                   int cond_g, int cond_ghat, DenoiserTaps* taps) {
    cfg.validate();
    if (cfg.injection != Injection::None && cond_ghat < 0)
        raise("denoiser: injection position '" + to_string(cfg.injection) +
              "' requires the future condition");
    BlockCtx ctx{&g, &ps, cfg.norm_groups};
    auto p = [&](const std::string& n) { return g.param(n, ps.ptr(n)); };

    const int cond_base =
        cfg.injection == Injection::Early ? g.concat(cond_g, cond_ghat, 1) : cond_g;
    const int cd = g.mish(g.affine(cond_base, p("denoiser.gproj_down.w"), p("denoiser.gproj_down.b")));
    const int cu = g.mish(g.affine(cond_base, p("denoiser.gproj_up.w"), p("denoiser.gproj_up.b")));
    const int ch = cfg.injection == Injection::MidStage
                       ? g.mish(g.affine(cond_ghat, p("denoiser.hproj.w"), p("denoiser.hproj.b")))
                       : -1;

    const int d1 = block(ctx, "denoiser.d1", actions, cd, -1, 2);  // [B,c0,H/2]
    const int d2 = block(ctx, "denoiser.d2", d1, cd, -1, 2);       // [B,c1,H/4]
    const int mid = block(ctx, "denoiser.mid", d2, cu, ch, 1);     // [B,cb,H/4]

    int u = g.conv1d_t(mid, p("denoiser.u1.tconv.w"), p("denoiser.u1.tconv.b"));  // [B,c1,H/2]
    u = g.concat(u, d1, 1);
    const int u1 = block(ctx, "denoiser.u1", u, cu, ch, 1);

    u = g.conv1d_t(u1, p("denoiser.u2.tconv.w"), p("denoiser.u2.tconv.b"));  // [B,c0,H]
    u = g.concat(u, actions, 1);
    const int u2 = block(ctx, "denoiser.u2", u, cu, ch, 1);

    const int out = g.conv1d(u2, p("denoiser.final.w"), p("denoiser.final.b"), 1, Padding::Same);
    if (taps) *taps = DenoiserTaps{d1, d2, mid, u1, u2, out};
    return out;
}

Array film_modulate(const Array& h, const Array& cond, const Array& wg, const Array& bg,
                    const Array& wd, const Array& bd) {
    if (h.rank() != 2) raise("film_modulate: h must be [C,L]");
    if (cond.rank() != 1) raise("film_modulate: cond must be rank 1");
    if (wg.rank() != 2 || wg.dim(0) != cond.dim(0) || wg.dim(1) != h.dim(0))
        raise("film_modulate: scale projection must be [" + std::to_string(cond.dim(0)) + "," +
              std::to_string(h.dim(0)) + "]");
    Graph g;
    const int hn = g.input("h", {1, h.dim(0), h.dim(1)});
    const int cn = g.input("c", {1, cond.dim(0)});
    const int gamma = g.affine(cn, g.param("wg", &wg), g.param("bg", &bg));
    const int delta = g.affine(cn, g.param("wd", &wd), g.param("bd", &bd));
    const int out = g.scale_shift(hn, gamma, delta);
    g.mark_output("y", out);
    Array y = g.forward({{"h", h.reshaped({1, h.dim(0), h.dim(1)})},
                         {"c", cond.reshaped({1, cond.dim(0)})}})
                  .at("y");
    return y.reshaped({h.dim(0), h.dim(1)});
}

namespace {

Array to_channels_first(const Array& hw) {  // [H,A] -> [1,A,H]
    const int h = hw.dim(0), a = hw.dim(1);
    Array out({1, a, h});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < a; ++j) out[static_cast<int64_t>(j) * h + i] = hw.at2(i, j);
    return out;
}

Array to_horizon_first(const Array& bah) {  // [1,A,H] -> [H,A]
    const int a = bah.dim(1), h = bah.dim(2);
    Array out({h, a});
    for (int j = 0; j < a; ++j)
        for (int i = 0; i < h; ++i) out.at2(i, j) = bah[static_cast<int64_t>(j) * h + i];
    return out;
}

}  // namespace

Array predict_noise(const NoisyActionSeq& a, const perception::ConditionPair& cond,
                    const DenoiserConfig& cfg, const ParamStore& ps) {
    cfg.validate();
    if (a.values.shape() != std::vector<int>{cfg.horizon, cfg.action_dim})
        raise("predict_noise: action sequence must be [" + std::to_string(cfg.horizon) + "," +
              std::to_string(cfg.action_dim) + "], got " + a.values.shape_str());
    const bool has_ghat = !cond.g_hat.empty();
    if (cfg.injection != Injection::None && !has_ghat)
        raise("predict_noise: injection '" + to_string(cfg.injection) +
              "' requires the future condition");
    Graph g;
    const int an = g.input("a", {1, cfg.action_dim, cfg.horizon});
    const int gn = g.input("g", {1, kCondWidth});
    const int hn = has_ghat ? g.input("ghat", {1, kCondWidth}) : -1;
    const int out = build_denoiser(g, ps, cfg, an, gn, hn);
    g.mark_output("eps", out);
    ArrayMap in{{"a", to_channels_first(a.values)}, {"g", cond.g.reshaped({1, kCondWidth})}};
    if (has_ghat) in["ghat"] = cond.g_hat.reshaped({1, kCondWidth});
    return to_horizon_first(g.forward(in).at("eps"));
}

Sampler::Sampler(const DenoiserConfig& cfg, const ParamStore& ps, diffusion::NoiseSchedule sched,
                 int infer_steps, double eta, double x0_clip, int batch)
    : cfg_(cfg),
      sched_(std::move(sched)),
      infer_steps_(infer_steps),
      eta_(eta),
      x0_clip_(x0_clip),
      batch_(batch) {
    cfg_.validate();
    if (batch_ < 1) raise("sampler: batch must be >= 1");
    const int an = graph_.input("a", {batch_, cfg_.action_dim, cfg_.horizon});
    const int gn = graph_.input("g", {batch_, kCondWidth});
    const int hn = graph_.input("ghat", {batch_, kCondWidth});
    const int out = build_denoiser(graph_, ps, cfg_, an, gn, hn);
    graph_.mark_output("eps", out);
}

Array Sampler::sample(const perception::Feature& f_cur, const perception::Feature& f_cons,
                      Rng& rng) {
    if (batch_ != 1) raise("sampler: single-sequence sampling needs batch == 1");
    if (eta_ > 0.0) {
        // the stochastic path draws fresh noise per step, so it stays here
        Array a({1, cfg_.action_dim, cfg_.horizon});
        for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.normal();
        Array z(a.shape());
        const auto ts = diffusion::strided_steps(sched_.steps, infer_steps_);
        for (size_t i = 0; i < ts.size(); ++i) {
            const int t = ts[i];
            const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
            const auto cond = perception::make_conditions(f_cur, f_cons, t, sched_.steps);
            ArrayMap in{{"a", a},
                        {"g", cond.g.reshaped({1, kCondWidth})},
                        {"ghat", cond.g_hat.reshaped({1, kCondWidth})}};
            const Array eps = graph_.forward(in).at("eps");
            for (int64_t j = 0; j < z.numel(); ++j) z[j] = t_prev > 0 ? rng.normal() : 0.0;
            a = diffusion::ddim_step(a, eps, t, t_prev, eta_, sched_, z, x0_clip_);
        }
        return to_horizon_first(a);
    }
    Array noise({1, cfg_.action_dim, cfg_.horizon});
    for (int64_t i = 0; i < noise.numel(); ++i) noise[i] = rng.normal();
    const Array out = sample_batch(f_cur.vec.reshaped({1, perception::kFeatureDim}),
                                   f_cons.vec.reshaped({1, perception::kFeatureDim}), noise);
    Array seq({cfg_.horizon, cfg_.action_dim});
    std::copy(out.data(), out.data() + out.numel(), seq.data());
    return seq;
}

Array Sampler::sample_batch(const Array& f_cur, const Array& f_cons, const Array& init_noise) {
    if (eta_ > 0.0) raise("sampler: lockstep batching supports eta == 0 only");
    const std::vector<int> feat_shape{batch_, perception::kFeatureDim};
    if (f_cur.shape() != feat_shape || f_cons.shape() != feat_shape)
        raise("sampler: batched features must be [batch, feature]");
    if (init_noise.shape() != std::vector<int>{batch_, cfg_.action_dim, cfg_.horizon})
        raise("sampler: initial noise must be [batch, action, horizon]");
    Array a = init_noise;
    const Array z(a.shape());
    Array g({batch_, kCondWidth}), ghat({batch_, kCondWidth});
    const auto ts = diffusion::strided_steps(sched_.steps, infer_steps_);
    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const Array emb = perception::time_embedding(t, perception::kTimeEmbedDim);
        for (int b = 0; b < batch_; ++b) {
            double* gr = g.data() + static_cast<int64_t>(b) * kCondWidth;
            double* hr = ghat.data() + static_cast<int64_t>(b) * kCondWidth;
            const double* fc = f_cur.data() + static_cast<int64_t>(b) * perception::kFeatureDim;
            const double* fo = f_cons.data() + static_cast<int64_t>(b) * perception::kFeatureDim;
            std::copy(fc, fc + perception::kFeatureDim, gr);
            std::copy(fo, fo + perception::kFeatureDim, hr);
            std::copy(emb.data(), emb.data() + perception::kTimeEmbedDim,
                      gr + perception::kFeatureDim);
            std::copy(emb.data(), emb.data() + perception::kTimeEmbedDim,
                      hr + perception::kFeatureDim);
        }
        const Array eps = graph_.forward({{"a", a}, {"g", g}, {"ghat", ghat}}).at("eps");
        a = diffusion::ddim_step(a, eps, t, t_prev, 0.0, sched_, z, x0_clip_);
    }
    Array out({batch_, cfg_.horizon, cfg_.action_dim});
    for (int b = 0; b < batch_; ++b)
        for (int ch = 0; ch < cfg_.action_dim; ++ch)
            for (int hh = 0; hh < cfg_.horizon; ++hh)
                out[(static_cast<int64_t>(b) * cfg_.horizon + hh) * cfg_.action_dim + ch] =
                    a[(static_cast<int64_t>(b) * cfg_.action_dim + ch) * cfg_.horizon + hh];
    return out;
}

Array sample_actions(const perception::ObservationPair& pair, const ParamStore& ps,
                     const perception::PerceptionConfig& pcfg, const DenoiserConfig& cfg,
                     const diffusion::NoiseSchedule& sched, Rng& rng, int infer_steps,
                     double eta) {
    const auto f_cur = perception::encode_pair(pair, ps, pcfg);
    const auto f_cons = perception::construct_future(f_cur, ps);
    Sampler sampler(cfg, ps, sched, infer_steps, eta);
    return sampler.sample(f_cur, f_cons, rng);
}

}  // namespace fd::denoiser
