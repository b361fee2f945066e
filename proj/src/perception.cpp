#include "fd/perception.hpp"

#include "fd/kernels.hpp"

namespace fd::perception {

namespace {
constexpr int kFuseHidden = 128;
}  // namespace

void init_perception_params(ParamStore& ps, const PerceptionConfig& cfg, Rng& rng) {
    const int dr = cfg.proprio_dim;
    if (dr < 1) raise("perception: proprio_dim must be >= 1");
    ps.add("perception.point.w0", init_weight({3, kPointFeat}, 3, rng));
    ps.add("perception.point.b0", Array({kPointFeat}));
    ps.add("perception.point.w1", init_weight({kPointFeat, kPointFeat}, kPointFeat, rng));
    ps.add("perception.point.b1", Array({kPointFeat}));
    ps.add("perception.fuse.w0",
           init_weight({kPointFeat + dr, kFuseHidden}, kPointFeat + dr, rng));
    ps.add("perception.fuse.b0", Array({kFuseHidden}));
    ps.add("perception.fuse.w1", init_weight({kFuseHidden, kObsFeat}, kFuseHidden, rng));
    ps.add("perception.fuse.b1", Array({kObsFeat}));
    ps.add("perception.cons.w0", init_weight({kFeatureDim, 256}, kFeatureDim, rng));
    ps.add("perception.cons.b0", Array({256}));
    ps.add("perception.cons.w1", init_weight({256, 256}, 256, rng));
    ps.add("perception.cons.b1", Array({256}));
    ps.add("perception.cons.w2", init_weight({256, kFeatureDim}, 256, rng));
    ps.add("perception.cons.b2", Array({kFeatureDim}));
}

int build_point_encoder(Graph& g, const ParamStore& ps, int points) {
    auto p = [&](const char* n) { return g.param(n, ps.ptr(n)); };
    int h = g.affine(points, p("perception.point.w0"), p("perception.point.b0"));
    h = g.mish(h);
    h = g.affine(h, p("perception.point.w1"), p("perception.point.b1"));
    h = g.mish(h);
    return g.max_pool_set(h);
}

namespace {

// Parameter nodes are deduplicated so the shared encoder really is shared
// inside one graph (gradients from both frames accumulate on one leaf).
int shared_param(Graph& g, const ParamStore& ps, const std::string& name,
                 std::map<std::string, int>& cache) {
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    const int id = g.param(name, ps.ptr(name));
    cache[name] = id;
    return id;
}

int obs_encoder(Graph& g, const ParamStore& ps, int points, int proprio,
                std::map<std::string, int>& cache) {
    auto p = [&](const char* n) { return shared_param(g, ps, n, cache); };
    int h = g.affine(points, p("perception.point.w0"), p("perception.point.b0"));
    h = g.mish(h);
    h = g.affine(h, p("perception.point.w1"), p("perception.point.b1"));
    h = g.mish(h);
    h = g.max_pool_set(h);
    int f = g.concat(h, proprio, 1);
    f = g.affine(f, p("perception.fuse.w0"), p("perception.fuse.b0"));
    f = g.mish(f);
    f = g.affine(f, p("perception.fuse.w1"), p("perception.fuse.b1"));
    return f;
}

}  // namespace

int build_observation_encoder(Graph& g, const ParamStore& ps, int points, int proprio) {
    std::map<std::string, int> cache;
    return obs_encoder(g, ps, points, proprio, cache);
}

int build_pair_encoder(Graph& g, const ParamStore& ps, int prev_points, int prev_proprio,
                       int curr_points, int curr_proprio) {
    std::map<std::string, int> cache;
    const int fp = obs_encoder(g, ps, prev_points, prev_proprio, cache);
    const int fc = obs_encoder(g, ps, curr_points, curr_proprio, cache);
    return g.concat(fp, fc, 1);
}

int build_constructor(Graph& g, const ParamStore& ps, int feature) {
    auto p = [&](const char* n) { return g.param(n, ps.ptr(n)); };
    int h = g.affine(feature, p("perception.cons.w0"), p("perception.cons.b0"));
    h = g.mish(h);
    h = g.affine(h, p("perception.cons.w1"), p("perception.cons.b1"));
    h = g.mish(h);
    return g.affine(h, p("perception.cons.w2"), p("perception.cons.b2"));
}

namespace {

Array batched(const Array& a) {
    std::vector<int> shape{1};
    for (int d : a.shape()) shape.push_back(d);
    return a.reshaped(shape);
}

Array unbatched(const Array& a) {
    std::vector<int> shape(a.shape().begin() + 1, a.shape().end());
    return a.reshaped(shape);
}

void check_obs(const Observation& obs) {
    if (obs.points.rank() != 2 || obs.points.dim(1) != 3)
        raise("observation points must be [N,3], got " + obs.points.shape_str());
    if (obs.points.dim(0) < 1) raise("observation needs at least one point");
    if (obs.proprio.rank() != 1) raise("observation proprio must be rank 1");
}

}  // namespace

Array encode_points(const Array& points, const ParamStore& ps) {
    if (points.rank() != 2 || points.dim(1) != 3)
        raise("encode_points: expected [N,3], got " + points.shape_str());
    Graph g;
    const int in = g.input("points", {1, points.dim(0), 3});
    const int out = build_point_encoder(g, ps, in);
    g.mark_output("f", out);
    return unbatched(g.forward({{"points", batched(points)}}).at("f"));
}

Array encode_observation(const Observation& obs, const ParamStore& ps,
                         const PerceptionConfig& cfg) {
    check_obs(obs);
    if (obs.proprio.dim(0) != cfg.proprio_dim)
        raise("encode_observation: proprio width " + std::to_string(obs.proprio.dim(0)) +
              " != configured " + std::to_string(cfg.proprio_dim));
    Graph g;
    const int pts = g.input("points", {1, obs.points.dim(0), 3});
    const int prop = g.input("proprio", {1, cfg.proprio_dim});
    const int out = build_observation_encoder(g, ps, pts, prop);
    g.mark_output("f", out);
    return unbatched(
        g.forward({{"points", batched(obs.points)}, {"proprio", batched(obs.proprio)}}).at("f"));
}

namespace {

Feature encode_pair_role(const ObservationPair& pair, const ParamStore& ps,
                         const PerceptionConfig& cfg, FeatureRole role) {
    check_obs(pair.prev);
    check_obs(pair.curr);
    if (pair.prev.points.dim(0) != pair.curr.points.dim(0))
        raise("observation pair frames disagree on point count");
    if (pair.prev.proprio.dim(0) != pair.curr.proprio.dim(0))
        raise("observation pair frames disagree on proprio width");
    if (pair.curr.proprio.dim(0) != cfg.proprio_dim)
        raise("encode_pair: proprio width mismatch vs config");
    Graph g;
    const int pp = g.input("pp", {1, pair.prev.points.dim(0), 3});
    const int pr = g.input("pr", {1, cfg.proprio_dim});
    const int cp = g.input("cp", {1, pair.curr.points.dim(0), 3});
    const int cr = g.input("cr", {1, cfg.proprio_dim});
    const int out = build_pair_encoder(g, ps, pp, pr, cp, cr);
    g.mark_output("f", out);
    Array f = g.forward({{"pp", batched(pair.prev.points)},
                         {"pr", batched(pair.prev.proprio)},
                         {"cp", batched(pair.curr.points)},
                         {"cr", batched(pair.curr.proprio)}})
                  .at("f");
    return Feature{unbatched(f), role};
}

}  // namespace

Feature encode_pair(const ObservationPair& pair, const ParamStore& ps,
                    const PerceptionConfig& cfg) {
    return encode_pair_role(pair, ps, cfg, FeatureRole::Current);
}

Feature construct_future(const Feature& f_cur, const ParamStore& ps) {
    if (f_cur.role != FeatureRole::Current)
        raise("construct_future: input feature must have the current role");
    if (f_cur.vec.shape() != std::vector<int>{kFeatureDim})
        raise("construct_future: feature must be [" + std::to_string(kFeatureDim) + "]");
    Graph g;
    const int in = g.input("f", {1, kFeatureDim});
    const int out = build_constructor(g, ps, in);
    g.mark_output("f", out);
    Array f = g.forward({{"f", batched(f_cur.vec)}}).at("f");
    return Feature{unbatched(f), FeatureRole::Constructed};
}

Feature encode_future_target(const Observation& curr, const Observation* next,
                             const ParamStore& ps, const PerceptionConfig& cfg) {
    if (next == nullptr)
        raise("encode_future_target: no observation at t+1 (episode end); "
              "drop the consistency term for this sample");
    return encode_pair_role(ObservationPair{curr, *next}, ps, cfg, FeatureRole::Target);
}

Array time_embedding(int k, int dim) {
    Array kv({1}, {static_cast<double>(k)});
    Array e({1, dim});
    kernels::sin_embed(e.data(), kv.data(), 1, dim);
    return e.reshaped({dim});
}

ConditionPair make_conditions(const Feature& f_cur, const Feature& f_cons, int k,
                              int total_steps) {
    if (k < 0 || k > total_steps)
        raise("make_conditions: step k=" + std::to_string(k) + " outside [0," +
              std::to_string(total_steps) + "]");
    if (f_cur.vec.shape() != std::vector<int>{kFeatureDim} ||
        f_cons.vec.shape() != std::vector<int>{kFeatureDim})
        raise("make_conditions: features must be [" + std::to_string(kFeatureDim) + "]");
    const Array e = time_embedding(k, kTimeEmbedDim);
    ConditionPair cp;
    cp.g = Array({kConditionDim});
    cp.g_hat = Array({kConditionDim});
    for (int i = 0; i < kFeatureDim; ++i) {
        cp.g[i] = f_cur.vec[i];
        cp.g_hat[i] = f_cons.vec[i];
    }
    for (int i = 0; i < kTimeEmbedDim; ++i) {
        cp.g[kFeatureDim + i] = e[i];
        cp.g_hat[kFeatureDim + i] = e[i];
    }
    return cp;
}

}  // namespace fd::perception
