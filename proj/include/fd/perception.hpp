// Observation encoding: a shared point-cloud/proprio encoder over frame pairs,
// the future-view constructor MLP, and assembly of the diffusion conditions.
#pragma once

#include "fd/graph.hpp"
#include "fd/params.hpp"

namespace fd::perception {

inline constexpr int kPointFeat = 64;    // per-frame point feature width
inline constexpr int kObsFeat = 64;      // fused per-frame feature width
inline constexpr int kFeatureDim = 128;  // pair feature width (two frames)
inline constexpr int kTimeEmbedDim = 64;
inline constexpr int kConditionDim = kFeatureDim + kTimeEmbedDim;  // 192

struct Observation {
    Array points;   // [N,3]
    Array proprio;  // [Dr]
};

struct ObservationPair {
    Observation prev;  // time t-1
    Observation curr;  // time t
};

enum class FeatureRole { Current, Constructed, Target };

struct Feature {
    Array vec;  // [kFeatureDim]
    FeatureRole role = FeatureRole::Current;
};

struct ConditionPair {
    Array g;      // [kConditionDim] = feature ++ step embedding
    Array g_hat;  // same layout built from the constructed feature
};

struct PerceptionConfig {
    int proprio_dim = 5;
};

void init_perception_params(ParamStore& ps, const PerceptionConfig& cfg, Rng& rng);

// Batched graph builders; points:[B,N,3] proprio:[B,Dr].
int build_point_encoder(Graph& g, const ParamStore& ps, int points);
int build_observation_encoder(Graph& g, const ParamStore& ps, int points, int proprio);
int build_pair_encoder(Graph& g, const ParamStore& ps, int prev_points, int prev_proprio,
                       int curr_points, int curr_proprio);
int build_constructor(Graph& g, const ParamStore& ps, int feature);

// Single-observation entry points (batch of one under the hood).
Array encode_points(const Array& points, const ParamStore& ps);
Array encode_observation(const Observation& obs, const ParamStore& ps, const PerceptionConfig& cfg);
Feature encode_pair(const ObservationPair& pair, const ParamStore& ps, const PerceptionConfig& cfg);
Feature construct_future(const Feature& f_cur, const ParamStore& ps);

// Encodes (O_t, O_{t+1}) with the shared encoder as a constant target.
// `next` may be null at episode end; that is an error the caller turns into
// dropping the consistency term for the sample.
Feature encode_future_target(const Observation& curr, const Observation* next,
                             const ParamStore& ps, const PerceptionConfig& cfg);

Array time_embedding(int k, int dim);
ConditionPair make_conditions(const Feature& f_cur, const Feature& f_cons, int k, int total_steps);

}  // namespace fd::perception
