// Demonstration episodes and the dataset file format.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fd/perception.hpp"
#include "fd/toy.hpp"

namespace fd::toy {

struct DemoEpisode {
    Array points;   // [T+1, N, 3]
    Array proprio;  // [T+1, Dr]
    Array actions;  // [T, A]
    bool success = false;
    uint64_t seed = 0;

    int length() const { return actions.dim(0); }  // T
    perception::Observation observation(int t) const;
};

struct DemoDataset {
    TaskKind task = TaskKind::Reach;
    int point_count = kPointCount;
    int proprio_dim = kProprioDim;
    int action_dim = 2;
    std::vector<DemoEpisode> episodes;

    // Keeps the first n episodes; larger counts strictly contain smaller ones.
    DemoDataset truncated(int n) const;
};

// Rolls the scripted expert from `seed` upward until n successful episodes
// are collected. Fails if 10n attempts are not enough.
DemoDataset generate_demos(const ToyTask& task, int n, uint64_t seed);

// File format "FDDS": magic, u32 version, u64 json length, JSON header
// (task kind, count, proprio width, point count, per-episode seeds), then per
// episode: points / proprio / actions arrays and a success byte.
void save_dataset(const std::string& path, const DemoDataset& ds);
DemoDataset load_dataset(const std::string& path);

// One training sample: the observation pair at t, the action window starting
// at t (padded by repeating the final action), and O_{t+1} when it exists.
struct TrainSample {
    const DemoEpisode* episode = nullptr;
    int t = 0;

    perception::ObservationPair pair() const;
    std::optional<perception::Observation> next_observation() const;
    Array action_window(int horizon) const;  // [horizon, A]
};

std::vector<TrainSample> make_samples(const DemoDataset& ds);

}  // namespace fd::toy
