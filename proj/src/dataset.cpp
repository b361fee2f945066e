#include "fd/dataset.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace fd::toy {

perception::Observation DemoEpisode::observation(int t) const {
    if (t < 0 || t > length()) raise("episode observation index out of range");
    const int n = points.dim(1);
    const int dr = proprio.dim(1);
    Array p({n, 3});
    std::memcpy(p.data(), points.data() + static_cast<int64_t>(t) * n * 3,
                sizeof(double) * static_cast<size_t>(n) * 3);
    Array r({dr});
    std::memcpy(r.data(), proprio.data() + static_cast<int64_t>(t) * dr,
                sizeof(double) * static_cast<size_t>(dr));
    return perception::Observation{std::move(p), std::move(r)};
}

DemoDataset DemoDataset::truncated(int n) const {
    if (n < 1 || n > static_cast<int>(episodes.size()))
        raise("truncated: need 1 <= n <= " + std::to_string(episodes.size()));
    DemoDataset out = *this;
    out.episodes.resize(static_cast<size_t>(n));
    return out;
}

// Demonstrations continue a short settle window past success so the data
// covers stopping behaviour at the goal.
constexpr int kSettleSteps = 10;

DemoDataset generate_demos(const ToyTask& task, int n, uint64_t seed) {
    if (n < 1) raise("generate_demos: n must be >= 1");
    DemoDataset ds;
    ds.task = task.kind;
    ds.action_dim = action_dim_of(task.kind);
    const int64_t max_attempts = static_cast<int64_t>(10) * n;
    int64_t attempts = 0;
    uint64_t ep_seed = seed;
    while (static_cast<int>(ds.episodes.size()) < n) {
        if (attempts >= max_attempts)
            raise("generate_demos: expert failed to produce " + std::to_string(n) +
                  " successes within " + std::to_string(max_attempts) + " attempts");
        ++attempts;
        auto [state, obs] = reset(task, ep_seed);
        std::vector<Array> obs_points{obs.points};
        std::vector<Array> obs_prop{obs.proprio};
        std::vector<Array> actions;
        bool done = false, success = false;
        int settle = kSettleSteps;
        while (!done || (success && settle > 0 && state.step_idx < task.max_steps)) {
            if (done) --settle;  // keep recording the expert holding its goal
            Array a = scripted_expert(task, state);
            StepResult r = step(task, state, a);
            actions.push_back(std::move(a));
            obs_points.push_back(r.obs.points);
            obs_prop.push_back(r.obs.proprio);
            state = std::move(r.state);
            done = r.done;
            success = r.success;
        }
        if (success) {
            const int steps = static_cast<int>(actions.size());
            DemoEpisode ep;
            ep.points = Array({steps + 1, kPointCount, 3});
            ep.proprio = Array({steps + 1, kProprioDim});
            ep.actions = Array({steps, ds.action_dim});
            for (int t = 0; t <= steps; ++t) {
                std::memcpy(ep.points.data() + static_cast<int64_t>(t) * kPointCount * 3,
                            obs_points[static_cast<size_t>(t)].data(),
                            sizeof(double) * kPointCount * 3);
                std::memcpy(ep.proprio.data() + static_cast<int64_t>(t) * kProprioDim,
                            obs_prop[static_cast<size_t>(t)].data(),
                            sizeof(double) * kProprioDim);
            }
            for (int t = 0; t < steps; ++t)
                std::memcpy(ep.actions.data() + static_cast<int64_t>(t) * ds.action_dim,
                            actions[static_cast<size_t>(t)].data(),
                            sizeof(double) * static_cast<size_t>(ds.action_dim));
            ep.success = true;
            ep.seed = ep_seed;
            ds.episodes.push_back(std::move(ep));
        }
        ++ep_seed;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// FDDS file format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'D', 'D', 'S'};
constexpr uint32_t kVersion = 1;

}  // namespace

void save_dataset(const std::string& path, const DemoDataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise("cannot open '" + path + "' for writing");
    nlohmann::json header;
    header["task"] = to_string(ds.task);
    header["count"] = ds.episodes.size();
    header["proprio_width"] = ds.proprio_dim;
    header["point_count"] = ds.point_count;
    header["action_dim"] = ds.action_dim;
    std::vector<uint64_t> seeds;
    for (const auto& ep : ds.episodes) seeds.push_back(ep.seed);
    header["seeds"] = seeds;
    const std::string js = header.dump();
    os.write(kMagic, 4);
    const uint32_t ver = kVersion;
    os.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const uint64_t len = js.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (const auto& ep : ds.episodes) {
        write_array(os, ep.points);
        write_array(os, ep.proprio);
        write_array(os, ep.actions);
        const char ok = ep.success ? 1 : 0;
        os.write(&ok, 1);
    }
    if (!os) raise("failed writing dataset to '" + path + "'");
}

DemoDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) raise("dataset: bad magic");
    uint32_t ver = 0;
    is.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kVersion) raise("dataset: unsupported version " + std::to_string(ver));
    uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string js(len, '\0');
    is.read(js.data(), static_cast<std::streamsize>(len));
    if (!is) raise("dataset: truncated header");
    const auto header = nlohmann::json::parse(js);
    DemoDataset ds;
    ds.task = task_from_string(header.at("task").get<std::string>());
    ds.proprio_dim = header.at("proprio_width").get<int>();
    ds.point_count = header.at("point_count").get<int>();
    ds.action_dim = header.at("action_dim").get<int>();
    const auto seeds = header.at("seeds").get<std::vector<uint64_t>>();
    const auto count = header.at("count").get<size_t>();
    if (seeds.size() != count) raise("dataset: seed table does not match count");
    for (size_t i = 0; i < count; ++i) {
        DemoEpisode ep;
        ep.points = read_array(is);
        ep.proprio = read_array(is);
        ep.actions = read_array(is);
        char ok = 0;
        is.read(&ok, 1);
        if (!is) raise("dataset: truncated episode");
        ep.success = ok != 0;
        ep.seed = seeds[i];
        ds.episodes.push_back(std::move(ep));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Training samples
// ---------------------------------------------------------------------------

perception::ObservationPair TrainSample::pair() const {
    const int prev_t = t > 0 ? t - 1 : 0;  // first frame pairs with itself
    return perception::ObservationPair{episode->observation(prev_t), episode->observation(t)};
}

std::optional<perception::Observation> TrainSample::next_observation() const {
    if (t + 1 > episode->length()) return std::nullopt;
    return episode->observation(t + 1);
}

Array TrainSample::action_window(int horizon) const {
    const int total = episode->length();
    const int a = episode->actions.dim(1);
    Array w({horizon, a});
    for (int i = 0; i < horizon; ++i) {
        const int src = std::min(t + i, total - 1);
        std::memcpy(w.data() + static_cast<int64_t>(i) * a,
                    episode->actions.data() + static_cast<int64_t>(src) * a,
                    sizeof(double) * static_cast<size_t>(a));
    }
    return w;
}

std::vector<TrainSample> make_samples(const DemoDataset& ds) {
    std::vector<TrainSample> out;
    for (const auto& ep : ds.episodes)
        for (int t = 0; t < ep.length(); ++t) out.push_back(TrainSample{&ep, t});
    return out;
}

}  // namespace fd::toy
