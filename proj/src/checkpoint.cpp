#include "fd/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fd::training {

nlohmann::json to_json(const denoiser::DenoiserConfig& cfg) {
    return {{"action_dim", cfg.action_dim},
            {"horizon", cfg.horizon},
            {"down_channels", cfg.down_channels},
            {"bottleneck_channels", cfg.bottleneck_channels},
            {"cond_dim_down", cfg.cond_dim_down},
            {"cond_dim_up", cfg.cond_dim_up},
            {"injection", denoiser::to_string(cfg.injection)},
            {"norm_groups", cfg.norm_groups}};
}

denoiser::DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
    denoiser::DenoiserConfig cfg;
    cfg.action_dim = j.at("action_dim").get<int>();
    cfg.horizon = j.at("horizon").get<int>();
    cfg.down_channels = j.at("down_channels").get<std::array<int, 2>>();
    cfg.bottleneck_channels = j.at("bottleneck_channels").get<int>();
    cfg.cond_dim_down = j.at("cond_dim_down").get<int>();
    cfg.cond_dim_up = j.at("cond_dim_up").get<int>();
    cfg.injection = denoiser::injection_from_string(j.at("injection").get<std::string>());
    cfg.norm_groups = j.at("norm_groups").get<int>();
    return cfg;
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"lr", cfg.lr},
            {"warmup_steps", cfg.warmup_steps},
            {"epochs", cfg.epochs},
            {"batch", cfg.batch},
            {"beta_mode", to_string(cfg.beta_mode)},
            {"beta", cfg.beta},
            {"beta_growth", cfg.beta_growth},
            {"ema_decay", cfg.ema_decay},
            {"seed", cfg.seed},
            {"weight_decay", cfg.weight_decay},
            {"adam_beta1", cfg.adam_beta1},
            {"adam_beta2", cfg.adam_beta2},
            {"adam_eps", cfg.adam_eps},
            {"detach_current_feature", cfg.detach_current_feature},
            {"infer_steps", cfg.infer_steps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.lr = j.at("lr").get<double>();
    cfg.warmup_steps = j.at("warmup_steps").get<int>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch = j.at("batch").get<int>();
    const std::string mode = j.at("beta_mode").get<std::string>();
    cfg.beta_mode = mode == "off"     ? BetaMode::Off
                    : mode == "fixed" ? BetaMode::Fixed
                                      : BetaMode::Dynamic;
    cfg.beta = j.at("beta").get<double>();
    cfg.beta_growth = j.at("beta_growth").get<double>();
    cfg.ema_decay = j.at("ema_decay").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.adam_beta1 = j.at("adam_beta1").get<double>();
    cfg.adam_beta2 = j.at("adam_beta2").get<double>();
    cfg.adam_eps = j.at("adam_eps").get<double>();
    cfg.detach_current_feature = j.at("detach_current_feature").get<bool>();
    cfg.infer_steps = j.at("infer_steps").get<int>();
    return cfg;
}

nlohmann::json to_json(const ScheduleSpec& spec) {
    return {{"kind", diffusion::to_string(spec.kind)},
            {"steps", spec.steps},
            {"beta_min", spec.beta_min},
            {"beta_max", spec.beta_max}};
}

ScheduleSpec schedule_spec_from_json(const nlohmann::json& j) {
    ScheduleSpec spec;
    spec.kind = diffusion::schedule_kind_from_string(j.at("kind").get<std::string>());
    spec.steps = j.at("steps").get<int>();
    spec.beta_min = j.at("beta_min").get<double>();
    spec.beta_max = j.at("beta_max").get<double>();
    return spec;
}

nlohmann::json to_json(const perception::PerceptionConfig& cfg) {
    return {{"proprio_dim", cfg.proprio_dim}};
}

perception::PerceptionConfig perception_config_from_json(const nlohmann::json& j) {
    perception::PerceptionConfig cfg;
    cfg.proprio_dim = j.at("proprio_dim").get<int>();
    return cfg;
}

nlohmann::json config_json(const PolicyCheckpoint& ckpt) {
    return {{"denoiser", to_json(ckpt.dcfg)},
            {"train", to_json(ckpt.tcfg)},
            {"schedule", to_json(ckpt.sched)},
            {"perception", to_json(ckpt.pcfg)},
            {"task", ckpt.task}};
}

std::string fingerprint(const nlohmann::json& j) {
    const std::string s = j.dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

constexpr char kMagic[4] = {'F', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const PolicyCheckpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise("cannot open '" + path + "' for writing");
    nlohmann::json header = config_json(ckpt);
    header["version"] = kVersion;
    header["step"] = ckpt.step;
    // Named-section table: sections follow in exactly this order.
    nlohmann::json sections = nlohmann::json::array();
    for (const auto& [name, arr] : ckpt.params.map())
        sections.push_back({{"name", "p/" + name}, {"elems", arr.numel()}});
    for (const auto& [name, arr] : ckpt.ema.map())
        sections.push_back({{"name", "e/" + name}, {"elems", arr.numel()}});
    header["sections"] = sections;
    const std::string js = header.dump();
    os.write(kMagic, 4);
    const uint32_t ver = kVersion;
    os.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const uint64_t len = js.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (const auto& [name, arr] : ckpt.params.map()) write_array(os, arr);
    for (const auto& [name, arr] : ckpt.ema.map()) write_array(os, arr);
    if (!os) raise("failed writing checkpoint to '" + path + "'");
}

PolicyCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) raise("checkpoint: bad magic");
    uint32_t ver = 0;
    is.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kVersion) raise("checkpoint: unsupported version " + std::to_string(ver));
    uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string js(len, '\0');
    is.read(js.data(), static_cast<std::streamsize>(len));
    if (!is) raise("checkpoint: truncated header");
    const auto header = nlohmann::json::parse(js);
    PolicyCheckpoint ckpt;
    ckpt.dcfg = denoiser_config_from_json(header.at("denoiser"));
    ckpt.tcfg = train_config_from_json(header.at("train"));
    ckpt.sched = schedule_spec_from_json(header.at("schedule"));
    ckpt.pcfg = perception_config_from_json(header.at("perception"));
    ckpt.task = header.at("task").get<std::string>();
    ckpt.step = header.at("step").get<int64_t>();
    for (const auto& sec : header.at("sections")) {
        const std::string name = sec.at("name").get<std::string>();
        Array arr = read_array(is);
        if (name.rfind("p/", 0) == 0)
            ckpt.params.add(name.substr(2), std::move(arr));
        else if (name.rfind("e/", 0) == 0)
            ckpt.ema.add(name.substr(2), std::move(arr));
        else
            raise("checkpoint: unknown section '" + name + "'");
    }
    if (ckpt.ema.map().size() != ckpt.params.map().size())
        raise("checkpoint: EMA shadow does not mirror the live parameters");
    return ckpt;
}

}  // namespace fd::training
