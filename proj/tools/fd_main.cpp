// fd: foresight-conditioned diffusion policy toolkit.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fd/checkpoint.hpp"
#include "fd/dataset.hpp"
#include "fd/harness.hpp"
#include "fd/kernels.hpp"
#include "fd/report.hpp"
#include "fd/schedule.hpp"

namespace fs = std::filesystem;
using namespace fd;

namespace {

// Shell-style '*' expansion over one directory level.
bool wildcard_match(const std::string& pat, const std::string& text) {
    size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pat.size() && (pat[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pat.size() && pat[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pat.size() && pat[p] == '*') ++p;
    return p == pat.size();
}

std::vector<std::string> expand_glob(const std::string& pattern) {
    if (pattern.find('*') == std::string::npos) return {pattern};
    const fs::path pat(pattern);
    const fs::path dir = pat.parent_path().empty() ? fs::path(".") : pat.parent_path();
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (wildcard_match(pat.filename().string(), entry.path().filename().string()))
            out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

harness::RunSpec default_spec(toy::TaskKind task) {
    harness::RunSpec spec;
    spec.task = task;
    spec.dcfg.action_dim = toy::action_dim_of(task);
    return spec;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= s.size()) {
        const size_t comma = s.find(',', pos);
        if (comma == std::string::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* env = std::getenv("FD_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) kernels::set_threads(n);
    }

    CLI::App app{"foresight-conditioned diffusion policies on 2D toy manipulation"};
    app.require_subcommand(1);

    // ---- gen-demos ----------------------------------------------------------
    std::string task_name = "reach", out_path, demos_path;
    int n_demos = 20;
    uint64_t seed = 0;
    auto* gen = app.add_subcommand("gen-demos", "collect scripted-expert demonstrations");
    gen->add_option("--task", task_name, "reach|push-wall|pick-place-2|stick-tool-3")->required();
    gen->add_option("--n", n_demos, "successful episodes to collect")->required();
    gen->add_option("--seed", seed, "first environment seed");
    gen->add_option("--out", out_path, "dataset file")->required();

    // ---- train --------------------------------------------------------------
    std::string injection = "mid", beta_mode = "fixed:0.1", sched_kind = "cosine";
    int epochs = 300, batch = 32, eval_every = 20, horizon = 8, sched_steps = 100;
    int train_seed = 0;
    auto* train = app.add_subcommand("train", "train a policy on a demo dataset");
    train->add_option("--task", task_name, "task the demos came from")->required();
    train->add_option("--demos", demos_path, "dataset file")->required();
    train->add_option("--injection", injection, "none|early|mid");
    train->add_option("--beta-mode", beta_mode, "off|fixed:<w>|dynamic:<w>,<rate>");
    train->add_option("--epochs", epochs);
    train->add_option("--batch", batch);
    train->add_option("--seed", train_seed);
    train->add_option("--eval-every", eval_every, "epochs between eval events (0 disables)");
    train->add_option("--horizon", horizon);
    train->add_option("--schedule", sched_kind, "linear|cosine");
    train->add_option("--diffusion-steps", sched_steps);
    train->add_option("--out", out_path, "checkpoint file")->required();

    // ---- eval ---------------------------------------------------------------
    std::string ckpt_glob, seeds_csv = "0,1,2";
    int rollouts = 15, top_k = 5;
    auto* eval = app.add_subcommand("eval", "evaluate checkpoints or metric streams");
    eval->add_option("--ckpt", ckpt_glob, "checkpoint path/glob or *.metrics.jsonl")->required();
    eval->add_option("--task", task_name, "task (informational; checkpoints carry theirs)");
    eval->add_option("--seeds", seeds_csv);
    eval->add_option("--rollouts", rollouts);
    eval->add_option("--top-k", top_k);
    eval->add_option("--out", out_path, "report directory")->required();

    // ---- ablate ------------------------------------------------------------
    std::string axis_name = "injection";
    int demo_count = 10;
    auto* ablate = app.add_subcommand("ablate", "run one ablation axis");
    ablate->add_option("--axis", axis_name, "injection|beta|demos")->required();
    ablate->add_option("--task", task_name, "task (comma-separated for several)")->required();
    ablate->add_option("--out", out_path, "output directory")->required();
    ablate->add_option("--epochs", epochs);
    ablate->add_option("--batch", batch);
    ablate->add_option("--demo-count", demo_count, "demos for injection/beta axes");
    ablate->add_option("--eval-every", eval_every);

    // ---- report -------------------------------------------------------------
    std::string in_dir, formats = "csv,json,svg";
    auto* report = app.add_subcommand("report", "re-export reports from raw logs");
    report->add_option("--in", in_dir, "directory containing *_raw.json")->required();
    report->add_option("--format", formats, "comma list of csv,json,svg");

    // ---- schedule-dump ------------------------------------------------------
    auto* sdump = app.add_subcommand("schedule-dump", "write a noise schedule as CSV");
    sdump->add_option("--kind", sched_kind, "linear|cosine")->required();
    sdump->add_option("--T", sched_steps, "step count")->required();
    sdump->add_option("--out", out_path, "csv file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const auto task = toy::ToyTask::make(toy::task_from_string(task_name));
            const auto ds = toy::generate_demos(task, n_demos, seed);
            toy::save_dataset(out_path, ds);
            std::cout << "wrote " << ds.episodes.size() << " episodes to " << out_path << "\n";
        } else if (train->parsed()) {
            const auto ds = toy::load_dataset(demos_path);
            if (toy::to_string(ds.task) != task_name)
                raise("dataset is for task '" + toy::to_string(ds.task) + "', not '" +
                      task_name + "'");
            harness::RunSpec spec = default_spec(ds.task);
            spec.label = "train";
            spec.dcfg.injection = denoiser::injection_from_string(injection);
            spec.dcfg.horizon = horizon;
            training::parse_beta_mode(beta_mode, spec.tcfg);
            spec.tcfg.epochs = epochs;
            spec.tcfg.batch = batch;
            spec.sched.kind = diffusion::schedule_kind_from_string(sched_kind);
            spec.sched.steps = sched_steps;
            harness::EvalProtocol proto;
            proto.eval_every = eval_every > 0 ? eval_every : epochs + 1;
            const std::string metrics = out_path + ".metrics.jsonl";
            if (fs::exists(metrics)) fs::remove(metrics);
            harness::train_and_eval(ds, spec, train_seed, proto, metrics, out_path);
            std::cout << "wrote checkpoint " << out_path << " and metrics " << metrics << "\n";
        } else if (eval->parsed()) {
            harness::EvalProtocol proto;
            proto.rollouts_per_eval = rollouts;
            proto.top_k = top_k;
            proto.seeds.clear();
            for (const auto& s : split_csv(seeds_csv)) proto.seeds.push_back(std::stoi(s));
            const auto paths = expand_glob(ckpt_glob);
            if (paths.empty()) raise("no files match '" + ckpt_glob + "'");
            const bool stream = paths.front().size() > 6 &&
                                paths.front().rfind(".jsonl") == paths.front().size() - 6;
            const auto rep = stream ? harness::evaluate_streams(paths, proto)
                                    : harness::evaluate_checkpoints(paths, proto);
            harness::export_report({rep}, out_path, "eval", {"csv", "json"});
            std::cout << rep.label << ": mean " << rep.mean << " +- " << rep.stddev << "\n";
        } else if (ablate->parsed()) {
            harness::AblationConfig cfg;
            cfg.base = default_spec(toy::TaskKind::Reach);
            cfg.base.tcfg.epochs = epochs;
            cfg.base.tcfg.batch = batch;
            cfg.demo_count = demo_count;
            cfg.protocol.eval_every = eval_every;
            std::vector<toy::TaskKind> tasks;
            for (const auto& t : split_csv(task_name)) tasks.push_back(toy::task_from_string(t));
            const auto reports =
                harness::run_ablation(harness::axis_from_string(axis_name), cfg, tasks, out_path);
            std::cout << harness::reports_csv(reports);
        } else if (report->parsed()) {
            const auto fmts = split_csv(formats);
            bool found = false;
            for (const auto& entry : fs::directory_iterator(in_dir)) {
                const std::string name = entry.path().filename().string();
                const std::string suffix = "_raw.json";
                if (name.size() > suffix.size() &&
                    name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
                    const auto reports = harness::load_reports(entry.path().string());
                    const std::string stem = name.substr(0, name.size() - suffix.size());
                    harness::export_report(reports, in_dir, stem, fmts);
                    found = true;
                }
            }
            if (!found) raise("no *_raw.json files in '" + in_dir + "'");
        } else if (sdump->parsed()) {
            const auto sched = diffusion::make_schedule(
                diffusion::schedule_kind_from_string(sched_kind), sched_steps, 1e-4, 0.02);
            std::ofstream os(out_path);
            if (!os) raise("cannot open '" + out_path + "'");
            os << diffusion::schedule_csv(sched);
            std::cout << "wrote " << out_path << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
