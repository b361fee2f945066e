#include "fd/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fd::harness {

nlohmann::json to_json(const RunReport& rep) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& sr : rep.per_seed) {
        nlohmann::json events = nlohmann::json::array();
        for (const auto& ev : sr.events)
            events.push_back({{"epoch", ev.epoch}, {"success_rate", ev.success_rate}});
        seeds.push_back({{"seed", sr.seed}, {"score", sr.score}, {"events", events}});
    }
    return {{"label", rep.label},
            {"task", rep.task},
            {"fingerprint", rep.fingerprint},
            {"mean", rep.mean},
            {"stddev", rep.stddev},
            {"per_seed", seeds}};
}

RunReport report_from_json(const nlohmann::json& j) {
    RunReport rep;
    rep.label = j.at("label").get<std::string>();
    rep.task = j.at("task").get<std::string>();
    rep.fingerprint = j.at("fingerprint").get<std::string>();
    rep.mean = j.at("mean").get<double>();
    rep.stddev = j.at("stddev").get<double>();
    for (const auto& s : j.at("per_seed")) {
        SeedRun sr;
        sr.seed = s.at("seed").get<int>();
        sr.score = s.at("score").get<double>();
        for (const auto& e : s.at("events"))
            sr.events.push_back(
                EvalEvent{e.at("epoch").get<int>(), e.at("success_rate").get<double>()});
        rep.per_seed.push_back(std::move(sr));
    }
    return rep;
}

std::string reports_csv(const std::vector<RunReport>& reports) {
    std::string out = "label,task,mean,std,fingerprint\n";
    char line[256];
    for (const auto& r : reports) {
        std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%s\n", r.label.c_str(),
                      r.task.c_str(), r.mean, r.stddev, r.fingerprint.c_str());
        out += line;
    }
    return out;
}

std::string reports_svg(const std::vector<RunReport>& reports, const std::string& title) {
    const int bar_w = 48, gap = 26, margin_l = 70, margin_t = 48, plot_h = 260;
    const int n = static_cast<int>(reports.size());
    const int width = margin_l + n * (bar_w + gap) + 40;
    const int height = margin_t + plot_h + 90;
    char buf[512];
    std::string svg;
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"%d\" "
                  "height=\"%d\" viewBox=\"0 0 %d %d\">\n",
                  width, height, width, height);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">%s</text>\n",
                  margin_l, title.c_str());
    svg += buf;
    // y axis with 0..1 grid
    for (int i = 0; i <= 5; ++i) {
        const double v = i / 5.0;
        const int y = margin_t + plot_h - static_cast<int>(v * plot_h);
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"#ccc\" "
                      "stroke-width=\"1\"/>\n",
                      margin_l - 6, y, width - 20, y);
        svg += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"end\">%.1f</text>\n",
                      margin_l - 10, y + 4, v);
        svg += buf;
    }
    for (int i = 0; i < n; ++i) {
        const auto& r = reports[static_cast<size_t>(i)];
        const double mean = std::clamp(r.mean, 0.0, 1.0);
        const int x = margin_l + i * (bar_w + gap);
        const int h = static_cast<int>(mean * plot_h);
        const int y = margin_t + plot_h - h;
        std::snprintf(buf, sizeof(buf),
                      "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"#4878a8\"/>\n", x,
                      y, bar_w, h);
        svg += buf;
        // std whisker
        const int cx = x + bar_w / 2;
        const int y_lo = margin_t + plot_h -
                         static_cast<int>(std::clamp(r.mean - r.stddev, 0.0, 1.0) * plot_h);
        const int y_hi = margin_t + plot_h -
                         static_cast<int>(std::clamp(r.mean + r.stddev, 0.0, 1.0) * plot_h);
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"#222\" "
                      "stroke-width=\"2\"/>\n",
                      cx, y_hi, cx, y_lo);
        svg += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"middle\">%.2f</text>\n",
                      cx, y - 6, r.mean);
        svg += buf;
        std::snprintf(
            buf, sizeof(buf),
            "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"10\" "
            "text-anchor=\"middle\" transform=\"rotate(28 %d %d)\">%s/%s</text>\n",
            cx, margin_t + plot_h + 18, cx, margin_t + plot_h + 18, r.label.c_str(),
            r.task.c_str());
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise("cannot open '" + path + "' for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) raise("failed writing '" + path + "'");
}

}  // namespace

void export_report(const std::vector<RunReport>& reports, const std::string& dir,
                   const std::string& stem, const std::vector<std::string>& formats) {
    if (reports.empty()) raise("export_report: no reports");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) raise("cannot create report directory '" + dir + "': " + ec.message());
    nlohmann::json raw = nlohmann::json::array();
    for (const auto& r : reports) raw.push_back(to_json(r));
    write_file(dir + "/" + stem + "_raw.json", raw.dump(2) + "\n");
    for (const auto& fmt : formats) {
        if (fmt == "csv")
            write_file(dir + "/" + stem + ".csv", reports_csv(reports));
        else if (fmt == "json")
            write_file(dir + "/" + stem + ".json", raw.dump(2) + "\n");
        else if (fmt == "svg")
            write_file(dir + "/" + stem + ".svg", reports_svg(reports, stem));
        else
            raise("export_report: unknown format '" + fmt + "'");
    }
}

std::vector<RunReport> load_reports(const std::string& raw_json_path) {
    std::ifstream is(raw_json_path);
    if (!is) raise("cannot open '" + raw_json_path + "'");
    nlohmann::json raw;
    is >> raw;
    std::vector<RunReport> out;
    for (const auto& j : raw) out.push_back(report_from_json(j));
    return out;
}

}  // namespace fd::harness
