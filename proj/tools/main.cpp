// clstream command line: run scenarios, compute IID baselines, sweep
// hyperparameters and summarize result CSVs.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clstream/config.hpp"
#include "clstream/metrics.hpp"
#include "clstream/runner.hpp"

namespace {

using namespace clstream;

struct CsvRun {
    std::map<std::uint64_t, std::vector<std::vector<std::string>>> rows_by_seed;
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) out.push_back(cell);
    return out;
}

CsvRun read_run_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open CSV: " + path);
    CsvRun run;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() < 2) continue;
        run.rows_by_seed[std::stoull(cells[0])].push_back(std::move(cells));
    }
    return run;
}

double cell_to_double(const std::string& s) {
    return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
}

int cmd_run(const std::string& config_path, const std::string& out_override) {
    RunConfig cfg = load_config(config_path);
    if (!out_override.empty()) cfg.out_prefix = out_override;
    const auto results = run_scenario(cfg);
    for (const auto& r : results) {
        if (r.failure) {
            std::cout << "seed " << r.seed << ": FAILED (" << *r.failure << ")\n";
            continue;
        }
        std::cout << "seed " << r.seed << ": final acc "
                  << format_acc(r.log.records().back().overall_acc) << ", trailing-20 mean "
                  << format_acc(r.log.moving_average(20)) << ", iid " << format_acc(r.iid_accuracy)
                  << ", replay overhead " << format_acc(compute_overhead(r.ledger)) << "\n";
    }
    std::cout << "wrote " << cfg.out_prefix << ".csv and " << cfg.out_prefix
              << ".perclass.csv\n";
    return 0;
}

int cmd_iid(const std::string& config_path, const std::string& out_override) {
    RunConfig cfg = load_config(config_path);
    if (!out_override.empty()) cfg.out_prefix = out_override;
    for (const std::uint64_t seed : cfg.seeds) {
        RunData data = resolve_dataset(cfg, seed);
        const double acc = run_iid_baseline(cfg, data, seed);
        std::cout << "seed " << seed << ": iid accuracy " << format_acc(acc) << "\n";
    }
    std::cout << "cached in " << cfg.out_prefix << ".iidcache.json\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& lr_csv,
              const std::string& seed_expr, const std::string& out_override) {
    RunConfig base = load_config(config_path);
    if (!out_override.empty()) base.out_prefix = out_override;
    std::vector<double> lrs;
    if (lr_csv.empty()) {
        lrs.push_back(base.lr);
    } else {
        std::stringstream in(lr_csv);
        std::string tok;
        while (std::getline(in, tok, ',')) lrs.push_back(std::stod(tok));
    }
    if (!seed_expr.empty()) base.seeds = detail::parse_seed_list(seed_expr);

    for (const double lr : lrs) {
        RunConfig cfg = base;
        cfg.lr = lr;
        std::ostringstream suffix;
        suffix << ".lr" << lr;
        cfg.out_prefix = base.out_prefix + suffix.str();
        const auto results = run_scenario(cfg);
        double sum = 0.0;
        int ok = 0;
        for (const auto& r : results) {
            if (r.failure) continue;
            sum += r.log.moving_average(20);
            ++ok;
        }
        std::cout << "lr " << lr << ": " << ok << "/" << results.size()
                  << " seeds ok, mean trailing-20 acc "
                  << (ok ? format_acc(sum / ok) : "nan") << " -> " << cfg.out_prefix
                  << ".csv\n";
    }
    return 0;
}

int report_summary(const std::vector<std::string>& paths) {
    for (const auto& path : paths) {
        const CsvRun run = read_run_csv(path);
        std::cout << path << ":\n";
        for (const auto& [seed, rows] : run.rows_by_seed) {
            if (!rows.empty() && rows.front()[1] == "-1") {
                std::cout << "  seed " << seed << ": FAILED\n";
                continue;
            }
            double final_acc = cell_to_double(rows.back()[2]);
            double final_norm = cell_to_double(rows.back()[3]);
            const int last_task = std::stoi(rows.back()[1]);
            double ma = 0.0;
            int n = 0;
            double forg_sum = 0.0;
            int forg_n = 0;
            for (const auto& r : rows) {
                const int t = std::stoi(r[1]);
                if (t > last_task - 20) {
                    ma += cell_to_double(r[2]);
                    ++n;
                }
                const double f = cell_to_double(r[4]);
                if (std::isfinite(f)) {
                    forg_sum += f;
                    ++forg_n;
                }
            }
            std::cout << "  seed " << seed << ": rows " << rows.size() << ", final acc "
                      << format_acc(final_acc) << " (norm " << format_acc(final_norm)
                      << "), trailing-20 mean " << format_acc(ma / std::max(n, 1))
                      << ", mean local forgetting "
                      << (forg_n ? format_acc(forg_sum / forg_n) : "nan") << "\n";
        }
    }
    return 0;
}

int report_bands(const std::vector<std::string>& paths, const std::string& config_path,
                 int window_span) {
    RunConfig cfg = load_config(config_path);
    const int n = cfg.resolved_total_classes();
    for (const auto& path : paths) {
        std::string prefix = path;
        if (prefix.size() > 4 && prefix.substr(prefix.size() - 4) == ".csv")
            prefix = prefix.substr(0, prefix.size() - 4);
        const CsvRun perclass = read_run_csv(prefix + ".perclass.csv");

        std::map<std::size_t, std::pair<double, int>> band_acc;  // band -> (sum, count)
        std::vector<Band> band_shape;
        for (const auto& [seed, rows] : perclass.rows_by_seed) {
            MetricsLog log;
            for (const auto& r : rows) {
                TaskRecord rec;
                rec.task = std::stoi(r[1]);
                for (std::size_t c = 2; c < r.size(); ++c)
                    rec.per_class_acc.push_back(cell_to_double(r[c]));
                log.append(rec);
            }
            const int last = log.records().back().task;
            std::vector<double> probs;
            if (cfg.sampler == "mixture")
                probs = build_mixture_probs(n, cfg.entropy_decrease,
                                            mix_seed(seed, 0x6d786d69u));
            else
                probs.assign(static_cast<std::size_t>(n), 1.0 / n);
            const BandReport report =
                band_report(log, probs, n, cfg.classes_per_task, default_band_edges(),
                            std::max(0, last - window_span + 1), last);
            band_shape = report.bands;
            for (std::size_t b = 0; b < report.bands.size(); ++b) {
                if (report.bands[b].mean_accuracy) {
                    band_acc[b].first += *report.bands[b].mean_accuracy;
                    band_acc[b].second += 1;
                }
            }
        }
        std::cout << path << " (band means over seeds, trailing " << window_span
                  << " tasks):\n";
        for (std::size_t b = 0; b < band_shape.size(); ++b) {
            std::cout << "  [" << band_shape[b].lo << ", " << band_shape[b].hi << "): ";
            if (band_acc[b].second)
                std::cout << format_acc(band_acc[b].first / band_acc[b].second) << "\n";
            else
                std::cout << "no classes\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-subset stream simulator and continual training harness"};
    app.require_subcommand(1);

    std::string config_path, out_override, lr_csv, seed_expr;
    std::vector<std::string> csv_paths;
    bool bands = false;
    int window_span = 100;

    auto* run = app.add_subcommand("run", "execute the scenario described by a config file");
    run->add_option("config", config_path, "config file (flat text or .json)")->required();
    run->add_option("--out", out_override, "output path prefix override");

    auto* iid = app.add_subcommand("iid", "compute (and cache) the IID baseline only");
    iid->add_option("config", config_path)->required();
    iid->add_option("--out", out_override, "output path prefix override");

    auto* sweep = app.add_subcommand("sweep", "grid over learning rates and seeds");
    sweep->add_option("config", config_path)->required();
    sweep->add_option("--lr", lr_csv, "comma-separated learning rates");
    sweep->add_option("--seeds", seed_expr, "seed list a;b;c or range k..m");
    sweep->add_option("--out", out_override, "output path prefix override");

    auto* report = app.add_subcommand("report", "summarize result CSVs");
    report->add_option("csv", csv_paths, "one or more run CSVs")->required();
    report->add_flag("--bands", bands, "report accuracy per frequency band");
    report->add_option("--config", config_path, "config used to produce the runs (bands mode)");
    report->add_option("--window", window_span, "trailing task window for bands");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config_path, out_override);
        if (*iid) return cmd_iid(config_path, out_override);
        if (*sweep) return cmd_sweep(config_path, lr_csv, seed_expr, out_override);
        if (*report) {
            if (bands) {
                if (config_path.empty()) {
                    std::cerr << "report --bands needs --config\n";
                    return 2;
                }
                return report_bands(csv_paths, config_path, window_span);
            }
            return report_summary(csv_paths);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
