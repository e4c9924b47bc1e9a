#pragma once

// Ablation sweep: train every variant per seed on identical splits and
// report accuracy / macro-F1 per cell plus per-variant means.

#include <iomanip>
#include <iostream>

#include "dmic/training.hpp"

namespace dmic {

struct AblationCell {
    std::string variant;
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double acc = 0, f1 = 0;
};

struct AblationReport {
    std::vector<AblationCell> cells;
    std::map<std::string, double> mean_acc, mean_f1;

    std::string to_csv() const {
        std::ostringstream os;
        os << "variant,seed,status,accuracy,macro_f1\n";
        for (auto& c : cells)
            os << c.variant << "," << c.seed << ","
               << (c.ok ? "ok" : "failed") << ","
               << (c.ok ? format_fixed(c.acc) : "") << ","
               << (c.ok ? format_fixed(c.f1) : "") << "\n";
        for (auto& [v, a] : mean_acc)
            os << v << ",mean,ok," << format_fixed(a) << ","
               << format_fixed(mean_f1.at(v)) << "\n";
        return os.str();
    }

    std::string to_text() const {
        std::ostringstream os;
        os << std::left << std::setw(8) << "variant" << std::setw(8) << "seed"
           << std::setw(12) << "accuracy" << std::setw(12) << "macro_f1"
           << "\n";
        for (auto& c : cells) {
            os << std::left << std::setw(8) << c.variant << std::setw(8)
               << c.seed;
            if (c.ok)
                os << std::setw(12) << format_fixed(c.acc, 4) << std::setw(12)
                   << format_fixed(c.f1, 4);
            else
                os << "FAILED: " << c.error;
            os << "\n";
        }
        for (auto& [v, a] : mean_acc)
            os << std::left << std::setw(8) << v << std::setw(8) << "mean"
               << std::setw(12) << format_fixed(a, 4) << std::setw(12)
               << format_fixed(mean_f1.at(v), 4) << "\n";
        return os.str();
    }
};

// Failed cells are marked rather than aborting the sweep.
inline AblationReport run_ablation(const RunConfig& base,
                                   const std::vector<uint64_t>& seeds,
                                   const std::string& out_dir,
                                   bool verbose = false) {
    if (seeds.empty()) throw ConfigError("ablation: need at least one seed");
    static const char* variants[] = {"basic", "C1", "C2", "full"};
    AblationReport rep;
    for (uint64_t seed : seeds) {
        for (const char* v : variants) {
            RunConfig cfg = base;
            cfg.variant = v;
            cfg.seed = seed;
            AblationCell cell;
            cell.variant = v;
            cell.seed = seed;
            try {
                std::string cell_dir =
                    out_dir.empty() ? ""
                                    : out_dir + "/" + std::string(v) + "_s" +
                                          std::to_string(seed);
                ExperimentResult r = run_experiment(cfg, cell_dir);
                cell.ok = true;
                cell.acc = r.final_acc;
                cell.f1 = r.final_f1;
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
            if (verbose)
                std::cerr << "[ablate] " << v << " seed " << seed << ": "
                          << (cell.ok ? format_fixed(cell.acc, 4) : cell.error)
                          << std::endl;
            rep.cells.push_back(cell);
        }
    }
    for (const char* v : variants) {
        double sa = 0, sf = 0;
        int n = 0;
        for (auto& c : rep.cells)
            if (c.ok && c.variant == v) {
                sa += c.acc;
                sf += c.f1;
                ++n;
            }
        if (n) {
            rep.mean_acc[v] = sa / n;
            rep.mean_f1[v] = sf / n;
        }
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream csv(std::filesystem::path(out_dir) / "ablation.csv");
        csv << rep.to_csv();
    }
    return rep;
}

}  // namespace dmic
