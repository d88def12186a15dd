#pragma once

// Experiment sweeps over temperature, tiny width scale and training mode.
// Each sweep also runs the tiny baseline (per scale for the scale sweep) and
// reports every row's accuracy delta against it.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/io.hpp"
#include "t3dnet/harness/report.hpp"
#include "t3dnet/train/trainer.hpp"

namespace t3d::harness {

enum class SweepKind { temperature, scale, mode };

inline SweepKind parse_sweep(const std::string& s) {
    if (s == "temperature") return SweepKind::temperature;
    if (s == "scale") return SweepKind::scale;
    if (s == "mode") return SweepKind::mode;
    throw ConfigError("unknown sweep '" + s + "' (temperature, scale, mode)");
}

inline std::string to_string(SweepKind k) {
    switch (k) {
        case SweepKind::temperature: return "temperature";
        case SweepKind::scale: return "scale";
        case SweepKind::mode: return "mode";
    }
    return "?";
}

inline const std::vector<double>& sweep_temperatures() {
    static const std::vector<double> t{1, 2, 5, 10, 15, 20};
    return t;
}

inline const std::vector<double>& sweep_scales() {
    static const std::vector<double> s{0.5, 0.25, 0.125};
    return s;
}

/// One table row: a configuration run under every seed.
struct SweepEntry {
    std::string label;
    std::string group;     // rows sharing a group share a baseline
    bool baseline = false;  // the tiny reference of its group
    train::TrainPlan plan;  // seed offset 0
    std::vector<double> oa;  // per seed, final test OA
    std::vector<std::string> errors;
};

/// Plan for seed k: every seed family shifted by k.
inline train::TrainPlan with_seed_offset(train::TrainPlan p, std::uint64_t k) {
    p.seeds.init += k;
    p.seeds.data += k;
    p.seeds.subnet += k;
    return p;
}

inline std::vector<SweepEntry> sweep_entries(SweepKind kind, const train::TrainPlan& base) {
    const std::filesystem::path root = base.output_dir;
    auto make = [&](std::string label, std::string group, train::Mode m, bool is_base, std::string dir) {
        SweepEntry e;
        e.label = std::move(label);
        e.group = std::move(group);
        e.baseline = is_base;
        e.plan = base;
        e.plan.mode = m;
        if (!train::needs_teacher(m)) e.plan.teacher_checkpoint.clear();
        e.plan.output_dir = (root / dir).string();
        return e;
    };
    std::vector<SweepEntry> out;
    switch (kind) {
        case SweepKind::temperature:
            out.push_back(make("tiny", "", train::Mode::tiny, true, "tiny"));
            for (double T : sweep_temperatures()) {
                auto e = make("kd T=" + train::format_number(T), "", train::Mode::kd, false, "kd_T" + train::format_number(T));
                e.plan.temperature = T;
                out.push_back(std::move(e));
            }
            break;
        case SweepKind::scale:
            for (double s : sweep_scales()) {
                const std::string sl = scale_label(s), tag = train::format_number(s);
                auto t = make("tiny @" + sl, sl, train::Mode::tiny, true, "tiny_s" + tag);
                auto a = make("two-stage @" + sl, sl, train::Mode::two_stage, false, "two-stage_s" + tag);
                t.plan.tiny_scale = s;
                a.plan.tiny_scale = s;
                out.push_back(std::move(t));
                out.push_back(std::move(a));
            }
            break;
        case SweepKind::mode:
            for (auto m : train::all_modes())
                out.push_back(make(train::to_string(m), "", m, m == train::Mode::tiny, train::to_string(m)));
            break;
    }
    return out;
}

struct SweepResult {
    SweepKind kind = SweepKind::mode;
    std::size_t seeds = 1;
    std::vector<SweepEntry> entries;
    std::optional<int> first_failure_code;  // exit code class of the first failed sub-run

    bool ok() const { return !first_failure_code; }
};

inline double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1).
inline double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Exit code class of an error: 1 usage/config, 2 I/O, 3 numeric, 4 format.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const ParseError*>(&e)) return 4;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return 2;
    if (dynamic_cast<const TrainingError*>(&e) || dynamic_cast<const NumericError*>(&e)) return 3;
    return 1;
}

using RunFn = std::function<double(const train::TrainPlan&)>;

inline double default_run(const train::TrainPlan& p) { return train::run(p).final_oa(); }

/// Runs every entry under `seeds` seeds; `parallel` independent sub-runs at a
/// time. A failing sub-run is recorded and the sweep continues.
inline SweepResult run_sweep(SweepKind kind, const train::TrainPlan& base, std::size_t seeds, std::size_t parallel = 1,
                             const RunFn& run_fn = default_run) {
    if (seeds == 0) throw ConfigError("sweep needs at least one seed");
    SweepResult res;
    res.kind = kind;
    res.seeds = seeds;
    res.entries = sweep_entries(kind, base);
    struct Job {
        std::size_t entry, seed;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < res.entries.size(); ++i) {
        res.entries[i].oa.assign(seeds, std::nan(""));
        for (std::size_t k = 0; k < seeds; ++k) jobs.push_back({i, k});
    }
    std::mutex mu;
    std::vector<std::pair<std::size_t, int>> failures;  // (job index, code)
    auto do_job = [&](std::size_t j) {
        auto& e = res.entries[jobs[j].entry];
        auto p = with_seed_offset(e.plan, jobs[j].seed);
        if (seeds > 1) p.output_dir = (std::filesystem::path(p.output_dir) / ("seed" + std::to_string(jobs[j].seed))).string();
        try {
            const double oa = run_fn(p);
            std::lock_guard lock(mu);
            e.oa[jobs[j].seed] = oa;
        } catch (const std::exception& err) {
            std::lock_guard lock(mu);
            e.errors.push_back("seed " + std::to_string(jobs[j].seed) + ": " + err.what());
            failures.emplace_back(j, exit_code_for(err));
        }
    };
    if (parallel <= 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) do_job(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(parallel, jobs.size()); ++t)
            pool.emplace_back([&] {
                for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) do_job(j);
            });
        for (auto& th : pool) th.join();
    }
    if (!failures.empty()) res.first_failure_code = std::min_element(failures.begin(), failures.end())->second;
    return res;
}

namespace detail {

inline std::vector<double> finite(const std::vector<double>& v) {
    std::vector<double> out;
    for (double x : v)
        if (std::isfinite(x)) out.push_back(x);
    return out;
}

inline const SweepEntry* baseline_of(const SweepResult& r, const SweepEntry& e) {
    for (const auto& b : r.entries)
        if (b.baseline && b.group == e.group) return &b;
    return nullptr;
}

}  // namespace detail

struct SweepRowStats {
    std::optional<double> mean, std, delta;  // fractions
};

inline SweepRowStats row_stats(const SweepResult& r, const SweepEntry& e) {
    SweepRowStats s;
    const auto v = detail::finite(e.oa);
    if (v.size() != e.oa.size() || v.empty()) return s;
    s.mean = mean_of(v);
    s.std = std_of(v);
    const auto* b = detail::baseline_of(r, e);
    if (b) {
        const auto bv = detail::finite(b->oa);
        if (bv.size() == b->oa.size() && !bv.empty()) s.delta = *s.mean - mean_of(bv);
    }
    return s;
}

inline std::string sweep_markdown(const SweepResult& r) {
    const bool multi = r.seeds >= 2;
    std::string s = "Sweep: " + to_string(r.kind) + ", " + std::to_string(r.seeds) + " seed(s). ΔAcc is against the tiny baseline";
    s += r.kind == SweepKind::scale ? " of the same scale.\n\n" : ".\n\n";
    s += multi ? "| run | mean OA (%) | std OA (%) | ΔAcc (%) |\n|---|---:|---:|---:|\n"
               : "| run | OA (%) | ΔAcc (%) |\n|---|---:|---:|\n";
    for (const auto& e : r.entries) {
        const auto st = row_stats(r, e);
        s += "| " + e.label + " | " + percent(st.mean) + (multi ? " | " + percent(st.std) : std::string()) + " | " +
             (e.baseline ? std::string("-") : percent(st.delta, true)) + " |";
        if (!e.errors.empty()) s += " failed: " + e.errors.front();
        s += "\n";
    }
    return s;
}

inline std::string sweep_csv(const SweepResult& r) {
    const bool multi = r.seeds >= 2;
    std::string s = multi ? "run,mean_oa,std_oa,delta" : "run,oa,delta";
    for (std::size_t k = 0; multi && k < r.seeds; ++k) s += ",oa_seed" + std::to_string(k);
    s += ",status\n";
    auto num = [](std::optional<double> v) { return v ? train::format_number(*v) : std::string(); };
    for (const auto& e : r.entries) {
        const auto st = row_stats(r, e);
        s += e.label + "," + num(st.mean) + (multi ? "," + num(st.std) : std::string()) + "," +
             (e.baseline ? std::string() : num(st.delta));
        for (std::size_t k = 0; multi && k < r.seeds; ++k)
            s += "," + (std::isfinite(e.oa[k]) ? train::format_number(e.oa[k]) : std::string());
        s += std::string(",") + (e.errors.empty() ? "ok" : "failed") + "\n";
    }
    return s;
}

}  // namespace t3d::harness
