// t3dnet command-line tool: dataset generation and ingestion, training,
// evaluation, cost reports and sweeps.
//
// Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 numeric
// divergence, 4 format error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "t3dnet/data/off.hpp"
#include "t3dnet/data/pcds.hpp"
#include "t3dnet/data/pointcloud.hpp"
#include "t3dnet/data/synthetic.hpp"
#include "t3dnet/harness/report.hpp"
#include "t3dnet/harness/sweep.hpp"
#include "t3dnet/models/cost.hpp"
#include "t3dnet/train/checkpoint.hpp"
#include "t3dnet/train/metrics.hpp"
#include "t3dnet/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace t3d;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

double parse_scale(const std::string& s) {
    try {
        const auto slash = s.find('/');
        std::size_t used = 0;
        double v;
        if (slash == std::string::npos) {
            v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
        } else {
            const double a = std::stod(s.substr(0, slash)), b = std::stod(s.substr(slash + 1));
            v = a / b;
        }
        if (!(v > 0.0 && v <= 1.0)) throw ConfigError("scale " + s + " is outside (0, 1]");
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse scale '" + s + "'");
    }
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::string classes;
    std::uint32_t train_per_class = 100, test_per_class = 30, points = 256;
    double sigma = 0.01;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
    data::SyntheticSpec spec;
    if (!a.classes.empty()) spec.classes = split_list(a.classes);
    spec.train_per_class = a.train_per_class;
    spec.test_per_class = a.test_per_class;
    spec.points_per_cloud = a.points;
    spec.noise_sigma = a.sigma;
    const auto ds = data::generate_synthetic(spec, a.seed);
    data::write_dataset(ds, a.out);
    std::cout << "wrote " << a.out << ": " << ds.num_classes() << " classes, " << ds.train.size() << " train / "
              << ds.test.size() << " test clouds of " << ds.points_per_cloud << " points\n";
    for (std::size_t c = 0; c < ds.num_classes(); ++c) std::cout << "  " << c << " " << ds.class_names[c] << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ingest-off

struct IngestArgs {
    std::string root, out;
    std::uint32_t points = 1024;
    std::uint64_t seed = 0;
};

int cmd_ingest_off(const IngestArgs& a) {
    if (!fs::is_directory(a.root)) throw ConfigError("OFF root " + a.root + " is not a directory");
    std::vector<std::string> classes;
    for (const auto& e : fs::directory_iterator(a.root))
        if (e.is_directory()) classes.push_back(e.path().filename().string());
    std::sort(classes.begin(), classes.end());
    data::Dataset ds;
    ds.name = fs::path(a.root).filename().string();
    ds.class_names = classes;
    ds.points_per_cloud = a.points;
    ds.seed = a.seed;
    std::size_t files = 0;
    for (std::uint32_t c = 0; c < classes.size(); ++c)
        for (const char* split : {"train", "test"}) {
            const fs::path dir = fs::path(a.root) / classes[c] / split;
            if (!fs::is_directory(dir)) continue;
            std::vector<fs::path> paths;
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_regular_file() && e.path().extension() == ".off") paths.push_back(e.path());
            std::sort(paths.begin(), paths.end());
            auto& target = std::string(split) == "train" ? ds.train : ds.test;
            for (std::size_t i = 0; i < paths.size(); ++i) {
                const auto bytes = io::read_file(paths[i]);
                data::TriMesh mesh;
                try {
                    mesh = data::parse_off(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
                } catch (const ParseError& e) {
                    throw ParseError(e.reason() + " in " + paths[i].string(), e.line());
                }
                const auto seed = derive_seed(a.seed, {c, std::string(split) == "train" ? 0u : 1u, i});
                std::vector<double> pts;
                try {
                    pts = data::sample_mesh(mesh, a.points, seed);
                } catch (const GeometryError& e) {
                    throw GeometryError(paths[i].string() + ": " + e.what());
                }
                target.push_back({data::to_float(data::normalize_unit_sphere(pts)), c});
                ++files;
            }
        }
    if (files == 0) throw ConfigError("no OFF files found under " + a.root + " (expected <root>/<class>/<split>/*.off)");
    data::write_dataset(ds, a.out);
    std::cout << "wrote " << a.out << ": " << classes.size() << " classes, " << ds.train.size() << " train / "
              << ds.test.size() << " test clouds from " << files << " OFF files\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / sweep plan flags

struct PlanFlags {
    std::string config;
    std::optional<std::string> mode, data, model, teacher, teacher_model, init, out, beta_mode, warmup;
    std::optional<std::uint32_t> epochs, epochs2, batch_size, lr_step;
    std::optional<double> lr, lr_decay, beta_start, beta_end, alpha, temperature, tiny_scale;
    std::optional<std::uint64_t> seed, data_seed, subnet_seed;
    bool allow_digest_mismatch = false;
};

void add_plan_flags(CLI::App* app, PlanFlags& f, bool with_mode) {
    app->add_option("--config", f.config, "JSON training config; flags override its values");
    if (with_mode) app->add_option("--mode", f.mode, "teacher | tiny | netaug | kd | two-stage | hint | mutual | end2end");
    app->add_option("--data", f.data, "dataset directory (manifest.json + PCDS files)");
    app->add_option("--model", f.model, "model config: mini (default), canonical or a JSON path");
    app->add_option("--teacher", f.teacher, "teacher checkpoint (kd, two-stage, hint, end2end)");
    app->add_option("--teacher-model", f.teacher_model, "teacher model config (default: --model)");
    app->add_option("--init", f.init, "starting checkpoint");
    app->add_option("--out", f.out, "output directory (default runs/default)");
    app->add_option("--epochs", f.epochs, "epochs of single-stage modes and of stage 1 (default 30)");
    app->add_option("--epochs2", f.epochs2, "stage-2 epochs of two-stage (default 30)");
    app->add_option("--batch-size", f.batch_size, "batch size (default 32)");
    app->add_option("--lr", f.lr, "base learning rate (default 1e-3)");
    app->add_option("--lr-decay", f.lr_decay, "step decay factor (default 0.7)");
    app->add_option("--lr-step", f.lr_step, "epochs per decay step (default 20)");
    app->add_option("--beta-mode", f.beta_mode, "static | linear (default linear)");
    app->add_option("--beta-start", f.beta_start, "beta at the first stage-1 epoch (default 0.9)");
    app->add_option("--beta-end", f.beta_end, "beta at the last stage-1 epoch (default 0.5)");
    app->add_option("--alpha", f.alpha, "distillation weight (default 0.5)");
    app->add_option("--temperature,-T", f.temperature, "distillation temperature (default 1)");
    app->add_option("--warmup", f.warmup, "end2end warm-up epochs, or inf (default epochs/2)");
    app->add_option("--tiny-scale", f.tiny_scale, "tiny channel scale, overriding the model config");
    app->add_option("--seed", f.seed, "initialization seed (default 1)");
    app->add_option("--data-seed", f.data_seed, "batch-order seed (default 2)");
    app->add_option("--subnet-seed", f.subnet_seed, "augmented-selection seed (default 3)");
    app->add_flag("--allow-digest-mismatch", f.allow_digest_mismatch, "load checkpoints built for another config");
}

train::TrainPlan resolve_plan(const PlanFlags& f) {
    train::TrainPlan p;
    if (!f.config.empty()) {
        const auto bytes = io::read_file(f.config);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.begin(), bytes.end());
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(f.config + ": " + e.what());
        }
        p = train::plan_from_json(j, p);
    }
    if (f.mode) p.mode = train::parse_mode(*f.mode);
    if (f.data) p.dataset = *f.data;
    if (f.model) p.model_config = *f.model;
    if (f.teacher) p.teacher_checkpoint = *f.teacher;
    if (f.teacher_model) p.teacher_model_config = *f.teacher_model;
    if (f.init) p.init_checkpoint = *f.init;
    if (f.out) p.output_dir = *f.out;
    if (f.epochs) p.epochs_stage1 = *f.epochs;
    if (f.epochs2) p.epochs_stage2 = *f.epochs2;
    if (f.batch_size) p.batch_size = *f.batch_size;
    if (f.lr) p.lr.base_lr = *f.lr;
    if (f.lr_decay) p.lr.decay_factor = *f.lr_decay;
    if (f.lr_step) p.lr.step_size = static_cast<int>(*f.lr_step);
    if (f.beta_mode) p.beta_mode = parse_beta_mode(*f.beta_mode);
    if (f.beta_start) p.beta_start = *f.beta_start;
    if (f.beta_end) p.beta_end = *f.beta_end;
    if (f.alpha) p.alpha = *f.alpha;
    if (f.temperature) p.temperature = *f.temperature;
    if (f.warmup) {
        if (*f.warmup == "inf") {
            p.warmup = train::kNoWarmupEnd;
        } else {
            try {
                std::size_t used = 0;
                const unsigned long v = std::stoul(*f.warmup, &used);
                if (used != f.warmup->size()) throw std::invalid_argument(*f.warmup);
                p.warmup = static_cast<std::uint32_t>(v);
            } catch (const std::logic_error&) {
                throw ConfigError("--warmup expects an epoch count or inf, got '" + *f.warmup + "'");
            }
        }
    }
    if (f.tiny_scale) p.tiny_scale = *f.tiny_scale;
    if (f.seed) p.seeds.init = *f.seed;
    if (f.data_seed) p.seeds.data = *f.data_seed;
    if (f.subnet_seed) p.seeds.subnet = *f.subnet_seed;
    if (f.allow_digest_mismatch) p.allow_digest_mismatch = true;
    return p;
}

int cmd_train(const PlanFlags& f) {
    const auto plan = resolve_plan(f);
    const auto r = train::run(plan);
    for (const auto& s : r.stages)
        std::cout << s.name << ": retained test OA " << harness::percent(s.retained_oa) << "% (epoch "
                  << s.retained.epoch << "), checkpoint " << s.checkpoint_path.string() << ", metrics "
                  << s.csv_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string checkpoint, data, model = "mini", selection = "tiny", split = "test";
    std::optional<double> tiny_scale;
    bool allow_digest_mismatch = false;
};

int cmd_eval(const EvalArgs& a) {
    const auto ckpt = train::load_checkpoint(a.checkpoint);
    if (a.data.empty()) throw ConfigError("eval needs --data");
    const auto ds = data::read_dataset(a.data);
    auto spec = train::resolve_model_config(a.model, static_cast<std::uint32_t>(ds.num_classes()));
    if (a.tiny_scale) spec.width_scale_tiny = *a.tiny_scale;
    auto net = models::Supernet<float>::with_default_options(spec, 0);
    train::restore(net, ckpt, a.allow_digest_mismatch);
    SubnetSelection sel;
    if (a.selection == "tiny") sel = net.tiny();
    else if (a.selection == "full") sel = net.full();
    else throw ConfigError("--selection must be tiny or full");
    if (a.split != "train" && a.split != "test") throw ConfigError("--split must be train or test");
    const auto& split = a.split == "train" ? ds.train : ds.test;
    const auto r = train::evaluate(net, sel, split);
    std::cout << "selection=" << a.selection << " split=" << a.split << " oa=" << train::format_number(r.oa)
              << " correct=" << r.correct << " total=" << r.total << " ce=" << train::format_number(r.ce) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::string model = "canonical", scales = "1,1/4,1/8", out_md, out_csv;
    std::uint32_t points = 1024, classes = 0;
    std::vector<std::string> runs, baselines;
};

int cmd_report(const ReportArgs& a) {
    auto spec = train::resolve_model_config(a.model, a.classes ? a.classes : (a.model == "mini" ? 8u : 40u));
    harness::Report rep;
    rep.model_name = spec.name;
    rep.n_points = a.points;
    for (const auto& s : split_list(a.scales)) rep.rows.push_back(harness::cost_row(spec, parse_scale(s), a.points));
    for (const auto& r : a.runs) {
        const auto eq = r.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--run expects name=metrics.csv, got '" + r + "'");
        const auto log = train::read_metrics_csv(r.substr(eq + 1));
        rep.rows.push_back(harness::accuracy_row(spec, r.substr(0, eq), log, a.points));
    }
    for (const auto& b : a.baselines) {
        const auto& row = rep.row(b);
        if (!row.oa) throw ConfigError("baseline '" + b + "' has no accuracy");
        rep.baselines.push_back(b);
    }
    const auto md = harness::report_markdown(rep);
    std::cout << md;
    if (!a.out_md.empty()) io::write_text_atomic(a.out_md, md);
    if (!a.out_csv.empty()) io::write_text_atomic(a.out_csv, harness::report_csv(rep));
    return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
    std::string kind;
    std::size_t seeds = 1, parallel = 1;
};

int cmd_sweep(const SweepArgs& a, const PlanFlags& f) {
    const auto kind = harness::parse_sweep(a.kind);
    auto plan = resolve_plan(f);
    if (!f.out && f.config.empty()) plan.output_dir = "runs/sweep_" + a.kind;
    if (plan.teacher_checkpoint.empty()) throw ConfigError("sweep " + a.kind + " needs a teacher checkpoint (--teacher)");
    const auto res = harness::run_sweep(kind, plan, a.seeds, a.parallel);
    const auto md = harness::sweep_markdown(res);
    std::cout << md;
    const fs::path out = plan.output_dir;
    fs::create_directories(out);
    io::write_text_atomic(out / "sweep.md", md);
    io::write_text_atomic(out / "sweep.csv", harness::sweep_csv(res));
    return res.ok() ? 0 : *res.first_failure_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"t3dnet: tiny point-cloud classifiers trained with network augmentation and distillation"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* g = app.add_subcommand("gen-data", "generate the synthetic primitives dataset");
    g->add_option("--classes", gen.classes, "comma-separated primitives (default: all 8)");
    g->add_option("--train-per-class", gen.train_per_class, "training clouds per class")->capture_default_str();
    g->add_option("--test-per-class", gen.test_per_class, "test clouds per class")->capture_default_str();
    g->add_option("--points", gen.points, "points per cloud")->capture_default_str();
    g->add_option("--sigma", gen.sigma, "Gaussian jitter standard deviation")->capture_default_str();
    g->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
    g->add_option("--out", gen.out, "output dataset directory")->required();

    IngestArgs ing;
    auto* i = app.add_subcommand("ingest-off", "sample a <root>/<class>/<split>/*.off tree into a dataset");
    i->add_option("--root", ing.root, "root of the OFF tree")->required();
    i->add_option("--points", ing.points, "points per cloud")->capture_default_str();
    i->add_option("--seed", ing.seed, "sampling seed")->capture_default_str();
    i->add_option("--out", ing.out, "output dataset directory")->required();

    PlanFlags train_flags;
    auto* t = app.add_subcommand("train", "train one mode; writes checkpoints, metrics CSVs and a run manifest");
    add_plan_flags(t, train_flags, true);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "overall accuracy of a checkpoint");
    e->add_option("--checkpoint", ev.checkpoint, "T3DN checkpoint")->required();
    e->add_option("--data", ev.data, "dataset directory")->required();
    e->add_option("--model", ev.model, "model config")->capture_default_str();
    e->add_option("--selection", ev.selection, "tiny or full")->capture_default_str();
    e->add_option("--split", ev.split, "train or test")->capture_default_str();
    e->add_option("--tiny-scale", ev.tiny_scale, "tiny channel scale override");
    e->add_flag("--allow-digest-mismatch", ev.allow_digest_mismatch, "skip the config digest check");

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "#Params / FLOPs / OA table");
    r->add_option("--model", rep.model, "model config")->capture_default_str();
    r->add_option("--classes", rep.classes, "class count for built-in configs (default 40 canonical, 8 mini)");
    r->add_option("--scales", rep.scales, "comma-separated channel scales")->capture_default_str();
    r->add_option("--points", rep.points, "input points for FLOPs")->capture_default_str();
    r->add_option("--run", rep.runs, "name=metrics.csv accuracy row (repeatable)");
    r->add_option("--baseline", rep.baselines, "row name for a ΔAcc column (repeatable)");
    r->add_option("--out-md", rep.out_md, "write the Markdown table here");
    r->add_option("--out-csv", rep.out_csv, "write the CSV table here");

    SweepArgs sw;
    PlanFlags sweep_flags;
    auto* s = app.add_subcommand("sweep", "temperature, scale or mode sweep over a base plan");
    s->add_option("--sweep", sw.kind, "temperature | scale | mode")->required();
    s->add_option("--seeds", sw.seeds, "seeds per configuration")->capture_default_str();
    s->add_option("--parallel", sw.parallel, "concurrent sub-runs")->capture_default_str();
    add_plan_flags(s, sweep_flags, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? 0 : 1;
    }

    try {
        if (g->parsed()) return cmd_gen_data(gen);
        if (i->parsed()) return cmd_ingest_off(ing);
        if (t->parsed()) return cmd_train(train_flags);
        if (e->parsed()) return cmd_eval(ev);
        if (r->parsed()) return cmd_report(rep);
        if (s->parsed()) return cmd_sweep(sw, sweep_flags);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return harness::exit_code_for(err);
    }
    return 1;
}
