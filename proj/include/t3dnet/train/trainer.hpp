#pragma once

// Training orchestration: teacher pre-training, the two stages, the ablation
// modes, evaluation and run artifacts.
//
// Output files per run directory:
//   manifest.json                    resolved plan, digests, timestamps, outputs
//   <stage>.t3dn / <stage>.csv       per stage; stage names are the mode name,
//                                    or stage1 / stage2 for two-stage
//   summary.json                     retained and last test OA per stage

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "t3dnet/augmentation/expand.hpp"
#include "t3dnet/augmentation/stage1.hpp"
#include "t3dnet/core/error.hpp"
#include "t3dnet/core/io.hpp"
#include "t3dnet/core/ops.hpp"
#include "t3dnet/core/optim.hpp"
#include "t3dnet/core/rng.hpp"
#include "t3dnet/data/batching.hpp"
#include "t3dnet/data/pcds.hpp"
#include "t3dnet/data/pointcloud.hpp"
#include "t3dnet/distillation/losses.hpp"
#include "t3dnet/models/geometry.hpp"
#include "t3dnet/models/spec.hpp"
#include "t3dnet/models/supernet.hpp"
#include "t3dnet/train/checkpoint.hpp"
#include "t3dnet/train/metrics.hpp"

namespace t3d::train {

inline constexpr const char* kToolVersion = "t3dnet 1.0.0";

enum class Mode { teacher, tiny, netaug, kd, two_stage, hint, mutual, end2end };

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::teacher: return "teacher";
        case Mode::tiny: return "tiny";
        case Mode::netaug: return "netaug";
        case Mode::kd: return "kd";
        case Mode::two_stage: return "two-stage";
        case Mode::hint: return "hint";
        case Mode::mutual: return "mutual";
        case Mode::end2end: return "end2end";
    }
    return "?";
}

inline Mode parse_mode(const std::string& s) {
    if (s == "teacher") return Mode::teacher;
    if (s == "tiny" || s == "tiny-baseline") return Mode::tiny;
    if (s == "netaug" || s == "netaug-only") return Mode::netaug;
    if (s == "kd" || s == "kd-only") return Mode::kd;
    if (s == "two-stage" || s == "two_stage") return Mode::two_stage;
    if (s == "hint") return Mode::hint;
    if (s == "mutual") return Mode::mutual;
    if (s == "end2end") return Mode::end2end;
    throw ConfigError("unknown mode '" + s + "' (teacher, tiny, netaug, kd, two-stage, hint, mutual, end2end)");
}

inline bool needs_teacher(Mode m) {
    return m == Mode::kd || m == Mode::two_stage || m == Mode::hint || m == Mode::end2end;
}

inline const std::vector<Mode>& all_modes() {
    static const std::vector<Mode> m{Mode::tiny, Mode::netaug, Mode::kd, Mode::two_stage,
                                     Mode::hint, Mode::mutual, Mode::end2end};
    return m;
}

struct Seeds {
    std::uint64_t init = 1;    // weights, hint map, dropout
    std::uint64_t data = 2;    // batch order
    std::uint64_t subnet = 3;  // per-epoch augmented selections
};

inline constexpr std::uint32_t kNoWarmupEnd = std::numeric_limits<std::uint32_t>::max();

/// Single-stage modes run epochs_stage1 epochs; two-stage runs both counts.
struct TrainPlan {
    Mode mode = Mode::two_stage;
    std::uint32_t epochs_stage1 = 30;
    std::uint32_t epochs_stage2 = 30;
    std::uint32_t batch_size = 32;
    LrSchedule lr{};
    BetaMode beta_mode = BetaMode::linear_decay;  // spans the stage-1 epochs
    double beta_start = 0.9;
    double beta_end = 0.5;
    double alpha = 0.5;
    double temperature = 1.0;
    std::optional<std::uint32_t> warmup;  // end2end; default epochs_stage1 / 2
    std::optional<double> tiny_scale;     // overrides the model config's width_scale_tiny
    Seeds seeds{};
    std::string dataset;
    std::string model_config = "mini";  // "mini", "canonical" or a JSON path
    std::string teacher_checkpoint;
    std::string teacher_model_config;  // defaults to model_config
    std::string init_checkpoint;       // optional starting weights
    std::string output_dir = "runs/default";
    bool allow_digest_mismatch = false;

    BetaSchedule beta_schedule() const { return {beta_mode, beta_start, beta_end, std::max(1u, epochs_stage1)}; }
    std::uint32_t warmup_epochs() const { return warmup.value_or(epochs_stage1 / 2); }
};

inline void validate(const TrainPlan& p) {
    if (p.batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (p.mode == Mode::two_stage && (p.epochs_stage1 == 0 || p.epochs_stage2 == 0))
        throw ConfigError("two-stage needs epochs_stage1 > 0 and epochs_stage2 > 0");
    if (needs_teacher(p.mode) && p.teacher_checkpoint.empty())
        throw ConfigError("mode " + to_string(p.mode) + " needs a teacher checkpoint (--teacher)");
    if (!needs_teacher(p.mode) && !p.teacher_checkpoint.empty())
        throw ConfigError("mode " + to_string(p.mode) + " does not use a teacher checkpoint");
    if (!(p.lr.base_lr > 0.0) || !(p.lr.decay_factor > 0.0) || p.lr.step_size <= 0)
        throw ConfigError("learning-rate schedule needs base_lr > 0, decay_factor > 0, step_size > 0");
    validate(p.beta_schedule());
    validate(KDConfig{p.temperature, p.alpha});
    if (p.tiny_scale && !(*p.tiny_scale > 0.0 && *p.tiny_scale < 1.0))
        throw ConfigError("tiny_scale must lie in (0, 1)");
}

inline nlohmann::json to_json(const TrainPlan& p) {
    nlohmann::json j{
        {"mode", to_string(p.mode)},
        {"epochs_stage1", p.epochs_stage1},
        {"epochs_stage2", p.epochs_stage2},
        {"batch_size", p.batch_size},
        {"lr", {{"base", p.lr.base_lr}, {"decay_factor", p.lr.decay_factor}, {"step_size", p.lr.step_size}}},
        {"beta", {{"mode", to_string(p.beta_mode)}, {"start", p.beta_start}, {"end", p.beta_end}}},
        {"alpha", p.alpha},
        {"temperature", p.temperature},
        {"warmup", p.warmup_epochs() == kNoWarmupEnd ? nlohmann::json("inf") : nlohmann::json(p.warmup_epochs())},
        {"seeds", {{"init", p.seeds.init}, {"data", p.seeds.data}, {"subnet", p.seeds.subnet}}},
        {"dataset", p.dataset},
        {"model_config", p.model_config},
        {"teacher_checkpoint", p.teacher_checkpoint},
        {"teacher_model_config", p.teacher_model_config},
        {"init_checkpoint", p.init_checkpoint},
        {"output_dir", p.output_dir},
        {"allow_digest_mismatch", p.allow_digest_mismatch},
    };
    j["tiny_scale"] = p.tiny_scale ? nlohmann::json(*p.tiny_scale) : nlohmann::json(nullptr);
    return j;
}

/// Overlays the keys present in `j` onto `base`. Unknown keys are errors.
inline TrainPlan plan_from_json(const nlohmann::json& j, TrainPlan p = {}) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "mode") p.mode = parse_mode(v.get<std::string>());
            else if (k == "epochs_stage1") p.epochs_stage1 = v.get<std::uint32_t>();
            else if (k == "epochs_stage2") p.epochs_stage2 = v.get<std::uint32_t>();
            else if (k == "batch_size") p.batch_size = v.get<std::uint32_t>();
            else if (k == "lr") {
                if (v.contains("base")) p.lr.base_lr = v.at("base").get<double>();
                if (v.contains("decay_factor")) p.lr.decay_factor = v.at("decay_factor").get<double>();
                if (v.contains("step_size")) p.lr.step_size = v.at("step_size").get<int>();
            } else if (k == "beta") {
                if (v.contains("mode")) p.beta_mode = parse_beta_mode(v.at("mode").get<std::string>());
                if (v.contains("start")) p.beta_start = v.at("start").get<double>();
                if (v.contains("end")) p.beta_end = v.at("end").get<double>();
            } else if (k == "alpha") p.alpha = v.get<double>();
            else if (k == "temperature") p.temperature = v.get<double>();
            else if (k == "warmup") {
                if (v.is_null()) p.warmup.reset();
                else if (v.is_string() && v.get<std::string>() == "inf") p.warmup = kNoWarmupEnd;
                else p.warmup = v.get<std::uint32_t>();
            } else if (k == "tiny_scale") {
                if (v.is_null()) p.tiny_scale.reset();
                else p.tiny_scale = v.get<double>();
            } else if (k == "seeds") {
                if (v.contains("init")) p.seeds.init = v.at("init").get<std::uint64_t>();
                if (v.contains("data")) p.seeds.data = v.at("data").get<std::uint64_t>();
                if (v.contains("subnet")) p.seeds.subnet = v.at("subnet").get<std::uint64_t>();
            } else if (k == "dataset") p.dataset = v.get<std::string>();
            else if (k == "model_config") p.model_config = v.get<std::string>();
            else if (k == "teacher_checkpoint") p.teacher_checkpoint = v.get<std::string>();
            else if (k == "teacher_model_config") p.teacher_model_config = v.get<std::string>();
            else if (k == "init_checkpoint") p.init_checkpoint = v.get<std::string>();
            else if (k == "output_dir") p.output_dir = v.get<std::string>();
            else if (k == "allow_digest_mismatch") p.allow_digest_mismatch = v.get<bool>();
            else throw ConfigError("unknown training config key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
    return p;
}

/// "mini", "canonical" or a JSON model config path.
inline models::SupernetSpec resolve_model_config(const std::string& name, std::uint32_t num_classes) {
    if (name == "mini") return models::mini_spec(num_classes);
    if (name == "canonical") return models::canonical_spec(num_classes);
    if (name.empty()) throw ConfigError("no model config given");
    if (!std::filesystem::exists(name)) throw ConfigError("model config " + name + " does not exist");
    return models::load_spec(name);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
    double oa = 0;
    double ce = 0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

using GeometryCache = std::vector<models::CloudGeometry>;

inline GeometryCache compute_geometry_cache(const models::SupernetSpec& spec, std::span<const data::PointCloud> split) {
    GeometryCache g;
    g.reserve(split.size());
    for (const auto& s : split) g.push_back(models::compute_geometry(spec, s.points));
    return g;
}

inline std::vector<const models::CloudGeometry*> geometry_ptrs(const GeometryCache& cache,
                                                               std::span<const std::size_t> indices) {
    std::vector<const models::CloudGeometry*> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(&cache[i]);
    return out;
}

/// Overall accuracy and mean cross-entropy of `sel` on `split`, in evaluation
/// mode. Parameters and statistics are not touched.
template <typename T>
EvalResult evaluate(models::Supernet<T>& net, const SubnetSelection& sel, std::span<const data::PointCloud> split,
                    const GeometryCache& geometry, std::size_t batch_size = 64) {
    if (split.empty()) throw ConfigError("evaluate: empty split");
    if (geometry.size() != split.size()) throw ContractError("evaluate: geometry cache does not match the split");
    NoGradGuard guard;
    EvalResult r;
    double ce_sum = 0;
    for (const auto& idx : data::batch_indices(split.size(), batch_size, 0, 0, false)) {
        const auto b = data::make_batch(split, idx);
        const auto geo = geometry_ptrs(geometry, idx);
        const auto out = net.forward(b.points, b.size(), geo, sel, {false, models::StatsPolicy::none, nullptr});
        const auto pred = argmax_rows(out.logits);
        for (std::size_t i = 0; i < pred.size(); ++i) r.correct += pred[i] == b.labels[i];
        ce_sum += static_cast<double>(cross_entropy(out.logits, b.labels).item()) * static_cast<double>(b.size());
        r.total += b.size();
    }
    r.oa = static_cast<double>(r.correct) / static_cast<double>(r.total);
    r.ce = ce_sum / static_cast<double>(r.total);
    return r;
}

template <typename T>
EvalResult evaluate(models::Supernet<T>& net, const SubnetSelection& sel, std::span<const data::PointCloud> split) {
    return evaluate(net, sel, split, compute_geometry_cache(net.spec(), split));
}

// ---------------------------------------------------------------------------
// Stages

/// Teacher outputs per training sample, computed once in evaluation mode.
struct TeacherCache {
    std::size_t classes = 0, feature_width = 0;
    std::vector<float> logits;    // n x classes
    std::vector<float> features;  // n x feature_width

    template <typename T>
    Tensor<T> rows(const std::vector<float>& src, std::size_t width, std::span<const std::size_t> idx) const {
        std::vector<T> v;
        v.reserve(idx.size() * width);
        for (auto i : idx) v.insert(v.end(), src.begin() + i * width, src.begin() + (i + 1) * width);
        return Tensor<T>({idx.size(), width}, std::move(v));
    }
};

inline TeacherCache build_teacher_cache(models::Supernet<float>& teacher, std::span<const data::PointCloud> split,
                                        const GeometryCache& geometry) {
    NoGradGuard guard;
    TeacherCache c;
    c.classes = teacher.spec().num_classes;
    for (const auto& idx : data::batch_indices(split.size(), 64, 0, 0, false)) {
        const auto b = data::make_batch(split, idx);
        const auto out = teacher.forward(b.points, b.size(), geometry_ptrs(geometry, idx), teacher.full(),
                                         {false, models::StatsPolicy::none, nullptr});
        c.feature_width = out.global_feature.dim(1);
        c.logits.insert(c.logits.end(), out.logits.data().begin(), out.logits.data().end());
        c.features.insert(c.features.end(), out.global_feature.data().begin(), out.global_feature.data().end());
    }
    return c;
}

struct StageResult {
    std::string name;
    Objective objective = Objective::cross_entropy;
    std::vector<EpochMetrics> rows;
    std::vector<SubnetSelection> selections;  // augmented selection per epoch, when sampled
    Checkpoint retained;                      // best test OA (initialization when no epochs ran)
    double retained_oa = -1;
    double last_oa = -1;
    std::filesystem::path checkpoint_path, csv_path;
};

struct RunResult {
    std::vector<StageResult> stages;
    nlohmann::json manifest;

    const StageResult& final_stage() const { return stages.back(); }
    /// Test OA of the run's output model.
    double final_oa() const { return stages.back().retained_oa; }
};

namespace detail {

inline constexpr std::uint64_t kDropoutStream = 0xd0;
inline constexpr std::uint64_t kHintStream = 0x41;

struct StageSetup {
    std::string name;
    Objective objective = Objective::cross_entropy;
    std::uint32_t epochs = 0;
    bool train_full = false;  // teacher: optimize and evaluate the full selection
    const TeacherCache* teacher = nullptr;
    HintMap<float>* hint = nullptr;
};

inline bool samples_augmented(Objective o) {
    return o == Objective::augmented || o == Objective::mutual || o == Objective::end_to_end;
}

inline double mean_item(const Tensor<float>& t) { return static_cast<double>(t.item()); }

struct Accumulator {
    double n = 0, ce_tiny = 0, ce_aug = 0, kd = 0, hint = 0, total = 0, correct = 0;
    void add(double b, double ct, double ca, double k, double h, double tot) {
        n += b;
        ce_tiny += b * ct;
        ce_aug += b * ca;
        kd += b * k;
        hint += b * h;
        total += b * tot;
    }
};

inline StageResult run_stage(const TrainPlan& plan, const StageSetup& st, models::Supernet<float>& net,
                             const data::Dataset& ds, const GeometryCache& train_geo, const GeometryCache& test_geo) {
    StageResult res;
    res.name = st.name;
    res.objective = st.objective;
    const auto& options = net.options();
    const SubnetSelection primary = st.train_full ? net.full() : net.tiny();
    const std::string primary_label = selection_label(options, primary);
    const auto beta_sched = plan.beta_schedule();
    const std::uint32_t warmup = plan.warmup_epochs();
    const bool aug = samples_augmented(st.objective);
    const models::StatsPolicy primary_stats =
        (st.objective == Objective::distill || st.objective == Objective::hint) ? models::StatsPolicy::tiny_only
                                                                               : models::StatsPolicy::all;

    std::vector<Parameter<float>> params = net.parameters();
    std::vector<Parameter<float>> extra;
    if (st.hint) {
        params.push_back(st.hint->weight);
        extra.push_back(st.hint->weight);
    }
    AdamState<float> adam;
    res.retained = capture<float>(net, 0, extra);

    for (std::uint32_t e = 0; e < st.epochs; ++e) {
        adam.lr = lr_at(plan.lr, static_cast<int>(e));
        SubnetSelection aug_sel;
        if (aug) {
            aug_sel = epoch_selection(options, plan.seeds.subnet, e);
            res.selections.push_back(aug_sel);
        }
        double beta = 1.0, alpha = 0.0;
        switch (st.objective) {
            case Objective::augmented: beta = beta_at(beta_sched, e); break;
            case Objective::distill:
            case Objective::hint: alpha = plan.alpha; break;
            case Objective::end_to_end:
                beta = beta_at(beta_sched, e);
                alpha = end_to_end_alpha(plan.alpha, e, warmup);
                break;
            default: break;
        }

        Accumulator acc;
        const auto groups = data::batch_indices(ds.train.size(), plan.batch_size, plan.seeds.data, e);
        for (std::size_t bi = 0; bi < groups.size(); ++bi) {
            const auto& idx = groups[bi];
            const auto batch = data::make_batch(ds.train, idx);
            const auto geo = geometry_ptrs(train_geo, idx);
            const std::size_t B = batch.size();
            Rng rng_primary(derive_seed(plan.seeds.init, {kDropoutStream, e, bi, 0}));
            Rng rng_aug(derive_seed(plan.seeds.init, {kDropoutStream, e, bi, 1}));
            try {
                const auto fp = net.forward(batch.points, B, geo, primary, {true, primary_stats, &rng_primary});
                auto forward_aug = [&] {
                    return net.forward(batch.points, B, geo, aug_sel, {true, models::StatsPolicy::skip_tiny, &rng_aug});
                };
                const Tensor<float> ce_t = cross_entropy(fp.logits, batch.labels);
                double ca = 0, kd = 0, hv = 0;
                Tensor<float> total;
                switch (st.objective) {
                    case Objective::cross_entropy: total = ce_t; break;
                    case Objective::augmented: {
                        const auto terms = stage1_terms(fp.logits, forward_aug().logits, batch.labels, beta);
                        ca = mean_item(terms.ce_aug);
                        total = terms.total;
                        break;
                    }
                    case Objective::distill: {
                        const auto k = kd_loss(st.teacher->rows<float>(st.teacher->logits, st.teacher->classes, idx),
                                               fp.logits, plan.temperature);
                        kd = mean_item(k);
                        total = stage2_loss(k, ce_t, alpha);
                        break;
                    }
                    case Objective::hint: {
                        const auto tf = st.teacher->rows<float>(st.teacher->features, st.teacher->feature_width, idx);
                        const auto h = hint_loss(tf, fp.global_feature, *st.hint);
                        hv = mean_item(h);
                        total = scale(h, static_cast<float>(alpha)) + scale(ce_t, static_cast<float>(1.0 - alpha));
                        break;
                    }
                    case Objective::mutual: {
                        const auto fa = forward_aug();
                        const Tensor<float> ce_a = cross_entropy(fa.logits, batch.labels);
                        const auto [k_tiny, k_aug] = mutual_losses(fp.logits, fa.logits, plan.temperature);
                        ca = mean_item(ce_a);
                        kd = mean_item(k_tiny) + mean_item(k_aug);
                        total = ce_t + ce_a + k_tiny + k_aug;
                        break;
                    }
                    case Objective::end_to_end: {
                        const auto fa = forward_aug();
                        const Tensor<float> ce_a = cross_entropy(fa.logits, batch.labels);
                        const auto k = kd_loss(st.teacher->rows<float>(st.teacher->logits, st.teacher->classes, idx),
                                               fp.logits, plan.temperature);
                        ca = mean_item(ce_a);
                        kd = mean_item(k);
                        total = end_to_end_loss(k, ce_t, ce_a, plan.alpha, beta, e, warmup);
                        break;
                    }
                }
                if (!std::isfinite(total.item())) throw NumericError("loss is " + std::to_string(total.item()));
                const auto pred = argmax_rows(fp.logits);
                for (std::size_t i = 0; i < B; ++i) acc.correct += pred[i] == batch.labels[i];
                acc.add(static_cast<double>(B), mean_item(ce_t), ca, kd, hv, mean_item(total));
                backward(total);
                adam_step<float>(params, adam);
                zero_grad<float>(params);
            } catch (const NumericError& err) {
                throw TrainingError(st.name + ": numeric divergence at epoch " + std::to_string(e) + ", batch " +
                                    std::to_string(bi) + ": " + err.what());
            }
        }

        const std::string train_label = aug ? selection_label(options, aug_sel) : primary_label;
        EpochMetrics tr{e, "train", acc.ce_tiny / acc.n, acc.ce_aug / acc.n, acc.kd / acc.n, acc.hint / acc.n,
                        acc.total / acc.n, acc.correct / acc.n, adam.lr, beta, alpha, train_label};
        const auto ev = evaluate(net, primary, ds.test, test_geo);
        EpochMetrics te{e, "test", ev.ce, 0, 0, 0, ev.ce, ev.oa, adam.lr, beta, alpha, primary_label};
        res.rows.push_back(tr);
        res.rows.push_back(te);
        res.last_oa = ev.oa;
        if (ev.oa > res.retained_oa) {
            res.retained_oa = ev.oa;
            res.retained = capture<float>(net, e + 1, extra);
        }
    }
    if (st.epochs == 0) res.retained_oa = evaluate(net, primary, ds.test, test_geo).oa;
    return res;
}

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string dataset_digest(const data::Dataset& ds) {
    const auto nc = static_cast<std::uint32_t>(ds.num_classes());
    auto bytes = data::encode_pcds({nc, ds.points_per_cloud, ds.train});
    const auto test = data::encode_pcds({nc, ds.points_per_cloud, ds.test});
    bytes.insert(bytes.end(), test.begin(), test.end());
    return models::hex(models::sha256(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

}  // namespace detail

/// Everything a run consumes, already loaded.
struct RunInputs {
    const data::Dataset* dataset = nullptr;
    models::SupernetSpec spec;                        // student / supernet config
    std::optional<models::SupernetSpec> teacher_spec;  // when a teacher is used
    std::optional<Checkpoint> teacher;
    std::optional<Checkpoint> init;
};

/// Runs `plan` on loaded inputs, writing artifacts under plan.output_dir.
inline RunResult run(const TrainPlan& plan, const RunInputs& in) {
    validate(plan);
    if (!in.dataset) throw ConfigError("no dataset given");
    const auto& ds = *in.dataset;
    if (ds.train.empty() || ds.test.empty()) throw ConfigError("dataset needs non-empty train and test splits");
    models::SupernetSpec spec = in.spec;
    if (plan.tiny_scale) spec.width_scale_tiny = *plan.tiny_scale;
    if (spec.num_classes != ds.num_classes())
        throw ConfigError("model has " + std::to_string(spec.num_classes) + " classes, dataset has " +
                          std::to_string(ds.num_classes()));
    if (needs_teacher(plan.mode) && !in.teacher) throw ConfigError("mode " + to_string(plan.mode) + " needs a teacher (--teacher)");

    const std::filesystem::path out = plan.output_dir;
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

    auto net = models::Supernet<float>::with_default_options(spec, plan.seeds.init);
    if (in.init) restore(net, *in.init, plan.allow_digest_mismatch);

    const auto train_geo = compute_geometry_cache(spec, ds.train);
    const auto test_geo = compute_geometry_cache(spec, ds.test);

    std::optional<models::Supernet<float>> teacher;
    TeacherCache tcache;
    if (in.teacher) {
        const auto tspec = in.teacher_spec.value_or(in.spec);
        if (tspec.num_classes != spec.num_classes) throw ConfigError("teacher and student class counts differ");
        teacher.emplace(models::Supernet<float>::with_default_options(tspec, plan.seeds.init));
        restore(*teacher, *in.teacher, plan.allow_digest_mismatch);
        const bool same_geo = models::to_json(tspec).at("stages") == models::to_json(spec).at("stages");
        tcache = build_teacher_cache(*teacher, ds.train, same_geo ? train_geo : compute_geometry_cache(tspec, ds.train));
    }

    RunResult result;
    auto& m = result.manifest;
    m["tool"] = kToolVersion;
    m["plan"] = to_json(plan);
    m["seeds"] = {{"init", plan.seeds.init}, {"data", plan.seeds.data}, {"subnet", plan.seeds.subnet}};
    m["digests"] = {{"model", models::hex(models::spec_digest(spec))}, {"dataset", detail::dataset_digest(ds)}};
    if (in.teacher) m["digests"]["teacher_checkpoint_config"] = models::hex(in.teacher->digest);
    m["model"] = models::to_json(spec);
    m["start"] = detail::utc_now();
    m["end"] = nullptr;
    m["outputs"] = nlohmann::json::array();
    io::write_text_atomic(out / "manifest.json", m.dump(2) + "\n");

    std::optional<HintMap<float>> hint;
    if (plan.mode == Mode::hint) {
        const std::size_t sw = net.tiny().widths[net.plan().global_feature_layer()];
        hint.emplace(sw, tcache.feature_width, derive_seed(plan.seeds.init, {detail::kHintStream}));
    }

    std::vector<detail::StageSetup> stages;
    const std::uint32_t e1 = plan.epochs_stage1;
    switch (plan.mode) {
        case Mode::teacher: stages.push_back({"teacher", Objective::cross_entropy, e1, true}); break;
        case Mode::tiny: stages.push_back({"tiny", Objective::cross_entropy, e1}); break;
        case Mode::netaug: stages.push_back({"netaug", Objective::augmented, e1}); break;
        case Mode::kd: stages.push_back({"kd", Objective::distill, e1, false, &tcache}); break;
        case Mode::two_stage:
            stages.push_back({"stage1", Objective::augmented, e1});
            stages.push_back({"stage2", Objective::distill, plan.epochs_stage2, false, &tcache});
            break;
        case Mode::hint: stages.push_back({"hint", Objective::hint, e1, false, &tcache, &*hint}); break;
        case Mode::mutual: stages.push_back({"mutual", Objective::mutual, e1}); break;
        case Mode::end2end: stages.push_back({"end2end", Objective::end_to_end, e1, false, &tcache}); break;
    }

    nlohmann::json summary = nlohmann::json::array();
    for (std::size_t si = 0; si < stages.size(); ++si) {
        if (si > 0) restore(net, result.stages.back().retained);
        auto r = detail::run_stage(plan, stages[si], net, ds, train_geo, test_geo);
        r.checkpoint_path = out / (r.name + ".t3dn");
        r.csv_path = out / (r.name + ".csv");
        save_checkpoint(r.retained, r.checkpoint_path);
        write_metrics_csv(r.rows, r.csv_path);
        m["outputs"].push_back(r.checkpoint_path.string());
        m["outputs"].push_back(r.csv_path.string());
        summary.push_back({{"stage", r.name},
                           {"objective", to_string(r.objective)},
                           {"epochs", stages[si].epochs},
                           {"retained_epoch", r.retained.epoch},
                           {"retained_test_oa", r.retained_oa},
                           {"last_test_oa", r.last_oa}});
        result.stages.push_back(std::move(r));
    }
    if (teacher)
        for (const auto& p : teacher->parameters())
            if (p.value.has_grad()) throw ContractError("teacher parameter " + p.name + " received a gradient");

    io::write_text_atomic(out / "summary.json",
                          nlohmann::json{{"mode", to_string(plan.mode)}, {"final_test_oa", result.final_oa()},
                                         {"stages", summary}}
                                  .dump(2) +
                              "\n");
    m["outputs"].push_back((out / "summary.json").string());
    m["end"] = detail::utc_now();
    io::write_text_atomic(out / "manifest.json", m.dump(2) + "\n");
    return result;
}

/// Loads the plan's dataset, configs and checkpoints, then runs it.
inline RunResult run(const TrainPlan& plan) {
    validate(plan);
    if (plan.dataset.empty()) throw ConfigError("no dataset given (--data)");
    if (!std::filesystem::exists(std::filesystem::path(plan.dataset) / "manifest.json"))
        throw ConfigError("dataset " + plan.dataset + " not found (expected manifest.json)");
    const auto ds = data::read_dataset(plan.dataset);
    RunInputs in;
    in.dataset = &ds;
    in.spec = resolve_model_config(plan.model_config, static_cast<std::uint32_t>(ds.num_classes()));
    if (!plan.teacher_checkpoint.empty()) {
        if (!std::filesystem::exists(plan.teacher_checkpoint))
            throw ConfigError("teacher checkpoint " + plan.teacher_checkpoint + " does not exist (--teacher)");
        in.teacher = load_checkpoint(plan.teacher_checkpoint);
        in.teacher_spec = resolve_model_config(
            plan.teacher_model_config.empty() ? plan.model_config : plan.teacher_model_config,
            static_cast<std::uint32_t>(ds.num_classes()));
    }
    if (!plan.init_checkpoint.empty()) in.init = load_checkpoint(plan.init_checkpoint);
    return run(plan, in);
}

}  // namespace t3d::train
