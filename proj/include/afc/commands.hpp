#pragma once

#include <algorithm>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "afc/bounds.hpp"
#include "afc/checkpoint.hpp"
#include "afc/config.hpp"
#include "afc/io.hpp"
#include "afc/trainer.hpp"

namespace afc {

struct RunOverrides {
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
};

namespace detail {

inline void apply_overrides(ExperimentConfig& cfg, const RunOverrides& ov) {
    if (ov.out) cfg.output_dir = *ov.out;
    if (ov.seed) cfg.spec.train.seed = *ov.seed;
    if (ov.mode) {
        if (*ov.mode == "afc")
            cfg.spec.train.mode = BaselineMode::afc;
        else if (*ov.mode == "uniform")
            cfg.spec.train.mode = BaselineMode::uniform;
        else if (*ov.mode == "finetune")
            cfg.spec.train.mode = BaselineMode::finetune;
        else
            throw config_error("--mode must be afc, uniform or finetune");
    }
}

inline nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& res) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : res.stages)
        stages.push_back({{"stage", s.stage},
                          {"n_t", s.n_t},
                          {"acc_nme", s.acc_nme},
                          {"acc_cnn", s.acc_cnn},
                          {"per_task_nme", s.per_task_nme},
                          {"per_task_cnn", s.per_task_cnn}});
    nlohmann::json j{{"config", canonical_config(cfg.spec)},
                     {"config_hash", config_hash(cfg.spec)},
                     {"mode", to_string(cfg.spec.train.mode)},
                     {"stages", stages},
                     {"avg_inc_acc_nme", res.summary.avg_inc_acc_nme},
                     {"avg_inc_acc_cnn", res.summary.avg_inc_acc_cnn},
                     {"avg_acc_nme", res.summary.avg_acc_nme},
                     {"avg_acc_cnn", res.summary.avg_acc_cnn}};
    if (res.summary.has_bwt) {
        j["bwt_nme"] = res.summary.bwt_nme;
        j["bwt_cnn"] = res.summary.bwt_cnn;
    }
    return j;
}

}  // namespace detail

/// Run one experiment and write summary.json, metrics.csv, stages.csv,
/// importance.csv, exemplars.csv and one checkpoint per stage.
inline ExperimentResult run_and_write(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    const std::string hash = config_hash(cfg.spec);

    const std::string stamp = "config_hash=" + hash;
    CsvWriter metrics(out / "metrics.csv", "stage,epoch,iter,cls,disc,lambda_t,total", stamp);
    CsvWriter stages_csv(out / "stages.csv", "stage,n_t,acc_nme,acc_cnn", stamp);
    CsvWriter importance_csv(out / "importance.csv", "stage,layer,channel,raw,normalized", stamp);
    CsvWriter exemplars_csv(out / "exemplars.csv", "stage,class,rank,dataset_index", stamp);

    ExperimentResult res = run_experiment(
        cfg.spec, [&](int stage, Model& model, const StageResult& sr, const ExemplarStore& store) {
            save_checkpoint(out / ("checkpoint_stage" + std::to_string(stage) + ".bin"), model,
                            sr.importance, stage, sr.n_t, hash);
            for (const auto& rec : sr.loss_trace)
                metrics.row() << rec.stage << rec.epoch << rec.iter << rec.cls << rec.disc
                              << rec.lambda_t << rec.total;
            stages_csv.row() << sr.stage << sr.n_t << sr.acc_nme << sr.acc_cnn;
            for (std::size_t l = 0; l < sr.importance.raw.size(); ++l)
                for (std::size_t c = 0; c < sr.importance.raw[l].size(); ++c)
                    importance_csv.row() << stage << l << c << sr.importance.raw[l][c]
                                         << sr.importance.normalized[l][c];
            for (const auto& [cls, idx] : store.per_class)
                for (std::size_t rank = 0; rank < idx.size(); ++rank)
                    exemplars_csv.row() << stage << cls << rank << idx[rank];
        });

    write_text_file(out / "summary.json", detail::summary_json(cfg, res).dump(2) + "\n");
    return res;
}

inline int cmd_run(const std::string& config_path, const RunOverrides& ov) {
    ExperimentConfig cfg;
    try {
        cfg = parse_experiment_config(read_text_file(config_path));
        detail::apply_overrides(cfg, ov);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    try {
        ExperimentResult res = run_and_write(cfg);
        std::cout << "avg_inc_acc_nme=" << fmt_double(res.summary.avg_inc_acc_nme)
                  << " avg_inc_acc_cnn=" << fmt_double(res.summary.avg_inc_acc_cnn) << "\n";
        return 0;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 2;
    }
}

namespace detail {

/// Resolve a sweep key against the canonical config tree: either a dotted
/// path ("train.lambda_disc") or a bare leaf name that occurs exactly once.
inline std::string resolve_sweep_key(const nlohmann::json& tree, const std::string& key) {
    if (key.find('.') != std::string::npos) return key;
    std::vector<std::string> hits;
    std::function<void(const nlohmann::json&, const std::string&)> walk =
        [&](const nlohmann::json& node, const std::string& path) {
            for (const auto& [k, v] : node.items()) {
                const std::string p = path.empty() ? k : path + "." + k;
                if (k == key) hits.push_back(p);
                if (v.is_object()) walk(v, p);
            }
        };
    walk(tree, "");
    if (hits.empty()) throw config_error("sweep key \"" + key + "\" not found in the config schema");
    if (hits.size() > 1) throw config_error("sweep key \"" + key + "\" is ambiguous; use a dotted path");
    return hits[0];
}

inline void set_by_path(nlohmann::json& tree, const std::string& dotted, const std::string& value) {
    nlohmann::json* node = &tree;
    std::size_t at = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', at);
        const std::string part = dotted.substr(at, dot == std::string::npos ? dot : dot - at);
        if (dot == std::string::npos) {
            nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
            (*node)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
            return;
        }
        node = &(*node)[part];
        at = dot + 1;
    }
}

}  // namespace detail

namespace detail {

/// Fig.-2-style study: train once on a single-stage plan, then re-estimate
/// importance on random subsets of the given sizes and report the spread.
inline int sweep_importance_sample_size(ExperimentConfig cfg, const std::vector<std::string>& values) {
    namespace fs = std::filesystem;
    std::vector<std::size_t> sizes;
    for (const auto& v : values) sizes.push_back(std::stoul(v));
    cfg.spec.plan.num_stages = 1;
    cfg.spec.plan.initial_half = false;

    DataPair data = build_dataset(cfg.spec.dataset);
    StagePlan plan = build_stage_plan(data.train.num_classes, 1, cfg.spec.plan.class_order_seed, false);
    ModelConfig mcfg = cfg.spec.model;
    mcfg.in_channels = static_cast<int>(data.train.images.shape[1]);
    mcfg.image_size = static_cast<int>(data.train.images.shape[2]);
    Rng init_rng = Rng::derived(cfg.spec.train.seed, 0x30DE1);
    Model model = Model::init(mcfg, data.train.num_classes, init_rng);
    ExemplarStore store;
    store.mode = cfg.spec.memory.mode;
    store.budget = cfg.spec.memory.budget;
    store.rule = cfg.spec.memory.rule;
    run_stage(0, model, nullptr, nullptr, store, data.train, data.test, plan, cfg.spec.train,
              mix_seed(cfg.spec.train.seed, 1000));

    std::vector<std::size_t> pool(data.train.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    const auto col_of = [&plan](int label) { return plan.column_of(label); };
    const auto rows = importance_variability(model, data.train, pool, col_of, sizes, 10,
                                             mix_seed(cfg.spec.train.seed, 0xF160),
                                             cfg.spec.train.importance);

    fs::create_directories(cfg.output_dir);
    const std::string stamp = "config_hash=" + config_hash(cfg.spec);
    CsvWriter summary(fs::path(cfg.output_dir) / "variability.csv", "sample_size,mean_std", stamp);
    CsvWriter channels(fs::path(cfg.output_dir) / "variability_channels.csv",
                       "sample_size,channel,std", stamp);
    for (const auto& row : rows) {
        summary.row() << row.sample_size << row.mean_std;
        for (std::size_t c = 0; c < row.per_channel_std.size(); ++c)
            channels.row() << row.sample_size << c << row.per_channel_std[c];
        std::cout << "sample_size=" << row.sample_size << " mean_std=" << fmt_double(row.mean_std)
                  << "\n";
    }
    return 0;
}

}  // namespace detail

/// One sub-run per value; sub-runs execute in a small worker pool and land in
/// <out>/sweep/<key>=<value>/, aggregated into sweep.csv. The special key
/// "importance_sample_size" runs the estimation-reliability study instead.
inline int cmd_sweep(const std::string& config_path, const std::string& key,
                     const std::vector<std::string>& values, const RunOverrides& ov, int jobs) {
    namespace fs = std::filesystem;
    if (values.empty()) {
        std::cerr << "config error: sweep needs at least one value\n";
        return 1;
    }
    ExperimentConfig base;
    std::string resolved;
    try {
        base = parse_experiment_config(read_text_file(config_path));
        detail::apply_overrides(base, ov);
        if (key == "importance_sample_size") return detail::sweep_importance_sample_size(base, values);
        nlohmann::json tree = canonical_config(base.spec);
        resolved = detail::resolve_sweep_key(tree, key);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "sweep failed: " << e.what() << "\n";
        return 2;
    }

    struct Sub {
        std::string value;
        ExperimentConfig cfg;
        Summary summary;
        int rc = 0;
        std::string error;
    };
    std::vector<Sub> subs;
    try {
        for (const auto& v : values) {
            nlohmann::json tree = canonical_config(base.spec);
            detail::set_by_path(tree, resolved, v);
            Sub sub;
            sub.value = v;
            sub.cfg = parse_experiment_config(tree);
            sub.cfg.output_dir =
                (fs::path(base.output_dir) / "sweep" / (key + "=" + v)).string();
            subs.push_back(std::move(sub));
        }
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }

    std::mutex next_mutex;
    std::size_t next = 0;
    auto worker = [&]() {
        while (true) {
            std::size_t i;
            {
                std::lock_guard lock(next_mutex);
                if (next >= subs.size()) return;
                i = next++;
            }
            try {
                subs[i].summary = run_and_write(subs[i].cfg).summary;
            } catch (const std::exception& e) {
                subs[i].rc = 2;
                subs[i].error = e.what();
            }
        }
    };
    const int width = std::max(1, std::min<int>(jobs, static_cast<int>(subs.size())));
    std::vector<std::thread> pool;
    for (int t = 0; t < width; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    CsvWriter sweep(fs::path(base.output_dir) / "sweep.csv",
                    "key,value,avg_inc_acc_nme,avg_inc_acc_cnn,avg_acc_nme,avg_acc_cnn,bwt_nme,bwt_cnn",
                    "config_hash=" + config_hash(base.spec));
    int rc = 0;
    for (const auto& sub : subs) {
        if (sub.rc != 0) {
            std::cerr << "sweep value " << sub.value << " failed: " << sub.error << "\n";
            rc = 2;
            continue;
        }
        sweep.row() << resolved << sub.value << sub.summary.avg_inc_acc_nme
                    << sub.summary.avg_inc_acc_cnn << sub.summary.avg_acc_nme
                    << sub.summary.avg_acc_cnn << sub.summary.bwt_nme << sub.summary.bwt_cnn;
        std::cout << resolved << "=" << sub.value
                  << " avg_inc_acc_cnn=" << fmt_double(sub.summary.avg_inc_acc_cnn) << "\n";
    }
    return rc;
}

/// All numerical verification suites; exit 0 only with zero violations.
inline int cmd_verify(const std::string& out_dir, bool inject_backward_fault = false) {
    detail::matmul_backward_fault() = inject_backward_fault;
    nlohmann::json suites = nlohmann::json::array();
    bool all_passed = true;

    auto record = [&](const std::string& name, std::size_t trials, std::size_t violations,
                      double max_slack, bool passed) {
        suites.push_back({{"suite", name},
                          {"trials", trials},
                          {"violations", violations},
                          {"max_slack", max_slack},
                          {"passed", passed}});
        all_passed = all_passed && passed;
        std::cout << (passed ? "PASS" : "FAIL") << " " << name << " (trials=" << trials
                  << ", violations=" << violations << ", max_slack=" << fmt_double(max_slack)
                  << ")\n";
    };

    const GradCheckReport g = check_gradients(10, 20240);
    record(g.suite, g.params_checked, g.violations, g.max_rel_error, g.passed());
    const BoundTrialReport cs = check_cs_chain(1000, 20241);
    record(cs.suite, cs.trials, cs.violations, cs.max_slack, cs.passed());
    const BoundTrialReport p1 = check_proposition1(1000, 20242);
    record(p1.suite, p1.trials, p1.violations, p1.max_slack, p1.passed());
    const TaylorReport ty = check_taylor(200, 20243);
    const bool ty_ok = ty.pass_fraction() >= 0.95;
    record(ty.suite, ty.fixtures, ty.fixtures - ty.in_range, ty.max_ratio, ty_ok);
    const BoundTrialReport ib = check_importance_bound_link(20, 20244);
    record(ib.suite, ib.trials, ib.violations, ib.max_slack, ib.passed());

    detail::matmul_backward_fault() = false;

    nlohmann::json report{{"suites", suites}, {"all_passed", all_passed}};
    write_text_file(std::filesystem::path(out_dir) / "verify_report.json", report.dump(2) + "\n");
    if (!all_passed) {
        std::cerr << "verification failed\n";
        return 2;
    }
    return 0;
}

/// Dump per-layer importance sorted by weight (largest first).
inline int cmd_inspect_importance(const std::string& checkpoint_path, int layer) {
    try {
        const Checkpoint ck = load_checkpoint(checkpoint_path);
        std::cout << "stage=" << ck.stage << " n_t=" << ck.n_t
                  << " samples=" << ck.importance.sample_count << "\n";
        std::cout << "layer,rank,channel,normalized,raw\n";
        for (std::size_t l = 0; l < ck.importance.normalized.size(); ++l) {
            if (layer >= 0 && static_cast<std::size_t>(layer) != l) continue;
            std::vector<std::size_t> order(ck.importance.normalized[l].size());
            for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (ck.importance.normalized[l][a] != ck.importance.normalized[l][b])
                    return ck.importance.normalized[l][a] > ck.importance.normalized[l][b];
                return a < b;
            });
            for (std::size_t rank = 0; rank < order.size(); ++rank) {
                const std::size_t c = order[rank];
                std::cout << l << "," << rank << "," << c << ","
                          << fmt_double(ck.importance.normalized[l][c]) << ","
                          << fmt_double(ck.importance.raw[l][c]) << "\n";
            }
        }
        return 0;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace afc
