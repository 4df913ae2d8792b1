#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "afc/data.hpp"
#include "afc/importance.hpp"
#include "afc/losses.hpp"
#include "afc/memory.hpp"
#include "afc/metrics.hpp"
#include "afc/network.hpp"
#include "afc/optim.hpp"

namespace afc {

enum class BaselineMode { afc, uniform, finetune };

inline const char* to_string(BaselineMode m) {
    switch (m) {
        case BaselineMode::afc: return "afc";
        case BaselineMode::uniform: return "uniform";
        default: return "finetune";
    }
}

struct TrainConfig {
    int epochs = 15;
    std::size_t batch_size = 32;
    double lr0 = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    BaselineMode mode = BaselineMode::afc;
    LossConfig loss;
    AugmentOptions augment;
    EstimateOptions importance;

    void validate() const {
        if (epochs < 1) throw config_error("train.epochs must be >= 1");
        if (lr0 <= 0.0) throw config_error("train.lr0 must be > 0");
        if (batch_size < 1) throw config_error("train.batch_size must be >= 1");
        if (loss.lambda_disc < 0.0) throw config_error("train.lambda_disc must be >= 0");
    }
};

struct IterRecord {
    int stage = 0, epoch = 0, iter = 0;
    double cls = 0.0, disc = 0.0, lambda_t = 1.0, total = 0.0;
};

struct StageResult {
    int stage = 0;
    int n_t = 0;
    double acc_nme = 0.0, acc_cnn = 0.0;           // % over seen classes
    std::vector<double> per_task_nme, per_task_cnn;  // % per past task
    std::vector<IterRecord> loss_trace;
    ImportanceTable importance;
    std::uint64_t backward_count = 0;
    std::uint64_t importance_passes = 0;
    std::uint64_t teacher_hash_before = 0, teacher_hash_after = 0;
};

struct EvalOutcome {
    double acc_nme = 0.0, acc_cnn = 0.0;
    std::vector<double> per_task_nme, per_task_cnn;
};

/// Accuracy over the test examples of all seen classes, with both inference
/// rules, plus the per-task breakdown.
inline EvalOutcome evaluate_model(Model& model, const Dataset& test, const StagePlan& plan, int stage,
                                  const ExemplarStore& store, std::size_t batch_size = 64) {
    const auto seen = plan.seen_classes(stage);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (plan.column_of(test.labels[i]) < plan.cumulative[static_cast<std::size_t>(stage)])
            idx.push_back(i);
    EvalOutcome out;
    std::vector<std::size_t> task_total(static_cast<std::size_t>(stage) + 1, 0);
    std::vector<std::size_t> task_nme(task_total.size(), 0), task_cnn(task_total.size(), 0);
    std::size_t hit_nme = 0, hit_cnn = 0;
    for (std::size_t at = 0; at < idx.size(); at += batch_size) {
        const std::size_t end = std::min(idx.size(), at + batch_size);
        const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                             idx.begin() + static_cast<std::ptrdiff_t>(end));
        auto [scores, emb] = model.infer(test.gather(chunk));
        const std::size_t width = scores.shape[1];
        const std::size_t d = emb.shape[1];
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            const int truth = test.labels[chunk[b]];
            const int task = plan.stage_of_class(truth);
            ++task_total[static_cast<std::size_t>(task)];
            const int cnn_col = classify_cnn(scores.data.data() + b * width, width);
            const int cnn_cls = plan.class_of_column(cnn_col);
            std::vector<double> h(emb.data.begin() + static_cast<std::ptrdiff_t>(b * d),
                                  emb.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
            const int nme_cls = classify_nme(h, store);
            if (cnn_cls == truth) {
                ++hit_cnn;
                ++task_cnn[static_cast<std::size_t>(task)];
            }
            if (nme_cls == truth) {
                ++hit_nme;
                ++task_nme[static_cast<std::size_t>(task)];
            }
        }
    }
    out.acc_nme = idx.empty() ? 0.0 : 100.0 * static_cast<double>(hit_nme) / static_cast<double>(idx.size());
    out.acc_cnn = idx.empty() ? 0.0 : 100.0 * static_cast<double>(hit_cnn) / static_cast<double>(idx.size());
    for (std::size_t t = 0; t < task_total.size(); ++t) {
        const double n = static_cast<double>(task_total[t]);
        out.per_task_nme.push_back(n > 0 ? 100.0 * static_cast<double>(task_nme[t]) / n : 0.0);
        out.per_task_cnn.push_back(n > 0 ? 100.0 * static_cast<double>(task_cnn[t]) / n : 0.0);
    }
    return out;
}

/// One incremental stage: train with the combined loss, then estimate the
/// next stage's importance, rebuild the exemplar store, and evaluate.
inline StageResult run_stage(int stage, Model& model, Model* teacher,
                             const ImportanceTable* prev_importance, ExemplarStore& store,
                             const Dataset& train, const Dataset& test, const StagePlan& plan,
                             const TrainConfig& cfg, std::uint64_t stage_seed) {
    cfg.validate();
    if ((stage == 0) != (teacher == nullptr))
        throw std::invalid_argument("run_stage: teacher must be present exactly when stage >= 1");
    const int n_t = plan.cumulative[static_cast<std::size_t>(stage)];
    const int n_prev = stage == 0 ? 0 : plan.cumulative[static_cast<std::size_t>(stage) - 1];
    const double lt = lambda_t(n_t, n_prev);
    const bool use_disc =
        stage >= 1 && cfg.mode != BaselineMode::finetune && cfg.loss.lambda_disc != 0.0;
    if (use_disc && (prev_importance == nullptr || !prev_importance->finalized))
        throw std::invalid_argument("run_stage: distillation needs a finalized importance table");

    StageResult res;
    res.stage = stage;
    res.n_t = n_t;
    if (teacher) res.teacher_hash_before = teacher->parameter_hash();

    StageLoader loader(train, plan, stage, store.all_indices(), cfg.batch_size,
                       mix_seed(stage_seed, 0x10AD));
    Rng aug_rng = Rng::derived(stage_seed, 0xA06);
    SgdMomentum opt;

    ForwardOptions train_fwd;
    train_fwd.batch_stats = true;
    train_fwd.update_running = true;
    train_fwd.param_grads = true;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
        const auto batches = loader.epoch_batches(epoch);
        for (std::size_t it = 0; it < batches.size(); ++it) {
            Tensor batch = augment_batch(train.gather(batches[it]), cfg.augment, aug_rng);
            std::vector<int> cols;
            for (std::size_t i : batches[it]) cols.push_back(plan.column_of(train.labels[i]));

            Tape tape;
            auto fr = model.forward(tape, batch, train_fwd);
            Var cls = classification_loss(tape, fr.scores, cols, fr.eta, model.head().delta(),
                                          Reduction::mean, cfg.loss.include_true_in_denominator);
            double disc_value = 0.0;
            Var total = cls;
            if (use_disc) {
                Tape teacher_tape;
                auto tr = teacher->forward(teacher_tape, batch, ForwardOptions{});
                std::vector<Tensor> teacher_taps;
                for (Var t : tr.taps) teacher_taps.push_back(teacher_tape.value(t));
                Var disc = discrepancy_loss(tape, fr.taps, teacher_taps, prev_importance->normalized,
                                            cfg.loss.map_norm_eps);
                disc_value = tape.value(disc).data[0];
                total = ops::add(cls, ops::scale(disc, cfg.loss.lambda_disc * lt));
            }
            const double total_value = tape.value(total).data[0];
            if (!std::isfinite(total_value))
                throw runtime_failure("non-finite loss at stage " + std::to_string(stage) + " epoch " +
                                      std::to_string(epoch) + " iter " + std::to_string(it) +
                                      " (cls=" + std::to_string(tape.value(cls).data[0]) +
                                      ", disc=" + std::to_string(disc_value) + ")");

            tape.backward(total);
            ++res.backward_count;
            opt.step(tape, fr.params, lr, cfg.momentum, cfg.weight_decay);

            IterRecord rec;
            rec.stage = stage;
            rec.epoch = epoch;
            rec.iter = static_cast<int>(it);
            rec.cls = tape.value(cls).data[0];
            rec.disc = disc_value;
            rec.lambda_t = lt;
            rec.total = total_value;
            res.loss_trace.push_back(rec);
        }
    }

    // importance for the next stage (one pass, after training)
    const auto col_of = [&plan](int label) { return plan.column_of(label); };
    if (cfg.mode == BaselineMode::afc) {
        std::vector<std::size_t> sample;
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto& cs = plan.stages[static_cast<std::size_t>(stage)];
            if (std::find(cs.begin(), cs.end(), train.labels[i]) != cs.end()) sample.push_back(i);
        }
        const auto ex = store.all_indices();
        sample.insert(sample.end(), ex.begin(), ex.end());
        res.importance = estimate_importance(model, train, sample, col_of, cfg.importance, stage);
        finalize_importance(res.importance);
        res.importance_passes = 1;
    } else {
        res.importance = ImportanceTable::uniform(model.backbone().tap_channels(), stage);
    }

    rebuild_store(store, model, train, plan, stage, mix_seed(stage_seed, 0x5704));

    const EvalOutcome ev = evaluate_model(model, test, plan, stage, store);
    res.acc_nme = ev.acc_nme;
    res.acc_cnn = ev.acc_cnn;
    res.per_task_nme = ev.per_task_nme;
    res.per_task_cnn = ev.per_task_cnn;
    if (teacher) res.teacher_hash_after = teacher->parameter_hash();
    return res;
}

// ---------------------------------------------------------------------------
// whole-experiment driver

struct DatasetSpec {
    enum class Type { synthetic, idx };
    Type type = Type::synthetic;
    SyntheticSpec synthetic;
    struct Idx {
        std::string train_images, train_labels, test_images, test_labels;
        int num_classes = 0;
    } idx;
};

struct PlanSpec {
    int num_stages = 3;
    bool initial_half = true;
    std::uint64_t class_order_seed = 0;
};

struct MemorySpec {
    BudgetMode mode = BudgetMode::per_class;
    int budget = 20;
    SelectionRule rule = SelectionRule::herding;
};

struct ExperimentSpec {
    DatasetSpec dataset;
    PlanSpec plan;
    ModelConfig model;
    TrainConfig train;
    MemorySpec memory;
};

struct Summary {
    double avg_inc_acc_nme = 0.0, avg_inc_acc_cnn = 0.0;
    double avg_acc_nme = 0.0, avg_acc_cnn = 0.0;
    bool has_bwt = false;
    double bwt_nme = 0.0, bwt_cnn = 0.0;
};

struct ExperimentResult {
    std::vector<StageResult> stages;
    AccuracyMatrix acc_nme, acc_cnn;
    Summary summary;
};

struct DataPair {
    Dataset train, test;
};

inline DataPair build_dataset(const DatasetSpec& spec) {
    DataPair out;
    if (spec.type == DatasetSpec::Type::synthetic) {
        auto s = make_synthetic(spec.synthetic);
        out.train = std::move(s.train);
        out.test = std::move(s.test);
    } else {
        out.train = load_idx_dataset(spec.idx.train_images, spec.idx.train_labels, spec.idx.num_classes);
        out.test = load_idx_dataset(spec.idx.test_images, spec.idx.test_labels, spec.idx.num_classes);
    }
    for (int c = 0; c < out.train.num_classes; ++c) {
        if (out.train.indices_of_class(c).empty())
            throw config_error("class " + std::to_string(c) + " has no training examples");
        if (out.test.indices_of_class(c).empty())
            throw config_error("class " + std::to_string(c) + " has no test examples");
    }
    return out;
}

/// Runs every stage of the plan, threading the model, exemplar store and
/// importance table forward. `on_stage_end(stage, model, result, store)`
/// fires after each stage so callers can persist checkpoints.
inline ExperimentResult run_experiment(
    const ExperimentSpec& spec,
    const std::function<void(int, Model&, const StageResult&, const ExemplarStore&)>& on_stage_end =
        {}) {
    spec.train.validate();
    DataPair data = build_dataset(spec.dataset);
    StagePlan plan = build_stage_plan(data.train.num_classes, spec.plan.num_stages,
                                      spec.plan.class_order_seed, spec.plan.initial_half);

    ModelConfig mcfg = spec.model;
    mcfg.in_channels = static_cast<int>(data.train.images.shape[1]);
    mcfg.image_size = static_cast<int>(data.train.images.shape[2]);

    Rng init_rng = Rng::derived(spec.train.seed, 0x30DE1);
    Model model = Model::init(mcfg, static_cast<int>(plan.stages[0].size()), init_rng);

    ExemplarStore store;
    store.mode = spec.memory.mode;
    store.budget = spec.memory.budget;
    store.rule = spec.memory.rule;

    ExperimentResult result;
    ImportanceTable prev_importance;
    std::optional<Model> teacher;

    for (int t = 0; t < plan.num_stages(); ++t) {
        const std::uint64_t stage_seed = mix_seed(spec.train.seed, 1000 + static_cast<std::uint64_t>(t));
        if (t >= 1) {
            teacher = model.clone_frozen();
            Rng grow_rng = Rng::derived(stage_seed, 0x960);
            model.head().grow(static_cast<int>(plan.stages[static_cast<std::size_t>(t)].size()),
                              grow_rng);
        }
        StageResult sr = run_stage(t, model, teacher ? &*teacher : nullptr,
                                   t >= 1 ? &prev_importance : nullptr, store, data.train, data.test,
                                   plan, spec.train, stage_seed);
        prev_importance = sr.importance;
        result.acc_nme.a.push_back(sr.per_task_nme);
        result.acc_nme.seen.push_back(sr.acc_nme);
        result.acc_cnn.a.push_back(sr.per_task_cnn);
        result.acc_cnn.seen.push_back(sr.acc_cnn);
        if (on_stage_end) on_stage_end(t, model, sr, store);
        result.stages.push_back(std::move(sr));
    }

    result.summary.avg_inc_acc_nme = avg_incremental_accuracy(result.acc_nme.seen);
    result.summary.avg_inc_acc_cnn = avg_incremental_accuracy(result.acc_cnn.seen);
    result.summary.avg_acc_nme = average_accuracy(result.acc_nme);
    result.summary.avg_acc_cnn = average_accuracy(result.acc_cnn);
    if (plan.num_stages() >= 2) {
        result.summary.has_bwt = true;
        result.summary.bwt_nme = backward_transfer(result.acc_nme);
        result.summary.bwt_cnn = backward_transfer(result.acc_cnn);
    }
    return result;
}

}  // namespace afc
