#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "afc/errors.hpp"
#include "afc/io.hpp"
#include "afc/trainer.hpp"

namespace afc {

namespace detail {

/// Strict object reader: every key must be consumed, unknown keys are config
/// errors with their full path.
class StrictObject {
public:
    StrictObject(nlohmann::json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
        if (!j_.is_object()) throw config_error(path_ + " must be a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return convert<T>(key);
    }

    template <typename T>
    T require(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw config_error(path_ + "." + key + " is required");
        return convert<T>(key);
    }

    nlohmann::json child(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? j_.at(key) : nlohmann::json::object();
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw config_error("unknown key " + path_ + "." + key);
    }

private:
    template <typename T>
    T convert(const std::string& key) {
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw config_error(path_ + "." + key + " has the wrong type");
        }
    }

    nlohmann::json j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace detail

struct ExperimentConfig {
    ExperimentSpec spec;
    std::string output_dir = "out";
};

inline ExperimentConfig parse_experiment_config(const nlohmann::json& root) {
    ExperimentConfig cfg;
    detail::StrictObject top(root, "config");

    {
        detail::StrictObject ds(top.child("dataset"), "dataset");
        const std::string type = ds.require<std::string>("type");
        if (type == "synthetic") {
            cfg.spec.dataset.type = DatasetSpec::Type::synthetic;
            auto& s = cfg.spec.dataset.synthetic;
            s.num_classes = ds.get<int>("num_classes", s.num_classes);
            s.per_class_train = ds.get<int>("per_class_train", s.per_class_train);
            s.per_class_test = ds.get<int>("per_class_test", s.per_class_test);
            s.image_size = ds.get<int>("image_size", s.image_size);
            s.channels = ds.get<int>("channels", s.channels);
            s.noise_sigma = ds.get<double>("noise_sigma", s.noise_sigma);
            s.class_spread = ds.get<double>("class_spread", s.class_spread);
            s.seed = ds.get<std::uint64_t>("seed", s.seed);
        } else if (type == "idx") {
            cfg.spec.dataset.type = DatasetSpec::Type::idx;
            auto& x = cfg.spec.dataset.idx;
            x.train_images = ds.require<std::string>("train_images");
            x.train_labels = ds.require<std::string>("train_labels");
            x.test_images = ds.require<std::string>("test_images");
            x.test_labels = ds.require<std::string>("test_labels");
            x.num_classes = ds.require<int>("num_classes");
        } else {
            throw config_error("dataset.type must be \"synthetic\" or \"idx\"");
        }
        ds.finish();
    }
    {
        detail::StrictObject p(top.child("plan"), "plan");
        cfg.spec.plan.num_stages = p.get<int>("num_stages", cfg.spec.plan.num_stages);
        cfg.spec.plan.initial_half = p.get<bool>("initial_half", cfg.spec.plan.initial_half);
        cfg.spec.plan.class_order_seed =
            p.get<std::uint64_t>("class_order_seed", cfg.spec.plan.class_order_seed);
        p.finish();
    }
    {
        detail::StrictObject m(top.child("model"), "model");
        auto& mc = cfg.spec.model;
        mc.channels = m.get<std::vector<int>>("channels", mc.channels);
        mc.tap_blocks = m.get<std::vector<int>>("tap_blocks", mc.tap_blocks);
        mc.proxies_per_class = m.get<int>("proxies_per_class", mc.proxies_per_class);
        mc.delta = m.get<double>("delta", mc.delta);
        mc.eta_init = m.get<double>("eta_init", mc.eta_init);
        mc.eta_floor = m.get<double>("eta_floor", mc.eta_floor);
        mc.bn_momentum = m.get<double>("bn_momentum", mc.bn_momentum);
        m.finish();
        if (mc.channels.empty()) throw config_error("model.channels must not be empty");
        for (int t : mc.tap_blocks)
            if (t < 1 || t > static_cast<int>(mc.channels.size()))
                throw config_error("model.tap_blocks entries must be in [1, num_blocks]");
    }
    {
        detail::StrictObject t(top.child("train"), "train");
        auto& tc = cfg.spec.train;
        tc.epochs = t.get<int>("epochs", tc.epochs);
        tc.batch_size = t.get<std::size_t>("batch_size", tc.batch_size);
        tc.lr0 = t.get<double>("lr0", tc.lr0);
        tc.momentum = t.get<double>("momentum", tc.momentum);
        tc.weight_decay = t.get<double>("weight_decay", tc.weight_decay);
        tc.loss.lambda_disc = t.get<double>("lambda_disc", tc.loss.lambda_disc);
        tc.loss.map_norm_eps = t.get<double>("map_norm_eps", tc.loss.map_norm_eps);
        tc.loss.include_true_in_denominator =
            t.get<bool>("include_true_class_in_denominator", tc.loss.include_true_in_denominator);
        tc.seed = t.get<std::uint64_t>("seed", tc.seed);
        {
            detail::StrictObject a(t.child("augment"), "train.augment");
            tc.augment.hflip = a.get<bool>("hflip", tc.augment.hflip);
            tc.augment.pad_crop = a.get<int>("pad_crop", tc.augment.pad_crop);
            a.finish();
        }
        {
            detail::StrictObject imp(t.child("importance"), "train.importance");
            tc.importance.batch_size = imp.get<std::size_t>("batch_size", tc.importance.batch_size);
            tc.importance.sample_limit = imp.get<std::size_t>("sample_limit", tc.importance.sample_limit);
            tc.importance.batch_stats = imp.get<bool>("batch_stats", tc.importance.batch_stats);
            imp.finish();
        }
        t.finish();
    }
    {
        detail::StrictObject m(top.child("memory"), "memory");
        const std::string mode = m.get<std::string>("budget_mode", "per_class");
        if (mode == "per_class")
            cfg.spec.memory.mode = BudgetMode::per_class;
        else if (mode == "total")
            cfg.spec.memory.mode = BudgetMode::total;
        else
            throw config_error("memory.budget_mode must be \"per_class\" or \"total\"");
        cfg.spec.memory.budget = m.get<int>("budget", cfg.spec.memory.budget);
        const std::string rule = m.get<std::string>("selection", "herding");
        if (rule == "herding")
            cfg.spec.memory.rule = SelectionRule::herding;
        else if (rule == "random")
            cfg.spec.memory.rule = SelectionRule::random;
        else
            throw config_error("memory.selection must be \"herding\" or \"random\"");
        if (cfg.spec.memory.budget < 1) throw config_error("memory.budget must be >= 1");
        m.finish();
    }
    if (top.has("mode")) {
        const std::string m = top.require<std::string>("mode");
        if (m == "afc")
            cfg.spec.train.mode = BaselineMode::afc;
        else if (m == "uniform")
            cfg.spec.train.mode = BaselineMode::uniform;
        else if (m == "finetune")
            cfg.spec.train.mode = BaselineMode::finetune;
        else
            throw config_error("mode must be \"afc\", \"uniform\" or \"finetune\"");
    }
    if (top.has("output_dir")) cfg.output_dir = top.require<std::string>("output_dir");
    top.finish();
    cfg.spec.train.validate();
    return cfg;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_experiment_config(j);
}

/// Canonical JSON form of a config (output_dir excluded); its hash stamps
/// every artifact the run writes.
inline nlohmann::json canonical_config(const ExperimentSpec& spec) {
    nlohmann::json j;
    if (spec.dataset.type == DatasetSpec::Type::synthetic) {
        const auto& s = spec.dataset.synthetic;
        j["dataset"] = {{"type", "synthetic"},          {"num_classes", s.num_classes},
                        {"per_class_train", s.per_class_train}, {"per_class_test", s.per_class_test},
                        {"image_size", s.image_size},   {"channels", s.channels},
                        {"noise_sigma", s.noise_sigma}, {"class_spread", s.class_spread},
                        {"seed", s.seed}};
    } else {
        const auto& x = spec.dataset.idx;
        j["dataset"] = {{"type", "idx"},
                        {"train_images", x.train_images},
                        {"train_labels", x.train_labels},
                        {"test_images", x.test_images},
                        {"test_labels", x.test_labels},
                        {"num_classes", x.num_classes}};
    }
    j["plan"] = {{"num_stages", spec.plan.num_stages},
                 {"initial_half", spec.plan.initial_half},
                 {"class_order_seed", spec.plan.class_order_seed}};
    j["model"] = {{"channels", spec.model.channels},
                  {"tap_blocks", spec.model.tap_blocks},
                  {"proxies_per_class", spec.model.proxies_per_class},
                  {"delta", spec.model.delta},
                  {"eta_init", spec.model.eta_init},
                  {"eta_floor", spec.model.eta_floor},
                  {"bn_momentum", spec.model.bn_momentum}};
    j["train"] = {{"epochs", spec.train.epochs},
                  {"batch_size", spec.train.batch_size},
                  {"lr0", spec.train.lr0},
                  {"momentum", spec.train.momentum},
                  {"weight_decay", spec.train.weight_decay},
                  {"lambda_disc", spec.train.loss.lambda_disc},
                  {"map_norm_eps", spec.train.loss.map_norm_eps},
                  {"include_true_class_in_denominator", spec.train.loss.include_true_in_denominator},
                  {"seed", spec.train.seed},
                  {"augment", {{"hflip", spec.train.augment.hflip}, {"pad_crop", spec.train.augment.pad_crop}}},
                  {"importance",
                   {{"batch_size", spec.train.importance.batch_size},
                    {"sample_limit", spec.train.importance.sample_limit},
                    {"batch_stats", spec.train.importance.batch_stats}}}};
    j["memory"] = {{"budget_mode", spec.memory.mode == BudgetMode::per_class ? "per_class" : "total"},
                   {"budget", spec.memory.budget},
                   {"selection", spec.memory.rule == SelectionRule::herding ? "herding" : "random"}};
    j["mode"] = to_string(spec.train.mode);
    return j;
}

inline std::string config_hash(const ExperimentSpec& spec) {
    return hex64(fnv1a64(canonical_config(spec).dump()));
}

}  // namespace afc
