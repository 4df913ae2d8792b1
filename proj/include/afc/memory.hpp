#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "afc/data.hpp"
#include "afc/log.hpp"
#include "afc/network.hpp"
#include "afc/rng.hpp"

namespace afc {

enum class BudgetMode { per_class, total };
enum class SelectionRule { herding, random };

/// Greedy herding: at step s pick the candidate bringing the running mean of
/// the chosen set closest to the full-class mean. Ties go to the lowest
/// index, and prefixes are stable across budgets.
inline std::vector<std::size_t> herd_select(const std::vector<std::vector<double>>& embeddings,
                                            std::size_t m) {
    if (embeddings.empty()) throw std::invalid_argument("herd_select: empty population");
    if (m < 1) throw std::invalid_argument("herd_select: budget must be >= 1");
    if (m > embeddings.size()) {
        log::warn("herding budget " + std::to_string(m) + " exceeds population " +
                  std::to_string(embeddings.size()) + "; keeping all");
        m = embeddings.size();
    }
    const std::size_t d = embeddings[0].size();
    std::vector<double> mu(d, 0.0);
    for (const auto& e : embeddings)
        for (std::size_t j = 0; j < d; ++j) mu[j] += e[j];
    for (double& v : mu) v /= static_cast<double>(embeddings.size());

    std::vector<std::size_t> chosen;
    std::vector<bool> used(embeddings.size(), false);
    std::vector<double> running(d, 0.0);
    for (std::size_t s = 1; chosen.size() < m; ++s) {
        double best = 0.0;
        std::size_t best_i = embeddings.size();
        for (std::size_t i = 0; i < embeddings.size(); ++i) {
            if (used[i]) continue;
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = mu[j] - (running[j] + embeddings[i][j]) / static_cast<double>(s);
                dist += diff * diff;
            }
            if (best_i == embeddings.size() || dist < best) {
                best = dist;
                best_i = i;
            }
        }
        used[best_i] = true;
        chosen.push_back(best_i);
        for (std::size_t j = 0; j < d; ++j) running[j] += embeddings[best_i][j];
    }
    return chosen;
}

/// Retained examples per class plus per-class mean embeddings for
/// nearest-mean inference. Selection order is preserved so shrinking a
/// budget keeps the prefix.
struct ExemplarStore {
    BudgetMode mode = BudgetMode::per_class;
    int budget = 20;
    SelectionRule rule = SelectionRule::herding;
    std::map<int, std::vector<std::size_t>> per_class;   // class id -> ordered dataset indices
    std::map<int, std::vector<double>> class_means;      // class id -> unit embedding

    std::vector<std::size_t> all_indices() const {
        std::vector<std::size_t> out;
        for (const auto& [cls, idx] : per_class) out.insert(out.end(), idx.begin(), idx.end());
        return out;
    }
    std::size_t total_stored() const {
        std::size_t n = 0;
        for (const auto& [cls, idx] : per_class) n += idx.size();
        return n;
    }
};

namespace detail {

inline std::vector<std::vector<double>> batched_embeddings(Model& model, const Dataset& ds,
                                                           const std::vector<std::size_t>& indices,
                                                           std::size_t batch_size = 64) {
    std::vector<std::vector<double>> out;
    for (std::size_t at = 0; at < indices.size(); at += batch_size) {
        const std::size_t end = std::min(indices.size(), at + batch_size);
        const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(at),
                                             indices.begin() + static_cast<std::ptrdiff_t>(end));
        auto [scores, emb] = model.infer(ds.gather(chunk));
        const std::size_t d = emb.shape[1];
        for (std::size_t b = 0; b < chunk.size(); ++b)
            out.emplace_back(emb.data.begin() + static_cast<std::ptrdiff_t>(b * d),
                             emb.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
    }
    return out;
}

}  // namespace detail

/// After training stage `t`: herd the new classes, shrink old classes to the
/// stage budget (prefix of their stored order), and recompute every class
/// mean with the current model.
inline void rebuild_store(ExemplarStore& store, Model& model, const Dataset& train,
                          const StagePlan& plan, int stage, std::uint64_t seed) {
    const int n_t = plan.cumulative[static_cast<std::size_t>(stage)];
    const int budget_now = store.mode == BudgetMode::per_class
                               ? store.budget
                               : store.budget / n_t;  // remainder dropped
    if (store.budget < 1 || budget_now < 1)
        throw config_error("exemplar budget too small: " + std::to_string(budget_now) +
                           " per class at stage " + std::to_string(stage));

    // shrink previously stored classes to the new budget
    for (auto& [cls, idx] : store.per_class)
        if (idx.size() > static_cast<std::size_t>(budget_now))
            idx.resize(static_cast<std::size_t>(budget_now));

    // select exemplars for the classes introduced at this stage
    for (int cls : plan.stages[static_cast<std::size_t>(stage)]) {
        const auto candidates = train.indices_of_class(cls);
        if (candidates.empty()) throw config_error("class " + std::to_string(cls) + " has no examples");
        std::vector<std::size_t> order;
        if (store.rule == SelectionRule::herding) {
            const auto emb = detail::batched_embeddings(model, train, candidates);
            order = herd_select(emb, static_cast<std::size_t>(budget_now));
        } else {
            Rng rng = Rng::derived(seed, 0xE8E + static_cast<std::uint64_t>(cls));
            order = rng.sample_without_replacement(
                candidates.size(), std::min(candidates.size(), static_cast<std::size_t>(budget_now)));
        }
        std::vector<std::size_t> stored;
        for (std::size_t o : order) stored.push_back(candidates[o]);
        store.per_class[cls] = std::move(stored);
    }

    // class means from the stored exemplars, unit-normalized
    store.class_means.clear();
    for (const auto& [cls, idx] : store.per_class) {
        const auto emb = detail::batched_embeddings(model, train, idx);
        std::vector<double> mean(emb[0].size(), 0.0);
        for (const auto& e : emb)
            for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e[j];
        double norm = 0.0;
        for (double& v : mean) {
            v /= static_cast<double>(emb.size());
            norm += v * v;
        }
        norm = std::sqrt(norm) + 1e-12;
        for (double& v : mean) v /= norm;
        store.class_means[cls] = std::move(mean);
    }
}

/// Nearest class-mean in embedding space; ties go to the lowest class id.
inline int classify_nme(const std::vector<double>& h, const ExemplarStore& store) {
    if (store.class_means.empty()) throw std::invalid_argument("classify_nme: empty exemplar store");
    int best_cls = -1;
    double best = 0.0;
    for (const auto& [cls, mu] : store.class_means) {
        double dist = 0.0;
        for (std::size_t j = 0; j < mu.size(); ++j) dist += (h[j] - mu[j]) * (h[j] - mu[j]);
        if (best_cls < 0 || dist < best) {
            best = dist;
            best_cls = cls;
        }
    }
    return best_cls;
}

/// Arg-max over head scores; ties go to the lowest column.
inline int classify_cnn(const double* scores, std::size_t width) {
    if (width == 0) throw std::invalid_argument("classify_cnn: empty score row");
    std::size_t best = 0;
    for (std::size_t k = 1; k < width; ++k)
        if (scores[k] > scores[best]) best = k;
    return static_cast<int>(best);
}

}  // namespace afc
