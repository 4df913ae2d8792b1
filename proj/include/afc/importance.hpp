#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "afc/data.hpp"
#include "afc/log.hpp"
#include "afc/losses.hpp"
#include "afc/network.hpp"
#include "afc/rng.hpp"

namespace afc {

/// Per-channel feature-map importance: accumulated squared Frobenius norms of
/// the classification-loss gradient at each tapped map, and the per-layer
/// mean-normalized weights derived from them.
struct ImportanceTable {
    int stage = 0;
    std::size_t sample_count = 0;
    std::vector<std::vector<double>> raw;         // [layer][channel]
    std::vector<std::vector<double>> normalized;  // defined after finalize
    bool finalized = false;

    static ImportanceTable uniform(const std::vector<int>& channels_per_layer, int stage) {
        ImportanceTable t;
        t.stage = stage;
        for (int c : channels_per_layer) {
            t.raw.emplace_back(static_cast<std::size_t>(c), 1.0);
            t.normalized.emplace_back(static_cast<std::size_t>(c), 1.0);
        }
        t.finalized = true;
        return t;
    }

    std::vector<int> channels_per_layer() const {
        std::vector<int> out;
        for (const auto& l : raw) out.push_back(static_cast<int>(l.size()));
        return out;
    }
};

namespace detail {

/// Adjacent-pair reduction. Interleaved duplicates collapse to exact 2x
/// scalings at the first level, so duplicating every sample doubles the sum
/// exactly; accuracy is also better than a running sum.
inline double pairwise_sum(std::vector<double> v) {
    if (v.empty()) return 0.0;
    while (v.size() > 1) {
        std::size_t out = 0;
        for (std::size_t i = 0; i + 1 < v.size(); i += 2) v[out++] = v[i] + v[i + 1];
        if (v.size() % 2) v[out++] = v.back();
        v.resize(out);
    }
    return v[0];
}

}  // namespace detail

struct EstimateOptions {
    std::size_t batch_size = 32;
    std::size_t sample_limit = 0;  // 0 = use every index given
    bool batch_stats = false;      // normalization statistics during the pass
};

/// One forward/backward pass per batch over the given examples; per-example
/// gradient norms are read from batch-axis slices of the tap gradients.
/// The summed (not averaged) loss makes those slices exactly the per-example
/// gradients. Model parameters are left untouched.
inline ImportanceTable estimate_importance(Model& model, const Dataset& ds,
                                           const std::vector<std::size_t>& indices,
                                           const std::function<int(int)>& label_to_column,
                                           const EstimateOptions& opt, int stage) {
    if (indices.empty()) throw config_error("importance estimation needs a non-empty sample set");
    std::vector<std::size_t> take = indices;
    if (opt.sample_limit > 0 && take.size() > opt.sample_limit) take.resize(opt.sample_limit);

    const auto channels = model.backbone().tap_channels();
    if (channels.empty()) throw config_error("importance estimation needs a model with feature taps");

    // per-example contributions, summed pairwise at the end
    std::vector<std::vector<std::vector<double>>> contrib(channels.size());
    for (std::size_t l = 0; l < channels.size(); ++l)
        contrib[l].assign(static_cast<std::size_t>(channels[l]), {});

    ForwardOptions fwd;
    fwd.batch_stats = opt.batch_stats;
    fwd.tap_grads = true;

    for (std::size_t at = 0; at < take.size(); at += opt.batch_size) {
        const std::size_t end = std::min(take.size(), at + opt.batch_size);
        const std::vector<std::size_t> batch_idx(take.begin() + static_cast<std::ptrdiff_t>(at),
                                                 take.begin() + static_cast<std::ptrdiff_t>(end));
        Tensor batch = ds.gather(batch_idx);
        std::vector<int> cols;
        for (std::size_t i : batch_idx) cols.push_back(label_to_column(ds.labels[i]));

        Tape tape;
        auto r = model.forward(tape, batch, fwd);
        Var loss = classification_loss(tape, r.scores, cols, r.eta, model.head().delta(),
                                       Reduction::sum);
        tape.backward(loss);

        const std::size_t B = batch_idx.size();
        for (std::size_t l = 0; l < r.taps.size(); ++l) {
            const Tensor g = tape.grad(r.taps[l]);
            const std::size_t C = g.shape[1], HW = g.shape[2] * g.shape[3];
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c) {
                    const double* p = g.data.data() + (b * C + c) * HW;
                    double s = 0.0;
                    for (std::size_t i = 0; i < HW; ++i) s += p[i] * p[i];
                    contrib[l][c].push_back(s);
                }
        }
    }

    ImportanceTable table;
    table.stage = stage;
    table.sample_count = take.size();
    table.raw.resize(channels.size());
    for (std::size_t l = 0; l < channels.size(); ++l) {
        table.raw[l].resize(static_cast<std::size_t>(channels[l]));
        for (std::size_t c = 0; c < table.raw[l].size(); ++c)
            table.raw[l][c] = detail::pairwise_sum(std::move(contrib[l][c]));
    }
    return table;
}

/// Divide each layer by its channel mean, so per-layer means of the
/// normalized weights equal 1. A layer with no gradient signal falls back to
/// uniform weights with a warning.
inline void finalize_importance(ImportanceTable& table) {
    table.normalized.clear();
    for (std::size_t l = 0; l < table.raw.size(); ++l) {
        const auto& raw = table.raw[l];
        double mean = 0.0;
        for (double v : raw) mean += v;
        mean /= static_cast<double>(raw.size());
        std::vector<double> norm(raw.size());
        if (mean == 0.0) {
            log::warn("importance layer " + std::to_string(l) +
                      " has zero gradient signal everywhere; using uniform weights");
            for (double& v : norm) v = 1.0;
        } else {
            for (std::size_t c = 0; c < raw.size(); ++c) norm[c] = raw[c] / mean;
        }
        table.normalized.push_back(std::move(norm));
    }
    table.finalized = true;
}

/// Largest per-layer deviation of mean(normalized) from 1.
inline double max_layer_mean_deviation(const ImportanceTable& table) {
    double worst = 0.0;
    for (const auto& layer : table.normalized) {
        double mean = 0.0;
        for (double v : layer) mean += v;
        mean /= static_cast<double>(layer.size());
        worst = std::max(worst, std::abs(mean - 1.0));
    }
    return worst;
}

struct VariabilityRow {
    std::size_t sample_size = 0;
    std::vector<double> per_channel_std;  // flattened over layers
    double mean_std = 0.0;
};

/// Re-estimate on `repeats` random subsets per sample size and report the
/// spread of the normalized weights; larger samples give steadier estimates.
inline std::vector<VariabilityRow> importance_variability(
    Model& model, const Dataset& ds, const std::vector<std::size_t>& pool,
    const std::function<int(int)>& label_to_column, const std::vector<std::size_t>& sample_sizes,
    int repeats, std::uint64_t seed, const EstimateOptions& opt = {}) {
    if (repeats < 1) throw config_error("importance variability needs repeats >= 1");
    if (repeats == 1) log::warn("importance variability with repeats=1 reports zero spread");
    std::vector<VariabilityRow> rows;
    for (std::size_t size : sample_sizes) {
        if (size > pool.size())
            throw config_error("importance variability sample size exceeds pool size");
        std::vector<std::vector<double>> flats;
        for (int r = 0; r < repeats; ++r) {
            Rng rng = Rng::derived(seed, 0xF16 + size * 131 + static_cast<std::uint64_t>(r));
            auto picks = rng.sample_without_replacement(pool.size(), size);
            std::sort(picks.begin(), picks.end());  // canonical order: same subset, same table
            std::vector<std::size_t> subset;
            for (std::size_t p : picks) subset.push_back(pool[p]);
            ImportanceTable t = estimate_importance(model, ds, subset, label_to_column, opt, 0);
            finalize_importance(t);
            std::vector<double> flat;
            for (const auto& layer : t.normalized) flat.insert(flat.end(), layer.begin(), layer.end());
            flats.push_back(std::move(flat));
        }
        VariabilityRow row;
        row.sample_size = size;
        const std::size_t n = flats[0].size();
        row.per_channel_std.resize(n);
        for (std::size_t c = 0; c < n; ++c) {
            bool identical = true;
            for (const auto& f : flats) identical = identical && f[c] == flats[0][c];
            if (identical) continue;  // identical estimates: exactly zero spread
            double mean = 0.0;
            for (const auto& f : flats) mean += f[c];
            mean /= repeats;
            double var = 0.0;
            for (const auto& f : flats) var += (f[c] - mean) * (f[c] - mean);
            var /= repeats;
            row.per_channel_std[c] = std::sqrt(var);
            row.mean_std += row.per_channel_std[c];
        }
        row.mean_std /= static_cast<double>(n);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace afc
