#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "afc/errors.hpp"
#include "afc/rng.hpp"
#include "afc/tensor.hpp"

namespace afc {

struct Dataset {
    Tensor images;            // [N, C, H, W], values in [0, 1]
    std::vector<int> labels;  // class ids in [0, num_classes)
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }

    Tensor example(std::size_t i) const {
        const std::size_t stride = images.size() / images.shape[0];
        Tensor out({1, images.shape[1], images.shape[2], images.shape[3]});
        std::copy(images.data.begin() + static_cast<std::ptrdiff_t>(i * stride),
                  images.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride),
                  out.data.begin());
        return out;
    }

    Tensor gather(const std::vector<std::size_t>& indices) const {
        const std::size_t stride = images.size() / images.shape[0];
        Tensor out({indices.size(), images.shape[1], images.shape[2], images.shape[3]});
        for (std::size_t k = 0; k < indices.size(); ++k)
            std::copy(images.data.begin() + static_cast<std::ptrdiff_t>(indices[k] * stride),
                      images.data.begin() + static_cast<std::ptrdiff_t>((indices[k] + 1) * stride),
                      out.data.begin() + static_cast<std::ptrdiff_t>(k * stride));
        return out;
    }

    std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const {
        std::vector<int> out(indices.size());
        for (std::size_t k = 0; k < indices.size(); ++k) out[k] = labels[indices[k]];
        return out;
    }

    std::vector<std::size_t> indices_of_class(int c) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) out.push_back(i);
        return out;
    }
};

// ---------------------------------------------------------------------------
// synthetic data: fixed random prototype per class + Gaussian pixel noise

struct SyntheticSpec {
    int num_classes = 8;
    int per_class_train = 60;
    int per_class_test = 20;
    int image_size = 16;
    int channels = 1;
    double noise_sigma = 0.1;
    // Prototypes share one base image and differ by an offset of this
    // amplitude, so classes compete for features and later stages actually
    // disturb earlier ones.
    double class_spread = 0.15;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    Dataset train;
    Dataset test;
    Tensor prototypes;  // [K, C, H, W]
};

inline SyntheticData make_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw config_error("synthetic dataset needs at least 2 classes");
    if (spec.per_class_train < 2) throw config_error("synthetic dataset needs per_class_train >= 2");
    if (spec.per_class_test < 1) throw config_error("synthetic dataset needs per_class_test >= 1");
    const std::size_t K = static_cast<std::size_t>(spec.num_classes);
    const std::size_t C = static_cast<std::size_t>(spec.channels);
    const std::size_t S = static_cast<std::size_t>(spec.image_size);
    const std::size_t px = C * S * S;

    SyntheticData out;
    out.prototypes = Tensor({K, C, S, S});
    Rng proto_rng = Rng::derived(spec.seed, 0x501);
    // prototypes kept away from the clip boundaries so noise stays informative
    std::vector<double> base(px);
    for (double& v : base) v = proto_rng.uniform(0.3, 0.7);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < px; ++p)
            out.prototypes.data[k * px + p] =
                std::clamp(base[p] + spec.class_spread * proto_rng.normal(), 0.05, 0.95);

    auto fill = [&](Dataset& ds, int per_class, std::uint64_t salt) {
        const std::size_t n = K * static_cast<std::size_t>(per_class);
        ds.images = Tensor({n, C, S, S});
        ds.labels.resize(n);
        ds.num_classes = spec.num_classes;
        Rng rng = Rng::derived(spec.seed, salt);
        std::size_t i = 0;
        for (std::size_t k = 0; k < K; ++k)
            for (int r = 0; r < per_class; ++r, ++i) {
                ds.labels[i] = static_cast<int>(k);
                const double* proto = out.prototypes.data.data() + k * px;
                double* img = ds.images.data.data() + i * px;
                for (std::size_t p = 0; p < px; ++p)
                    img[p] = std::clamp(proto[p] + rng.normal(0.0, spec.noise_sigma), 0.0, 1.0);
            }
    };
    fill(out.train, spec.per_class_train, 0x7121);
    fill(out.test, spec.per_class_test, 0x7122);
    return out;
}

// ---------------------------------------------------------------------------
// IDX ingestion (big-endian headers, ubyte payload)

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw config_error("truncated IDX file: " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace detail

inline Tensor load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open IDX image file: " + path);
    const std::uint32_t magic = detail::read_be32(in, path);
    if (magic != 0x00000803u)
        throw config_error("bad IDX image magic in " + path + " (expected 0x00000803)");
    const std::size_t n = detail::read_be32(in, path);
    const std::size_t h = detail::read_be32(in, path);
    const std::size_t w = detail::read_be32(in, path);
    std::vector<unsigned char> raw(n * h * w);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw config_error("truncated IDX file: " + path);
    Tensor t({n, 1, h, w});
    for (std::size_t i = 0; i < raw.size(); ++i) t.data[i] = raw[i] / 255.0;
    return t;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open IDX label file: " + path);
    const std::uint32_t magic = detail::read_be32(in, path);
    if (magic != 0x00000801u)
        throw config_error("bad IDX label magic in " + path + " (expected 0x00000801)");
    const std::size_t n = detail::read_be32(in, path);
    std::vector<unsigned char> raw(n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw config_error("truncated IDX file: " + path);
    return std::vector<int>(raw.begin(), raw.end());
}

inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                int num_classes) {
    Dataset ds;
    ds.images = load_idx_images(images_path);
    ds.labels = load_idx_labels(labels_path);
    ds.num_classes = num_classes;
    if (ds.images.shape[0] != ds.labels.size())
        throw config_error("IDX image/label count mismatch: " + std::to_string(ds.images.shape[0]) +
                           " vs " + std::to_string(ds.labels.size()));
    for (int l : ds.labels)
        if (l < 0 || l >= num_classes)
            throw config_error("IDX label " + std::to_string(l) + " out of range [0, " +
                               std::to_string(num_classes) + ")");
    return ds;
}

// ---------------------------------------------------------------------------
// incremental stage plan

struct StagePlan {
    std::vector<int> class_order;          // permutation of [0, K)
    std::vector<std::vector<int>> stages;  // consecutive slices of class_order
    std::vector<int> cumulative;           // n_t per stage
    std::vector<int> column_of_class;      // class id -> head column

    int num_classes() const { return static_cast<int>(class_order.size()); }
    int num_stages() const { return static_cast<int>(stages.size()); }
    int column_of(int class_id) const { return column_of_class[static_cast<std::size_t>(class_id)]; }
    int class_of_column(int col) const { return class_order[static_cast<std::size_t>(col)]; }

    std::vector<int> seen_classes(int stage) const {
        return std::vector<int>(class_order.begin(),
                                class_order.begin() + cumulative[static_cast<std::size_t>(stage)]);
    }
    int stage_of_class(int class_id) const {
        for (std::size_t t = 0; t < stages.size(); ++t)
            for (int c : stages[t])
                if (c == class_id) return static_cast<int>(t);
        return -1;
    }
};

/// Class order from a seeded shuffle; stage 0 takes half the classes when
/// initial_half is set, the rest are split evenly.
inline StagePlan build_stage_plan(int num_classes, int num_stages, std::uint64_t class_order_seed,
                                  bool initial_half) {
    if (num_classes < 1 || num_stages < 1) throw config_error("stage plan needs classes and stages >= 1");
    if (num_stages > num_classes) throw config_error("more stages than classes");
    StagePlan plan;
    plan.class_order.resize(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < num_classes; ++i) plan.class_order[static_cast<std::size_t>(i)] = i;
    Rng rng = Rng::derived(class_order_seed, 0x0D);
    rng.shuffle(plan.class_order);

    std::vector<int> sizes;
    if (num_stages == 1) {
        sizes.push_back(num_classes);
    } else if (initial_half) {
        const int first = num_classes / 2;
        const int rest = num_classes - first;
        if (rest % (num_stages - 1) != 0)
            throw config_error("cannot split " + std::to_string(rest) + " remaining classes over " +
                               std::to_string(num_stages - 1) + " stages evenly");
        sizes.push_back(first);
        for (int s = 1; s < num_stages; ++s) sizes.push_back(rest / (num_stages - 1));
    } else {
        if (num_classes % num_stages != 0)
            throw config_error("cannot split " + std::to_string(num_classes) + " classes over " +
                               std::to_string(num_stages) + " stages evenly");
        for (int s = 0; s < num_stages; ++s) sizes.push_back(num_classes / num_stages);
    }

    int at = 0;
    for (int sz : sizes) {
        plan.stages.emplace_back(plan.class_order.begin() + at, plan.class_order.begin() + at + sz);
        at += sz;
        plan.cumulative.push_back(at);
    }
    plan.column_of_class.resize(static_cast<std::size_t>(num_classes));
    for (int col = 0; col < num_classes; ++col)
        plan.column_of_class[static_cast<std::size_t>(plan.class_order[static_cast<std::size_t>(col)])] = col;
    return plan;
}

// ---------------------------------------------------------------------------
// per-stage batch loader over D_t union exemplars

class StageLoader {
public:
    StageLoader(const Dataset& ds, const StagePlan& plan, int stage,
                std::vector<std::size_t> exemplar_indices, std::size_t batch_size, std::uint64_t seed)
        : batch_size_(batch_size), seed_(seed) {
        if (stage < 0 || stage >= plan.num_stages()) throw config_error("stage index out of range");
        if (batch_size < 1) throw config_error("batch size must be >= 1");
        const auto& cls = plan.stages[static_cast<std::size_t>(stage)];
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (std::find(cls.begin(), cls.end(), ds.labels[i]) != cls.end()) pool_.push_back(i);
        pool_.insert(pool_.end(), exemplar_indices.begin(), exemplar_indices.end());
        if (pool_.empty()) throw config_error("stage loader: empty union of stage data and exemplars");
    }

    std::size_t epoch_size() const { return pool_.size(); }

    /// Seeded shuffle per epoch; the last partial batch is kept.
    std::vector<std::vector<std::size_t>> epoch_batches(int epoch) const {
        std::vector<std::size_t> order = pool_;
        Rng rng = Rng::derived(seed_, 0xE90C + static_cast<std::uint64_t>(epoch));
        rng.shuffle(order);
        std::vector<std::vector<std::size_t>> batches;
        for (std::size_t at = 0; at < order.size(); at += batch_size_) {
            const std::size_t end = std::min(order.size(), at + batch_size_);
            batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
        }
        return batches;
    }

private:
    std::vector<std::size_t> pool_;
    std::size_t batch_size_;
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// optional train-time augmentation

struct AugmentOptions {
    bool hflip = false;
    int pad_crop = 0;  // pad by this many pixels, then random-crop back
};

inline Tensor augment_batch(const Tensor& batch, const AugmentOptions& opt, Rng& rng) {
    if (!opt.hflip && opt.pad_crop <= 0) return batch;
    const std::size_t B = batch.shape[0], C = batch.shape[1], H = batch.shape[2], W = batch.shape[3];
    Tensor out = batch;
    for (std::size_t b = 0; b < B; ++b) {
        if (opt.hflip && rng.uniform() < 0.5) {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W / 2; ++w)
                        std::swap(out.at4(b, c, h, w), out.at4(b, c, h, W - 1 - w));
        }
        if (opt.pad_crop > 0) {
            const std::size_t p = static_cast<std::size_t>(opt.pad_crop);
            const std::size_t dy = rng.below(2 * p + 1);
            const std::size_t dx = rng.below(2 * p + 1);
            Tensor shifted({1, C, H, W});
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W; ++w) {
                        const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + dy) -
                                                  static_cast<std::ptrdiff_t>(p);
                        const std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w + dx) -
                                                  static_cast<std::ptrdiff_t>(p);
                        shifted.at4(0, c, h, w) =
                            (sh >= 0 && sh < static_cast<std::ptrdiff_t>(H) && sw >= 0 &&
                             sw < static_cast<std::ptrdiff_t>(W))
                                ? out.at4(b, c, static_cast<std::size_t>(sh), static_cast<std::size_t>(sw))
                                : 0.0;
                    }
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W; ++w) out.at4(b, c, h, w) = shifted.at4(0, c, h, w);
        }
    }
    return out;
}

}  // namespace afc
