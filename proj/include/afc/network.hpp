#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "afc/ops.hpp"
#include "afc/rng.hpp"
#include "afc/tape.hpp"
#include "afc/tensor.hpp"

namespace afc {

struct ModelConfig {
    int in_channels = 1;
    int image_size = 12;
    std::vector<int> channels = {16, 32, 64};  // one conv block per entry
    std::vector<int> tap_blocks;               // 1-based block indices; empty = all
    int proxies_per_class = 10;
    double delta = 0.6;
    double eta_init = 1.0;
    // The hinge admits a degenerate optimum at negative eta (inverted scores
    // satisfy every margin vacuously); projected SGD keeps eta above this.
    double eta_floor = 0.5;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    int embedding_dim() const { return channels.back(); }
    std::vector<int> resolved_taps() const {
        if (!tap_blocks.empty()) return tap_blocks;
        std::vector<int> all(channels.size());
        for (std::size_t i = 0; i < channels.size(); ++i) all[i] = static_cast<int>(i) + 1;
        return all;
    }
};

/// How a forward pass is recorded on the tape.
struct ForwardOptions {
    bool batch_stats = false;     // normalize with batch statistics (else running)
    bool update_running = false;  // fold batch statistics into running stats
    bool param_grads = false;     // parameters become differentiable leaves
    bool tap_grads = false;       // tapped feature maps receive gradients
};

struct ParamBinding {
    std::string name;
    Tensor* tensor;
    Var var;
    bool weight_decay;
    bool renormalize_rows;  // proxy matrix: rows projected back to unit norm after a step
    double lower_bound = -std::numeric_limits<double>::infinity();
};

struct ForwardResult {
    Var scores;              // [B, n_t]
    Var embedding;           // [B, d], L2-normalized
    std::vector<Var> taps;   // one per tapped block, [B, C_l, H_l, W_l]
    Var eta;                 // scalar scale used by the classification loss
    std::vector<ParamBinding> params;  // populated when param_grads is set
};

namespace detail {

struct Conv2dParams {
    Tensor weight;  // [Co, Ci, k, k]
    Tensor bias;    // [Co]
};

struct BatchNormParams {
    Tensor gamma, beta;              // [C]
    Tensor running_mean, running_var;  // [C]
};

struct ConvBlock {
    Conv2dParams conv;
    BatchNormParams bn;
};

inline void normalize_rows(Tensor& m, double eps = 1e-12) {
    const std::size_t rows = m.shape[0], cols = m.shape[1];
    for (std::size_t r = 0; r < rows; ++r) {
        double n = 0.0;
        for (std::size_t c = 0; c < cols; ++c) n += m.at2(r, c) * m.at2(r, c);
        n = std::sqrt(n) + eps;
        for (std::size_t c = 0; c < cols; ++c) m.at2(r, c) /= n;
    }
}

}  // namespace detail

/// Stack of conv(3x3, pad 1) -> batch norm -> relu -> avg-pool(2,2) blocks.
/// Tapped block outputs are the feature maps the distillation loss compares.
class Backbone {
public:
    Backbone() = default;

    static Backbone init(const ModelConfig& cfg, Rng& rng) {
        Backbone b;
        b.cfg_ = cfg;
        int ci = cfg.in_channels;
        for (int co : cfg.channels) {
            detail::ConvBlock blk;
            blk.conv.weight = Tensor({static_cast<std::size_t>(co), static_cast<std::size_t>(ci), 3, 3});
            const double std = std::sqrt(2.0 / (static_cast<double>(ci) * 9.0));
            for (double& v : blk.conv.weight.data) v = rng.normal(0.0, std);
            blk.conv.bias = Tensor({static_cast<std::size_t>(co)});
            blk.bn.gamma = Tensor::full({static_cast<std::size_t>(co)}, 1.0);
            blk.bn.beta = Tensor({static_cast<std::size_t>(co)});
            blk.bn.running_mean = Tensor({static_cast<std::size_t>(co)});
            blk.bn.running_var = Tensor::full({static_cast<std::size_t>(co)}, 1.0);
            b.blocks_.push_back(std::move(blk));
            ci = co;
        }
        return b;
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t num_blocks() const { return blocks_.size(); }

    /// Channel count of each tapped block, in tap order.
    std::vector<int> tap_channels() const {
        std::vector<int> out;
        for (int t : cfg_.resolved_taps()) out.push_back(cfg_.channels.at(static_cast<std::size_t>(t - 1)));
        return out;
    }

    struct Out {
        Var embedding_raw;      // [B, d] before normalization
        std::vector<Var> taps;
    };

    Out forward(Tape& tape, Var x, const ForwardOptions& opt,
                std::vector<ParamBinding>* params, const std::string& prefix) {
        Out out;
        const auto taps = cfg_.resolved_taps();
        Var cur = x;
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            detail::ConvBlock& blk = blocks_[i];
            const std::string base = prefix + "block" + std::to_string(i) + ".";
            Var w = bind(tape, blk.conv.weight, base + "conv.weight", opt.param_grads, true, params);
            Var bias = bind(tape, blk.conv.bias, base + "conv.bias", opt.param_grads, false, params);
            cur = ops::conv2d(cur, w, 1, 1);
            const std::size_t co = blk.conv.weight.shape[0];
            cur = ops::add(cur, ops::reshape(bias, {1, co, 1, 1}));
            cur = batch_norm(tape, cur, blk.bn, base + "bn.", opt, params);
            cur = ops::relu(cur);
            cur = ops::avg_pool(cur, 2, 2);
            if (std::find(taps.begin(), taps.end(), static_cast<int>(i) + 1) != taps.end()) {
                if (opt.tap_grads) tape.node(cur.id).requires_grad = true;
                out.taps.push_back(cur);
            }
        }
        out.embedding_raw = ops::reduce_mean(cur, {2, 3}, false);  // global average pool
        return out;
    }

    std::vector<detail::ConvBlock>& blocks() { return blocks_; }
    const std::vector<detail::ConvBlock>& blocks() const { return blocks_; }

private:
    static Var bind(Tape& tape, Tensor& t, const std::string& name, bool grads, bool decay,
                    std::vector<ParamBinding>* params) {
        Var v = tape.leaf(t, grads);
        if (params && grads) params->push_back(ParamBinding{name, &t, v, decay, false});
        return v;
    }

    Var batch_norm(Tape& tape, Var x, detail::BatchNormParams& bn, const std::string& base,
                   const ForwardOptions& opt, std::vector<ParamBinding>* params) {
        const std::size_t C = bn.gamma.shape[0];
        Var gamma = bind(tape, bn.gamma, base + "gamma", opt.param_grads, false, params);
        Var beta = bind(tape, bn.beta, base + "beta", opt.param_grads, false, params);
        Var xhat{};
        if (opt.batch_stats) {
            Var m = ops::reduce_mean(x, {0, 2, 3}, true);
            Var xc = ops::sub(x, m);
            Var v = ops::reduce_mean(ops::mul(xc, xc), {0, 2, 3}, true);  // biased variance
            xhat = ops::div(xc, ops::sqrt(ops::add_scalar(v, cfg_.bn_eps)));
            if (opt.update_running) {
                const Tensor& mv = tape.value(m);
                const Tensor& vv = tape.value(v);
                for (std::size_t c = 0; c < C; ++c) {
                    bn.running_mean.data[c] =
                        (1.0 - cfg_.bn_momentum) * bn.running_mean.data[c] + cfg_.bn_momentum * mv.data[c];
                    bn.running_var.data[c] =
                        (1.0 - cfg_.bn_momentum) * bn.running_var.data[c] + cfg_.bn_momentum * vv.data[c];
                }
            }
        } else {
            Tensor rm({1, C, 1, 1}, bn.running_mean.data);
            Tensor rv({1, C, 1, 1}, bn.running_var.data);
            Var m = tape.constant(std::move(rm));
            Var v = tape.constant(std::move(rv));
            xhat = ops::div(ops::sub(x, m), ops::sqrt(ops::add_scalar(v, cfg_.bn_eps)));
        }
        return ops::add(ops::mul(xhat, ops::reshape(gamma, {1, C, 1, 1})),
                        ops::reshape(beta, {1, C, 1, 1}));
    }

    ModelConfig cfg_;
    std::vector<detail::ConvBlock> blocks_;
};

/// Cosine-similarity head with J proxy vectors per class: each class score is
/// the softmax-weighted average of the proxy similarities for that class.
class LscHead {
public:
    LscHead() = default;

    static LscHead init(int num_classes, const ModelConfig& cfg, Rng& rng) {
        LscHead h;
        h.num_classes_ = num_classes;
        h.proxies_per_class_ = cfg.proxies_per_class;
        h.embed_dim_ = cfg.embedding_dim();
        h.delta_ = cfg.delta;
        h.proxies_ = Tensor({static_cast<std::size_t>(num_classes * h.proxies_per_class_),
                             static_cast<std::size_t>(h.embed_dim_)});
        for (double& v : h.proxies_.data) v = rng.normal();
        detail::normalize_rows(h.proxies_);
        h.eta_ = Tensor::scalar(cfg.eta_init);
        return h;
    }

    int num_classes() const { return num_classes_; }
    int proxies_per_class() const { return proxies_per_class_; }
    double delta() const { return delta_; }
    Tensor& proxies() { return proxies_; }
    const Tensor& proxies() const { return proxies_; }
    Tensor& eta_tensor() { return eta_; }
    double eta() const { return eta_.data[0]; }

    /// Append J freshly initialized unit proxies per new class; existing rows
    /// are preserved bit for bit.
    void grow(int new_classes, Rng& rng) {
        if (new_classes < 1) throw std::invalid_argument("grow: need at least one new class");
        Tensor grown({static_cast<std::size_t>((num_classes_ + new_classes) * proxies_per_class_),
                      static_cast<std::size_t>(embed_dim_)});
        std::copy(proxies_.data.begin(), proxies_.data.end(), grown.data.begin());
        Tensor fresh({static_cast<std::size_t>(new_classes * proxies_per_class_),
                      static_cast<std::size_t>(embed_dim_)});
        for (double& v : fresh.data) v = rng.normal();
        detail::normalize_rows(fresh);
        std::copy(fresh.data.begin(), fresh.data.end(), grown.data.begin() + proxies_.size());
        proxies_ = std::move(grown);
        num_classes_ += new_classes;
    }

    void renormalize() { detail::normalize_rows(proxies_); }

    /// scores[b][k] = sum_j softmax_j(<theta_kj, h_b>) * <theta_kj, h_b>
    Var scores(Tape& tape, Var h_normalized, Var proxies_var) const {
        Var sims = ops::matmul(h_normalized, ops::transpose2d(proxies_var));  // [B, K*J]
        const std::size_t B = tape.value(h_normalized).shape[0];
        Var sims3 = ops::reshape(sims, {B, static_cast<std::size_t>(num_classes_),
                                        static_cast<std::size_t>(proxies_per_class_)});
        Var weights = ops::softmax(sims3);
        return ops::reduce_sum(ops::mul(weights, sims3), {2}, false);
    }

private:
    int num_classes_ = 0;
    int proxies_per_class_ = 1;
    int embed_dim_ = 0;
    double delta_ = 0.6;
    Tensor proxies_;  // [num_classes * J, d], unit rows
    Tensor eta_;      // [1]
};

/// Backbone + head. Copying a Model deep-copies every parameter, so a frozen
/// teacher is just a copy that refuses training-mode forwards.
class Model {
public:
    Model() = default;

    static Model init(const ModelConfig& cfg, int initial_classes, Rng& rng) {
        Model m;
        m.backbone_ = Backbone::init(cfg, rng);
        m.head_ = LscHead::init(initial_classes, cfg, rng);
        return m;
    }

    const ModelConfig& config() const { return backbone_.config(); }
    Backbone& backbone() { return backbone_; }
    const Backbone& backbone() const { return backbone_; }
    LscHead& head() { return head_; }
    const LscHead& head() const { return head_; }
    bool frozen() const { return frozen_; }

    Model clone_frozen() const {
        Model m = *this;
        m.frozen_ = true;
        return m;
    }

    ForwardResult forward(Tape& tape, const Tensor& batch, ForwardOptions opt) {
        if (frozen_ && (opt.param_grads || opt.update_running))
            throw std::logic_error("frozen model cannot be trained");
        const auto& cfg = backbone_.config();
        if (batch.rank() != 4 || batch.shape[1] != static_cast<std::size_t>(cfg.in_channels) ||
            batch.shape[2] != static_cast<std::size_t>(cfg.image_size) ||
            batch.shape[3] != static_cast<std::size_t>(cfg.image_size))
            throw dimension_error("input batch shape " + shape_str(batch.shape) +
                                  " does not match model input");
        ForwardResult r;
        Var x = tape.constant(batch);
        auto bb = backbone_.forward(tape, x, opt, &r.params, "");
        // cosine geometry: embeddings live on the unit sphere
        Var nrm = ops::sqrt(ops::reduce_sum(ops::mul(bb.embedding_raw, bb.embedding_raw), {1}, true));
        r.embedding = ops::div(bb.embedding_raw, ops::add_scalar(nrm, 1e-12));
        Var proxies = tape.leaf(head_.proxies(), opt.param_grads);
        if (opt.param_grads)
            r.params.push_back(ParamBinding{"head.proxies", &head_.proxies(), proxies, false, true});
        r.eta = tape.leaf(head_.eta_tensor(), opt.param_grads);
        if (opt.param_grads)
            r.params.push_back(ParamBinding{"head.eta", &head_.eta_tensor(), r.eta, false, false,
                                            cfg.eta_floor});
        r.scores = head_.scores(tape, r.embedding, proxies);
        r.taps = std::move(bb.taps);
        return r;
    }

    /// Plain eval-mode forward; returns (scores, embedding) values.
    std::pair<Tensor, Tensor> infer(const Tensor& batch) {
        Tape tape;
        auto r = forward(tape, batch, ForwardOptions{});
        return {tape.value(r.scores), tape.value(r.embedding)};
    }

    template <typename F>
    void visit_parameters(F&& f) {  // f(name, Tensor&)
        auto& blocks = backbone_.blocks();
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string base = "block" + std::to_string(i) + ".";
            f(base + "conv.weight", blocks[i].conv.weight);
            f(base + "conv.bias", blocks[i].conv.bias);
            f(base + "bn.gamma", blocks[i].bn.gamma);
            f(base + "bn.beta", blocks[i].bn.beta);
            f(base + "bn.running_mean", blocks[i].bn.running_mean);
            f(base + "bn.running_var", blocks[i].bn.running_var);
        }
        f("head.proxies", head_.proxies());
        f("head.eta", head_.eta_tensor());
    }

    /// FNV-1a over all parameter bytes; detects any mutation.
    std::uint64_t parameter_hash() {
        std::uint64_t h = 1469598103934665603ULL;
        visit_parameters([&](const std::string&, Tensor& t) {
            const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data.data());
            for (std::size_t i = 0; i < t.data.size() * sizeof(double); ++i) {
                h ^= p[i];
                h *= 1099511628211ULL;
            }
        });
        return h;
    }

private:
    Backbone backbone_;
    LscHead head_;
    bool frozen_ = false;
};

}  // namespace afc
