#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "afc/data.hpp"
#include "afc/importance.hpp"
#include "afc/losses.hpp"
#include "afc/network.hpp"
#include "afc/ops.hpp"
#include "afc/rng.hpp"
#include "afc/trainer.hpp"

namespace afc {

struct BoundTrialReport {
    std::string suite;
    std::size_t trials = 0;
    std::size_t violations = 0;
    double max_slack = 0.0;  // worst positive violation, relative
    bool passed() const { return violations == 0; }
};

// ---------------------------------------------------------------------------
// first-order Taylor residuals

/// r(eps) = | f(z + eps*d) - f(z) - eps * <grad f(z), d> |
inline double taylor_residual(const std::function<Var(Tape&, Var)>& f, const Tensor& z,
                              const Tensor& dir, double eps) {
    if (!z.same_shape(dir)) throw dimension_error("taylor_residual: direction shape mismatch");
    Tape base;
    Var zv = base.leaf(z, true);
    Var loss = f(base, zv);
    base.backward(loss);
    const double f0 = base.value(loss).data[0];
    const Tensor g = base.grad(zv);
    double lin = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) lin += g.data[i] * dir.data[i];

    Tensor zp = z;
    for (std::size_t i = 0; i < zp.size(); ++i) zp.data[i] += eps * dir.data[i];
    Tape fwd;
    const double f1 = fwd.value(f(fwd, fwd.constant(zp))).data[0];
    return std::abs(f1 - f0 - eps * lin);
}

/// Two-layer softplus network ending in a smooth scalar; no kinks anywhere.
struct SmoothFixture {
    Tensor w1, w2, v;
    Shape zshape;

    static SmoothFixture random(std::uint64_t seed) {
        Rng rng(seed);
        SmoothFixture f;
        const std::size_t c = 1 + rng.below(3), h = 2 + rng.below(3), w = 2 + rng.below(3);
        f.zshape = {c, h, w};
        const std::size_t in = c * h * w;
        const std::size_t mid = 4 + rng.below(5);
        const std::size_t out = 3 + rng.below(4);
        f.w1 = Tensor({in, mid});
        f.w2 = Tensor({mid, out});
        f.v = Tensor({out, 1});
        for (double& x : f.w1.data) x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        for (double& x : f.w2.data) x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(mid)));
        for (double& x : f.v.data) x = rng.normal();
        return f;
    }

    Var graph(Tape& t, Var z) const {
        Var flat = ops::reshape(z, {1, shape_numel(zshape)});
        Var h1 = ops::softplus(ops::matmul(flat, t.constant(w1)));
        Var h2 = ops::softplus(ops::matmul(h1, t.constant(w2)));
        return ops::sum(ops::softplus(ops::matmul(h2, t.constant(v))));
    }
};

struct TaylorReport {
    std::string suite = "taylor_residual";
    std::size_t fixtures = 0;
    std::size_t in_range = 0;  // ratio r(eps)/r(eps/2) within [3, 5]
    double min_ratio = 0.0, max_ratio = 0.0;
    double pass_fraction() const {
        return fixtures ? static_cast<double>(in_range) / static_cast<double>(fixtures) : 0.0;
    }
};

/// Halving eps must shrink the residual by about 4 (second-order scaling).
inline TaylorReport check_taylor(std::size_t fixtures, std::uint64_t seed, double eps = 1e-3) {
    TaylorReport rep;
    rep.fixtures = fixtures;
    bool first = true;
    for (std::size_t i = 0; i < fixtures; ++i) {
        const SmoothFixture fx = SmoothFixture::random(mix_seed(seed, i));
        Rng rng(mix_seed(seed, 0xD120000 + i));
        Tensor z(fx.zshape), d(fx.zshape);
        for (double& x : z.data) x = rng.normal();
        for (double& x : d.data) x = rng.normal();
        const double dn = frobenius_norm(d);
        for (double& x : d.data) x /= dn;
        auto f = [&fx](Tape& t, Var zv) { return fx.graph(t, zv); };
        const double r1 = taylor_residual(f, z, d, eps);
        const double r2 = taylor_residual(f, z, d, eps / 2.0);
        const double ratio = r2 > 0.0 ? r1 / r2 : 0.0;
        if (first || ratio < rep.min_ratio) rep.min_ratio = ratio;
        if (first || ratio > rep.max_ratio) rep.max_ratio = ratio;
        first = false;
        if (ratio >= 3.0 && ratio <= 5.0) ++rep.in_range;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// the two-step bound chain on empirical expectations

struct CsTrial {
    double e_inner = 0.0;     // E[<G, D>]
    double e_normprod = 0.0;  // E[||G|| * ||D||]
    double root_e2 = 0.0;     // sqrt(E[||G||^2] * E[||D||^2])
};

inline CsTrial cs_chain_trial(const std::vector<Tensor>& grads, const std::vector<Tensor>& deltas) {
    if (grads.size() != deltas.size() || grads.empty())
        throw std::invalid_argument("cs_chain_trial: need matched non-empty samples");
    CsTrial t;
    double e_g2 = 0.0, e_d2 = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        t.e_inner += frobenius_inner(grads[i], deltas[i]);
        const double gn = frobenius_norm(grads[i]);
        const double dn = frobenius_norm(deltas[i]);
        t.e_normprod += gn * dn;
        e_g2 += gn * gn;
        e_d2 += dn * dn;
    }
    const double n = static_cast<double>(grads.size());
    t.e_inner /= n;
    t.e_normprod /= n;
    t.root_e2 = std::sqrt((e_g2 / n) * (e_d2 / n));
    return t;
}

/// E[<G,D>] <= E[||G|| ||D||] <= sqrt(E[||G||^2] E[||D||^2]) on random finite
/// samples; both links must hold within relative slack `tol`.
inline BoundTrialReport check_cs_chain(std::size_t trials, std::uint64_t seed, double tol = 1e-10) {
    BoundTrialReport rep;
    rep.suite = "cs_chain";
    rep.trials = trials;
    for (std::size_t i = 0; i < trials; ++i) {
        Rng rng(mix_seed(seed, 0xC5 + i));
        const std::size_t n = 2 + rng.below(19);
        const std::size_t h = 1 + rng.below(5), w = 1 + rng.below(5);
        std::vector<Tensor> grads, deltas;
        const double gs = std::exp(rng.uniform(-2.0, 2.0));
        const double ds = std::exp(rng.uniform(-2.0, 2.0));
        for (std::size_t s = 0; s < n; ++s) {
            Tensor g({h, w}), d({h, w});
            for (double& v : g.data) v = rng.normal(0.0, gs);
            for (double& v : d.data) v = rng.normal(0.0, ds);
            grads.push_back(std::move(g));
            deltas.push_back(std::move(d));
        }
        const CsTrial t = cs_chain_trial(grads, deltas);
        const double scale = std::max({1.0, std::abs(t.e_inner), t.e_normprod, t.root_e2});
        const double s1 = (t.e_inner - t.e_normprod) / scale;
        const double s2 = (t.e_normprod - t.root_e2) / scale;
        const double worst = std::max(s1, s2);
        rep.max_slack = std::max(rep.max_slack, worst);
        if (worst > tol) ++rep.violations;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// mixture inequality on exact finite distributions

struct MixtureTrial {
    double phi_old = 0.0, phi_new = 0.0;
    double e_old = 0.0, e_new = 0.0, e_mixture = 0.0;
};

/// Enumerated finite supports make the decomposition an arithmetic identity:
/// phi_old * E_old[dz] + phi_new * E_new[dz] must equal the expectation under
/// the mixture built point by point.
inline MixtureTrial mixture_trial(const std::vector<double>& old_probs,
                                  const std::vector<double>& old_values,
                                  const std::vector<double>& new_probs,
                                  const std::vector<double>& new_values, double phi_old) {
    for (double v : old_values)
        if (v < 0.0) throw std::invalid_argument("mixture_trial: negative discrepancy value");
    for (double v : new_values)
        if (v < 0.0) throw std::invalid_argument("mixture_trial: negative discrepancy value");
    MixtureTrial t;
    t.phi_old = phi_old;
    t.phi_new = 1.0 - phi_old;
    for (std::size_t i = 0; i < old_probs.size(); ++i) t.e_old += old_probs[i] * old_values[i];
    for (std::size_t i = 0; i < new_probs.size(); ++i) t.e_new += new_probs[i] * new_values[i];
    // mixture enumerated as its own distribution
    for (std::size_t i = 0; i < old_probs.size(); ++i)
        t.e_mixture += (t.phi_old * old_probs[i]) * old_values[i];
    for (std::size_t i = 0; i < new_probs.size(); ++i)
        t.e_mixture += (t.phi_new * new_probs[i]) * new_values[i];
    return t;
}

inline BoundTrialReport check_proposition1(std::size_t trials, std::uint64_t seed,
                                           double tol = 1e-12) {
    BoundTrialReport rep;
    rep.suite = "proposition1";
    rep.trials = trials;
    for (std::size_t i = 0; i < trials; ++i) {
        Rng rng(mix_seed(seed, 0x9109 + i));
        auto finite_dist = [&rng](std::vector<double>& probs, std::vector<double>& values) {
            const std::size_t k = 1 + rng.below(8);
            probs.resize(k);
            values.resize(k);
            double z = 0.0;
            for (double& p : probs) z += (p = rng.uniform(0.05, 1.0));
            for (double& p : probs) p /= z;
            for (double& v : values) v = rng.uniform(0.0, 4.0);
        };
        std::vector<double> op, ov, np, nv;
        finite_dist(op, ov);
        finite_dist(np, nv);
        const double phi_old = rng.uniform(0.05, 0.95);
        const MixtureTrial t = mixture_trial(op, ov, np, nv, phi_old);

        const double decomposed = t.phi_old * t.e_old + t.phi_new * t.e_new;
        const double scale = std::max(1.0, std::abs(t.e_mixture));
        const double identity_dev = std::abs(decomposed - t.e_mixture) / scale;
        const double bound_slack = (t.phi_old * t.e_old - t.e_mixture) / scale;
        const double worst = std::max(identity_dev, bound_slack);
        rep.max_slack = std::max(rep.max_slack, worst);
        if (worst > tol) ++rep.violations;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// importance-weighted objective vs squared expected loss change

/// On an enumerable fixture with stored exact teacher gradients, the
/// weighted discrepancy (importance x expected squared map distance) must
/// upper-bound the squared expected first-order loss change, per channel.
inline BoundTrialReport check_importance_bound_link(std::size_t trials, std::uint64_t seed,
                                                    double tol = 1e-10) {
    BoundTrialReport rep;
    rep.suite = "importance_bound_link";
    rep.trials = 0;

    // tiny enumerable fixture: 4 classes, 8 examples each, briefly trained
    SyntheticSpec dspec;
    dspec.num_classes = 4;
    dspec.per_class_train = 8;
    dspec.per_class_test = 2;
    dspec.image_size = 8;
    dspec.noise_sigma = 0.08;
    dspec.seed = mix_seed(seed, 0xF1);
    const auto data = make_synthetic(dspec);

    ModelConfig mcfg;
    mcfg.in_channels = 1;
    mcfg.image_size = 8;
    mcfg.channels = {4, 8};
    mcfg.proxies_per_class = 2;
    Rng mrng(mix_seed(seed, 0xF2));
    Model teacher = Model::init(mcfg, 4, mrng);
    {
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 8;
        tc.lr0 = 0.05;
        tc.seed = mix_seed(seed, 0xF3);
        StagePlan plan = build_stage_plan(4, 1, 0, false);
        ExemplarStore store;
        store.budget = 2;
        run_stage(0, teacher, nullptr, nullptr, store, data.train, data.test, plan, tc,
                  mix_seed(seed, 0xF4));
    }

    // exact per-example teacher gradients and taps over the whole dataset
    std::vector<std::size_t> all(data.train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Tensor batch = data.train.gather(all);
    std::vector<int> cols(data.train.labels.begin(), data.train.labels.end());

    ForwardOptions fopt;
    fopt.tap_grads = true;
    Tape ttape;
    auto tfwd = teacher.forward(ttape, batch, fopt);
    Var tloss = classification_loss(ttape, tfwd.scores, cols, tfwd.eta, teacher.head().delta(),
                                    Reduction::sum);
    ttape.backward(tloss);
    std::vector<Tensor> teacher_grads, teacher_taps;
    for (Var t : tfwd.taps) {
        teacher_grads.push_back(ttape.grad(t));
        teacher_taps.push_back(ttape.value(t));
    }

    const std::size_t N = data.train.size();
    for (std::size_t trial = 0; trial < trials; ++trial) {
        Model student = teacher.clone_frozen();
        Rng prng(mix_seed(seed, 0xBEEF00 + trial));
        const double noise = trial == 0 ? 0.0 : 0.02 + 0.05 * prng.uniform();  // trial 0: student == teacher
        student.visit_parameters([&](const std::string& name, Tensor& t) {
            if (name.find("running_") != std::string::npos) return;
            for (double& v : t.data) v += noise * prng.normal();
        });
        Tape stape;
        auto sfwd = student.forward(stape, batch, ForwardOptions{});

        for (std::size_t l = 0; l < teacher_taps.size(); ++l) {
            const Tensor& tz = teacher_taps[l];
            const Tensor& sz = stape.value(sfwd.taps[l]);
            const Tensor& tg = teacher_grads[l];
            const std::size_t C = tz.shape[1], HW = tz.shape[2] * tz.shape[3];
            for (std::size_t c = 0; c < C; ++c) {
                double e_dl = 0.0, e_g2 = 0.0, e_dz2 = 0.0;
                for (std::size_t b = 0; b < N; ++b) {
                    const double* gz = tg.data.data() + (b * C + c) * HW;
                    const double* z0 = tz.data.data() + (b * C + c) * HW;
                    const double* z1 = sz.data.data() + (b * C + c) * HW;
                    double inner = 0.0, g2 = 0.0, dz2 = 0.0;
                    for (std::size_t i = 0; i < HW; ++i) {
                        const double dz = z1[i] - z0[i];
                        inner += gz[i] * dz;
                        g2 += gz[i] * gz[i];
                        dz2 += dz * dz;
                    }
                    e_dl += inner;
                    e_g2 += g2;
                    e_dz2 += dz2;
                }
                e_dl /= static_cast<double>(N);
                e_g2 /= static_cast<double>(N);
                e_dz2 /= static_cast<double>(N);
                const double lhs = e_dl * e_dl;
                const double rhs = e_g2 * e_dz2;
                const double slack = (lhs - rhs) / std::max(1.0, rhs);
                rep.max_slack = std::max(rep.max_slack, slack);
                ++rep.trials;
                if (slack > tol) ++rep.violations;
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// finite-difference gradient checks of the full training loss

struct GradCheckReport {
    std::string suite = "gradient_check";
    std::size_t fixtures = 0;
    std::size_t params_checked = 0;
    std::size_t violations = 0;
    double max_rel_error = 0.0;
    bool passed() const { return violations == 0; }
};

/// Random small student/teacher pairs; every parameter of the combined loss
/// is checked against central differences.
inline GradCheckReport check_gradients(std::size_t fixtures, std::uint64_t seed, double tol = 1e-4,
                                       double fd_eps = 1e-5) {
    GradCheckReport rep;
    rep.fixtures = fixtures;
    for (std::size_t fi = 0; fi < fixtures; ++fi) {
        Rng rng(mix_seed(seed, 0x6AD0000 + fi));
        ModelConfig cfg;
        cfg.in_channels = 1;
        cfg.image_size = 8;
        cfg.channels = {static_cast<int>(2 + rng.below(3)), static_cast<int>(3 + rng.below(3))};
        cfg.proxies_per_class = static_cast<int>(1 + rng.below(3));
        const int classes = static_cast<int>(2 + rng.below(3));
        Rng init_a(mix_seed(seed, 0xAA00 + fi)), init_b(mix_seed(seed, 0xBB00 + fi));
        Model student = Model::init(cfg, classes, init_a);
        Model teacher = Model::init(cfg, classes, init_b);

        const std::size_t B = 2 + rng.below(2);
        Tensor x({B, 1, 8, 8});
        for (double& v : x.data) v = rng.uniform();
        std::vector<int> labels;
        for (std::size_t b = 0; b < B; ++b) labels.push_back(static_cast<int>(rng.below(classes)));

        std::vector<std::vector<double>> importance;
        for (int c : student.backbone().tap_channels()) {
            std::vector<double> w(static_cast<std::size_t>(c));
            for (double& v : w) v = rng.uniform(0.1, 2.0);
            importance.push_back(std::move(w));
        }
        const double wdisc = 4.0 * lambda_t(classes + 2, classes);  // lambda_disc * lambda_t

        std::vector<Tensor> teacher_taps;
        {
            Tape tt;
            auto tf = teacher.forward(tt, x, ForwardOptions{});
            for (Var t : tf.taps) teacher_taps.push_back(tt.value(t));
        }

        ForwardOptions fo;
        fo.batch_stats = true;  // exercise the batch-statistic path
        auto eval_total = [&](Model& m) {
            Tape t;
            auto fr = m.forward(t, x, fo);
            Var cls = classification_loss(t, fr.scores, labels, fr.eta, m.head().delta());
            Var disc = discrepancy_loss(t, fr.taps, teacher_taps, importance);
            return t.value(ops::add(cls, ops::scale(disc, wdisc))).data[0];
        };

        Tape tape;
        ForwardOptions fg = fo;
        fg.param_grads = true;
        auto fr = student.forward(tape, x, fg);
        Var cls = classification_loss(tape, fr.scores, labels, fr.eta, student.head().delta());
        Var disc = discrepancy_loss(tape, fr.taps, teacher_taps, importance);
        Var total = ops::add(cls, ops::scale(disc, wdisc));
        tape.backward(total);

        for (const auto& pb : fr.params) {
            const Tensor g = tape.grad(pb.var);
            for (std::size_t i = 0; i < pb.tensor->size(); ++i) {
                const auto fd_at = [&](double eps) {
                    const double orig = pb.tensor->data[i];
                    pb.tensor->data[i] = orig + eps;
                    const double lp = eval_total(student);
                    pb.tensor->data[i] = orig - eps;
                    const double lm = eval_total(student);
                    pb.tensor->data[i] = orig;
                    return (lp - lm) / (2.0 * eps);
                };
                const auto rel_err = [&](double fd) {
                    return std::abs(fd - g.data[i]) /
                           std::max({std::abs(fd), std::abs(g.data[i]), 1e-4});
                };
                double rel = rel_err(fd_at(fd_eps));
                // a relu kink inside the stencil inflates the central
                // difference; shrinking the step isolates true mismatches,
                // which stay wrong at every step size
                if (rel > tol) rel = std::min(rel, rel_err(fd_at(fd_eps * 0.1)));
                if (rel > tol) rel = std::min(rel, rel_err(fd_at(fd_eps * 0.01)));
                rep.max_rel_error = std::max(rep.max_rel_error, rel);
                ++rep.params_checked;
                if (rel > tol) ++rep.violations;
            }
        }
    }
    return rep;
}

}  // namespace afc
