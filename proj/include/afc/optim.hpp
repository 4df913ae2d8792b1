#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "afc/network.hpp"
#include "afc/tape.hpp"

namespace afc {

inline double cosine_lr(int epoch, int total_epochs, double lr0) {
    return 0.5 * lr0 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                       static_cast<double>(total_epochs)));
}

/// SGD with momentum. Velocity buffers are keyed by parameter name and reset
/// when a parameter changes shape (head growth). Proxy rows are projected
/// back to the unit sphere after each step, so they carry no weight decay.
class SgdMomentum {
public:
    void step(Tape& tape, const std::vector<ParamBinding>& params, double lr, double momentum,
              double weight_decay) {
        for (const auto& pb : params) {
            Tensor g = tape.grad(pb.var);
            Tensor& w = *pb.tensor;
            if (weight_decay != 0.0 && pb.weight_decay)
                for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += weight_decay * w.data[i];
            Tensor& v = velocity_[pb.name];
            if (v.shape != w.shape) v = Tensor(w.shape);
            for (std::size_t i = 0; i < g.size(); ++i) {
                v.data[i] = momentum * v.data[i] + g.data[i];
                w.data[i] -= lr * v.data[i];
            }
            if (pb.renormalize_rows) detail::normalize_rows(w);
            if (std::isfinite(pb.lower_bound))
                for (double& x : w.data) x = std::max(x, pb.lower_bound);
        }
    }

    void reset() { velocity_.clear(); }

private:
    std::unordered_map<std::string, Tensor> velocity_;
};

}  // namespace afc
