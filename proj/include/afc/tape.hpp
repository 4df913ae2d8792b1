#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "afc/log.hpp"
#include "afc/tensor.hpp"

namespace afc {

class Tape;

/// Handle to a node on a tape. Cheap to copy; invalid when default-constructed.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

/// Define-by-run tape for reverse-mode differentiation. Nodes are appended in
/// evaluation order, so every node's parents precede it; a backward sweep
/// walks the list once in reverse. One tape is single-threaded by design.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated on first accumulation
        bool requires_grad = false;
        bool grad_live = false;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backward;  // pulls own grad, pushes into parents
    };

    Var leaf(Tensor value, bool requires_grad) {
        check_finite(value, "leaf");
        nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, false, {}, nullptr});
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    Var record(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backward) {
        check_finite(value, "op output");
        bool rg = false;
        for (int p : parents) rg = rg || nodes_[static_cast<std::size_t>(p)].requires_grad;
        nodes_.push_back(
            Node{std::move(value), Tensor{}, rg, false, std::move(parents), std::move(backward)});
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::size_t size() const { return nodes_.size(); }

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

    /// Gradient of the last backward() target w.r.t. v; zeros if it never
    /// received any flow.
    Tensor grad(Var v) const {
        const Node& n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad_live) return n.grad;
        return Tensor(n.value.shape);
    }

    void accumulate_grad(int id, const Tensor& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) return;
        if (!n.grad_live) {
            n.grad = Tensor(n.value.shape);
            n.grad_live = true;
        }
        if (g.size() != n.grad.size())
            throw dimension_error("gradient shape mismatch at node " + std::to_string(id));
        for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
    }

    /// Reverse sweep from a scalar loss. Each node is visited at most once.
    void backward(Var loss) {
        if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
        const Node& ln = nodes_[static_cast<std::size_t>(loss.id)];
        if (ln.value.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(ln.value.shape));
        accumulate_grad(loss.id, Tensor::scalar(1.0));
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.grad_live || !n.backward) continue;
            n.backward(*this, id);
        }
    }

    /// Gradients of `loss` w.r.t. each requested handle. Handles that are
    /// detached (requires_grad == false) yield zeros with a warning;
    /// unreachable ones yield zeros silently.
    std::vector<Tensor> gradients(Var loss, const std::vector<Var>& wrt) {
        backward(loss);
        std::vector<Tensor> out;
        out.reserve(wrt.size());
        for (Var v : wrt) {
            if (v.tape != this) throw std::invalid_argument("gradients: handle from another tape");
            const Node& n = nodes_[static_cast<std::size_t>(v.id)];
            if (!n.requires_grad)
                log::warn("gradient requested for detached tensor (node " + std::to_string(v.id) +
                          "); returning zeros");
            out.push_back(grad(v));
        }
        return out;
    }

    void clear_grads() {
        for (Node& n : nodes_) {
            n.grad = Tensor{};
            n.grad_live = false;
        }
    }

private:
    std::vector<Node> nodes_;
};

inline Tape* same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw std::invalid_argument("operands must live on the same tape");
    return a.tape;
}

}  // namespace afc
