#include "hfcr/autograd.hpp"

namespace hfcr {

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::parameter(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
        return Var<T>(this, it->second);
    }
    Node n;
    n.op = "parameter:" + p.name;
    n.value = p.value;
    n.requires_grad = grad_enabled_;
    n.param = grad_enabled_ ? &p : nullptr;
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::record(std::string op, Tensor<T> value, std::vector<std::size_t> parents, BackwardFn backward) {
    if (backward_done_) {
        throw GraphError("graph already consumed by backward(); build a new graph for a new forward pass");
    }
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    for (auto p : parents) {
        if (p >= nodes_.size()) throw GraphError("operand does not belong to this graph");
        n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    }
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T> Graph<T>::grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    if (!n.has_grad) return Tensor<T>(n.value.shape());
    return n.grad;
}

template <typename T>
Tensor<T>& Graph<T>::grad_slot(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
        n.grad = Tensor<T>(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

template <typename T>
void Graph<T>::backward(const Var<T>& loss) {
    if (&loss.graph() != this || loss.id() >= nodes_.size()) {
        throw GraphError("backward: loss was not produced by this graph");
    }
    if (backward_done_) throw GraphError("backward called twice on the same graph");
    Node& root = nodes_[loss.id()];
    if (root.value.size() != 1) {
        throw GraphError("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
    }
    if (!root.requires_grad) throw GraphError("backward: loss is detached from every trainable parameter");
    backward_done_ = true;

    grad_slot(loss.id()).fill(T{1});
    backward_order_.clear();
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.has_grad || !n.requires_grad) continue;
        backward_order_.push_back(id);
        if (n.backward) {
            n.backward(*this, id);
        } else if (n.param) {
            auto& pg = n.param->grad;
            if (pg.shape() != n.value.shape()) pg = Tensor<T>(n.value.shape());
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
            n.param->grad_ready = true;
        }
    }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace hfcr
