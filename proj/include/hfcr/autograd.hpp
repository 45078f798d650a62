#pragma once

#include "hfcr/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace hfcr {

/// Trainable tensor: a named value plus an accumulated gradient of the same shape.
template <typename T>
struct Parameter {
    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    /// Set once a reverse pass has deposited a gradient since the last zero_grad().
    bool grad_ready = false;

    void zero_grad() {
        grad = Tensor<T>(value.shape());
        grad_ready = false;
    }
};

template <typename T>
class Graph;

/// Handle to a node recorded in a Graph. Cheap to copy; only valid while the graph lives.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

    Graph<T>& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    Graph<T>* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Tape of executed operations. Nodes are appended in execution order, so the
/// tape is already topologically sorted and the reverse pass walks it backwards.
///
/// A graph built with grad_enabled=false records values only; parameters enter
/// as constants and no backward closures are kept.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> constant(Tensor<T> value);

    /// Registers a parameter as a leaf. Repeated calls with the same parameter
    /// return the same node, so every use shares one gradient slot.
    Var<T> parameter(Parameter<T>& p);

    Var<T> record(std::string op, Tensor<T> value, std::vector<std::size_t> parents, BackwardFn backward);

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool requires_grad(const Var<T>& v) const { return requires_grad(v.id()); }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient of the last backward pass with respect to a node (zeros if none reached it).
    Tensor<T> grad(const Var<T>& v) const;

    /// Incoming gradient for the node currently running its backward rule.
    const Tensor<T>& upstream(std::size_t id) const { return nodes_.at(id).grad; }

    /// Accumulation slot for a parent's gradient; allocated on first touch.
    Tensor<T>& grad_slot(std::size_t id);

    void backward(const Var<T>& loss);

    /// Node ids in the order the last reverse pass visited them.
    const std::vector<std::size_t>& backward_order() const { return backward_order_; }

private:
    struct Node {
        std::string op;
        Tensor<T> value;
        Tensor<T> grad;
        bool has_grad = false;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        Parameter<T>* param = nullptr;
    };

    bool grad_enabled_;
    bool backward_done_ = false;
    // deque: references returned by value() stay valid while new nodes are recorded.
    std::deque<Node> nodes_;
    std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
    std::vector<std::size_t> backward_order_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return graph_->value(id_);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace hfcr
