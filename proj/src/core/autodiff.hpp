#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace spanforge::numcore {

class Graph;

// Trainable (or frozen) value with a gradient slot of the same shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())), trainable(train) {}

    void zero_grad() { grad.fill(0.0); }
};

// Handle into a Graph node. Cheap to copy; valid for the graph's lifetime.
class Var {
public:
    Var() = default;
    const Tensor& val() const;
    Graph* graph() const { return g_; }

private:
    friend class Graph;
    Var(Graph* g, std::int32_t id) : g_(g), id_(id) {}
    Graph* g_ = nullptr;
    std::int32_t id_ = -1;
};

// Dynamically built expression tape with eager forward evaluation and
// reverse-mode backprop. One graph per loss evaluation; parameters bind as
// leaves and receive accumulated gradients from backward().
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaf with no gradient tracking (inputs, masks, detached prototypes).
    Var constant(Tensor t);
    Var scalar(double x) { return constant(Tensor::scalar(x)); }

    // Leaf bound to a parameter; value is copied at bind time. backward()
    // accumulates into p.grad when p.trainable.
    Var param(Parameter& p);

    // Reverse pass from a scalar loss. Throws ContractError on non-scalar.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    // Gradient of the last backward() w.r.t. v (zeros if untouched).
    Tensor gradient(Var v) const;

    void set_nan_check(bool on) { nan_check_ = on; }

    std::size_t size() const { return nodes_.size(); }

    // --- used by op builders; not part of the public surface ---
    struct Node {
        Tensor val;
        Tensor grad;
        bool grad_live = false;
        bool needs_grad = false;
        const char* op = "";
        Parameter* bound = nullptr;
        std::function<void(Graph&, std::int32_t)> back;
    };

    Var make(const char* op, Tensor val, std::initializer_list<Var> inputs,
             std::function<void(Graph&, std::int32_t)> back);
    Var make(const char* op, Tensor val, std::span<const Var> inputs,
             std::function<void(Graph&, std::int32_t)> back);

    Node& node(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)]; }
    // Gradient accumulation buffer; allocates zeros on first touch.
    Tensor& grad_buf(std::int32_t id);
    static std::int32_t id_of(Var v) { return v.id_; }

private:
    void check_value(const char* op, const Tensor& t) const;
    std::vector<Node> nodes_;
    bool nan_check_ = true;
};

// ---- primitive operations -------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var offset(Var a, double c);
Var smul(Var s, Var t);  // scalar Var times tensor
Var sadd(Var s, Var t);  // scalar Var plus each element
Var neg(Var a);
Var matmul(Var a, Var b);

Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var softplus(Var a);
Var leaky_relu(Var a, double slope);
Var elu(Var a);

Var softmax(Var a);                 // 1-D
Var logsumexp(Var a);               // all elements -> scalar
Var logsumexp_cols(Var a);          // (m x n) -> (n), reduce over rows
Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);              // 1-D, 1-D -> scalar
Var sum_sq(Var a);                  // sum of squares -> scalar

Var gather(Var a, std::vector<std::int64_t> flat_indices);  // -> 1-D
Var row(Var a, std::int64_t r);                             // (m x n) -> (n)
Var rows(Var a, std::vector<std::int64_t> row_indices);     // -> (k x n)
Var pack(std::span<const Var> scalars);                     // -> 1-D
Var stack_rows(std::span<const Var> row_vectors);           // -> (k x n)
Var tile_rows(Var v, std::int64_t n);                       // (d) -> (n x d)
Var hconcat(Var a, Var b);                                  // (m x p),(m x q) -> (m x p+q)
Var reshape(Var a, std::vector<std::int64_t> shape);

// Per-element add of a column vector down the rows: out[i][j] = a[i][j] + v[i].
Var add_colvec(Var a, Var v);

// Binary cross-entropy from a logit, numerically stable: softplus(z) - y*z.
Var bce_with_logit(Var logit_scalar, double target);

}  // namespace spanforge::numcore
