#include "core/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace spanforge::numcore {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

double stable_softplus(double x) {
    // log(1 + e^x) without overflow.
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::val() const {
    require(g_ != nullptr, "Var::val on default-constructed Var");
    return g_->value(*this);
}

Var Graph::constant(Tensor t) {
    Node n;
    n.val = std::move(t);
    n.op = "constant";
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Graph::param(Parameter& p) {
    Node n;
    n.val = p.value;
    n.op = "param";
    n.needs_grad = p.trainable;
    n.bound = &p;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Graph::make(const char* op, Tensor val, std::initializer_list<Var> inputs,
                std::function<void(Graph&, std::int32_t)> back) {
    std::vector<Var> v(inputs);
    return make(op, std::move(val), std::span<const Var>(v), std::move(back));
}

Var Graph::make(const char* op, Tensor val, std::span<const Var> inputs,
                std::function<void(Graph&, std::int32_t)> back) {
    bool needs = false;
    for (const Var& in : inputs) {
        require(in.g_ == this, std::string(op) + ": input from a different graph");
        needs = needs || nodes_[static_cast<std::size_t>(in.id_)].needs_grad;
    }
    check_value(op, val);
    Node n;
    n.val = std::move(val);
    n.op = op;
    n.needs_grad = needs;
    if (needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

void Graph::check_value(const char* op, const Tensor& t) const {
    if (!nan_check_) return;
    for (double x : t.data()) {
        if (std::isnan(x))
            throw PipelineError(std::string("NaN in forward pass at primitive '") + op + "'");
    }
}

const Tensor& Graph::value(Var v) const {
    require(v.g_ == this && v.id_ >= 0, "Graph::value: foreign or empty Var");
    return nodes_[static_cast<std::size_t>(v.id_)].val;
}

Tensor Graph::gradient(Var v) const {
    require(v.g_ == this && v.id_ >= 0, "Graph::gradient: foreign or empty Var");
    const Node& n = nodes_[static_cast<std::size_t>(v.id_)];
    if (!n.grad_live) return Tensor::zeros(n.val.shape());
    return n.grad;
}

Tensor& Graph::grad_buf(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.val.shape());
        n.grad_live = true;
    }
    return n.grad;
}

void Graph::backward(Var loss) {
    require(loss.g_ == this && loss.id_ >= 0, "backward: loss from a different graph");
    Node& ln = nodes_[static_cast<std::size_t>(loss.id_)];
    if (ln.val.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + ln.val.shape_str());
    grad_buf(loss.id_)[0] = 1.0;
    for (std::int32_t id = loss.id_; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_live || !n.needs_grad) continue;
        if (n.back) n.back(*this, id);
        if (n.bound != nullptr && n.bound->trainable) {
            auto& dst = n.bound->grad.data();
            const auto& src = n.grad.data();
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        }
    }
}

// ---- helpers ---------------------------------------------------------------

namespace {

Graph& graph_of(Var a, const char* op) {
    require(a.graph() != nullptr, std::string(op) + ": empty Var");
    return *a.graph();
}

using BackFn = std::function<void(Graph&, std::int32_t)>;

// Elementwise binary op on same-shape tensors.
template <class F, class DA, class DB>
Var binary_same(const char* op, Var a, Var b, F f, DA da_of, DB db_of) {
    Graph& g = graph_of(a, op);
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    require(ta.same_shape(tb), std::string(op) + ": shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = f(ta[i], tb[i]);
    auto ia = Graph::id_of(a), ib = Graph::id_of(b);
    return g.make(op, std::move(out), {a, b}, [ia, ib, da_of, db_of](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        const Tensor& va = gg.node(ia).val;
        const Tensor& vb = gg.node(ib).val;
        if (gg.node(ia).needs_grad) {
            Tensor& da = gg.grad_buf(ia);
            for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * da_of(va[i], vb[i]);
        }
        if (gg.node(ib).needs_grad) {
            Tensor& db = gg.grad_buf(ib);
            for (std::int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i] * db_of(va[i], vb[i]);
        }
    });
}

// Elementwise unary op; dfx(x, y) is dy/dx at that element.
template <class F, class DF>
Var unary(const char* op, Var a, F f, DF dfx) {
    Graph& g = graph_of(a, op);
    const Tensor& ta = g.value(a);
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = f(ta[i]);
    auto ia = Graph::id_of(a);
    return g.make(op, std::move(out), {a}, [ia, dfx](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        const Tensor& y = gg.node(self).val;
        const Tensor& x = gg.node(ia).val;
        Tensor& da = gg.grad_buf(ia);
        for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * dfx(x[i], y[i]);
    });
}

}  // namespace

// ---- arithmetic ------------------------------------------------------------

Var add(Var a, Var b) {
    return binary_same(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary_same(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary_same(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var div(Var a, Var b) {
    return binary_same(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double c) {
    return unary(
        "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var offset(Var a, double c) {
    return unary(
        "offset", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var smul(Var s, Var t) {
    Graph& g = graph_of(s, "smul");
    const Tensor& ts = g.value(s);
    const Tensor& tt = g.value(t);
    require(ts.numel() == 1, "smul: first operand must be scalar");
    double sv = ts[0];
    Tensor out(tt.shape());
    for (std::int64_t i = 0; i < tt.numel(); ++i) out[i] = sv * tt[i];
    auto is = Graph::id_of(s), it = Graph::id_of(t);
    return g.make("smul", std::move(out), {s, t}, [is, it, sv](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        const Tensor& tv = gg.node(it).val;
        if (gg.node(is).needs_grad) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < dy.numel(); ++i) acc += dy[i] * tv[i];
            gg.grad_buf(is)[0] += acc;
        }
        if (gg.node(it).needs_grad) {
            Tensor& dt = gg.grad_buf(it);
            for (std::int64_t i = 0; i < dy.numel(); ++i) dt[i] += sv * dy[i];
        }
    });
}

Var sadd(Var s, Var t) {
    Graph& g = graph_of(s, "sadd");
    const Tensor& ts = g.value(s);
    const Tensor& tt = g.value(t);
    require(ts.numel() == 1, "sadd: first operand must be scalar");
    double sv = ts[0];
    Tensor out(tt.shape());
    for (std::int64_t i = 0; i < tt.numel(); ++i) out[i] = sv + tt[i];
    auto is = Graph::id_of(s), it = Graph::id_of(t);
    return g.make("sadd", std::move(out), {s, t}, [is, it](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        if (gg.node(is).needs_grad) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < dy.numel(); ++i) acc += dy[i];
            gg.grad_buf(is)[0] += acc;
        }
        if (gg.node(it).needs_grad) {
            Tensor& dt = gg.grad_buf(it);
            for (std::int64_t i = 0; i < dy.numel(); ++i) dt[i] += dy[i];
        }
    });
}

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, "matmul");
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    // Rank-1 operands are treated as a single row (left) or column (right).
    std::int64_t m = ta.rank() == 1 ? 1 : ta.dim(0);
    std::int64_t k = ta.rank() == 1 ? ta.dim(0) : ta.dim(1);
    std::int64_t k2 = tb.dim(0);
    std::int64_t n = tb.rank() == 1 ? 1 : tb.dim(1);
    require(ta.rank() >= 1 && ta.rank() <= 2 && tb.rank() >= 1 && tb.rank() <= 2,
            "matmul: operands must be rank 1 or 2");
    require(k == k2, "matmul: inner dimensions differ, " + ta.shape_str() + " vs " + tb.shape_str());

    Tensor out = (ta.rank() == 1 && tb.rank() == 1)   ? Tensor::scalar(0.0)
                 : (ta.rank() == 1)                   ? Tensor::zeros({n})
                 : (tb.rank() == 1)                   ? Tensor::zeros({m})
                                                      : Tensor::zeros({m, n});
    const auto& A = ta.data();
    const auto& B = tb.data();
    auto& C = out.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
            double av = A[static_cast<std::size_t>(i * k + p)];
            if (av == 0.0) continue;
            for (std::int64_t j = 0; j < n; ++j)
                C[static_cast<std::size_t>(i * n + j)] += av * B[static_cast<std::size_t>(p * n + j)];
        }

    auto ia = Graph::id_of(a), ib = Graph::id_of(b);
    return g.make("matmul", std::move(out), {a, b}, [ia, ib, m, k, n](Graph& gg, std::int32_t self) {
        const auto& dy = gg.node(self).grad.data();
        const auto& A = gg.node(ia).val.data();
        const auto& B = gg.node(ib).val.data();
        if (gg.node(ia).needs_grad) {
            auto& dA = gg.grad_buf(ia).data();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < n; ++j)
                        acc += dy[static_cast<std::size_t>(i * n + j)] * B[static_cast<std::size_t>(p * n + j)];
                    dA[static_cast<std::size_t>(i * k + p)] += acc;
                }
        }
        if (gg.node(ib).needs_grad) {
            auto& dB = gg.grad_buf(ib).data();
            for (std::int64_t p = 0; p < k; ++p)
                for (std::int64_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < m; ++i)
                        acc += A[static_cast<std::size_t>(i * k + p)] * dy[static_cast<std::size_t>(i * n + j)];
                    dB[static_cast<std::size_t>(p * n + j)] += acc;
                }
        }
    });
}

// ---- nonlinearities ---------------------------------------------------------

Var sigmoid(Var a) {
    return unary(
        "sigmoid", a, [](double x) { return stable_sigmoid(x); },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
    return unary(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var softplus(Var a) {
    return unary(
        "softplus", a, [](double x) { return stable_softplus(x); },
        [](double x, double) { return stable_sigmoid(x); });
}

Var leaky_relu(Var a, double slope) {
    return unary(
        "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var elu(Var a) {
    return unary(
        "elu", a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
        [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

// ---- reductions -------------------------------------------------------------

Var softmax(Var a) {
    Graph& g = graph_of(a, "softmax");
    const Tensor& ta = g.value(a);
    require(ta.rank() == 1, "softmax: expects a 1-D tensor");
    double mx = ta[0];
    for (std::int64_t i = 1; i < ta.numel(); ++i) mx = std::max(mx, ta[i]);
    Tensor out(ta.shape());
    double z = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) {
        out[i] = std::exp(ta[i] - mx);
        z += out[i];
    }
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] /= z;
    auto ia = Graph::id_of(a);
    return g.make("softmax", std::move(out), {a}, [ia](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        const Tensor& y = gg.node(self).val;
        Tensor& da = gg.grad_buf(ia);
        double dot_dy_y = 0.0;
        for (std::int64_t i = 0; i < y.numel(); ++i) dot_dy_y += dy[i] * y[i];
        for (std::int64_t i = 0; i < y.numel(); ++i) da[i] += y[i] * (dy[i] - dot_dy_y);
    });
}

Var logsumexp(Var a) {
    Graph& g = graph_of(a, "logsumexp");
    const Tensor& ta = g.value(a);
    require(ta.numel() > 0, "logsumexp: empty tensor");
    double mx = ta[0];
    for (std::int64_t i = 1; i < ta.numel(); ++i) mx = std::max(mx, ta[i]);
    double s = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) s += std::exp(ta[i] - mx);
    double lse = mx + std::log(s);
    auto ia = Graph::id_of(a);
    return g.make("logsumexp", Tensor::scalar(lse), {a}, [ia, lse](Graph& gg, std::int32_t self) {
        double dy = gg.node(self).grad[0];
        const Tensor& x = gg.node(ia).val;
        Tensor& da = gg.grad_buf(ia);
        for (std::int64_t i = 0; i < x.numel(); ++i) da[i] += dy * std::exp(x[i] - lse);
    });
}

Var logsumexp_cols(Var a) {
    Graph& g = graph_of(a, "logsumexp_cols");
    const Tensor& ta = g.value(a);
    require(ta.rank() == 2, "logsumexp_cols: expects a matrix");
    std::int64_t m = ta.rows(), n = ta.cols();
    Tensor out = Tensor::zeros({n});
    for (std::int64_t j = 0; j < n; ++j) {
        double mx = ta.at(0, j);
        for (std::int64_t i = 1; i < m; ++i) mx = std::max(mx, ta.at(i, j));
        double s = 0.0;
        for (std::int64_t i = 0; i < m; ++i) s += std::exp(ta.at(i, j) - mx);
        out[j] = mx + std::log(s);
    }
    auto ia = Graph::id_of(a);
    return g.make("logsumexp_cols", std::move(out), {a}, [ia, m, n](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        const Tensor& y = gg.node(self).val;
        const Tensor& x = gg.node(ia).val;
        Tensor& da = gg.grad_buf(ia);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) da.at(i, j) += dy[j] * std::exp(x.at(i, j) - y[j]);
    });
}

Var sum(Var a) {
    Graph& g = graph_of(a, "sum");
    const Tensor& ta = g.value(a);
    double s = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) s += ta[i];
    auto ia = Graph::id_of(a);
    return g.make("sum", Tensor::scalar(s), {a}, [ia](Graph& gg, std::int32_t self) {
        double dy = gg.node(self).grad[0];
        Tensor& da = gg.grad_buf(ia);
        for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += dy;
    });
}

Var mean(Var a) {
    Graph& g = graph_of(a, "mean");
    const Tensor& ta = g.value(a);
    require(ta.numel() > 0, "mean: empty tensor");
    double s = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) s += ta[i];
    double inv = 1.0 / static_cast<double>(ta.numel());
    auto ia = Graph::id_of(a);
    return g.make("mean", Tensor::scalar(s * inv), {a}, [ia, inv](Graph& gg, std::int32_t self) {
        double dy = gg.node(self).grad[0];
        Tensor& da = gg.grad_buf(ia);
        for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += dy * inv;
    });
}

Var dot(Var a, Var b) {
    Graph& g = graph_of(a, "dot");
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    require(ta.rank() == 1 && tb.rank() == 1 && ta.numel() == tb.numel(), "dot: expects equal-length vectors");
    double s = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) s += ta[i] * tb[i];
    auto ia = Graph::id_of(a), ib = Graph::id_of(b);
    return g.make("dot", Tensor::scalar(s), {a, b}, [ia, ib](Graph& gg, std::int32_t self) {
        double dy = gg.node(self).grad[0];
        const Tensor& va = gg.node(ia).val;
        const Tensor& vb = gg.node(ib).val;
        if (gg.node(ia).needs_grad) {
            Tensor& da = gg.grad_buf(ia);
            for (std::int64_t i = 0; i < va.numel(); ++i) da[i] += dy * vb[i];
        }
        if (gg.node(ib).needs_grad) {
            Tensor& db = gg.grad_buf(ib);
            for (std::int64_t i = 0; i < vb.numel(); ++i) db[i] += dy * va[i];
        }
    });
}

Var sum_sq(Var a) {
    Graph& g = graph_of(a, "sum_sq");
    const Tensor& ta = g.value(a);
    double s = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) s += ta[i] * ta[i];
    auto ia = Graph::id_of(a);
    return g.make("sum_sq", Tensor::scalar(s), {a}, [ia](Graph& gg, std::int32_t self) {
        double dy = gg.node(self).grad[0];
        const Tensor& x = gg.node(ia).val;
        Tensor& da = gg.grad_buf(ia);
        for (std::int64_t i = 0; i < x.numel(); ++i) da[i] += dy * 2.0 * x[i];
    });
}

// ---- structural ops ----------------------------------------------------------

Var gather(Var a, std::vector<std::int64_t> flat_indices) {
    Graph& g = graph_of(a, "gather");
    const Tensor& ta = g.value(a);
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(flat_indices.size())});
    for (std::size_t i = 0; i < flat_indices.size(); ++i) {
        require(flat_indices[i] >= 0 && flat_indices[i] < ta.numel(), "gather: index out of range");
        out[static_cast<std::int64_t>(i)] = ta[flat_indices[i]];
    }
    auto ia = Graph::id_of(a);
    return g.make("gather", std::move(out), {a},
                  [ia, idx = std::move(flat_indices)](Graph& gg, std::int32_t self) {
                      const Tensor& dy = gg.node(self).grad;
                      Tensor& da = gg.grad_buf(ia);
                      for (std::size_t i = 0; i < idx.size(); ++i)
                          da[idx[i]] += dy[static_cast<std::int64_t>(i)];
                  });
}

Var row(Var a, std::int64_t r) {
    Graph& g = graph_of(a, "row");
    const Tensor& ta = g.value(a);
    require(ta.rank() == 2 && r >= 0 && r < ta.rows(), "row: index out of range");
    std::int64_t n = ta.cols();
    Tensor out = Tensor::zeros({n});
    for (std::int64_t j = 0; j < n; ++j) out[j] = ta.at(r, j);
    auto ia = Graph::id_of(a);
    return g.make("row", std::move(out), {a}, [ia, r, n](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        Tensor& da = gg.grad_buf(ia);
        for (std::int64_t j = 0; j < n; ++j) da.at(r, j) += dy[j];
    });
}

Var rows(Var a, std::vector<std::int64_t> row_indices) {
    Graph& g = graph_of(a, "rows");
    const Tensor& ta = g.value(a);
    require(ta.rank() == 2, "rows: expects a matrix");
    std::int64_t n = ta.cols();
    std::int64_t k = static_cast<std::int64_t>(row_indices.size());
    Tensor out = Tensor::zeros({k, n});
    for (std::int64_t i = 0; i < k; ++i) {
        require(row_indices[static_cast<std::size_t>(i)] >= 0 && row_indices[static_cast<std::size_t>(i)] < ta.rows(),
                "rows: index out of range");
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = ta.at(row_indices[static_cast<std::size_t>(i)], j);
    }
    auto ia = Graph::id_of(a);
    return g.make("rows", std::move(out), {a},
                  [ia, idx = std::move(row_indices), n](Graph& gg, std::int32_t self) {
                      const Tensor& dy = gg.node(self).grad;
                      Tensor& da = gg.grad_buf(ia);
                      for (std::size_t i = 0; i < idx.size(); ++i)
                          for (std::int64_t j = 0; j < n; ++j)
                              da.at(idx[i], j) += dy.at(static_cast<std::int64_t>(i), j);
                  });
}

Var pack(std::span<const Var> scalars) {
    require(!scalars.empty(), "pack: needs at least one element");
    Graph& g = graph_of(scalars[0], "pack");
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(scalars.size())});
    std::vector<std::int32_t> ids;
    ids.reserve(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        const Tensor& t = g.value(scalars[i]);
        require(t.numel() == 1, "pack: inputs must be scalars");
        out[static_cast<std::int64_t>(i)] = t[0];
        ids.push_back(Graph::id_of(scalars[i]));
    }
    return g.make("pack", std::move(out), scalars, [ids = std::move(ids)](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!gg.node(ids[i]).needs_grad) continue;
            gg.grad_buf(ids[i])[0] += dy[static_cast<std::int64_t>(i)];
        }
    });
}

Var stack_rows(std::span<const Var> row_vectors) {
    require(!row_vectors.empty(), "stack_rows: needs at least one row");
    Graph& g = graph_of(row_vectors[0], "stack_rows");
    std::int64_t n = g.value(row_vectors[0]).numel();
    std::int64_t k = static_cast<std::int64_t>(row_vectors.size());
    Tensor out = Tensor::zeros({k, n});
    std::vector<std::int32_t> ids;
    ids.reserve(row_vectors.size());
    for (std::int64_t i = 0; i < k; ++i) {
        const Tensor& t = g.value(row_vectors[static_cast<std::size_t>(i)]);
        require(t.rank() == 1 && t.numel() == n, "stack_rows: rows must be equal-length vectors");
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = t[j];
        ids.push_back(Graph::id_of(row_vectors[static_cast<std::size_t>(i)]));
    }
    return g.make("stack_rows", std::move(out), row_vectors,
                  [ids = std::move(ids), n](Graph& gg, std::int32_t self) {
                      const Tensor& dy = gg.node(self).grad;
                      for (std::size_t i = 0; i < ids.size(); ++i) {
                          if (!gg.node(ids[i]).needs_grad) continue;
                          Tensor& da = gg.grad_buf(ids[i]);
                          for (std::int64_t j = 0; j < n; ++j) da[j] += dy.at(static_cast<std::int64_t>(i), j);
                      }
                  });
}

Var tile_rows(Var v, std::int64_t n) {
    Graph& g = graph_of(v, "tile_rows");
    const Tensor& tv = g.value(v);
    require(tv.rank() == 1 && n >= 1, "tile_rows: expects a vector and n >= 1");
    std::int64_t d = tv.numel();
    Tensor out = Tensor::zeros({n, d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out.at(i, j) = tv[j];
    auto iv = Graph::id_of(v);
    return g.make("tile_rows", std::move(out), {v}, [iv, n, d](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        Tensor& dv = gg.grad_buf(iv);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) dv[j] += dy.at(i, j);
    });
}

Var hconcat(Var a, Var b) {
    Graph& g = graph_of(a, "hconcat");
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.rows() == tb.rows(), "hconcat: row mismatch");
    std::int64_t m = ta.rows(), p = ta.cols(), q = tb.cols();
    Tensor out = Tensor::zeros({m, p + q});
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < p; ++j) out.at(i, j) = ta.at(i, j);
        for (std::int64_t j = 0; j < q; ++j) out.at(i, p + j) = tb.at(i, j);
    }
    auto ia = Graph::id_of(a), ib = Graph::id_of(b);
    return g.make("hconcat", std::move(out), {a, b}, [ia, ib, m, p, q](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        if (gg.node(ia).needs_grad) {
            Tensor& da = gg.grad_buf(ia);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < p; ++j) da.at(i, j) += dy.at(i, j);
        }
        if (gg.node(ib).needs_grad) {
            Tensor& db = gg.grad_buf(ib);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < q; ++j) db.at(i, j) += dy.at(i, p + j);
        }
    });
}

Var reshape(Var a, std::vector<std::int64_t> shape) {
    Graph& g = graph_of(a, "reshape");
    const Tensor& ta = g.value(a);
    Tensor out(std::move(shape), ta.data());
    require(out.numel() == ta.numel(), "reshape: element count mismatch");
    auto ia = Graph::id_of(a);
    return g.make("reshape", std::move(out), {a}, [ia](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        Tensor& da = gg.grad_buf(ia);
        for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
    });
}

Var add_colvec(Var a, Var v) {
    Graph& g = graph_of(a, "add_colvec");
    const Tensor& ta = g.value(a);
    const Tensor& tv = g.value(v);
    require(ta.rank() == 2 && tv.rank() == 1 && tv.numel() == ta.rows(), "add_colvec: shape mismatch");
    std::int64_t m = ta.rows(), n = ta.cols();
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = ta.at(i, j) + tv[i];
    auto ia = Graph::id_of(a), iv = Graph::id_of(v);
    return g.make("add_colvec", std::move(out), {a, v}, [ia, iv, m, n](Graph& gg, std::int32_t self) {
        const Tensor& dy = gg.node(self).grad;
        if (gg.node(ia).needs_grad) {
            Tensor& da = gg.grad_buf(ia);
            for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
        }
        if (gg.node(iv).needs_grad) {
            Tensor& dv = gg.grad_buf(iv);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) dv[i] += dy.at(i, j);
        }
    });
}

Var bce_with_logit(Var logit_scalar, double target) {
    if (target == 0.0) return softplus(logit_scalar);
    return sub(softplus(logit_scalar), scale(logit_scalar, target));
}

}  // namespace spanforge::numcore
