#include "sghf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "sghf/kernels.hpp"

namespace sghf {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

std::atomic<uint64_t> g_next_node_id{1};
thread_local bool t_grad_enabled = true;

void validate_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor: empty shape");
    for (int64_t d : s) {
        if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(s));
    }
}

std::shared_ptr<detail::Node> make_node(Shape shape) {
    validate_shape(shape);
    auto n = std::make_shared<detail::Node>();
    const int64_t numel = shape_numel(shape);
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(numel), 0.0);
    n->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

// Builds the output node and wires the tape edge when recording is on and
// at least one operand participates in the graph.
Tensor make_op(Shape shape, const std::vector<Tensor>& parents,
               std::function<void(detail::Node&)> fn) {
    auto n = make_node(std::move(shape));
    bool rg = false;
    if (t_grad_enabled) {
        for (const auto& p : parents) rg = rg || p.requires_grad();
    }
    if (rg) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(fn);
    }
    return Tensor(std::move(n));
}

void accumulate(detail::Node& n, const double* g, int64_t count) {
    n.ensure_grad();
    for (int64_t i = 0; i < count; ++i) n.grad[static_cast<size_t>(i)] += g[i];
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : node_(make_node({1})) {}

Tensor::Tensor(Shape shape) : node_(make_node(std::move(shape))) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : node_(make_node(std::move(shape))) {
    if (static_cast<int64_t>(data.size()) != node_->numel()) {
        throw ShapeError("tensor: data length does not match shape " + shape_str(node_->shape));
    }
    node_->data = std::move(data);
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.vec().begin(), t.vec().end(), v);
    return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::from_vector(const std::vector<double>& v) {
    return Tensor({static_cast<int64_t>(v.size())}, v);
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    if (idx.size() != rank()) throw ShapeError("at: index rank mismatch");
    int64_t off = 0;
    size_t i = 0;
    for (int64_t v : idx) {
        if (v < 0 || v >= node_->shape[i]) throw ShapeError("at: index out of range");
        off = off * node_->shape[i] + v;
        ++i;
    }
    return node_->data[static_cast<size_t>(off)];
}

double& Tensor::at_ref(std::initializer_list<int64_t> idx) {
    if (idx.size() != rank()) throw ShapeError("at: index rank mismatch");
    int64_t off = 0;
    size_t i = 0;
    for (int64_t v : idx) {
        if (v < 0 || v >= node_->shape[i]) throw ShapeError("at: index out of range");
        off = off * node_->shape[i] + v;
        ++i;
    }
    return node_->data[static_cast<size_t>(off)];
}

double Tensor::value() const {
    if (numel() != 1) throw ShapeError("value: tensor is not scalar, shape " + shape_str(shape()));
    return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) throw ShapeError("grad: no gradient present; run backward first");
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

void Tensor::backward() {
    if (numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) {
        node_->ensure_grad();
        return;
    }
    // Reachable grad-carrying nodes.
    std::vector<detail::Node*> stack{node_.get()};
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> nodes;
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        nodes.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad) stack.push_back(p.get());
        }
    }
    // Reset first so backward is a pure function of the graph values.
    for (detail::Node* n : nodes) n->grad.assign(n->data.size(), 0.0);
    std::vector<detail::Node*> order;
    order.reserve(nodes.size());
    for (detail::Node* n : nodes) {
        if (n->backward_fn) order.push_back(n);
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });
    node_->grad[0] = 1.0;
    for (detail::Node* n : order) n->backward_fn(*n);
}

Tensor Tensor::detach() const {
    Tensor t(node_->shape);
    t.vec() = node_->data;
    return t;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

// ----------------------------------------------------------- elementwise

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const int64_t n = a.numel();
    Tensor out = make_op(a.shape(), {a, b}, [n](detail::Node& self) {
        for (int i = 0; i < 2; ++i) {
            detail::Node& p = *self.parents[static_cast<size_t>(i)];
            if (p.requires_grad) accumulate(p, self.grad.data(), n);
        }
    });
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const int64_t n = a.numel();
    Tensor out = make_op(a.shape(), {a, b}, [n](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        detail::Node& B = *self.parents[1];
        if (A.requires_grad) accumulate(A, self.grad.data(), n);
        if (B.requires_grad) {
            B.ensure_grad();
            for (int64_t i = 0; i < n; ++i) B.grad[static_cast<size_t>(i)] -= self.grad[static_cast<size_t>(i)];
        }
    });
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const int64_t n = a.numel();
    Tensor out = make_op(a.shape(), {a, b}, [n](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        detail::Node& B = *self.parents[1];
        if (A.requires_grad) {
            A.ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                A.grad[static_cast<size_t>(i)] +=
                    self.grad[static_cast<size_t>(i)] * B.data[static_cast<size_t>(i)];
            }
        }
        if (B.requires_grad) {
            B.ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                B.grad[static_cast<size_t>(i)] +=
                    self.grad[static_cast<size_t>(i)] * A.data[static_cast<size_t>(i)];
            }
        }
    });
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double s) {
    const int64_t n = a.numel();
    Tensor out = make_op(a.shape(), {a}, [n](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        if (A.requires_grad) accumulate(A, self.grad.data(), n);
    });
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + s;
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    const int64_t n = a.numel();
    Tensor out = make_op(a.shape(), {a}, [n, s](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        if (A.requires_grad) {
            A.ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                A.grad[static_cast<size_t>(i)] += s * self.grad[static_cast<size_t>(i)];
            }
        }
    });
    for (int64_t i = 0; i < n; ++i) out.data()[i] = s * a.data()[i];
    return out;
}

// --------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: operands must be rank-2");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_op({m, n}, {a, b}, [m, k, n](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        detail::Node& B = *self.parents[1];
        if (A.requires_grad) {
            A.ensure_grad();
            kernels::matmul_grad_a(self.grad.data(), B.data.data(), A.grad.data(), m, k, n);
        }
        if (B.requires_grad) {
            B.ensure_grad();
            kernels::matmul_grad_b(self.grad.data(), A.data.data(), B.grad.data(), m, k, n);
        }
    });
    kernels::matmul(a.data(), b.data(), out.data(), m, k, n);
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: rank-2 only");
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_op({n, m}, {a}, [m, n](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        if (!A.requires_grad) return;
        A.ensure_grad();
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                A.grad[static_cast<size_t>(i * n + j)] += self.grad[static_cast<size_t>(j * m + i)];
            }
        }
    });
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
    }
    return out;
}

Tensor conv(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    if (w.rank() != 4 && w.rank() != 5) {
        throw ShapeError("conv: kernel must be [cout,cin,k,k] or [cout,cin,k,k,k]");
    }
    const int sr = static_cast<int>(w.rank()) - 2;  // spatial rank
    const bool batched = x.rank() == static_cast<size_t>(sr) + 2;
    if (!batched && x.rank() != static_cast<size_t>(sr) + 1) {
        throw ShapeError("conv: rank mismatch between input " + shape_str(x.shape()) +
                         " and kernel " + shape_str(w.shape()));
    }
    kernels::ConvDims d;
    d.batch = batched ? x.dim(0) : 1;
    d.cin = batched ? x.dim(1) : x.dim(0);
    d.cout = w.dim(0);
    if (d.cin != w.dim(1)) throw ShapeError("conv: input channels do not match kernel");
    const size_t xoff = batched ? 2 : 1;
    for (int i = 0; i < sr; ++i) {
        const int slot = 3 - sr + i;  // 3-D uses dims 0..2, 2-D uses dims 1..2
        d.in[slot] = x.dim(xoff + static_cast<size_t>(i));
        d.k[slot] = w.dim(2 + static_cast<size_t>(i));
        d.stride[slot] = stride;
        d.pad[slot] = pad;
    }
    d.compute_out();

    Shape out_shape;
    if (batched) out_shape.push_back(d.batch);
    out_shape.push_back(d.cout);
    for (int i = 0; i < sr; ++i) out_shape.push_back(d.out[3 - sr + i]);

    Tensor out = make_op(out_shape, {x, w}, [d](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        detail::Node& W = *self.parents[1];
        if (X.requires_grad) {
            X.ensure_grad();
            kernels::conv_input_grad(self.grad.data(), W.data.data(), X.grad.data(), d);
        }
        if (W.requires_grad) {
            W.ensure_grad();
            kernels::conv_kernel_grad(self.grad.data(), X.data.data(), W.grad.data(), d);
        }
    });
    kernels::conv_forward(x.data(), w.data(), out.data(), d);
    return out;
}

// ------------------------------------------------------------ activations

Tensor relu(const Tensor& x) {
    const int64_t n = x.numel();
    Tensor out = make_op(x.shape(), {x}, [n](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        X.ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            if (X.data[static_cast<size_t>(i)] > 0.0) {
                X.grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
            }
        }
    });
    for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return out;
}

Tensor sigmoid(const Tensor& x) {
    const int64_t n = x.numel();
    Tensor out = make_op(x.shape(), {x}, [n](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        X.ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            const double y = self.data[static_cast<size_t>(i)];
            X.grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)] * y * (1.0 - y);
        }
    });
    for (int64_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        out.data()[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                 : std::exp(v) / (1.0 + std::exp(v));
    }
    return out;
}

namespace {
struct AxisSplit {
    int64_t outer, n, inner;
};
AxisSplit split_axis(const Shape& s, int64_t axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
        throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(s));
    }
    AxisSplit r{1, s[static_cast<size_t>(axis)], 1};
    for (int64_t i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}
}  // namespace

Tensor softmax(const Tensor& x, int64_t axis) {
    const AxisSplit sp = split_axis(x.shape(), axis, "softmax");
    Tensor out = make_op(x.shape(), {x}, [sp](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        X.ensure_grad();
        for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t in = 0; in < sp.inner; ++in) {
                const int64_t base = o * sp.n * sp.inner + in;
                double dot = 0.0;
                for (int64_t j = 0; j < sp.n; ++j) {
                    const size_t idx = static_cast<size_t>(base + j * sp.inner);
                    dot += self.grad[idx] * self.data[idx];
                }
                for (int64_t j = 0; j < sp.n; ++j) {
                    const size_t idx = static_cast<size_t>(base + j * sp.inner);
                    X.grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            const int64_t base = o * sp.n * sp.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < sp.n; ++j) mx = std::max(mx, x.data()[base + j * sp.inner]);
            double z = 0.0;
            for (int64_t j = 0; j < sp.n; ++j) {
                const double e = std::exp(x.data()[base + j * sp.inner] - mx);
                out.data()[base + j * sp.inner] = e;
                z += e;
            }
            for (int64_t j = 0; j < sp.n; ++j) out.data()[base + j * sp.inner] /= z;
        }
    }
    return out;
}

// ------------------------------------------------------- shape transforms

Tensor concat(const Tensor& a, const Tensor& b, int64_t axis) {
    if (a.rank() != b.rank()) throw ShapeError("concat: rank mismatch");
    const int64_t r = static_cast<int64_t>(a.rank());
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    for (int64_t i = 0; i < r; ++i) {
        if (i != axis && a.dim(static_cast<size_t>(i)) != b.dim(static_cast<size_t>(i))) {
            throw ShapeError("concat: non-axis dims differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
        }
    }
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] += b.dim(static_cast<size_t>(axis));

    const AxisSplit sa = split_axis(a.shape(), axis, "concat");
    const int64_t na = sa.n, nb = b.dim(static_cast<size_t>(axis));
    const int64_t inner = sa.inner, outer = sa.outer;

    Tensor out = make_op(out_shape, {a, b}, [outer, na, nb, inner](detail::Node& self) {
        detail::Node& A = *self.parents[0];
        detail::Node& B = *self.parents[1];
        const int64_t ablk = na * inner, bblk = nb * inner, oblk = (na + nb) * inner;
        if (A.requires_grad) {
            A.ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t i = 0; i < ablk; ++i) {
                    A.grad[static_cast<size_t>(o * ablk + i)] +=
                        self.grad[static_cast<size_t>(o * oblk + i)];
                }
            }
        }
        if (B.requires_grad) {
            B.ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t i = 0; i < bblk; ++i) {
                    B.grad[static_cast<size_t>(o * bblk + i)] +=
                        self.grad[static_cast<size_t>(o * oblk + ablk + i)];
                }
            }
        }
    });
    const int64_t ablk = na * inner, bblk = nb * inner, oblk = (na + nb) * inner;
    for (int64_t o = 0; o < outer; ++o) {
        std::copy_n(a.data() + o * ablk, ablk, out.data() + o * oblk);
        std::copy_n(b.data() + o * bblk, bblk, out.data() + o * oblk + ablk);
    }
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("stack_rows: empty input");
    for (const auto& x : xs) {
        if (x.shape() != xs[0].shape()) throw ShapeError("stack_rows: shapes differ");
    }
    const int64_t rows = static_cast<int64_t>(xs.size());
    const int64_t rowlen = xs[0].numel();
    Shape out_shape;
    out_shape.push_back(rows);
    for (int64_t d : xs[0].shape()) out_shape.push_back(d);

    Tensor out = make_op(out_shape, xs, [rowlen](detail::Node& self) {
        for (size_t r = 0; r < self.parents.size(); ++r) {
            detail::Node& P = *self.parents[r];
            if (!P.requires_grad) continue;
            P.ensure_grad();
            const double* g = self.grad.data() + static_cast<int64_t>(r) * rowlen;
            for (int64_t i = 0; i < rowlen; ++i) P.grad[static_cast<size_t>(i)] += g[i];
        }
    });
    for (int64_t r = 0; r < rows; ++r) {
        std::copy_n(xs[static_cast<size_t>(r)].data(), rowlen, out.data() + r * rowlen);
    }
    return out;
}

Tensor slice_row(const Tensor& x, int64_t i) {
    if (x.rank() < 1) throw ShapeError("slice_row: rank must be >= 1");
    if (i < 0 || i >= x.dim(0)) throw ShapeError("slice_row: index out of range");
    Shape out_shape(x.shape().begin() + 1, x.shape().end());
    if (out_shape.empty()) out_shape = {1};
    const int64_t rowlen = shape_numel(out_shape);
    Tensor out = make_op(out_shape, {x}, [i, rowlen](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        X.ensure_grad();
        for (int64_t j = 0; j < rowlen; ++j) {
            X.grad[static_cast<size_t>(i * rowlen + j)] += self.grad[static_cast<size_t>(j)];
        }
    });
    std::copy_n(x.data() + i * rowlen, rowlen, out.data());
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& idx) {
    if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank-2");
    const int64_t rows = table.dim(0), d = table.dim(1);
    for (int64_t i : idx) {
        if (i < 0 || i >= rows) throw ShapeError("gather_rows: index out of range");
    }
    const int64_t n = static_cast<int64_t>(idx.size());
    Tensor out = make_op({n, d}, {table}, [idx, d](detail::Node& self) {
        detail::Node& T = *self.parents[0];
        if (!T.requires_grad) return;
        T.ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r) {
            const double* g = self.grad.data() + static_cast<int64_t>(r) * d;
            double* dst = T.grad.data() + idx[r] * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
    for (int64_t r = 0; r < n; ++r) {
        std::copy_n(table.data() + idx[static_cast<size_t>(r)] * d, d, out.data() + r * d);
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
    }
    const int64_t n = x.numel();
    Tensor out = make_op(std::move(shape), {x}, [n](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        if (X.requires_grad) accumulate(X, self.grad.data(), n);
    });
    std::copy_n(x.data(), n, out.data());
    return out;
}

// -------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
    const int64_t n = x.numel();
    Tensor out = make_op({1}, {x}, [n](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        X.ensure_grad();
        const double g = self.grad[0];
        for (int64_t i = 0; i < n; ++i) X.grad[static_cast<size_t>(i)] += g;
    });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += x.data()[i];
    out.data()[0] = acc;
    return out;
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() < 3) throw ShapeError("global_avg_pool: need [batch, channel, spatial...]");
    const int64_t b = x.dim(0), c = x.dim(1);
    int64_t spatial = 1;
    for (size_t i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
    Tensor out = make_op({b, c}, {x}, [b, c, spatial](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        X.ensure_grad();
        const double inv = 1.0 / static_cast<double>(spatial);
        for (int64_t i = 0; i < b * c; ++i) {
            const double g = self.grad[static_cast<size_t>(i)] * inv;
            double* dst = X.grad.data() + i * spatial;
            for (int64_t s = 0; s < spatial; ++s) dst[s] += g;
        }
    });
    const double inv = 1.0 / static_cast<double>(spatial);
    for (int64_t i = 0; i < b * c; ++i) {
        double acc = 0.0;
        const double* src = x.data() + i * spatial;
        for (int64_t s = 0; s < spatial; ++s) acc += src[s];
        out.data()[i] = acc * inv;
    }
    return out;
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
    if (x.rank() < 2) throw ShapeError("bias_add: input must be at least rank-2");
    if (b.rank() != 1 || b.dim(0) != x.dim(1)) {
        throw ShapeError("bias_add: bias " + shape_str(b.shape()) + " does not match axis 1 of " +
                         shape_str(x.shape()));
    }
    const int64_t batch = x.dim(0), c = x.dim(1);
    int64_t inner = 1;
    for (size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
    Tensor out = make_op(x.shape(), {x, b}, [batch, c, inner](detail::Node& self) {
        detail::Node& X = *self.parents[0];
        detail::Node& B = *self.parents[1];
        if (X.requires_grad) accumulate(X, self.grad.data(), batch * c * inner);
        if (B.requires_grad) {
            B.ensure_grad();
            for (int64_t n = 0; n < batch; ++n) {
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* g = self.grad.data() + (n * c + ch) * inner;
                    double acc = 0.0;
                    for (int64_t i = 0; i < inner; ++i) acc += g[i];
                    B.grad[static_cast<size_t>(ch)] += acc;
                }
            }
        }
    });
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const double bv = b.data()[ch];
            const double* src = x.data() + (n * c + ch) * inner;
            double* dst = out.data() + (n * c + ch) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] = src[i] + bv;
        }
    }
    return out;
}

// ------------------------------------------------------------ loss kernels

namespace {
inline double clamp_prob(double p) {
    if (std::isnan(p)) return p;  // keep the abort-on-NaN path alive
    return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}
inline bool prob_in_bounds(double p) { return p >= kProbClamp && p <= 1.0 - kProbClamp; }
}  // namespace

Tensor bce_with_probs(const Tensor& p, const std::vector<double>& y) {
    const int64_t n = p.numel();
    if (n != static_cast<int64_t>(y.size())) throw ShapeError("bce: length mismatch");
    for (double v : y) {
        if (v != 0.0 && v != 1.0) throw ShapeError("bce: labels must be 0 or 1");
    }
    Tensor out = make_op({1}, {p}, [n, y](detail::Node& self) {
        detail::Node& P = *self.parents[0];
        if (!P.requires_grad) return;
        P.ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double raw = P.data[static_cast<size_t>(i)];
            if (!prob_in_bounds(raw)) continue;  // clamped region, zero slope
            const double yi = y[static_cast<size_t>(i)];
            P.grad[static_cast<size_t>(i)] += g * (-(yi / raw) + (1.0 - yi) / (1.0 - raw));
        }
    });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double pi = clamp_prob(p.data()[i]);
        acc += y[static_cast<size_t>(i)] * std::log(pi) +
               (1.0 - y[static_cast<size_t>(i)]) * std::log(1.0 - pi);
    }
    out.data()[0] = -acc / static_cast<double>(n);
    return out;
}

Tensor mean_log(const Tensor& p) {
    const int64_t n = p.numel();
    Tensor out = make_op({1}, {p}, [n](detail::Node& self) {
        detail::Node& P = *self.parents[0];
        if (!P.requires_grad) return;
        P.ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double raw = P.data[static_cast<size_t>(i)];
            if (!prob_in_bounds(raw)) continue;
            P.grad[static_cast<size_t>(i)] += g / raw;
        }
    });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += std::log(clamp_prob(p.data()[i]));
    out.data()[0] = acc / static_cast<double>(n);
    return out;
}

Tensor mean_log1m(const Tensor& p) {
    const int64_t n = p.numel();
    Tensor out = make_op({1}, {p}, [n](detail::Node& self) {
        detail::Node& P = *self.parents[0];
        if (!P.requires_grad) return;
        P.ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double raw = P.data[static_cast<size_t>(i)];
            if (!prob_in_bounds(raw)) continue;
            P.grad[static_cast<size_t>(i)] -= g / (1.0 - raw);
        }
    });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += std::log(1.0 - clamp_prob(p.data()[i]));
    out.data()[0] = acc / static_cast<double>(n);
    return out;
}

// -------------------------------------------------------------- batch norm

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
    if (x.rank() < 2) throw ShapeError("batch_norm: input must be [batch, channel, ...]");
    const int64_t b = x.dim(0), c = x.dim(1);
    int64_t spatial = 1;
    for (size_t i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
        running_var.numel() != c) {
        throw ShapeError("batch_norm: parameter length does not match channel count");
    }
    if (training && b < 2) throw ShapeError("batch_norm: training mode requires batch >= 2");

    const int64_t per_channel = b * spatial;
    std::vector<double> use_mean(static_cast<size_t>(c), 0.0);
    std::vector<double> use_var(static_cast<size_t>(c), 0.0);

    if (training) {
        for (int64_t ch = 0; ch < c; ++ch) {
            double m = 0.0;
            for (int64_t n = 0; n < b; ++n) {
                const double* src = x.data() + (n * c + ch) * spatial;
                for (int64_t s = 0; s < spatial; ++s) m += src[s];
            }
            m /= static_cast<double>(per_channel);
            double v = 0.0;
            for (int64_t n = 0; n < b; ++n) {
                const double* src = x.data() + (n * c + ch) * spatial;
                for (int64_t s = 0; s < spatial; ++s) {
                    const double d = src[s] - m;
                    v += d * d;
                }
            }
            v /= static_cast<double>(per_channel);
            use_mean[static_cast<size_t>(ch)] = m;
            use_var[static_cast<size_t>(ch)] = v;
            running_mean.data()[ch] = (1.0 - momentum) * running_mean.data()[ch] + momentum * m;
            running_var.data()[ch] = (1.0 - momentum) * running_var.data()[ch] + momentum * v;
        }
    } else {
        for (int64_t ch = 0; ch < c; ++ch) {
            use_mean[static_cast<size_t>(ch)] = running_mean.data()[ch];
            use_var[static_cast<size_t>(ch)] = running_var.data()[ch];
        }
    }

    Tensor out = make_op(
        x.shape(), {x, gamma, beta},
        [b, c, spatial, per_channel, eps, training, use_mean, use_var](detail::Node& self) {
            detail::Node& X = *self.parents[0];
            detail::Node& G = *self.parents[1];
            detail::Node& B = *self.parents[2];
            if (X.requires_grad) X.ensure_grad();
            if (G.requires_grad) G.ensure_grad();
            if (B.requires_grad) B.ensure_grad();
            for (int64_t ch = 0; ch < c; ++ch) {
                const double m = use_mean[static_cast<size_t>(ch)];
                const double inv = 1.0 / std::sqrt(use_var[static_cast<size_t>(ch)] + eps);
                const double gam = G.data[static_cast<size_t>(ch)];
                double sum_g = 0.0, sum_g_xhat = 0.0, sum_xc = 0.0;
                for (int64_t n = 0; n < b; ++n) {
                    const int64_t base = (n * c + ch) * spatial;
                    for (int64_t s = 0; s < spatial; ++s) {
                        const double g = self.grad[static_cast<size_t>(base + s)];
                        const double xc = X.data[static_cast<size_t>(base + s)] - m;
                        sum_g += g;
                        sum_g_xhat += g * xc * inv;
                        sum_xc += xc;
                    }
                }
                if (G.requires_grad) G.grad[static_cast<size_t>(ch)] += sum_g_xhat;
                if (B.requires_grad) B.grad[static_cast<size_t>(ch)] += sum_g;
                if (!X.requires_grad) continue;
                if (!training) {
                    const double k = gam * inv;
                    for (int64_t n = 0; n < b; ++n) {
                        const int64_t base = (n * c + ch) * spatial;
                        for (int64_t s = 0; s < spatial; ++s) {
                            X.grad[static_cast<size_t>(base + s)] +=
                                k * self.grad[static_cast<size_t>(base + s)];
                        }
                    }
                    continue;
                }
                const double inv_n = 1.0 / static_cast<double>(per_channel);
                // sum_g_xhat already carries one factor of inv
                const double dvar = sum_g_xhat * gam * (-0.5) * inv * inv;
                const double dmu = -gam * inv * sum_g + dvar * (-2.0) * inv_n * sum_xc;
                for (int64_t n = 0; n < b; ++n) {
                    const int64_t base = (n * c + ch) * spatial;
                    for (int64_t s = 0; s < spatial; ++s) {
                        const double g = self.grad[static_cast<size_t>(base + s)];
                        const double xc = X.data[static_cast<size_t>(base + s)] - m;
                        X.grad[static_cast<size_t>(base + s)] +=
                            gam * inv * g + dvar * 2.0 * xc * inv_n + dmu * inv_n;
                    }
                }
            }
        });
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const double m = use_mean[static_cast<size_t>(ch)];
            const double inv = 1.0 / std::sqrt(use_var[static_cast<size_t>(ch)] + eps);
            const double gam = gamma.data()[ch], bet = beta.data()[ch];
            const double* src = x.data() + (n * c + ch) * spatial;
            double* dst = out.data() + (n * c + ch) * spatial;
            for (int64_t s = 0; s < spatial; ++s) dst[s] = gam * (src[s] - m) * inv + bet;
        }
    }
    return out;
}

}  // namespace sghf
