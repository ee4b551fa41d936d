#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "sghf/errors.hpp"

namespace sghf {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One entry of the gradient tape. Nodes carry a strictly increasing
// creation id; backward replays closures in decreasing id order, which is
// a valid reverse topological order because every operand is created
// before its consumer.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated on demand, same length as data
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Dense n-dimensional double-precision tensor with reverse-mode automatic
// differentiation over a dynamically recorded graph.
//
// Tensors are value-semantic handles to shared storage. A graph and all
// tensors reachable from it belong to one logical thread; parallel work
// (independent folds, seeds) builds independent graphs.
class Tensor {
public:
    Tensor();  // empty scalar placeholder, shape {1}, value 0
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    static Tensor from_vector(const std::vector<double>& v);  // rank-1

    const Shape& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    int64_t numel() const { return node_->numel(); }

    double* data() { return node_->data.data(); }
    const double* data() const { return node_->data.data(); }
    std::vector<double>& vec() { return node_->data; }
    const std::vector<double>& vec() const { return node_->data; }

    double at(std::initializer_list<int64_t> idx) const;
    double& at_ref(std::initializer_list<int64_t> idx);
    double value() const;  // scalar tensors only

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool rg);

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    // Reverse pass from a scalar. Grads of every node visited are reset
    // first, so repeated calls on the same graph are idempotent.
    void backward();

    // Same values, detached from the tape.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Tape recording switch for the current thread. Ops built while recording
// is disabled are detached (no parents, no closure).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// ------------------------------------------------------------------- ops

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] * [k x n]
Tensor transpose(const Tensor& a);                // rank-2

// Cross-correlation (no kernel flip). w: [cout, cin, k...] with 2 or 3
// spatial dims; x either [cin, s...] or batched [batch, cin, s...].
Tensor conv(const Tensor& x, const Tensor& w, int64_t stride = 1, int64_t pad = 0);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int64_t axis);

Tensor concat(const Tensor& a, const Tensor& b, int64_t axis);

// Stack equal-shape tensors along a new leading axis.
Tensor stack_rows(const std::vector<Tensor>& xs);
// Select index i along axis 0, dropping that axis.
Tensor slice_row(const Tensor& x, int64_t i);
// Row gather from a [rows x d] table; duplicate indices accumulate grads.
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& idx);

Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar

// x: [b x c x spatial...] -> [b x c], mean over the spatial dims.
Tensor global_avg_pool(const Tensor& x);

// Adds b along axis 1 of x ([batch x c ...] + [c]); the only broadcast.
Tensor bias_add(const Tensor& x, const Tensor& b);

// Probabilities are clamped to [kProbClamp, 1-kProbClamp] inside the
// log-likelihood ops.
inline constexpr double kProbClamp = 1e-7;

// -(1/N) sum_i [y_i log p_i + (1-y_i) log(1-p_i)], y in {0,1}.
Tensor bce_with_probs(const Tensor& p, const std::vector<double>& y);
Tensor mean_log(const Tensor& p);     // (1/N) sum log p~
Tensor mean_log1m(const Tensor& p);   // (1/N) sum log(1 - p~)

// Per-channel batch standardization over axis 1 of [B x C x ...].
// Training mode uses batch statistics (biased variance) and updates the
// running buffers in place; eval mode consumes the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

}  // namespace sghf
