// Reverse-mode differentiable tensors. A Tensor is a shared handle to a flat
// value buffer plus an optional gradient buffer of the same length. A Graph
// is a tape of backward closures recorded while it is active; destroying the
// graph releases every intermediate of the step.
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "common/errors.hpp"

namespace dfba {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> v;
    std::vector<T> g; // empty until a gradient is accumulated
    bool requires_grad = false;
};

template <typename T>
class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData<T>>()) {}

    Tensor(Shape shape, std::vector<T> values) : d_(std::make_shared<TensorData<T>>()) {
        if (numel_of(shape) != static_cast<int64_t>(values.size())) {
            throw ShapeError("tensor: " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        }
        for (int64_t dim : shape) {
            if (dim <= 0) throw ShapeError("tensor: non-positive extent in " + shape_str(shape));
        }
        d_->shape = std::move(shape);
        d_->v = std::move(values);
    }

    static Tensor zeros(Shape shape) {
        return Tensor(std::move(shape), std::vector<T>(0), true);
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.values().begin(), t.values().end(), value);
        return t;
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return d_->shape; }
    int64_t numel() const { return static_cast<int64_t>(d_->v.size()); }
    int64_t dim(size_t i) const { return d_->shape[i]; }
    size_t rank() const { return d_->shape.size(); }

    std::vector<T>& values() { return d_->v; }
    const std::vector<T>& values() const { return d_->v; }

    bool has_grad() const { return !d_->g.empty(); }
    std::vector<T>& grad() {
        if (!has_grad()) throw Error("tensor: gradient not populated");
        return d_->g;
    }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw Error("tensor: gradient not populated");
        return d_->g;
    }

    void ensure_grad() {
        if (d_->g.empty()) d_->g.assign(d_->v.size(), T(0));
    }
    void zero_grad() { d_->g.assign(d_->v.size(), T(0)); }
    void drop_grad() {
        d_->g.clear();
        d_->g.shrink_to_fit();
    }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        d_->requires_grad = on;
        return *this;
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
        return d_->v[0];
    }

    Tensor clone() const {
        Tensor t(d_->shape, d_->v);
        return t;
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }
    const std::shared_ptr<TensorData<T>>& data() const { return d_; }

private:
    Tensor(Shape shape, std::vector<T> values, bool /*sized*/) : d_(std::make_shared<TensorData<T>>()) {
        d_->shape = std::move(shape);
        values.resize(static_cast<size_t>(numel_of(d_->shape)), T(0));
        d_->v = std::move(values);
    }

    std::shared_ptr<TensorData<T>> d_;
};

// Tape of executed ops. Constructing a Graph makes it the active recording
// target for the current thread; destruction restores the previous one, so
// graphs nest. One fresh graph per training phase, no cross-step reuse.
template <typename T>
class Graph {
public:
    Graph() : prev_(active_slot()) { active_slot() = this; }

    ~Graph() { active_slot() = prev_; }

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    static Graph* active() { return active_slot(); }

    static Graph* exchange_active(Graph* g) {
        Graph* prev = active_slot();
        active_slot() = g;
        return prev;
    }

    void record(const char* op, std::shared_ptr<TensorData<T>> out, std::function<void()> backward_fn) {
        nodes_.push_back(Node{op, std::move(out), std::move(backward_fn)});
    }

    size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse execution
    // order. Nodes whose output never received a gradient are dead branches
    // and are skipped. Gradient accumulation is additive throughout.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        }
        const_cast<Tensor<T>&>(loss).ensure_grad();
        const_cast<Tensor<T>&>(loss).grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->out->g.empty()) it->fn();
        }
    }

private:
    struct Node {
        const char* op;
        std::shared_ptr<TensorData<T>> out;
        std::function<void()> fn;
    };

    static Graph*& active_slot() {
        thread_local Graph* g = nullptr;
        return g;
    }

    std::vector<Node> nodes_;
    Graph* prev_;
};

// Suppresses recording within a scope (oracle inference, metric evaluation).
template <typename T>
class NoGradScope {
public:
    NoGradScope() : saved_(Graph<T>::exchange_active(nullptr)) {}
    ~NoGradScope() { Graph<T>::exchange_active(saved_); }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Graph<T>* saved_;
};

} // namespace dfba
