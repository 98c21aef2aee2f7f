#include "dagr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dagr {

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ",";
        out << shape[i];
    }
    out << "]";
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t RngState::next_u64() {
    std::uint64_t v = splitmix64(seed ^ splitmix64(counter));
    ++counter;
    return v;
}

double RngState::next_uniform() {
    // 53 high bits -> double in [0,1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::next_normal() {
    const double u1 = 1.0 - next_uniform();  // (0,1], keeps log finite
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

namespace detail {

void Node::ensure_grad() {
    if (requires_grad && grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

}  // namespace detail

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->values.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    node->ensure_grad();
    return wrap(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw Error("tensor: shape " + shape_str(shape) + " does not match " +
                    std::to_string(data.size()) + " values");
    for (double v : data)
        if (!std::isfinite(v)) throw Error("tensor: non-finite value in constructor");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(data);
    node->requires_grad = requires_grad;
    node->ensure_grad();
    return wrap(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, RngState& rng, bool requires_grad) {
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = rng.next_normal();
    return from_data(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw Error("tensor: undefined");
    return node_->shape;
}

std::size_t Tensor::size() const {
    if (!node_) throw Error("tensor: undefined");
    return node_->values.size();
}

std::size_t Tensor::extent(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw Error("tensor: axis out of range");
    return s[axis];
}

const std::vector<double>& Tensor::data() const {
    if (!node_) throw Error("tensor: undefined");
    return node_->values;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!node_ || node_->grad.empty()) throw Error("tensor: no gradient buffer");
    return node_->grad;
}

double Tensor::value() const {
    if (size() != 1) throw Error("tensor: value() needs a single-element tensor, got " + shape_str(shape()));
    return node_->values[0];
}

double Tensor::at(const std::vector<std::size_t>& index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw Error("tensor: index rank mismatch");
    std::size_t flat = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (index[i] >= s[i]) throw Error("tensor: index out of range");
        flat = flat * s[i] + index[i];
    }
    return node_->values[flat];
}

void Tensor::assign(const std::vector<double>& values) {
    if (!node_) throw Error("tensor: undefined");
    if (values.size() != node_->values.size()) throw Error("tensor: assign size mismatch");
    for (double v : values)
        if (!std::isfinite(v)) throw Error("tensor: non-finite value in assign");
    node_->values = values;
}

void Tensor::fill(double value) {
    if (!node_) throw Error("tensor: undefined");
    std::fill(node_->values.begin(), node_->values.end(), value);
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::set_requires_grad(bool flag) {
    if (!node_) throw Error("tensor: undefined");
    node_->requires_grad = flag;
    if (flag)
        node_->ensure_grad();
    else
        node_->grad.clear();
}

Tensor Tensor::detached() const {
    if (!node_) throw Error("tensor: undefined");
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->values = node_->values;
    node->requires_grad = false;
    return wrap(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw Error("backward: undefined tensor");
    if (loss.size() != 1) throw Error("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->requires_grad) throw Error("backward: loss does not require grad");

    // Iterative post-order topological sort; graphs can be deep.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            detail::Node* parent = node->parents[next_child].get();
            ++next_child;
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* node : order) node->ensure_grad();
    root->grad[0] += 1.0;
    // order is post-order: root last. Walk in reverse for the backward sweep.
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor>& params, double eps) {
    if (eps <= 0.0 || eps > 1e-2) throw Error("grad_check: eps must lie in (0, 1e-2]");
    for (Tensor& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor loss = f(params);
    if (loss.size() != 1) throw Error("grad_check: f must return a scalar");
    if (!std::isfinite(loss.value())) throw Error("grad_check: non-finite loss");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        std::vector<double> values = p.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + eps;
            p.assign(values);
            const double up = f(params).value();
            values[i] = original - eps;
            p.assign(values);
            const double down = f(params).value();
            values[i] = original;
            p.assign(values);
            if (!std::isfinite(up) || !std::isfinite(down))
                throw Error("grad_check: non-finite intermediate");
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace dagr
