#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dagr {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Counter-based deterministic RNG. The (seed, counter) pair fully determines
/// every draw, so streams can be replayed or forked without hidden state.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    RngState() = default;
    explicit RngState(std::uint64_t seed_) : seed(seed_) {}

    std::uint64_t next_u64();
    /// Uniform draw in [0, 1).
    double next_uniform();
    /// Standard normal via Box-Muller (cosine branch); consumes two counters.
    double next_normal();
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;   // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // accumulates this->grad into parents

    std::size_t numel() const { return values.size(); }
    void ensure_grad();
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats, optionally tracked for
/// reverse-mode differentiation. Handles share the underlying node; all ops
/// return fresh nodes, so tensors are immutable except through assign().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(Shape shape, RngState& rng, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t extent(std::size_t axis) const;
    const std::vector<double>& data() const;
    bool requires_grad() const;
    const std::vector<double>& grad() const;
    bool has_grad() const;

    double value() const;  // scalar tensors only
    double at(const std::vector<std::size_t>& index) const;

    /// Overwrite the values of a leaf tensor (optimizer updates, test setup).
    void assign(const std::vector<double>& values);
    void fill(double value);
    void zero_grad();
    void set_requires_grad(bool flag);

    /// Same values, no graph history, no gradient tracking.
    Tensor detached() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable tensor with requires_grad set.
void backward(const Tensor& loss);

/// Central finite differences against reverse-mode gradients.
/// Returns the worst relative error over all parameter elements.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor>& params, double eps = 1e-5);

}  // namespace dagr
