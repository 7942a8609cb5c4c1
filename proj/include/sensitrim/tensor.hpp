#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sensitrim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Backing storage shared by every Tensor handle that refers to it.
struct TensorData {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;  // empty when no gradient has been allocated
    bool requires_grad = false;

    std::vector<float>& ensure_grad();
};

/// Dense row-major f32 array with an optional gradient.
///
/// Tensor is a handle: copies share storage, like parameters in most autograd
/// libraries. Use clone() for an independent deep copy. A rank-0 shape is a
/// scalar. Zero-extent dimensions are allowed so that fully trimmed layers can
/// still be represented.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const noexcept { return data_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const float> values() const;
    std::span<float> mutable_values() const;
    float item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);

    bool has_grad() const;
    /// Empty span when no gradient has been accumulated yet.
    std::span<const float> grad() const;
    std::span<float> mutable_grad() const;
    void zero_grad() const;

    Tensor clone() const;
    bool same_storage(const Tensor& other) const noexcept { return data_ == other.data_; }

    const std::shared_ptr<TensorData>& storage() const noexcept { return data_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}
    std::shared_ptr<TensorData> data_;

    friend Tensor make_tensor(std::shared_ptr<TensorData> data);
};

Tensor make_tensor(std::shared_ptr<TensorData> data);

/// Define-by-run recording of differentiable operations.
///
/// Constructing a Tape makes it the active tape of the calling thread until it
/// is destroyed (tapes nest like a stack). Operations whose inputs require
/// gradients record a node while a tape is active; without one they only
/// compute forward values.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() noexcept;

    void record(const char* op, std::shared_ptr<TensorData> output, std::function<void()> backward);

    /// Populates grad on every requires_grad tensor reachable from `loss`.
    /// Gradients of leaves accumulate across calls; intermediates are reset.
    void backward(const Tensor& loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    const char* op_name(std::size_t index) const { return nodes_.at(index).op; }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        const char* op;
        std::shared_ptr<TensorData> output;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    Tape* previous_ = nullptr;
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* saved_;
};

/// backward() on the active tape.
void backward(const Tensor& loss);

}  // namespace sensitrim
