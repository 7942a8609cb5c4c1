#include "sensitrim/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "sensitrim/errors.hpp"

namespace sensitrim {

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<float>& TensorData::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0f);
    return grad;
}

Tensor make_tensor(std::shared_ptr<TensorData> data) { return Tensor(std::move(data)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    auto data = std::make_shared<TensorData>();
    data->values.assign(shape_numel(shape), value);
    data->shape = std::move(shape);
    data->requires_grad = requires_grad;
    return Tensor(std::move(data));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
    }
    auto data = std::make_shared<TensorData>();
    data->shape = std::move(shape);
    data->values = std::move(values);
    data->requires_grad = requires_grad;
    return Tensor(std::move(data));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return full({}, value, requires_grad); }

namespace {
const TensorData& checked(const std::shared_ptr<TensorData>& data) {
    if (!data) throw UsageError("use of an undefined tensor");
    return *data;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(data_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(data_).values.size(); }

std::span<const float> Tensor::values() const { return checked(data_).values; }

std::span<float> Tensor::mutable_values() const {
    checked(data_);
    return data_->values;
}

float Tensor::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return data_->values[0];
}

bool Tensor::requires_grad() const { return checked(data_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    checked(data_);
    data_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return !checked(data_).grad.empty() || data_->values.empty(); }

std::span<const float> Tensor::grad() const { return checked(data_).grad; }

std::span<float> Tensor::mutable_grad() const {
    checked(data_);
    return data_->ensure_grad();
}

void Tensor::zero_grad() const {
    checked(data_);
    std::fill(data_->grad.begin(), data_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
    const auto& src = checked(data_);
    auto data = std::make_shared<TensorData>();
    data->shape = src.shape;
    data->values = src.values;
    data->requires_grad = src.requires_grad;
    return Tensor(std::move(data));
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::record(const char* op, std::shared_ptr<TensorData> output, std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward needs a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    // Intermediates get a fresh gradient for this pass; leaves keep accumulating.
    for (auto& node : nodes_) {
        auto& g = node.output->grad;
        g.assign(node.output->values.size(), 0.0f);
    }
    loss.storage()->ensure_grad()[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (!tape) throw UsageError("backward called with no active tape");
    tape->backward(loss);
}

}  // namespace sensitrim
