#pragma once

#include "polysed/tensor.h"

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace polysed {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// What a primitive's adjoint rule sees during the backward sweep.
/// input_grads[k] is null when input k does not need a gradient.
struct GradContext {
    const Tensor& out;
    const Tensor& grad_out;
    std::vector<const Tensor*> inputs;
    std::vector<Tensor*> input_grads;
};

using BackwardFn = std::function<void(GradContext&)>;

struct Gradients {
    std::map<std::string, Tensor> by_name;
    // Parameters the loss does not depend on. Their entry in by_name is zero.
    std::vector<std::string> detached;

    const Tensor& at(const std::string& name) const;
};

/// Ordered record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the record is already a
/// topological order and the backward sweep is a single reverse pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Unnamed leaf that receives a gradient.
    Var variable(Tensor value);
    /// Named leaf reported in Gradients::by_name.
    Var parameter(std::string name, Tensor value);

    /// Records a primitive. Throws NumericError when value has a NaN/Inf.
    Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward);
    Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
        return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                      std::move(backward));
    }

    /// Reverse sweep from a single-element loss.
    Gradients backward(Var loss);

    /// Gradient of a leaf after backward(); zeros if it was not reached.
    Tensor grad(Var leaf) const;

    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }

private:
    struct Node {
        const char* op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        std::string name;
    };

    Var push(Node node);

    // deque: references to node values stay valid while the tape grows.
    std::deque<Node> nodes_;
    std::vector<Tensor> leaf_grads_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

enum class PadMode { zero, edge };

/// Differentiable primitives. Binary elementwise ops broadcast with
/// numpy rules (shapes right-aligned, size-1 axes stretch).
namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var square(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// Pass-through gradient inside [lo, hi], zero outside.
Var clamp(Var a, double lo, double hi);

/// Sum of all elements, rank-0 result.
Var sum(Var a);
Var sum(Var a, std::size_t axis, bool keepdim = false);
Var mean(Var a);
Var softmax(Var a, std::size_t axis);
/// Euclidean norm along axis. The adjoint at a zero vector is taken as zero.
Var l2norm(Var a, std::size_t axis, bool keepdim = false);

/// (M,K)x(K,N) -> (M,N), or batched (B,M,K)x(B,K,N) -> (B,M,N).
Var matmul(Var a, Var b);
/// input (Cin,H,W), kernels (Cout,Cin,KH,KW) -> (Cout,H-KH+1,W-KW+1). Valid padding, stride 1.
Var conv2d(Var input, Var kernels);
/// Non-overlapping max pooling along the last axis; its size must divide by `size`.
Var maxpool_last(Var a, std::size_t size);
Var pad(Var a, std::size_t axis, std::size_t before, std::size_t after, PadMode mode);

Var reshape(Var a, Shape shape);
Var permute(Var a, std::vector<std::size_t> order);
Var concat(std::span<const Var> parts, std::size_t axis);

}  // namespace ops
}  // namespace polysed
