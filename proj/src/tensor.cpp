#include "polysed/tensor.h"

#include "polysed/errors.h"
#include "polysed/rng.h"

#include <cmath>
#include <sstream>

namespace polysed {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (const auto d : shape) {
        n *= d;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << ',';
        }
        out << shape[i];
    }
    out << ')';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (numel(shape_) != data_.size()) {
        throw ShapeError("tensor: shape " + to_string(shape_) + " needs " +
                         std::to_string(numel(shape_)) + " values, got " +
                         std::to_string(data_.size()));
    }
}

Tensor Tensor::uniform(Shape shape, double limit, SeededRng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) {
        v = rng.uniform(-limit, limit);
    }
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape_));
    }
    return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw ShapeError("tensor: index of rank " + std::to_string(index.size()) +
                         " for shape " + to_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (const auto i : index) {
        if (i >= shape_[axis]) {
            throw ShapeError("tensor: index out of range on axis " + std::to_string(axis));
        }
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("tensor: item() on shape " + to_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (numel(shape) != data_.size()) {
        throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " + to_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

bool Tensor::all_finite() const noexcept {
    for (const double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

}  // namespace polysed
