#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace polysed {

class SeededRng;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. A rank-0 tensor is a scalar.
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value) { return Tensor(Shape{}, value); }

    /// Glorot-style uniform draw in [-limit, limit].
    static Tensor uniform(Shape shape, double limit, SeededRng& rng);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const;

    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }
    const double* data() const noexcept { return data_.data(); }
    double* data() noexcept { return data_.data(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    /// Element at a full multi-index.
    double at(std::initializer_list<std::size_t> index) const;
    double& at(std::initializer_list<std::size_t> index);

    /// Value of a single-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    std::vector<double> data_;
};

}  // namespace polysed
