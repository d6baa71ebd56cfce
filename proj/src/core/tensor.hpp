#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace spanforge::numcore {

// Dense row-major array of 64-bit floats. Rank 0 (scalar), 1 and 2 are the
// only ranks the pipeline uses, but nothing here assumes that.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape)
        : shape_(std::move(shape)), v_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<std::int64_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), v_(std::move(values)) {
        if (static_cast<std::int64_t>(v_.size()) != checked_numel(shape_))
            throw ContractError("Tensor: value count does not match shape product");
    }

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::int64_t> shape, double fill) {
        Tensor t(std::move(shape));
        for (auto& x : t.v_) x = fill;
        return t;
    }

    static Tensor scalar(double x) { return Tensor({}, {x}); }

    static Tensor vector(std::vector<double> values) {
        auto n = static_cast<std::int64_t>(values.size());
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(v_.size()); }

    std::int64_t rows() const { return shape_.size() == 2 ? shape_[0] : throw_rank2(); }
    std::int64_t cols() const { return shape_.size() == 2 ? shape_[1] : throw_rank2(); }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double& operator[](std::int64_t i) { return v_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return v_[static_cast<std::size_t>(i)]; }

    double& at(std::int64_t r, std::int64_t c) { return v_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return v_[static_cast<std::size_t>(r * shape_[1] + c)]; }

    double item() const {
        if (v_.size() != 1) throw ContractError("Tensor::item on non-scalar");
        return v_[0];
    }

    std::vector<double>& data() { return v_; }
    const std::vector<double>& data() const { return v_; }

    void fill(double x) {
        for (auto& e : v_) e = x;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d < 0) throw ContractError("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    [[noreturn]] std::int64_t throw_rank2() const {
        throw ContractError("Tensor: rank-2 accessor on tensor of shape " + shape_str());
    }

    std::vector<std::int64_t> shape_;
    std::vector<double> v_;
};

}  // namespace spanforge::numcore
