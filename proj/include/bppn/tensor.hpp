#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace bppn {

/// Dense row-major float tensor with an optional same-shape gradient buffer.
/// The gradient buffer is empty until ensure_grad() is called; backward ops
/// accumulate (+=) into it so several loss terms can share one buffer.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty or data.size()

    Tensor() = default;
    explicit Tensor(std::vector<int> s, float fill = 0.0f);
    static Tensor from(std::vector<int> s, std::vector<float> values);

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad();
    void zero_grad();

    // row-major offsets for the common ranks
    std::size_t idx2(int a, int b) const {
        return static_cast<std::size_t>(a) * shape[1] + b;
    }
    std::size_t idx3(int a, int b, int c) const {
        return (static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c;
    }
    std::size_t idx4(int a, int b, int c, int d) const {
        return ((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d;
    }

    float& at2(int a, int b) { return data[idx2(a, b)]; }
    float at2(int a, int b) const { return data[idx2(a, b)]; }
    float& at3(int a, int b, int c) { return data[idx3(a, b, c)]; }
    float at3(int a, int b, int c) const { return data[idx3(a, b, c)]; }
    float& at4(int a, int b, int c, int d) { return data[idx4(a, b, c, d)]; }
    float at4(int a, int b, int c, int d) const { return data[idx4(a, b, c, d)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

std::string shape_str(const std::vector<int>& shape);
std::size_t shape_numel(const std::vector<int>& shape);

/// Named learnable tensor. `value.grad` is always allocated; `frozen`
/// parameters are skipped by the optimiser and stay bitwise unchanged.
struct Param {
    std::string name;
    Tensor value;
    bool frozen = false;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        value.ensure_grad();
    }
};

}  // namespace bppn
