#include "bppn/tensor.hpp"

#include <cmath>
#include <sstream>

#include "bppn/error.hpp"

namespace bppn {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, float fill)
    : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor Tensor::from(std::vector<int> s, std::vector<float> values) {
    if (values.size() != shape_numel(s)) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(s));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), 0.0f);
}

bool Tensor::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace bppn
