#include "keyperm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "keyperm/error.hpp"

namespace keyperm {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ConfigError("tensor shape must have at least one dimension");
    for (auto d : shape)
        if (d == 0) throw ConfigError("tensor shape " + shape_str(shape) + " has a zero dimension");
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_shape(shape_);
    if (shape_size(shape_) != data_.size())
        throw ConfigError("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                          " values");
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor out(std::move(shape));
    if (out.size() != size())
        throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(out.shape_));
    std::copy(data_.begin(), data_.end(), out.data_.begin());
    return out;
}

Tensor Tensor::rows(std::size_t begin, std::size_t count) const {
    if (shape_.empty() || begin + count > shape_[0] || count == 0)
        throw ConfigError("row slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") out of range for " + shape_str(shape_));
    Shape s = shape_;
    s[0] = count;
    const std::size_t stride = data_.size() / shape_[0];
    Tensor out(std::move(s));
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride), count * stride, out.data_.begin());
    return out;
}

Shape Tensor::item_shape() const {
    if (shape_.size() < 2) return {1};
    return Shape(shape_.begin() + 1, shape_.end());
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ConfigError("cannot stack zero tensors");
    const Shape& inner = items.front().shape();
    Shape s{items.size()};
    s.insert(s.end(), inner.begin(), inner.end());
    Tensor out(std::move(s));
    double* dst = out.data();
    for (const auto& t : items) {
        if (t.shape() != inner)
            throw ConfigError("cannot stack " + shape_str(t.shape()) + " with " + shape_str(inner));
        dst = std::copy(t.values().begin(), t.values().end(), dst);
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size())
        throw ConfigError("size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace keyperm
