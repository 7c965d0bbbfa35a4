#pragma once

#include "idesplat/error.hpp"
#include "idesplat/memory.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace idesplat {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out += (i ? "," : "") + std::to_string(shape[i]);
    }
    return out + "]";
}

/// Dense row-major float32 array.
class Tensor {
public:
    using Storage = memory::tracked_vector<float>;

    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

    Tensor(Shape shape, std::span<const float> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
        require(data_.size() == element_count(shape_), ErrorCode::ShapeMismatch,
                "payload of " + std::to_string(data_.size()) + " floats does not match shape " + shape_string(shape_));
    }

    Tensor(Shape shape, std::initializer_list<float> values)
        : Tensor(std::move(shape), std::span<const float>(values.begin(), values.size())) {}

    const Shape& shape() const noexcept { return shape_; }
    std::size_t ndim() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    float* raw() noexcept { return data_.data(); }
    const float* raw() const noexcept { return data_.data(); }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    template <class... Index>
    std::size_t offset(Index... index) const noexcept {
        const std::size_t idx[] = {static_cast<std::size_t>(index)...};
        std::size_t flat = 0;
        for (std::size_t axis = 0; axis < sizeof...(Index); ++axis) {
            flat = flat * shape_[axis] + idx[axis];
        }
        return flat;
    }

    template <class... Index>
    float& at(Index... index) noexcept {
        return data_[offset(index...)];
    }

    template <class... Index>
    float at(Index... index) const noexcept {
        return data_[offset(index...)];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    Tensor reshaped(Shape shape) const {
        require(element_count(shape) == size(), ErrorCode::ShapeMismatch,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        Tensor out;
        out.shape_ = std::move(shape);
        out.data_ = data_;
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(), b.data_.end());
    }

private:
    Shape shape_;
    Storage data_;
};

inline void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
    require(t.shape() == expected, ErrorCode::ShapeMismatch,
            what + " has shape " + shape_string(t.shape()) + ", expected " + shape_string(expected));
}

inline void require_rank(const Tensor& t, std::size_t rank, const std::string& what) {
    require(t.ndim() == rank, ErrorCode::ShapeMismatch,
            what + " must have rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
}

/// Rejects tensors carrying NaN or infinity. File loaders preserve such payloads
/// verbatim; callers feeding numeric stages validate with this.
inline void validate_finite(const Tensor& t, const std::string& what) {
    require(t.all_finite(), ErrorCode::NonFinite, what + " contains non-finite values");
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
            "cannot compare " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

} // namespace idesplat
