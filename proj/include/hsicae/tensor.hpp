#pragma once

#include <hsicae/errors.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hsicae {

struct Shape4 {
    std::size_t n = 0, c = 0, h = 0, w = 0;

    std::size_t count() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

// Dense NCHW array, row-major with W innermost.
template <typename T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;
    explicit Tensor4(Shape4 shape, T fill = T{0}) : shape_(shape), data_(shape.count(), fill) {}
    Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.count())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
    }
    Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{0})
        : Tensor4(Shape4{n, c, h, w}, fill) {}

    const Shape4& shape() const { return shape_; }
    std::size_t n() const { return shape_.n; }
    std::size_t c() const { return shape_.c; }
    std::size_t h() const { return shape_.h; }
    std::size_t w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[index(n, c, h, w)];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // One sample, all channels.
    std::span<T> sample(std::size_t n) { return span().subspan(n * shape_.c * shape_.plane(), shape_.c * shape_.plane()); }
    std::span<const T> sample(std::size_t n) const {
        return span().subspan(n * shape_.c * shape_.plane(), shape_.c * shape_.plane());
    }
    std::span<T> plane(std::size_t n, std::size_t c) { return span().subspan(index(n, c, 0, 0), shape_.plane()); }
    std::span<const T> plane(std::size_t n, std::size_t c) const {
        return span().subspan(index(n, c, 0, 0), shape_.plane());
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool operator==(const Tensor4&) const = default;

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

inline void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (!(a == b)) throw ShapeError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

} // namespace hsicae
