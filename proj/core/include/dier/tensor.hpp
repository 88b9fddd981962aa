#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dier/errors.hpp"

namespace dier {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Trailing-dimension broadcast of two shapes; throws DimensionError naming
// both shapes when they are incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

// Dense row-major n-dimensional array. Copies share the underlying buffer;
// a buffer is written only while the tensor is being built, never after it
// has been handed to an op or recorded on a tape. A 0-dim shape is a scalar.
template <typename S>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<S>>(
              static_cast<std::size_t>(numel_of(shape_)), S(0))) {}

    TensorT(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
        if (numel_of(shape_) != static_cast<std::int64_t>(values.size())) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
        data_ = std::make_shared<std::vector<S>>(std::move(values));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, S value) {
        TensorT t(std::move(shape));
        for (auto& v : *t.data_) v = value;
        return t;
    }

    static TensorT scalar(S value) { return TensorT(Shape{}, std::vector<S>{value}); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    std::span<const S> data() const {
        assert(data_);
        return {data_->data(), data_->size()};
    }

    // Build-phase write access. Buffers are logically frozen once shared.
    std::span<S> mut() {
        assert(data_);
        return {data_->data(), data_->size()};
    }

    const std::shared_ptr<const std::vector<S>> buffer() const { return data_; }

    S item() const {
        if (numel() != 1) {
            throw UsageError("item() on tensor of shape " + shape_str(shape_));
        }
        return (*data_)[0];
    }

    S at(std::int64_t flat) const { return (*data_)[static_cast<std::size_t>(flat)]; }

    bool requires_grad() const { return requires_grad_; }
    TensorT& set_requires_grad(bool b) {
        requires_grad_ = b;
        return *this;
    }

    // Same buffer, new shape (element count must match).
    TensorT reshaped(Shape shape) const {
        if (numel_of(shape) != numel()) {
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " +
                                 shape_str(shape));
        }
        TensorT out;
        out.shape_ = std::move(shape);
        out.data_ = data_;
        out.requires_grad_ = requires_grad_;
        return out;
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> v(data_->size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = static_cast<U>((*data_)[i]);
        }
        TensorT<U> out(shape_, std::move(v));
        out.set_requires_grad(requires_grad_);
        return out;
    }

    // Set by ops when the tensor is produced under an active tape.
    int tape_node = -1;
    std::uint64_t tape_uid = 0;

private:
    Shape shape_{};
    std::shared_ptr<std::vector<S>> data_;
    bool requires_grad_ = false;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename S>
bool same_data(const TensorT<S>& a, const TensorT<S>& b) {
    return a.defined() && b.defined() && a.data().data() == b.data().data();
}

}  // namespace dier
