#pragma once

#include <cmath>
#include <cstdint>
#include <new>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fcx {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape);

/// Cache-line aligned storage. Vectorized reductions then start at the same
/// element for every buffer, which keeps float results allocation-independent.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) { ::operator delete(p, kAlign); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array. The last dimension is contiguous.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), AlignedVec<T>(data.begin(), data.end())) {}

    Tensor(Shape shape, AlignedVec<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
            throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    int64_t dim(size_t axis) const { return shape_.at(axis); }
    size_t rank() const { return shape_.size(); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    AlignedVec<T>& vec() { return data_; }
    const AlignedVec<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 4-D accessor for (B, C, H, W) fields.
    T& at(int64_t b, int64_t c, int64_t i, int64_t j) {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + i) * shape_[3] + j)];
    }
    const T& at(int64_t b, int64_t c, int64_t i, int64_t j) const {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + i) * shape_[3] + j)];
    }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        AlignedVec<U> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    AlignedVec<T> data_;
};

/// A batch of standardized gridded states, shape (B, C, H, W).
///
/// Immutable once built; construction rejects odd spatial sizes and
/// non-finite values.
class FieldBatch {
public:
    FieldBatch(Tensor<float> data, std::vector<std::string> channel_names);

    const Tensor<float>& tensor() const { return data_; }
    const std::vector<std::string>& channel_names() const { return names_; }
    int64_t batch() const { return data_.dim(0); }
    int64_t channels() const { return data_.dim(1); }
    int64_t height() const { return data_.dim(2); }
    int64_t width() const { return data_.dim(3); }

private:
    Tensor<float> data_;
    std::vector<std::string> names_;
};

/// Per-channel mean and standard deviation in physical units.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;

    size_t channels() const { return mean.size(); }
    void validate() const;
};

}  // namespace fcx
