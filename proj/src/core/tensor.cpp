#include "fcx/core/tensor.hpp"

#include <sstream>

namespace fcx {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

FieldBatch::FieldBatch(Tensor<float> data, std::vector<std::string> channel_names)
    : data_(std::move(data)), names_(std::move(channel_names)) {
    if (data_.rank() != 4) throw std::invalid_argument("field batch must be 4-D, got " + shape_str(data_.shape()));
    for (int64_t d : data_.shape()) {
        if (d < 1) throw std::invalid_argument("field batch dimensions must be >= 1, got " + shape_str(data_.shape()));
    }
    if (data_.dim(2) % 2 != 0 || data_.dim(3) % 2 != 0) {
        throw std::invalid_argument("field batch H and W must be even, got " + shape_str(data_.shape()));
    }
    if (static_cast<int64_t>(names_.size()) != data_.dim(1)) {
        throw std::invalid_argument("expected " + std::to_string(data_.dim(1)) + " channel names, got " +
                                    std::to_string(names_.size()));
    }
    if (!data_.all_finite()) throw std::invalid_argument("field batch contains non-finite values");
}

void NormStats::validate() const {
    if (mean.empty() || mean.size() != std.size()) {
        throw std::invalid_argument("norm stats must have matching non-empty mean and std");
    }
    for (size_t c = 0; c < std.size(); ++c) {
        if (!(std[c] > 0.0) || !std::isfinite(std[c]) || !std::isfinite(mean[c])) {
            throw std::invalid_argument("norm stats channel " + std::to_string(c) + " has non-positive or non-finite std");
        }
    }
}

}  // namespace fcx
