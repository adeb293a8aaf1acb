#include "lapsynth/image.hpp"

#include <cmath>
#include <utility>

#include "lapsynth/errors.hpp"

namespace lapsynth {

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0) throw ShapeError("image dimensions must be positive");
    values_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(height) * width * channels, fill);
}

ImageTensor::ImageTensor(int height, int width, int channels, Eigen::VectorXd values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
    if (height <= 0 || width <= 0 || channels <= 0) throw ShapeError("image dimensions must be positive");
    if (values_.size() != static_cast<Eigen::Index>(height) * width * channels)
        throw ShapeError("value count does not match image dimensions");
}

bool ImageTensor::in_range() const {
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
        const double v = values_[i];
        if (!std::isfinite(v) || v < -1.0 || v > 1.0) return false;
    }
    return true;
}

void ImageTensor::clamp() {
    values_ = values_.cwiseMax(-1.0).cwiseMin(1.0);
}

}  // namespace lapsynth
