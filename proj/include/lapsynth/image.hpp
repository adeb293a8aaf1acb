#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace lapsynth {

/// Interleaved HWC image with values in [-1, 1].
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels = 3, double fill = 0.0);
    ImageTensor(int height, int width, int channels, Eigen::VectorXd values);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    Eigen::Index size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.size() == 0; }

    double& at(int y, int x, int c) { return values_[index(y, x, c)]; }
    double at(int y, int x, int c) const { return values_[index(y, x, c)]; }

    const Eigen::VectorXd& flat() const noexcept { return values_; }
    Eigen::VectorXd& flat() noexcept { return values_; }

    bool same_shape(const ImageTensor& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    /// True when every value lies in [-1, 1] and is finite.
    bool in_range() const;

    void clamp();

    friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
        return a.same_shape(b) && a.values_ == b.values_;
    }

private:
    Eigen::Index index(int y, int x, int c) const noexcept {
        return (static_cast<Eigen::Index>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 3;
    Eigen::VectorXd values_;
};

/// Per-pixel class ids, row-major.
struct ClassMask {
    int height = 0;
    int width = 0;
    std::vector<int> ids;

    int at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
};

}  // namespace lapsynth
