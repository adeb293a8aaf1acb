#pragma once

#include <vector>

#include "lapsynth/image.hpp"

namespace lapsynth {

/// Keys cubic convolution kernel with a = -0.5.
double bicubic_kernel(double x);

/// Normalized 1-D resampling taps for one output sample.
struct ResampleTaps {
    int first = 0;
    std::vector<double> weights;
};

/// Anti-aliased bicubic taps: when shrinking, the kernel support is widened by
/// the downsampling ratio. Weights of every output sample sum to one.
std::vector<ResampleTaps> resample_taps(int in_size, int out_size);

/// Separable anti-aliased bicubic resize.
ImageTensor clean_resize(const ImageTensor& image, int out_h, int out_w);

/// Nearest-neighbour resize, the aliasing baseline.
ImageTensor nearest_resize(const ImageTensor& image, int out_h, int out_w);

}  // namespace lapsynth
