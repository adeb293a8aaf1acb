#include "lapsynth/resize.hpp"

#include <algorithm>
#include <cmath>

#include "lapsynth/errors.hpp"

namespace lapsynth {

double bicubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

std::vector<ResampleTaps> resample_taps(int in_size, int out_size) {
    if (in_size <= 0 || out_size <= 0) throw ArgumentError("resize dimensions must be positive");
    const double scale = static_cast<double>(in_size) / out_size;
    const double filter_scale = std::max(scale, 1.0);
    const double support = 2.0 * filter_scale;

    std::vector<ResampleTaps> taps(static_cast<std::size_t>(out_size));
    for (int i = 0; i < out_size; ++i) {
        const double center = (i + 0.5) * scale;
        const int lo = std::max(0, static_cast<int>(std::floor(center - support + 0.5)));
        const int hi = std::min(in_size, static_cast<int>(std::floor(center + support + 0.5)));
        auto& t = taps[static_cast<std::size_t>(i)];
        t.first = lo;
        double total = 0.0;
        for (int j = lo; j < hi; ++j) {
            const double w = bicubic_kernel((j + 0.5 - center) / filter_scale);
            t.weights.push_back(w);
            total += w;
        }
        if (total == 0.0) throw NumericError("degenerate resampling window");
        for (double& w : t.weights) w /= total;
    }
    return taps;
}

ImageTensor clean_resize(const ImageTensor& image, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ArgumentError("target dimensions must be positive");
    if (image.empty()) throw ArgumentError("empty image");
    const int c = image.channels();
    const auto col_taps = resample_taps(image.width(), out_w);
    const auto row_taps = resample_taps(image.height(), out_h);

    ImageTensor horizontal(image.height(), out_w, c);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < out_w; ++x) {
            const auto& t = col_taps[static_cast<std::size_t>(x)];
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k)
                    acc += t.weights[k] * image.at(y, t.first + static_cast<int>(k), ch);
                horizontal.at(y, x, ch) = acc;
            }
        }

    ImageTensor out(out_h, out_w, c);
    for (int y = 0; y < out_h; ++y) {
        const auto& t = row_taps[static_cast<std::size_t>(y)];
        for (int x = 0; x < out_w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k)
                    acc += t.weights[k] * horizontal.at(t.first + static_cast<int>(k), x, ch);
                out.at(y, x, ch) = acc;
            }
    }
    return out;
}

ImageTensor nearest_resize(const ImageTensor& image, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ArgumentError("target dimensions must be positive");
    ImageTensor out(out_h, out_w, image.channels());
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(image.height() - 1, static_cast<int>(static_cast<long>(y) * image.height() / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(image.width() - 1, static_cast<int>(static_cast<long>(x) * image.width() / out_w));
            for (int ch = 0; ch < image.channels(); ++ch) out.at(y, x, ch) = image.at(sy, sx, ch);
        }
    }
    return out;
}

}  // namespace lapsynth
