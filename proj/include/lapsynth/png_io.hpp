#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "lapsynth/image.hpp"

namespace lapsynth {

/// 8-bit RGB PNG bytes; values map as round((x + 1) * 127.5).
std::string encode_png(const ImageTensor& image);

/// Decodes 8-bit RGB/RGBA/gray PNG bytes to [-1, 1] via v / 127.5 - 1.
ImageTensor decode_png(std::string_view bytes);

void write_png(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_png(const std::filesystem::path& path);

/// Rounds values to the 8-bit grid so PNG round trips are exact.
void quantize_8bit(ImageTensor& image);

}  // namespace lapsynth
