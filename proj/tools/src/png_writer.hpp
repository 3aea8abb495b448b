#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lcsurv::cli {

// 8-bit grayscale PNG, rows top to bottom.
void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    const std::vector<std::uint8_t>& pixels);

}  // namespace lcsurv::cli
