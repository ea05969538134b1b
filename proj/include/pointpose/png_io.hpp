#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pointpose::io {

void save_png_gray16(const std::string& path, int width, int height,
                     const std::vector<uint16_t>& pixels);
std::vector<uint16_t> load_png_gray16(const std::string& path, int& width, int& height);

void save_png_rgb8(const std::string& path, int width, int height,
                   const std::vector<uint8_t>& pixels);  // 3 bytes per pixel
std::vector<uint8_t> load_png_rgb8(const std::string& path, int& width, int& height);

}  // namespace pointpose::io
