#pragma once

#include "ballotgate/imaging.hpp"

#include <filesystem>
#include <span>
#include <string>

namespace ballotgate {

/// Decodes an 8-bit PGM (P5 or P2) or PNG from memory. Colour PNGs are
/// converted with to_grayscale.
GrayImage decode_image(std::span<const unsigned char> bytes);

GrayImage read_image(const std::filesystem::path& path);

/// Binary PGM. Normalized images are min-max stretched to [0,255].
std::string encode_pgm(const GrayImage& img);

void write_pgm(const std::filesystem::path& path, const GrayImage& img);

} // namespace ballotgate
