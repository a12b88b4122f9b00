#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pcq/geometry.hpp"

namespace pcq::io {

// Binary layout: "PCQ1", u32 LE point count, then count * (x, y, z) as
// little-endian IEEE-754 binary32.

void write_pcq(const std::filesystem::path& path, const PointCloud& cloud);
[[nodiscard]] PointCloud read_pcq(const std::filesystem::path& path);

[[nodiscard]] std::vector<char> encode_pcq(const PointCloud& cloud);
[[nodiscard]] PointCloud decode_pcq(const std::vector<char>& bytes);

/// One "x y z" triple per line, printed with enough digits to round-trip.
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);
[[nodiscard]] PointCloud read_xyz(const std::filesystem::path& path);

/// Dispatches on extension: ".xyz"/".txt" as ASCII, anything else as PCQ1.
[[nodiscard]] PointCloud read_cloud(const std::filesystem::path& path);

[[nodiscard]] std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);

}  // namespace pcq::io
