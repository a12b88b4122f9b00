#include "pcq/cloud_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace pcq::io {
namespace {

constexpr char kMagic[4] = {'P', 'C', 'Q', '1'};

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("short write to {}", path.string()));
}

std::vector<char> encode_pcq(const PointCloud& cloud) {
  std::vector<char> out;
  out.reserve(8 + 12 * cloud.size());
  for (char c : kMagic) out.push_back(c);
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  for (const auto& p : cloud) {
    for (int axis = 0; axis < 3; ++axis) put_u32(out, std::bit_cast<std::uint32_t>(p[axis]));
  }
  return out;
}

PointCloud decode_pcq(const std::vector<char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a PCQ1 file");
  const std::uint32_t n = get_u32(bytes.data() + 4);
  if (bytes.size() != 8 + 12ULL * n) {
    throw IoError(fmt::format("PCQ1 size mismatch: header says {} points, payload has {} bytes", n,
                              bytes.size() - 8));
  }
  std::vector<Point> points(n);
  const char* cursor = bytes.data() + 8;
  for (auto& p : points) {
    for (int axis = 0; axis < 3; ++axis, cursor += 4) p[axis] = std::bit_cast<float>(get_u32(cursor));
  }
  PointCloud cloud(std::move(points));
  if (!cloud.is_finite()) throw IoError("non-finite coordinate");
  return cloud;
}

void write_pcq(const std::filesystem::path& path, const PointCloud& cloud) { write_file(path, encode_pcq(cloud)); }

PointCloud read_pcq(const std::filesystem::path& path) {
  auto cloud = decode_pcq(read_file(path));
  cloud.set_id(path.stem().string());
  return cloud;
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& p : cloud) out << fmt::format("{} {} {}\n", p.x(), p.y(), p.z());
  if (!out) throw IoError(fmt::format("short write to {}", path.string()));
}

PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<Point> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    Point p;
    const char* cursor = line.data() + first;
    const char* end = line.data() + line.size();
    for (int axis = 0; axis < 3; ++axis) {
      while (cursor < end && (*cursor == ' ' || *cursor == '\t')) ++cursor;
      auto [next, ec] = std::from_chars(cursor, end, p[axis]);
      if (ec != std::errc()) throw IoError(fmt::format("{}:{}: expected 'x y z'", path.string(), line_no));
      cursor = next;
    }
    points.push_back(p);
  }
  PointCloud cloud(std::move(points), path.stem().string());
  if (!cloud.is_finite()) throw IoError("non-finite coordinate");
  return cloud;
}

PointCloud read_cloud(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".xyz" || ext == ".txt") return read_xyz(path);
  return read_pcq(path);
}

}  // namespace pcq::io
