#include "mvmesh/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvmesh/errors.hpp"

namespace mvmesh {

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write: " + path);
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open: " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataError("short read: " + path);
  return bytes;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << text;
  if (!out) throw DataError("short write: " + path);
}

std::string read_text(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_pgm(const BinaryMap& map, const std::string& path) {
  std::ostringstream header;
  header << "P5\n" << map.width << " " << map.height << "\n255\n";
  std::vector<std::uint8_t> bytes;
  const std::string h = header.str();
  bytes.insert(bytes.end(), h.begin(), h.end());
  for (std::uint8_t v : map.data) bytes.push_back(v ? 255 : 0);
  write_bytes(path, bytes);
}

void write_pgm_gray(const std::vector<std::uint8_t>& pixels, int height, int width,
                    const std::string& path) {
  if (static_cast<size_t>(height) * width != pixels.size())
    throw DataError("pixel count does not match dimensions: " + path);
  std::ostringstream header;
  header << "P5\n" << width << " " << height << "\n255\n";
  std::vector<std::uint8_t> bytes;
  const std::string h = header.str();
  bytes.insert(bytes.end(), h.begin(), h.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_bytes(path, bytes);
}

BinaryMap read_pgm(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || width <= 0 || height <= 0 || maxval != 255)
    throw DataError("not a supported PGM file: " + path);
  in.get();  // single whitespace after the header
  const size_t offset = static_cast<size_t>(in.tellg());
  const size_t need = static_cast<size_t>(width) * static_cast<size_t>(height);
  if (bytes.size() < offset + need) throw DataError("truncated PGM payload: " + path);
  BinaryMap map(height, width);
  for (size_t i = 0; i < need; ++i) map.data[i] = bytes[offset + i] ? 1 : 0;
  return map;
}

void write_doubles(const std::string& path, const std::vector<double>& values) {
  std::vector<std::uint8_t> bytes(values.size() * sizeof(double));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  write_bytes(path, bytes);
}

std::vector<double> read_doubles(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  if (bytes.size() % sizeof(double) != 0)
    throw DataError("double payload size not a multiple of 8: " + path);
  std::vector<double> values(bytes.size() / sizeof(double));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

void write_obj(const std::string& path, const Points3& vertices, const Faces& faces) {
  std::ostringstream out;
  char line[128];
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", vertices(i, 0), vertices(i, 1),
                  vertices(i, 2));
    out << line;
  }
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    std::snprintf(line, sizeof(line), "f %d %d %d\n", faces(f, 0) + 1, faces(f, 1) + 1,
                  faces(f, 2) + 1);
    out << line;
  }
  write_text(path, out.str());
}

std::uint64_t fnv1a64(const std::uint8_t* data, size_t len) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    hash ^= data[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a64(const std::string& text) {
  return fnv1a64(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

}  // namespace mvmesh
