#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvmesh/types.hpp"

namespace mvmesh {

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_bytes(const std::string& path);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// Binary PGM (P5), 0/255 payload; reading maps any nonzero byte to 1.
void write_pgm(const BinaryMap& map, const std::string& path);
void write_pgm_gray(const std::vector<std::uint8_t>& pixels, int height, int width,
                    const std::string& path);
BinaryMap read_pgm(const std::string& path);

// Raw little-endian doubles.
void write_doubles(const std::string& path, const std::vector<double>& values);
std::vector<double> read_doubles(const std::string& path);

void write_obj(const std::string& path, const Points3& vertices, const Faces& faces);

std::uint64_t fnv1a64(const std::uint8_t* data, size_t len);
std::uint64_t fnv1a64(const std::string& text);

}  // namespace mvmesh
