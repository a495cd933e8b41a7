#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wsol {

// Binary portable pixmap/graymap readers and writers. Strict: the readers
// accept exactly what the writers produce (maxval 255, single whitespace
// separators) plus arbitrary leading comments.

void write_p6(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb);
void read_p6(const std::string& path, int& h, int& w, std::vector<uint8_t>& rgb);

void write_p5(const std::string& path, int h, int w, const std::vector<uint8_t>& gray);
void read_p5(const std::string& path, int& h, int& w, std::vector<uint8_t>& gray);

// Raw little-endian float64 block.
void write_f64(const std::string& path, const std::vector<double>& values);
std::vector<double> read_f64(const std::string& path, size_t expect_count);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

uint64_t fnv1a64(const std::string& bytes);
std::string to_hex(uint64_t v);

}  // namespace wsol
