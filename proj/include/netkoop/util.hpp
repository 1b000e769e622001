#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace netkoop {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// FNV-1a over raw bytes; used for content addressing of artifacts.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_doubles(const double* v, std::size_t count,
                                  std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(v, count * sizeof(double), h);
}

std::string to_hex(std::uint64_t v);

// Shortest decimal that round-trips a double ("%.17g" fallback).
std::string format_double(double v);

// Evaluates fn(i) for i in [0, n). Work items must be independent and write
// to disjoint slots; outputs are then identical for any thread count.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn);

// Headerless CSV, one row per line, full double precision.
void write_csv_matrix(const std::filesystem::path& path, const MatrixXd& m);
MatrixXd read_csv_matrix(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& content);

std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace netkoop
