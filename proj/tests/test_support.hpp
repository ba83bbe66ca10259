#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidcrew/errors.hpp"

namespace testsupport {

inline std::filesystem::path data_dir() { return std::filesystem::path(DROIDCREW_DATA_DIR); }

inline std::filesystem::path scenario_path(const std::string& name) {
  return data_dir() / "scenarios" / name;
}

inline std::filesystem::path script_path(const std::string& name) {
  return data_dir() / "scripts" / name;
}

inline std::filesystem::path pool_path(const std::string& name) {
  return data_dir() / "pools" / name;
}

// Fresh scratch directory per test.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("droidcrew_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Test-side oracle hash, written independently of the library: FNV-1a over
// the sorted "key|role|bucket;" tokens of non-variable elements.
inline std::string oracle_signature(
    const std::vector<std::tuple<std::string, std::string, std::array<int, 4>>>& stable_elements) {
  std::vector<std::string> tokens;
  for (const auto& [key, role, b] : stable_elements) {
    std::string bucket = std::to_string(b[0] / 32) + "," + std::to_string(b[1] / 32) + "," +
                         std::to_string(b[2] / 32) + "," + std::to_string(b[3] / 32);
    tokens.push_back(key + "|" + role + "|" + bucket);
  }
  std::sort(tokens.begin(), tokens.end());
  std::string canon;
  for (const auto& t : tokens) canon += t + ";";
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace testsupport

#define EXPECT_ERR(stmt, expected_code)                       \
  do {                                                        \
    bool caught_ = false;                                     \
    try {                                                     \
      stmt;                                                   \
    } catch (const droidcrew::Error& e_) {                    \
      caught_ = true;                                         \
      EXPECT_EQ(e_.code(), expected_code) << e_.what();       \
    }                                                         \
    EXPECT_TRUE(caught_) << "expected " #stmt " to throw";    \
  } while (0)
