#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "slideprog/core.hpp"
#include "slideprog/synthetic.hpp"

namespace slideprog::testing {

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("slideprog_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline SyntheticSpec small_spec(PrognosisLabel label, std::uint64_t seed, std::int64_t size = 1024) {
  SyntheticSpec s;
  s.seed = seed;
  s.label = label;
  s.size_40x = {size, size};
  s.lesion_shape = random_lesion_shape(seed);
  s.slide_id = "s" + std::to_string(seed);
  return s;
}

}  // namespace slideprog::testing
