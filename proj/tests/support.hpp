#pragma once

// Shared helpers for the test binaries.

#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "stanceforge/embed_io.hpp"

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "sf") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Gaussian vectors; never zero-norm in practice, re-drawn if they are.
inline stanceforge::EmbeddingSet random_set(std::mt19937_64& rng, std::size_t n, std::size_t dim,
                                            const std::string& prefix) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  stanceforge::EmbeddingSet set(dim);
  std::vector<float> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : v) {
        x = g(rng);
        norm += double(x) * x;
      }
    } while (norm == 0.0);
    set.add(prefix + std::to_string(i), v);
  }
  return set;
}

// Exit status of a shell command (-1 when it did not exit normally).
inline int run_shell(const std::string& command) {
  const int status = std::system(command.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

}  // namespace testing
