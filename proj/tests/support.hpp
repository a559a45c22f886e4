#pragma once

#include <torch/torch.h>
#include <unistd.h>

// libtorch's logging header defines glog-style CHECK macros.
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE
#include <doctest.h>

#include <filesystem>
#include <string>

#include "checks.hpp"
#include "relate/latents.hpp"

namespace relate {

inline std::ostream& operator<<(std::ostream& os, const Pose& p) { return os << "(" << p.x << ", " << p.y << ")"; }

}  // namespace relate

namespace relate::test {

/// Fresh, empty directory private to this process.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "relate-tests" /
                   (name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

}  // namespace relate::test

using relate::test::max_abs;
