#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "autolabel/dataset.hpp"
#include "autolabel/synthetic.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("autolabel-test-" + std::to_string(rd()) + std::to_string(rd()));
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

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Every regular file under `dir`, relative path -> bytes.
inline std::map<std::string, std::string> directory_bytes(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      out[std::filesystem::relative(e.path(), dir).string()] = slurp(e.path());
    }
  }
  return out;
}

inline autolabel::ClassTable poultry_classes() {
  return autolabel::ClassTable({"broiler", "hen"});
}

/// Small generated dataset: `labeled` images split 60/20/20, the rest
/// unlabeled with hidden truth.
inline autolabel::SyntheticDataset small_dataset(std::size_t images, std::size_t labeled,
                                                 std::uint64_t seed = 7,
                                                 double mean_instances = 5.0) {
  autolabel::SynthSpec spec;
  spec.images = images;
  spec.mean_instances = mean_instances;
  return autolabel::synthesize_dataset(spec, poultry_classes(), labeled, {}, seed);
}

}  // namespace testing_support
