#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "fovx/volume.hpp"

namespace fovx::testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("fovx_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Volume3D random_volume(const GridSpec& g, std::mt19937_64& rng, float lo = 0.0f, float hi = 1.0f)
{
    std::uniform_real_distribution<float> u(lo, hi);
    Volume3D v(g);
    for (auto& x : v.data)
        x = u(rng);
    return v;
}

inline Mask3D random_mask(const GridSpec& g, std::mt19937_64& rng, double p = 0.5)
{
    std::bernoulli_distribution b(p);
    Mask3D m(g);
    for (auto& x : m.data)
        x = b(rng) ? 1 : 0;
    return m;
}

inline GridSpec cube(int n, double spacing = 1.0)
{
    return GridSpec::centered({n, n, n}, {spacing, spacing, spacing});
}

} // namespace fovx::testing
