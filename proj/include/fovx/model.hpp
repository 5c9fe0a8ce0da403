#pragma once

// Four slice generators keyed by (shell, plane), slab-to-tensor glue and the
// end-to-end imputation of one study.

#include <array>
#include <atomic>
#include <exception>
#include <mutex>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fovx/error.hpp"
#include "fovx/fov.hpp"
#include "fovx/gradient.hpp"
#include "fovx/nn/networks.hpp"
#include "fovx/patch.hpp"
#include "fovx/preprocess.hpp"
#include "fovx/volume.hpp"

namespace fovx {

inline constexpr std::array<std::pair<ShellId, Plane>, 4> generator_keys{{
    {ShellId::b0, Plane::sagittal},
    {ShellId::b0, Plane::coronal},
    {ShellId::b1300, Plane::sagittal},
    {ShellId::b1300, Plane::coronal},
}};

inline std::string generator_name(ShellId s, Plane p)
{
    return std::string(to_string(s)) + "_" + std::string(to_string(p));
}

using SliceGenerator = nn::Generator<float>;

struct ModelBundle {
    nn::GeneratorConfig config;
    Index3 grid_dims{256, 256, 256}; // normalized space the generators were trained in
    Spacing3 grid_spacing{1.0, 1.0, 1.0};
    ShellThresholds thresholds;
    std::map<std::string, SliceGenerator> generators;

    const SliceGenerator& generator(ShellId s, Plane p) const
    {
        auto it = generators.find(generator_name(s, p));
        if (it == generators.end())
            throw corruption_error("bundle has no generator " + generator_name(s, p));
        return it->second;
    }

    SliceGenerator& generator(ShellId s, Plane p)
    {
        return const_cast<SliceGenerator&>(std::as_const(*this).generator(s, p));
    }

    void validate() const
    {
        config.validate();
        for (const auto& [s, p] : generator_keys)
            if (!(generator(s, p).config() == config))
                throw corruption_error("generator " + generator_name(s, p) + " disagrees with the bundle config");
        if (generators.size() != generator_keys.size())
            throw corruption_error("bundle holds unexpected generators");
    }
};

/// Freshly initialized bundle; each generator draws from its own stream.
inline ModelBundle make_bundle(const nn::GeneratorConfig& cfg, std::uint64_t seed, Index3 dims = {256, 256, 256},
                               Spacing3 spacing = {1.0, 1.0, 1.0}, ShellThresholds t = {})
{
    cfg.validate();
    ModelBundle b{cfg, dims, spacing, t, {}};
    for (std::size_t k = 0; k < generator_keys.size(); ++k) {
        std::mt19937_64 rng(seed * 1000003ULL + k);
        const auto [s, p] = generator_keys[k];
        b.generators.emplace(generator_name(s, p), SliceGenerator(cfg, rng));
    }
    return b;
}

inline nn::Tensor<float> slab_tensor(const SlabPatch& s)
{
    nn::Tensor<float> t(s.channel_count(), s.rows, s.cols);
    std::copy(s.channels.begin(), s.channels.end(), t.v.begin());
    return t;
}

inline Slice2D predict_slice(const SliceGenerator& g, const SlabPatch& slab)
{
    if (slab.channel_count() != g.input_channels())
        throw shape_error("slab has " + std::to_string(slab.channel_count()) + " channels, generator expects " +
                          std::to_string(g.input_channels()));
    auto y = g.forward(slab_tensor(slab));
    Slice2D out(slab.rows, slab.cols);
    std::copy(y.v.begin(), y.v.end(), out.data.begin());
    return out;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn)
{
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

/// Normalized-space inputs shared by training and inference.
struct PreparedStudy {
    Volume4D dwi; // intensity-normalized, on the bundle grid
    Volume3D t1;
    NormalizationParams dwi_norm;
    NormalizationParams t1_norm;
};

inline PreparedStudy prepare_study(const Volume4D& study, const Volume3D& t1, const Affine& reg_affine,
                                   Index3 dims, Spacing3 spacing)
{
    auto [dn, dp] = normalize_intensity(study);
    auto [tn, tp] = normalize_t1(t1);
    auto ns = to_normalized_space(dn, tn, reg_affine, dims, spacing);
    return {std::move(ns.dwi), std::move(ns.t1), dp, tp};
}

/// Every slice of `plane` predicted by the (shell, plane) generator.
inline Volume3D predict_volume(const Volume3D& dwi, const Volume3D& t1, ShellId shell, Plane plane,
                               const ModelBundle& bundle)
{
    const auto& g = bundle.generator(shell, plane);
    return predict_plane(dwi, t1, plane, bundle.config.n, [&](const SlabPatch& s) { return predict_slice(g, s); });
}

/// Sagittal and coronal stacks of one normalized-space volume, averaged.
inline Volume3D impute_volume(const Volume3D& dwi, const Volume3D& t1, ShellId shell, const ModelBundle& bundle)
{
    return fuse_planes(predict_volume(dwi, t1, shell, Plane::sagittal, bundle),
                       predict_volume(dwi, t1, shell, Plane::coronal, bundle));
}

struct ImputeOptions {
    int jobs = 1;
};

/// Full inference for one subject-space study. Acquired voxels are copied
/// from the input; predictions are mapped back to subject space and
/// intensity before compositing.
inline Volume4D impute_study(const Volume4D& study, const Volume3D& t1, const Affine& reg_affine,
                             const ModelBundle& bundle, const ImputeOptions& opt = {})
{
    study.validate();
    if (study.gradient.size() != study.size())
        throw validation_error("study needs a gradient table");
    std::vector<ShellId> shells;
    for (double b : study.gradient.bvals)
        shells.push_back(classify_shell(b, bundle.thresholds));

    const Mask3D m = compute_acquired_mask(study, bundle.thresholds);
    Volume4D out = study;
    if (m.count() == m.data.size())
        return out; // complete field of view

    const auto prep = prepare_study(study, t1, reg_affine, bundle.grid_dims, bundle.grid_spacing);
    parallel_for(study.size(), opt.jobs, [&](std::size_t v) {
        const Volume3D fused = impute_volume(prep.dwi.volumes[v], prep.t1, shells[v], bundle);
        const Volume3D back = denormalize(from_normalized_space(fused, study.grid()), prep.dwi_norm);
        out.volumes[v] = composite_output(study.volumes[v], back, m);
    });
    return out;
}

} // namespace fovx
