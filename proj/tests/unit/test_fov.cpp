#include <gtest/gtest.h>

#include "fovx/fov.hpp"
#include "unit/helpers.hpp"

using namespace fovx;

namespace {

// Elongated blob whose support reaches every z slice; b0 plus one weighted volume.
Volume4D blob_study(int n, int nz)
{
    GridSpec g = GridSpec::centered({n, n, nz}, {1, 1, 1});
    Volume4D s;
    for (int v = 0; v < 2; ++v) {
        Volume3D vol(g);
        for (int k = 0; k < nz; ++k)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i) {
                    const double x = (i - (n - 1) / 2.0) / (0.4 * n), y = (j - (n - 1) / 2.0) / (0.4 * n),
                                 z = (k - (nz - 1) / 2.0) / (0.6 * nz);
                    if (x * x + y * y + z * z < 1.0)
                        vol.at(i, j, k) = v == 0 ? 1.0f : 0.4f;
                }
        s.volumes.push_back(vol);
    }
    s.gradient.bvals = {0, 1300};
    s.gradient.bvecs = {Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitX()};
    return s;
}

Mask3D slice_mask(const GridSpec& g, int lo, int hi)
{
    Mask3D m(g);
    for (int k = lo; k < hi; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                m.at(i, j, k) = 1;
    return m;
}

} // namespace

TEST(Cut, ZeroExtentIsIdentity)
{
    auto s = blob_study(16, 20);
    auto c = simulate_cutoff(s, 0.0, CutSide::top);
    EXPECT_TRUE(c.cut.empty());
    EXPECT_EQ(c.mask.count(), s.grid().voxel_count());
    for (std::size_t v = 0; v < s.size(); ++v)
        EXPECT_EQ(c.study.volumes[v].data, s.volumes[v].data);
}

TEST(Cut, ThirtyMillimetresTop)
{
    GridSpec g = GridSpec::centered({4, 4, 64}, {1, 1, 1});
    Volume4D s;
    s.volumes.emplace_back(g, 1.0f);
    s.volumes.emplace_back(g, 2.0f);
    auto c = simulate_cutoff(s, 30.0, CutSide::top);
    EXPECT_EQ(c.cut.slice_begin, 34);
    EXPECT_EQ(c.cut.slice_end, 64);
    for (int k = 0; k < 64; ++k)
        for (const auto& v : c.study.volumes) {
            EXPECT_EQ(v.at(1, 2, k) == 0.0f, k >= 34);
            EXPECT_EQ(c.mask.at(1, 2, k), k >= 34 ? 0 : 1);
        }
}

TEST(Cut, BottomAndRounding)
{
    GridSpec g = GridSpec::centered({2, 2, 20}, {1, 1, 2.0});
    auto c = make_cut(g, 7.2, CutSide::bottom); // 3.6 slices -> 4
    EXPECT_EQ(c.slice_begin, 0);
    EXPECT_EQ(c.slice_end, 4);
    EXPECT_NEAR(c.extent_mm, c.slice_count() * 2.0, 2.0);
    EXPECT_TRUE(make_cut(g, 10.0, CutSide::none).empty());
}

TEST(Cut, ExtentBeyondGridRejected)
{
    GridSpec g = GridSpec::centered({2, 2, 40}, {1, 1, 1});
    Volume4D s;
    s.volumes.emplace_back(g, 1.0f);
    EXPECT_THROW(simulate_cutoff(s, 50.0, CutSide::top), validation_error);
    EXPECT_THROW(make_cut(g, -1.0, CutSide::top), validation_error);
}

TEST(Cut, MaskIsIdempotentUnderReapplication)
{
    auto s = blob_study(12, 24);
    auto once = simulate_cutoff(s, 5.0, CutSide::bottom);
    auto twice = simulate_cutoff(once.study, 5.0, CutSide::bottom);
    for (std::size_t v = 0; v < s.size(); ++v)
        EXPECT_EQ(once.study.volumes[v].data, twice.study.volumes[v].data);
}

TEST(TrainingCut, DeterministicAndUniform)
{
    std::mt19937_64 a(42), b(42);
    for (int i = 0; i < 10; ++i)
        EXPECT_EQ(draw_training_cut(a), draw_training_cut(b));

    std::mt19937_64 rng(7);
    double sum = 0;
    int top = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto [e, s] = draw_training_cut(rng);
        ASSERT_GE(e, 0.0);
        ASSERT_LE(e, 50.0);
        sum += e;
        top += s == CutSide::top;
    }
    EXPECT_NEAR(sum / n, 25.0, 1.5);
    EXPECT_NEAR(static_cast<double>(top) / n, 0.5, 0.05);
}

TEST(AcquiredMask, RecoversSimulatedCut)
{
    auto s = blob_study(20, 64);
    for (auto side : {CutSide::top, CutSide::bottom})
        for (double e : {1.0, 7.0, 30.0}) {
            auto c = simulate_cutoff(s, e, side);
            auto m = compute_acquired_mask(c.study);
            EXPECT_EQ(m.data, c.mask.data) << to_string(side) << " " << e;
        }
}

TEST(AcquiredMask, CompleteAndEmpty)
{
    auto s = blob_study(20, 40);
    EXPECT_EQ(compute_acquired_mask(s).count(), s.grid().voxel_count());
    for (auto& v : s.volumes)
        std::fill(v.data.begin(), v.data.end(), 0.0f);
    EXPECT_EQ(compute_acquired_mask(s).count(), 0u);
}

TEST(AcquiredMask, ConstantWithinSlices)
{
    auto s = blob_study(16, 32);
    auto c = simulate_cutoff(s, 9.0, CutSide::top);
    auto m = compute_acquired_mask(c.study);
    const auto& d = m.grid.dims;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                EXPECT_EQ(m.at(i, j, k), m.at(0, 0, k));
}

TEST(Otsu, SeparatesTwoLevels)
{
    std::vector<float> v(100, 0.1f);
    v.resize(200, 0.9f);
    const double t = otsu_threshold(v);
    EXPECT_GT(t, 0.1);
    EXPECT_LE(t, 0.9);
    EXPECT_EQ(otsu_threshold(std::vector<float>(5, 2.0f)), 2.0);
}

TEST(MedianFilter, RemovesIsolatedSpike)
{
    Volume3D v(fovx::testing::cube(5));
    v.at(2, 2, 2) = 10.0f;
    auto f = median_filter3(v);
    for (float x : f.data)
        EXPECT_EQ(x, 0.0f);
}

TEST(Thickness, HandBuiltCase)
{
    GridSpec g = GridSpec::centered({4, 4, 80}, {1, 1, 1});
    auto brain = slice_mask(g, 10, 71);    // z in [10, 70]
    auto acquired = slice_mask(g, 0, 61);  // up to z = 60
    auto e = estimate_cutoff_thickness(acquired, brain);
    EXPECT_DOUBLE_EQ(e.total_mm(), 10.0);
    EXPECT_EQ(e.side(), "top");
    auto full = estimate_cutoff_thickness(Mask3D(g, 1), brain);
    EXPECT_DOUBLE_EQ(full.total_mm(), 0.0);
    EXPECT_EQ(full.side(), "none");
    auto both = estimate_cutoff_thickness(slice_mask(g, 15, 61), brain);
    EXPECT_DOUBLE_EQ(both.top_mm, 10.0);
    EXPECT_DOUBLE_EQ(both.bottom_mm, 5.0);
    EXPECT_EQ(both.side(), "both");
    GridSpec other = GridSpec::centered({4, 4, 81}, {1, 1, 1});
    EXPECT_THROW(estimate_cutoff_thickness(Mask3D(other, 1), brain), geometry_error);
}

TEST(Thickness, MonotoneInExtent)
{
    auto s = blob_study(16, 48);
    Mask3D brain(s.grid(), 1);
    double last = -1;
    for (double e = 0; e <= 30; e += 3) {
        auto c = simulate_cutoff(s, e, CutSide::top);
        const double t = estimate_cutoff_thickness(compute_acquired_mask(c.study), brain).total_mm();
        EXPECT_GE(t, last);
        EXPECT_NEAR(t, e, 1.0);
        last = t;
    }
}
