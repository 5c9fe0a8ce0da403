#include <cstring>
#include <fstream>

#include <gtest/gtest.h>
#include <zlib.h>

#include "fovx/gradient.hpp"
#include "fovx/nifti.hpp"
#include "unit/helpers.hpp"

using namespace fovx;
using fovx::testing::TempDir;

namespace {

// Hand-rolled little-endian NIfTI-1 writer, independent of the library's.
struct RawHeader {
    std::vector<unsigned char> b = std::vector<unsigned char>(352, 0);
    template <class T>
    void put(std::size_t off, T v) { std::memcpy(b.data() + off, &v, sizeof(T)); }
};

RawHeader raw_header(int nx, int ny, int nz, short dtype, short bitpix)
{
    RawHeader h;
    h.put<int>(0, 348);
    h.put<short>(40, 3);
    h.put<short>(42, static_cast<short>(nx));
    h.put<short>(44, static_cast<short>(ny));
    h.put<short>(46, static_cast<short>(nz));
    h.put<short>(48, 1);
    h.put<short>(70, dtype);
    h.put<short>(72, bitpix);
    for (int a = 0; a < 3; ++a)
        h.put<float>(80 + 4 * a, 1.0f);
    h.put<float>(108, 352.0f);
    std::memcpy(h.b.data() + 344, "n+1\0", 4);
    return h;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes)
{
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& p, const std::string& s)
{
    std::ofstream(p) << s;
}

} // namespace

TEST(Nifti, RoundTripRandomVolumeIsBitExact)
{
    TempDir dir;
    std::mt19937_64 rng(3);
    GridSpec g = GridSpec::centered({8, 8, 8}, {1.5, 1.5, 2.0}, Eigen::Vector3d(1.0, -2.0, 4.0));
    auto v = fovx::testing::random_volume(g, rng, -100.0f, 100.0f);
    for (const char* name : {"a.nii", "a.nii.gz"}) {
        write_nifti(v, dir / name);
        auto back = read_nifti_volume(dir / name);
        EXPECT_EQ(back.grid.dims, v.grid.dims);
        EXPECT_TRUE(back.grid.same_geometry(v.grid, 0.0));
        ASSERT_EQ(back.data.size(), v.data.size());
        EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), v.data.size() * 4), 0);
    }
}

TEST(Nifti, ZeroCubeFileSize)
{
    TempDir dir;
    Volume3D v(GridSpec::centered({4, 4, 4}, {1, 1, 1}));
    write_nifti(v, dir / "z.nii");
    EXPECT_EQ(std::filesystem::file_size(dir / "z.nii"), 352u + 64u * 4u);
}

TEST(Nifti, FourDimensionalHeader)
{
    TempDir dir;
    std::mt19937_64 rng(1);
    auto g = fovx::testing::cube(3);
    Volume4D s;
    for (int i = 0; i < 3; ++i)
        s.volumes.push_back(fovx::testing::random_volume(g, rng));
    write_nifti(s, dir / "s.nii");
    std::ifstream in(dir / "s.nii", std::ios::binary);
    std::vector<char> hdr(352);
    in.read(hdr.data(), 352);
    short d0, d4;
    std::memcpy(&d0, hdr.data() + 40, 2);
    std::memcpy(&d4, hdr.data() + 48, 2);
    EXPECT_EQ(d0, 4);
    EXPECT_EQ(d4, 3);
    auto back = read_nifti_study(dir / "s.nii");
    ASSERT_EQ(back.size(), 3u);
    EXPECT_TRUE(back.gradient.empty());
    for (int i = 0; i < 3; ++i)
        EXPECT_EQ(back.volumes[i].data, s.volumes[i].data);
}

TEST(Nifti, Int16WithScaling)
{
    TempDir dir;
    auto h = raw_header(2, 1, 1, 4, 16);
    h.put<float>(112, 2.0f);
    h.put<float>(116, 1.0f);
    auto bytes = h.b;
    const short raw[2] = {3, -2};
    bytes.insert(bytes.end(), reinterpret_cast<const unsigned char*>(raw),
                 reinterpret_cast<const unsigned char*>(raw) + 4);
    write_bytes(dir / "i.nii", bytes);
    auto v = read_nifti_volume(dir / "i.nii");
    EXPECT_FLOAT_EQ(v.data[0], 7.0f);
    EXPECT_FLOAT_EQ(v.data[1], -3.0f);
}

TEST(Nifti, OtherDatatypesAndGzip)
{
    TempDir dir;
    auto h = raw_header(2, 2, 1, 2, 8);
    auto bytes = h.b;
    for (unsigned char c : {0, 1, 200, 255})
        bytes.push_back(c);
    gzFile f = gzopen((dir / "u8.nii.gz").c_str(), "wb");
    gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    auto v = read_nifti_volume(dir / "u8.nii.gz");
    EXPECT_EQ(v.data, (std::vector<float>{0, 1, 200, 255}));

    auto h64 = raw_header(1, 1, 1, 64, 64);
    auto b64 = h64.b;
    const double d = 0.125;
    b64.insert(b64.end(), reinterpret_cast<const unsigned char*>(&d), reinterpret_cast<const unsigned char*>(&d) + 8);
    write_bytes(dir / "f64.nii", b64);
    EXPECT_FLOAT_EQ(read_nifti_volume(dir / "f64.nii").data[0], 0.125f);
}

TEST(Nifti, PixdimAffineWhenNoTransformCodes)
{
    TempDir dir;
    auto h = raw_header(1, 1, 1, 16, 32);
    h.put<float>(80, 2.0f);
    h.put<float>(84, 3.0f);
    h.put<float>(88, 4.0f);
    auto bytes = h.b;
    const float x = 5.0f;
    bytes.insert(bytes.end(), reinterpret_cast<const unsigned char*>(&x), reinterpret_cast<const unsigned char*>(&x) + 4);
    write_bytes(dir / "p.nii", bytes);
    auto v = read_nifti_volume(dir / "p.nii");
    EXPECT_DOUBLE_EQ(v.grid.affine(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(v.grid.affine(1, 1), 3.0);
    EXPECT_DOUBLE_EQ(v.grid.affine(2, 2), 4.0);
}

TEST(Nifti, QformIdentityQuaternion)
{
    TempDir dir;
    auto h = raw_header(1, 1, 1, 16, 32);
    h.put<short>(252, 1);
    h.put<float>(76, 1.0f); // qfac
    h.put<float>(80, 2.0f);
    h.put<float>(268, 10.0f);
    h.put<float>(272, -5.0f);
    h.put<float>(276, 7.0f);
    auto bytes = h.b;
    const float x = 1.0f;
    bytes.insert(bytes.end(), reinterpret_cast<const unsigned char*>(&x), reinterpret_cast<const unsigned char*>(&x) + 4);
    write_bytes(dir / "q.nii", bytes);
    auto v = read_nifti_volume(dir / "q.nii");
    EXPECT_NEAR(v.grid.affine(0, 0), 2.0, 1e-12);
    EXPECT_NEAR(v.grid.affine(0, 3), 10.0, 1e-12);
    EXPECT_NEAR(v.grid.affine(1, 3), -5.0, 1e-12);
    EXPECT_NEAR(v.grid.affine(2, 3), 7.0, 1e-12);
}

TEST(Nifti, Errors)
{
    TempDir dir;
    auto h = raw_header(2, 2, 2, 16, 32);
    std::memcpy(h.b.data() + 344, "ni1\0", 4);
    auto bytes = h.b;
    bytes.resize(bytes.size() + 32, 0);
    write_bytes(dir / "bad.nii", bytes);
    EXPECT_THROW(read_nifti(dir / "bad.nii"), format_error);

    auto c = raw_header(2, 2, 2, 32, 64); // complex64
    auto cb = c.b;
    cb.resize(cb.size() + 64, 0);
    write_bytes(dir / "cplx.nii", cb);
    EXPECT_THROW(read_nifti(dir / "cplx.nii"), unsupported_error);

    auto t = raw_header(2, 2, 2, 16, 32);
    auto tb = t.b;
    tb.resize(tb.size() + 16, 0); // needs 32
    write_bytes(dir / "trunc.nii", tb);
    EXPECT_THROW(read_nifti(dir / "trunc.nii"), io_error);

    EXPECT_THROW(read_nifti(dir / "missing.nii"), io_error);
    Volume3D v(fovx::testing::cube(2));
    EXPECT_THROW(write_nifti(v, dir / "no_such_dir" / "x.nii"), io_error);
}

TEST(Nifti, BigEndianFileIsSwapped)
{
    TempDir dir;
    auto h = raw_header(1, 1, 1, 16, 32);
    auto swap_at = [&](std::size_t off, std::size_t n) { std::reverse(h.b.begin() + off, h.b.begin() + off + n); };
    swap_at(0, 4);
    for (std::size_t off : {40, 42, 44, 46, 48, 70, 72})
        swap_at(off, 2);
    for (std::size_t off : {80, 84, 88, 108})
        swap_at(off, 4);
    auto bytes = h.b;
    const unsigned char be[4] = {0x40, 0x49, 0x0f, 0xdb}; // 3.14159274f big-endian
    bytes.insert(bytes.end(), be, be + 4);
    write_bytes(dir / "be.nii", bytes);
    EXPECT_FLOAT_EQ(read_nifti_volume(dir / "be.nii").data[0], 3.14159274f);
}

TEST(Gradient, ParsesRowPerAxisBvecs)
{
    TempDir dir;
    write_text(dir / "b.bval", "0 1300 1300\n");
    write_text(dir / "b.bvec", "0 1 0\n0 0 1\n0 0 0\n");
    auto g = read_gradient_table(dir / "b.bval", dir / "b.bvec");
    ASSERT_EQ(g.size(), 3u);
    EXPECT_EQ(g.bvals[1], 1300.0);
    EXPECT_EQ(g.bvecs[1], Eigen::Vector3d(1, 0, 0));
    EXPECT_EQ(g.bvecs[2], Eigen::Vector3d(0, 1, 0));
}

TEST(Gradient, WhitespaceInsensitive)
{
    TempDir dir;
    write_text(dir / "a.bval", "0 1300 1300");
    write_text(dir / "a.bvec", "0 1 0\n0 0 1\n0 0 0");
    write_text(dir / "b.bval", "0\n\t1300   \n1300\n\n");
    write_text(dir / "b.bvec", "  0\t1   0 \n0 0\t\t1\n0   0 0\n\n");
    auto a = read_gradient_table(dir / "a.bval", dir / "a.bvec");
    auto b = read_gradient_table(dir / "b.bval", dir / "b.bvec");
    EXPECT_EQ(a.bvals, b.bvals);
    EXPECT_EQ(a.bvecs, b.bvecs);
}

TEST(Gradient, TransposedLayoutAccepted)
{
    TempDir dir;
    write_text(dir / "a.bval", "0 1300 1300 1300");
    write_text(dir / "a.bvec", "0 0 0\n1 0 0\n0 1 0\n0 0 1\n");
    auto g = read_gradient_table(dir / "a.bval", dir / "a.bvec");
    EXPECT_EQ(g.bvecs[3], Eigen::Vector3d(0, 0, 1));
}

TEST(Gradient, Errors)
{
    TempDir dir;
    write_text(dir / "a.bval", "0 1300 1300");
    write_text(dir / "a.bvec", "0 1 0 0\n0 0 1 0\n0 0 0 1\n");
    EXPECT_THROW(read_gradient_table(dir / "a.bval", dir / "a.bvec"), format_error);

    write_text(dir / "z.bvec", "0 1 0\n0 0 0\n0 0 0\n");
    EXPECT_THROW(read_gradient_table(dir / "a.bval", dir / "z.bvec"), validation_error);

    write_text(dir / "n.bval", "0 abc 1300");
    write_text(dir / "ok.bvec", "0 1 0\n0 0 1\n0 0 0\n");
    EXPECT_THROW(read_gradient_table(dir / "n.bval", dir / "ok.bvec"), format_error);

    write_text(dir / "p.bvec", "0 0.6 0\n0 0.8 1\n0 0 0\n");
    auto g = read_gradient_table(dir / "a.bval", dir / "p.bvec");
    EXPECT_NEAR(g.bvecs[1].norm(), 1.0, 1e-12);
}

TEST(Gradient, RoundTrip)
{
    TempDir dir;
    GradientTable g;
    g.bvals = {0, 1300, 1295.5};
    g.bvecs = {Eigen::Vector3d::Zero(), Eigen::Vector3d(0.6, 0.8, 0), Eigen::Vector3d(0, 0, -1)};
    write_gradient_table(g, dir / "g.bval", dir / "g.bvec");
    auto back = read_gradient_table(dir / "g.bval", dir / "g.bvec");
    EXPECT_EQ(back.bvals, g.bvals);
    EXPECT_EQ(back.bvecs, g.bvecs);
}

TEST(Shell, Classification)
{
    EXPECT_EQ(classify_shell(0), ShellId::b0);
    EXPECT_EQ(classify_shell(50), ShellId::b0);
    EXPECT_EQ(classify_shell(1300), ShellId::b1300);
    EXPECT_EQ(classify_shell(1200), ShellId::b1300);
    EXPECT_EQ(classify_shell(1400), ShellId::b1300);
    EXPECT_THROW(classify_shell(700), unsupported_shell_error);
    EXPECT_THROW(classify_shell(51), unsupported_shell_error);
    EXPECT_THROW(classify_shell(1401), unsupported_shell_error);
    EXPECT_THROW(classify_shell(-1), validation_error);
}

TEST(Affine, ReadWriteAndIdentity)
{
    TempDir dir;
    Affine A = Affine::Identity();
    A(0, 3) = 1.25;
    A(1, 0) = 0.5;
    write_affine(A, dir / "a.txt");
    EXPECT_EQ(read_affine(dir / "a.txt"), A);
    write_text(dir / "i.txt", "identity\n");
    EXPECT_EQ(read_affine(dir / "i.txt"), Affine::Identity());
    write_text(dir / "bad.txt", "1 0 0\n0 1 0\n");
    EXPECT_THROW(read_affine(dir / "bad.txt"), format_error);
}

TEST(Grid, ValidationRejectsDegenerateGeometry)
{
    GridSpec g;
    g.dims = {0, 1, 1};
    EXPECT_THROW(g.validate(), geometry_error);
    g.dims = {1, 1, 1};
    g.affine(2, 2) = 0.0;
    EXPECT_THROW(g.validate(), geometry_error);
}
