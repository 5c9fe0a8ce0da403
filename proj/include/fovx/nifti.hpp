#pragma once

// Reader/writer for single-file NIfTI-1 images (.nii and .nii.gz).
//
// Values are always handed out as float32. On read the affine comes from the
// sform when sform_code > 0, otherwise from the qform when qform_code > 0,
// otherwise from pixdim on the diagonal. On write the payload is float32 and
// the affine goes into the sform; the qform is left unset.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <zlib.h>

#include "fovx/error.hpp"
#include "fovx/volume.hpp"

namespace fovx {

namespace nifti_detail {

constexpr int header_size = 348;
constexpr int vox_offset = 352;

enum datatype : std::int16_t {
    dt_uint8 = 2,
    dt_int16 = 4,
    dt_int32 = 8,
    dt_float32 = 16,
    dt_float64 = 64,
};

inline void swap_bytes(void* p, std::size_t n)
{
    auto* b = static_cast<unsigned char*>(p);
    for (std::size_t i = 0; i < n / 2; ++i)
        std::swap(b[i], b[n - 1 - i]);
}

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& buf, bool swap) : buf_(buf), swap_(swap) {}

    template <class T>
    T get(std::size_t off) const
    {
        T v;
        std::memcpy(&v, buf_.data() + off, sizeof(T));
        if (swap_)
            swap_bytes(&v, sizeof(T));
        return v;
    }

private:
    const std::vector<unsigned char>& buf_;
    bool swap_;
};

template <class T>
void put(std::vector<unsigned char>& buf, std::size_t off, T v)
{
    std::memcpy(buf.data() + off, &v, sizeof(T));
}

inline bool ends_with(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path)
{
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f)
        throw io_error("cannot open " + path.string());
    std::vector<unsigned char> out;
    std::array<unsigned char, 1 << 16> chunk{};
    for (;;) {
        int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) {
            gzclose(f);
            throw io_error("read failure in " + path.string());
        }
        if (n == 0)
            break;
        out.insert(out.end(), chunk.begin(), chunk.begin() + n);
    }
    gzclose(f);
    return out;
}

inline void spill(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    const std::string p = path.string();
    const char* mode = ends_with(p, ".gz") ? "wb6" : "wbT";
    gzFile f = gzopen(p.c_str(), mode);
    if (!f)
        throw io_error("cannot open " + p + " for writing");
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto n = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 24));
        if (gzwrite(f, bytes.data() + done, n) != static_cast<int>(n)) {
            gzclose(f);
            throw io_error("write failure in " + p);
        }
        done += n;
    }
    if (gzclose(f) != Z_OK)
        throw io_error("close failure in " + p);
}

inline Affine qform_affine(const ByteReader& r, const Spacing3& sp)
{
    double b = r.get<float>(256), c = r.get<float>(260), d = r.get<float>(264);
    double a2 = 1.0 - (b * b + c * c + d * d);
    double a = a2 > 0 ? std::sqrt(a2) : 0.0;
    if (a2 <= 0) {
        const double n = std::sqrt(b * b + c * c + d * d);
        b /= n;
        c /= n;
        d /= n;
    }
    Eigen::Matrix3d R;
    R << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
        2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
        2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
    double qfac = r.get<float>(76);
    if (qfac == 0.0)
        qfac = 1.0;
    Affine A = Affine::Identity();
    A.topLeftCorner<3, 3>() = R * Eigen::Vector3d(sp[0], sp[1], qfac * sp[2]).asDiagonal();
    A(0, 3) = r.get<float>(268);
    A(1, 3) = r.get<float>(272);
    A(2, 3) = r.get<float>(276);
    return A;
}

} // namespace nifti_detail

/// Reads a NIfTI-1 single-file image. 3D files yield Volume3D, 4D files
/// yield Volume4D with an empty gradient table.
inline std::variant<Volume3D, Volume4D> read_nifti(const std::filesystem::path& path)
{
    using namespace nifti_detail;
    if (!std::filesystem::exists(path))
        throw io_error("no such file: " + path.string());
    const auto buf = slurp(path);
    if (buf.size() < static_cast<std::size_t>(header_size))
        throw io_error("truncated NIfTI header: " + path.string());

    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, buf.data(), 4);
    bool swap = false;
    if (sizeof_hdr != header_size) {
        swap_bytes(&sizeof_hdr, 4);
        if (sizeof_hdr != header_size)
            throw format_error("not a NIfTI-1 header: " + path.string());
        swap = true;
    }
    ByteReader r(buf, swap);
    if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0)
        throw format_error("unsupported NIfTI layout (expected single-file magic n+1): " + path.string());

    const int ndim = r.get<std::int16_t>(40);
    if (ndim != 3 && ndim != 4)
        throw unsupported_error("unsupported NIfTI dimensionality " + std::to_string(ndim));
    Index3 dims{r.get<std::int16_t>(42), r.get<std::int16_t>(44), r.get<std::int16_t>(46)};
    const int nvol = ndim == 4 ? std::max<int>(1, r.get<std::int16_t>(48)) : 1;
    for (int d : dims)
        if (d <= 0)
            throw format_error("non-positive dimension in NIfTI header");

    const auto dtype = r.get<std::int16_t>(70);
    std::size_t bytes_per = 0;
    switch (dtype) {
    case dt_uint8: bytes_per = 1; break;
    case dt_int16: bytes_per = 2; break;
    case dt_int32: bytes_per = 4; break;
    case dt_float32: bytes_per = 4; break;
    case dt_float64: bytes_per = 8; break;
    default: throw unsupported_error("unsupported NIfTI datatype " + std::to_string(dtype));
    }

    Spacing3 sp{};
    for (int a = 0; a < 3; ++a)
        sp[a] = std::abs(r.get<float>(80 + 4 * a));

    Affine A = Affine::Identity();
    const int qform_code = r.get<std::int16_t>(252);
    const int sform_code = r.get<std::int16_t>(254);
    if (sform_code > 0) {
        for (int row = 0; row < 3; ++row)
            for (int col = 0; col < 4; ++col)
                A(row, col) = r.get<float>(280 + 16 * row + 4 * col);
    } else if (qform_code > 0) {
        A = qform_affine(r, sp);
    } else {
        for (int a = 0; a < 3; ++a)
            A(a, a) = sp[a];
    }
    for (int a = 0; a < 3; ++a)
        if (!(sp[a] > 0))
            sp[a] = A.block<3, 1>(0, a).norm();

    const float slope = r.get<float>(112);
    const float inter = r.get<float>(116);
    const bool scale = slope != 0.0f && std::isfinite(slope);

    const std::size_t offset = static_cast<std::size_t>(r.get<float>(108));
    const std::size_t nvox = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    const std::size_t need = offset + nvox * nvol * bytes_per;
    if (offset < static_cast<std::size_t>(header_size) || buf.size() < need)
        throw io_error("truncated NIfTI payload: " + path.string());

    GridSpec grid;
    grid.dims = dims;
    grid.spacing = sp;
    grid.affine = A;
    grid.validate();

    auto decode = [&](std::size_t idx) -> float {
        const std::size_t at = offset + idx * bytes_per;
        double v = 0;
        switch (dtype) {
        case dt_uint8: v = buf[at]; break;
        case dt_int16: v = r.get<std::int16_t>(at); break;
        case dt_int32: v = r.get<std::int32_t>(at); break;
        case dt_float32: {
            const float f = r.get<float>(at);
            return scale ? f * slope + inter : f;
        }
        case dt_float64: v = r.get<double>(at); break;
        }
        return scale ? static_cast<float>(v * slope + inter) : static_cast<float>(v);
    };

    std::vector<Volume3D> vols;
    vols.reserve(nvol);
    for (int v = 0; v < nvol; ++v) {
        Volume3D vol(grid);
        for (std::size_t i = 0; i < nvox; ++i)
            vol.data[i] = decode(v * nvox + i);
        vols.push_back(std::move(vol));
    }
    if (ndim == 3)
        return std::move(vols.front());
    Volume4D out;
    out.volumes = std::move(vols);
    return out;
}

/// Reads a file that must hold a single 3D volume (a 4D file with one volume
/// is accepted).
inline Volume3D read_nifti_volume(const std::filesystem::path& path)
{
    auto img = read_nifti(path);
    if (auto* v = std::get_if<Volume3D>(&img))
        return std::move(*v);
    auto& s = std::get<Volume4D>(img);
    if (s.size() != 1)
        throw format_error("expected a 3D image: " + path.string());
    return std::move(s.volumes.front());
}

/// Reads a file as a study; a 3D file becomes a single-volume study.
inline Volume4D read_nifti_study(const std::filesystem::path& path)
{
    auto img = read_nifti(path);
    if (auto* s = std::get_if<Volume4D>(&img))
        return std::move(*s);
    Volume4D out;
    out.volumes.push_back(std::move(std::get<Volume3D>(img)));
    return out;
}

namespace nifti_detail {

inline std::vector<unsigned char> make_header(const GridSpec& g, int nvol, bool four_d)
{
    std::vector<unsigned char> h(vox_offset, 0);
    put<std::int32_t>(h, 0, header_size);
    put<char>(h, 38, 'r');
    put<std::int16_t>(h, 40, four_d ? 4 : 3);
    for (int a = 0; a < 3; ++a)
        put<std::int16_t>(h, 42 + 2 * a, static_cast<std::int16_t>(g.dims[a]));
    put<std::int16_t>(h, 48, static_cast<std::int16_t>(four_d ? nvol : 1));
    for (int a = 4; a < 8; ++a)
        put<std::int16_t>(h, 42 + 2 * a, 1);
    put<std::int16_t>(h, 70, dt_float32);
    put<std::int16_t>(h, 72, 32);
    put<float>(h, 76, 1.0f);
    for (int a = 0; a < 3; ++a)
        put<float>(h, 80 + 4 * a, static_cast<float>(g.spacing[a]));
    put<float>(h, 92, 1.0f);
    put<float>(h, 108, static_cast<float>(vox_offset));
    put<float>(h, 112, 1.0f);
    put<float>(h, 116, 0.0f);
    put<char>(h, 123, 10); // mm + s
    put<std::int16_t>(h, 252, 0);
    put<std::int16_t>(h, 254, 1);
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 4; ++col)
            put<float>(h, 280 + 16 * row + 4 * col, static_cast<float>(g.affine(row, col)));
    std::memcpy(h.data() + 344, "n+1\0", 4);
    return h;
}

inline void write_volumes(const std::vector<const Volume3D*>& vols, bool four_d,
                          const std::filesystem::path& path)
{
    const GridSpec& g = vols.front()->grid;
    auto bytes = make_header(g, static_cast<int>(vols.size()), four_d);
    const std::size_t nvox = g.voxel_count();
    bytes.reserve(bytes.size() + nvox * vols.size() * 4);
    for (const auto* v : vols) {
        const auto* p = reinterpret_cast<const unsigned char*>(v->data.data());
        bytes.insert(bytes.end(), p, p + nvox * 4);
    }
    spill(path, bytes);
}

} // namespace nifti_detail

inline void write_nifti(const Volume3D& vol, const std::filesystem::path& path)
{
    vol.validate();
    nifti_detail::write_volumes({&vol}, false, path);
}

inline void write_nifti(const Volume4D& study, const std::filesystem::path& path)
{
    study.validate();
    std::vector<const Volume3D*> ptrs;
    for (const auto& v : study.volumes)
        ptrs.push_back(&v);
    nifti_detail::write_volumes(ptrs, true, path);
}

inline void write_nifti(const Mask3D& mask, const std::filesystem::path& path)
{
    Volume3D v(mask.grid);
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        v.data[i] = mask.data[i];
    write_nifti(v, path);
}

inline Mask3D read_nifti_mask(const std::filesystem::path& path)
{
    const auto v = read_nifti_volume(path);
    Mask3D m(v.grid);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        m.data[i] = v.data[i] > 0.5f ? 1 : 0;
    return m;
}

} // namespace fovx
