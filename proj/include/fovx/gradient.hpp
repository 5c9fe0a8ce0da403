#pragma once

// Plain-text companions of a DWI: bvals/bvecs files and 4x4 affine matrices.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fovx/error.hpp"
#include "fovx/volume.hpp"

namespace fovx {

struct ShellThresholds {
    double b0_threshold = 50.0;     // s/mm^2; at or below counts as b0
    double nominal_b = 1300.0;      // s/mm^2
    double shell_tolerance = 100.0; // s/mm^2 around nominal_b
};

/// Maps a b-value onto one of the two supported shells. Anything outside both
/// windows is rejected rather than bucketed.
inline ShellId classify_shell(double b, const ShellThresholds& t = {})
{
    if (!(b >= 0.0))
        throw validation_error("negative b-value");
    if (b <= t.b0_threshold)
        return ShellId::b0;
    if (std::abs(b - t.nominal_b) <= t.shell_tolerance)
        return ShellId::b1300;
    std::ostringstream os;
    os << "unsupported shell: b=" << b;
    throw unsupported_shell_error(os.str());
}

namespace text_detail {

inline std::vector<std::vector<double>> read_rows(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw io_error("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        std::string tok;
        while (ls >> tok) {
            double v = 0;
            const auto* first = tok.data();
            const auto* last = tok.data() + tok.size();
            auto [ptr, ec] = std::from_chars(first, last, v);
            if (ec != std::errc() || ptr != last)
                throw format_error("non-numeric token '" + tok + "' in " + path.string());
            row.push_back(v);
        }
        if (!row.empty())
            rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_number(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

} // namespace text_detail

inline void validate_gradient_table(const GradientTable& g, const ShellThresholds& t = {})
{
    if (g.bvals.size() != g.bvecs.size())
        throw format_error("bvals/bvecs length mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(g.bvals[i] >= 0.0))
            throw validation_error("negative b-value at index " + std::to_string(i));
        if (g.bvals[i] > t.b0_threshold) {
            const double n = g.bvecs[i].norm();
            if (n < 1.0 - 1e-3 || n > 1.0 + 1e-3)
                throw validation_error("diffusion-weighted volume " + std::to_string(i) +
                                       " has a non-unit b-vector");
        }
    }
}

/// Reads bvals (whitespace separated, any line layout) and bvecs (3 rows by
/// V columns). A V-by-3 bvecs file is transposed with a warning.
inline GradientTable read_gradient_table(const std::filesystem::path& bval_path,
                                         const std::filesystem::path& bvec_path,
                                         const ShellThresholds& t = {})
{
    GradientTable g;
    for (const auto& row : text_detail::read_rows(bval_path))
        g.bvals.insert(g.bvals.end(), row.begin(), row.end());
    const std::size_t V = g.bvals.size();

    const auto rows = text_detail::read_rows(bvec_path);
    const bool row_per_axis = rows.size() == 3 && rows[0].size() == V && rows[1].size() == V &&
                              rows[2].size() == V;
    bool column_per_axis = false;
    if (!row_per_axis) {
        column_per_axis = rows.size() == V && V > 0;
        for (const auto& r : rows)
            column_per_axis = column_per_axis && r.size() == 3;
        if (!column_per_axis)
            throw format_error("bvecs shape does not match " + std::to_string(V) + " b-values");
        std::cerr << "warning: " << bvec_path.string() << " is V x 3; transposing\n";
    }
    g.bvecs.resize(V);
    for (std::size_t v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a)
            g.bvecs[v][a] = row_per_axis ? rows[a][v] : rows[v][a];
    validate_gradient_table(g, t);
    return g;
}

inline void write_gradient_table(const GradientTable& g, const std::filesystem::path& bval_path,
                                 const std::filesystem::path& bvec_path)
{
    std::ofstream b(bval_path);
    std::ofstream r(bvec_path);
    if (!b || !r)
        throw io_error("cannot write gradient files");
    for (std::size_t v = 0; v < g.size(); ++v)
        b << (v ? " " : "") << text_detail::format_number(g.bvals[v]);
    b << '\n';
    for (int a = 0; a < 3; ++a) {
        for (std::size_t v = 0; v < g.size(); ++v)
            r << (v ? " " : "") << text_detail::format_number(g.bvecs[v][a]);
        r << '\n';
    }
    if (!b || !r)
        throw io_error("failed writing gradient files");
}

/// 4 lines of 4 numbers. The literal word "identity", given as the path or
/// as the whole file content, is also accepted.
inline Affine read_affine(const std::filesystem::path& path)
{
    if (path.string() == "identity")
        return Affine::Identity();
    {
        std::ifstream in(path);
        std::string first, rest;
        if (in >> first && first == "identity" && !(in >> rest))
            return Affine::Identity();
    }
    const auto rows = text_detail::read_rows(path);
    if (rows.size() != 4)
        throw format_error("affine file must have 4 rows: " + path.string());
    Affine A;
    for (int i = 0; i < 4; ++i) {
        if (rows[i].size() != 4)
            throw format_error("affine row must have 4 entries: " + path.string());
        for (int j = 0; j < 4; ++j)
            A(i, j) = rows[i][j];
    }
    if (std::abs(A.topLeftCorner<3, 3>().determinant()) <= 0.0)
        throw geometry_error("affine is not invertible: " + path.string());
    return A;
}

inline void write_affine(const Affine& A, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw io_error("cannot write " + path.string());
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j)
            out << (j ? " " : "") << text_detail::format_number(A(i, j));
        out << '\n';
    }
}

} // namespace fovx
