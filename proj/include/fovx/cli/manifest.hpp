#pragma once

// Dataset manifest: a CSV with one subject per row.
//
//   subject_id,dwi,bval,bvec,t1,affine,brain_mask,structures,split
//
// affine is a path or "identity"; brain_mask and structures may be empty;
// structures is "name:path;name:path". Relative paths resolve against the
// manifest's directory. Fields may not contain commas.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fovx/error.hpp"

namespace fovx::cli {

enum class Split { train, val, test };

inline std::string_view to_string(Split s)
{
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

struct ManifestRow {
    std::string subject_id;
    std::filesystem::path dwi, bval, bvec, t1;
    std::filesystem::path affine; // empty = identity
    std::filesystem::path brain_mask;
    std::map<std::string, std::filesystem::path> structures;
    Split split = Split::test;
};

struct DatasetManifest {
    std::vector<ManifestRow> rows;

    std::vector<const ManifestRow*> of(Split s) const
    {
        std::vector<const ManifestRow*> out;
        for (const auto& r : rows)
            if (r.split == s)
                out.push_back(&r);
        return out;
    }
};

inline constexpr const char* manifest_header = "subject_id,dwi,bval,bvec,t1,affine,brain_mask,structures,split";

namespace manifest_detail {

inline std::string trim(std::string s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep))
        out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep)
        out.emplace_back();
    return out;
}

// paths are stored relative to the manifest when they live below it
inline std::string rel(const std::filesystem::path& p, const std::filesystem::path& base)
{
    if (p.empty())
        return {};
    auto r = p.lexically_relative(base);
    if (r.empty() || *r.begin() == "..")
        return p.string();
    return r.string();
}

} // namespace manifest_detail

/// Parses and checks a manifest. Every referenced file must exist.
inline DatasetManifest load_manifest(const std::filesystem::path& path)
{
    using namespace manifest_detail;
    std::ifstream f(path);
    if (!f)
        throw io_error("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& s) -> std::filesystem::path {
        std::filesystem::path p(s);
        return p.is_relative() ? base / p : p;
    };
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    std::set<std::string> ids;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        const auto cells = split(t, ',');
        if (!header_seen) {
            if (trim(t) != manifest_header)
                throw data_error("manifest header must be: " + std::string(manifest_header));
            header_seen = true;
            continue;
        }
        const std::string where = path.filename().string() + ":" + std::to_string(lineno);
        if (cells.size() != 9)
            throw data_error(where + ": expected 9 fields, found " + std::to_string(cells.size()));
        ManifestRow r;
        r.subject_id = cells[0];
        if (r.subject_id.empty())
            throw data_error(where + ": empty subject_id");
        if (!ids.insert(r.subject_id).second)
            throw data_error(where + ": duplicate subject_id " + r.subject_id);
        for (int k : {1, 2, 3, 4})
            if (cells[k].empty())
                throw data_error(where + ": dwi, bval, bvec and t1 are required");
        r.dwi = resolve(cells[1]);
        r.bval = resolve(cells[2]);
        r.bvec = resolve(cells[3]);
        r.t1 = resolve(cells[4]);
        if (!cells[5].empty() && cells[5] != "identity")
            r.affine = resolve(cells[5]);
        if (!cells[6].empty())
            r.brain_mask = resolve(cells[6]);
        if (!cells[7].empty())
            for (const auto& item : split(cells[7], ';')) {
                const auto colon = item.find(':');
                if (colon == std::string::npos || colon == 0 || colon + 1 == item.size())
                    throw data_error(where + ": structure entries are name:path");
                const std::string name = item.substr(0, colon);
                if (!r.structures.emplace(name, resolve(item.substr(colon + 1))).second)
                    throw data_error(where + ": structure " + name + " listed twice");
            }
        if (cells[8] == "train")
            r.split = Split::train;
        else if (cells[8] == "val")
            r.split = Split::val;
        else if (cells[8] == "test")
            r.split = Split::test;
        else
            throw data_error(where + ": split must be train, val or test");
        std::vector<std::filesystem::path> files{r.dwi, r.bval, r.bvec, r.t1};
        for (const auto* p : {&r.affine, &r.brain_mask})
            if (!p->empty())
                files.push_back(*p);
        for (const auto& [n, p] : r.structures)
            files.push_back(p);
        for (const auto& p : files)
            if (!std::filesystem::is_regular_file(p))
                throw data_error(where + ": missing file " + p.string());
        m.rows.push_back(std::move(r));
    }
    if (!header_seen)
        throw data_error("manifest " + path.string() + " has no header");
    return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path)
{
    using manifest_detail::rel;
    const auto base = path.parent_path();
    std::ofstream f(path);
    f << manifest_header << "\n";
    for (const auto& r : m.rows) {
        std::string structs;
        for (const auto& [n, p] : r.structures)
            structs += (structs.empty() ? "" : ";") + n + ":" + rel(p, base);
        f << r.subject_id << "," << rel(r.dwi, base) << "," << rel(r.bval, base) << "," << rel(r.bvec, base) << ","
          << rel(r.t1, base) << "," << (r.affine.empty() ? "identity" : rel(r.affine, base)) << ","
          << rel(r.brain_mask, base) << "," << structs << "," << to_string(r.split) << "\n";
    }
    if (!f)
        throw io_error("cannot write manifest " + path.string());
}

} // namespace fovx::cli
