#pragma once

// Bundle container: <dir>/manifest.json plus one little-endian float32 blob
// per generator parameter, named <generator>__<parameter>.f32.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fovx/error.hpp"
#include "fovx/model.hpp"

namespace fovx {

inline constexpr const char* bundle_format = "fovx-bundle";
inline constexpr int bundle_version = 1;

namespace bundle_detail {

inline void write_f32(const std::filesystem::path& p, std::span<const float> v)
{
    std::vector<char> bytes(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &v[i], 4);
        for (int b = 0; b < 4; ++b)
            bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xffu);
    }
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f)
        throw io_error("cannot write " + p.string());
}

inline std::vector<float> read_f32(const std::filesystem::path& p, std::size_t count)
{
    std::error_code ec;
    const auto size = std::filesystem::file_size(p, ec);
    if (ec)
        throw corruption_error("bundle blob missing: " + p.filename().string());
    if (size != count * 4)
        throw corruption_error("bundle blob " + p.filename().string() + " has " + std::to_string(size) +
                               " bytes, manifest expects " + std::to_string(count * 4));
    std::vector<unsigned char> bytes(size);
    std::ifstream f(p, std::ios::binary);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!f)
        throw io_error("cannot read " + p.string());
    std::vector<float> v(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b)
            u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        std::memcpy(&v[i], &u, 4);
    }
    return v;
}

inline std::string blob_name(const std::string& gen, const std::string& param) { return gen + "__" + param + ".f32"; }

} // namespace bundle_detail

inline void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir)
{
    bundle.validate();
    std::filesystem::create_directories(dir);
    using nlohmann::json;
    json m;
    m["format"] = bundle_format;
    m["version"] = bundle_version;
    const auto& c = bundle.config;
    m["generator"] = {{"n", c.n},
                      {"base_width", c.base_width},
                      {"n_res_blocks", c.n_res_blocks},
                      {"stem_kernel", c.stem_kernel},
                      {"n_downsample", c.n_downsample}};
    m["grid"] = {{"dims", bundle.grid_dims}, {"spacing", bundle.grid_spacing}};
    m["thresholds"] = {{"b0_threshold", bundle.thresholds.b0_threshold},
                       {"nominal_b", bundle.thresholds.nominal_b},
                       {"shell_tolerance", bundle.thresholds.shell_tolerance}};
    json tensors = json::array();
    for (const auto& [s, p] : generator_keys) {
        const std::string gen = generator_name(s, p);
        for (const auto* prm : bundle.generator(s, p).params()) {
            const std::string file = bundle_detail::blob_name(gen, prm->name);
            bundle_detail::write_f32(dir / file, prm->value);
            tensors.push_back({{"generator", gen}, {"param", prm->name}, {"shape", prm->shape}, {"file", file}});
        }
    }
    m["tensors"] = tensors;
    std::ofstream f(dir / "manifest.json");
    f << m.dump(2) << "\n";
    if (!f)
        throw io_error("cannot write bundle manifest in " + dir.string());
}

inline ModelBundle load_bundle(const std::filesystem::path& dir)
{
    using nlohmann::json;
    const auto mpath = dir / "manifest.json";
    std::ifstream f(mpath);
    if (!f)
        throw io_error("cannot open bundle manifest " + mpath.string());
    json m;
    try {
        m = json::parse(f);
    } catch (const json::exception& e) {
        throw corruption_error(std::string("bundle manifest is not valid JSON: ") + e.what());
    }
    ModelBundle b;
    std::map<std::pair<std::string, std::string>, json> entries;
    try {
        if (m.at("format").get<std::string>() != bundle_format || m.at("version").get<int>() != bundle_version)
            throw corruption_error("unrecognized bundle format");
        const auto& g = m.at("generator");
        b.config.n = g.at("n").get<int>();
        b.config.base_width = g.at("base_width").get<int>();
        b.config.n_res_blocks = g.at("n_res_blocks").get<int>();
        b.config.stem_kernel = g.at("stem_kernel").get<int>();
        b.config.n_downsample = g.at("n_downsample").get<int>();
        b.grid_dims = m.at("grid").at("dims").get<Index3>();
        b.grid_spacing = m.at("grid").at("spacing").get<Spacing3>();
        const auto& t = m.at("thresholds");
        b.thresholds.b0_threshold = t.at("b0_threshold").get<double>();
        b.thresholds.nominal_b = t.at("nominal_b").get<double>();
        b.thresholds.shell_tolerance = t.at("shell_tolerance").get<double>();
        for (const auto& e : m.at("tensors")) {
            auto key = std::make_pair(e.at("generator").get<std::string>(), e.at("param").get<std::string>());
            if (!entries.emplace(key, e).second)
                throw corruption_error("duplicate bundle entry " + key.first + "/" + key.second);
        }
    } catch (const json::exception& e) {
        throw corruption_error(std::string("bundle manifest is incomplete: ") + e.what());
    }
    try {
        b.config.validate();
    } catch (const config_error& e) {
        throw corruption_error(std::string("bundle config invalid: ") + e.what());
    }

    std::size_t used = 0;
    for (const auto& [s, p] : generator_keys) {
        std::mt19937_64 rng(0);
        SliceGenerator gen(b.config, rng);
        const std::string name = generator_name(s, p);
        for (auto* prm : gen.params()) {
            auto it = entries.find({name, prm->name});
            if (it == entries.end())
                throw corruption_error("bundle lacks " + name + "/" + prm->name);
            const auto shape = it->second.at("shape").get<std::vector<int>>();
            if (shape != prm->shape)
                throw corruption_error("bundle tensor " + name + "/" + prm->name +
                                       " has a shape inconsistent with the manifest config");
            const auto blob = bundle_detail::read_f32(dir / it->second.at("file").get<std::string>(), prm->size());
            prm->value.assign(blob.begin(), blob.end());
            ++used;
        }
        b.generators.emplace(name, std::move(gen));
    }
    if (used != entries.size())
        throw corruption_error("bundle manifest lists tensors the config does not use");
    b.validate();
    return b;
}

} // namespace fovx
