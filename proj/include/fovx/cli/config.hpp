#pragma once

// Run configuration: one JSON file, every key optional, unknown keys are an
// error at every level. Command-line flags are applied on top by the caller.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "fovx/error.hpp"
#include "fovx/gradient.hpp"
#include "fovx/nn/networks.hpp"
#include "fovx/phantom.hpp"
#include "fovx/train.hpp"

namespace fovx::cli {

struct PhantomSetConfig {
    int count = 20;              // train + val
    double train_fraction = 0.8;
    int test_count = 0;          // extra held-out subjects, cut copies written too
    double test_cut_mm = 30.0;
    CutSide test_cut_side = CutSide::top;
    int directions = 40;
    double b = 1300.0;
    PhantomSpec spec;            // seed is overwritten per subject
};

struct EvaluateConfig {
    double fa_threshold = 0.3;
    double min_cos = 0.7;
    int prior_dilation = 2;
    double adc_scale = 3e-3; // ADC maps divided by this before PSNR
};

struct RunConfig {
    std::uint64_t seed = 1;
    int jobs = 1;
    Index3 grid_dims{64, 64, 64};
    Spacing3 grid_spacing{1.0, 1.0, 1.0};
    nn::GeneratorConfig generator;
    TrainConfig train;
    PhantomSetConfig phantom;
    ShellThresholds thresholds;
    EvaluateConfig evaluate;
    std::filesystem::path manifest, bundle, out, test_dir;

    void validate() const
    {
        if (jobs < 1)
            throw config_error("jobs must be >= 1");
        for (int k = 0; k < 3; ++k) {
            if (grid_dims[k] < 8)
                throw config_error("grid dims must be >= 8");
            if (!(grid_spacing[k] > 0))
                throw config_error("grid spacing must be positive");
        }
        generator.validate();
        train.validate();
        const auto& p = phantom;
        if (p.count < 0 || p.test_count < 0)
            throw config_error("phantom counts must be non-negative");
        if (!(p.train_fraction > 0 && p.train_fraction < 1))
            throw config_error("phantom.train_fraction must lie in (0, 1)");
        if (p.directions < 6)
            throw config_error("phantom.directions must be >= 6");
        if (!(p.test_cut_mm >= 0) || p.test_cut_side == CutSide::none)
            throw config_error("phantom test cut must be a non-negative extent on top or bottom");
        try {
            p.spec.validate();
        } catch (const validation_error& e) {
            throw config_error(std::string("phantom spec: ") + e.what());
        }
        if (!(thresholds.b0_threshold >= 0 && thresholds.shell_tolerance > 0 && thresholds.nominal_b > 0))
            throw config_error("invalid shell thresholds");
        if (!(evaluate.fa_threshold >= 0 && evaluate.fa_threshold < 1) ||
            !(evaluate.min_cos >= 0 && evaluate.min_cos <= 1) || evaluate.prior_dilation < 0 ||
            !(evaluate.adc_scale > 0))
            throw config_error("invalid evaluate settings");
    }
};

namespace config_detail {

using nlohmann::json;

inline void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys)
{
    if (!j.is_object())
        throw config_error(where + " must be an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw config_error("unknown config key " + where + "." + it.key());
}

template <class T>
void take(const json& j, const char* key, T& dst)
{
    if (j.contains(key))
        dst = j.at(key).get<T>();
}

inline CutSide parse_side(const std::string& s)
{
    if (s == "top")
        return CutSide::top;
    if (s == "bottom")
        return CutSide::bottom;
    throw config_error("cut side must be top or bottom, got " + s);
}

inline void read_generator(const json& j, nn::GeneratorConfig& g)
{
    only_keys(j, "generator", {"n", "base_width", "n_res_blocks", "stem_kernel", "n_downsample"});
    take(j, "n", g.n);
    take(j, "base_width", g.base_width);
    take(j, "n_res_blocks", g.n_res_blocks);
    take(j, "stem_kernel", g.stem_kernel);
    take(j, "n_downsample", g.n_downsample);
}

inline void read_train(const json& j, TrainConfig& t)
{
    only_keys(j, "train",
              {"lambda_l1", "learning_rate", "beta1", "beta2", "batch_size", "max_steps", "val_interval",
               "cut_min_mm", "cut_max_mm", "discriminator", "saturating_generator_loss", "val_slice_stride",
               "val_cut_mm", "val_volumes_per_shell"});
    take(j, "lambda_l1", t.lambda_l1);
    take(j, "learning_rate", t.learning_rate);
    take(j, "beta1", t.beta1);
    take(j, "beta2", t.beta2);
    take(j, "batch_size", t.batch_size);
    take(j, "max_steps", t.max_steps);
    take(j, "val_interval", t.val_interval);
    take(j, "cut_min_mm", t.cut_min_mm);
    take(j, "cut_max_mm", t.cut_max_mm);
    take(j, "saturating_generator_loss", t.saturating_generator_loss);
    take(j, "val_slice_stride", t.val_slice_stride);
    take(j, "val_cut_mm", t.val_cut_mm);
    take(j, "val_volumes_per_shell", t.val_volumes_per_shell);
    if (j.contains("discriminator")) {
        const auto& d = j.at("discriminator");
        only_keys(d, "train.discriminator", {"base_width", "n_layers", "conditional"});
        take(d, "base_width", t.discriminator.base_width);
        take(d, "n_layers", t.discriminator.n_layers);
        take(d, "conditional", t.discriminator.conditional);
    }
}

inline void read_phantom(const json& j, PhantomSetConfig& p)
{
    only_keys(j, "phantom",
              {"count", "train_fraction", "test_count", "test_cut_mm", "test_cut_side", "directions", "b", "dims",
               "spacing", "semi_axes_mm", "csf_thickness_mm", "gm_thickness_mm", "noise_sigma", "jitter"});
    take(j, "count", p.count);
    take(j, "train_fraction", p.train_fraction);
    take(j, "test_count", p.test_count);
    take(j, "test_cut_mm", p.test_cut_mm);
    if (j.contains("test_cut_side"))
        p.test_cut_side = parse_side(j.at("test_cut_side").get<std::string>());
    take(j, "directions", p.directions);
    take(j, "b", p.b);
    take(j, "dims", p.spec.dims);
    take(j, "spacing", p.spec.spacing);
    take(j, "semi_axes_mm", p.spec.semi_axes_mm);
    take(j, "csf_thickness_mm", p.spec.csf_thickness_mm);
    take(j, "gm_thickness_mm", p.spec.gm_thickness_mm);
    take(j, "noise_sigma", p.spec.noise_sigma);
    take(j, "jitter", p.spec.jitter);
}

} // namespace config_detail

/// Parses `text`; missing keys keep their defaults.
inline RunConfig parse_config(const std::string& text)
{
    using namespace config_detail;
    RunConfig c;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        only_keys(j, "config",
                  {"seed", "jobs", "grid", "generator", "train", "phantom", "thresholds", "evaluate", "paths"});
        take(j, "seed", c.seed);
        take(j, "jobs", c.jobs);
        if (j.contains("grid")) {
            only_keys(j["grid"], "grid", {"dims", "spacing"});
            take(j["grid"], "dims", c.grid_dims);
            take(j["grid"], "spacing", c.grid_spacing);
        }
        if (j.contains("generator"))
            read_generator(j["generator"], c.generator);
        if (j.contains("train"))
            read_train(j["train"], c.train);
        if (j.contains("phantom"))
            read_phantom(j["phantom"], c.phantom);
        if (j.contains("thresholds")) {
            only_keys(j["thresholds"], "thresholds", {"b0_threshold", "nominal_b", "shell_tolerance"});
            take(j["thresholds"], "b0_threshold", c.thresholds.b0_threshold);
            take(j["thresholds"], "nominal_b", c.thresholds.nominal_b);
            take(j["thresholds"], "shell_tolerance", c.thresholds.shell_tolerance);
        }
        if (j.contains("evaluate")) {
            only_keys(j["evaluate"], "evaluate", {"fa_threshold", "min_cos", "prior_dilation", "adc_scale"});
            take(j["evaluate"], "fa_threshold", c.evaluate.fa_threshold);
            take(j["evaluate"], "min_cos", c.evaluate.min_cos);
            take(j["evaluate"], "prior_dilation", c.evaluate.prior_dilation);
            take(j["evaluate"], "adc_scale", c.evaluate.adc_scale);
        }
        if (j.contains("paths")) {
            only_keys(j["paths"], "paths", {"manifest", "bundle", "out", "test"});
            if (j["paths"].contains("manifest"))
                c.manifest = j["paths"]["manifest"].get<std::string>();
            if (j["paths"].contains("bundle"))
                c.bundle = j["paths"]["bundle"].get<std::string>();
            if (j["paths"].contains("out"))
                c.out = j["paths"]["out"].get<std::string>();
            if (j["paths"].contains("test"))
                c.test_dir = j["paths"]["test"].get<std::string>();
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("config has a wrongly typed value: ") + e.what());
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw config_error("cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    auto c = parse_config(text);
    // relative paths inside the file are relative to the file
    const auto base = path.parent_path();
    for (auto* p : {&c.manifest, &c.bundle, &c.out, &c.test_dir})
        if (!p->empty() && p->is_relative())
            *p = base / *p;
    return c;
}

} // namespace fovx::cli
