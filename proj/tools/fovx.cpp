// fovx: phantom | train | impute | evaluate | qa

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fovx/cli/commands.hpp"

using namespace fovx;
using namespace fovx::cli;

namespace {

struct Flags {
    std::string config, out, bundle, manifest, test;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string dwi, bval, bvec, t1, affine, brain;
};

void add_common(CLI::App* sub, Flags& f)
{
    sub->add_option("--config", f.config, "JSON run configuration");
    sub->add_option("--seed", f.seed, "random seed (overrides the config)");
    sub->add_option("--jobs", f.jobs, "worker threads for per-subject work");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--bundle", f.bundle, "model bundle directory");
    sub->add_option("--manifest", f.manifest, "dataset manifest CSV");
}

// Flags win over the file.
RunConfig resolve(const Flags& f)
{
    RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
    if (f.seed) {
        c.seed = *f.seed;
        c.train.seed = *f.seed;
    }
    if (f.jobs)
        c.jobs = *f.jobs;
    if (!f.out.empty())
        c.out = f.out;
    if (!f.bundle.empty())
        c.bundle = f.bundle;
    if (!f.manifest.empty())
        c.manifest = f.manifest;
    if (!f.test.empty())
        c.test_dir = f.test;
    c.validate();
    return c;
}

// A one-row manifest beside the outputs, for impute without a manifest.
void single_study_manifest(RunConfig& c, const Flags& f)
{
    if (f.dwi.empty())
        return;
    if (f.bval.empty() || f.bvec.empty() || f.t1.empty())
        throw config_error("--dwi needs --bval, --bvec and --t1");
    if (!c.manifest.empty())
        throw config_error("give either --manifest or --dwi, not both");
    if (c.out.empty())
        throw config_error("an output directory is required (--out)");
    std::string id = std::filesystem::path(f.dwi).filename().string();
    for (const char* ext : {".nii.gz", ".nii"})
        if (id.size() > std::string(ext).size() && id.ends_with(ext)) {
            id.resize(id.size() - std::string(ext).size());
            break;
        }
    ManifestRow r;
    r.subject_id = id;
    r.dwi = std::filesystem::absolute(f.dwi);
    r.bval = std::filesystem::absolute(f.bval);
    r.bvec = std::filesystem::absolute(f.bvec);
    r.t1 = std::filesystem::absolute(f.t1);
    if (!f.affine.empty() && f.affine != "identity")
        r.affine = std::filesystem::absolute(f.affine);
    if (!f.brain.empty())
        r.brain_mask = std::filesystem::absolute(f.brain);
    make_dir(c.out);
    c.manifest = c.out / (id + "_input_manifest.csv");
    write_manifest(DatasetManifest{{r}}, c.manifest);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Field-of-view imputation for diffusion MRI"};
    app.require_subcommand(1);
    Flags f;

    auto* phantom = app.add_subcommand("phantom", "write a synthetic phantom dataset and manifest");
    auto* train_cmd = app.add_subcommand("train", "train the four slice generators");
    auto* impute = app.add_subcommand("impute", "fill the missing slices of each study");
    auto* evaluate = app.add_subcommand("evaluate", "compare imputed studies with references");
    auto* qa = app.add_subcommand("qa", "estimate missing thickness per study");
    for (auto* s : {phantom, train_cmd, impute, evaluate, qa})
        add_common(s, f);
    evaluate->add_option("--test", f.test, "directory written by impute");
    impute->add_option("--dwi", f.dwi, "single study DWI (instead of --manifest)");
    impute->add_option("--bval", f.bval, "single study b-values");
    impute->add_option("--bvec", f.bvec, "single study b-vectors");
    impute->add_option("--t1", f.t1, "single study T1");
    impute->add_option("--affine", f.affine, "T1-to-DWI affine text file or 'identity'");
    impute->add_option("--brain", f.brain, "single study brain mask");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }

    if (phantom->parsed())
        return run_guarded("phantom", [&] {
            const auto m = cmd_phantom(resolve(f));
            std::cout << "wrote " << m.rows.size() << " phantoms\n";
        });
    if (train_cmd->parsed())
        return run_guarded("train", [&] {
            const auto rep = cmd_train(resolve(f));
            std::cout << "best val_l1 " << csv_num(rep.best_val_l1) << " at step " << rep.best_step << " (initial "
                      << csv_num(rep.initial_val_l1) << ", " << csv_num(rep.seconds) << " s)\n";
        });
    if (impute->parsed())
        return run_guarded("impute", [&] {
            auto c = resolve(f);
            single_study_manifest(c, f);
            cmd_impute(c);
        });
    if (evaluate->parsed())
        return run_guarded("evaluate", [&] {
            const auto rep = cmd_evaluate(resolve(f));
            std::cout << "evaluated " << rep.adc.size() << " direction rows, " << rep.dice.size()
                      << " structure rows\n";
        });
    if (qa->parsed())
        return run_guarded("qa", [&] {
            const auto rows = cmd_qa(resolve(f));
            std::cout << "qa for " << rows.size() << " subjects\n";
        });
    return exit_unexpected;
}
