#pragma once

// The five CLI verbs as library calls. Each takes a validated RunConfig and
// writes its artifacts; the executable only parses flags and maps
// exceptions onto exit codes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fovx/bundle_io.hpp"
#include "fovx/cli/config.hpp"
#include "fovx/cli/manifest.hpp"
#include "fovx/dti.hpp"
#include "fovx/fov.hpp"
#include "fovx/gradient.hpp"
#include "fovx/metrics.hpp"
#include "fovx/model.hpp"
#include "fovx/nifti.hpp"
#include "fovx/phantom.hpp"
#include "fovx/preprocess.hpp"
#include "fovx/train.hpp"

namespace fovx::cli {

namespace fs = std::filesystem;

enum ExitCode : int { exit_ok = 0, exit_unexpected = 1, exit_config = 2, exit_data = 3 };

/// Runs `fn`, reporting failures on stderr and translating them.
template <class Fn>
int run_guarded(const char* verb, Fn&& fn)
{
    try {
        fn();
        return exit_ok;
    } catch (const config_error& e) {
        std::cerr << "fovx " << verb << ": config error: " << e.what() << "\n";
        return exit_config;
    } catch (const error& e) {
        std::cerr << "fovx " << verb << ": data error: " << e.what() << "\n";
        return exit_data;
    } catch (const std::exception& e) {
        std::cerr << "fovx " << verb << ": unexpected failure: " << e.what() << "\n";
        return exit_unexpected;
    }
}

// ---------------------------------------------------------------- csv

inline std::string csv_num(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const fs::path& p, const std::string& header) : f_(p), path_(p)
    {
        if (!f_)
            throw io_error("cannot write " + p.string());
        f_ << header << "\n";
    }

    template <class... Cells>
    void row(const Cells&... cells)
    {
        bool first = true;
        ((f_ << (first ? "" : ",") << cell(cells), first = false), ...);
        f_ << "\n";
    }

    ~CsvWriter() = default;

    void close()
    {
        f_.close();
        if (!f_)
            throw io_error("failed writing " + path_.string());
    }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(std::string_view s) { return std::string(s); }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double v) { return csv_num(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }

    std::ofstream f_;
    fs::path path_;
};

// ---------------------------------------------------------------- loading

struct Subject {
    std::string id;
    Volume4D dwi;
    Volume3D t1;
    Affine reg = Affine::Identity();
    std::optional<Mask3D> brain;
    std::map<std::string, Mask3D> structures;
};

inline Subject load_subject(const ManifestRow& r, const ShellThresholds& t, bool with_structures = false)
{
    Subject s;
    s.id = r.subject_id;
    s.dwi = read_nifti_study(r.dwi);
    s.dwi.gradient = read_gradient_table(r.bval, r.bvec, t);
    if (s.dwi.gradient.size() != s.dwi.size())
        throw data_error(r.subject_id + ": " + std::to_string(s.dwi.gradient.size()) + " gradient entries for " +
                         std::to_string(s.dwi.size()) + " volumes");
    s.t1 = read_nifti_volume(r.t1);
    if (!r.affine.empty())
        s.reg = read_affine(r.affine);
    if (!r.brain_mask.empty()) {
        s.brain = read_nifti_mask(r.brain_mask);
        require_same_grid(s.brain->grid, s.dwi.grid(), r.subject_id + " brain mask");
    }
    if (with_structures)
        for (const auto& [name, p] : r.structures) {
            auto m = read_nifti_mask(p);
            require_same_grid(m.grid, s.dwi.grid(), r.subject_id + " structure " + name);
            s.structures.emplace(name, std::move(m));
        }
    return s;
}

/// Brain mask in DWI space: the supplied one, else Otsu on the registered T1.
inline Mask3D brain_of(const Subject& s)
{
    if (s.brain)
        return *s.brain;
    return otsu_mask(resample(s.t1, s.dwi.grid(), Interp::trilinear, s.reg.inverse()));
}

inline void require_manifest(const RunConfig& c)
{
    if (c.manifest.empty())
        throw config_error("a manifest is required (--manifest)");
}

inline void require_out(const RunConfig& c)
{
    if (c.out.empty())
        throw config_error("an output directory is required (--out)");
}

inline void make_dir(const fs::path& p)
{
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p))
        throw io_error("cannot create directory " + p.string());
}

// ---------------------------------------------------------------- phantom

inline std::string phantom_id(int i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "phantom_%03d", i);
    return buf;
}

/// Writes count + test_count phantoms and manifest.csv. Test subjects also
/// get a cut copy of their DWI listed in manifest_cut.csv.
inline DatasetManifest cmd_phantom(const RunConfig& c)
{
    c.validate();
    require_out(c);
    const auto& pc = c.phantom;
    make_dir(c.out);
    const int total = pc.count + pc.test_count;
    const int n_train = static_cast<int>(std::lround(pc.train_fraction * pc.count));
    DatasetManifest all, cut;
    all.rows.resize(total);
    cut.rows.resize(pc.test_count);
    parallel_for(static_cast<std::size_t>(total), c.jobs, [&](std::size_t ui) {
        const int i = static_cast<int>(ui);
        PhantomSpec spec = pc.spec;
        spec.seed = c.seed * 100003ULL + static_cast<std::uint64_t>(i) + 1;
        const auto st = make_phantom_study(spec, pc.directions, pc.b);
        const std::string id = phantom_id(i);
        ManifestRow r;
        r.subject_id = id;
        r.dwi = c.out / (id + "_dwi.nii.gz");
        r.bval = c.out / (id + ".bval");
        r.bvec = c.out / (id + ".bvec");
        r.t1 = c.out / (id + "_t1.nii.gz");
        r.brain_mask = c.out / (id + "_brain.nii.gz");
        r.split = i < n_train ? Split::train : i < pc.count ? Split::val : Split::test;
        write_nifti(st.dwi, r.dwi);
        write_gradient_table(st.dwi.gradient, r.bval, r.bvec);
        write_nifti(st.phantom.t1, r.t1);
        write_nifti(st.phantom.brain, r.brain_mask);
        for (const auto& [name, m] : st.phantom.structures) {
            r.structures[name] = c.out / (id + "_" + name + ".nii.gz");
            write_nifti(m, r.structures[name]);
        }
        if (r.split == Split::test) {
            ManifestRow rc = r;
            rc.dwi = c.out / (id + "_dwi_cut.nii.gz");
            write_nifti(simulate_cutoff(st.dwi, pc.test_cut_mm, pc.test_cut_side).study, rc.dwi);
            cut.rows[i - pc.count] = std::move(rc);
        }
        all.rows[i] = std::move(r);
    });
    write_manifest(all, c.out / "manifest.csv");
    if (pc.test_count > 0)
        write_manifest(cut, c.out / "manifest_cut.csv");
    return all;
}

// ---------------------------------------------------------------- train

inline std::vector<TrainingSubject> training_subjects(const std::vector<const ManifestRow*>& rows,
                                                      const RunConfig& c)
{
    std::vector<TrainingSubject> out(rows.size());
    parallel_for(rows.size(), c.jobs, [&](std::size_t i) {
        auto s = load_subject(*rows[i], c.thresholds);
        const Mask3D brain = brain_of(s);
        out[i] = make_training_subject(s.id, s.dwi, s.t1, s.reg, brain, c.grid_dims, c.grid_spacing);
    });
    return out;
}

inline void write_training_log(const TrainReport& rep, const fs::path& dir)
{
    CsvWriter log(dir / "training_log.csv", "step,d_loss,g_gan,g_l1,val_l1_imputed");
    for (const auto& r : rep.log)
        log.row(r.step, r.d_loss, r.g_gan, r.g_l1, r.val_l1_imputed);
    log.close();
    CsvWriter val(dir / "validation.csv", "step,val_l1_imputed,val_psnr_imputed");
    for (const auto& r : rep.log)
        val.row(r.step, r.val_l1_imputed, r.val_psnr_imputed);
    val.close();
}

/// Trains on the manifest's train split, selects on its val split, writes
/// the bundle plus training_log.csv into --bundle (or --out).
inline TrainReport cmd_train(const RunConfig& c, std::ostream* progress = &std::cerr)
{
    c.validate();
    require_manifest(c);
    const fs::path dst = !c.bundle.empty() ? c.bundle : c.out;
    if (dst.empty())
        throw config_error("train needs --bundle or --out for the model bundle");
    const auto m = load_manifest(c.manifest);
    const auto tr_rows = m.of(Split::train), va_rows = m.of(Split::val);
    if (tr_rows.empty())
        throw config_error("manifest has no train split");
    if (va_rows.empty())
        throw config_error("manifest has no val split");
    auto tr = training_subjects(tr_rows, c);
    auto va = training_subjects(va_rows, c);
    auto rep = train(std::move(tr), std::move(va), c.generator, c.train, c.thresholds, [&](const LogRow& r) {
        if (progress)
            *progress << "step " << r.step << "  d " << csv_num(r.d_loss) << "  g_gan " << csv_num(r.g_gan)
                      << "  g_l1 " << csv_num(r.g_l1) << "  val_l1 " << csv_num(r.val_l1_imputed) << std::endl;
    });
    save_bundle(rep.bundle, dst);
    write_training_log(rep, dst);
    return rep;
}

// ---------------------------------------------------------------- impute

inline fs::path imputed_path(const fs::path& dir, const std::string& id) { return dir / (id + "_fovx.nii.gz"); }
inline fs::path acquired_path(const fs::path& dir, const std::string& id)
{
    return dir / (id + "_fovx_acquired.nii.gz");
}

/// Imputes every manifest row into --out as <id>_fovx.nii.gz, with the
/// gradient files copied alongside and the acquired mask that was used.
inline void cmd_impute(const RunConfig& c)
{
    c.validate();
    require_manifest(c);
    require_out(c);
    if (c.bundle.empty())
        throw config_error("impute needs --bundle");
    const auto bundle = load_bundle(c.bundle);
    const auto m = load_manifest(c.manifest);
    make_dir(c.out);
    parallel_for(m.rows.size(), c.jobs, [&](std::size_t i) {
        const auto& r = m.rows[i];
        const auto s = load_subject(r, bundle.thresholds);
        for (double b : s.dwi.gradient.bvals)
            classify_shell(b, bundle.thresholds); // fail before any output for this subject
        const auto out = impute_study(s.dwi, s.t1, s.reg, bundle);
        write_nifti(out, imputed_path(c.out, r.subject_id));
        write_nifti(compute_acquired_mask(s.dwi, bundle.thresholds), acquired_path(c.out, r.subject_id));
        fs::copy_file(r.bval, c.out / (r.subject_id + "_fovx.bval"), fs::copy_options::overwrite_existing);
        fs::copy_file(r.bvec, c.out / (r.subject_id + "_fovx.bvec"), fs::copy_options::overwrite_existing);
    });
}

// ---------------------------------------------------------------- evaluate

struct ImageRow {
    std::string subject;
    std::size_t volume;
    ShellId shell;
    std::string method; // "imputed" or "baseline"
    double psnr, ssim;
};

struct CurveRow {
    std::string subject;
    CutSide side;
    DistancePoint point; // averaged over volumes
};

struct AdcRow {
    std::string subject;
    int direction;
    std::size_t volume;
    double psnr;
};

struct DiceRow {
    std::string subject, structure;
    double incomplete, imputed;
    SplitDice incomplete_split, imputed_split;
    double length_ref_mm, length_incomplete_mm, length_imputed_mm;
};

struct EvaluationReport {
    std::vector<ImageRow> images;
    std::vector<CurveRow> curve;
    std::vector<AdcRow> adc;
    std::vector<DiceRow> dice;
    TestResult distance_spearman{}, adc_kruskal{}, dice_paired_t{}, psnr_paired_t{};
};

namespace evaluate_detail {

inline Volume3D scaled(const Volume3D& v, double s)
{
    Volume3D out = v;
    for (auto& x : out.data)
        x = static_cast<float>(x / s);
    return out;
}

inline Volume3D clamped(Volume3D v)
{
    for (auto& x : v.data)
        x = std::clamp(x, 0.0f, 1.0f);
    return v;
}

/// Dominant principal direction inside `mask` (sign-free average).
inline Eigen::Vector3d mean_axis(const TensorFit& fit, const Mask3D& mask)
{
    Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        if (mask.data[i]) {
            const Eigen::Vector3d e = fit.principal[i].cast<double>();
            S += e * e.transpose();
        }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(S);
    return es.eigenvectors().col(2);
}

/// Extent of a mask along the cut axis, in mm.
inline double axial_length(const Mask3D& m)
{
    const auto& d = m.grid.dims;
    int n = 0;
    for (int k = 0; k < d[2]; ++k) {
        bool any = false;
        for (int j = 0; j < d[1] && !any; ++j)
            for (int i = 0; i < d[0] && !any; ++i)
                any = m.at(i, j, k) != 0;
        n += any;
    }
    return n * m.grid.spacing[2];
}

inline std::vector<FovCut> cuts_of(const Mask3D& acquired)
{
    const auto e = estimate_cutoff_thickness(acquired, Mask3D(acquired.grid, 1));
    std::vector<FovCut> out;
    if (e.top_mm > 0)
        out.push_back(make_cut(acquired.grid, e.top_mm, CutSide::top));
    if (e.bottom_mm > 0)
        out.push_back(make_cut(acquired.grid, e.bottom_mm, CutSide::bottom));
    return out;
}

struct SubjectResult {
    std::vector<ImageRow> images;
    std::vector<CurveRow> curve;
    std::vector<AdcRow> adc;
    std::vector<DiceRow> dice;
};

inline SubjectResult evaluate_subject(const Subject& ref, const Volume4D& test, const Mask3D& acquired,
                                      const RunConfig& c)
{
    const auto& t = c.thresholds;
    require_same_grid(test.grid(), ref.dwi.grid(), ref.id + " imputed study");
    require_same_grid(acquired.grid, ref.dwi.grid(), ref.id + " acquired mask");
    if (test.size() != ref.dwi.size())
        throw data_error(ref.id + ": imputed study has " + std::to_string(test.size()) + " volumes, reference " +
                         std::to_string(ref.dwi.size()));
    SubjectResult out;
    const Mask3D brain = brain_of(ref);
    const Mask3D region = mask_and(brain, mask_not(acquired));
    const double scale = normalize_intensity(ref.dwi).second.p999;
    const auto cuts = cuts_of(acquired);

    std::vector<std::vector<DistancePoint>> curves(cuts.size());
    for (std::size_t v = 0; v < ref.dwi.size(); ++v) {
        const ShellId shell = classify_shell(ref.dwi.gradient.bvals[v], t);
        const Volume3D r = scaled(ref.dwi.volumes[v], scale);
        const Volume3D x = scaled(test.volumes[v], scale);
        const Volume3D b = nearest_slice_fill(r, acquired);
        out.images.push_back({ref.id, v, shell, "imputed", psnr(r, x, region), ssim3d(r, x, region)});
        out.images.push_back({ref.id, v, shell, "baseline", psnr(r, b, region), ssim3d(r, b, region)});
        for (std::size_t k = 0; k < cuts.size(); ++k) {
            const auto pts = per_distance_curve(r, x, cuts[k], region);
            if (curves[k].empty()) {
                curves[k] = pts;
                for (auto& p : curves[k])
                    p.psnr = p.ssim = 0;
            }
            for (std::size_t i = 0; i < pts.size(); ++i) {
                curves[k][i].psnr += pts[i].psnr / static_cast<double>(ref.dwi.size());
                curves[k][i].ssim += pts[i].ssim / static_cast<double>(ref.dwi.size());
            }
        }
    }
    for (std::size_t k = 0; k < cuts.size(); ++k)
        for (const auto& p : curves[k])
            out.curve.push_back({ref.id, cuts[k].side, p});

    int dir = 0;
    for (std::size_t v = 0; v < ref.dwi.size(); ++v) {
        if (classify_shell(ref.dwi.gradient.bvals[v], t) == ShellId::b0)
            continue;
        const auto ar = clamped(scaled(adc_map(ref.dwi, v, brain, t), c.evaluate.adc_scale));
        const auto ax = clamped(scaled(adc_map(test, v, brain, t), c.evaluate.adc_scale));
        out.adc.push_back({ref.id, dir++, v, psnr(ar, ax, region)});
    }

    if (!ref.structures.empty()) {
        Volume4D incomplete = ref.dwi;
        for (auto& vol : incomplete.volumes)
            for (std::size_t i = 0; i < vol.data.size(); ++i)
                if (!acquired.data[i])
                    vol.data[i] = 0.0f;
        const auto fit_ref = fit_tensors(ref.dwi, brain, t);
        const auto fit_inc = fit_tensors(incomplete, mask_and(brain, acquired), t);
        const auto fit_imp = fit_tensors(test, brain, t);
        for (const auto& [name, truth] : ref.structures) {
            const Mask3D prior = dilate(truth, c.evaluate.prior_dilation);
            const Eigen::Vector3d axis = mean_axis(fit_ref, truth);
            auto seg = [&](const TensorFit& f) {
                return segment_structure(f, prior, axis, c.evaluate.fa_threshold, c.evaluate.min_cos);
            };
            const Mask3D s_ref = seg(fit_ref), s_inc = seg(fit_inc), s_imp = seg(fit_imp);
            out.dice.push_back({ref.id, name, dice(s_ref, s_inc), dice(s_ref, s_imp),
                                split_region_dice(s_ref, s_inc, acquired), split_region_dice(s_ref, s_imp, acquired),
                                axial_length(s_ref), axial_length(s_inc), axial_length(s_imp)});
        }
    }
    return out;
}

} // namespace evaluate_detail

inline void write_reports(const EvaluationReport& rep, const fs::path& dir)
{
    {
        CsvWriter w(dir / "psnr_ssim.csv", "subject_id,volume,shell,method,psnr,ssim");
        for (const auto& r : rep.images)
            w.row(r.subject, r.volume, to_string(r.shell), r.method, r.psnr, r.ssim);
        w.close();
    }
    {
        CsvWriter w(dir / "summary.csv", "method,shell,metric,mean,sd,n");
        for (const char* method : {"imputed", "baseline"})
            for (ShellId shell : {ShellId::b0, ShellId::b1300}) {
                // per-subject means first, then across subjects
                std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per;
                for (const auto& r : rep.images)
                    if (r.method == method && r.shell == shell) {
                        per[r.subject].first.push_back(r.psnr);
                        per[r.subject].second.push_back(r.ssim);
                    }
                std::vector<double> p, s;
                for (const auto& [id, v] : per) {
                    p.push_back(summarize(v.first).mean);
                    s.push_back(summarize(v.second).mean);
                }
                const auto sp = summarize(p), ss = summarize(s);
                w.row(method, to_string(shell), "psnr", sp.mean, sp.sd, sp.n);
                w.row(method, to_string(shell), "ssim", ss.mean, ss.sd, ss.n);
            }
        w.close();
    }
    {
        CsvWriter w(dir / "distance_curve.csv", "subject_id,side,distance_mm,slice,psnr,ssim");
        for (const auto& r : rep.curve)
            w.row(r.subject, to_string(r.side), r.point.distance_mm, r.point.slice, r.point.psnr, r.point.ssim);
        w.close();
    }
    {
        CsvWriter w(dir / "adc_directions.csv", "subject_id,direction,volume,psnr");
        for (const auto& r : rep.adc)
            w.row(r.subject, r.direction, r.volume, r.psnr);
        w.close();
    }
    {
        CsvWriter w(dir / "dice.csv",
                    "subject_id,structure,dice_incomplete,dice_imputed,acquired_incomplete,acquired_imputed,"
                    "missing_incomplete,missing_imputed");
        for (const auto& r : rep.dice)
            w.row(r.subject, r.structure, r.incomplete, r.imputed, r.incomplete_split.acquired,
                  r.imputed_split.acquired, r.incomplete_split.imputed, r.imputed_split.imputed);
        w.close();
    }
    {
        CsvWriter w(dir / "structure_lengths.csv", "subject_id,structure,length_ref_mm,length_incomplete_mm,"
                                                   "length_imputed_mm");
        for (const auto& r : rep.dice)
            w.row(r.subject, r.structure, r.length_ref_mm, r.length_incomplete_mm, r.length_imputed_mm);
        w.close();
    }
    {
        CsvWriter w(dir / "bland_altman.csv", "structure,comparison,n,mean_diff,sd_diff,loa_low,loa_high");
        std::map<std::string, std::vector<const DiceRow*>> by;
        for (const auto& r : rep.dice)
            by[r.structure].push_back(&r);
        for (const auto& [name, rows] : by) {
            if (rows.size() < 2)
                continue;
            std::vector<double> ref, inc, imp;
            for (const auto* r : rows) {
                ref.push_back(r->length_ref_mm);
                inc.push_back(r->length_incomplete_mm);
                imp.push_back(r->length_imputed_mm);
            }
            for (auto [label, test] : {std::pair{"incomplete", &inc}, std::pair{"imputed", &imp}}) {
                const auto ba = bland_altman(ref, *test);
                w.row(name, label, rows.size(), ba.mean_diff, ba.sd_diff, ba.loa_low, ba.loa_high);
            }
        }
        w.close();
    }
    {
        CsvWriter w(dir / "stats.csv", "test,comparison,statistic,p,df");
        w.row("spearman", "distance_vs_psnr", rep.distance_spearman.statistic, rep.distance_spearman.p,
              rep.distance_spearman.df);
        w.row("kruskal_wallis", "adc_psnr_by_direction", rep.adc_kruskal.statistic, rep.adc_kruskal.p,
              rep.adc_kruskal.df);
        w.row("paired_t", "dice_imputed_vs_incomplete", rep.dice_paired_t.statistic, rep.dice_paired_t.p,
              rep.dice_paired_t.df);
        w.row("paired_t", "psnr_imputed_vs_baseline", rep.psnr_paired_t.statistic, rep.psnr_paired_t.p,
              rep.psnr_paired_t.df);
        w.close();
    }
}

/// Study-level statistics over the collected rows. Tests that lack data are
/// left at their zero defaults with p = NaN.
inline void fill_statistics(EvaluationReport& rep)
{
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rep.distance_spearman = rep.adc_kruskal = rep.dice_paired_t = rep.psnr_paired_t = {0, nan, 0};
    std::vector<double> dist, ps;
    for (const auto& r : rep.curve)
        if (std::isfinite(r.point.psnr)) {
            dist.push_back(r.point.distance_mm);
            ps.push_back(r.point.psnr);
        }
    if (dist.size() >= 3)
        rep.distance_spearman = spearman(dist, ps);

    std::map<int, std::vector<double>> groups;
    for (const auto& r : rep.adc)
        if (std::isfinite(r.psnr))
            groups[r.direction].push_back(r.psnr);
    if (groups.size() >= 2) {
        std::vector<std::vector<double>> g;
        for (auto& [d, v] : groups)
            g.push_back(v);
        rep.adc_kruskal = kruskal_wallis(g);
    }

    std::vector<double> a, b;
    for (const auto& r : rep.dice) {
        a.push_back(r.imputed);
        b.push_back(r.incomplete);
    }
    if (a.size() >= 2)
        rep.dice_paired_t = paired_t_test(a, b);

    // per-subject mean PSNR, imputed against baseline
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per;
    for (const auto& r : rep.images)
        if (std::isfinite(r.psnr))
            (r.method == "imputed" ? per[r.subject].first : per[r.subject].second).push_back(r.psnr);
    a.clear();
    b.clear();
    for (const auto& [id, v] : per)
        if (!v.first.empty() && !v.second.empty()) {
            a.push_back(summarize(v.first).mean);
            b.push_back(summarize(v.second).mean);
        }
    if (a.size() >= 2)
        rep.psnr_paired_t = paired_t_test(a, b);
}

/// Compares the test rows of --manifest (all rows when there is no test
/// split) with <id>_fovx.nii.gz and <id>_fovx_acquired.nii.gz from the test
/// directory, writing every report CSV into --out.
inline EvaluationReport cmd_evaluate(const RunConfig& c)
{
    c.validate();
    require_manifest(c);
    require_out(c);
    if (c.test_dir.empty())
        throw config_error("evaluate needs --test, the directory written by impute");
    const auto m = load_manifest(c.manifest);
    auto rows = m.of(Split::test);
    if (rows.empty())
        for (const auto& r : m.rows)
            rows.push_back(&r);
    for (const auto* r : rows)
        for (const auto& p : {imputed_path(c.test_dir, r->subject_id), acquired_path(c.test_dir, r->subject_id)})
            if (!fs::is_regular_file(p))
                throw data_error("no imputed output for " + r->subject_id + ": " + p.string());
    make_dir(c.out);

    std::vector<evaluate_detail::SubjectResult> per(rows.size());
    parallel_for(rows.size(), c.jobs, [&](std::size_t i) {
        const auto ref = load_subject(*rows[i], c.thresholds, true);
        auto test = read_nifti_study(imputed_path(c.test_dir, rows[i]->subject_id));
        test.gradient = ref.dwi.gradient;
        const auto acq = read_nifti_mask(acquired_path(c.test_dir, rows[i]->subject_id));
        per[i] = evaluate_detail::evaluate_subject(ref, test, acq, c);
    });
    EvaluationReport rep;
    for (auto& s : per) {
        rep.images.insert(rep.images.end(), s.images.begin(), s.images.end());
        rep.curve.insert(rep.curve.end(), s.curve.begin(), s.curve.end());
        rep.adc.insert(rep.adc.end(), s.adc.begin(), s.adc.end());
        rep.dice.insert(rep.dice.end(), s.dice.begin(), s.dice.end());
    }
    fill_statistics(rep);
    write_reports(rep, c.out);
    return rep;
}

// ---------------------------------------------------------------- qa

struct QaRow {
    std::string subject;
    ThicknessEstimate estimate;
};

/// Missing thickness per subject into --out/qa.csv.
inline std::vector<QaRow> cmd_qa(const RunConfig& c)
{
    c.validate();
    require_manifest(c);
    require_out(c);
    const auto m = load_manifest(c.manifest);
    make_dir(c.out);
    std::vector<QaRow> rows(m.rows.size());
    parallel_for(m.rows.size(), c.jobs, [&](std::size_t i) {
        const auto s = load_subject(m.rows[i], c.thresholds);
        rows[i] = {s.id, estimate_cutoff_thickness(compute_acquired_mask(s.dwi, c.thresholds), brain_of(s))};
    });
    CsvWriter w(c.out / "qa.csv", "subject_id,thickness_mm,side,top_mm,bottom_mm");
    for (const auto& r : rows)
        w.row(r.subject, r.estimate.total_mm(), r.estimate.side(), r.estimate.top_mm, r.estimate.bottom_mm);
    w.close();
    return rows;
}

} // namespace fovx::cli
