#pragma once

// Adversarial training of the four slice generators. Each step trains one
// (shell, plane) pair in rotation: random subject, volume of that shell and
// slice, a random edge cut zeroes the DWI part of the slab, and the uncut
// center slice is the target.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fovx/error.hpp"
#include "fovx/fov.hpp"
#include "fovx/model.hpp"
#include "fovx/nn/adam.hpp"
#include "fovx/nn/loss.hpp"

namespace fovx {

struct TrainConfig {
    double lambda_l1 = 100.0;
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int batch_size = 1;
    int max_steps = 1000;
    int val_interval = 100;
    double cut_min_mm = 0.0;
    double cut_max_mm = 50.0;
    std::uint64_t seed = 1;
    nn::DiscriminatorConfig discriminator{16, 3, false};
    bool saturating_generator_loss = false;
    // validation: every k-th slice of each plane, one cut per subject
    int val_slice_stride = 4;
    double val_cut_mm = 30.0;
    int val_volumes_per_shell = 2;

    void validate() const
    {
        if (!(lambda_l1 >= 0))
            throw config_error("lambda_l1 must be non-negative");
        if (!(learning_rate > 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw config_error("optimizer hyperparameters out of range");
        if (batch_size < 1 || max_steps < 0 || val_interval < 1)
            throw config_error("batch_size, max_steps and val_interval must be positive");
        if (!(cut_min_mm >= 0 && cut_min_mm <= cut_max_mm && cut_max_mm <= 50))
            throw config_error("cut range must lie within [0, 50] mm");
        if (discriminator.base_width < 1 || discriminator.n_layers < 1)
            throw config_error("discriminator widths must be positive");
        if (val_slice_stride < 1 || val_volumes_per_shell < 1 || !(val_cut_mm > 0))
            throw config_error("validation settings must be positive");
    }
};

/// A normalized-space study ready for training; `region` restricts the
/// validation metric (brain mask, or everything).
struct TrainingSubject {
    std::string id;
    Volume4D dwi;
    Volume3D t1;
    Mask3D region;
};

/// Normalizes and resamples a complete study onto the training grid. The
/// brain mask, when given, becomes the validation region.
inline TrainingSubject make_training_subject(std::string id, const Volume4D& study, const Volume3D& t1,
                                             const Affine& reg_affine, const std::optional<Mask3D>& brain,
                                             Index3 dims, Spacing3 spacing)
{
    auto prep = prepare_study(study, t1, reg_affine, dims, spacing);
    Mask3D region = brain ? resample(*brain, prep.t1.grid) : Mask3D(prep.t1.grid, 1);
    return {std::move(id), std::move(prep.dwi), std::move(prep.t1), std::move(region)};
}

struct LogRow {
    int step = 0;
    double d_loss = 0;
    double g_gan = 0;
    double g_l1 = 0;
    double val_l1_imputed = 0;
    double val_psnr_imputed = 0;
};

struct TrainReport {
    ModelBundle bundle; // best on validation
    std::vector<LogRow> log;
    double initial_val_l1 = 0;
    double best_val_l1 = 0;
    int best_step = 0;
    double seconds = 0;
};

namespace train_detail {

struct ShellIndex {
    std::vector<std::size_t> b0, dw;
    const std::vector<std::size_t>& of(ShellId s) const { return s == ShellId::b0 ? b0 : dw; }
};

inline ShellIndex index_shells(const Volume4D& v, const ShellThresholds& t)
{
    ShellIndex out;
    for (std::size_t i = 0; i < v.size(); ++i)
        (classify_shell(v.gradient.bvals[i], t) == ShellId::b0 ? out.b0 : out.dw).push_back(i);
    return out;
}

/// Slice indices of `plane` whose T1 slice carries signal.
inline std::vector<int> informative_slices(const Volume3D& t1, Plane p)
{
    std::vector<int> out;
    const int count = slice_count(t1.grid, p);
    for (int s = 0; s < count; ++s) {
        const auto sl = extract_slice(t1, p, s);
        if (std::any_of(sl.data.begin(), sl.data.end(), [](float x) { return x != 0.0f; }))
            out.push_back(s);
    }
    if (out.empty())
        for (int s = 0; s < count; ++s)
            out.push_back(s);
    return out;
}

/// Zeroes the DWI channels of a slab over the cut columns (the cut axis is
/// the slab column axis for both planes).
inline void cut_slab(SlabPatch& slab, const FovCut& cut)
{
    if (cut.empty())
        return;
    const int width = 2 * slab.n + 1;
    for (int c = 0; c < width; ++c) {
        float* ch = slab.channels.data() + static_cast<std::size_t>(c) * slab.rows * slab.cols;
        for (int r = 0; r < slab.rows; ++r)
            for (int q = cut.slice_begin; q < cut.slice_end; ++q)
                ch[static_cast<std::size_t>(r) * slab.cols + q] = 0.0f;
    }
}

struct Sample {
    nn::Tensor<float> input;
    nn::Tensor<float> target;
};

struct ValidationItem {
    std::size_t subject;
    std::size_t volume;
    ShellId shell;
    FovCut cut;
};

} // namespace train_detail

class Trainer {
public:
    Trainer(std::vector<TrainingSubject> train, std::vector<TrainingSubject> val, const nn::GeneratorConfig& gcfg,
            const TrainConfig& cfg, const ShellThresholds& t = {})
        : train_(std::move(train)), val_(std::move(val)), cfg_(cfg), thresholds_(t), rng_(cfg.seed)
    {
        cfg.validate();
        gcfg.validate();
        if (train_.empty())
            throw config_error("training set is empty");
        if (val_.empty())
            throw config_error("validation set is empty");
        const GridSpec& grid = train_.front().t1.grid;
        bool has_b0 = false, has_dw = false;
        for (auto* set : {&train_, &val_})
            for (const auto& s : *set) {
                s.dwi.validate();
                require_same_grid(s.dwi.grid(), grid, "training subject");
                require_same_grid(s.t1.grid, grid, "training subject");
                require_same_grid(s.region.grid, grid, "training subject");
                if (s.dwi.gradient.size() != s.dwi.size())
                    throw config_error("subject " + s.id + " lacks a gradient table");
            }
        for (const auto& s : train_) {
            auto idx = train_detail::index_shells(s.dwi, t);
            has_b0 |= !idx.b0.empty();
            has_dw |= !idx.dw.empty();
            shells_.push_back(std::move(idx));
            slices_.push_back({train_detail::informative_slices(s.t1, Plane::sagittal),
                               train_detail::informative_slices(s.t1, Plane::coronal)});
        }
        if (!has_b0 || !has_dw)
            throw config_error("training data must contain both the b0 and the b1300 shell");

        const double z_extent = grid.dims[cut_axis] * grid.spacing[cut_axis];
        if (cfg.cut_max_mm > z_extent || cfg.val_cut_mm > z_extent)
            throw config_error("cut range exceeds the " + std::to_string(z_extent) + " mm training grid");

        bundle_ = make_bundle(gcfg, cfg.seed, grid.dims, grid.spacing, t);
        const int d_in = cfg.discriminator.conditional ? gcfg.in_channels() + 1 : 1;
        for (std::size_t k = 0; k < generator_keys.size(); ++k) {
            std::mt19937_64 drng(cfg.seed * 7777ULL + k);
            auto [s, p] = generator_keys[k];
            Unit u;
            u.g = &bundle_.generator(s, p);
            u.d = nn::Discriminator<float>(cfg.discriminator, d_in, drng);
            units_.push_back(std::move(u));
        }
        nn::AdamConfig ac{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8};
        for (auto& u : units_) {
            u.g_opt = nn::Adam<float>(u.g->params(), ac);
            u.d_opt = nn::Adam<float>(u.d.params(), ac);
        }
        build_validation_set();
    }

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// Runs the configured number of steps. `progress` (optional) sees each
    /// log row as it is produced.
    TrainReport run(const std::function<void(const LogRow&)>& progress = {})
    {
        const auto t0 = std::chrono::steady_clock::now();
        TrainReport rep;
        auto v0 = validate();
        rep.log.push_back({0, 0, 0, 0, v0.first, v0.second});
        if (progress)
            progress(rep.log.back());
        rep.initial_val_l1 = rep.best_val_l1 = v0.first;
        rep.bundle = bundle_;
        double d_acc = 0, gan_acc = 0, l1_acc = 0;
        int n_acc = 0;
        for (int step = 1; step <= cfg_.max_steps; ++step) {
            const auto r = train_step(units_[(step - 1) % units_.size()], (step - 1) % generator_keys.size());
            d_acc += r.d_loss;
            gan_acc += r.g_gan;
            l1_acc += r.g_l1;
            ++n_acc;
            if (step % cfg_.val_interval == 0) {
                auto v = validate();
                rep.log.push_back({step, d_acc / n_acc, gan_acc / n_acc, l1_acc / n_acc, v.first, v.second});
                if (progress)
                    progress(rep.log.back());
                d_acc = gan_acc = l1_acc = 0;
                n_acc = 0;
                if (v.first < rep.best_val_l1) {
                    rep.best_val_l1 = v.first;
                    rep.best_step = step;
                    rep.bundle = bundle_;
                }
            }
        }
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return rep;
    }

    /// Imputed-region mean absolute error and PSNR of the current bundle.
    std::pair<double, double> validate() const
    {
        double abs_sum = 0, sq_sum = 0;
        std::size_t n = 0;
        for (const auto& item : val_items_) {
            const auto& subj = val_[item.subject];
            const auto& vol = subj.dwi.volumes[item.volume];
            for (auto [s, p] : generator_keys) {
                if (s != item.shell)
                    continue;
                const auto& g = bundle_.generator(s, p);
                const int count = slice_count(vol.grid, p);
                for (int c = cfg_.val_slice_stride / 2; c < count; c += cfg_.val_slice_stride) {
                    auto slab = extract_slab(vol, subj.t1, p, c, bundle_.config.n);
                    const Slice2D truth = extract_slice(vol, p, c);
                    const Slice2D reg = extract_slice_mask(subj.region, p, c);
                    bool any = false;
                    for (int r = 0; r < truth.rows && !any; ++r)
                        for (int q = item.cut.slice_begin; q < item.cut.slice_end && !any; ++q)
                            any = reg.at(r, q) != 0;
                    if (!any)
                        continue;
                    train_detail::cut_slab(slab, item.cut);
                    const Slice2D pred = predict_slice(g, slab);
                    for (int r = 0; r < truth.rows; ++r)
                        for (int q = item.cut.slice_begin; q < item.cut.slice_end; ++q)
                            if (reg.at(r, q)) {
                                const double d = static_cast<double>(pred.at(r, q)) - truth.at(r, q);
                                abs_sum += std::abs(d);
                                sq_sum += d * d;
                                ++n;
                            }
                }
            }
        }
        if (n == 0)
            throw data_error("validation set has no imputed-region voxels");
        const double mse = sq_sum / static_cast<double>(n);
        return {abs_sum / static_cast<double>(n), mse > 0 ? 10 * std::log10(1.0 / mse) : psnr_inf()};
    }

    const ModelBundle& current() const { return bundle_; }

private:
    struct Unit {
        SliceGenerator* g = nullptr;
        nn::Discriminator<float> d;
        nn::Adam<float> g_opt, d_opt;
    };

    struct StepLoss {
        double d_loss = 0, g_gan = 0, g_l1 = 0;
    };

    static double psnr_inf() { return std::numeric_limits<double>::infinity(); }

    static Slice2D extract_slice_mask(const Mask3D& m, Plane p, int s)
    {
        Volume3D v(m.grid);
        for (std::size_t i = 0; i < v.data.size(); ++i)
            v.data[i] = m.data[i];
        return extract_slice(v, p, s);
    }

    void build_validation_set()
    {
        std::mt19937_64 vr(cfg_.seed ^ 0x5eedf00dULL);
        for (std::size_t s = 0; s < val_.size(); ++s) {
            const auto& subj = val_[s];
            const auto idx = train_detail::index_shells(subj.dwi, thresholds_);
            const FovCut cut = make_cut(subj.t1.grid, cfg_.val_cut_mm, s % 2 == 0 ? CutSide::top : CutSide::bottom);
            for (ShellId shell : {ShellId::b0, ShellId::b1300}) {
                auto vols = idx.of(shell);
                std::shuffle(vols.begin(), vols.end(), vr);
                const std::size_t take = std::min<std::size_t>(vols.size(), cfg_.val_volumes_per_shell);
                for (std::size_t k = 0; k < take; ++k)
                    val_items_.push_back({s, vols[k], shell, cut});
            }
        }
    }

    train_detail::Sample draw_sample(std::size_t key)
    {
        const auto [shell, plane] = generator_keys[key];
        std::size_t s;
        do {
            s = std::uniform_int_distribution<std::size_t>(0, train_.size() - 1)(rng_);
        } while (shells_[s].of(shell).empty());
        const auto& vols = shells_[s].of(shell);
        const std::size_t v = vols[std::uniform_int_distribution<std::size_t>(0, vols.size() - 1)(rng_)];
        const auto& cands = slices_[s][plane == Plane::sagittal ? 0 : 1];
        const int c = cands[std::uniform_int_distribution<std::size_t>(0, cands.size() - 1)(rng_)];
        const auto [extent, side] = draw_training_cut(rng_, cfg_.cut_min_mm, cfg_.cut_max_mm);
        const auto& vol = train_[s].dwi.volumes[v];
        auto slab = extract_slab(vol, train_[s].t1, plane, c, bundle_.config.n);
        train_detail::cut_slab(slab, make_cut(vol.grid, extent, side));
        const Slice2D truth = extract_slice(vol, plane, c);
        nn::Tensor<float> target(1, truth.rows, truth.cols);
        std::copy(truth.data.begin(), truth.data.end(), target.v.begin());
        return {slab_tensor(slab), std::move(target)};
    }

    nn::Tensor<float> d_input(const nn::Tensor<float>& slab, const nn::Tensor<float>& slice) const
    {
        return cfg_.discriminator.conditional ? nn::concat_channels(slab, slice) : slice;
    }

    /// d_input's gradient restricted to the slice channel.
    nn::Tensor<float> slice_grad(const nn::Tensor<float>& g) const
    {
        if (!cfg_.discriminator.conditional)
            return g;
        nn::Tensor<float> out(1, g.h, g.w);
        std::copy(g.channel(g.c - 1), g.channel(g.c - 1) + g.plane(), out.v.begin());
        return out;
    }

    static void scale_grads(const std::vector<nn::Param<float>*>& ps, float s)
    {
        for (auto* p : ps)
            for (auto& x : p->grad)
                x *= s;
    }

    StepLoss train_step(Unit& u, std::size_t key)
    {
        using nn::LogTerm;
        const int B = cfg_.batch_size;
        const float inv = 1.0f / static_cast<float>(B);
        std::vector<train_detail::Sample> batch;
        std::vector<nn::Tape<float>> g_tapes(B);
        std::vector<nn::Tensor<float>> fakes;
        for (int b = 0; b < B; ++b) {
            batch.push_back(draw_sample(key));
            fakes.push_back(u.g->forward(batch[b].input, &g_tapes[b]));
        }
        StepLoss out;

        // discriminator: maximize log D(real) + log(1 - D(fake))
        u.d.zero_grad();
        for (int b = 0; b < B; ++b) {
            nn::Tape<float> tr, tf;
            const auto lr = u.d.forward(d_input(batch[b].input, batch[b].target), &tr);
            const auto lf = u.d.forward(d_input(batch[b].input, fakes[b]), &tf);
            auto real = nn::mean_log_sigmoid(lr, LogTerm::log_p, -1.0);
            auto fake = nn::mean_log_sigmoid(lf, LogTerm::log_one_minus_p, -1.0);
            u.d.backward(real.grad, tr);
            u.d.backward(fake.grad, tf);
            out.d_loss += (real.value + fake.value) / B;
        }
        auto dps = u.d.params();
        scale_grads(dps, inv);
        u.d_opt.step(dps);

        // generator: adversarial term through the updated D, plus lambda L1
        u.g->zero_grad();
        for (int b = 0; b < B; ++b) {
            nn::Tape<float> tf;
            const auto lf = u.d.forward(d_input(batch[b].input, fakes[b]), &tf);
            auto adv = cfg_.saturating_generator_loss ? nn::mean_log_sigmoid(lf, LogTerm::log_one_minus_p, 1.0)
                                                      : nn::mean_log_sigmoid(lf, LogTerm::log_p, -1.0);
            auto gin = slice_grad(u.d.backward(adv.grad, tf));
            auto l1 = nn::weighted_l1(batch[b].target, fakes[b], cfg_.lambda_l1);
            for (std::size_t i = 0; i < gin.v.size(); ++i)
                gin.v[i] += l1.grad.v[i];
            u.g->backward(gin, g_tapes[b]);
            out.g_gan += adv.value / B;
            out.g_l1 += nn::l1_loss<float>(batch[b].target.v, fakes[b].v) / B;
        }
        auto gps = u.g->params();
        scale_grads(gps, inv);
        u.g_opt.step(gps);
        return out;
    }

    std::vector<TrainingSubject> train_, val_;
    TrainConfig cfg_;
    ShellThresholds thresholds_;
    std::mt19937_64 rng_;
    ModelBundle bundle_;
    std::vector<Unit> units_;
    std::vector<train_detail::ShellIndex> shells_;
    std::vector<std::array<std::vector<int>, 2>> slices_;
    std::vector<train_detail::ValidationItem> val_items_;
};

inline TrainReport train(std::vector<TrainingSubject> train_set, std::vector<TrainingSubject> val_set,
                         const nn::GeneratorConfig& gcfg, const TrainConfig& cfg, const ShellThresholds& t = {},
                         const std::function<void(const LogRow&)>& progress = {})
{
    Trainer tr(std::move(train_set), std::move(val_set), gcfg, cfg, t);
    return tr.run(progress);
}

} // namespace fovx
