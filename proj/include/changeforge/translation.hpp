#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "changeforge/autodiff.hpp"
#include "changeforge/errors.hpp"
#include "changeforge/format.hpp"
#include "changeforge/nn.hpp"
#include "changeforge/raster.hpp"
#include "changeforge/rng.hpp"
#include "changeforge/tensor.hpp"

namespace changeforge {

enum class AdversarialMode { least_squares, cross_entropy };

inline std::string to_string(AdversarialMode m) {
    return m == AdversarialMode::least_squares ? "least_squares" : "cross_entropy";
}

inline AdversarialMode adversarial_mode_from_string(const std::string& s) {
    if (s == "least_squares") return AdversarialMode::least_squares;
    if (s == "cross_entropy") return AdversarialMode::cross_entropy;
    throw config_error("unknown adversarial mode: " + s);
}

struct AdversarialLosses {
    double d_loss = 0;
    double g_loss = 0;
};

/// Scalar losses from already-materialized discriminator scores. In
/// cross_entropy mode the scores are probabilities and must lie in (0,1);
/// least_squares accepts raw scores.
template <typename T>
AdversarialLosses adversarial_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores,
                                   AdversarialMode mode) {
    if (real_scores.shape != fake_scores.shape)
        throw data_error("adversarial_loss score shape mismatch " + real_scores.shape.str() +
                         " vs " + fake_scores.shape.str());
    const double n = static_cast<double>(real_scores.data.size());
    AdversarialLosses out;
    if (mode == AdversarialMode::least_squares) {
        double dr = 0, df = 0, gf = 0;
        for (std::size_t i = 0; i < real_scores.data.size(); ++i) {
            const double r = real_scores.data[i];
            const double f = fake_scores.data[i];
            dr += (r - 1.0) * (r - 1.0);
            df += f * f;
            gf += (f - 1.0) * (f - 1.0);
        }
        out.d_loss = dr / n + df / n;
        out.g_loss = gf / n;
        return out;
    }
    double lr = 0, lf = 0, gf = 0;
    for (std::size_t i = 0; i < real_scores.data.size(); ++i) {
        const double r = real_scores.data[i];
        const double f = fake_scores.data[i];
        if (!(r > 0.0 && r < 1.0) || !(f > 0.0 && f < 1.0))
            throw data_error("cross_entropy adversarial_loss requires scores in (0,1)");
        lr += std::log(r);
        lf += std::log(1.0 - f);
        gf += std::log(f);
    }
    out.d_loss = -lr / n - lf / n;
    out.g_loss = -gf / n;
    return out;
}

/// Mean absolute error of both reconstructions, summed.
template <typename T>
double cycle_loss(const Tensor<T>& x, const Tensor<T>& x_rec, const Tensor<T>& y,
                  const Tensor<T>& y_rec) {
    if (x.shape != x_rec.shape)
        throw data_error("cycle_loss shape mismatch " + x.shape.str() + " vs " +
                         x_rec.shape.str());
    if (y.shape != y_rec.shape)
        throw data_error("cycle_loss shape mismatch " + y.shape.str() + " vs " +
                         y_rec.shape.str());
    double ax = 0, ay = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i)
        ax += std::abs(static_cast<double>(x_rec.data[i]) - static_cast<double>(x.data[i]));
    for (std::size_t i = 0; i < y.data.size(); ++i)
        ay += std::abs(static_cast<double>(y_rec.data[i]) - static_cast<double>(y.data[i]));
    return ax / static_cast<double>(x.data.size()) + ay / static_cast<double>(y.data.size());
}

inline double full_objective(double adv_g, double adv_f, double cyc, double lambda) {
    if (!std::isfinite(adv_g) || !std::isfinite(adv_f) || !std::isfinite(cyc))
        throw numeric_error("full_objective requires finite loss parts");
    return adv_g + adv_f + lambda * cyc;
}

struct TrainConfig {
    double lambda_cyc = 10.0;
    int epochs = 200;
    int decay_start_epoch = 100;
    double lr = 2e-4;
    int batch_size = 1;
    int patch_size = 32;
    AdversarialMode mode = AdversarialMode::least_squares;
    int replay_capacity = 50;
    std::uint64_t seed = 17;
    double identity_weight = 0.0; // direct coefficient on the identity-mapping term
    int checkpoint_every = 0;     // epochs between snapshots; 0 keeps only the final one
    bool augment_flips = true;    // random mirroring of training crops
    int base_width = 8;
    int n_res = 2;
    int d_layers = 3;

    void validate() const {
        if (lambda_cyc < 0) throw config_error("lambda_cyc must be nonnegative");
        if (!(lr > 0)) throw config_error("lr must be positive");
        if (epochs < 1) throw config_error("epochs must be at least 1");
        if (decay_start_epoch < 0 || decay_start_epoch > epochs)
            throw config_error("decay_start_epoch must lie in [0, epochs]");
        if (batch_size < 1) throw config_error("batch_size must be at least 1");
        if (patch_size < 8 || patch_size % 4 != 0)
            throw config_error("patch_size must be a multiple of 4 and at least 8");
        if (replay_capacity < 0) throw config_error("replay_capacity must be nonnegative");
        if (identity_weight < 0) throw config_error("identity_weight must be nonnegative");
        if (checkpoint_every < 0) throw config_error("checkpoint_every must be nonnegative");
        if (base_width < 1) throw config_error("base_width must be positive");
        if (n_res < 0) throw config_error("n_res must be nonnegative");
        if (d_layers < 1) throw config_error("d_layers must be at least 1");
    }
};

struct LossReport {
    int epoch = 0;
    int step = 0;
    double adv_g = 0;  // generator-side loss against D_Y
    double adv_f = 0;  // generator-side loss against D_X
    double d_x_loss = 0;
    double d_y_loss = 0;
    double cyc = 0;
    double total = 0;  // adv_g + adv_f + lambda * cyc

    bool finite() const {
        return std::isfinite(adv_g) && std::isfinite(adv_f) && std::isfinite(d_x_loss) &&
               std::isfinite(d_y_loss) && std::isfinite(cyc) && std::isfinite(total);
    }
};

/// Pool of previously generated images that stabilizes discriminator updates:
/// once full, each incoming image either passes through or swaps with a
/// random resident at even odds.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::mt19937_64 rng)
        : capacity_(capacity), rng_(std::move(rng)) {}

    Tensor<float> swap_in(Tensor<float> img) {
        if (capacity_ == 0) return img;
        if (items_.size() < capacity_) {
            items_.push_back(img);
            return img;
        }
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < 0.5) {
            std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
            const std::size_t i = pick(rng_);
            Tensor<float> out = std::move(items_[i]);
            items_[i] = std::move(img);
            return out;
        }
        return img;
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    std::vector<Tensor<float>> items_;
    std::mt19937_64 rng_;
};

/// Weights and shape descriptors of the full translation ensemble
/// (generators g: X->Y, f: Y->X and the patch discriminators dx, dy).
struct CycleGanModel {
    GeneratorArch gen_arch;
    DiscriminatorArch disc_arch;
    AdversarialMode mode = AdversarialMode::least_squares;
    NormalizationSpec norm;
    ParamStore<float> g, f, dx, dy;
};

inline CycleGanModel make_model(int channels, const TrainConfig& cfg,
                                NormalizationSpec norm) {
    if (channels < 1) throw config_error("model needs at least one channel");
    CycleGanModel m;
    m.gen_arch = GeneratorArch{channels, cfg.base_width, cfg.n_res};
    m.disc_arch = DiscriminatorArch{channels, cfg.base_width, cfg.d_layers};
    m.mode = cfg.mode;
    m.norm = std::move(norm);
    auto rg = make_rng(cfg.seed, "init/g");
    auto rf = make_rng(cfg.seed, "init/f");
    auto rdx = make_rng(cfg.seed, "init/dx");
    auto rdy = make_rng(cfg.seed, "init/dy");
    init_generator(m.g, "g", m.gen_arch, rg);
    init_generator(m.f, "f", m.gen_arch, rf);
    init_discriminator(m.dx, "dx", m.disc_arch, rdx);
    init_discriminator(m.dy, "dy", m.disc_arch, rdy);
    return m;
}

namespace detail {

/// Generator-side adversarial term on fake scores (scalar node).
inline Graph<float>::Id gen_adv_node(Graph<float>& g, Graph<float>::Id fake_scores,
                                     AdversarialMode mode) {
    const Shape s = g.value(fake_scores).shape;
    if (mode == AdversarialMode::least_squares)
        return g.square_distance(fake_scores, g.input(Tensor<float>(s, 1.0f)));
    return g.scalar_mul(g.mean_reduce(g.log(g.sigmoid(fake_scores))), -1.0f);
}

/// Discriminator loss on real + fake scores (scalar node).
inline Graph<float>::Id disc_adv_node(Graph<float>& g, Graph<float>::Id real_scores,
                                      Graph<float>::Id fake_scores, AdversarialMode mode) {
    const Shape s = g.value(real_scores).shape;
    if (mode == AdversarialMode::least_squares)
        return g.add(g.square_distance(real_scores, g.input(Tensor<float>(s, 1.0f))),
                     g.square_distance(fake_scores, g.input(Tensor<float>(s, 0.0f))));
    const auto real_term = g.scalar_mul(g.mean_reduce(g.log(g.sigmoid(real_scores))), -1.0f);
    const auto fake_term = g.scalar_mul(
        g.mean_reduce(g.log(g.sigmoid(g.scalar_mul(fake_scores, -1.0f)))), -1.0f);
    return g.add(real_term, fake_term);
}

inline Tensor<float> batch_slice(const Tensor<float>& batch, int sample) {
    const Shape s = batch.shape;
    Tensor<float> out(Shape{1, s.c, s.h, s.w});
    const std::size_t count = out.data.size();
    std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(count) * sample, count,
                out.data.begin());
    return out;
}

inline void batch_insert(Tensor<float>& batch, int sample, const Tensor<float>& img) {
    const std::size_t count = img.data.size();
    std::copy_n(img.data.begin(), count,
                batch.data.begin() + static_cast<std::ptrdiff_t>(count) * sample);
}

} // namespace detail

/// One alternating update: generators first (adversarial + cycle terms), then
/// each discriminator on replay-buffered fakes. The returned report holds the
/// losses measured before any weights moved.
inline LossReport train_step(CycleGanModel& m, const Tensor<float>& batch_x,
                             const Tensor<float>& batch_y, const TrainConfig& cfg, double lr,
                             ReplayBuffer& pool_x, ReplayBuffer& pool_y, int epoch, int step) {
    if (batch_x.shape != batch_y.shape)
        throw data_error("train_step batch shape mismatch " + batch_x.shape.str() + " vs " +
                         batch_y.shape.str());
    if (batch_x.shape.c != m.gen_arch.channels)
        throw data_error("train_step batch has " + std::to_string(batch_x.shape.c) +
                         " channels, model expects " + std::to_string(m.gen_arch.channels));
    const AdamConfig adam{lr, 0.5, 0.999, 1e-8};
    LossReport report;
    report.epoch = epoch;
    report.step = step;

    Tensor<float> fake_x_val, fake_y_val;
    {
        Graph<float> ga;
        BoundStore<float> bg(ga, m.g, true), bf(ga, m.f, true);
        BoundStore<float> bdx(ga, m.dx, false), bdy(ga, m.dy, false);
        const auto x = ga.input(batch_x);
        const auto y = ga.input(batch_y);
        const auto fake_y = generator_forward(ga, bg, "g", x, m.gen_arch);
        const auto fake_x = generator_forward(ga, bf, "f", y, m.gen_arch);
        const auto rec_x = generator_forward(ga, bf, "f", fake_y, m.gen_arch);
        const auto rec_y = generator_forward(ga, bg, "g", fake_x, m.gen_arch);
        const auto adv_g = detail::gen_adv_node(
            ga, discriminator_forward(ga, bdy, "dy", fake_y, m.disc_arch), m.mode);
        const auto adv_f = detail::gen_adv_node(
            ga, discriminator_forward(ga, bdx, "dx", fake_x, m.disc_arch), m.mode);
        const auto cyc = ga.add(ga.l1_distance(rec_x, x), ga.l1_distance(rec_y, y));
        auto objective =
            ga.add(ga.add(adv_g, adv_f), ga.scalar_mul(cyc, static_cast<float>(cfg.lambda_cyc)));
        if (cfg.identity_weight > 0) {
            const auto idt =
                ga.add(ga.l1_distance(generator_forward(ga, bg, "g", y, m.gen_arch), y),
                       ga.l1_distance(generator_forward(ga, bf, "f", x, m.gen_arch), x));
            objective = ga.add(objective, ga.scalar_mul(
                                              idt, static_cast<float>(cfg.identity_weight)));
        }
        report.adv_g = ga.value(adv_g).item();
        report.adv_f = ga.value(adv_f).item();
        report.cyc = ga.value(cyc).item();
        report.total = full_objective(report.adv_g, report.adv_f, report.cyc, cfg.lambda_cyc);
        fake_y_val = ga.value(fake_y);
        fake_x_val = ga.value(fake_x);
        ga.backward(objective);
        adam_step(m.g, bg.gradients(), adam);
        adam_step(m.f, bf.gradients(), adam);
    }

    // route the detached fakes through the replay buffers sample by sample
    const int b = batch_x.shape.n;
    Tensor<float> pooled_y = fake_y_val;
    Tensor<float> pooled_x = fake_x_val;
    for (int s = 0; s < b; ++s) {
        detail::batch_insert(pooled_y, s, pool_y.swap_in(detail::batch_slice(fake_y_val, s)));
        detail::batch_insert(pooled_x, s, pool_x.swap_in(detail::batch_slice(fake_x_val, s)));
    }

    {
        Graph<float> gd;
        BoundStore<float> bdy(gd, m.dy, true);
        const auto real = discriminator_forward(gd, bdy, "dy", gd.input(batch_y), m.disc_arch);
        const auto fake =
            discriminator_forward(gd, bdy, "dy", gd.input(pooled_y), m.disc_arch);
        const auto loss = detail::disc_adv_node(gd, real, fake, m.mode);
        report.d_y_loss = gd.value(loss).item();
        gd.backward(loss);
        adam_step(m.dy, bdy.gradients(), adam);
    }
    {
        Graph<float> gd;
        BoundStore<float> bdx(gd, m.dx, true);
        const auto real = discriminator_forward(gd, bdx, "dx", gd.input(batch_x), m.disc_arch);
        const auto fake =
            discriminator_forward(gd, bdx, "dx", gd.input(pooled_x), m.disc_arch);
        const auto loss = detail::disc_adv_node(gd, real, fake, m.mode);
        report.d_x_loss = gd.value(loss).item();
        gd.backward(loss);
        adam_step(m.dx, bdx.gradients(), adam);
    }

    if (!report.finite())
        throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(step));
    return report;
}

inline Tensor<float> image_to_tensor(const MultibandImage& img) {
    Tensor<float> t(Shape{1, img.bands, img.height, img.width});
    t.data = img.data;
    return t;
}

inline MultibandImage tensor_to_image(const Tensor<float>& t,
                                      std::vector<std::string> band_names = {}) {
    if (t.shape.n != 1) throw data_error("tensor_to_image expects a single-sample tensor");
    MultibandImage img;
    img.bands = t.shape.c;
    img.height = t.shape.h;
    img.width = t.shape.w;
    img.data = t.data;
    img.band_names = std::move(band_names);
    return img;
}

namespace detail {

/// Reflect-pad the bottom/right edges so both spatial extents hit a multiple
/// of four (the generator's total stride).
inline Tensor<float> pad_to_stride(const Tensor<float>& t, int multiple, int& pad_h,
                                   int& pad_w) {
    const Shape s = t.shape;
    pad_h = (multiple - s.h % multiple) % multiple;
    pad_w = (multiple - s.w % multiple) % multiple;
    if (pad_h == 0 && pad_w == 0) return t;
    if (pad_h > s.h - 1 || pad_w > s.w - 1)
        throw data_error("image too small to pad for the generator: " + s.str());
    Tensor<float> out(Shape{s.n, s.c, s.h + pad_h, s.w + pad_w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < s.h + pad_h; ++i) {
                const int si = i < s.h ? i : 2 * s.h - 2 - i;
                for (int j = 0; j < s.w + pad_w; ++j) {
                    const int sj = j < s.w ? j : 2 * s.w - 2 - j;
                    out.at(n, c, i, j) = t.at(n, c, si, sj);
                }
            }
    return out;
}

inline Tensor<float> generator_apply(const ParamStore<float>& store, const std::string& prefix,
                                     const GeneratorArch& arch, const Tensor<float>& x) {
    int pad_h = 0, pad_w = 0;
    const Tensor<float> padded = pad_to_stride(x, 4, pad_h, pad_w);
    Graph<float> g;
    BoundStore<float> b(g, store, false);
    const auto out = generator_forward(g, b, prefix, g.input(padded), arch);
    const Tensor<float>& full = g.value(out);
    if (pad_h == 0 && pad_w == 0) return full;
    Tensor<float> cropped(x.shape);
    for (int n = 0; n < x.shape.n; ++n)
        for (int c = 0; c < x.shape.c; ++c)
            for (int i = 0; i < x.shape.h; ++i)
                for (int j = 0; j < x.shape.w; ++j)
                    cropped.at(n, c, i, j) = full.at(n, c, i, j);
    return cropped;
}

inline std::vector<int> tile_starts(int extent, int patch, int stride) {
    std::vector<int> starts;
    if (extent <= patch) {
        starts.push_back(0);
        return starts;
    }
    for (int s = 0; s + patch < extent; s += stride) starts.push_back(s);
    starts.push_back(extent - patch);
    return starts;
}

} // namespace detail

/// Normalize, run the generator (tiled with blended overlaps when the image
/// exceeds the patch size), denormalize. Output shape equals input shape.
inline MultibandImage translate(const MultibandImage& img, const ParamStore<float>& gen_store,
                                const std::string& prefix, const GeneratorArch& arch,
                                const NormalizationSpec& norm, int patch_size = 128,
                                int overlap = 16) {
    img.validate();
    if (img.bands != arch.channels)
        throw data_error("translate: image has " + std::to_string(img.bands) +
                         " bands, generator expects " + std::to_string(arch.channels));
    if (patch_size < 8 || patch_size % 4 != 0)
        throw config_error("translate patch_size must be a multiple of 4 and at least 8");
    if (overlap < 0 || overlap >= patch_size)
        throw config_error("translate overlap must lie in [0, patch_size)");
    if (img.height < 8 || img.width < 8)
        throw data_error("translate needs at least an 8x8 image");

    const Tensor<float> x = image_to_tensor(normalize(img, norm));

    Tensor<float> result(x.shape);
    if (img.height <= patch_size && img.width <= patch_size) {
        result = detail::generator_apply(gen_store, prefix, arch, x);
    } else {
        const int stride = patch_size - overlap;
        const std::vector<int> rows = detail::tile_starts(img.height, patch_size, stride);
        const std::vector<int> cols = detail::tile_starts(img.width, patch_size, stride);
        const int th = std::min(img.height, patch_size);
        const int tw = std::min(img.width, patch_size);
        std::vector<double> acc(x.data.size(), 0.0);
        std::vector<double> wsum(static_cast<std::size_t>(img.height) * img.width, 0.0);
        auto hat = [&](int i, int len) {
            return static_cast<double>(std::min({i + 1, len - i, overlap + 1}));
        };
        for (int r0 : rows)
            for (int c0 : cols) {
                Tensor<float> tile(Shape{1, img.bands, th, tw});
                for (int c = 0; c < img.bands; ++c)
                    for (int i = 0; i < th; ++i)
                        for (int j = 0; j < tw; ++j)
                            tile.at(0, c, i, j) = x.at(0, c, r0 + i, c0 + j);
                const Tensor<float> out =
                    detail::generator_apply(gen_store, prefix, arch, tile);
                for (int i = 0; i < th; ++i)
                    for (int j = 0; j < tw; ++j) {
                        const double w = hat(i, th) * hat(j, tw);
                        wsum[static_cast<std::size_t>(r0 + i) * img.width + (c0 + j)] += w;
                        for (int c = 0; c < img.bands; ++c)
                            acc[(static_cast<std::size_t>(c) * img.height + (r0 + i)) *
                                    img.width +
                                (c0 + j)] += w * out.at(0, c, i, j);
                    }
            }
        for (int c = 0; c < img.bands; ++c)
            for (int i = 0; i < img.height; ++i)
                for (int j = 0; j < img.width; ++j) {
                    const std::size_t pi = static_cast<std::size_t>(i) * img.width + j;
                    result.at(0, c, i, j) = static_cast<float>(
                        acc[(static_cast<std::size_t>(c) * img.height + i) * img.width + j] /
                        wsum[pi]);
                }
    }
    MultibandImage out = tensor_to_image(result, img.band_names);
    return denormalize(out, norm);
}

// --- training loop --------------------------------------------------------------

struct TrainResult {
    std::vector<LossReport> history;
    // epoch -> held-out cycle loss, sampled at intervals through the epoch
    // and averaged, so early-epoch values reflect the whole epoch rather
    // than only its final state
    std::vector<std::pair<int, double>> val_cycle;
    std::filesystem::path final_checkpoint;
};

struct TrainCallbacks {
    // invoked after each epoch with the epoch-mean held-out cycle loss
    // (NaN if no validation tiles) and the epoch's learning rate
    std::function<void(int epoch, double val_cycle, double lr)> on_epoch;
};

namespace detail {

inline Tensor<float> crop_to_patch(const Tensor<float>& t, int patch, int off_h, int off_w) {
    if (t.shape.h == patch && t.shape.w == patch) return t;
    Tensor<float> out(Shape{1, t.shape.c, patch, patch});
    for (int c = 0; c < t.shape.c; ++c)
        for (int i = 0; i < patch; ++i)
            for (int j = 0; j < patch; ++j)
                out.at(0, c, i, j) = t.at(0, c, off_h + i, off_w + j);
    return out;
}

inline Tensor<float> flip_patch(const Tensor<float>& t, bool flip_h, bool flip_w) {
    if (!flip_h && !flip_w) return t;
    const Shape s = t.shape;
    Tensor<float> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j)
                    out.at(n, c, i, j) =
                        t.at(n, c, flip_h ? s.h - 1 - i : i, flip_w ? s.w - 1 - j : j);
    return out;
}

inline double validation_cycle(const CycleGanModel& m,
                               const std::vector<Tensor<float>>& val_x,
                               const std::vector<Tensor<float>>& val_y, int patch) {
    auto domain_mean = [&](const std::vector<Tensor<float>>& tiles, const char* first,
                           const char* second) {
        double acc = 0;
        for (const Tensor<float>& t : tiles) {
            const int off_h = (t.shape.h - patch) / 2;
            const int off_w = (t.shape.w - patch) / 2;
            const Tensor<float> v = crop_to_patch(t, patch, off_h, off_w);
            Graph<float> g;
            BoundStore<float> b1(g, first[0] == 'g' ? m.g : m.f, false);
            BoundStore<float> b2(g, second[0] == 'g' ? m.g : m.f, false);
            const auto in = g.input(v);
            const auto mid = generator_forward(g, b1, first, in, m.gen_arch);
            const auto rec = generator_forward(g, b2, second, mid, m.gen_arch);
            acc += g.value(g.l1_distance(rec, in)).item();
        }
        return acc / static_cast<double>(tiles.size());
    };
    double total = 0;
    if (!val_x.empty()) total += domain_mean(val_x, "g", "f");
    if (!val_y.empty()) total += domain_mean(val_y, "f", "g");
    return total;
}

inline nlohmann::ordered_json checkpoint_context(const CycleGanModel& m,
                                                 const TrainConfig& cfg, int epoch) {
    nlohmann::ordered_json ctx;
    ctx["epoch"] = epoch;
    ctx["arch"] = {{"channels", m.gen_arch.channels},
                   {"base_width", m.gen_arch.base_width},
                   {"n_res", m.gen_arch.n_res},
                   {"d_layers", m.disc_arch.n_layers}};
    ctx["adversarial_mode"] = to_string(m.mode);
    ctx["lambda_cyc"] = cfg.lambda_cyc;
    ctx["seed"] = cfg.seed;
    ctx["normalization"] = {{"low", m.norm.low}, {"high", m.norm.high},
                            {"clamp", m.norm.clamp}};
    return ctx;
}

} // namespace detail

inline void save_model_checkpoint(const CycleGanModel& m, const TrainConfig& cfg, int epoch,
                                  const std::filesystem::path& path) {
    save_checkpoint_file(path, detail::checkpoint_context(m, cfg, epoch),
                         {&m.g, &m.f, &m.dx, &m.dy}, m.g.step_count());
}

inline CycleGanModel load_model_checkpoint(const std::filesystem::path& path) {
    const CheckpointData ck = load_checkpoint_file(path);
    CycleGanModel m;
    try {
        const auto& arch = ck.manifest.at("arch");
        m.gen_arch = GeneratorArch{arch.at("channels").get<int>(),
                                   arch.at("base_width").get<int>(),
                                   arch.at("n_res").get<int>()};
        m.disc_arch = DiscriminatorArch{m.gen_arch.channels, m.gen_arch.base_width,
                                        arch.at("d_layers").get<int>()};
        m.mode = adversarial_mode_from_string(
            ck.manifest.at("adversarial_mode").get<std::string>());
        const auto& nj = ck.manifest.at("normalization");
        m.norm.low = nj.at("low").get<std::vector<double>>();
        m.norm.high = nj.at("high").get<std::vector<double>>();
        m.norm.clamp = nj.at("clamp").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error("checkpoint manifest missing fields in " + path.string() + ": " +
                         e.what());
    }
    m.g = store_from_checkpoint(ck, "g");
    m.f = store_from_checkpoint(ck, "f");
    m.dx = store_from_checkpoint(ck, "dx");
    m.dy = store_from_checkpoint(ck, "dy");
    return m;
}

/// Full training session: epoch loop with the linear lr decay schedule,
/// per-step CSV history, held-out cycle-loss log, periodic checkpoints.
/// The normalization spec is fit over the pooled training tiles of both
/// domains so cross-domain offsets survive into normalized space.
inline TrainResult train(const TileDataset& ds_x, const TileDataset& ds_y,
                         const TrainConfig& cfg, const std::filesystem::path& out_dir,
                         const TrainCallbacks& callbacks = {}) {
    cfg.validate();
    if (ds_x.images.empty() || ds_y.images.empty())
        throw data_error("training requires non-empty datasets for both domains");
    std::filesystem::create_directories(out_dir);

    // fit normalization over the pooled raw training tiles
    std::vector<MultibandImage> raw_x, raw_y;
    for (const auto& p : ds_x.train_paths()) raw_x.push_back(load_image(p));
    for (const auto& p : ds_y.train_paths()) raw_y.push_back(load_image(p));
    if (raw_x.empty() || raw_y.empty())
        throw data_error("training requires at least one non-reserved tile per domain");
    const int bands = raw_x.front().bands;
    std::vector<const MultibandImage*> pooled;
    for (const auto& im : raw_x) pooled.push_back(&im);
    for (const auto& im : raw_y) pooled.push_back(&im);
    const NormalizationSpec norm = fit_normalization(pooled);

    CycleGanModel model = make_model(bands, cfg, norm);

    auto to_tensors = [&](std::vector<MultibandImage>& imgs) {
        std::vector<Tensor<float>> out;
        out.reserve(imgs.size());
        for (auto& im : imgs) {
            if (im.height < cfg.patch_size || im.width < cfg.patch_size)
                throw data_error("training tile smaller than patch_size");
            out.push_back(image_to_tensor(normalize(im, norm)));
            im = MultibandImage{}; // release the raw copy
        }
        return out;
    };
    std::vector<Tensor<float>> train_x = to_tensors(raw_x);
    std::vector<Tensor<float>> train_y = to_tensors(raw_y);
    std::vector<Tensor<float>> val_x, val_y;
    auto load_val = [&](const std::vector<std::string>& paths,
                        std::vector<Tensor<float>>& dst) {
        for (const auto& p : paths) {
            MultibandImage im = load_image(p);
            if (im.height < cfg.patch_size || im.width < cfg.patch_size)
                throw data_error("validation tile smaller than patch_size: " + p);
            dst.push_back(image_to_tensor(normalize(im, norm)));
        }
    };
    load_val(ds_x.validation_paths(), val_x);
    load_val(ds_y.validation_paths(), val_y);

    ReplayBuffer pool_x(static_cast<std::size_t>(cfg.replay_capacity),
                        make_rng(cfg.seed, "pool/x"));
    ReplayBuffer pool_y(static_cast<std::size_t>(cfg.replay_capacity),
                        make_rng(cfg.seed, "pool/y"));

    const int steps_per_epoch =
        static_cast<int>(std::min(train_x.size(), train_y.size())) / cfg.batch_size;
    if (steps_per_epoch < 1)
        throw data_error("not enough training tiles for one batch");

    std::ofstream loss_csv(out_dir / "loss_history.csv");
    if (!loss_csv) throw data_error("cannot write loss history in " + out_dir.string());
    loss_csv << "epoch,step,advG,advF,d_x_loss,d_y_loss,cyc,total,lr\n";
    std::ofstream val_csv(out_dir / "val_cycle.csv");
    if (!val_csv) throw data_error("cannot write validation log in " + out_dir.string());
    val_csv << "epoch,val_cycle\n";

    TrainResult result;
    std::vector<std::size_t> order_x(train_x.size()), order_y(train_y.size());
    std::iota(order_x.begin(), order_x.end(), 0);
    std::iota(order_y.begin(), order_y.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = scheduled_lr(cfg.lr, epoch, cfg.epochs, cfg.decay_start_epoch);
        const std::string tag = std::to_string(epoch);
        {
            auto rx = make_rng(cfg.seed, "epoch/" + tag + "/shuffle_x");
            auto ry = make_rng(cfg.seed, "epoch/" + tag + "/shuffle_y");
            std::shuffle(order_x.begin(), order_x.end(), rx);
            std::shuffle(order_y.begin(), order_y.end(), ry);
        }
        auto crop_rng = make_rng(cfg.seed, "epoch/" + tag + "/crops");
        auto take = [&](const std::vector<Tensor<float>>& tiles,
                        const std::vector<std::size_t>& order, int step, int slot) {
            const Tensor<float>& t = tiles[order[static_cast<std::size_t>(step) *
                                                     cfg.batch_size + slot]];
            int off_h = 0, off_w = 0;
            if (t.shape.h > cfg.patch_size)
                off_h = static_cast<int>(std::uniform_int_distribution<int>(
                    0, t.shape.h - cfg.patch_size)(crop_rng));
            if (t.shape.w > cfg.patch_size)
                off_w = static_cast<int>(std::uniform_int_distribution<int>(
                    0, t.shape.w - cfg.patch_size)(crop_rng));
            Tensor<float> patch = detail::crop_to_patch(t, cfg.patch_size, off_h, off_w);
            if (cfg.augment_flips) {
                const bool fh = std::uniform_int_distribution<int>(0, 1)(crop_rng) == 1;
                const bool fw = std::uniform_int_distribution<int>(0, 1)(crop_rng) == 1;
                patch = detail::flip_patch(patch, fh, fw);
            }
            return patch;
        };
        // the held-out cycle is sampled before the first step and after every
        // val_stride steps; the logged per-epoch value is the mean of those
        // samples, so it tracks the epoch as a whole
        const bool have_val = !val_x.empty() || !val_y.empty();
        const int val_stride = std::max(1, steps_per_epoch / 3);
        double vc_acc = 0;
        int vc_samples = 0;
        auto sample_val = [&] {
            vc_acc += detail::validation_cycle(model, val_x, val_y, cfg.patch_size);
            ++vc_samples;
        };
        if (have_val) sample_val();
        for (int step = 0; step < steps_per_epoch; ++step) {
            Tensor<float> bx(Shape{cfg.batch_size, bands, cfg.patch_size, cfg.patch_size});
            Tensor<float> by(Shape{cfg.batch_size, bands, cfg.patch_size, cfg.patch_size});
            for (int s = 0; s < cfg.batch_size; ++s) {
                detail::batch_insert(bx, s, take(train_x, order_x, step, s));
                detail::batch_insert(by, s, take(train_y, order_y, step, s));
            }
            const LossReport rep =
                train_step(model, bx, by, cfg, lr, pool_x, pool_y, epoch, step);
            loss_csv << rep.epoch << ',' << rep.step << ',' << format_double(rep.adv_g) << ','
                     << format_double(rep.adv_f) << ',' << format_double(rep.d_x_loss) << ','
                     << format_double(rep.d_y_loss) << ',' << format_double(rep.cyc) << ','
                     << format_double(rep.total) << ',' << format_double(lr) << '\n';
            result.history.push_back(rep);
            if (have_val && (step + 1) % val_stride == 0) sample_val();
        }
        double vc = std::numeric_limits<double>::quiet_NaN();
        if (have_val) {
            if (steps_per_epoch % val_stride != 0) sample_val();
            vc = vc_acc / static_cast<double>(vc_samples);
            result.val_cycle.emplace_back(epoch, vc);
            val_csv << epoch << ',' << format_double(vc) << '\n';
        }
        if (callbacks.on_epoch) callbacks.on_epoch(epoch, vc, lr);
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
            epoch + 1 < cfg.epochs) {
            char name[48];
            std::snprintf(name, sizeof(name), "checkpoint_epoch%04d.cfck", epoch + 1);
            save_model_checkpoint(model, cfg, epoch + 1, out_dir / name);
        }
    }
    result.final_checkpoint = out_dir / "checkpoint_final.cfck";
    save_model_checkpoint(model, cfg, cfg.epochs, result.final_checkpoint);
    if (!loss_csv || !val_csv)
        throw data_error("failed writing training logs in " + out_dir.string());
    return result;
}

} // namespace changeforge
