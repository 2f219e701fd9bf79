// Acceptance gate for the full pipeline. Each numbered criterion prints one
// PASS/FAIL line; the process exits nonzero if any criterion fails. The
// synthetic end-to-end criterion launches the command-line binary named by
// CHANGEFORGE_BIN and trains at desk scale, so a full run takes several
// minutes.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include <changeforge/changeforge.hpp>

#include "oracles.hpp"
#include "testutil.hpp"

using namespace changeforge;
namespace fs = std::filesystem;

namespace {

struct Gate {
    int failures = 0;

    void criterion(int n, const std::string& label, const std::function<void()>& body) {
        try {
            body();
            std::cout << "criterion " << n << ": PASS - " << label << "\n" << std::flush;
        } catch (const std::exception& e) {
            ++failures;
            std::cout << "criterion " << n << ": FAIL - " << label << " (" << e.what()
                      << ")\n"
                      << std::flush;
        }
    }
};

void check(bool ok, const std::string& detail) {
    if (!ok) throw std::runtime_error(detail);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_root() {
    const fs::path root = fs::temp_directory_path() / "changeforge_acceptance";
    return root;
}

fs::path fresh_dir(const std::string& leaf) {
    const fs::path dir = scratch_root() / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

// --- criterion 1: gradient fidelity ---------------------------------------------

Tensor<double> rand_tensor(std::mt19937_64& rng, const Shape& s, double lo = -1.0,
                           double hi = 1.0) {
    Tensor<double> t(s);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

/// Gradient of a scalar-valued builder against central differences over every
/// entry of its single parameter tensor.
template <typename BuildFn>
double op_gradcheck(const Shape& shape, const std::vector<double>& theta, BuildFn&& build) {
    Graph<double> g;
    Tensor<double> t(shape);
    t.data = theta;
    const auto pid = g.param(t);
    const auto loss = build(g, pid);
    g.backward(loss);
    const std::vector<double> analytic = g.grad(pid).data;
    auto f = [&](const std::vector<double>& v) {
        Graph<double> g2;
        Tensor<double> t2(shape);
        t2.data = v;
        const auto p2 = g2.param(t2);
        return g2.value(build(g2, p2)).item();
    };
    return oracles::fd_max_rel_err(f, theta, analytic);
}

std::vector<double> safe_values(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> mag(0.3, 1.2);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> out(n);
    for (double& v : out) v = sign(rng) ? mag(rng) : -mag(rng);
    return out;
}

void run_op_gradchecks() {
    std::mt19937_64 rng(101);
    const Shape xs{1, 2, 6, 6};
    const std::vector<double> x = safe_values(rng, 72);
    const Tensor<double> w_conv = rand_tensor(rng, Shape{3, 2, 3, 3});
    const Tensor<double> w_tconv = rand_tensor(rng, Shape{2, 3, 3, 3});
    const Tensor<double> bias = rand_tensor(rng, Shape{1, 2, 1, 1});
    const Tensor<double> other = rand_tensor(rng, Shape{1, 2, 6, 6}, 1.5, 2.5);

    struct Case {
        const char* name;
        std::function<Graph<double>::Id(Graph<double>&, Graph<double>::Id)> build;
    };
    const std::vector<Case> cases = {
        {"conv2d/zeros", [&](Graph<double>& g, auto p) {
             return g.mean_reduce(g.tanh(g.conv2d(p, g.input(w_conv), 2, PadMode::zeros, 1)));
         }},
        {"conv2d/reflect", [&](Graph<double>& g, auto p) {
             return g.mean_reduce(g.tanh(g.conv2d(p, g.input(w_conv), 1, PadMode::reflect, 1)));
         }},
        {"tconv2d", [&](Graph<double>& g, auto p) {
             return g.mean_reduce(g.tanh(g.tconv2d(p, g.input(w_tconv), 2, 1, 1)));
         }},
        {"channel_bias", [&](Graph<double>& g, auto p) {
             return g.mean_reduce(g.tanh(g.channel_bias(p, g.input(bias))));
         }},
        {"instance_norm", [&](Graph<double>& g, auto p) {
             return g.mean_reduce(g.tanh(g.instance_norm(p, 1e-5)));
         }},
        {"relu", [&](Graph<double>& g, auto p) { return g.mean_reduce(g.relu(p)); }},
        {"leaky_relu", [&](Graph<double>& g, auto p) {
             return g.mean_reduce(g.leaky_relu(p, 0.2));
         }},
        {"tanh", [&](Graph<double>& g, auto p) { return g.mean_reduce(g.tanh(p)); }},
        {"sigmoid", [&](Graph<double>& g, auto p) { return g.mean_reduce(g.sigmoid(p)); }},
        {"log", [&](Graph<double>& g, auto p) {
             return g.mean_reduce(g.log(g.sigmoid(p)));
         }},
        {"add+scalar_mul", [&](Graph<double>& g, auto p) {
             return g.mean_reduce(g.tanh(g.add(g.scalar_mul(p, 0.6), g.input(other))));
         }},
        {"l1_distance", [&](Graph<double>& g, auto p) {
             return g.l1_distance(g.tanh(p), g.input(other)); // targets > 1 keep |.| smooth
         }},
        {"square_distance", [&](Graph<double>& g, auto p) {
             return g.square_distance(p, g.input(other));
         }},
    };
    for (const auto& c : cases) {
        const double err = op_gradcheck(xs, x, c.build);
        check(err < 1e-4, std::string(c.name) + " gradient error " + fmt(err));
    }
}

struct DoubleModel {
    GeneratorArch gen_arch{2, 2, 1};
    DiscriminatorArch disc_arch{2, 2, 2};
    ParamStore<double> g, f, dx, dy;
};

/// Full generator-side objective (both adversarial terms plus the weighted
/// cycle term) in 64-bit; optionally returns gradients aligned with the
/// generator stores.
double generator_objective(DoubleModel& m, const Tensor<double>& bx, const Tensor<double>& by,
                           double lambda, bool want_grads,
                           std::vector<Tensor<double>>* grads_g,
                           std::vector<Tensor<double>>* grads_f) {
    Graph<double> g;
    BoundStore<double> bg(g, m.g, true), bf(g, m.f, true);
    BoundStore<double> bdx(g, m.dx, false), bdy(g, m.dy, false);
    const auto x = g.input(bx);
    const auto y = g.input(by);
    const auto fake_y = generator_forward(g, bg, "g", x, m.gen_arch);
    const auto fake_x = generator_forward(g, bf, "f", y, m.gen_arch);
    const auto rec_x = generator_forward(g, bf, "f", fake_y, m.gen_arch);
    const auto rec_y = generator_forward(g, bg, "g", fake_x, m.gen_arch);
    const auto dy_score = discriminator_forward(g, bdy, "dy", fake_y, m.disc_arch);
    const auto dx_score = discriminator_forward(g, bdx, "dx", fake_x, m.disc_arch);
    const auto adv_g =
        g.square_distance(dy_score, g.input(Tensor<double>(g.value(dy_score).shape, 1.0)));
    const auto adv_f =
        g.square_distance(dx_score, g.input(Tensor<double>(g.value(dx_score).shape, 1.0)));
    const auto cyc = g.add(g.l1_distance(rec_x, x), g.l1_distance(rec_y, y));
    const auto objective = g.add(g.add(adv_g, adv_f), g.scalar_mul(cyc, lambda));
    const double value = g.value(objective).item();
    if (want_grads) {
        g.backward(objective);
        auto collect = [](BoundStore<double>& b, const ParamStore<double>& store,
                          std::vector<Tensor<double>>* out) {
            out->clear();
            for (const Tensor<double>* t : b.gradients()) {
                check(t != nullptr, "generator parameter missing gradient");
                out->push_back(*t);
            }
            check(out->size() == store.size(), "gradient count mismatch");
        };
        collect(bg, m.g, grads_g);
        collect(bf, m.f, grads_f);
    }
    return value;
}

void run_objective_gradcheck() {
    DoubleModel m;
    auto rg = make_rng(3, "init/g");
    auto rf = make_rng(3, "init/f");
    auto rdx = make_rng(3, "init/dx");
    auto rdy = make_rng(3, "init/dy");
    init_generator(m.g, "g", m.gen_arch, rg);
    init_generator(m.f, "f", m.gen_arch, rf);
    init_discriminator(m.dx, "dx", m.disc_arch, rdx);
    init_discriminator(m.dy, "dy", m.disc_arch, rdy);

    std::mt19937_64 rng(102);
    const Tensor<double> bx = rand_tensor(rng, Shape{1, 2, 8, 8}, -0.9, 0.9);
    const Tensor<double> by = rand_tensor(rng, Shape{1, 2, 8, 8}, -0.9, 0.9);
    const double lambda = 10.0;

    std::vector<Tensor<double>> gg, gf;
    generator_objective(m, bx, by, lambda, true, &gg, &gf);

    // small step: wide FD windows straddle relu corners in the deep net, and
    // 64-bit precision keeps the roundoff term negligible at this h
    const double h = 1e-6;
    double worst = 0.0;
    auto probe = [&](ParamStore<double>& store, const std::vector<Tensor<double>>& grads) {
        for (std::size_t e = 0; e < store.size(); ++e) {
            auto& entry = store.entries()[e];
            const std::size_t sz = entry.value.data.size();
            // probe a spread of entries in every tensor
            std::vector<std::size_t> picks{0, sz / 3, (2 * sz) / 3, sz - 1};
            std::sort(picks.begin(), picks.end());
            picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
            for (const std::size_t k : picks) {
                const double keep = entry.value.data[k];
                entry.value.data[k] = keep + h;
                const double fp = generator_objective(m, bx, by, lambda, false, nullptr,
                                                      nullptr);
                entry.value.data[k] = keep - h;
                const double fm = generator_objective(m, bx, by, lambda, false, nullptr,
                                                      nullptr);
                entry.value.data[k] = keep;
                const double numeric = (fp - fm) / (2.0 * h);
                const double analytic = grads[e].data[k];
                const double den = std::max({1e-3, std::abs(numeric), std::abs(analytic)});
                worst = std::max(worst, std::abs(numeric - analytic) / den);
            }
        }
    };
    probe(m.g, gg);
    probe(m.f, gf);
    check(worst < 1e-4, "objective gradient error " + fmt(worst));
}

// --- criteria 2-4: detector oracle and invariants --------------------------------

ImagePair random_pair(std::mt19937_64& rng, int bands, int h, int w) {
    ImagePair pair;
    pair.before = make_image(bands, h, w);
    pair.after = make_image(bands, h, w);
    std::normal_distribution<double> noise(0.0, 0.25);
    std::uniform_real_distribution<double> base(0.2, 0.8);
    for (int b = 0; b < bands; ++b) {
        const double mean = base(rng);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const double v = mean + noise(rng);
                pair.before.at(b, r, c) = static_cast<float>(v);
                pair.after.at(b, r, c) = static_cast<float>(0.6 * v + 0.4 * noise(rng) + 0.1);
            }
    }
    return pair;
}

std::vector<double> shrunk_rowmajor(const Eigen::MatrixXd& k, double shrink) {
    const int n = static_cast<int>(k.rows());
    std::vector<double> out(static_cast<std::size_t>(n) * n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            out[static_cast<std::size_t>(r) * n + c] = k(r, c) + (r == c ? shrink : 0.0);
    return out;
}

void run_hacd_oracle() {
    std::mt19937_64 rng(103);
    for (int trial = 0; trial < 100; ++trial) {
        const int bands = 1 + static_cast<int>(rng() % 4);
        const int h = 8 + static_cast<int>(rng() % 9); // up to 16
        const int w = 8 + static_cast<int>(rng() % 9);
        const ImagePair pair = random_pair(rng, bands, h, w);
        const GaussianChangeModel m = fit_gaussian(pair);
        const std::vector<double> inv_x =
            oracles::gauss_jordan_inverse(shrunk_rowmajor(m.k_x, m.shrink_x), bands);
        const std::vector<double> inv_y =
            oracles::gauss_jordan_inverse(shrunk_rowmajor(m.k_y, m.shrink_y), bands);
        const std::vector<double> inv_z =
            oracles::gauss_jordan_inverse(shrunk_rowmajor(m.k_z, m.shrink_z), 2 * bands);
        const AnomalyMap map = hacd_map(pair, m);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                std::vector<double> dx(bands), dyv(bands), dz(2 * bands);
                for (int k = 0; k < bands; ++k) {
                    dx[k] = pair.before.at(k, r, c) - m.mu_x[k];
                    dyv[k] = pair.after.at(k, r, c) - m.mu_y[k];
                    dz[k] = dx[k];
                    dz[bands + k] = dyv[k];
                }
                const double want = oracles::quadratic_form(inv_z, dz) -
                                    oracles::quadratic_form(inv_x, dx) -
                                    oracles::quadratic_form(inv_y, dyv);
                const double got = map.at(r, c);
                const double den = std::max({1e-6, std::abs(want), std::abs(got)});
                check(std::abs(got - want) / den < 1e-8,
                      "pixel mismatch " + fmt(got) + " vs " + fmt(want) + " at trial " +
                          std::to_string(trial));
            }
    }
}

void run_independence_null() {
    std::mt19937_64 rng(104);
    const ImagePair pair = random_pair(rng, 3, 14, 14);
    GaussianChangeModel m = fit_gaussian(pair);
    m.k_z.topRightCorner(3, 3).setZero();
    m.k_z.bottomLeftCorner(3, 3).setZero();
    m.k_x = m.k_z.topLeftCorner(3, 3);
    m.k_y = m.k_z.bottomRightCorner(3, 3);
    m.shrink_x = m.shrink_y = m.shrink_z = 1e-9;
    m.refactor();
    const AnomalyMap map = hacd_map(pair, m);
    double worst = 0.0;
    for (double v : map.values) worst = std::max(worst, std::abs(v));
    check(worst < 1e-8, "max |A| = " + fmt(worst));
}

void run_lcra_dominance() {
    std::mt19937_64 rng(105);
    for (int trial = 0; trial < 100; ++trial) {
        const int bands = 1 + static_cast<int>(rng() % 3);
        const ImagePair pair = random_pair(rng, bands, 10, 10);
        const GaussianChangeModel m = fit_gaussian(pair);
        const AnomalyMap base = hacd_map(pair, m);
        const AnomalyMap r0 = lcra_map(pair, m, 0);
        check(r0.values == base.values, "radius 0 differs bitwise at trial " +
                                            std::to_string(trial));
        for (int radius = 1; radius <= 3; ++radius) {
            const AnomalyMap cur = lcra_map(pair, m, radius);
            for (std::size_t i = 0; i < cur.values.size(); ++i)
                check(cur.values[i] <= base.values[i],
                      "radius " + std::to_string(radius) + " exceeds the plain detector");
        }
    }
}

// --- criterion 5: loss identities -------------------------------------------------

void run_loss_identities() {
    std::mt19937_64 rng(106);
    Tensor<float> x(Shape{1, 2, 4, 4});
    Tensor<float> y(Shape{1, 2, 4, 4});
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (float& v : x.data) v = dist(rng);
    for (float& v : y.data) v = dist(rng);
    check(cycle_loss(x, x, y, y) == 0.0, "identity cycle loss is nonzero");

    TrainConfig cfg;
    cfg.patch_size = 8;
    cfg.base_width = 2;
    cfg.n_res = 1;
    cfg.d_layers = 2;
    cfg.seed = 11;
    cfg.validate();
    NormalizationSpec norm;
    norm.low = {0.0, 0.0};
    norm.high = {1.0, 1.0};
    CycleGanModel model = make_model(2, cfg, norm);
    ReplayBuffer px(cfg.replay_capacity, make_rng(cfg.seed, "pool/x"));
    ReplayBuffer py(cfg.replay_capacity, make_rng(cfg.seed, "pool/y"));
    Tensor<float> bx(Shape{1, 2, 8, 8});
    Tensor<float> by(Shape{1, 2, 8, 8});
    for (float& v : bx.data) v = dist(rng) * 0.9f;
    for (float& v : by.data) v = dist(rng) * 0.9f;
    const LossReport rep = train_step(model, bx, by, cfg, 1e-4, px, py, 0, 0);
    const double want = rep.adv_g + rep.adv_f + cfg.lambda_cyc * rep.cyc;
    check(std::abs(rep.total - want) <= 1e-6 * std::max(1.0, std::abs(want)),
          "loss report total does not reconstruct the objective");

    check(scheduled_lr(2e-4, 0, 1000, 500) == 2e-4, "lr at epoch 0");
    check(scheduled_lr(2e-4, 500, 1000, 500) == 2e-4, "lr at decay start");
    check(std::abs(scheduled_lr(2e-4, 750, 1000, 500) - 1e-4) < 1e-18,
          "lr at the decay midpoint");
    check(scheduled_lr(2e-4, 1000, 1000, 500) == 0.0, "lr at the final epoch");
    for (int e = 0; e < 1000; ++e)
        check(scheduled_lr(2e-4, e, 1000, 500) > 0.0, "lr must stay positive before the end");
}

// --- criterion 6: synthetic end-to-end --------------------------------------------

void run_demo() {
    const fs::path dir = fresh_dir("demo");
    std::cout << "  (training the synthetic demo; this takes a few minutes)\n" << std::flush;
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = testutil::run_cli("demo-synthetic --out " + dir.string() +
                                         " --seed 17 --tiles 200 --epochs 200",
                                     dir / "demo.log");
    const double elapsed = seconds_since(t0);
    if (rc != 0) {
        std::ifstream log(dir / "demo.log");
        std::stringstream tail;
        tail << log.rdbuf();
        const std::string text = tail.str();
        throw std::runtime_error("demo exited with " + std::to_string(rc) + ": " +
                                 text.substr(text.size() > 400 ? text.size() - 400 : 0));
    }
    check(elapsed < 900.0, "demo took " + fmt(elapsed) + " s (budget 900)");

    std::ifstream sf(dir / "summary.json");
    check(static_cast<bool>(sf), "demo summary missing");
    nlohmann::json summary;
    sf >> summary;

    const double drop = summary.at("val_cycle_drop_fraction").get<double>();
    check(drop >= 0.5, "held-out cycle loss fell only " + fmt(100 * drop) + "%");

    const double shift = summary.at("band0_shift_fraction").get<double>();
    check(shift >= 0.7, "band-0 mean moved only " + fmt(100 * shift) +
                            "% of the way to the target domain");

    check(summary.contains("ratio_p50"), "median detection ratio undefined");
    const double ratio = summary.at("ratio_p50").get<double>();
    check(ratio >= 0.0 && ratio <= 1.0, "median detection ratio " + fmt(ratio));
    const double ratio_id = summary.at("ratio_p50_identity").get<double>();
    check(ratio_id == 1.0, "identity-transform control ratio " + fmt(ratio_id));

    std::cout << "  (demo stats: " << fmt(elapsed) << " s, cycle drop " << fmt(100 * drop)
              << "%, band-0 shift " << fmt(100 * shift) << "%, ratio@p50 " << fmt(ratio)
              << ")\n";
}

// --- criterion 7: robust-ratio properties ------------------------------------------

void run_ratio_properties() {
    std::mt19937_64 rng(107);
    std::uniform_int_distribution<int> member(0, 3);
    int cases = 0;
    while (cases < 10000) {
        DetectionSet x, y_super, y_sub, y_disjoint;
        x.height = y_super.height = y_sub.height = y_disjoint.height = 10;
        x.width = y_super.width = y_sub.width = y_disjoint.width = 10;
        for (int r = 0; r < 10; ++r)
            for (int c = 0; c < 10; ++c) {
                const int v = member(rng);
                if (v == 0) {
                    x.pixels.emplace_back(r, c);
                    y_super.pixels.emplace_back(r, c);
                    if (rng() % 2 == 0) y_sub.pixels.emplace_back(r, c);
                } else if (v == 1) {
                    y_super.pixels.emplace_back(r, c);
                    y_disjoint.pixels.emplace_back(r, c);
                }
            }
        if (x.pixels.empty()) {
            DetectionSet empty = x;
            bool threw = false;
            try {
                robust_ratio(empty, y_super);
            } catch (const numeric_error&) {
                threw = true;
            }
            check(threw, "empty original set must be undefined");
            ++cases;
            continue;
        }
        check(robust_ratio(x, x) == 1.0, "self ratio must be 1");
        check(robust_ratio(x, y_super) == 1.0, "containment must give 1");
        check(robust_ratio(x, y_disjoint) == 0.0, "disjoint sets must give 0");
        check(robust_ratio(x, y_sub) <= robust_ratio(x, y_super),
              "monotonicity under containment");
        ++cases;
    }
}

// --- criterion 8: throughput --------------------------------------------------------

void run_throughput() {
    std::mt19937_64 rng(108);
    const int bands = 13, h = 600, w = 600;
    ImagePair pair;
    pair.before = make_image(bands, h, w);
    pair.after = make_image(bands, h, w);
    std::normal_distribution<float> noise(0.0f, 0.2f);
    for (std::size_t i = 0; i < pair.before.data.size(); ++i) {
        const float v = 0.5f + noise(rng);
        pair.before.data[i] = v;
        pair.after.data[i] = 0.7f * v + 0.3f * noise(rng);
    }
    const GaussianChangeModel m = fit_gaussian(pair);

    set_thread_count(1);
    const auto t0 = std::chrono::steady_clock::now();
    const AnomalyMap h1 = hacd_map(pair, m);
    const AnomalyMap l1 = lcra_map(pair, m, 1);
    const double t_serial = seconds_since(t0);
    check(t_serial < 10.0, "single-threaded detector pass took " + fmt(t_serial) + " s");

    const unsigned hw = std::thread::hardware_concurrency();
    const int threads = static_cast<int>(std::min(4u, hw ? hw : 1u));
    set_thread_count(threads > 1 ? threads : 4);
    const auto t1 = std::chrono::steady_clock::now();
    const AnomalyMap h2 = hacd_map(pair, m);
    const AnomalyMap l2 = lcra_map(pair, m, 1);
    const double t_parallel = seconds_since(t1);
    set_thread_count(default_thread_count());

    check(h1.values == h2.values && l1.values == l2.values,
          "thread count changed the map bitwise");
    std::cout << "  (detector pass: " << fmt(t_serial) << " s serial, " << fmt(t_parallel)
              << " s with " << (threads > 1 ? threads : 4) << " workers on " << hw
              << " hardware threads)\n";
    if (hw >= 2)
        check(t_parallel < t_serial, "no speedup from additional workers");
}

// --- criterion 9: determinism ---------------------------------------------------------

void run_determinism() {
    const fs::path dir = fresh_dir("determinism");
    const auto [ds_x, ds_y] = write_synthetic_domains(dir / "data", 12, 91, 12, 2, 2);

    PipelineConfig cfg;
    cfg.dataset_x = (dir / "data" / "manifest_x.json").string();
    cfg.dataset_y = (dir / "data" / "manifest_y.json").string();
    cfg.seed = 123;
    cfg.train.epochs = 2;
    cfg.train.decay_start_epoch = 1;
    cfg.train.patch_size = 8;
    cfg.train.base_width = 2;
    cfg.train.n_res = 1;
    cfg.train.d_layers = 2;
    save_pipeline_config(cfg, dir / "config.json");

    for (const char* run : {"runA", "runB"}) {
        const int rc = testutil::run_cli("train --config " + (dir / "config.json").string() +
                                             " --out " + (dir / run).string(),
                                         dir / (std::string(run) + ".log"));
        check(rc == 0, std::string("training run failed: ") + run);
    }
    check(testutil::same_bytes(dir / "runA" / "loss_history.csv",
                               dir / "runB" / "loss_history.csv"),
          "loss histories differ between identical runs");
    check(testutil::same_bytes(dir / "runA" / "checkpoint_final.cfck",
                               dir / "runB" / "checkpoint_final.cfck"),
          "final checkpoints differ between identical runs");

    const ImagePair pair = synthetic_eval_pair(7, 24, 24, 2);
    save_image(pair.before, (dir / "before.bsq").string());
    save_image(pair.after, (dir / "after.bsq").string());
    for (const char* tag : {"A", "B"}) {
        const int rc = testutil::run_cli(
            "detect --before " + (dir / "before.bsq").string() + " --after " +
                (dir / "after.bsq").string() + " --out " +
                (dir / (std::string("map") + tag + ".bsq")).string() + " --radius 1",
            dir / (std::string("detect") + tag + ".log"));
        check(rc == 0, "detect run failed");
        const int rc2 = testutil::run_cli(
            "evaluate --map1 " + (dir / (std::string("map") + tag + ".bsq")).string() +
                " --map2 " + (dir / (std::string("map") + tag + ".bsq")).string() + " --out " +
                (dir / (std::string("curve") + tag + ".csv")).string(),
            dir / (std::string("eval") + tag + ".log"));
        check(rc2 == 0, "evaluate run failed");
    }
    check(testutil::same_bytes(dir / "mapA.bsq", dir / "mapB.bsq"),
          "anomaly maps differ between identical runs");
    check(testutil::same_bytes(dir / "curveA.csv", dir / "curveB.csv"),
          "curves differ between identical runs");
}

} // namespace

int main() {
    fs::create_directories(scratch_root());
    Gate gate;

    {
        const auto t0 = std::chrono::steady_clock::now();
        gate.criterion(1, "gradient fidelity against central finite differences", [&] {
            run_op_gradchecks();
            run_objective_gradcheck();
            check(seconds_since(t0) < 60.0, "gradient checks exceeded 60 s");
        });
    }
    {
        const auto t0 = std::chrono::steady_clock::now();
        gate.criterion(2, "detector matches the dense-inverse oracle on 100 random pairs",
                       [&] {
                           run_hacd_oracle();
                           check(seconds_since(t0) < 10.0, "oracle sweep exceeded 10 s");
                       });
    }
    gate.criterion(3, "block-diagonal statistics null the anomalousness",
                   [] { run_independence_null(); });
    gate.criterion(4, "co-registration search never exceeds the plain detector",
                   [] { run_lcra_dominance(); });
    gate.criterion(5, "loss identities and the learning-rate schedule",
                   [] { run_loss_identities(); });
    gate.criterion(6, "synthetic end-to-end demo meets its training and detection marks",
                   [] { run_demo(); });
    gate.criterion(7, "robust-ratio properties over ten thousand random set pairs",
                   [] { run_ratio_properties(); });
    gate.criterion(8, "detector throughput and thread-count invariance",
                   [] { run_throughput(); });
    gate.criterion(9, "identical seeds reproduce every artifact byte for byte",
                   [] { run_determinism(); });

    if (gate.failures > 0) {
        std::cout << gate.failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all criteria passed\n";
    return 0;
}
