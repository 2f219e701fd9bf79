#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "changeforge/autodiff.hpp"
#include "changeforge/errors.hpp"
#include "changeforge/tensor.hpp"

namespace changeforge {

inline constexpr double kInstanceNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.2;
inline constexpr double kWeightInitSigma = 0.02;

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named trainable tensors with per-parameter moment accumulators.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> m;
        Tensor<T> v;
    };

    std::size_t add(std::string name, Tensor<T> value) {
        if (index_.count(name))
            throw config_error("duplicate parameter name: " + name);
        Entry e;
        e.name = std::move(name);
        e.m = Tensor<T>(value.shape);
        e.v = Tensor<T>(value.shape);
        e.value = std::move(value);
        entries_.push_back(std::move(e));
        index_.emplace(entries_.back().name, entries_.size() - 1);
        return entries_.size() - 1;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw config_error("unknown parameter: " + name);
        return it->second;
    }

    Entry& at(const std::string& name) { return entries_[index_of(name)]; }
    const Entry& at(const std::string& name) const { return entries_[index_of(name)]; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::int64_t step_count() const { return step_count_; }
    void set_step_count(std::int64_t s) { step_count_ = s; }
    void bump_step() { ++step_count_; }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const Entry& e : entries_) out.add(e.name, e.value.template cast<U>());
        out.set_step_count(step_count_);
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::int64_t step_count_ = 0;
};

/// Adaptive-moment update with bias correction. `grads` is aligned with
/// store.entries(); a null slot leaves that parameter and its moments alone.
/// Any non-finite gradient aborts before any state is touched.
template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<const Tensor<T>*>& grads, double lr,
               double beta1, double beta2, double eps) {
    if (grads.size() != params.size())
        throw config_error("adam_step gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i]) continue;
        if (grads[i]->shape != params.entries()[i].value.shape)
            throw config_error("adam_step gradient shape mismatch for " +
                               params.entries()[i].name);
        if (!grads[i]->all_finite())
            throw numeric_error("non-finite gradient for parameter " +
                                params.entries()[i].name + "; update aborted");
    }
    params.bump_step();
    const double t = static_cast<double>(params.step_count());
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i]) continue;
        auto& e = params.entries()[i];
        const std::vector<T>& g = grads[i]->data;
        for (std::size_t k = 0; k < g.size(); ++k) {
            const double gd = static_cast<double>(g[k]);
            const double m = beta1 * static_cast<double>(e.m.data[k]) + (1.0 - beta1) * gd;
            const double v = beta2 * static_cast<double>(e.v.data[k]) + (1.0 - beta2) * gd * gd;
            e.m.data[k] = static_cast<T>(m);
            e.v.data[k] = static_cast<T>(v);
            const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
            e.value.data[k] = static_cast<T>(static_cast<double>(e.value.data[k]) - update);
        }
    }
}

template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<const Tensor<T>*>& grads,
               const AdamConfig& cfg) {
    adam_step(params, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
}

/// Lazily mirrors store entries into a graph so a parameter used twice in one
/// forward pass maps to a single node (its gradient then accumulates both
/// contributions). `trainable=false` binds frozen copies.
template <typename T>
class BoundStore {
public:
    BoundStore(Graph<T>& g, const ParamStore<T>& store, bool trainable)
        : graph_(g), store_(store), ids_(store.size(), -1), trainable_(trainable) {}

    typename Graph<T>::Id use(const std::string& name) {
        const std::size_t i = store_.index_of(name);
        if (ids_[i] < 0)
            ids_[i] = graph_.leaf(store_.entries()[i].value, trainable_);
        return ids_[i];
    }

    /// Gradient pointers aligned with store entries (null where unused).
    std::vector<const Tensor<T>*> gradients() const {
        std::vector<const Tensor<T>*> out(store_.size(), nullptr);
        if (!trainable_) return out;
        for (std::size_t i = 0; i < ids_.size(); ++i)
            if (ids_[i] >= 0 && graph_.has_grad(ids_[i])) out[i] = &graph_.grad(ids_[i]);
        return out;
    }

private:
    Graph<T>& graph_;
    const ParamStore<T>& store_;
    std::vector<typename Graph<T>::Id> ids_;
    bool trainable_;
};

template <typename T>
Tensor<T> normal_init(Shape shape, std::mt19937_64& rng, double sigma = kWeightInitSigma) {
    Tensor<T> t(shape);
    std::normal_distribution<double> dist(0.0, sigma);
    for (T& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

// --- network shapes -----------------------------------------------------------
//
// Generator: 7x7 conv (reflect) -> two stride-2 3x3 convs -> n_res residual
// blocks -> two stride-2 transposed 3x3 convs -> 7x7 conv (reflect) -> tanh.
// Instance norm + relu after every conv except the output head, so only the
// head carries a bias (a bias feeding instance norm is a no-op).
//
// Discriminator: n_layers stride-2 4x4 convs (zero pad, leaky relu, instance
// norm except the first) and a final stride-1 4x4 conv emitting a patch grid
// of raw scores.

struct GeneratorArch {
    int channels = 3;
    int base_width = 8;
    int n_res = 2;
};

struct DiscriminatorArch {
    int channels = 3;
    int base_width = 8;
    int n_layers = 3;
};

/// Channel width after each generator stage, input to output.
inline std::vector<int> generator_layer_widths(const GeneratorArch& a) {
    std::vector<int> w{a.base_width, 2 * a.base_width, 4 * a.base_width};
    for (int i = 0; i < a.n_res; ++i) w.push_back(4 * a.base_width);
    w.push_back(2 * a.base_width);
    w.push_back(a.base_width);
    w.push_back(a.channels);
    return w;
}

inline std::vector<int> discriminator_layer_widths(const DiscriminatorArch& a) {
    std::vector<int> w;
    for (int i = 0; i < a.n_layers; ++i) w.push_back(a.base_width << i);
    w.push_back(1);
    return w;
}

template <typename T>
void init_generator(ParamStore<T>& store, const std::string& prefix, const GeneratorArch& a,
                    std::mt19937_64& rng) {
    const int b = a.base_width;
    auto w = [&](const std::string& name, int co, int ci, int k) {
        store.add(prefix + "." + name, normal_init<T>(Shape{co, ci, k, k}, rng));
    };
    w("in.w", b, a.channels, 7);
    w("down1.w", 2 * b, b, 3);
    w("down2.w", 4 * b, 2 * b, 3);
    for (int r = 0; r < a.n_res; ++r) {
        w("res" + std::to_string(r) + ".c1.w", 4 * b, 4 * b, 3);
        w("res" + std::to_string(r) + ".c2.w", 4 * b, 4 * b, 3);
    }
    // transposed kernels are laid out (Cin, Cout, KH, KW)
    w("up1.w", 4 * b, 2 * b, 3);
    w("up2.w", 2 * b, b, 3);
    w("out.w", a.channels, b, 7);
    store.add(prefix + ".out.b", Tensor<T>(Shape{1, a.channels, 1, 1}));
}

template <typename T>
void init_discriminator(ParamStore<T>& store, const std::string& prefix,
                        const DiscriminatorArch& a, std::mt19937_64& rng) {
    int c_in = a.channels;
    for (int l = 0; l < a.n_layers; ++l) {
        const int c_out = a.base_width << l;
        store.add(prefix + ".l" + std::to_string(l) + ".w",
                  normal_init<T>(Shape{c_out, c_in, 4, 4}, rng));
        if (l == 0)
            store.add(prefix + ".l0.b", Tensor<T>(Shape{1, c_out, 1, 1}));
        c_in = c_out;
    }
    store.add(prefix + ".out.w", normal_init<T>(Shape{1, c_in, 4, 4}, rng));
    store.add(prefix + ".out.b", Tensor<T>(Shape{1, 1, 1, 1}));
}

template <typename T>
typename Graph<T>::Id generator_forward(Graph<T>& g, BoundStore<T>& p, const std::string& prefix,
                                        typename Graph<T>::Id x, const GeneratorArch& a) {
    using Id = typename Graph<T>::Id;
    const T eps = static_cast<T>(kInstanceNormEps);
    auto block = [&](Id h, const std::string& name, int stride, int pad) {
        h = g.conv2d(h, p.use(prefix + "." + name), stride, PadMode::reflect, pad);
        return g.relu(g.instance_norm(h, eps));
    };
    Id h = block(x, "in.w", 1, 3);
    h = block(h, "down1.w", 2, 1);
    h = block(h, "down2.w", 2, 1);
    for (int r = 0; r < a.n_res; ++r) {
        const std::string rp = prefix + ".res" + std::to_string(r);
        Id t = g.conv2d(h, p.use(rp + ".c1.w"), 1, PadMode::reflect, 1);
        t = g.relu(g.instance_norm(t, eps));
        t = g.conv2d(t, p.use(rp + ".c2.w"), 1, PadMode::reflect, 1);
        t = g.instance_norm(t, eps);
        h = g.add(h, t);
    }
    h = g.tconv2d(h, p.use(prefix + ".up1.w"), 2, 1, 1);
    h = g.relu(g.instance_norm(h, eps));
    h = g.tconv2d(h, p.use(prefix + ".up2.w"), 2, 1, 1);
    h = g.relu(g.instance_norm(h, eps));
    h = g.conv2d(h, p.use(prefix + ".out.w"), 1, PadMode::reflect, 3);
    h = g.channel_bias(h, p.use(prefix + ".out.b"));
    return g.tanh(h);
}

/// Raw patch-grid scores; apply a sigmoid downstream when probabilities are
/// needed (cross-entropy mode).
template <typename T>
typename Graph<T>::Id discriminator_forward(Graph<T>& g, BoundStore<T>& p,
                                            const std::string& prefix, typename Graph<T>::Id x,
                                            const DiscriminatorArch& a) {
    using Id = typename Graph<T>::Id;
    const T eps = static_cast<T>(kInstanceNormEps);
    const T slope = static_cast<T>(kLeakySlope);
    Id h = x;
    for (int l = 0; l < a.n_layers; ++l) {
        const std::string lp = prefix + ".l" + std::to_string(l);
        h = g.conv2d(h, p.use(lp + ".w"), 2, PadMode::zeros, 1);
        if (l == 0)
            h = g.channel_bias(h, p.use(lp + ".b"));
        else
            h = g.instance_norm(h, eps);
        h = g.leaky_relu(h, slope);
    }
    h = g.conv2d(h, p.use(prefix + ".out.w"), 1, PadMode::zeros, 1);
    return g.channel_bias(h, p.use(prefix + ".out.b"));
}

/// lr held at `base` before decay_start, then linear to zero at `epochs`.
inline double scheduled_lr(double base, int epoch, int epochs, int decay_start) {
    if (epoch < decay_start || epochs <= decay_start) return base;
    const double frac = static_cast<double>(epochs - epoch) / (epochs - decay_start);
    return base * std::max(0.0, frac);
}

// --- checkpoint container ------------------------------------------------------
//
// Layout: "CFCK" magic, little-endian u32 manifest byte count, UTF-8 JSON
// manifest, then one float32 little-endian payload per manifest entry in
// order. The manifest carries names, shapes and the optimizer step count plus
// any caller-supplied context (architecture, normalization, ...).

struct CheckpointData {
    nlohmann::ordered_json manifest;
    std::unordered_map<std::string, Tensor<float>> tensors;
};

inline void save_checkpoint_file(const std::filesystem::path& path,
                                 const nlohmann::ordered_json& context,
                                 const std::vector<const ParamStore<float>*>& stores,
                                 std::int64_t step) {
    nlohmann::ordered_json manifest = context;
    manifest["format"] = "changeforge-checkpoint";
    manifest["version"] = 1;
    manifest["step"] = step;
    nlohmann::ordered_json params = nlohmann::ordered_json::array();
    for (const ParamStore<float>* s : stores)
        for (const auto& e : s->entries()) {
            params.push_back({{"name", e.name},
                              {"shape", {e.value.shape.n, e.value.shape.c, e.value.shape.h,
                                         e.value.shape.w}}});
        }
    manifest["params"] = std::move(params);
    const std::string text = manifest.dump();
    if (text.size() > 0xffffffffull)
        throw data_error("checkpoint manifest too large");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open checkpoint for writing: " + path.string());
    out.write("CFCK", 4);
    const std::uint32_t len = static_cast<std::uint32_t>(text.size());
    unsigned char lenb[4] = {static_cast<unsigned char>(len & 0xff),
                             static_cast<unsigned char>((len >> 8) & 0xff),
                             static_cast<unsigned char>((len >> 16) & 0xff),
                             static_cast<unsigned char>((len >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenb), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const ParamStore<float>* s : stores)
        for (const auto& e : s->entries())
            out.write(reinterpret_cast<const char*>(e.value.data.data()),
                      static_cast<std::streamsize>(e.value.data.size() * sizeof(float)));
    if (!out) throw data_error("checkpoint write failed: " + path.string());
}

inline CheckpointData load_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "CFCK")
        throw data_error("not a checkpoint file: " + path.string());
    unsigned char lenb[4];
    in.read(reinterpret_cast<char*>(lenb), 4);
    if (!in) throw data_error("truncated checkpoint header: " + path.string());
    const std::uint32_t len = static_cast<std::uint32_t>(lenb[0]) |
                              (static_cast<std::uint32_t>(lenb[1]) << 8) |
                              (static_cast<std::uint32_t>(lenb[2]) << 16) |
                              (static_cast<std::uint32_t>(lenb[3]) << 24);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw data_error("truncated checkpoint manifest: " + path.string());
    CheckpointData ck;
    try {
        ck.manifest = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad checkpoint manifest in " + path.string() + ": " + e.what());
    }
    if (ck.manifest.value("format", "") != "changeforge-checkpoint")
        throw data_error("unrecognized checkpoint format tag in " + path.string());
    if (!ck.manifest.contains("params") || !ck.manifest["params"].is_array())
        throw data_error("checkpoint manifest missing params list: " + path.string());
    for (const auto& p : ck.manifest["params"]) {
        const std::string name = p.at("name").get<std::string>();
        const auto sh = p.at("shape");
        if (!sh.is_array() || sh.size() != 4)
            throw data_error("bad shape for checkpoint parameter " + name);
        Shape shape{sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>(), sh[3].get<int>()};
        if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0)
            throw data_error("non-positive extent for checkpoint parameter " + name);
        Tensor<float> t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!in) throw data_error("truncated payload for checkpoint parameter " + name);
        if (!t.all_finite())
            throw data_error("non-finite values in checkpoint parameter " + name);
        if (!ck.tensors.emplace(name, std::move(t)).second)
            throw data_error("duplicate checkpoint parameter " + name);
    }
    return ck;
}

/// Rebuild a ParamStore from checkpoint tensors whose names share `prefix`.
inline ParamStore<float> store_from_checkpoint(const CheckpointData& ck,
                                               const std::string& prefix) {
    ParamStore<float> store;
    for (const auto& p : ck.manifest["params"]) {
        const std::string name = p.at("name").get<std::string>();
        if (name.rfind(prefix + ".", 0) == 0)
            store.add(name, ck.tensors.at(name));
    }
    if (store.size() == 0)
        throw data_error("checkpoint has no parameters with prefix " + prefix);
    store.set_step_count(ck.manifest.value("step", std::int64_t{0}));
    return store;
}

} // namespace changeforge
