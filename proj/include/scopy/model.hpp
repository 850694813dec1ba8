#pragma once

// SCOPY: three edge-attributed multi-head graph attention layers, mean/max
// pooling and an MLP head, with hand-written gradients.

#include "scopy/embed.hpp"
#include "scopy/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace scopy::model {

struct ModelConfig {
    int embed_dim = 64;
    int hidden_dim = 64;
    int heads = 4;
    static constexpr int layers = 3;
    int mlp_hidden = 32;
    double learning_rate = 1.0;
    int epochs = 300;
    std::uint64_t seed = 7;
    double threshold = 0.5;
    double leaky_slope = 0.2;
    // joint: one softmax over all neighbours, edge type enters via the score.
    // per_type: a separate softmax per edge type (CDG, DDG, AST), averaged.
    enum class Attention { joint, per_type } attention = Attention::joint;

    /// Throws BadConfig.
    void validate() const;
    int head_width(int layer) const { return layer == layers - 1 ? hidden_dim : hidden_dim / heads; }
    int layer_input(int layer) const { return layer == 0 ? embed_dim : hidden_dim; }
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct HeadParams {
    Mat<S> W;       // out x in
    Vec<S> a_self;  // scores the receiving node
    Vec<S> a_nbr;   // scores the sending node
    Vec<S> a_edge;  // scores the 5-dim edge attribute
};

template <class S>
struct Params {
    std::array<std::vector<HeadParams<S>>, ModelConfig::layers> layers;
    Mat<S> W1;  // mlp_hidden x 2h
    Vec<S> b1;
    Vec<S> w2;
    S b2 = S(0);

    /// Calls f(name, matrix) for every tensor in a fixed order. b2 is passed
    /// as a 1x1 map.
    template <class F>
    void visit(F&& f) {
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (std::size_t h = 0; h < layers[l].size(); ++h) {
                auto p = "layer" + std::to_string(l) + ".head" + std::to_string(h) + ".";
                auto& hp = layers[l][h];
                f(p + "W", Eigen::Map<Mat<S>>(hp.W.data(), hp.W.rows(), hp.W.cols()));
                f(p + "a_self", Eigen::Map<Mat<S>>(hp.a_self.data(), hp.a_self.size(), 1));
                f(p + "a_nbr", Eigen::Map<Mat<S>>(hp.a_nbr.data(), hp.a_nbr.size(), 1));
                f(p + "a_edge", Eigen::Map<Mat<S>>(hp.a_edge.data(), hp.a_edge.size(), 1));
            }
        f(std::string("mlp.W1"), Eigen::Map<Mat<S>>(W1.data(), W1.rows(), W1.cols()));
        f(std::string("mlp.b1"), Eigen::Map<Mat<S>>(b1.data(), b1.size(), 1));
        f(std::string("mlp.w2"), Eigen::Map<Mat<S>>(w2.data(), w2.size(), 1));
        f(std::string("mlp.b2"), Eigen::Map<Mat<S>>(&b2, 1, 1));
    }

    template <class F>
    void visit(F&& f) const {
        const_cast<Params*>(this)->visit([&](const std::string& n, Eigen::Map<Mat<S>> m) {
            f(n, Eigen::Map<const Mat<S>>(m.data(), m.rows(), m.cols()));
        });
    }

    std::size_t size() const {
        std::size_t n = 0;
        visit([&](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }

    Vec<S> flatten() const {
        Vec<S> out(static_cast<Eigen::Index>(size()));
        Eigen::Index k = 0;
        visit([&](const std::string&, const auto& m) {
            out.segment(k, m.size()) = Eigen::Map<const Vec<S>>(m.data(), m.size());
            k += m.size();
        });
        return out;
    }

    void assign(const Vec<S>& flat) {
        if (flat.size() != static_cast<Eigen::Index>(size())) throw ShapeMismatch("flat parameter vector has wrong length");
        Eigen::Index k = 0;
        visit([&](const std::string&, Eigen::Map<Mat<S>> m) {
            Eigen::Map<Vec<S>>(m.data(), m.size()) = flat.segment(k, m.size());
            k += m.size();
        });
    }

    template <class T>
    Params<T> cast() const {
        Params<T> out;
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (const auto& h : layers[l])
                out.layers[l].push_back({h.W.template cast<T>(), h.a_self.template cast<T>(), h.a_nbr.template cast<T>(),
                                         h.a_edge.template cast<T>()});
        out.W1 = W1.template cast<T>();
        out.b1 = b1.template cast<T>();
        out.w2 = w2.template cast<T>();
        out.b2 = static_cast<T>(b2);
        return out;
    }
};

/// Zero tensors of the right shapes.
template <class S>
Params<S> zero_params(const ModelConfig& cfg) {
    cfg.validate();
    Params<S> p;
    for (int l = 0; l < ModelConfig::layers; ++l) {
        int in = cfg.layer_input(l), out = cfg.head_width(l);
        for (int h = 0; h < cfg.heads; ++h)
            p.layers[static_cast<std::size_t>(l)].push_back(
                {Mat<S>::Zero(out, in), Vec<S>::Zero(out), Vec<S>::Zero(out), Vec<S>::Zero(embed::edge_attr_dim)});
    }
    p.W1 = Mat<S>::Zero(cfg.mlp_hidden, 2 * cfg.hidden_dim);
    p.b1 = Vec<S>::Zero(cfg.mlp_hidden);
    p.w2 = Vec<S>::Zero(cfg.mlp_hidden);
    p.b2 = S(0);
    return p;
}

/// Uniform in ±1/sqrt(fan_in), from a 64-bit Mersenne twister; the same
/// (cfg, seed) gives bit-identical parameters on every platform.
template <class S>
Params<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    auto p = zero_params<S>(cfg);
    std::mt19937_64 rng(seed);
    auto uniform = [&](double bound) {
        double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1)
        return static_cast<S>((2.0 * u - 1.0) * bound);
    };
    p.visit([&](const std::string& name, Eigen::Map<Mat<S>> m) {
        double fan_in;
        if (name.ends_with(".W")) fan_in = static_cast<double>(m.cols());
        else if (name.find(".a_") != std::string::npos) fan_in = 2.0 * cfg.head_width(name[5] - '0') + embed::edge_attr_dim;
        else if (name == "mlp.W1" || name == "mlp.b1") fan_in = 2.0 * cfg.hidden_dim;
        else fan_in = cfg.mlp_hidden;
        double bound = 1.0 / std::sqrt(fan_in);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform(bound);
    });
    return p;
}

template <class S>
S elu(S x) {
    using std::exp;
    return x > S(0) ? x : exp(x) - S(1);
}

template <class S>
S sigmoid(S x) {
    using std::exp;
    return x >= S(0) ? S(1) / (S(1) + exp(-x)) : exp(x) / (S(1) + exp(x));
}

/// Binary cross-entropy with the probability clamped to [1e-7, 1 - 1e-7].
template <class S>
S bce_loss(S p, int label) {
    using std::log;
    const S eps = S(1e-7);
    S q = std::clamp(p, eps, S(1) - eps);
    return label ? -log(q) : -log(S(1) - q);
}

/// One attention term: message from `src` to `dst` with attribute row `attr`
/// (-1 for the implicit self loop, whose attribute is zero).
struct AttentionEntry {
    int dst;
    int src;
    int attr;
    int channel;
};

/// Entries grouped by (destination, channel); every group starts with the
/// self loop. `channel_of_edge` assigns each edge to one of `channels` groups.
std::vector<AttentionEntry> attention_entries(int num_nodes, const std::vector<std::pair<int, int>>& edges,
                                              const std::vector<int>& channel_of_edge, int channels);

/// Channel per edge for the configured attention mode.
template <class S>
std::vector<int> edge_channels(const ModelConfig& cfg, const Mat<S>& edge_attr) {
    std::vector<int> ch(static_cast<std::size_t>(edge_attr.rows()), 0);
    if (cfg.attention == ModelConfig::Attention::per_type)
        for (Eigen::Index e = 0; e < edge_attr.rows(); ++e) {
            Eigen::Index arg;
            edge_attr.row(e).tail(3).maxCoeff(&arg);
            ch[static_cast<std::size_t>(e)] = static_cast<int>(arg);
        }
    return ch;
}

inline int channel_count(const ModelConfig& cfg) { return cfg.attention == ModelConfig::Attention::per_type ? 3 : 1; }

template <class S>
struct HeadCache {
    Mat<S> H;         // N x out, transformed inputs
    Vec<S> z;         // pre-activation logits per entry
    Vec<S> alpha;     // attention weights per entry
    Mat<S> agg;       // N x out, before ELU
    Mat<S> out;       // N x out, after ELU
};

template <class S>
struct ForwardResult {
    S probability = S(0.5);
    S logit = S(0);
    std::array<Mat<S>, ModelConfig::layers + 1> activations;  // input, then each layer's output
    std::array<std::vector<HeadCache<S>>, ModelConfig::layers> heads;
    std::vector<AttentionEntry> entries;
    Vec<S> pooled;      // 2h
    Vec<S> mlp_pre;     // W1 g + b1
    Vec<S> mlp_hidden;  // ELU of the above
};

namespace detail {

template <class S>
HeadCache<S> head_forward(const HeadParams<S>& hp, const Mat<S>& X, const Mat<S>& edge_attr,
                          const std::vector<AttentionEntry>& entries, S slope, S scale) {
    HeadCache<S> c;
    const Eigen::Index n = X.rows();
    c.H = X * hp.W.transpose();
    Vec<S> s_self = c.H * hp.a_self;
    Vec<S> s_nbr = c.H * hp.a_nbr;
    const Eigen::Index m = static_cast<Eigen::Index>(entries.size());
    c.z.resize(m);
    c.alpha.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto& e = entries[static_cast<std::size_t>(k)];
        S z = s_self[e.dst] + s_nbr[e.src];
        if (e.attr >= 0) z += edge_attr.row(e.attr).dot(hp.a_edge);
        c.z[k] = z;
    }
    // Softmax over LeakyReLU(z) within each group.
    c.agg = Mat<S>::Zero(n, c.H.cols());
    for (Eigen::Index k = 0; k < m;) {
        Eigen::Index end = k;
        const auto& head = entries[static_cast<std::size_t>(k)];
        int dst = head.dst, channel = head.channel;
        S mx = -std::numeric_limits<S>::infinity();
        while (end < m && entries[static_cast<std::size_t>(end)].dst == dst &&
               entries[static_cast<std::size_t>(end)].channel == channel) {
            S u = c.z[end] > S(0) ? c.z[end] : slope * c.z[end];
            c.alpha[end] = u;
            mx = std::max(mx, u);
            ++end;
        }
        S sum = S(0);
        for (Eigen::Index q = k; q < end; ++q) {
            using std::exp;
            c.alpha[q] = exp(c.alpha[q] - mx);
            sum += c.alpha[q];
        }
        for (Eigen::Index q = k; q < end; ++q) {
            c.alpha[q] /= sum;
            c.agg.row(dst) += scale * c.alpha[q] * c.H.row(entries[static_cast<std::size_t>(q)].src);
        }
        k = end;
    }
    c.out = c.agg.unaryExpr([](S v) { return elu(v); });
    return c;
}

// Gradients of one head given dL/d(out); accumulates into g and returns dL/dX.
template <class S>
Mat<S> head_backward(const HeadParams<S>& hp, const HeadCache<S>& c, const Mat<S>& X, const Mat<S>& edge_attr,
                     const std::vector<AttentionEntry>& entries, S slope, S scale, const Mat<S>& d_out,
                     HeadParams<S>& g) {
    const Eigen::Index n = X.rows();
    const Eigen::Index m = static_cast<Eigen::Index>(entries.size());
    Mat<S> d_agg = d_out;
    for (Eigen::Index i = 0; i < d_agg.rows(); ++i)
        for (Eigen::Index j = 0; j < d_agg.cols(); ++j)
            if (c.agg(i, j) <= S(0)) d_agg(i, j) *= c.out(i, j) + S(1);

    Mat<S> dH = Mat<S>::Zero(n, c.H.cols());
    Vec<S> d_alpha(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto& e = entries[static_cast<std::size_t>(k)];
        d_alpha[k] = scale * d_agg.row(e.dst).dot(c.H.row(e.src));
        dH.row(e.src) += scale * c.alpha[k] * d_agg.row(e.dst);
    }
    Vec<S> ds_self = Vec<S>::Zero(n), ds_nbr = Vec<S>::Zero(n);
    for (Eigen::Index k = 0; k < m;) {
        Eigen::Index end = k;
        const auto& head = entries[static_cast<std::size_t>(k)];
        S dot = S(0);
        while (end < m && entries[static_cast<std::size_t>(end)].dst == head.dst &&
               entries[static_cast<std::size_t>(end)].channel == head.channel) {
            dot += c.alpha[end] * d_alpha[end];
            ++end;
        }
        for (Eigen::Index q = k; q < end; ++q) {
            S du = c.alpha[q] * (d_alpha[q] - dot);
            S dz = c.z[q] > S(0) ? du : slope * du;
            const auto& e = entries[static_cast<std::size_t>(q)];
            ds_self[e.dst] += dz;
            ds_nbr[e.src] += dz;
            if (e.attr >= 0) g.a_edge += dz * edge_attr.row(e.attr).transpose();
        }
        k = end;
    }
    g.a_self += c.H.transpose() * ds_self;
    g.a_nbr += c.H.transpose() * ds_nbr;
    dH += ds_self * hp.a_self.transpose() + ds_nbr * hp.a_nbr.transpose();
    g.W += dH.transpose() * X;
    return dH * hp.W;
}

}  // namespace detail

template <class S>
void check_shapes(const Params<S>& p, const ModelConfig& cfg, const embed::BasicEmbeddedGraph<S>& g) {
    if (g.num_nodes() == 0) throw EmptyGraph("graph has no nodes");
    if (g.node_features.cols() != cfg.embed_dim)
        throw ShapeMismatch("node features have width " + std::to_string(g.node_features.cols()) + ", model expects " +
                            std::to_string(cfg.embed_dim));
    if (g.edge_attr.rows() != g.num_edges() || (g.num_edges() > 0 && g.edge_attr.cols() != embed::edge_attr_dim))
        throw ShapeMismatch("edge attributes do not match edge index");
    for (auto [s, d] : g.edge_index)
        if (s < 0 || d < 0 || s >= g.num_nodes() || d >= g.num_nodes()) throw ShapeMismatch("edge endpoint out of range");
    for (std::size_t l = 0; l < p.layers.size(); ++l)
        if (static_cast<int>(p.layers[l].size()) != cfg.heads) throw ShapeMismatch("head count differs from config");
    if (p.layers[0].front().W.cols() != cfg.embed_dim) throw ShapeMismatch("parameters built for another embedding width");
}

template <class S>
ForwardResult<S> forward(const Params<S>& p, const ModelConfig& cfg, const embed::BasicEmbeddedGraph<S>& g) {
    check_shapes(p, cfg, g);
    const S slope = static_cast<S>(cfg.leaky_slope);
    ForwardResult<S> r;
    const int channels = channel_count(cfg);
    const S scale = S(1) / static_cast<S>(channels);
    r.entries = attention_entries(g.num_nodes(), g.edge_index, edge_channels(cfg, g.edge_attr), channels);
    r.activations[0] = g.node_features;
    for (int l = 0; l < ModelConfig::layers; ++l) {
        const auto& X = r.activations[static_cast<std::size_t>(l)];
        auto& caches = r.heads[static_cast<std::size_t>(l)];
        for (const auto& hp : p.layers[static_cast<std::size_t>(l)])
            caches.push_back(detail::head_forward(hp, X, g.edge_attr, r.entries, slope, scale));
        Mat<S> out;
        if (l < ModelConfig::layers - 1) {
            out.resize(X.rows(), cfg.hidden_dim);
            Eigen::Index col = 0;
            for (const auto& c : caches) {
                out.middleCols(col, c.out.cols()) = c.out;
                col += c.out.cols();
            }
        } else {
            out = Mat<S>::Zero(X.rows(), cfg.hidden_dim);
            for (const auto& c : caches) out += c.out;
            out /= static_cast<S>(cfg.heads);
        }
        r.activations[static_cast<std::size_t>(l) + 1] = std::move(out);
    }
    const auto& Z = r.activations.back();
    r.pooled.resize(2 * cfg.hidden_dim);
    r.pooled.head(cfg.hidden_dim) = Z.colwise().mean().transpose();
    r.pooled.tail(cfg.hidden_dim) = Z.colwise().maxCoeff().transpose();
    r.mlp_pre = p.W1 * r.pooled + p.b1;
    r.mlp_hidden = r.mlp_pre.unaryExpr([](S v) { return elu(v); });
    r.logit = p.w2.dot(r.mlp_hidden) + p.b2;
    r.probability = sigmoid(r.logit);
    return r;
}

/// dL/dparams for one labelled graph; returns the loss.
template <class S>
S backward(const Params<S>& p, const ModelConfig& cfg, const embed::BasicEmbeddedGraph<S>& g, Params<S>& grad) {
    if (!g.label) throw UnlabeledSample("graph " + g.commit_id + " has no label");
    auto r = forward(p, cfg, g);
    const S slope = static_cast<S>(cfg.leaky_slope);
    const S scale = S(1) / static_cast<S>(channel_count(cfg));
    const int y = *g.label;
    const S eps = S(1e-7);
    // Clamped region of the loss is flat.
    S d_logit = (r.probability < eps || r.probability > S(1) - eps) ? S(0) : r.probability - static_cast<S>(y);

    grad.b2 += d_logit;
    grad.w2 += d_logit * r.mlp_hidden;
    Vec<S> d_hidden = d_logit * p.w2;
    Vec<S> d_pre = d_hidden;
    for (Eigen::Index i = 0; i < d_pre.size(); ++i)
        if (r.mlp_pre[i] <= S(0)) d_pre[i] *= r.mlp_hidden[i] + S(1);
    grad.b1 += d_pre;
    grad.W1 += d_pre * r.pooled.transpose();
    Vec<S> d_pooled = p.W1.transpose() * d_pre;

    const auto& Z = r.activations.back();
    const Eigen::Index n = Z.rows();
    Mat<S> dZ = Mat<S>::Zero(n, cfg.hidden_dim);
    for (Eigen::Index j = 0; j < cfg.hidden_dim; ++j) {
        dZ.col(j).array() += d_pooled[j] / static_cast<S>(n);
        Eigen::Index arg;
        Z.col(j).maxCoeff(&arg);
        dZ(arg, j) += d_pooled[cfg.hidden_dim + j];
    }

    for (int l = ModelConfig::layers - 1; l >= 0; --l) {
        const auto& X = r.activations[static_cast<std::size_t>(l)];
        const auto& caches = r.heads[static_cast<std::size_t>(l)];
        Mat<S> dX = Mat<S>::Zero(X.rows(), X.cols());
        Eigen::Index col = 0;
        for (std::size_t h = 0; h < caches.size(); ++h) {
            Mat<S> d_out;
            if (l == ModelConfig::layers - 1) {
                d_out = dZ / static_cast<S>(cfg.heads);
            } else {
                d_out = dZ.middleCols(col, caches[h].out.cols());
                col += caches[h].out.cols();
            }
            dX += detail::head_backward(p.layers[static_cast<std::size_t>(l)][h], caches[h], X, g.edge_attr, r.entries,
                                        slope, scale, d_out, grad.layers[static_cast<std::size_t>(l)][h]);
        }
        dZ = std::move(dX);
    }
    return bce_loss(r.probability, y);
}

template <class S>
S loss(const Params<S>& p, const ModelConfig& cfg, const embed::BasicEmbeddedGraph<S>& g) {
    if (!g.label) throw UnlabeledSample("graph " + g.commit_id + " has no label");
    return bce_loss(forward(p, cfg, g).probability, *g.label);
}

struct TrainHistory {
    std::vector<double> epoch_loss;  // mean loss before each update
};

/// Full-batch gradient descent with a fixed learning rate.
template <class S>
TrainHistory train(Params<S>& p, const std::vector<embed::BasicEmbeddedGraph<S>>& data, const ModelConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw UnlabeledSample("empty training set");
    for (const auto& g : data)
        if (!g.label) throw UnlabeledSample("graph " + g.commit_id + " has no label");
    TrainHistory hist;
    const S lr = static_cast<S>(cfg.learning_rate);
    const S inv = S(1) / static_cast<S>(data.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto grad = zero_params<S>(cfg);
        S total = S(0);
        for (const auto& g : data) total += backward(p, cfg, g, grad);
        hist.epoch_loss.push_back(static_cast<double>(total * inv));
        Vec<S> flat = p.flatten() - lr * inv * grad.flatten();
        p.assign(flat);
    }
    return hist;
}

enum class Label { security, non_security };

struct Prediction {
    std::string commit_id;
    double probability = 0.5;
    Label label = Label::security;
};

inline std::string_view to_string(Label l) { return l == Label::security ? "security" : "non_security"; }

/// security iff probability >= threshold.
template <class S>
Prediction classify(const Params<S>& p, const ModelConfig& cfg, const embed::BasicEmbeddedGraph<S>& g, double threshold) {
    double prob = static_cast<double>(forward(p, cfg, g).probability);
    return {g.commit_id, prob, prob >= threshold ? Label::security : Label::non_security};
}

/// Model checkpoint: config, embedder config, seed, parameters and history.
struct Checkpoint {
    ModelConfig config;
    nlohmann::json embedder = {{"kind", "hash"}, {"dim", 64}, {"seed", 0}};
    Params<double> params;
    TrainHistory history;
};

inline constexpr int checkpoint_format_version = 1;

nlohmann::json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace scopy::model
