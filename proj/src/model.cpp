#include "scopy/model.hpp"

#include <fstream>
#include <sstream>

namespace scopy::model {

void ModelConfig::validate() const {
    if (embed_dim <= 0) throw BadConfig("embed_dim must be positive");
    if (hidden_dim <= 0 || heads <= 0) throw BadConfig("hidden_dim and heads must be positive");
    if (hidden_dim % heads != 0)
        throw BadConfig("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by heads " + std::to_string(heads));
    if (mlp_hidden <= 0) throw BadConfig("mlp_hidden must be positive");
    if (epochs < 0) throw BadConfig("epochs must be non-negative");
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw BadConfig("learning_rate must be finite and non-negative");
    if (!std::isfinite(leaky_slope)) throw BadConfig("leaky_slope must be finite");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"embed_dim", c.embed_dim},
            {"hidden_dim", c.hidden_dim},
            {"heads", c.heads},
            {"layers", ModelConfig::layers},
            {"mlp_hidden", c.mlp_hidden},
            {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"threshold", c.threshold},
            {"leaky_slope", c.leaky_slope},
            {"attention", c.attention == ModelConfig::Attention::joint ? "joint" : "per_type"}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw BadConfig("model config must be an object");
    ModelConfig c;
    try {
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        c.heads = j.value("heads", c.heads);
        c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.threshold = j.value("threshold", c.threshold);
        c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
        auto att = j.value("attention", std::string("joint"));
        if (att == "joint") c.attention = ModelConfig::Attention::joint;
        else if (att == "per_type") c.attention = ModelConfig::Attention::per_type;
        else throw BadConfig("unknown attention mode '" + att + "'");
    } catch (const nlohmann::json::exception& e) {
        throw BadConfig(std::string("model config: ") + e.what());
    }
    if (j.contains("layers") && j["layers"] != ModelConfig::layers) throw BadConfig("the model has exactly 3 layers");
    c.validate();
    return c;
}

std::vector<AttentionEntry> attention_entries(int num_nodes, const std::vector<std::pair<int, int>>& edges,
                                              const std::vector<int>& channel_of_edge, int channels) {
    std::vector<std::vector<std::vector<AttentionEntry>>> by(static_cast<std::size_t>(num_nodes),
                                                             std::vector<std::vector<AttentionEntry>>(static_cast<std::size_t>(channels)));
    for (int i = 0; i < num_nodes; ++i)
        for (int c = 0; c < channels; ++c) by[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].push_back({i, i, -1, c});
    for (std::size_t e = 0; e < edges.size(); ++e) {
        auto [s, d] = edges[e];
        int c = channel_of_edge[e];
        by[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)].push_back({d, s, static_cast<int>(e), c});
    }
    std::vector<AttentionEntry> out;
    for (auto& node : by)
        for (auto& group : node) out.insert(out.end(), group.begin(), group.end());
    return out;
}

namespace {

nlohmann::json matrix_json(const Mat<double>& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto r = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

nlohmann::json to_json(const Checkpoint& c) {
    nlohmann::json params = nlohmann::json::object();
    c.params.visit([&](const std::string& name, const auto& m) { params[name] = matrix_json(m); });
    return {{"format_version", checkpoint_format_version},
            {"config", to_json(c.config)},
            {"embedder", c.embedder},
            {"seed", c.config.seed},
            {"params", params},
            {"training_history", {{"epoch_loss", c.history.epoch_loss}}}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format_version", 0) != checkpoint_format_version)
        throw BadConfig("unsupported checkpoint format");
    Checkpoint c;
    c.config = config_from_json(j.at("config"));
    c.embedder = j.value("embedder", c.embedder);
    c.params = zero_params<double>(c.config);
    const auto& params = j.at("params");
    c.params.visit([&](const std::string& name, Eigen::Map<Mat<double>> m) {
        if (!params.contains(name)) throw ShapeMismatch("checkpoint lacks parameter " + name);
        const auto& rows = params[name];
        if (static_cast<Eigen::Index>(rows.size()) != m.rows()) throw ShapeMismatch("parameter " + name + " has wrong row count");
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const auto& r = rows[static_cast<std::size_t>(i)];
            if (static_cast<Eigen::Index>(r.size()) != m.cols()) throw ShapeMismatch("parameter " + name + " has wrong column count");
            for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = r[static_cast<std::size_t>(k)].get<double>();
        }
    });
    if (j.contains("training_history"))
        c.history.epoch_loss = j["training_history"].value("epoch_loss", std::vector<double>{});
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadConfig("cannot write checkpoint " + path);
    out << to_json(c).dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw BadConfig("checkpoint " + path + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace scopy::model
