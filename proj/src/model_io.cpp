#include "imc/model_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "imc/errors.hpp"

namespace imc {

namespace {

using nlohmann::json;

json encode_real(double v) {
    if (std::isfinite(v)) return v;
    if (v < 0.0) return "-inf";
    if (v > 0.0) return "inf";
    throw InvalidInputError("model save: NaN value");
}

double decode_real(const json& j) {
    if (j.is_number()) return j.get<double>();
    const auto s = j.get<std::string>();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    throw IoError("model load: bad real value '" + s + "'");
}

json encode_matrix(const Matrix& m) {
    json data = json::array();
    for (std::size_t i = 0; i < m.size(); ++i) data.push_back(encode_real(m.data()[i]));
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix decode_matrix(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto& data = j.at("data");
    if (data.size() != m.size()) throw IoError("model load: matrix size mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = decode_real(data[i]);
    return m;
}

json encode_vector(const std::vector<double>& v) {
    json out = json::array();
    for (double x : v) out.push_back(encode_real(x));
    return out;
}

std::vector<double> decode_vector(const json& j) {
    std::vector<double> v;
    v.reserve(j.size());
    for (const auto& x : j) v.push_back(decode_real(x));
    return v;
}

json encode_mlp(const nn::MlpParams& p) {
    json weights = json::array();
    for (const auto& w : p.weights) weights.push_back(encode_matrix(w));
    json biases = json::array();
    for (const auto& b : p.biases) biases.push_back(encode_vector(b));
    return json{{"layer_sizes", p.layer_sizes},
                {"weights", std::move(weights)},
                {"biases", std::move(biases)},
                {"activation", p.activation == Activation::tanh ? "tanh" : "relu"},
                {"n_heads", p.n_heads}};
}

nn::MlpParams decode_mlp(const json& j) {
    nn::MlpParams p;
    p.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    for (const auto& w : j.at("weights")) p.weights.push_back(decode_matrix(w));
    for (const auto& b : j.at("biases")) p.biases.push_back(decode_vector(b));
    p.activation = j.at("activation").get<std::string>() == "tanh" ? Activation::tanh
                                                                   : Activation::relu;
    p.n_heads = j.at("n_heads").get<std::size_t>();
    p.check_consistent();
    return p;
}

json encode_config(const TrainConfig& c) {
    json arch{{"kind", c.arch.kind == ExpertKind::linear ? "linear" : "neural"},
              {"hidden", c.arch.hidden},
              {"multi_head", c.arch.multi_head},
              {"activation", c.arch.activation == Activation::tanh ? "tanh" : "relu"},
              {"obs_dims", c.arch.obs_dims}};
    return json{{"eta", encode_real(c.eta)},
                {"n_components", c.n_components},
                {"sigma_sq", encode_real(c.sigma_sq)},
                {"expert_lr", encode_real(c.expert_lr)},
                {"expert_steps_per_m", c.expert_steps_per_m},
                {"gating_lr", encode_real(c.gating_lr)},
                {"gating_epochs", c.gating_epochs},
                {"gating_hidden", c.gating_hidden},
                {"max_iters", c.max_iters},
                {"epsilon", encode_real(c.epsilon)},
                {"batch_size", c.batch_size},
                {"ridge_lambda", encode_real(c.ridge_lambda)},
                {"seed", c.seed},
                {"arch", std::move(arch)}};
}

TrainConfig decode_config(const json& j) {
    TrainConfig c;
    c.eta = decode_real(j.at("eta"));
    c.n_components = j.at("n_components").get<std::size_t>();
    c.sigma_sq = decode_real(j.at("sigma_sq"));
    c.expert_lr = decode_real(j.at("expert_lr"));
    c.expert_steps_per_m = j.at("expert_steps_per_m").get<std::size_t>();
    c.gating_lr = decode_real(j.at("gating_lr"));
    c.gating_epochs = j.at("gating_epochs").get<std::size_t>();
    c.gating_hidden = j.at("gating_hidden").get<std::vector<std::size_t>>();
    c.max_iters = j.at("max_iters").get<std::size_t>();
    c.epsilon = decode_real(j.at("epsilon"));
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.ridge_lambda = decode_real(j.at("ridge_lambda"));
    c.seed = j.at("seed").get<std::int64_t>();
    const auto& arch = j.at("arch");
    c.arch.kind = arch.at("kind").get<std::string>() == "linear" ? ExpertKind::linear
                                                                 : ExpertKind::neural;
    c.arch.hidden = arch.at("hidden").get<std::vector<std::size_t>>();
    c.arch.multi_head = arch.at("multi_head").get<bool>();
    c.arch.activation = arch.at("activation").get<std::string>() == "tanh" ? Activation::tanh
                                                                           : Activation::relu;
    c.arch.obs_dims = arch.value("obs_dims", std::size_t{0});
    return c;
}

// Experts share nets under multi-head; nets are stored once and referenced
// by index.
json encode_experts(const std::vector<GaussianExpert>& experts, json& nets_out) {
    json experts_j = json::array();
    std::vector<const nn::MlpParams*> nets;
    for (const auto& e : experts) {
        json ej{{"sigma_sq", encode_real(e.sigma_sq)}, {"obs_dims", e.obs_dims}};
        if (e.is_linear()) {
            ej["mean"] = json{{"type", "linear"},
                              {"w", encode_matrix(std::get<LinearMean>(e.mean_model).w)}};
        } else {
            const auto& nm = std::get<NeuralMean>(e.mean_model);
            std::size_t idx = nets.size();
            for (std::size_t i = 0; i < nets.size(); ++i)
                if (nets[i] == nm.net.get()) idx = i;
            if (idx == nets.size()) nets.push_back(nm.net.get());
            ej["mean"] = json{{"type", "neural"}, {"net", idx}, {"head", nm.head}};
        }
        experts_j.push_back(std::move(ej));
    }
    nets_out = json::array();
    for (const auto* n : nets) nets_out.push_back(encode_mlp(*n));
    return experts_j;
}

std::vector<GaussianExpert> decode_experts(const json& experts_j, const json& nets_j) {
    std::vector<std::shared_ptr<nn::MlpParams>> nets;
    for (const auto& n : nets_j) nets.push_back(std::make_shared<nn::MlpParams>(decode_mlp(n)));
    std::vector<GaussianExpert> experts;
    for (const auto& ej : experts_j) {
        GaussianExpert e;
        e.sigma_sq = decode_real(ej.at("sigma_sq"));
        e.obs_dims = ej.value("obs_dims", std::size_t{0});
        const auto& mean = ej.at("mean");
        if (mean.at("type").get<std::string>() == "linear") {
            e.mean_model = LinearMean{decode_matrix(mean.at("w"))};
        } else {
            const auto idx = mean.at("net").get<std::size_t>();
            if (idx >= nets.size()) throw IoError("model load: net index out of range");
            e.mean_model = NeuralMean{nets[idx], mean.at("head").get<std::size_t>()};
        }
        experts.push_back(std::move(e));
    }
    return experts;
}

json encode_gating(const GatingNet& g) {
    std::ostringstream fp;
    fp << std::hex << g.trained_on;
    return json{{"net", encode_mlp(g.net)}, {"trained_on", fp.str()}};
}

GatingNet decode_gating(const json& j) {
    GatingNet g;
    g.net = decode_mlp(j.at("net"));
    g.trained_on = std::stoull(j.at("trained_on").get<std::string>(), nullptr, 16);
    return g;
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << j.dump(1) << '\n';
    if (!f) throw IoError("write failed: " + path.string());
}

json read_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open model: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw IoError("model parse failed: " + std::string(e.what()));
    }
    return j;
}

}  // namespace

void save_imc_model(const std::filesystem::path& path, const ImcModel& model) {
    json nets;
    json experts = encode_experts(model.experts, nets);
    json history = json::array();
    for (const auto& r : model.history)
        history.push_back(json{{"iteration", r.iteration},
                               {"lower_bound", encode_real(r.lower_bound)},
                               {"objective_j", encode_real(r.objective_j)},
                               {"kl_term", encode_real(r.kl_term)},
                               {"active_components", r.active_components},
                               {"component_mass", encode_vector(r.component_mass)}});
    json j{{"format", "imc-model"},
           {"algorithm", "imc"},
           {"config", encode_config(model.config)},
           {"experts", std::move(experts)},
           {"nets", std::move(nets)},
           {"log_curriculum",
            json{{"iteration", model.log_curriculum.iteration},
                 {"log_weights", encode_matrix(model.log_curriculum.log_weights)}}},
           {"history", std::move(history)},
           {"converged", model.converged}};
    if (model.gating.has_value()) j["gating"] = encode_gating(*model.gating);
    write_json(path, j);
}

ImcModel load_imc_model(const std::filesystem::path& path) {
    const json j = read_json(path);
    if (j.value("algorithm", "") != "imc") throw IoError("not an imc model: " + path.string());
    ImcModel m;
    m.config = decode_config(j.at("config"));
    m.experts = decode_experts(j.at("experts"), j.at("nets"));
    m.log_curriculum.iteration = j.at("log_curriculum").at("iteration").get<std::size_t>();
    m.log_curriculum.log_weights = decode_matrix(j.at("log_curriculum").at("log_weights"));
    for (const auto& r : j.at("history"))
        m.history.push_back({r.at("iteration").get<std::size_t>(),
                             decode_real(r.at("lower_bound")),
                             decode_real(r.at("objective_j")), decode_real(r.at("kl_term")),
                             r.at("active_components").get<std::size_t>(),
                             decode_vector(r.at("component_mass"))});
    m.converged = j.at("converged").get<bool>();
    if (j.contains("gating")) m.gating = decode_gating(j.at("gating"));
    return m;
}

void save_em_model(const std::filesystem::path& path, const EmModel& model) {
    json nets;
    json experts = encode_experts(model.experts, nets);
    json history = json::array();
    for (const auto& r : model.history)
        history.push_back(json{{"iteration", r.iteration},
                               {"marginal_log_likelihood",
                                encode_real(r.marginal_log_likelihood)}});
    json j{{"format", "imc-model"},
           {"algorithm", "em"},
           {"config", encode_config(model.config)},
           {"experts", std::move(experts)},
           {"nets", std::move(nets)},
           {"gating_table", encode_matrix(model.gating_table)},
           {"history", std::move(history)},
           {"converged", model.converged}};
    if (model.gating.has_value()) j["gating"] = encode_gating(*model.gating);
    write_json(path, j);
}

EmModel load_em_model(const std::filesystem::path& path) {
    const json j = read_json(path);
    if (j.value("algorithm", "") != "em") throw IoError("not an em model: " + path.string());
    EmModel m;
    m.config = decode_config(j.at("config"));
    m.experts = decode_experts(j.at("experts"), j.at("nets"));
    m.gating_table = decode_matrix(j.at("gating_table"));
    for (const auto& r : j.at("history"))
        m.history.push_back({r.at("iteration").get<std::size_t>(),
                             decode_real(r.at("marginal_log_likelihood"))});
    m.converged = j.at("converged").get<bool>();
    if (j.contains("gating")) m.gating = decode_gating(j.at("gating"));
    return m;
}

std::string model_algorithm(const std::filesystem::path& path) {
    const json j = read_json(path);
    return j.value("algorithm", "");
}

}  // namespace imc
