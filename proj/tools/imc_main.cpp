#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "imc/errors.hpp"
#include "imc/experiment.hpp"

namespace {

imc::ExperimentConfig load_config(const std::string& config_path, const std::string& out_dir,
                                  const std::string& data, const std::string& model) {
    auto cfg = imc::ExperimentConfig::from_kv(imc::KvConfig::parse_file(config_path));
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!data.empty()) cfg.dataset_path = data;
    if (!model.empty()) cfg.model_path = model;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Curriculum-weighted mixture-of-experts training and evaluation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_path, model_path;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file")->required();
        cmd->add_option("--out", out_dir, "output directory (overrides [output] dir)");
    };

    auto* generate = app.add_subcommand("generate", "write a synthetic dataset and manifest");
    add_common(generate);
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    add_common(train);
    train->add_option("--data", data_path, "dataset csv (overrides [train] data)");
    auto* eval = app.add_subcommand("eval", "evaluate a trained model");
    add_common(eval);
    eval->add_option("--model", model_path, "model file (overrides [eval] model)");
    auto* compare = app.add_subcommand("compare", "IMC vs EM over a component/seed grid");
    add_common(compare);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = load_config(config_path, out_dir, data_path, model_path);
        if (generate->parsed()) return imc::cmd_generate(cfg);
        if (train->parsed()) return imc::cmd_train(cfg);
        if (eval->parsed()) return imc::cmd_eval(cfg);
        if (compare->parsed()) return imc::cmd_compare(cfg);
    } catch (const imc::TrainingCollapseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return imc::kExitCollapse;
    } catch (const imc::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return imc::kExitIoError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return imc::kExitIoError;
    }
    return imc::kExitIoError;
}
