// Command-line entry points: generate-data, train, eval, cka.
//
// Exit codes: 0 success, 2 config error, 3 shape/domain error, 4 parse/io
// error, 5 numeric error, 1 anything else.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "scm/dataset.hpp"
#include "scm/train.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw scm::ParseError(path + ": cannot open");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void log_line(const std::string& event, const nlohmann::json& fields) {
    nlohmann::json j = fields;
    j["event"] = event;
    std::cout << j.dump() << "\n";
}

scm::TrainConfig load_config(const std::string& config_path) {
    if (config_path.empty()) return scm::TrainConfig{};
    return scm::train_config_from_json_text(read_file(config_path));
}

int run(int argc, char** argv) {
    CLI::App app{"SCM attention instance-segmentation toolkit"};
    app.require_subcommand(1);

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "Write a synthetic road-defect dataset");
    std::string gen_config, gen_out = "dataset";
    std::uint64_t gen_seed = 0;
    int gen_count = 100;
    int gen_image_size = 0;
    bool gen_seed_set = false, gen_count_set = false;
    gen->add_option("--config", gen_config, "JSON config file (generate section)");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "Generator seed")->each([&](const std::string&) {
        gen_seed_set = true;
    });
    gen->add_option("--count", gen_count, "Number of images")->each([&](const std::string&) {
        gen_count_set = true;
    });
    gen->add_option("--image-size", gen_image_size, "Square image size in pixels");

    // train
    auto* train = app.add_subcommand("train", "Train a model");
    std::string train_config, train_out = "run";
    std::optional<std::uint64_t> train_seed;
    std::optional<int> train_epochs, train_batch;
    std::optional<std::string> train_dataset, train_variant, train_seg_mode;
    std::optional<double> train_lr;
    train->add_option("--config", train_config, "JSON train config");
    train->add_option("--out", train_out, "Output directory");
    train->add_option("--seed", train_seed, "Training seed (overrides config)");
    train->add_option("--epochs", train_epochs, "Epoch count (overrides config)");
    train->add_option("--batch-size", train_batch, "Batch size (overrides config)");
    train->add_option("--lr", train_lr, "Initial learning rate (overrides config)");
    train->add_option("--dataset", train_dataset, "Dataset directory (overrides config)");
    train->add_option("--variant", train_variant, "naive|sm|scm (overrides config)");
    train->add_option("--seg-mode", train_seg_mode, "binary|multiclass (overrides config)");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_checkpoint, eval_dataset, eval_out = "eval";
    double eval_score = 0.5, eval_iou = 0.5;
    eval->add_option("--checkpoint", eval_checkpoint, "Model checkpoint")->required();
    eval->add_option("--dataset", eval_dataset, "Dataset directory")->required();
    eval->add_option("--out", eval_out, "Output directory");
    eval->add_option("--score-threshold", eval_score, "Detection score threshold");
    eval->add_option("--iou-threshold", eval_iou, "AP matching IoU threshold");

    // cka
    auto* cka = app.add_subcommand("cka", "Layer similarity map between two checkpoints");
    std::string cka_a, cka_b, cka_dataset, cka_out = "cka";
    int cka_examples = 32;
    bool cka_raster = false;
    cka->add_option("--checkpoint-a", cka_a, "First checkpoint")->required();
    cka->add_option("--checkpoint-b", cka_b, "Second checkpoint")->required();
    cka->add_option("--dataset", cka_dataset, "Dataset directory")->required();
    cka->add_option("--out", cka_out, "Output directory");
    cka->add_option("--examples", cka_examples, "Examples to sample");
    cka->add_flag("--raster", cka_raster, "Also write a grayscale PGM of the map");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        scm::SceneSpec spec;
        int count = gen_count;
        if (!gen_config.empty()) {
            const scm::TrainConfig cfg = load_config(gen_config);
            spec = cfg.generate_spec;
            if (cfg.generate_count > 0) count = cfg.generate_count;
        }
        if (gen_seed_set) spec.seed = gen_seed;
        if (gen_count_set) count = gen_count;
        if (gen_image_size > 0) spec.image_size = gen_image_size;
        spec.validate();
        const scm::Dataset data = scm::generate_dataset(spec, count);
        scm::write_dataset(data, gen_out);
        std::int64_t instances = 0;
        for (const auto& r : data.records) instances += static_cast<std::int64_t>(r.annotations.size());
        log_line("generate-data", {{"out", gen_out},
                                   {"count", count},
                                   {"instances", instances},
                                   {"image_size", spec.image_size},
                                   {"seed", spec.seed}});
        return 0;
    }

    if (train->parsed()) {
        scm::TrainConfig cfg = load_config(train_config);
        if (train_seed) cfg.seed = *train_seed;
        if (train_epochs) cfg.epochs = *train_epochs;
        if (train_batch) cfg.batch_size = *train_batch;
        if (train_lr) cfg.learning_rate = *train_lr;
        if (train_dataset) cfg.dataset_path = *train_dataset;
        if (train_variant) cfg.network.variant = scm::head_variant_from_string(*train_variant);
        if (train_seg_mode) cfg.network.seg_mode = scm::seg_mode_from_string(*train_seg_mode);
        const scm::TrainResult result = scm::run_train(cfg, train_out);
        for (const scm::EpochStats& s : result.history) {
            log_line("epoch", {{"epoch", s.epoch},
                               {"lr", s.lr},
                               {"loss", s.total},
                               {"det", s.detection},
                               {"seg", s.segmentation}});
        }
        log_line("train", {{"out", train_out},
                           {"best_epoch", result.best_epoch},
                           {"final_checkpoint", result.final_checkpoint},
                           {"best_checkpoint", result.best_checkpoint}});
        return 0;
    }

    if (eval->parsed()) {
        scm::EvalOptions options;
        options.score_threshold = eval_score;
        options.iou_threshold = eval_iou;
        const scm::MetricReport report =
            scm::run_eval(eval_checkpoint, eval_dataset, eval_out, options);
        std::cout << scm::metric_report_text(report);
        log_line("eval", {{"out", eval_out},
                          {"map_mask", report.map_mask},
                          {"map_box", report.map_box},
                          {"aiu", report.aiu}});
        return 0;
    }

    if (cka->parsed()) {
        scm::CkaOptions options;
        options.max_examples = cka_examples;
        const scm::CkaResult result =
            scm::run_cka(cka_a, cka_b, cka_dataset, cka_out, cka_raster, options);
        log_line("cka", {{"out", cka_out},
                         {"layers", result.layers_a.size()},
                         {"mean", result.mean}});
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const scm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const scm::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 3;
    } catch (const scm::DomainError& e) {
        std::cerr << "domain error: " << e.what() << "\n";
        return 3;
    } catch (const scm::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 4;
    } catch (const scm::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
