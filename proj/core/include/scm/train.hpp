#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scm/dataset.hpp"
#include "scm/losses.hpp"
#include "scm/metrics.hpp"
#include "scm/network.hpp"

namespace scm {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 4;
    double learning_rate = 0.01;
    double decay_factor = 0.99;
    int decay_period = 20;
    double momentum = 0.0;
    std::uint64_t seed = 0;

    NetworkConfig network;
    LossConfig loss;
    int mask_resolution = 28;
    int max_rois_per_image = 16;
    double det_loss_weight = 1.0;
    double seg_loss_weight = 1.0;

    /// Directory with an on-disk dataset; when empty, the in-memory generator
    /// below is used instead.
    std::string dataset_path;
    SceneSpec generate_spec;
    int generate_count = 0;

    void validate() const;
};

/// Step-decayed learning rate: lr * decay^floor(epoch / period).
/// Throws DomainError when epoch is outside [0, epochs).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// JSON config round trip (the CLI's --config schema).
TrainConfig train_config_from_json_text(const std::string& text);
std::string train_config_to_json_text(const TrainConfig& cfg);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double total = 0.0;
    double detection = 0.0;
    double segmentation = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;
    std::string final_checkpoint;
    std::string best_checkpoint;
    std::string log_path;
};

/// Full training loop: SGD over the multi-task objective, per-epoch JSONL
/// log, final + best checkpoints under out_dir. Deterministic in
/// (seed, config).
TrainResult run_train(const TrainConfig& cfg, const std::string& out_dir);

/// In-memory variant used by tests; returns the trained model.
TrainResult train_model(const TrainConfig& cfg, const Dataset& data, Model& model,
                        const std::string& out_dir);

/// Everything the metric aggregation needs from one evaluation pass.
struct EvalInputs {
    std::vector<std::vector<Detection>> detections;
    std::vector<std::vector<InstanceRecord>> instances;
    std::vector<Tensor> probability_maps;
    std::vector<std::vector<InstanceRecord>> annotations;
    std::vector<Mask> gt_masks;
};

MetricReport compute_metric_report(const EvalInputs& inputs, double iou_threshold = 0.5,
                                   double confidence_threshold = 0.5);

struct EvalOptions {
    double score_threshold = 0.5;
    double nms_iou = 0.5;
    int max_detections = 100;
    double iou_threshold = 0.5;  // AP matching
    double mask_binarize = 0.5;
};

EvalInputs collect_eval_inputs(const Model& model, const Dataset& data,
                               const EvalOptions& options = {});
MetricReport evaluate_model(const Model& model, const Dataset& data,
                            const EvalOptions& options = {});

/// Checkpoint + dataset entry point; writes report.txt / report.json when
/// out_dir is non-empty. Throws ConfigError on class-count mismatch.
MetricReport run_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                      const std::string& out_dir, const EvalOptions& options = {});

struct CkaOptions {
    int max_examples = 32;
    int max_features = 4096;
};

struct CkaResult {
    std::vector<std::string> layers_a;
    std::vector<std::string> layers_b;
    Tensor map;          // [layers_a, layers_b]
    double mean = 0.0;   // mean over all layer pairs
};

/// Layer-by-layer linear CKA between two models on a shared example set.
/// Both models must expose the same activation names (topology match).
CkaResult compute_cka(const Model& model_a, const Model& model_b, const Dataset& data,
                      const CkaOptions& options = {});

/// Checkpoint-level entry point; writes cka.json (and cka.pgm when
/// write_raster is set) under out_dir when non-empty.
CkaResult run_cka(const std::string& checkpoint_a, const std::string& checkpoint_b,
                  const std::string& dataset_path, const std::string& out_dir,
                  bool write_raster = false, const CkaOptions& options = {});

}  // namespace scm
