#include "scm/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "config_json.hpp"
#include "scm/cka.hpp"
#include "scm/instance.hpp"

namespace scm {

namespace fs = std::filesystem;
using Var = GradientTape::Var;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("config: 'epochs' must be positive");
    if (batch_size < 1) throw ConfigError("config: 'batch_size' must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("config: 'learning_rate' must be positive");
    if (!(decay_factor > 0.0) || decay_factor > 1.0) {
        throw ConfigError("config: 'decay_factor' must be in (0,1]");
    }
    if (decay_period < 1) throw ConfigError("config: 'decay_period' must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("config: 'momentum' must be in [0,1)");
    if (mask_resolution < 1) throw ConfigError("config: 'mask_resolution' must be positive");
    if (max_rois_per_image < 0) throw ConfigError("config: 'max_rois_per_image' must be >= 0");
    if (det_loss_weight < 0.0) throw ConfigError("config: 'det_loss_weight' must be >= 0");
    if (seg_loss_weight < 0.0) throw ConfigError("config: 'seg_loss_weight' must be >= 0");
    if (dataset_path.empty() && generate_count < 1) {
        throw ConfigError("config: either 'dataset' or 'generate.count' is required");
    }
    network.validate();
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    if (epoch < 0 || epoch >= cfg.epochs) {
        throw DomainError("lr_at_epoch: epoch " + std::to_string(epoch) +
                          " outside [0, " + std::to_string(cfg.epochs) + ")");
    }
    return cfg.learning_rate * std::pow(cfg.decay_factor, epoch / cfg.decay_period);
}

TrainConfig train_config_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    TrainConfig cfg;
    auto take = [&j](const char* key, auto fallback) -> decltype(fallback) {
        if (!j.contains(key)) return fallback;
        try {
            return j.at(key).get<decltype(fallback)>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("config: bad value for field '") + key + "'");
        }
    };
    cfg.epochs = take("epochs", cfg.epochs);
    cfg.batch_size = take("batch_size", cfg.batch_size);
    cfg.learning_rate = take("learning_rate", cfg.learning_rate);
    cfg.decay_factor = take("decay_factor", cfg.decay_factor);
    cfg.decay_period = take("decay_period", cfg.decay_period);
    cfg.momentum = take("momentum", cfg.momentum);
    cfg.seed = take("seed", cfg.seed);
    cfg.mask_resolution = take("mask_resolution", cfg.mask_resolution);
    cfg.max_rois_per_image = take("max_rois_per_image", cfg.max_rois_per_image);
    cfg.det_loss_weight = take("det_loss_weight", cfg.det_loss_weight);
    cfg.seg_loss_weight = take("seg_loss_weight", cfg.seg_loss_weight);
    cfg.dataset_path = take("dataset", cfg.dataset_path);
    if (j.contains("network")) cfg.network = detail::network_config_from_json(j.at("network"));
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        if (l.contains("lambda")) cfg.loss.lambda = l.at("lambda").get<double>();
        if (l.contains("iou_threshold")) {
            cfg.loss.iou_threshold = l.at("iou_threshold").get<double>();
        }
        if (l.contains("anchor_normalizer")) {
            cfg.loss.anchor_normalizer = l.at("anchor_normalizer").get<int>();
        }
    }
    if (j.contains("generate")) {
        const auto& g = j.at("generate");
        cfg.generate_count = g.value("count", cfg.generate_count);
        cfg.generate_spec = detail::scene_spec_from_json(g);
    }
    return cfg;
}

std::string train_config_to_json_text(const TrainConfig& cfg) {
    nlohmann::json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["decay_factor"] = cfg.decay_factor;
    j["decay_period"] = cfg.decay_period;
    j["momentum"] = cfg.momentum;
    j["seed"] = cfg.seed;
    j["mask_resolution"] = cfg.mask_resolution;
    j["max_rois_per_image"] = cfg.max_rois_per_image;
    j["det_loss_weight"] = cfg.det_loss_weight;
    j["seg_loss_weight"] = cfg.seg_loss_weight;
    j["dataset"] = cfg.dataset_path;
    j["network"] = detail::network_config_to_json(cfg.network);
    j["loss"] = {{"lambda", cfg.loss.lambda},
                 {"iou_threshold", cfg.loss.iou_threshold},
                 {"anchor_normalizer", cfg.loss.anchor_normalizer}};
    nlohmann::json g = detail::scene_spec_to_json(cfg.generate_spec);
    g["count"] = cfg.generate_count;
    j["generate"] = std::move(g);
    return j.dump(2);
}

// --------------------------------------------------------------------------
// RoI cropping
// --------------------------------------------------------------------------

namespace {

/// Clips a box to the image rectangle; returns false when the overlap is
/// thinner than one pixel.
bool clip_roi(Box& roi, int image_size) {
    roi.x0 = std::max(roi.x0, 0.0);
    roi.y0 = std::max(roi.y0, 0.0);
    roi.x1 = std::min(roi.x1, static_cast<double>(image_size));
    roi.y1 = std::min(roi.y1, static_cast<double>(image_size));
    return roi.width() >= 1.0 && roi.height() >= 1.0;
}

/// Nearest-neighbor crop of the segmentation map over the RoI grid.
/// Returns [res,res] for a single channel or [res,res,C] for all channels.
Var crop_roi(GradientTape& tape, Var seg_prob, const Box& roi, int res, bool all_channels) {
    const Tensor& seg = tape.value(seg_prob);
    const int H = seg.dim(0), W = seg.dim(1), C = seg.dim(2);
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(res) * res * (all_channels ? C : 1));
    for (int r = 0; r < res; ++r) {
        for (int c = 0; c < res; ++c) {
            const double sx = roi.x0 + (c + 0.5) / res * roi.width();
            const double sy = roi.y0 + (r + 0.5) / res * roi.height();
            const int px = std::min(std::max(static_cast<int>(std::floor(sx)), 0), W - 1);
            const int py = std::min(std::max(static_cast<int>(std::floor(sy)), 0), H - 1);
            const std::int64_t base = (static_cast<std::int64_t>(py) * W + px) * C;
            if (all_channels) {
                for (int ch = 0; ch < C; ++ch) idx.push_back(base + ch);
            } else {
                idx.push_back(base);
            }
        }
    }
    if (all_channels) return tape.gather(seg_prob, std::move(idx), {res, res, C});
    return tape.gather(seg_prob, std::move(idx), {res, res});
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void fisher_yates(std::vector<int>& order, std::mt19937_64& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
}

struct ImageLossVars {
    Var total = -1;
    double det_value = 0.0;
    double seg_value = 0.0;
};

/// Builds the multi-task loss graph for one image.
ImageLossVars image_loss(GradientTape& tape, const BoundModel& bound, const TrainConfig& cfg,
                         const DatasetRecord& record, const std::vector<AnchorTarget>& targets) {
    const ForwardResult fwd = bound.forward(image_to_tensor(record));
    ImageLossVars out;
    std::vector<Var> terms;

    if (cfg.det_loss_weight > 0.0) {
        const Var det = detection_loss(tape, fwd.class_probs, fwd.deltas, targets, cfg.loss);
        out.det_value = tape.value(det).item();
        terms.push_back(tape.scale(det, cfg.det_loss_weight));
    }

    if (cfg.seg_loss_weight > 0.0) {
        const std::vector<Anchor> anchors =
            generate_anchors(cfg.network.stride(), cfg.network.anchor_scales,
                             cfg.network.anchor_ratios, cfg.network.input_size);
        const bool binary = cfg.network.seg_mode == SegMode::kBinary;
        std::vector<Var> roi_preds;
        std::vector<Mask> roi_masks;
        std::vector<std::vector<int>> roi_ids;
        for (std::size_t i = 0; i < targets.size() &&
             static_cast<int>(roi_preds.size()) < cfg.max_rois_per_image; ++i) {
            if (!targets[i].positive) continue;
            Box roi = anchors[i].to_box();
            if (!clip_roi(roi, cfg.network.input_size)) continue;
            const InstanceRecord& inst =
                record.annotations[static_cast<std::size_t>(targets[i].gt_index)];
            const Mask target = make_mask_target(roi, inst.mask, cfg.mask_resolution);
            roi_preds.push_back(crop_roi(tape, fwd.seg_prob, roi, cfg.mask_resolution,
                                         /*all_channels=*/!binary));
            if (binary) {
                roi_masks.push_back(target);
            } else {
                std::vector<int> ids(target.data.size());
                for (std::size_t p = 0; p < target.data.size(); ++p) {
                    ids[p] = target.data[p] ? inst.class_id + 1 : 0;
                }
                roi_ids.push_back(std::move(ids));
            }
        }
        Var seg;
        if (binary) {
            seg = segmentation_loss(tape, roi_preds, roi_masks, cfg.loss);
        } else {
            seg = multiclass_segmentation_loss(tape, roi_preds, roi_ids, cfg.loss);
        }
        out.seg_value = tape.value(seg).item();
        terms.push_back(tape.scale(seg, cfg.seg_loss_weight));
    }

    if (!terms.empty()) {
        out.total = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) out.total = tape.add(out.total, terms[i]);
    }
    return out;
}

Dataset load_training_data(const TrainConfig& cfg) {
    if (!cfg.dataset_path.empty()) return read_dataset(cfg.dataset_path);
    return generate_dataset(cfg.generate_spec, cfg.generate_count);
}

}  // namespace

TrainResult train_model(const TrainConfig& cfg, const Dataset& data, Model& model,
                        const std::string& out_dir) {
    cfg.validate();
    if (data.records.empty()) throw ConfigError("train: dataset is empty");
    for (const DatasetRecord& r : data.records) {
        if (r.image_size != cfg.network.input_size) {
            throw ConfigError("train: dataset image size " + std::to_string(r.image_size) +
                              " does not match network input " +
                              std::to_string(cfg.network.input_size));
        }
    }

    const std::vector<Anchor> anchors =
        generate_anchors(cfg.network.stride(), cfg.network.anchor_scales,
                         cfg.network.anchor_ratios, cfg.network.input_size);
    std::vector<std::vector<AnchorTarget>> targets;
    targets.reserve(data.records.size());
    for (const DatasetRecord& r : data.records) {
        targets.push_back(match_anchors(anchors, r.annotations, cfg.loss.iou_threshold));
    }

    if (!out_dir.empty()) fs::create_directories(out_dir);
    std::ofstream log;
    TrainResult result;
    if (!out_dir.empty()) {
        result.log_path = (fs::path(out_dir) / "train_log.jsonl").string();
        log.open(result.log_path, std::ios::trunc);
        if (!log) throw ParseError(result.log_path + ": cannot open for writing");
    }

    std::vector<Tensor> momentum_bufs;
    if (cfg.momentum > 0.0) {
        for (const auto& [name, t] : model.params) momentum_bufs.emplace_back(t.shape());
    }

    double best_loss = 0.0;
    std::vector<std::pair<std::string, Tensor>> best_params;
    const int n = static_cast<int>(data.records.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        std::mt19937_64 rng(splitmix64(cfg.seed ^ (0x5eedULL + static_cast<std::uint64_t>(epoch))));
        fisher_yates(order, rng);

        double epoch_total = 0.0, epoch_det = 0.0, epoch_seg = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int stop = std::min(n, start + cfg.batch_size);
            GradientTape tape;
            BoundModel bound(tape, model, /*trainable=*/true);
            Var batch_loss = -1;
            for (int b = start; b < stop; ++b) {
                const int idx = order[static_cast<std::size_t>(b)];
                const ImageLossVars il =
                    image_loss(tape, bound, cfg, data.records[static_cast<std::size_t>(idx)],
                               targets[static_cast<std::size_t>(idx)]);
                epoch_det += il.det_value;
                epoch_seg += il.seg_value;
                if (il.total >= 0) {
                    batch_loss = batch_loss < 0 ? il.total : tape.add(batch_loss, il.total);
                }
            }
            if (batch_loss < 0) continue;
            batch_loss = tape.scale(batch_loss, 1.0 / (stop - start));
            epoch_total += tape.value(batch_loss).item() * (stop - start);
            tape.backward(batch_loss);

            const auto& vars = bound.param_vars();
            for (std::size_t p = 0; p < vars.size(); ++p) {
                const Tensor g = tape.grad(vars[p].second);
                Tensor& w = model.params[p].second;
                if (cfg.momentum > 0.0) {
                    Tensor& buf = momentum_bufs[p];
                    for (std::int64_t i = 0; i < w.numel(); ++i) {
                        buf[i] = cfg.momentum * buf[i] + g[i];
                        w[i] -= lr * buf[i];
                    }
                } else {
                    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] -= lr * g[i];
                }
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.total = epoch_total / n;
        stats.detection = epoch_det / n;
        stats.segmentation = epoch_seg / n;
        result.history.push_back(stats);
        if (log.is_open()) {
            nlohmann::json line;
            line["epoch"] = stats.epoch;
            line["lr"] = stats.lr;
            line["loss"] = stats.total;
            line["det"] = stats.detection;
            line["seg"] = stats.segmentation;
            log << line.dump() << "\n";
        }
        if (epoch == 0 || stats.total < best_loss) {
            best_loss = stats.total;
            result.best_epoch = epoch;
            best_params = model.params;
        }
    }

    if (!out_dir.empty()) {
        result.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.scmt").string();
        save_model(model, result.final_checkpoint);
        Model best;
        best.cfg = model.cfg;
        best.params = std::move(best_params);
        result.best_checkpoint = (fs::path(out_dir) / "checkpoint_best.scmt").string();
        save_model(best, result.best_checkpoint);
    }
    return result;
}

TrainResult run_train(const TrainConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    Dataset data = load_training_data(cfg);
    Model model = build_network(cfg.network, cfg.seed);
    return train_model(cfg, data, model, out_dir);
}

// --------------------------------------------------------------------------
// evaluation
// --------------------------------------------------------------------------

MetricReport compute_metric_report(const EvalInputs& inputs, double iou_threshold,
                                   double confidence_threshold) {
    MetricReport report;
    const ClassApResult ap_m =
        mean_ap(inputs.instances, inputs.annotations, iou_threshold, ApMode::kMask);
    const ClassApResult ap_b =
        mean_ap(inputs.instances, inputs.annotations, iou_threshold, ApMode::kBox);
    report.ap_mask = ap_m.per_class;
    report.ap_box = ap_b.per_class;
    report.map_mask = ap_m.map;
    report.map_box = ap_b.map;
    report.aiu = aiu(inputs.probability_maps, inputs.gt_masks);
    const auto [ods, ois] = ods_ois(inputs.probability_maps, inputs.gt_masks);
    report.ods = ods;
    report.ois = ois;
    const auto [p, r, f1] =
        detection_prf(inputs.detections, inputs.annotations, iou_threshold,
                      confidence_threshold);
    report.precision = p;
    report.recall = r;
    report.f1 = f1;
    return report;
}

EvalInputs collect_eval_inputs(const Model& model, const Dataset& data,
                               const EvalOptions& options) {
    const NetworkConfig& cfg = model.cfg;
    EvalInputs inputs;
    for (const DatasetRecord& record : data.records) {
        if (record.image_size != cfg.input_size) {
            throw ConfigError("eval: dataset image size does not match checkpoint input size");
        }
        GradientTape tape;
        BoundModel bound(tape, model, /*trainable=*/false);
        const ForwardResult fwd = bound.forward(image_to_tensor(record));
        const Tensor probs = tape.value(fwd.class_probs);
        const Tensor deltas = tape.value(fwd.deltas);
        const Tensor seg = tape.value(fwd.seg_prob);

        const int H = seg.dim(0), W = seg.dim(1);
        Tensor prob_map({H, W});
        if (cfg.seg_mode == SegMode::kBinary) {
            for (std::int64_t i = 0; i < prob_map.numel(); ++i) prob_map[i] = seg[i];
        } else {
            // defect probability = 1 - P(background)
            const int C = seg.dim(2);
            for (std::int64_t i = 0; i < prob_map.numel(); ++i) prob_map[i] = 1.0 - seg[i * C];
        }

        std::vector<Detection> detections =
            extract_detections(cfg, probs, deltas, options.score_threshold, options.nms_iou,
                               options.max_detections);
        std::vector<InstanceRecord> instances =
            combine_instances(detections, Mask::from_tensor(prob_map, options.mask_binarize),
                              options.score_threshold);

        inputs.detections.push_back(std::move(detections));
        inputs.instances.push_back(std::move(instances));
        inputs.probability_maps.push_back(std::move(prob_map));
        inputs.annotations.push_back(record.annotations);
        inputs.gt_masks.push_back(binary_ground_truth(record));
    }
    return inputs;
}

MetricReport evaluate_model(const Model& model, const Dataset& data, const EvalOptions& options) {
    return compute_metric_report(collect_eval_inputs(model, data, options),
                                 options.iou_threshold, options.score_threshold);
}

MetricReport run_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                      const std::string& out_dir, const EvalOptions& options) {
    const Model model = load_model(checkpoint_path);
    const Dataset data = read_dataset(dataset_path);
    if (model.cfg.class_count != kClassCount) {
        throw ConfigError("eval: checkpoint class count " +
                          std::to_string(model.cfg.class_count) +
                          " does not match the dataset's " + std::to_string(kClassCount));
    }
    const MetricReport report = evaluate_model(model, data, options);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        {
            std::ofstream os(fs::path(out_dir) / "report.txt");
            os << metric_report_text(report);
        }
        {
            std::ofstream os(fs::path(out_dir) / "report.json");
            os << metric_report_json(report) << "\n";
        }
    }
    return report;
}

// --------------------------------------------------------------------------
// CKA analysis
// --------------------------------------------------------------------------

namespace {

/// Per-layer activation matrices over a shared example subset; features are
/// evenly subsampled past max_features to bound the matrix size.
std::pair<std::vector<std::string>, std::vector<Tensor>> capture_activations(
    const Model& model, const Dataset& data, const CkaOptions& options) {
    const int n = static_cast<int>(data.records.size());
    const int m = std::min(options.max_examples, n);
    if (m < 2) throw ConfigError("cka: need at least 2 examples");

    std::vector<std::string> names;
    std::vector<Tensor> matrices;
    for (int k = 0; k < m; ++k) {
        const int idx = static_cast<int>(static_cast<std::int64_t>(k) * n / m);
        GradientTape tape;
        BoundModel bound(tape, model, /*trainable=*/false);
        const ForwardResult fwd =
            bound.forward(image_to_tensor(data.records[static_cast<std::size_t>(idx)]));
        if (k == 0) {
            for (const auto& [name, var] : fwd.activations) {
                names.push_back(name);
                const std::int64_t p = tape.value(var).numel();
                const int keep = static_cast<int>(std::min<std::int64_t>(p, options.max_features));
                matrices.emplace_back(std::vector<int>{m, keep});
            }
        }
        for (std::size_t layer = 0; layer < fwd.activations.size(); ++layer) {
            const Tensor& act = tape.value(fwd.activations[layer].second);
            Tensor& mat = matrices[layer];
            const int keep = mat.dim(1);
            const std::int64_t p = act.numel();
            for (int f = 0; f < keep; ++f) {
                const std::int64_t src = static_cast<std::int64_t>(f) * p / keep;
                mat.at(k, f) = act[src];
            }
        }
    }
    return {std::move(names), std::move(matrices)};
}

}  // namespace

CkaResult compute_cka(const Model& model_a, const Model& model_b, const Dataset& data,
                      const CkaOptions& options) {
    auto [names_a, acts_a] = capture_activations(model_a, data, options);
    auto [names_b, acts_b] = capture_activations(model_b, data, options);
    if (names_a != names_b) {
        throw ConfigError("cka: checkpoint topologies differ (layer names do not match)");
    }
    CkaResult result;
    result.layers_a = std::move(names_a);
    result.layers_b = std::move(names_b);
    result.map = cka_similarity_map(acts_a, acts_b);
    double sum = 0.0;
    for (std::int64_t i = 0; i < result.map.numel(); ++i) sum += result.map[i];
    result.mean = sum / static_cast<double>(result.map.numel());
    return result;
}

CkaResult run_cka(const std::string& checkpoint_a, const std::string& checkpoint_b,
                  const std::string& dataset_path, const std::string& out_dir, bool write_raster,
                  const CkaOptions& options) {
    const Model a = load_model(checkpoint_a);
    const Model b = load_model(checkpoint_b);
    const Dataset data = read_dataset(dataset_path);
    const CkaResult result = compute_cka(a, b, data, options);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        nlohmann::json j;
        j["layers_a"] = result.layers_a;
        j["layers_b"] = result.layers_b;
        j["mean"] = result.mean;
        nlohmann::json rows = nlohmann::json::array();
        for (int i = 0; i < result.map.dim(0); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (int k = 0; k < result.map.dim(1); ++k) row.push_back(result.map.at(i, k));
            rows.push_back(std::move(row));
        }
        j["map"] = std::move(rows);
        std::ofstream os(fs::path(out_dir) / "cka.json");
        os << j.dump(2) << "\n";

        if (write_raster) {
            // brighter = higher similarity
            std::vector<std::uint8_t> pixels(static_cast<std::size_t>(result.map.numel()));
            for (std::int64_t i = 0; i < result.map.numel(); ++i) {
                const double v = std::min(std::max(result.map[i], 0.0), 1.0);
                pixels[static_cast<std::size_t>(i)] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
            write_pgm((fs::path(out_dir) / "cka.pgm").string(), pixels, result.map.dim(0),
                      result.map.dim(1));
        }
    }
    return result;
}

}  // namespace scm
