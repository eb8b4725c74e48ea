#pragma once

#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "scm/types.hpp"

namespace scm {

double box_iou(const Box& a, const Box& b);
double mask_iou(const Mask& a, const Mask& b);

/// One entry of a ranked detection list after matching.
struct RankedMatch {
    double confidence = 0.0;
    bool matched = false;
};

/// Area under the all-point precision envelope over recall.
/// `ranked` must be sorted by descending confidence. Returns nothing when
/// there is no ground truth (absent class, excluded from mAP).
std::optional<double> average_precision(const std::vector<RankedMatch>& ranked, int total_gt);

enum class ApMode { kBox, kMask };

struct ClassApResult {
    std::vector<std::optional<double>> per_class;  // empty optional = class absent from GT
    double map = 0.0;                              // unweighted mean over present classes
};

/// Per-class AP + mAP over a dataset of per-image predictions/annotations.
/// Matching is class-aware and greedy by confidence; IoU must strictly exceed
/// the threshold. Mode selects box or mask IoU.
ClassApResult mean_ap(const std::vector<std::vector<InstanceRecord>>& predictions,
                      const std::vector<std::vector<InstanceRecord>>& annotations,
                      double iou_threshold, ApMode mode, int class_count = kClassCount);

/// Mean over thresholds {0.01,...,0.99} of the dataset-mean IoU between the
/// thresholded probability map and ground truth.
double aiu(const std::vector<Tensor>& probability_maps, const std::vector<Mask>& gt_masks);

/// ODS: best F1 over a single dataset-wide threshold, from pooled pixel
/// counts. OIS: mean over images of the per-image best F1.
std::pair<double, double> ods_ois(const std::vector<Tensor>& probability_maps,
                                  const std::vector<Mask>& gt_masks);

/// Greedy one-to-one, class-aware matching at the IoU threshold over
/// detections with confidence >= confidence_threshold.
std::tuple<double, double, double> detection_prf(
    const std::vector<std::vector<Detection>>& detections,
    const std::vector<std::vector<InstanceRecord>>& annotations, double iou_threshold,
    double confidence_threshold);

/// Structured result of an evaluation run.
struct MetricReport {
    std::vector<std::optional<double>> ap_mask;  // per class
    std::vector<std::optional<double>> ap_box;
    double map_mask = 0.0;
    double map_box = 0.0;
    double aiu = 0.0;
    double ods = 0.0;
    double ois = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Plain-text key/value rendering (one `key value` pair per line).
std::string metric_report_text(const MetricReport& report);

/// Machine-readable JSON rendering.
std::string metric_report_json(const MetricReport& report);

/// F-measure from pixel/detection counts; empty-vs-empty counts as perfect.
double f_measure(std::int64_t tp, std::int64_t fp, std::int64_t fn);

}  // namespace scm
