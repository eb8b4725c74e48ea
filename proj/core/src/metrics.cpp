#include "scm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace scm {

Box Mask::bounding_box() const {
    int min_r = height, max_r = -1, min_c = width, max_c = -1;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            if (!at(r, c)) continue;
            min_r = std::min(min_r, r);
            max_r = std::max(max_r, r);
            min_c = std::min(min_c, c);
            max_c = std::max(max_c, c);
        }
    }
    if (max_r < 0) throw DomainError("bounding_box: empty mask");
    return {static_cast<double>(min_c), static_cast<double>(min_r),
            static_cast<double>(max_c + 1), static_cast<double>(max_r + 1)};
}

Mask Mask::from_tensor(const Tensor& t, double threshold) {
    if (t.rank() != 2) throw ShapeError("Mask::from_tensor: expected [H,W]");
    Mask m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        m.data[static_cast<std::size_t>(i)] = t[i] > threshold ? 1 : 0;
    }
    return m;
}

double box_iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double mask_iou(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) throw ShapeError("mask_iou: shape mismatch");
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool va = a.data[i] != 0, vb = b.data[i] != 0;
        inter += (va && vb) ? 1 : 0;
        uni += (va || vb) ? 1 : 0;
    }
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double f_measure(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::optional<double> average_precision(const std::vector<RankedMatch>& ranked, int total_gt) {
    if (total_gt <= 0) return std::nullopt;
    const std::size_t n = ranked.size();
    std::vector<double> precision(n), recall(n);
    std::int64_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (k > 0 && ranked[k].confidence > ranked[k - 1].confidence + 1e-12) {
            throw DomainError("average_precision: list not sorted by descending confidence");
        }
        if (ranked[k].matched) ++tp;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / static_cast<double>(total_gt);
    }
    // integrate the precision envelope over recall
    double ap = 0.0;
    double env = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        env = std::max(env, precision[k]);
        const double prev_recall = k > 0 ? recall[k - 1] : 0.0;
        if (recall[k] > prev_recall) ap += (recall[k] - prev_recall) * env;
    }
    return ap;
}

namespace {

struct PredRef {
    double confidence;
    int image;
    int index;  // original order within the image, for deterministic ties
};

bool pred_order(const PredRef& a, const PredRef& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
}

double record_iou(const InstanceRecord& a, const InstanceRecord& b, ApMode mode) {
    return mode == ApMode::kBox ? box_iou(a.box, b.box) : mask_iou(a.mask, b.mask);
}

}  // namespace

ClassApResult mean_ap(const std::vector<std::vector<InstanceRecord>>& predictions,
                      const std::vector<std::vector<InstanceRecord>>& annotations,
                      double iou_threshold, ApMode mode, int class_count) {
    if (predictions.size() != annotations.size()) {
        throw ShapeError("mean_ap: image counts differ");
    }
    const int images = static_cast<int>(predictions.size());
    ClassApResult result;
    result.per_class.resize(static_cast<std::size_t>(class_count));

    double map_sum = 0.0;
    int present = 0;
    for (int cls = 0; cls < class_count; ++cls) {
        int total_gt = 0;
        for (const auto& anns : annotations) {
            for (const auto& a : anns) {
                if (a.class_id == cls) ++total_gt;
            }
        }
        if (total_gt == 0) continue;

        std::vector<PredRef> refs;
        for (int img = 0; img < images; ++img) {
            const auto& preds = predictions[static_cast<std::size_t>(img)];
            for (int i = 0; i < static_cast<int>(preds.size()); ++i) {
                if (preds[static_cast<std::size_t>(i)].class_id == cls) {
                    refs.push_back({preds[static_cast<std::size_t>(i)].confidence, img, i});
                }
            }
        }
        std::sort(refs.begin(), refs.end(), pred_order);

        std::vector<std::vector<bool>> gt_used(static_cast<std::size_t>(images));
        for (int img = 0; img < images; ++img) {
            gt_used[static_cast<std::size_t>(img)]
                .resize(annotations[static_cast<std::size_t>(img)].size(), false);
        }

        std::vector<RankedMatch> ranked;
        ranked.reserve(refs.size());
        for (const PredRef& ref : refs) {
            const auto& pred = predictions[static_cast<std::size_t>(ref.image)]
                                          [static_cast<std::size_t>(ref.index)];
            const auto& anns = annotations[static_cast<std::size_t>(ref.image)];
            double best = iou_threshold;
            int best_gt = -1;
            for (int g = 0; g < static_cast<int>(anns.size()); ++g) {
                if (anns[static_cast<std::size_t>(g)].class_id != cls) continue;
                if (gt_used[static_cast<std::size_t>(ref.image)][static_cast<std::size_t>(g)]) {
                    continue;
                }
                const double iou = record_iou(pred, anns[static_cast<std::size_t>(g)], mode);
                if (iou > best) {
                    best = iou;
                    best_gt = g;
                }
            }
            const bool hit = best_gt >= 0;
            if (hit) {
                gt_used[static_cast<std::size_t>(ref.image)][static_cast<std::size_t>(best_gt)] =
                    true;
            }
            ranked.push_back({ref.confidence, hit});
        }
        const auto ap = average_precision(ranked, total_gt);
        result.per_class[static_cast<std::size_t>(cls)] = ap;
        map_sum += ap.value();
        ++present;
    }
    result.map = present > 0 ? map_sum / present : 0.0;
    return result;
}

namespace {

constexpr int kSweepSteps = 99;  // thresholds 0.01 .. 0.99

double sweep_threshold(int step) { return (step + 1) / 100.0; }

struct PixelCounts {
    std::int64_t tp = 0, fp = 0, fn = 0;
};

PixelCounts count_pixels(const Tensor& map, const Mask& gt, double threshold) {
    if (map.rank() != 2 || map.dim(0) != gt.height || map.dim(1) != gt.width) {
        throw ShapeError("segmentation metrics: map/mask shape mismatch");
    }
    PixelCounts c;
    for (std::int64_t i = 0; i < map.numel(); ++i) {
        const bool pred = map[i] > threshold;
        const bool truth = gt.data[static_cast<std::size_t>(i)] != 0;
        if (pred && truth) ++c.tp;
        else if (pred) ++c.fp;
        else if (truth) ++c.fn;
    }
    return c;
}

}  // namespace

double aiu(const std::vector<Tensor>& probability_maps, const std::vector<Mask>& gt_masks) {
    if (probability_maps.size() != gt_masks.size()) throw ShapeError("aiu: image counts differ");
    if (probability_maps.empty()) return 0.0;
    double threshold_sum = 0.0;
    for (int s = 0; s < kSweepSteps; ++s) {
        const double t = sweep_threshold(s);
        double iou_sum = 0.0;
        for (std::size_t i = 0; i < probability_maps.size(); ++i) {
            const PixelCounts c = count_pixels(probability_maps[i], gt_masks[i], t);
            const std::int64_t uni = c.tp + c.fp + c.fn;
            iou_sum += uni > 0 ? static_cast<double>(c.tp) / static_cast<double>(uni) : 0.0;
        }
        threshold_sum += iou_sum / static_cast<double>(probability_maps.size());
    }
    return threshold_sum / kSweepSteps;
}

std::pair<double, double> ods_ois(const std::vector<Tensor>& probability_maps,
                                  const std::vector<Mask>& gt_masks) {
    if (probability_maps.size() != gt_masks.size()) {
        throw ShapeError("ods_ois: image counts differ");
    }
    if (probability_maps.empty()) return {0.0, 0.0};
    const std::size_t images = probability_maps.size();

    double ods = 0.0;
    std::vector<double> best_per_image(images, 0.0);
    for (int s = 0; s < kSweepSteps; ++s) {
        const double t = sweep_threshold(s);
        PixelCounts pooled;
        for (std::size_t i = 0; i < images; ++i) {
            const PixelCounts c = count_pixels(probability_maps[i], gt_masks[i], t);
            pooled.tp += c.tp;
            pooled.fp += c.fp;
            pooled.fn += c.fn;
            best_per_image[i] = std::max(best_per_image[i], f_measure(c.tp, c.fp, c.fn));
        }
        ods = std::max(ods, f_measure(pooled.tp, pooled.fp, pooled.fn));
    }
    double ois = 0.0;
    for (double b : best_per_image) ois += b;
    ois /= static_cast<double>(images);
    return {ods, ois};
}

std::tuple<double, double, double> detection_prf(
    const std::vector<std::vector<Detection>>& detections,
    const std::vector<std::vector<InstanceRecord>>& annotations, double iou_threshold,
    double confidence_threshold) {
    if (detections.size() != annotations.size()) {
        throw ShapeError("detection_prf: image counts differ");
    }
    const int images = static_cast<int>(detections.size());

    std::vector<PredRef> refs;
    for (int img = 0; img < images; ++img) {
        const auto& dets = detections[static_cast<std::size_t>(img)];
        for (int i = 0; i < static_cast<int>(dets.size()); ++i) {
            if (dets[static_cast<std::size_t>(i)].score() >= confidence_threshold) {
                refs.push_back({dets[static_cast<std::size_t>(i)].score(), img, i});
            }
        }
    }
    std::sort(refs.begin(), refs.end(), pred_order);

    std::vector<std::vector<bool>> gt_used(static_cast<std::size_t>(images));
    std::int64_t total_gt = 0;
    for (int img = 0; img < images; ++img) {
        gt_used[static_cast<std::size_t>(img)]
            .resize(annotations[static_cast<std::size_t>(img)].size(), false);
        total_gt += static_cast<std::int64_t>(annotations[static_cast<std::size_t>(img)].size());
    }

    std::int64_t tp = 0;
    for (const PredRef& ref : refs) {
        const Detection& det = detections[static_cast<std::size_t>(ref.image)]
                                         [static_cast<std::size_t>(ref.index)];
        const auto& anns = annotations[static_cast<std::size_t>(ref.image)];
        double best = iou_threshold;
        int best_gt = -1;
        for (int g = 0; g < static_cast<int>(anns.size()); ++g) {
            const auto& ann = anns[static_cast<std::size_t>(g)];
            if (ann.class_id != det.label()) continue;
            if (gt_used[static_cast<std::size_t>(ref.image)][static_cast<std::size_t>(g)]) {
                continue;
            }
            const double iou = box_iou(det.box, ann.box);
            if (iou > best) {
                best = iou;
                best_gt = g;
            }
        }
        if (best_gt >= 0) {
            gt_used[static_cast<std::size_t>(ref.image)][static_cast<std::size_t>(best_gt)] = true;
            ++tp;
        }
    }
    const std::int64_t np = static_cast<std::int64_t>(refs.size());
    const double precision = np > 0 ? static_cast<double>(tp) / static_cast<double>(np) : 0.0;
    const double recall =
        total_gt > 0 ? static_cast<double>(tp) / static_cast<double>(total_gt) : 0.0;
    const double f1 =
        (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    return {precision, recall, f1};
}

namespace {

nlohmann::json per_class_json(const std::vector<std::optional<double>>& values) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const char* name = i < kClassCount ? kClassNames[i] : "class";
        if (values[i].has_value()) {
            j[name] = values[i].value();
        } else {
            j[name] = nullptr;
        }
    }
    return j;
}

}  // namespace

std::string metric_report_text(const MetricReport& report) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    auto line = [&os](const std::string& key, double v) { os << key << " " << v << "\n"; };
    for (std::size_t i = 0; i < report.ap_mask.size(); ++i) {
        if (report.ap_mask[i].has_value()) {
            line(std::string("ap_mask.") + kClassNames[i], report.ap_mask[i].value());
        }
    }
    for (std::size_t i = 0; i < report.ap_box.size(); ++i) {
        if (report.ap_box[i].has_value()) {
            line(std::string("ap_box.") + kClassNames[i], report.ap_box[i].value());
        }
    }
    line("map_mask", report.map_mask);
    line("map_box", report.map_box);
    line("aiu", report.aiu);
    line("ods", report.ods);
    line("ois", report.ois);
    line("precision", report.precision);
    line("recall", report.recall);
    line("f1", report.f1);
    return os.str();
}

std::string metric_report_json(const MetricReport& report) {
    nlohmann::json j;
    j["ap_mask"] = per_class_json(report.ap_mask);
    j["ap_box"] = per_class_json(report.ap_box);
    j["map_mask"] = report.map_mask;
    j["map_box"] = report.map_box;
    j["aiu"] = report.aiu;
    j["ods"] = report.ods;
    j["ois"] = report.ois;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    j["f1"] = report.f1;
    return j.dump(2);
}

}  // namespace scm
