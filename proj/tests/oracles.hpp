#pragma once

// Independent brute-force oracles for the metric, combination, and CKA
// implementations. Everything here is written against the definitions, not
// against the library code paths it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "scm/metrics.hpp"
#include "scm/types.hpp"

namespace scm::oracle {

/// All-point interpolated AP via the O(n^2) explicit precision envelope.
inline double average_precision(const std::vector<RankedMatch>& ranked, int total_gt) {
    const std::size_t n = ranked.size();
    std::vector<double> precision(n), recall(n);
    int tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (ranked[k].matched) ++tp;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / total_gt;
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!ranked[k].matched) continue;
        double envelope = 0.0;
        for (std::size_t j = k; j < n; ++j) envelope = std::max(envelope, precision[j]);
        ap += (recall[k] - prev_recall) * envelope;
        prev_recall = recall[k];
    }
    return ap;
}

inline double iou_of(const InstanceRecord& a, const InstanceRecord& b, bool use_mask) {
    return use_mask ? mask_iou(a.mask, b.mask) : box_iou(a.box, b.box);
}

/// Ranked match flags for one class via explicit greedy matching.
inline std::vector<RankedMatch> greedy_match_class(
    const std::vector<std::vector<InstanceRecord>>& predictions,
    const std::vector<std::vector<InstanceRecord>>& annotations, int cls, double iou_threshold,
    bool use_mask) {
    struct Entry {
        double conf;
        int image;
        int index;
    };
    std::vector<Entry> entries;
    for (int img = 0; img < static_cast<int>(predictions.size()); ++img) {
        const auto& preds = predictions[static_cast<std::size_t>(img)];
        for (int i = 0; i < static_cast<int>(preds.size()); ++i) {
            if (preds[static_cast<std::size_t>(i)].class_id == cls) {
                entries.push_back({preds[static_cast<std::size_t>(i)].confidence, img, i});
            }
        }
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });

    std::vector<std::vector<bool>> used(annotations.size());
    for (std::size_t img = 0; img < annotations.size(); ++img) {
        used[img].resize(annotations[img].size(), false);
    }
    std::vector<RankedMatch> ranked;
    for (const Entry& e : entries) {
        const auto& preds = predictions[static_cast<std::size_t>(e.image)];
        const auto& anns = annotations[static_cast<std::size_t>(e.image)];
        double best = iou_threshold;
        int best_g = -1;
        for (int g = 0; g < static_cast<int>(anns.size()); ++g) {
            if (anns[static_cast<std::size_t>(g)].class_id != cls) continue;
            if (used[static_cast<std::size_t>(e.image)][static_cast<std::size_t>(g)]) continue;
            const double iou = iou_of(preds[static_cast<std::size_t>(e.index)],
                                      anns[static_cast<std::size_t>(g)], use_mask);
            if (iou > best) {
                best = iou;
                best_g = g;
            }
        }
        const bool hit = best_g >= 0;
        if (hit) used[static_cast<std::size_t>(e.image)][static_cast<std::size_t>(best_g)] = true;
        ranked.push_back({e.conf, hit});
    }
    return ranked;
}

/// Per-class AP + mAP rebuilt from the pieces above.
inline std::pair<std::vector<double>, double> mean_ap(
    const std::vector<std::vector<InstanceRecord>>& predictions,
    const std::vector<std::vector<InstanceRecord>>& annotations, double iou_threshold,
    bool use_mask, int class_count) {
    std::vector<double> per_class(static_cast<std::size_t>(class_count), -1.0);
    double sum = 0.0;
    int present = 0;
    for (int cls = 0; cls < class_count; ++cls) {
        int total = 0;
        for (const auto& anns : annotations) {
            for (const auto& a : anns) {
                if (a.class_id == cls) ++total;
            }
        }
        if (total == 0) continue;
        const auto ranked =
            greedy_match_class(predictions, annotations, cls, iou_threshold, use_mask);
        per_class[static_cast<std::size_t>(cls)] = oracle::average_precision(ranked, total);
        sum += per_class[static_cast<std::size_t>(cls)];
        ++present;
    }
    return {per_class, present > 0 ? sum / present : 0.0};
}

inline double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

/// Literal threshold-enumeration AIU.
inline double aiu(const std::vector<Tensor>& maps, const std::vector<Mask>& gts) {
    double total = 0.0;
    for (int step = 1; step <= 99; ++step) {
        const double t = step / 100.0;
        double per_image = 0.0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            std::int64_t inter = 0, uni = 0;
            for (std::int64_t p = 0; p < maps[i].numel(); ++p) {
                const bool pred = maps[i][p] > t;
                const bool truth = gts[i].data[static_cast<std::size_t>(p)] != 0;
                inter += (pred && truth) ? 1 : 0;
                uni += (pred || truth) ? 1 : 0;
            }
            per_image += uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
        }
        total += per_image / static_cast<double>(maps.size());
    }
    return total / 99.0;
}

/// Literal threshold-enumeration ODS/OIS.
inline std::pair<double, double> ods_ois(const std::vector<Tensor>& maps,
                                         const std::vector<Mask>& gts) {
    double ods = 0.0;
    std::vector<double> best(maps.size(), 0.0);
    for (int step = 1; step <= 99; ++step) {
        const double t = step / 100.0;
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            std::int64_t itp = 0, ifp = 0, ifn = 0;
            for (std::int64_t p = 0; p < maps[i].numel(); ++p) {
                const bool pred = maps[i][p] > t;
                const bool truth = gts[i].data[static_cast<std::size_t>(p)] != 0;
                if (pred && truth) ++itp;
                else if (pred) ++ifp;
                else if (truth) ++ifn;
            }
            best[i] = std::max(best[i], f1_from_counts(itp, ifp, ifn));
            tp += itp;
            fp += ifp;
            fn += ifn;
        }
        ods = std::max(ods, f1_from_counts(tp, fp, fn));
    }
    double ois = 0.0;
    for (double b : best) ois += b;
    return {ods, maps.empty() ? 0.0 : ois / static_cast<double>(maps.size())};
}

/// Exhaustive greedy matcher for precision/recall/F1.
inline std::tuple<double, double, double> detection_prf(
    const std::vector<std::vector<Detection>>& detections,
    const std::vector<std::vector<InstanceRecord>>& annotations, double iou_threshold,
    double confidence_threshold) {
    struct Entry {
        double conf;
        int image;
        int index;
    };
    std::vector<Entry> entries;
    std::int64_t total_gt = 0;
    for (std::size_t img = 0; img < detections.size(); ++img) {
        total_gt += static_cast<std::int64_t>(annotations[img].size());
        for (int i = 0; i < static_cast<int>(detections[img].size()); ++i) {
            if (detections[img][static_cast<std::size_t>(i)].score() >= confidence_threshold) {
                entries.push_back({detections[img][static_cast<std::size_t>(i)].score(),
                                   static_cast<int>(img), i});
            }
        }
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });
    std::vector<std::vector<bool>> used(annotations.size());
    for (std::size_t img = 0; img < annotations.size(); ++img) {
        used[img].resize(annotations[img].size(), false);
    }
    std::int64_t tp = 0;
    for (const Entry& e : entries) {
        const Detection& det =
            detections[static_cast<std::size_t>(e.image)][static_cast<std::size_t>(e.index)];
        const auto& anns = annotations[static_cast<std::size_t>(e.image)];
        double best = iou_threshold;
        int best_g = -1;
        for (int g = 0; g < static_cast<int>(anns.size()); ++g) {
            if (anns[static_cast<std::size_t>(g)].class_id != det.label()) continue;
            if (used[static_cast<std::size_t>(e.image)][static_cast<std::size_t>(g)]) continue;
            const double iou = box_iou(det.box, anns[static_cast<std::size_t>(g)].box);
            if (iou > best) {
                best = iou;
                best_g = g;
            }
        }
        if (best_g >= 0) {
            used[static_cast<std::size_t>(e.image)][static_cast<std::size_t>(best_g)] = true;
            ++tp;
        }
    }
    const std::int64_t np = static_cast<std::int64_t>(entries.size());
    const double p = np > 0 ? static_cast<double>(tp) / np : 0.0;
    const double r = total_gt > 0 ? static_cast<double>(tp) / total_gt : 0.0;
    const double f = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    return {p, r, f};
}

/// Pixel-by-pixel sequential allocation for instance combination.
inline std::vector<InstanceRecord> combine_instances(const std::vector<Detection>& detections,
                                                     const Mask& binary_mask,
                                                     double score_threshold) {
    struct Entry {
        double score;
        double area;
        int index;
    };
    std::vector<Entry> order;
    for (int i = 0; i < static_cast<int>(detections.size()); ++i) {
        const Detection& d = detections[static_cast<std::size_t>(i)];
        if (d.score() >= score_threshold) order.push_back({d.score(), d.box.area(), i});
    }
    std::stable_sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.area != b.area) return a.area > b.area;
        return a.index < b.index;
    });

    Mask claimed(binary_mask.height, binary_mask.width);
    std::vector<InstanceRecord> out;
    for (const Entry& e : order) {
        const Detection& det = detections[static_cast<std::size_t>(e.index)];
        Mask mask(binary_mask.height, binary_mask.width);
        bool any = false;
        for (int r = 0; r < binary_mask.height; ++r) {
            for (int c = 0; c < binary_mask.width; ++c) {
                if (!binary_mask.at(r, c)) continue;
                if (claimed.at(r, c)) continue;
                if (!det.box.contains_pixel(r, c)) continue;
                mask.at(r, c) = 1;
                claimed.at(r, c) = 1;
                any = true;
            }
        }
        if (!any) continue;
        InstanceRecord rec;
        rec.class_id = det.label();
        rec.mask = std::move(mask);
        rec.box = det.box;
        rec.confidence = det.score();
        out.push_back(std::move(rec));
    }
    return out;
}

/// Linear CKA via the HSIC-ratio formulation on centered Gram matrices:
///   CKA = HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L))
/// with biased HSIC(K, L) = tr(K H L H) / (n-1)^2 and H = I - 11^T/n.
inline double linear_cka_hsic(const Tensor& x, const Tensor& y) {
    const int n = x.dim(0);
    auto gram = [n](const Tensor& m) {
        const int p = m.dim(1);
        Tensor g({n, n});
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double dot = 0.0;
                for (int f = 0; f < p; ++f) dot += m.at(i, f) * m.at(j, f);
                g.at(i, j) = dot;
            }
        }
        return g;
    };
    auto center = [n](const Tensor& g) {
        Tensor h({n, n});
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) h.at(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / n;
        }
        // H G H
        Tensor tmp({n, n});
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k) acc += h.at(i, k) * g.at(k, j);
                tmp.at(i, j) = acc;
            }
        }
        Tensor out({n, n});
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k) acc += tmp.at(i, k) * h.at(k, j);
                out.at(i, j) = acc;
            }
        }
        return out;
    };
    auto hsic = [n](const Tensor& kc, const Tensor& lc) {
        double tr = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < n; ++k) tr += kc.at(i, k) * lc.at(k, i);
        }
        return tr / ((n - 1.0) * (n - 1.0));
    };
    const Tensor kc = center(gram(x));
    const Tensor lc = center(gram(y));
    return hsic(kc, lc) / std::sqrt(hsic(kc, kc) * hsic(lc, lc));
}

}  // namespace scm::oracle
