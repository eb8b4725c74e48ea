#include "scm/instance.hpp"

#include <algorithm>
#include <cmath>

namespace scm {

std::vector<InstanceRecord> combine_instances(const std::vector<Detection>& detections,
                                              const Mask& binary_mask, double score_threshold) {
    struct Ref {
        double score;
        double area;
        int index;
    };
    std::vector<Ref> order;
    for (int i = 0; i < static_cast<int>(detections.size()); ++i) {
        const Detection& d = detections[static_cast<std::size_t>(i)];
        if (d.class_probs.empty()) throw ShapeError("combine_instances: empty class vector");
        if (d.score() >= score_threshold) order.push_back({d.score(), d.box.area(), i});
    }
    std::sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.area != b.area) return a.area > b.area;
        return a.index < b.index;
    });

    std::vector<std::uint8_t> claimed(binary_mask.data.size(), 0);
    std::vector<InstanceRecord> instances;
    for (const Ref& ref : order) {
        const Detection& det = detections[static_cast<std::size_t>(ref.index)];
        // clip the pixel scan to the box
        const int r0 = std::max(0, static_cast<int>(std::floor(det.box.y0 - 0.5)));
        const int r1 = std::min(binary_mask.height - 1,
                                static_cast<int>(std::ceil(det.box.y1)));
        const int c0 = std::max(0, static_cast<int>(std::floor(det.box.x0 - 0.5)));
        const int c1 = std::min(binary_mask.width - 1, static_cast<int>(std::ceil(det.box.x1)));

        Mask mask(binary_mask.height, binary_mask.width);
        bool any = false;
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                if (!det.box.contains_pixel(r, c)) continue;
                const std::size_t idx = static_cast<std::size_t>(r) * binary_mask.width + c;
                if (!binary_mask.data[idx] || claimed[idx]) continue;
                claimed[idx] = 1;
                mask.data[idx] = 1;
                any = true;
            }
        }
        if (!any) continue;
        instances.push_back({det.label(), std::move(mask), det.box, det.score()});
    }
    return instances;
}

}  // namespace scm
