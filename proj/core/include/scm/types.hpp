#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "scm/errors.hpp"
#include "scm/tensor.hpp"

namespace scm {

/// Axis-aligned box in continuous pixel coordinates, [x0,x1) x [y0,y1).
struct Box {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }

    /// Pixel (row, col) belongs to the box when its center does.
    bool contains_pixel(int row, int col) const {
        const double px = col + 0.5, py = row + 0.5;
        return px >= x0 && px < x1 && py >= y0 && py < y1;
    }
};

/// Dense binary mask, row-major.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (std::uint8_t v : data) n += v;
        return n;
    }
    bool empty() const { return count() == 0; }
    bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }

    /// Tight bounding box of the set pixels; throws DomainError on an empty mask.
    Box bounding_box() const;

    /// Thresholds a [H,W] probability tensor: pixel set iff value > threshold.
    static Mask from_tensor(const Tensor& t, double threshold);
};

/// Scored, class-probability-annotated bounding box from the detection head.
struct Detection {
    Box box;
    std::vector<double> class_probs;

    int label() const {
        return static_cast<int>(
            std::max_element(class_probs.begin(), class_probs.end()) - class_probs.begin());
    }
    double score() const { return *std::max_element(class_probs.begin(), class_probs.end()); }
};

/// Ground-truth annotation and final prediction format alike:
/// class label, pixel mask, bounding box, confidence.
struct InstanceRecord {
    int class_id = 0;
    Mask mask;
    Box box;
    double confidence = 1.0;
};

/// The six defect classes, in dataset order.
inline constexpr int kClassCount = 6;
inline constexpr const char* kClassNames[kClassCount] = {
    "pothole", "manhole", "longitudinal", "transverse", "joint", "wheel",
};

}  // namespace scm
