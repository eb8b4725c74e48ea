#pragma once

#include <vector>

#include "scm/types.hpp"

namespace scm {

/// Turns class-scored detections plus a full-image binary mask into
/// multi-class instance records.
///
/// Detections at or above score_threshold claim mask pixels inside their box
/// in descending p* order (first claim wins); ties break on larger box area,
/// then input index. Each instance takes the argmax class of its detection.
/// Instances whose claimed mask ends up empty are dropped, so output masks
/// are pairwise disjoint and each lies inside its detection box.
std::vector<InstanceRecord> combine_instances(const std::vector<Detection>& detections,
                                              const Mask& binary_mask,
                                              double score_threshold = 0.5);

}  // namespace scm
