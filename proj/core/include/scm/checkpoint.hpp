#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scm/tensor.hpp"

namespace scm {

/// Versioned binary container of named tensors with a shape manifest and a
/// free-form metadata string (JSON by convention). Byte layout, little-endian:
///   magic "SCMTENS1", u32 version, u32 metadata length, metadata bytes,
///   u64 tensor count, then per tensor: u32 name length, name bytes,
///   u32 rank, u64 extents[rank], f64 values[numel].
/// The same container carries model checkpoints and activation dumps.
struct NamedTensors {
    std::string metadata;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_named_tensors(const std::string& path, const NamedTensors& bundle);
NamedTensors read_named_tensors(const std::string& path);

}  // namespace scm
