#pragma once

#include <string>
#include <vector>

#include "noisylab/models/checkpoint.hpp"
#include "noisylab/models/model.hpp"

namespace noisylab::analysis {

/// Post-activation output of every convolutional module for one input, in
/// module_paths order. Cubes are [C_m, H_m, W_m].
struct LayerActivationTrace {
  Tensor input;  ///< [C, H, W]
  std::vector<models::ModuleInfo> modules;
  std::vector<Tensor> cubes;

  std::size_t size() const noexcept { return cubes.size(); }
  friend bool operator==(const LayerActivationTrace&, const LayerActivationTrace&) = default;
};

/// Single eval-mode forward pass; running statistics are not touched.
LayerActivationTrace capture_activations(models::SegmentationModel& model, const Tensor& image);

/// Trace in the checkpoint container, one entry per module with role
/// "activation"; metadata describes the model that produced it.
models::CheckpointBundle export_trace(const LayerActivationTrace& trace, const models::SegmentationModel& model);

}  // namespace noisylab::analysis
