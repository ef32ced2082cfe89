#include "noisylab/analysis/activations.hpp"

#include <map>

#include "noisylab/common.hpp"

namespace noisylab::analysis {

LayerActivationTrace capture_activations(models::SegmentationModel& model, const Tensor& image) {
  if (image.rank() != 3) throw MismatchError("capture_activations expects [C,H,W], got " + shape_string(image.shape()));
  Tensor batch = image;
  batch.reshape({1, image.dim(0), image.dim(1), image.dim(2)});

  std::map<std::string, Tensor, std::less<>> captured;
  const models::ActivationSink sink = [&](const std::string& path, const Tensor& output) {
    Tensor cube = output.sample(0);
    cube.reshape({output.dim(1), output.dim(2), output.dim(3)});
    captured.insert_or_assign(path, std::move(cube));
  };
  model.forward(batch, false, &sink);

  LayerActivationTrace trace;
  trace.input = image;
  trace.modules = model.module_paths();
  for (const auto& m : trace.modules) {
    auto it = captured.find(m.path);
    if (it == captured.end()) throw std::logic_error("module " + m.path + " produced no activation");
    if (!all_finite(it->second.values())) throw NumericalError("non-finite activation in " + m.path);
    trace.cubes.push_back(std::move(it->second));
  }
  return trace;
}

models::CheckpointBundle export_trace(const LayerActivationTrace& trace, const models::SegmentationModel& model) {
  models::CheckpointBundle bundle;
  bundle.metadata.encoder = model.spec();
  bundle.metadata.framework = model.kind();
  bundle.metadata.num_classes = model.num_classes();
  bundle.metadata.modules = trace.modules;
  bundle.entries.push_back({"input", trace.input.shape(), models::Role::activation, trace.input.to_vector()});
  for (std::size_t i = 0; i < trace.size(); ++i) {
    bundle.entries.push_back(
        {trace.modules[i].path, trace.cubes[i].shape(), models::Role::activation, trace.cubes[i].to_vector()});
  }
  return bundle;
}

}  // namespace noisylab::analysis
