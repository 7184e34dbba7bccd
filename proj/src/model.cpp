#include "shapeforge/model.hpp"

#include "shapeforge/error.hpp"
#include "shapeforge/objectives.hpp"

namespace shapeforge {

Modality parse_modality(const std::string& name) {
  if (name == "sketch") return Modality::Sketch;
  if (name == "render") return Modality::Render;
  if (name == "shape" || name == "shape3d") return Modality::Shape3D;
  fail("unknown_modality", "unknown modality '" + name + "'");
}

const char* modality_name(Modality modality) {
  switch (modality) {
    case Modality::Sketch: return "sketch";
    case Modality::Render: return "render";
    case Modality::Shape3D: return "shape3d";
  }
  return "?";
}

MMVADImpl::MMVADImpl(const ModelConfig& config) : config_(config) {
  ShapeNetOptions shape{config.dims.shape, config.shape_width, config.shape_layers, config.tap_layer};
  ColorNetOptions color{config.dims.color, config.shape_width, config.color_width, config.color_layers};
  implicit = register_module("implicit", ImplicitGenerator(shape, color));
  sketch = register_module("sketch", SketchGenerator(config.dims.shape, config.resolution, config.image_width));
  render = register_module("render",
                           RenderGenerator(config.dims.shape, config.dims.color, config.resolution, config.image_width));
}

torch::Tensor MMVADImpl::generate_sketch(const torch::Tensor& shape_code, const Viewpoint& view) {
  const Viewpoint views[] = {view};
  auto v = encode_views(views, shape_code.scalar_type());
  return sketch->forward(shape_code.reshape({1, -1}), v)[0];
}

torch::Tensor MMVADImpl::generate_render(const JointLatentCode& code, const Viewpoint& view) {
  const Viewpoint views[] = {view};
  auto v = encode_views(views, code.shape.scalar_type());
  return render->forward(code.shape.reshape({1, -1}), code.color.reshape({1, -1}), v)[0];
}

torch::Tensor MMVADImpl::generate(Modality modality, const JointLatentCode& code, const Viewpoint& view) {
  switch (modality) {
    case Modality::Sketch: return generate_sketch(code.shape, view);
    case Modality::Render: return generate_render(code, view);
    case Modality::Shape3D: break;
  }
  fail("unknown_modality", "modality has no 2D generator");
}

RenderResult render_field(MMVAD& model, const JointLatentCode& code, const Viewpoint& view, int resolution) {
  TraceOptions options;
  options.max_step = kSdfClamp;
  NeuralField field(model->implicit, code);
  return sphere_trace_render(field, view, resolution, options);
}

}  // namespace shapeforge
