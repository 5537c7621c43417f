#include "ernet/volume.hpp"

namespace ernet {

Tensor to_tensor(const Volume& v, bool requires_grad) {
  return Tensor::from_values({1, v.extents.x, v.extents.y, v.extents.z}, v.values, requires_grad);
}

Volume to_volume(const Tensor& t, const std::array<double, 3>& spacing) {
  if (t.rank() != 4 || t.dim(0) != 1) throw ShapeError("to_volume: expected [1,W,H,D], got " + shape_to_string(t.shape()));
  Volume v({t.dim(1), t.dim(2), t.dim(3)});
  std::copy(t.values().begin(), t.values().end(), v.values.begin());
  v.spacing = spacing;
  return v;
}

Volume binarize(const Volume& v) {
  Volume out = v;
  for (double& x : out.values) x = x > 0.5 ? 1.0 : 0.0;
  return out;
}

LabelVolume mask_to_labels(const Volume& mask) {
  LabelVolume out(mask.extents);
  out.spacing = mask.spacing;
  for (size_t i = 0; i < mask.values.size(); ++i) out.labels[i] = mask.values[i] > 0.5 ? 1 : 0;
  return out;
}

Volume labels_to_mask(const LabelVolume& labels) {
  Volume out(labels.extents);
  out.spacing = labels.spacing;
  for (size_t i = 0; i < labels.labels.size(); ++i) out.values[i] = labels.labels[i] != 0 ? 1.0 : 0.0;
  return out;
}

}  // namespace ernet
