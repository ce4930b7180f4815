# Copyright 2026 The CT Classification Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS-IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Grad-CAM heatmaps and Shapley value attributions.

Grad-CAM works on any torch model exposing a named convolutional layer.  For
the SVM branch a linear head makes the class score w . scale(GAP(maps)) + b
differentiable through the extractor.

Shapley values explain a scalar function of a feature vector against a
background set.  Absent features take background values, and the value of a
coalition is the weighted mean output over the background rows.
"""

import dataclasses
import logging
import math
import os

import matplotlib
matplotlib.use('Agg')
from matplotlib import pyplot
import numpy as np
from PIL import Image
from sklearn import cluster
import torch
from torch import nn

from ct_classification import artifacts
from ct_classification import dense_classifier
from ct_classification import errors
from ct_classification import validation


DENSE_LAYER = 'se'
SVM_LAYER = 'extractor.trunk'
MAX_EXACT_FEATURES = 15
COLORMAP = 'viridis'

# Upper bound on the rows passed to predict_fn per call.
_ROWS_PER_CALL = 1 << 16


class ExplainConfig(validation.Validated):
  ATTRIBUTES = {
      'method': validation.Options('gradcam', 'shap', default='gradcam'),
      'layer': validation.Optional(str),
      'opacity': validation.Range(0.0, 1.0, float, default=0.4),
      'background_size': validation.Range(1, None, default=50),
      'n_samples': validation.Range(1, None, default=2048),
      'top_features': validation.Range(1, None, default=20),
  }


################################################################################
# Grad-CAM

@dataclasses.dataclass(frozen=True, eq=False)
class Heatmap(object):
  """Non-negative map scaled to max 1, or all zeros with all_zero set."""

  values: np.ndarray
  layer_id: str
  class_idx: int
  all_zero: bool

  def ToDict(self):
    return {'layer_id': self.layer_id, 'class_idx': self.class_idx,
            'all_zero': self.all_zero, 'shape': list(self.values.shape)}


def _ResolveLayer(model, layer_id):
  modules = dict(model.named_modules())
  if layer_id not in modules:
    candidates = [name for name, module in modules.items()
                  if name and isinstance(module, (nn.Conv2d, nn.Sequential))]
    raise errors.ExplainerError('Unknown layer "%s"; candidates include %s' %
                                (layer_id, ', '.join(candidates[-5:])))
  return modules[layer_id]


def _AsBatch(model, image):
  if isinstance(image, torch.Tensor):
    return image if image.dim() == 4 else image.unsqueeze(0)
  image = np.asarray(image)
  if image.ndim == 3:
    image = image[np.newaxis]
  return dense_classifier.ToModelInput(image, getattr(model, 'input_size',
                                                      None))


def GradCam(model, image, class_idx, layer_id=DENSE_LAYER):
  """Class activation map of one image at a named layer.

  1. Gradients of the class score with respect to the layer's feature maps.
  2. Global average pooling of the gradients into channel weights.
  3. ReLU of the weighted channel sum.
  4. Division by the maximum, unless the map is all zeros.

  Args:
    model: torch module returning class scores (N, K).
    image: (H, W, 3) array or (1, 3, H, W) tensor.
    class_idx: Class whose score is explained.
    layer_id: Name of the layer in model.named_modules().

  Returns:
    Heatmap with the layer's spatial shape.

  Raises:
    ExplainerError: for an unknown layer, a layer without gradient path or an
      out of range class.
  """
  layer = _ResolveLayer(model, layer_id)
  captured = {}

  def Capture(unused_module, unused_inputs, output):
    captured['activation'] = output

  handle = layer.register_forward_hook(Capture)
  model.eval()
  try:
    x = _AsBatch(model, image).detach().clone().requires_grad_(True)
    with torch.enable_grad():
      scores = model(x)
  finally:
    handle.remove()
  if not 0 <= class_idx < scores.shape[1]:
    raise errors.ExplainerError('Class %d outside [0, %d)' %
                                (class_idx, scores.shape[1]))
  activation = captured.get('activation')
  if isinstance(activation, (list, tuple)):
    activation = activation[-1]
  if activation is None or activation.dim() != 4:
    raise errors.ExplainerError('Layer "%s" does not produce a feature map' %
                                layer_id)
  if not activation.requires_grad:
    raise errors.ExplainerError('Layer "%s" has no gradient path' % layer_id)

  score = scores[0, class_idx]
  gradient = None
  if score.requires_grad:
    gradient = torch.autograd.grad(score, activation, allow_unused=True)[0]
  if gradient is None:
    gradient = torch.zeros_like(activation)
  weights = gradient.mean(dim=(2, 3), keepdim=True)
  cam = torch.relu((weights * activation).sum(dim=1))[0]
  values = cam.detach().double().numpy()
  peak = values.max()
  if peak > 0:
    return Heatmap(values / peak, layer_id, class_idx, False)
  logging.warning('Grad-CAM map at "%s" is all zero for class %d', layer_id,
                  class_idx)
  return Heatmap(np.zeros_like(values), layer_id, class_idx, True)


class LinearSvmHead(nn.Module):
  """Extractor followed by scaling and the linear one-vs-rest decisions."""

  def __init__(self, extractor, weights, biases, scaler):
    super(LinearSvmHead, self).__init__()
    self.extractor = extractor
    self.input_size = extractor.input_size
    self.register_buffer('weights', torch.as_tensor(weights,
                                                    dtype=torch.float64))
    self.register_buffer('biases', torch.as_tensor(biases,
                                                   dtype=torch.float64))
    self.register_buffer('mean', torch.as_tensor(scaler.mean,
                                                 dtype=torch.float64))
    self.register_buffer('scale', torch.as_tensor(scaler.scale,
                                                  dtype=torch.float64))

  def forward(self, x):
    pooled = self.extractor(x).double()
    return ((pooled - self.mean) / self.scale) @ self.weights.T + self.biases


def GradCamSvm(pipeline, image, class_idx):
  """Grad-CAM through a linear SVM pipeline at the extractor's last map.

  Raises:
    UnsupportedExplainerError: for non-linear kernels.
  """
  weights, biases = pipeline.model.LinearWeights()
  if pipeline.extractor is None:
    raise errors.ExplainerError('The SVM pipeline has no feature extractor')
  head = LinearSvmHead(pipeline.extractor, weights, biases, pipeline.scaler)
  return GradCam(head, image, class_idx, SVM_LAYER)


def _ResizeChannel(values, size):
  height, width = size
  resized = Image.fromarray(np.asarray(values, dtype=np.float32)).resize(
      (width, height), resample=Image.Resampling.BILINEAR)
  return np.asarray(resized, dtype=np.float64)


def Overlay(heatmap, image, opacity=0.4):
  """Blend the colorized, bilinearly resized heatmap over an (H, W, 3) image.

  Raises:
    ConfigError: if opacity lies outside [0, 1].
  """
  if not 0.0 <= opacity <= 1.0:
    raise errors.ConfigError('Opacity %r outside [0, 1]' % opacity)
  image = np.asarray(image, dtype=np.float64)
  values = heatmap.values if isinstance(heatmap, Heatmap) else heatmap
  resized = np.clip(_ResizeChannel(values, image.shape[:2]), 0.0, 1.0)
  colored = matplotlib.colormaps[COLORMAP](resized)[..., :3]
  return (1.0 - opacity) * image + opacity * colored


def WriteHeatmap(out_dir, stem, heatmap, image, opacity=0.4):
  """Write <stem>.npy (raw values), <stem>.json and <stem>_overlay.png."""
  np.save(os.path.join(out_dir, stem + '.npy'), heatmap.values)
  artifacts.WriteJson(os.path.join(out_dir, stem + '.json'), heatmap.ToDict())
  rendered = np.round(Overlay(heatmap, image, opacity) * 255.0)
  Image.fromarray(rendered.astype(np.uint8)).save(
      os.path.join(out_dir, stem + '_overlay.png'))


################################################################################
# Shapley values

@dataclasses.dataclass(frozen=True, eq=False)
class ShapExplanation(object):
  """f(x) = base_value + sum(values) for the explained class."""

  base_value: float
  values: np.ndarray
  explained_value: float
  instance: np.ndarray
  class_idx: int
  background_size: int

  def Residual(self):
    return self.explained_value - self.base_value - float(np.sum(self.values))

  def ToDict(self):
    return {'base_value': self.base_value,
            'values': self.values.tolist(),
            'explained_value': self.explained_value,
            'instance': self.instance.tolist(),
            'class_idx': self.class_idx,
            'background_size': self.background_size}


def _ScalarFunction(predict_fn, class_idx):
  def Evaluate(rows):
    output = np.asarray(predict_fn(rows), dtype=np.float64)
    if output.ndim == 2:
      output = output[:, class_idx]
    return output.reshape(-1)
  return Evaluate


def _Prepare(x, background, weights):
  x = np.asarray(x, dtype=np.float64).reshape(-1)
  background = np.atleast_2d(np.asarray(background, dtype=np.float64))
  if not background.size:
    raise errors.ExplainerError('The background set is empty')
  if background.shape[1] != x.shape[0]:
    raise errors.ShapeError('Background rows have width %d, instance %d' %
                            (background.shape[1], x.shape[0]))
  if weights is None:
    weights = np.full(len(background), 1.0 / len(background))
  weights = np.asarray(weights, dtype=np.float64)
  return x, background, weights / weights.sum()


def _CoalitionValues(f, x, background, weights, masks):
  """Weighted mean of f over the background with masked features from x."""
  masks = np.asarray(masks, dtype=bool)
  chunk = max(1, _ROWS_PER_CALL // len(background))
  values = np.empty(len(masks))
  for start in range(0, len(masks), chunk):
    block = masks[start:start + chunk]
    rows = np.where(block[:, np.newaxis, :], x[np.newaxis, np.newaxis, :],
                    background[np.newaxis, :, :])
    outputs = f(rows.reshape(-1, x.shape[0])).reshape(len(block), -1)
    values[start:start + chunk] = outputs @ weights
  return values


def _AllMasks(d):
  codes = np.arange(1 << d, dtype=np.int64)
  return ((codes[:, np.newaxis] >> np.arange(d)) & 1).astype(bool)


def ShapExact(predict_fn, x, background, class_idx=0, weights=None):
  """Exact Shapley values by enumerating all 2^D coalitions.

  Raises:
    ExplainerError: if D exceeds MAX_EXACT_FEATURES or the background is
      empty.
  """
  x, background, weights = _Prepare(x, background, weights)
  d = x.shape[0]
  if d > MAX_EXACT_FEATURES:
    raise errors.ExplainerError('Exact Shapley values need at most %d '
                                'features, got %d' % (MAX_EXACT_FEATURES, d))
  f = _ScalarFunction(predict_fn, class_idx)
  masks = _AllMasks(d)
  value = _CoalitionValues(f, x, background, weights, masks)
  sizes = masks.sum(axis=1)
  coefficient = np.asarray([math.factorial(s) * math.factorial(d - s - 1) /
                            math.factorial(d) for s in range(d)])
  phi = np.zeros(d)
  codes = np.arange(1 << d)
  for i in range(d):
    without = codes[~masks[:, i]]
    with_i = without | (1 << i)
    phi[i] = np.sum(coefficient[sizes[without]] *
                    (value[with_i] - value[without]))
  return ShapExplanation(float(value[0]), phi, float(value[-1]), x,
                         class_idx, len(background))


def _KernelWeights(d, sizes):
  return (d - 1.0) / (np.asarray([math.comb(d, int(s)) for s in sizes],
                                 dtype=np.float64) * sizes * (d - sizes))


def _SampleMasks(d, n_samples, rng):
  sizes = np.arange(1, d)
  probabilities = (d - 1.0) / (sizes * (d - sizes))
  probabilities /= probabilities.sum()
  drawn = rng.choice(sizes, size=n_samples, p=probabilities)
  masks = np.zeros((n_samples, d), dtype=bool)
  for row, size in enumerate(drawn):
    masks[row, rng.choice(d, size=size, replace=False)] = True
  return masks


def KernelShap(predict_fn, x, background, n_samples=2048, class_idx=0,
               weights=None, seed=0, exact=False):
  """Kernel SHAP: weighted least squares over coalitions.

  Every coalition of 1..D-1 features is enumerated when exact is set or
  n_samples covers them all; otherwise coalition sizes are drawn with
  probability proportional to (D - 1) / (s (D - s)) and weighted uniformly.
  The constraint base + sum(phi) = f(x) is imposed by eliminating the last
  feature.

  Raises:
    ExplainerError: on an empty background, exact mode with too many
      features, or fewer than D + 2 samples.
  """
  x, background, weights = _Prepare(x, background, weights)
  d = x.shape[0]
  f = _ScalarFunction(predict_fn, class_idx)
  base = float(f(background) @ weights)
  explained = float(f(x[np.newaxis])[0])
  if d == 1:
    return ShapExplanation(base, np.asarray([explained - base]), explained, x,
                           class_idx, len(background))

  enumerate_all = exact or (d <= MAX_EXACT_FEATURES and
                            n_samples >= (1 << d) - 2)
  if enumerate_all:
    if d > MAX_EXACT_FEATURES:
      raise errors.ExplainerError('Exact mode needs at most %d features, got '
                                  '%d' % (MAX_EXACT_FEATURES, d))
    masks = _AllMasks(d)[1:-1]
    kernel = _KernelWeights(d, masks.sum(axis=1))
  else:
    if n_samples < d + 2:
      raise errors.ExplainerError('Kernel SHAP needs at least %d samples for '
                                  '%d features, got %d' %
                                  (d + 2, d, n_samples))
    masks = _SampleMasks(d, n_samples, np.random.default_rng(seed))
    kernel = np.ones(len(masks))

  value = _CoalitionValues(f, x, background, weights, masks)
  total = explained - base
  indicator = masks.astype(np.float64)
  target = value - base - indicator[:, -1] * total
  design = indicator[:, :-1] - indicator[:, -1:]
  root = np.sqrt(kernel)[:, np.newaxis]
  solution = np.linalg.lstsq(design * root, target * root[:, 0], rcond=None)[0]
  phi = np.append(solution, total - solution.sum())
  return ShapExplanation(base, phi, explained, x, class_idx, len(background))


def SummarizeBackground(x, size=50, seed=0):
  """k-means centres of x with cluster-share weights; small sets pass as is."""
  x = np.asarray(x, dtype=np.float64)
  if len(x) <= size:
    return x.copy(), np.full(len(x), 1.0 / max(len(x), 1))
  model = cluster.KMeans(n_clusters=size, n_init=10, random_state=seed).fit(x)
  weights = np.bincount(model.labels_, minlength=size) / float(len(x))
  return model.cluster_centers_, weights


def _FeatureName(names, index):
  return names[index] if names else 'feature_%d' % index


def SummaryPlotData(explanations, feature_names=None, top=None):
  """Features ranked by mean |phi| across explanations.

  Features whose attributions are all zero are left out; all_zero is set when
  no feature remains.
  """
  if not explanations:
    raise errors.ExplainerError('No explanations to summarize')
  magnitude = np.mean([np.abs(e.values) for e in explanations], axis=0)
  order = sorted((i for i in range(len(magnitude)) if magnitude[i] > 0),
                 key=lambda i: (-magnitude[i], i))
  if top:
    order = order[:top]
  return {'num_explanations': len(explanations),
          'all_zero': not order,
          'ranking': [{'feature': int(i),
                       'name': _FeatureName(feature_names, i),
                       'mean_abs': float(magnitude[i])} for i in order]}


def ForcePlotData(explanation, feature_names=None, top=None):
  order = sorted(range(len(explanation.values)),
                 key=lambda i: (-abs(explanation.values[i]), i))
  if top:
    order = order[:top]
  return {'base_value': explanation.base_value,
          'explained_value': explanation.explained_value,
          'class_idx': explanation.class_idx,
          'sum_check': explanation.base_value + float(
              np.sum(explanation.values)),
          'contributions': [
              {'feature': int(i), 'name': _FeatureName(feature_names, i),
               'phi': float(explanation.values[i]),
               'feature_value': float(explanation.instance[i])}
              for i in order]}


def PlotData(explanations, feature_names=None, top=None):
  """Return (summary, [force, ...]) plot data for the explanations."""
  summary = SummaryPlotData(explanations, feature_names, top)
  return summary, [ForcePlotData(e, feature_names, top) for e in explanations]


def _RenderSummary(summary, path):
  ranking = summary['ranking'][::-1]
  figure, axes = pyplot.subplots(figsize=(6, 0.3 * len(ranking) + 1.5))
  axes.barh([row['name'] for row in ranking],
            [row['mean_abs'] for row in ranking], color='tab:blue')
  axes.set_xlabel('mean |SHAP value|')
  axes.set_title('Feature importance (%d explanations)' %
                 summary['num_explanations'])
  figure.tight_layout()
  figure.savefig(path, dpi=100)
  pyplot.close(figure)


def _RenderForce(force, path):
  contributions = force['contributions'][::-1]
  figure, axes = pyplot.subplots(figsize=(6, 0.3 * len(contributions) + 1.5))
  axes.barh([row['name'] for row in contributions],
            [row['phi'] for row in contributions],
            color=['tab:red' if row['phi'] > 0 else 'tab:blue'
                   for row in contributions])
  axes.axvline(0.0, color='black', linewidth=0.8)
  axes.set_xlabel('SHAP value')
  axes.set_title('base %.4f -> f(x) %.4f' % (force['base_value'],
                                             force['explained_value']))
  figure.tight_layout()
  figure.savefig(path, dpi=100)
  pyplot.close(figure)


def WritePlotData(out_dir, explanations, feature_names=None, top=20):
  """Write summary and force plot data as JSON plus rendered PNGs."""
  summary, forces = PlotData(explanations, feature_names, top)
  artifacts.WriteJson(os.path.join(out_dir, 'shap_summary.json'), summary)
  _RenderSummary(summary, os.path.join(out_dir, 'shap_summary.png'))
  for index, (explanation, force) in enumerate(zip(explanations, forces)):
    artifacts.WriteJson(os.path.join(out_dir, 'shap_values_%d.json' % index),
                        explanation.ToDict())
    artifacts.WriteJson(os.path.join(out_dir, 'force_%d.json' % index), force)
    _RenderForce(force, os.path.join(out_dir, 'force_%d.png' % index))
  return summary, forces
