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

"""Tests for ct_classification.explain."""

import itertools
import math
import os

import matplotlib
import numpy as np
import pytest
import torch
from torch import nn

from ct_classification import datapipe
from ct_classification import dense_classifier
from ct_classification import errors
from ct_classification import explain
from ct_classification import svm_branch


def _IdentityConv(channels):
  conv = nn.Conv2d(channels, channels, kernel_size=1, bias=False).double()
  with torch.no_grad():
    conv.weight.copy_(torch.eye(channels, dtype=torch.float64)
                      .view(channels, channels, 1, 1))
  return conv


class _SumScore(nn.Module):
  """Score gain * sum(A) over an identity layer."""

  def __init__(self, gain):
    super(_SumScore, self).__init__()
    self.layer = _IdentityConv(1)
    self.gain = gain

  def forward(self, x):
    return self.gain * self.layer(x).sum(dim=(2, 3))


class _QuadrantScore(nn.Module):
  """Score sum over the top-left quadrant of A0 - A1."""

  def __init__(self):
    super(_QuadrantScore, self).__init__()
    self.layer = _IdentityConv(2)

  def forward(self, x):
    a = self.layer(x)
    half = a.shape[-1] // 2
    return (a[:, 0, :half, :half] - a[:, 1, :half, :half]).sum(
        dim=(1, 2)).unsqueeze(1)


class _Bypass(nn.Module):
  """The score does not depend on the layer; frozen controls the graph."""

  def __init__(self, frozen=False):
    super(_Bypass, self).__init__()
    self.layer = _IdentityConv(1)
    self.other = nn.Linear(1, 2).double()
    self.frozen = frozen

  def forward(self, x):
    if self.frozen:
      with torch.no_grad():
        self.layer(x)
    else:
      self.layer(x)
    return self.other(x.mean(dim=(2, 3)))


class _FoldedSvm(nn.Module):
  """The extractor followed by a dense layer with the scaler folded in."""

  def __init__(self, extractor, weights, biases, scaler):
    super(_FoldedSvm, self).__init__()
    self.extractor = extractor
    self.input_size = extractor.input_size
    folded = weights / scaler.scale
    self.head = nn.Linear(folded.shape[1], folded.shape[0]).double()
    with torch.no_grad():
      self.head.weight.copy_(torch.from_numpy(folded))
      self.head.bias.copy_(torch.from_numpy(biases - folded @ scaler.mean))

  def forward(self, x):
    return self.head(self.extractor(x).double())


def _ToyPipeline(kernel='linear'):
  dataset = datapipe.MakeSyntheticDataset(
      datapipe.SyntheticSpec(per_class=10, image_size=64), seed=0)
  extractor = svm_branch.BuildExtractor(
      svm_branch.SvmConfig(extractor='toy', input_size=(64, 64)), seed=0)
  features = svm_branch.ExtractFeatures(extractor, dataset.images)
  stats = svm_branch.FitScaler(features)
  model = svm_branch.SvmTrain(svm_branch.ApplyScaler(features, stats),
                              dataset.labels, kernel)
  return (svm_branch.SvmPipeline(extractor, stats, model,
                                 features.fingerprint), dataset)


class TestGradCam(object):

  def test_constant_gradient_single_channel(self):
    x = torch.tensor([[-1.0, 2.0, 0.5, 0.0, 3.0]] * 5,
                     dtype=torch.float64).view(1, 1, 5, 5)
    heatmap = explain.GradCam(_SumScore(0.7), x, 0, 'layer')
    expected = np.maximum(x[0, 0].numpy(), 0.0)
    expected /= expected.max()
    np.testing.assert_allclose(heatmap.values, expected, atol=1e-9)
    assert not heatmap.all_zero
    assert heatmap.values.shape == (5, 5)

  def test_attention_follows_the_scored_quadrant(self):
    x = torch.zeros(1, 2, 8, 8, dtype=torch.float64)
    x[0, 0, :4, :4] = 1.0
    x[0, 1, 4:, 4:] = 1.0
    heatmap = explain.GradCam(_QuadrantScore(), x, 0, 'layer')
    assert heatmap.values[:4, :4].sum() >= 0.9 * heatmap.values.sum()
    assert heatmap.values.max() == 1.0

  def test_score_without_layer_dependence_is_all_zero(self):
    x = torch.rand(1, 1, 4, 4, dtype=torch.float64)
    heatmap = explain.GradCam(_Bypass(), x, 1, 'layer')
    assert heatmap.all_zero
    assert np.all(heatmap.values == 0.0)

  def test_layer_without_gradient_path(self):
    x = torch.rand(1, 1, 4, 4, dtype=torch.float64)
    with pytest.raises(errors.ExplainerError):
      explain.GradCam(_Bypass(frozen=True), x, 0, 'layer')

  def test_unknown_layer_and_class(self):
    x = torch.rand(1, 1, 4, 4, dtype=torch.float64)
    with pytest.raises(errors.ExplainerError):
      explain.GradCam(_SumScore(1.0), x, 0, 'no.such.layer')
    with pytest.raises(errors.ExplainerError):
      explain.GradCam(_SumScore(1.0), x, 3, 'layer')

  def test_dense_toy_map_shape(self):
    cfg = dense_classifier.DenseBranchConfig(
        backbone='toy', pretrained=False, input_size=(64, 64),
        pyramid_channels=32)
    model = dense_classifier.BuildModel(cfg, 3, seed=0)
    image = np.random.default_rng(0).random((64, 64, 3))
    heatmap = explain.GradCam(model, image, 2)
    assert heatmap.values.shape == (8, 8)
    assert heatmap.layer_id == explain.DENSE_LAYER
    assert heatmap.values.min() >= 0.0 and heatmap.values.max() <= 1.0

  def test_densenet_map_shape(self):
    cfg = dense_classifier.DenseBranchConfig(pretrained=False)
    model = dense_classifier.BuildModel(cfg, 3, seed=0)
    image = np.random.default_rng(0).random((224, 224, 3))
    assert explain.GradCam(model, image, 0).values.shape == (7, 7)


class TestGradCamSvm(object):

  def test_map_shape(self):
    pipeline, dataset = _ToyPipeline()
    heatmap = explain.GradCamSvm(pipeline, dataset.images[0], 1)
    assert heatmap.values.shape == (8, 8)
    assert heatmap.layer_id == explain.SVM_LAYER

  def test_matches_equivalent_dense_head(self):
    pipeline, dataset = _ToyPipeline()
    weights, biases = pipeline.model.LinearWeights()
    folded = _FoldedSvm(pipeline.extractor, weights, biases, pipeline.scaler)
    for k in range(3):
      via_svm = explain.GradCamSvm(pipeline, dataset.images[5], k)
      via_dense = explain.GradCam(folded, dataset.images[5], k,
                                  explain.SVM_LAYER)
      assert via_svm.all_zero == via_dense.all_zero
      np.testing.assert_allclose(via_svm.values, via_dense.values, atol=1e-6)

  def test_zero_weights_give_all_zero_map(self):
    pipeline, dataset = _ToyPipeline()
    heads = tuple(
        svm_branch.SvmHead(head.support_vectors,
                           np.zeros_like(head.dual_coef), head.intercept)
        for head in pipeline.model.heads)
    model = svm_branch.SvmModel(heads, pipeline.model.kernel, 1.0,
                                pipeline.model.class_names)
    flat = svm_branch.SvmPipeline(pipeline.extractor, pipeline.scaler, model,
                                  pipeline.fingerprint)
    heatmap = explain.GradCamSvm(flat, dataset.images[0], 0)
    assert heatmap.all_zero
    assert np.all(heatmap.values == 0.0)

  def test_rbf_is_unsupported(self):
    pipeline, dataset = _ToyPipeline('rbf')
    with pytest.raises(errors.UnsupportedExplainerError):
      explain.GradCamSvm(pipeline, dataset.images[0], 0)


class TestOverlay(object):

  def test_opacity_limits(self):
    image = np.random.default_rng(0).random((32, 32, 3))
    ones = np.ones((7, 7))
    np.testing.assert_allclose(explain.Overlay(ones, image, 0.0), image)
    top = matplotlib.colormaps[explain.COLORMAP](1.0)[:3]
    overlay = explain.Overlay(ones, image, 1.0)
    np.testing.assert_allclose(overlay, np.broadcast_to(top, image.shape))

  def test_resizes_to_the_image(self):
    heatmap = explain.Heatmap(np.random.default_rng(0).random((7, 7)), 'se',
                              0, False)
    overlay = explain.Overlay(heatmap, np.zeros((256, 256, 3)))
    assert overlay.shape == (256, 256, 3)

  def test_opacity_out_of_range(self):
    with pytest.raises(errors.ConfigError):
      explain.Overlay(np.ones((2, 2)), np.zeros((4, 4, 3)), 1.5)

  def test_write_heatmap(self, tmp_path):
    heatmap = explain.Heatmap(np.eye(4), 'se', 1, False)
    explain.WriteHeatmap(str(tmp_path), 'sample_0', heatmap,
                         np.zeros((16, 16, 3)))
    for name in ('sample_0.npy', 'sample_0.json', 'sample_0_overlay.png'):
      assert os.path.isfile(os.path.join(str(tmp_path), name))
    np.testing.assert_array_equal(
        np.load(os.path.join(str(tmp_path), 'sample_0.npy')), np.eye(4))


def _Product(rows):
  return rows[:, 0] * rows[:, 1] + rows[:, 2]


def _RandomNetwork(rng, d):
  w1 = rng.normal(size=(d, 6))
  w2 = rng.normal(size=6)
  return lambda rows: np.tanh(rows @ w1) @ w2


def _BruteForceShapley(f, x, background):
  d = len(x)

  def Value(subset):
    rows = background.copy()
    rows[:, list(subset)] = x[list(subset)]
    return float(np.mean(f(rows)))

  phi = np.zeros(d)
  for i in range(d):
    others = [j for j in range(d) if j != i]
    for size in range(d):
      for subset in itertools.combinations(others, size):
        weight = (math.factorial(size) * math.factorial(d - size - 1) /
                  math.factorial(d))
        phi[i] += weight * (Value(subset + (i,)) - Value(subset))
  return phi


class TestShapley(object):

  def test_three_feature_game(self):
    result = explain.ShapExact(_Product, np.ones(3), np.zeros((1, 3)))
    np.testing.assert_allclose(result.values, [0.5, 0.5, 1.0], atol=1e-12)
    assert result.base_value == 0.0 and result.explained_value == 2.0

  def test_single_feature(self):
    f = lambda rows: 3.0 * rows[:, 0] ** 2
    for explainer in (explain.ShapExact, explain.KernelShap):
      result = explainer(f, np.array([2.0]), np.array([[1.0], [0.0]]))
      np.testing.assert_allclose(result.values, [12.0 - 1.5])
      assert result.base_value == 1.5

  def test_exact_matches_brute_force(self):
    rng = np.random.default_rng(0)
    for _ in range(5):
      d = int(rng.integers(2, 6))
      f = _RandomNetwork(rng, d)
      x = rng.normal(size=d)
      background = rng.normal(size=(4, d))
      result = explain.ShapExact(f, x, background)
      np.testing.assert_allclose(result.values,
                                 _BruteForceShapley(f, x, background),
                                 atol=1e-9)

  def test_kernel_enumeration_equals_exact(self):
    rng = np.random.default_rng(1)
    for _ in range(20):
      d = int(rng.integers(2, 9))
      f = _RandomNetwork(rng, d)
      x = rng.normal(size=d)
      background = rng.normal(size=(5, d))
      exact = explain.ShapExact(f, x, background)
      kernel = explain.KernelShap(f, x, background, exact=True)
      np.testing.assert_allclose(kernel.values, exact.values, atol=1e-6)

  def test_linear_model_attributions(self):
    rng = np.random.default_rng(2)
    x = rng.normal(size=20)
    z = rng.normal(size=(1, 20))
    result = explain.KernelShap(lambda rows: rows.sum(axis=1), x, z,
                                n_samples=500, seed=3)
    np.testing.assert_allclose(result.values, x - z[0], atol=1e-9)

  def test_full_budget_beyond_exact_limit_samples(self):
    d = explain.MAX_EXACT_FEATURES + 1
    rng = np.random.default_rng(4)
    x = rng.normal(size=d)
    z = rng.normal(size=(1, d))
    result = explain.KernelShap(lambda rows: rows.sum(axis=1), x, z,
                                n_samples=(1 << d) - 2, seed=5)
    np.testing.assert_allclose(result.values, x - z[0], atol=1e-9)

  def test_dummy_feature_gets_nothing(self):
    f = lambda rows: 2.0 * rows[:, 0] * rows[:, 1]
    rng = np.random.default_rng(3)
    result = explain.ShapExact(f, rng.normal(size=3), rng.normal(size=(6, 3)))
    assert abs(result.values[2]) < 1e-12

  def test_symmetric_features_share_credit(self):
    f = lambda rows: rows[:, 0] * rows[:, 1] + np.sin(rows[:, 2])
    x = np.array([1.5, 1.5, 0.3])
    background = np.array([[0.2, 0.2, 1.0], [-1.0, -1.0, 0.0]])
    for result in (explain.ShapExact(f, x, background),
                   explain.KernelShap(f, x, background, exact=True)):
      assert abs(result.values[0] - result.values[1]) < 1e-9

  def test_additivity(self):
    rng = np.random.default_rng(4)
    f = _RandomNetwork(rng, 12)
    x = rng.normal(size=12)
    background = rng.normal(size=(8, 12))
    sampled = explain.KernelShap(f, x, background, n_samples=500, seed=0)
    assert abs(sampled.Residual()) < 1e-9
    g = _RandomNetwork(rng, 10)
    full = explain.KernelShap(g, x[:10], background[:, :10], n_samples=2048)
    assert abs(full.Residual()) < 1e-3

  def test_constant_model(self):
    f = lambda rows: np.full(len(rows), 3.0)
    result = explain.KernelShap(f, np.ones(5), np.zeros((3, 5)))
    np.testing.assert_allclose(result.values, 0.0, atol=1e-12)
    assert result.base_value == pytest.approx(3.0)

  def test_class_column_and_background_weights(self):
    f = lambda rows: np.stack([-rows[:, 0], rows[:, 0] + rows[:, 1]], axis=1)
    background = np.array([[0.0, 0.0], [4.0, 2.0]])
    result = explain.ShapExact(f, np.array([1.0, 1.0]), background,
                               class_idx=1, weights=[3.0, 1.0])
    assert result.base_value == pytest.approx(1.5)
    np.testing.assert_allclose(result.values, [0.0, 0.5], atol=1e-12)

  def test_invalid_inputs(self):
    f = lambda rows: rows.sum(axis=1)
    with pytest.raises(errors.ExplainerError):
      explain.KernelShap(f, np.ones(3), np.zeros((0, 3)))
    with pytest.raises(errors.ExplainerError):
      explain.KernelShap(f, np.ones(20), np.zeros((1, 20)), n_samples=10)
    with pytest.raises(errors.ExplainerError):
      explain.ShapExact(f, np.ones(16), np.zeros((1, 16)))
    with pytest.raises(errors.ShapeError):
      explain.ShapExact(f, np.ones(3), np.zeros((1, 4)))


class TestPlotData(object):

  def _Explanation(self, values):
    values = np.asarray(values, dtype=np.float64)
    return explain.ShapExplanation(1.0, values, 1.0 + values.sum(),
                                   np.arange(len(values), dtype=np.float64),
                                   0, 10)

  def test_summary_ranking(self):
    explanations = [self._Explanation([0.1, -2.0, 0.0, 0.5]),
                    self._Explanation([-0.3, 1.0, 0.0, -0.5])]
    summary = explain.SummaryPlotData(explanations, ['a', 'b', 'c', 'd'])
    assert [row['name'] for row in summary['ranking']] == ['b', 'd', 'a']
    assert summary['ranking'][0]['mean_abs'] == pytest.approx(1.5)
    assert not summary['all_zero']
    top = explain.SummaryPlotData(explanations, top=1)
    assert [row['name'] for row in top['ranking']] == ['feature_1']

  def test_all_zero_summary(self):
    summary = explain.SummaryPlotData([self._Explanation([0.0, 0.0])])
    assert summary['all_zero'] and summary['ranking'] == []

  def test_force_sums_to_output(self):
    explanation = self._Explanation([0.25, -1.0, 2.0])
    force = explain.ForcePlotData(explanation)
    assert force['sum_check'] == pytest.approx(force['explained_value'])
    assert [row['feature'] for row in force['contributions']] == [2, 1, 0]

  def test_write_plot_data(self, tmp_path):
    explanations = [self._Explanation([0.1, 0.2]),
                    self._Explanation([0.3, -0.1])]
    explain.WritePlotData(str(tmp_path), explanations, ['x', 'y'])
    for name in ('shap_summary.json', 'shap_summary.png', 'shap_values_1.json',
                 'force_0.json', 'force_1.png'):
      assert os.path.isfile(os.path.join(str(tmp_path), name))


def test_summarize_background():
  x = np.random.default_rng(0).normal(size=(200, 3))
  centers, weights = explain.SummarizeBackground(x, size=10, seed=0)
  assert centers.shape == (10, 3)
  assert weights.sum() == pytest.approx(1.0)
  small, uniform = explain.SummarizeBackground(x[:5], size=10)
  np.testing.assert_array_equal(small, x[:5])
  np.testing.assert_allclose(uniform, 0.2)
