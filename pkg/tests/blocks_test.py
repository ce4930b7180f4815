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

"""Tests for ct_classification.blocks."""

import math

import numpy as np
import pytest
import torch
from torch import nn

from ct_classification import blocks
from ct_classification import errors


@pytest.fixture(autouse=True)
def _seed():
  torch.manual_seed(0)


class TestDenseBlock(object):

  def test_output_channels(self):
    block = blocks.DenseBlock(blocks.DenseBlockSpec(4, 2, 3))
    out = block(torch.randn(2, 4, 5, 6))
    assert out.shape == (2, 10, 5, 6)
    assert block.spec.output_channels == 10

  def test_random_specs(self):
    rng = np.random.default_rng(0)
    for _ in range(20):
      c0, k, layers = (int(v) for v in (rng.integers(1, 9), rng.integers(1, 6),
                                        rng.integers(0, 5)))
      block = blocks.DenseBlock(blocks.DenseBlockSpec(c0, k, layers))
      out = block(torch.randn(2, c0, 4, 4))
      assert out.shape == (2, c0 + layers * k, 4, 4)

  def test_no_layers_is_identity(self):
    block = blocks.DenseBlock(blocks.DenseBlockSpec(3, 4, 0))
    x = torch.randn(1, 3, 4, 4)
    assert torch.equal(block(x), x)

  def test_zero_weights_append_zeros(self):
    block = blocks.DenseBlock(blocks.DenseBlockSpec(4, 2, 3))
    with torch.no_grad():
      for layer in block.layers:
        layer[0].weight.zero_()
    x = torch.randn(2, 4, 5, 5)
    out = block(x)
    assert torch.equal(out[:, :4], x)
    assert torch.all(out[:, 4:] == 0)

  def test_every_later_layer_sees_an_earlier_output(self):
    block = blocks.DenseBlock(blocks.DenseBlockSpec(3, 2, 3)).eval()
    x = torch.randn(2, 3, 6, 6)
    with torch.no_grad():
      inputs = block.LayerInputs(x)
      ablated = block.LayerInputs(x, zero_layer=0)
    assert torch.equal(inputs[0], ablated[0])
    for later in range(1, 4):
      assert not torch.equal(inputs[later], ablated[later])
      assert torch.all(ablated[later][:, 3:5] == 0)

  def test_channel_mismatch(self):
    block = blocks.DenseBlock(blocks.DenseBlockSpec(4, 2, 1))
    with pytest.raises(errors.ShapeError):
      block(torch.randn(1, 5, 4, 4))

  def test_invalid_spec(self):
    with pytest.raises(errors.BlockSpecError):
      blocks.DenseBlockSpec(0, 2, 1)
    with pytest.raises(errors.BlockSpecError):
      blocks.DenseBlockSpec(3, 2, -1)


def _Weights(w1, w2):
  return blocks.SeBlockWeights(torch.tensor(w1, dtype=torch.float64),
                               torch.tensor(w2, dtype=torch.float64))


class TestSeBlock(object):

  def test_zero_weights_halve_the_input(self):
    weights = blocks.SeBlockWeights(torch.zeros(2, 8, dtype=torch.float64),
                                    torch.zeros(8, 2, dtype=torch.float64))
    x = torch.randn(3, 8, 4, 4, dtype=torch.float64)
    assert torch.equal(blocks.SeBlock(x, weights), 0.5 * x)

  def test_saturated_gate_passes_input(self):
    weights = _Weights([[1.0, 0.0]], [[40.0], [40.0]])
    x = torch.ones(1, 2, 3, 3, dtype=torch.float64)
    out = blocks.SeBlock(x, weights)
    assert torch.allclose(out, x, rtol=0, atol=1e-15)

  def test_hand_computed_gates(self):
    weights = _Weights([[0.5, 0.25]], [[1.0], [-2.0]])
    x = torch.ones(1, 2, 3, 3, dtype=torch.float64)
    x[:, 1] = 2.0
    # squeeze (1, 2), hidden 1.0, pre-activations (1, -2).
    expected = [1.0 / (1 + math.exp(-1.0)), 2.0 / (1 + math.exp(2.0))]
    out = blocks.SeBlock(x, weights)
    np.testing.assert_allclose(out[0, :, 0, 0].numpy(), expected, rtol=1e-12)

  def test_gates_shrink_and_keep_sign(self):
    for _ in range(100):
      x = torch.randn(2, 8, 3, 3, dtype=torch.float64)
      weights = blocks.SeBlockWeights(torch.randn(2, 8, dtype=torch.float64),
                                      torch.randn(8, 2, dtype=torch.float64))
      out = blocks.SeBlock(x, weights)
      assert torch.all(out.abs() <= x.abs())
      nonzero = x != 0
      assert torch.all(torch.sign(out[nonzero]) == torch.sign(x[nonzero]))

  def test_gradients_match_finite_differences(self):
    x = torch.randn(2, 4, 3, 3, dtype=torch.float64, requires_grad=True)
    w1 = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    w2 = torch.randn(4, 2, dtype=torch.float64, requires_grad=True)

    def Fn(x, w1, w2):
      return blocks.SeBlock(x, blocks.SeBlockWeights(w1, w2))

    assert torch.autograd.gradcheck(Fn, (x, w1, w2), eps=1e-6, atol=1e-8,
                                    rtol=1e-4)

  def test_ratio_must_divide_channels(self):
    with pytest.raises(errors.BlockSpecError):
      blocks.SqueezeExcitation(10, ratio=3)
    with pytest.raises(errors.BlockSpecError):
      blocks.SeBlockWeights(torch.zeros(2, 8), torch.zeros(4, 2))

  def test_channel_mismatch(self):
    with pytest.raises(errors.ShapeError):
      blocks.SqueezeExcitation(16, ratio=4)(torch.randn(1, 8, 2, 2))

  def test_module_has_no_bias(self):
    se = blocks.SqueezeExcitation(32, ratio=16)
    assert se.reduce.bias is None and se.expand.bias is None
    assert se.weights.ratio == 16 and se.weights.channels == 32


def _TwoLevelChain(seed):
  """(coarse channels, fine channels, fine height, fine width, pyramid
  channels); odd seeds force an odd fine height."""
  rng = np.random.default_rng(seed)
  c_coarse, c_fine, channels = (int(v) for v in rng.integers(1, 9, size=3))
  height, width = (int(v) for v in rng.integers(2, 17, size=2))
  if seed % 2:
    height |= 1
  return c_coarse, c_fine, height, width, channels


class TestFeaturePyramid(object):

  def test_single_level_projection(self):
    fpn = blocks.FeaturePyramid([1664], pyramid_channels=256)
    (out,) = fpn([torch.randn(1, 1664, 7, 7)])
    assert out.shape == (1, 256, 7, 7)

  def test_two_levels(self):
    fpn = blocks.FeaturePyramid([32, 16], pyramid_channels=8)
    coarse, fine = fpn([torch.randn(2, 32, 4, 4), torch.randn(2, 16, 8, 8)])
    assert coarse.shape == (2, 8, 4, 4)
    assert fine.shape == (2, 8, 8, 8)

  @pytest.mark.parametrize('seed', range(20))
  def test_zero_upper_level_leaves_fine_level_alone(self, seed):
    c_coarse, c_fine, height, width, channels = _TwoLevelChain(seed)
    fpn = blocks.FeaturePyramid([c_coarse, c_fine], pyramid_channels=channels)
    fine = torch.randn(2, c_fine, height, width)
    coarse = torch.zeros(2, c_coarse, (height + 1) // 2, (width + 1) // 2)
    with torch.no_grad():
      _, fused = fpn([coarse, fine])
      expected = fpn.smooth[1](fpn.lateral[1](fine))
    assert torch.equal(fused, expected)

  def test_odd_sizes_pair_with_ceiling_half(self):
    fpn = blocks.FeaturePyramid([3, 3], pyramid_channels=4)
    coarse, fine = fpn([torch.randn(1, 3, 4, 4), torch.randn(1, 3, 7, 7)])
    assert coarse.shape[-2:] == (4, 4) and fine.shape[-2:] == (7, 7)

  @pytest.mark.parametrize('coarse, fine', [(4, 16), (3, 7), (5, 8), (8, 8)])
  def test_levels_must_halve(self, coarse, fine):
    fpn = blocks.FeaturePyramid([3, 3], pyramid_channels=4)
    with pytest.raises(errors.BlockSpecError):
      fpn([torch.randn(1, 3, coarse, coarse), torch.randn(1, 3, fine, fine)])

  @pytest.mark.parametrize('seed', range(20))
  def test_random_chains_keep_sizes_and_channels(self, seed):
    rng = np.random.default_rng(100 + seed)
    num_levels = int(rng.integers(1, 4))
    in_channels = [int(c) for c in rng.integers(1, 9, size=num_levels)]
    channels = int(rng.integers(1, 9))
    sizes = [tuple(int(v) for v in rng.integers(3, 17, size=2))]
    for _ in range(num_levels - 1):
      sizes.insert(0, tuple((s + 1) // 2 for s in sizes[0]))
    levels = [torch.randn(1, c, h, w) for c, (h, w) in zip(in_channels, sizes)]
    fpn = blocks.FeaturePyramid(in_channels, pyramid_channels=channels)
    outputs = fpn(levels)
    assert [tuple(o.shape) for o in outputs] == [
        (1, channels, h, w) for h, w in sizes]

  def test_level_count_and_channels(self):
    fpn = blocks.FeaturePyramid([3, 3], pyramid_channels=4)
    with pytest.raises(errors.BlockSpecError):
      fpn([torch.randn(1, 3, 4, 4)])
    with pytest.raises(errors.ShapeError):
      fpn([torch.randn(1, 5, 4, 4), torch.randn(1, 3, 8, 8)])


def test_toy_backbone_stride():
  backbone = blocks.ToyDenseBackbone()
  out = backbone(torch.randn(2, 3, 64, 64))
  assert out.shape == (2, blocks.ToyDenseBackbone.out_channels, 8, 8)
  assert isinstance(backbone.block1, nn.Module)
