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

"""Network building blocks: dense connectivity, channel attention, pyramids.

All tensors are laid out NCHW.
"""

import dataclasses

import torch
from torch import nn
from torch.nn import functional as F

from ct_classification import errors


@dataclasses.dataclass(frozen=True)
class DenseBlockSpec(object):
  """Dense block shape: every layer appends growth_rate channels."""

  input_channels: int
  growth_rate: int
  num_layers: int

  def __post_init__(self):
    if self.input_channels < 1 or self.growth_rate < 1 or self.num_layers < 0:
      raise errors.BlockSpecError('Invalid dense block spec %r' % (self,))

  @property
  def output_channels(self):
    return self.input_channels + self.num_layers * self.growth_rate


class DenseLayer(nn.Sequential):
  """H_l: 3x3 convolution, batch norm, ReLU."""

  def __init__(self, in_channels, growth_rate):
    super(DenseLayer, self).__init__(
        nn.Conv2d(in_channels, growth_rate, kernel_size=3, padding=1,
                  bias=False),
        nn.BatchNorm2d(growth_rate),
        nn.ReLU(inplace=False))


class DenseBlock(nn.Module):
  """Layer l consumes the concatenation of the input and all earlier outputs."""

  def __init__(self, spec):
    super(DenseBlock, self).__init__()
    self.spec = spec
    self.layers = nn.ModuleList(
        DenseLayer(spec.input_channels + i * spec.growth_rate,
                   spec.growth_rate)
        for i in range(spec.num_layers))

  def _CheckInput(self, x):
    if x.dim() != 4 or x.shape[1] != self.spec.input_channels:
      raise errors.ShapeError('Dense block expects %d input channels, got %s' %
                              (self.spec.input_channels, tuple(x.shape)))

  def LayerInputs(self, x, zero_layer=None):
    """Return the tensor each layer receives, plus the final output.

    Args:
      x: Input feature map.
      zero_layer: Optional index of a layer whose output is replaced by zeros.

    Returns:
      List of num_layers + 1 tensors; entry l is the input of layer l and the
      last entry is the block output.
    """
    self._CheckInput(x)
    features = [x]
    inputs = []
    for index, layer in enumerate(self.layers):
      layer_input = torch.cat(features, dim=1)
      inputs.append(layer_input)
      output = layer(layer_input)
      if index == zero_layer:
        output = torch.zeros_like(output)
      features.append(output)
    inputs.append(torch.cat(features, dim=1))
    return inputs

  def forward(self, x):
    self._CheckInput(x)
    if not self.layers:
      return x
    return self.LayerInputs(x)[-1]


@dataclasses.dataclass(frozen=True)
class SeBlockWeights(object):
  """Excitation weights in torch Linear layout.

  w1 has shape (C/r, C) and w2 shape (C, C/r).
  """

  w1: torch.Tensor
  w2: torch.Tensor

  def __post_init__(self):
    if self.w1.dim() != 2 or self.w2.dim() != 2:
      raise errors.BlockSpecError('SE weights must be matrices')
    reduced, channels = self.w1.shape
    if tuple(self.w2.shape) != (channels, reduced):
      raise errors.BlockSpecError(
          'SE weight shapes %s and %s do not match' %
          (tuple(self.w1.shape), tuple(self.w2.shape)))
    if channels % reduced:
      raise errors.BlockSpecError('Reduced width %d does not divide %d '
                                  'channels' % (reduced, channels))

  @property
  def channels(self):
    return self.w1.shape[1]

  @property
  def ratio(self):
    return self.w1.shape[1] // self.w1.shape[0]


def SeGates(x, weights):
  """Per-channel gates sigmoid(W2 ReLU(W1 GAP(x))), shape (N, C)."""
  squeezed = x.mean(dim=(2, 3))
  return torch.sigmoid(F.linear(F.relu(F.linear(squeezed, weights.w1)),
                                weights.w2))


def SeBlock(x, weights):
  """Rescale every channel of x by its squeeze-and-excitation gate.

  Raises:
    ShapeError: if x does not have weights.channels channels.
  """
  if x.dim() != 4 or x.shape[1] != weights.channels:
    raise errors.ShapeError('SE block expects %d channels, got %s' %
                            (weights.channels, tuple(x.shape)))
  return x * SeGates(x, weights)[:, :, None, None]


class SqueezeExcitation(nn.Module):
  """Trainable squeeze-and-excitation block without bias terms."""

  def __init__(self, channels, ratio=16):
    super(SqueezeExcitation, self).__init__()
    if ratio < 1 or channels % ratio:
      raise errors.BlockSpecError(
          'SE reduction ratio %d must divide %d channels' % (ratio, channels))
    self.reduce = nn.Linear(channels, channels // ratio, bias=False)
    self.expand = nn.Linear(channels // ratio, channels, bias=False)

  @property
  def weights(self):
    return SeBlockWeights(self.reduce.weight, self.expand.weight)

  def forward(self, x):
    return SeBlock(x, self.weights)


@dataclasses.dataclass(frozen=True)
class FpnSpec(object):
  pyramid_channels: int
  num_levels: int

  def __post_init__(self):
    if self.pyramid_channels < 1 or self.num_levels < 1:
      raise errors.BlockSpecError('Invalid pyramid spec %r' % (self,))


def _IsHalf(coarse, fine):
  return coarse == (fine + 1) // 2


def CheckPyramidChain(levels):
  """Raise BlockSpecError unless levels halve in size from fine to coarse.

  Halving follows stride-2 pooling with ceil_mode: an odd side n pairs with
  (n + 1) // 2, so 7 pairs with 4.  Any other ratio, such as 7 with 3 or
  16 with 4, is rejected.
  """
  for coarse, fine in zip(levels, levels[1:]):
    coarse_hw = tuple(coarse.shape[-2:])
    fine_hw = tuple(fine.shape[-2:])
    if not all(_IsHalf(c, f) for c, f in zip(coarse_hw, fine_hw)):
      raise errors.BlockSpecError(
          'Pyramid levels %s and %s are not a factor of 2 apart' %
          (coarse_hw, fine_hw))


class FeaturePyramid(nn.Module):
  """Top-down pyramid: out_i = smooth(lateral(F_i) + upsample(out_{i-1})).

  Levels are ordered coarse to fine.  Lateral connections are 1x1 and the
  smoothing convolutions 3x3; neither carries a bias.
  """

  def __init__(self, in_channels, pyramid_channels=256):
    super(FeaturePyramid, self).__init__()
    self.spec = FpnSpec(pyramid_channels, len(in_channels))
    self.in_channels = tuple(in_channels)
    self.lateral = nn.ModuleList(
        nn.Conv2d(c, pyramid_channels, kernel_size=1, bias=False)
        for c in in_channels)
    self.smooth = nn.ModuleList(
        nn.Conv2d(pyramid_channels, pyramid_channels, kernel_size=3,
                  padding=1, bias=False)
        for _ in in_channels)

  def forward(self, levels):
    if len(levels) != self.spec.num_levels:
      raise errors.BlockSpecError('Expected %d pyramid levels, got %d' %
                                  (self.spec.num_levels, len(levels)))
    for level, channels in zip(levels, self.in_channels):
      if level.shape[1] != channels:
        raise errors.ShapeError('Pyramid level has %d channels, expected %d' %
                                (level.shape[1], channels))
    CheckPyramidChain(levels)
    outputs = []
    for i, level in enumerate(levels):
      merged = self.lateral[i](level)
      if outputs:
        merged = merged + F.interpolate(outputs[-1], size=level.shape[-2:],
                                        mode='nearest')
      outputs.append(self.smooth[i](merged))
    return outputs


class ToyDenseBackbone(nn.Module):
  """Small dense-connectivity backbone with output stride 8 and 96 channels."""

  stride = 8
  out_channels = 96

  def __init__(self):
    super(ToyDenseBackbone, self).__init__()
    self.stem = nn.Sequential(
        nn.Conv2d(3, 32, kernel_size=3, stride=2, padding=1, bias=False),
        nn.BatchNorm2d(32),
        nn.ReLU())
    self.block1 = DenseBlock(DenseBlockSpec(32, 16, 2))
    self.transition1 = nn.Sequential(
        nn.Conv2d(64, 64, kernel_size=1, bias=False),
        nn.AvgPool2d(2))
    self.block2 = DenseBlock(DenseBlockSpec(64, 16, 2))
    self.transition2 = nn.AvgPool2d(2)
    self.norm = nn.Sequential(nn.BatchNorm2d(96), nn.ReLU())

  def forward(self, x):
    x = self.transition1(self.block1(self.stem(x)))
    return self.norm(self.transition2(self.block2(x)))
