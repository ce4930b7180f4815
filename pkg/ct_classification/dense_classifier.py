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

"""Dense-connectivity classifier with channel attention and pyramid fusion.

The model chain is

  image (3, 224, 224) -> backbone (1664, 7, 7) -> SE (1664, 7, 7)
    -> pyramid (256, 7, 7) -> global average pool (256,) -> logits (K,)

with softmax applied by Predict.  The pyramid fuses the backbone map with a
coarser copy obtained by stride-2 max pooling.  A toy backbone with the same
interface makes the branch trainable on a CPU.
"""

import copy
import dataclasses
import hashlib
import logging
import os

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
import torchvision

from ct_classification import artifacts
from ct_classification import blocks
from ct_classification import datapipe
from ct_classification import errors
from ct_classification import validation


FORMAT_VERSION = 1
WEIGHTS_FILE = 'weights.pt'
CONFIG_FILE = 'config.json'
HISTORY_FILE = 'history.json'
CLASSES_FILE = 'classes.json'

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class DenseBranchConfig(validation.Validated):
  """Model shape and optimizer settings for the dense branch."""

  ATTRIBUTES = {
      'input_size': validation.Repeated(validation.Range(1, None), length=2,
                                        default=(224, 224)),
      'backbone': validation.Options('densenet169', 'toy',
                                     default='densenet169'),
      'pretrained': validation.Type(bool, default=True),
      'freeze_backbone': validation.Type(bool, default=False),
      'num_classes': validation.Optional(validation.Range(2, None)),
      'se_ratio': validation.Range(1, None, default=16),
      'pyramid_channels': validation.Range(1, None, default=256),
      'learning_rate': validation.Range(0.0, None, float, default=1e-4,
                                        exclusive=True),
      'epochs': validation.Range(0, None, default=30),
      'batch_size': validation.Range(1, None, default=16),
  }


class FocalLossConfig(validation.Validated):
  """Focal loss parameters; alpha None means inverse class frequency."""

  ATTRIBUTES = {
      'gamma': validation.Range(0.0, None, float, default=2.0),
      'alpha': validation.Optional(
          validation.Repeated(validation.Range(0.0, None, float,
                                               exclusive=True),
                              min_length=1)),
      'epsilon': validation.Range(0.0, 0.5, float, default=1e-7,
                                  exclusive=True),
  }


@dataclasses.dataclass
class TrainHistory(object):
  train_loss: list = dataclasses.field(default_factory=list)
  train_accuracy: list = dataclasses.field(default_factory=list)
  val_loss: list = dataclasses.field(default_factory=list)
  val_accuracy: list = dataclasses.field(default_factory=list)
  best_epoch: int = -1
  seed: int = 0
  config: dict = dataclasses.field(default_factory=dict)

  @property
  def epochs(self):
    return len(self.train_loss)

  def ToDict(self):
    return dataclasses.asdict(self)

  @classmethod
  def FromDict(cls, values):
    return cls(**values)


def _BackboneFor(cfg, load_weights):
  """Return (module, out_channels, stride) for the configured backbone."""
  if cfg.backbone == 'toy':
    backbone = blocks.ToyDenseBackbone()
    return backbone, backbone.out_channels, backbone.stride
  weights = None
  if cfg.pretrained and load_weights:
    weights = torchvision.models.DenseNet169_Weights.DEFAULT
  network = torchvision.models.densenet169(weights=weights)
  # features ends with the final batch norm; the ReLU is applied by the
  # classifier head in torchvision, so it is added back here.
  return nn.Sequential(network.features, nn.ReLU()), 1664, 32


class DenseBranchModel(nn.Module):
  """Backbone, SE attention, two-level pyramid, pooling and linear head."""

  def __init__(self, backbone, backbone_channels, stride, num_classes,
               input_size, se_ratio=16, pyramid_channels=256,
               normalize_input=False, freeze_backbone=False):
    super(DenseBranchModel, self).__init__()
    self.backbone = backbone
    self.se = blocks.SqueezeExcitation(backbone_channels, se_ratio)
    self.fpn = blocks.FeaturePyramid([backbone_channels, backbone_channels],
                                     pyramid_channels)
    self.head = nn.Linear(pyramid_channels, num_classes)
    self.stride = stride
    self.num_classes = num_classes
    self.input_size = tuple(input_size)
    self.normalize_input = normalize_input
    self.freeze_backbone = freeze_backbone
    self.register_buffer('mean', torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
    self.register_buffer('std', torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
    if freeze_backbone:
      for parameter in self.backbone.parameters():
        parameter.requires_grad_(False)

  def train(self, mode=True):
    super(DenseBranchModel, self).train(mode)
    if self.freeze_backbone:
      self.backbone.eval()
    return self

  def Features(self, x):
    """Pooled pyramid features, shape (N, pyramid_channels)."""
    if x.dim() != 4 or x.shape[1] != 3:
      raise errors.ShapeError('Expected an (N, 3, H, W) batch, got %s' %
                              (tuple(x.shape),))
    if self.normalize_input:
      x = (x - self.mean) / self.std
    fine = self.se(self.backbone(x))
    coarse = F.max_pool2d(fine, kernel_size=2, stride=2, ceil_mode=True)
    fused = self.fpn([coarse, fine])[-1]
    return fused.mean(dim=(2, 3))

  def forward(self, x):
    return self.head(self.Features(x))


def BuildModel(cfg, num_classes=None, seed=0, load_weights=True):
  """Construct a DenseBranchModel from its configuration.

  Args:
    cfg: DenseBranchConfig.
    num_classes: Class count used when cfg.num_classes is unset.
    seed: Seed for the randomly initialized layers.
    load_weights: Whether to fetch pretrained backbone weights.

  Returns:
    An untrained DenseBranchModel.

  Raises:
    ConfigError: if the input size is not a multiple of the backbone stride
      or fewer than two classes are requested.
  """
  k = cfg.num_classes or num_classes
  if not k or k < 2:
    raise errors.ConfigError('The dense branch needs at least two classes, '
                             'got %r' % k)
  torch.manual_seed(seed)
  backbone, channels, stride = _BackboneFor(cfg, load_weights)
  if any(side % stride for side in cfg.input_size):
    raise errors.ConfigError(
        'dense.input_size %s is not divisible by the %s backbone stride %d' %
        ('x'.join(str(s) for s in cfg.input_size), cfg.backbone, stride))
  return DenseBranchModel(
      backbone, channels, stride, k, cfg.input_size, se_ratio=cfg.se_ratio,
      pyramid_channels=cfg.pyramid_channels,
      normalize_input=cfg.backbone != 'toy' and cfg.pretrained,
      freeze_backbone=cfg.freeze_backbone)


def FocalLoss(p, y, alpha=None, gamma=2.0, epsilon=1e-7):
  """Mean over the batch of -sum_c y_c alpha_c (1 - p_c)^gamma log p_c.

  Args:
    p: Probabilities, shape (N, K).
    y: One-hot targets, shape (N, K).
    alpha: Per-class weights (K,), a scalar, or None for all ones.
    gamma: Focusing exponent.
    epsilon: p is clipped into [epsilon, 1 - epsilon] before the log.

  Returns:
    Scalar tensor.

  Raises:
    ShapeError: if p, y and alpha disagree in shape.
  """
  p = torch.as_tensor(p)
  y = torch.as_tensor(y, dtype=p.dtype)
  if p.dim() != 2 or p.shape != y.shape:
    raise errors.ShapeError('Probabilities %s and targets %s differ in shape' %
                            (tuple(p.shape), tuple(y.shape)))
  if alpha is None:
    alpha = torch.ones(p.shape[1], dtype=p.dtype)
  alpha = torch.as_tensor(alpha, dtype=p.dtype)
  if alpha.dim() == 0:
    alpha = alpha.expand(p.shape[1])
  if alpha.shape != (p.shape[1],):
    raise errors.ShapeError('alpha has shape %s for %d classes' %
                            (tuple(alpha.shape), p.shape[1]))
  p = p.clamp(epsilon, 1.0 - epsilon)
  terms = y * alpha * (1.0 - p) ** gamma * torch.log(p)
  return -terms.sum(dim=1).mean()


def FocalAlpha(loss_cfg, labels, num_classes):
  """Configured alpha, or inverse class frequencies normalized to mean 1."""
  if loss_cfg.alpha is not None:
    if len(loss_cfg.alpha) != num_classes:
      raise errors.ConfigError('focal.alpha has %d entries for %d classes' %
                               (len(loss_cfg.alpha), num_classes))
    return np.asarray(loss_cfg.alpha, dtype=np.float64)
  counts = np.bincount(np.asarray(labels, dtype=np.int64),
                       minlength=num_classes).astype(np.float64)
  inverse = 1.0 / np.maximum(counts, 1.0)
  return inverse / inverse.mean()


def ToModelInput(images, size=None):
  """NHWC numpy images to an NCHW float32 tensor, resized if needed."""
  x = torch.from_numpy(np.array(images, dtype=np.float32))
  x = x.permute(0, 3, 1, 2)
  if size is not None and tuple(x.shape[-2:]) != tuple(size):
    x = F.interpolate(x, size=tuple(size), mode='bilinear',
                      align_corners=False)
  return x


def _Evaluate(model, images, labels, alpha, loss_cfg, batch_size):
  model.eval()
  total_loss, correct = 0.0, 0
  with torch.no_grad():
    for start in range(0, len(labels), batch_size):
      x = ToModelInput(images[start:start + batch_size], model.input_size)
      y = torch.as_tensor(labels[start:start + batch_size])
      probabilities = torch.softmax(model(x), dim=1)
      loss = FocalLoss(probabilities, F.one_hot(y, model.num_classes), alpha,
                       loss_cfg.gamma, loss_cfg.epsilon)
      total_loss += float(loss) * len(y)
      correct += int((probabilities.argmax(dim=1) == y).sum())
  return total_loss / len(labels), correct / len(labels)


def Train(model, train_data, val_data=None, loss_cfg=None, cfg=None, seed=0):
  """Fit the model with focal loss and Adam.

  The weights with the best validation accuracy are kept, ties going to the
  lower validation loss.  Without validation data the training set is used
  for selection.

  Args:
    model: DenseBranchModel.
    train_data: datapipe.Dataset, already balanced if desired.
    val_data: Optional datapipe.Dataset.
    loss_cfg: FocalLossConfig.
    cfg: DenseBranchConfig; only the optimizer fields are read.
    seed: Seed for shuffling.

  Returns:
    A (model, TrainHistory) tuple.

  Raises:
    DataError: if train_data is empty.
    TrainingDivergedError: if the loss stops being finite.
  """
  loss_cfg = loss_cfg or FocalLossConfig()
  cfg = cfg or DenseBranchConfig()
  if not len(train_data):
    raise errors.DataError('Cannot train on an empty dataset')
  if val_data is None or not len(val_data):
    logging.warning('No validation data; selecting weights on training data')
    val_data = train_data

  history = TrainHistory(seed=seed, config={'dense': cfg.ToDict(),
                                            'focal': loss_cfg.ToDict()})
  alpha = torch.as_tensor(
      FocalAlpha(loss_cfg, train_data.labels, model.num_classes),
      dtype=torch.float32)
  torch.manual_seed(seed)
  generator = torch.Generator().manual_seed(seed)
  loader = torch.utils.data.DataLoader(
      torch.utils.data.TensorDataset(
          torch.from_numpy(np.array(train_data.images)),
          torch.from_numpy(np.array(train_data.labels))),
      batch_size=cfg.batch_size, shuffle=True, generator=generator)
  parameters = [p for p in model.parameters() if p.requires_grad]
  optimizer = torch.optim.Adam(parameters, lr=cfg.learning_rate)

  best_state, best_key = None, None
  for epoch in range(cfg.epochs):
    model.train()
    total_loss, correct, seen = 0.0, 0, 0
    for images, labels in loader:
      x = ToModelInput(images.numpy(), model.input_size)
      probabilities = torch.softmax(model(x), dim=1)
      loss = FocalLoss(probabilities, F.one_hot(labels, model.num_classes),
                       alpha, loss_cfg.gamma, loss_cfg.epsilon)
      if not torch.isfinite(loss):
        raise errors.TrainingDivergedError(
            'Focal loss became %s in epoch %d; lower dense.learning_rate '
            '(currently %g) and retry' % (float(loss), epoch + 1,
                                          cfg.learning_rate))
      optimizer.zero_grad()
      loss.backward()
      optimizer.step()
      total_loss += float(loss) * len(labels)
      correct += int((probabilities.argmax(dim=1) == labels).sum())
      seen += len(labels)

    val_loss, val_accuracy = _Evaluate(
        model, np.asarray(val_data.images), np.asarray(val_data.labels),
        alpha, loss_cfg, cfg.batch_size)
    history.train_loss.append(total_loss / seen)
    history.train_accuracy.append(correct / seen)
    history.val_loss.append(val_loss)
    history.val_accuracy.append(val_accuracy)
    logging.info('Epoch %d/%d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f',
                 epoch + 1, cfg.epochs, history.train_loss[-1],
                 history.train_accuracy[-1], val_loss, val_accuracy)
    key = (val_accuracy, -val_loss)
    if best_key is None or key > best_key:
      best_key = key
      best_state = copy.deepcopy(model.state_dict())
      history.best_epoch = epoch

  if best_state is not None:
    model.load_state_dict(best_state)
  model.eval()
  return model, history


def Predict(model, images, resize=False, batch_size=64):
  """Softmax probabilities for NHWC images, shape (N, K), float64.

  Raises:
    ShapeError: if the images do not match the model input size and resize
      is False.
  """
  images = np.asarray(images)
  if images.ndim != 4 or images.shape[3] != 3:
    raise errors.ShapeError('Expected (N, H, W, 3) images, got %s' %
                            (images.shape,))
  if not resize and tuple(images.shape[1:3]) != model.input_size:
    raise errors.ShapeError('Images are %s but the model expects %s' %
                            (images.shape[1:3], model.input_size))
  model.eval()
  rows = []
  with torch.no_grad():
    for start in range(0, len(images), batch_size):
      x = ToModelInput(images[start:start + batch_size], model.input_size)
      rows.append(torch.softmax(model(x).double(), dim=1).numpy())
  if not rows:
    return np.zeros((0, model.num_classes))
  return np.concatenate(rows)


def SaveModel(path, model, cfg, history, class_names):
  """Write weights, config snapshot, history and class list into path."""
  os.makedirs(path, exist_ok=True)
  torch.save(model.state_dict(), os.path.join(path, WEIGHTS_FILE))
  artifacts.WriteJson(os.path.join(path, CONFIG_FILE),
                      {'format_version': FORMAT_VERSION,
                       'num_classes': model.num_classes,
                       'dense': cfg.ToDict()})
  artifacts.WriteJson(os.path.join(path, HISTORY_FILE), history.ToDict())
  artifacts.WriteJson(os.path.join(path, CLASSES_FILE), list(class_names))


def LoadModel(path):
  """Load a model directory written by SaveModel.

  Returns:
    A (model, DenseBranchConfig, TrainHistory, class_names) tuple.

  Raises:
    MissingPathError: if path does not exist.
    ArtifactVersionError: on an unsupported format version.
    ArtifactError: if the weights do not fit the recorded config.
  """
  artifacts.RequireDirectory(path, 'Model directory')
  snapshot = artifacts.ReadJson(os.path.join(path, CONFIG_FILE))
  if snapshot.get('format_version') != FORMAT_VERSION:
    raise errors.ArtifactVersionError(
        'Unsupported dense model format version %r in %s' %
        (snapshot.get('format_version'), path))
  cfg = DenseBranchConfig.FromDict(snapshot['dense'])
  model = BuildModel(cfg, snapshot['num_classes'], load_weights=False)
  weights_path = os.path.join(path, WEIGHTS_FILE)
  if not os.path.isfile(weights_path):
    raise errors.MissingPathError('Weights file %s does not exist' %
                                  weights_path)
  try:
    model.load_state_dict(torch.load(weights_path, weights_only=True))
  except (RuntimeError, OSError) as e:
    raise errors.ArtifactError('Could not load weights %s' % weights_path, e)
  model.eval()
  history = TrainHistory.FromDict(
      artifacts.ReadJson(os.path.join(path, HISTORY_FILE)))
  class_names = tuple(artifacts.ReadJson(os.path.join(path, CLASSES_FILE)))
  return model, cfg, history, class_names


def WeightsDigest(model):
  """sha256 over every parameter and buffer, keyed by name."""
  digest = hashlib.sha256()
  for name, tensor in sorted(model.state_dict().items()):
    digest.update(name.encode())
    digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
  return digest.hexdigest()


def BalancedTrainingSet(train, smote_cfg, enabled=True):
  """SMOTE-balance the dense-branch training images when enabled."""
  if not enabled:
    return train
  return datapipe.BalanceDataset(train, smote_cfg)
