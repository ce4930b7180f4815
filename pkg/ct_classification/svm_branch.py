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

"""Deep-feature + SVM branch.

Images are mapped to global-average-pooled CNN features, standardized with
statistics from the training rows, and classified by one-vs-rest kernel SVMs.
Each head scores a row as

  f(x) = sum_i coef_i K(x_i, x) + b,   coef_i = alpha_i y_i

over its support vectors x_i; the predicted class is the highest score.
"""

import dataclasses
import hashlib
import itertools
import json
import logging
import os
import struct

import numpy as np
from scipy.spatial import distance
from sklearn import model_selection
from sklearn import preprocessing
from sklearn import svm
import torch
from torch import nn
import torchvision

from ct_classification import artifacts
from ct_classification import dense_classifier
from ct_classification import errors
from ct_classification import validation


FORMAT_VERSION = 1
MODEL_FILE = 'svm_model.bin'
EXTRACTOR_WEIGHTS_FILE = 'extractor.pt'
EXTRACTOR_CONFIG_FILE = 'extractor.json'
_MAGIC = b'CTSVM'
_KERNEL_ORDER = ('linear', 'rbf')


class SvmConfig(validation.Validated):
  """Feature extractor, SVM and grid search settings."""

  ATTRIBUTES = {
      'extractor': validation.Options('mobilenet_v2', 'toy',
                                      default='mobilenet_v2'),
      'pretrained': validation.Type(bool, default=True),
      'input_size': validation.Repeated(validation.Range(1, None), length=2,
                                        default=(256, 256)),
      'kernel': validation.Options(*_KERNEL_ORDER, default='linear'),
      'c': validation.Range(0.0, None, float, default=1.0, exclusive=True),
      'gamma': validation.Optional(validation.Range(0.0, None, float,
                                                    exclusive=True)),
      'search': validation.Type(bool, default=True),
      'kernels': validation.Repeated(validation.Options(*_KERNEL_ORDER),
                                     min_length=1, default=_KERNEL_ORDER),
      'c_values': validation.Repeated(
          validation.Range(0.0, None, float, exclusive=True), min_length=1,
          default=(0.01, 0.1, 1.0, 10.0, 100.0)),
      'folds': validation.Range(2, None, default=5),
      'batch_size': validation.Range(1, None, default=32),
  }


################################################################################
# Feature extraction

class FeatureExtractor(nn.Module):
  """CNN trunk followed by global average pooling."""

  def __init__(self, trunk, kind, input_size, normalize_input=False):
    super(FeatureExtractor, self).__init__()
    self.trunk = trunk
    self.kind = kind
    self.input_size = tuple(input_size)
    self.normalize_input = normalize_input
    self.register_buffer(
        'mean', torch.tensor(dense_classifier.IMAGENET_MEAN).view(1, 3, 1, 1))
    self.register_buffer(
        'std', torch.tensor(dense_classifier.IMAGENET_STD).view(1, 3, 1, 1))
    self.eval()

  def ConfigDict(self):
    return {'kind': self.kind,
            'input_size': list(self.input_size),
            'normalize_input': self.normalize_input}

  def FeatureMaps(self, x):
    if self.normalize_input:
      x = (x - self.mean) / self.std
    return self.trunk(x)

  def forward(self, x):
    return self.FeatureMaps(x).mean(dim=(2, 3))

  def Fingerprint(self):
    """sha256 over the extractor config and every weight tensor."""
    digest = hashlib.sha256()
    digest.update(json.dumps(self.ConfigDict(), sort_keys=True).encode())
    for name, tensor in sorted(self.state_dict().items()):
      digest.update(name.encode())
      digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def _ToyTrunk():
  return nn.Sequential(
      nn.Conv2d(3, 16, kernel_size=3, stride=2, padding=1), nn.ReLU(),
      nn.Conv2d(16, 32, kernel_size=3, stride=2, padding=1), nn.ReLU(),
      nn.Conv2d(32, 64, kernel_size=3, stride=2, padding=1), nn.ReLU())


def BuildExtractor(cfg, seed=0, load_weights=True):
  """MobileNetV2 features (1280 wide) or a seeded toy trunk (64 wide)."""
  torch.manual_seed(seed)
  if cfg.extractor == 'toy':
    return FeatureExtractor(_ToyTrunk(), 'toy', cfg.input_size)
  weights = None
  if cfg.pretrained and load_weights:
    weights = torchvision.models.MobileNet_V2_Weights.DEFAULT
  network = torchvision.models.mobilenet_v2(weights=weights)
  return FeatureExtractor(network.features, 'mobilenet_v2', cfg.input_size,
                          normalize_input=cfg.pretrained)


def _ExtractorFromConfig(config):
  if config.get('kind') == 'toy':
    trunk = _ToyTrunk()
  elif config.get('kind') == 'mobilenet_v2':
    trunk = torchvision.models.mobilenet_v2(weights=None).features
  else:
    raise errors.ArtifactError('Unknown extractor kind %r' %
                               config.get('kind'))
  return FeatureExtractor(trunk, config['kind'], config['input_size'],
                          config['normalize_input'])


@dataclasses.dataclass(frozen=True, eq=False)
class FeatureMatrix(object):
  """Pooled features (N, D) tagged with the extractor that produced them."""

  values: np.ndarray
  fingerprint: str

  def __post_init__(self):
    values = np.asarray(self.values, dtype=np.float64)
    if values.ndim != 2:
      raise errors.ShapeError('Feature matrix must be 2-D, got %s' %
                              (values.shape,))
    if not np.all(np.isfinite(values)):
      raise errors.DataError('Feature matrix holds non-finite values')
    object.__setattr__(self, 'values', values)

  @property
  def rows(self):
    return self.values.shape[0]

  @property
  def dims(self):
    return self.values.shape[1]


def ExtractFeatures(extractor, images, batch_size=32, resize=False):
  """Pool extractor features for NHWC images.

  Raises:
    ShapeError: if images do not match the extractor input size and resize is
      False.
  """
  images = np.asarray(images)
  if images.ndim != 4 or images.shape[3] != 3:
    raise errors.ShapeError('Expected (N, H, W, 3) images, got %s' %
                            (images.shape,))
  if not resize and tuple(images.shape[1:3]) != extractor.input_size:
    raise errors.ShapeError(
        'Images are %s but the extractor expects %s' %
        (images.shape[1:3], extractor.input_size))
  extractor.eval()
  rows = []
  with torch.no_grad():
    for start in range(0, len(images), batch_size):
      x = dense_classifier.ToModelInput(images[start:start + batch_size],
                                        extractor.input_size)
      rows.append(extractor(x).double().numpy())
  width = rows[0].shape[1] if rows else 0
  values = np.concatenate(rows) if rows else np.zeros((0, width))
  return FeatureMatrix(values, extractor.Fingerprint())


def SaveFeatures(path, features, labels=None):
  arrays = {'values': features.values,
            'fingerprint': np.asarray(features.fingerprint),
            'shape': np.asarray(features.values.shape, dtype=np.int64)}
  if labels is not None:
    arrays['labels'] = np.asarray(labels, dtype=np.int64)
  np.savez(path, **arrays)


def LoadFeatures(path):
  """Load a feature cache; returns (FeatureMatrix, labels or None)."""
  if not os.path.isfile(path):
    raise errors.MissingPathError('Feature cache %s does not exist' % path)
  with np.load(path, allow_pickle=False) as cache:
    values = cache['values']
    if tuple(cache['shape']) != values.shape:
      raise errors.ArtifactError('Feature cache %s has an inconsistent shape '
                                 'header' % path)
    labels = cache['labels'] if 'labels' in cache.files else None
    return FeatureMatrix(values, str(cache['fingerprint'])), labels


################################################################################
# Scaling

@dataclasses.dataclass(frozen=True, eq=False)
class ScalerStats(object):
  mean: np.ndarray
  scale: np.ndarray
  zero_variance: np.ndarray


def _Values(x):
  return x.values if isinstance(x, FeatureMatrix) else np.asarray(
      x, dtype=np.float64)


def FitScaler(train):
  """Fit per-dimension mean and standard deviation on training rows.

  Zero-variance dimensions keep a scale of 1 and are flagged.

  Raises:
    DataError: with fewer than two rows.
  """
  values = _Values(train)
  if values.ndim != 2 or values.shape[0] < 2:
    raise errors.DataError('Fitting a scaler needs at least two rows, got %s' %
                           (values.shape,))
  scaler = preprocessing.StandardScaler().fit(values)
  scale = np.sqrt(scaler.var_)
  zero_variance = scale <= 1e-12 * np.maximum(1.0, np.abs(scaler.mean_))
  if zero_variance.any():
    logging.warning('%d zero-variance feature dimensions are left unscaled',
                    int(zero_variance.sum()))
  scale = np.where(zero_variance, 1.0, scale)
  return ScalerStats(scaler.mean_.copy(), scale, zero_variance)


def ApplyScaler(x, stats):
  """Standardize rows with fitted statistics.

  Returns:
    A FeatureMatrix if x is one, else an ndarray.

  Raises:
    ShapeError: if the width of x differs from the fitted width.
  """
  values = _Values(x)
  if values.ndim != 2 or values.shape[1] != stats.mean.shape[0]:
    raise errors.ShapeError('Rows of width %s do not match the scaler width '
                            '%d' % (values.shape[1:], stats.mean.shape[0]))
  scaled = (values - stats.mean) / stats.scale
  if isinstance(x, FeatureMatrix):
    return FeatureMatrix(scaled, x.fingerprint)
  return scaled


################################################################################
# SVM

@dataclasses.dataclass(frozen=True)
class KernelSpec(object):
  kind: str = 'linear'
  gamma: float = None

  def __post_init__(self):
    if self.kind not in _KERNEL_ORDER:
      raise errors.ConfigError('Unknown kernel %r' % self.kind)
    if self.kind == 'rbf' and (self.gamma is None or self.gamma <= 0):
      raise errors.ConfigError('The rbf kernel needs a positive gamma')

  def Gram(self, x, support_vectors):
    """Kernel matrix K[n, i] = K(x_n, x_i)."""
    if self.kind == 'linear':
      return x @ support_vectors.T
    return np.exp(-self.gamma *
                  distance.cdist(x, support_vectors, 'sqeuclidean'))


@dataclasses.dataclass(frozen=True, eq=False)
class SvmHead(object):
  """One binary one-vs-rest machine."""

  support_vectors: np.ndarray
  dual_coef: np.ndarray
  intercept: float


@dataclasses.dataclass(frozen=True, eq=False)
class SvmModel(object):
  heads: tuple
  kernel: KernelSpec
  c: float
  class_names: tuple

  @property
  def num_classes(self):
    return len(self.heads)

  @property
  def dims(self):
    return self.heads[0].support_vectors.shape[1]

  def Decision(self, x):
    """Per-class scores (N, K) for scaled rows.

    Raises:
      ShapeError: if the row width differs from the training width.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != self.dims:
      raise errors.ShapeError('Rows of width %s do not match the SVM width %d'
                              % (x.shape[1:], self.dims))
    scores = np.empty((x.shape[0], self.num_classes))
    for k, head in enumerate(self.heads):
      gram = self.kernel.Gram(x, head.support_vectors)
      scores[:, k] = gram @ head.dual_coef + head.intercept
    return scores

  def Predict(self, x):
    return np.argmax(self.Decision(x), axis=1)

  def LinearWeights(self):
    """Return (W, b): w_k = sum_i coef_i x_i for every head.

    Raises:
      UnsupportedExplainerError: for a non-linear kernel.
    """
    if self.kernel.kind != 'linear':
      raise errors.UnsupportedExplainerError(
          'A %s-kernel SVM has no linear weight vector; use the shap method '
          'instead' % self.kernel.kind)
    weights = np.stack([head.dual_coef @ head.support_vectors
                        for head in self.heads])
    biases = np.asarray([head.intercept for head in self.heads])
    return weights, biases


def DefaultGamma(x):
  """1 / (D * var(x)), the usual scale-aware rbf width."""
  variance = float(np.var(x))
  return 1.0 / (x.shape[1] * (variance if variance > 0 else 1.0))


def SvmTrain(x, y, kernel='linear', c=1.0, gamma=None, class_names=None):
  """Train one binary SVM per class against the rest.

  Args:
    x: Scaled rows (N, D).
    y: Labels in [0, K).
    kernel: 'linear' or 'rbf'.
    c: Box constraint.
    gamma: rbf width; defaults to DefaultGamma(x).
    class_names: Optional names; defaults to the label values.

  Returns:
    SvmModel.

  Raises:
    DataError: if fewer than two classes are present or a class in [0, K)
      has no rows.
  """
  x = _Values(x)
  y = np.asarray(y, dtype=np.int64).reshape(-1)
  if len(x) != len(y):
    raise errors.ShapeError('SVM got %d rows but %d labels' % (len(x), len(y)))
  if not np.all(np.isfinite(x)):
    raise errors.DataError('SVM training rows hold non-finite values')
  present = np.unique(y)
  if len(present) < 2:
    raise errors.DataError('SVM training needs at least two classes, got %s' %
                           present.tolist())
  num_classes = len(class_names) if class_names else int(present.max()) + 1
  missing = sorted(set(range(num_classes)) - set(present.tolist()))
  if missing:
    raise errors.DataError('Classes %s have no SVM training rows' % missing)
  if kernel == 'rbf' and gamma is None:
    gamma = DefaultGamma(x)
  spec = KernelSpec(kernel, gamma if kernel == 'rbf' else None)

  heads = []
  for k in range(num_classes):
    target = np.where(y == k, 1, -1)
    machine = svm.SVC(kernel=spec.kind, C=c, gamma=spec.gamma or 'scale',
                      tol=1e-3)
    machine.fit(x, target)
    # For two classes the public dual_coef_ and intercept_ reproduce
    # decision_function, positive for the +1 class.
    heads.append(SvmHead(machine.support_vectors_.copy(),
                         machine.dual_coef_[0].copy(),
                         float(machine.intercept_[0])))
  names = tuple(class_names) if class_names else tuple(
      str(k) for k in range(num_classes))
  return SvmModel(tuple(heads), spec, float(c), names)


@dataclasses.dataclass
class SearchResult(object):
  kernel: str
  c: float
  score: float
  table: list

  def ToDict(self):
    return dataclasses.asdict(self)


def HyperparamSearch(x, y, kernels=_KERNEL_ORDER, c_values=(1.0,), folds=5,
                     seed=0):
  """Stratified k-fold grid search over kernels and C values.

  The scaler is refitted inside every fold.  Ties on mean accuracy go to the
  linear kernel, then to the smaller C.

  Returns:
    SearchResult with the best cell and one table row per cell.

  Raises:
    ConfigError: on an empty grid or fewer than two folds.
    SplitError: if a class has fewer rows than folds.
  """
  x = _Values(x)
  y = np.asarray(y, dtype=np.int64).reshape(-1)
  if not kernels or not c_values:
    raise errors.ConfigError('The SVM search grid is empty')
  if folds < 2:
    raise errors.ConfigError('Grid search needs at least two folds')
  smallest = int(np.bincount(y)[np.bincount(y) > 0].min())
  if folds > smallest:
    raise errors.SplitError('%d folds exceed the smallest class size %d' %
                            (folds, smallest))
  splitter = model_selection.StratifiedKFold(n_splits=folds, shuffle=True,
                                             random_state=seed)
  splits = list(splitter.split(x, y))
  table = []
  for kernel, c in itertools.product(kernels, c_values):
    accuracies = []
    for train_index, test_index in splits:
      stats = FitScaler(x[train_index])
      model = SvmTrain(ApplyScaler(x[train_index], stats), y[train_index],
                       kernel, c)
      predicted = model.Predict(ApplyScaler(x[test_index], stats))
      accuracies.append(float(np.mean(predicted == y[test_index])))
    table.append({'kernel': kernel, 'c': float(c),
                  'mean_accuracy': float(np.mean(accuracies)),
                  'fold_accuracies': accuracies})
    logging.info('SVM grid %s C=%g: mean accuracy %.4f', kernel, c,
                 table[-1]['mean_accuracy'])
  best = min(table, key=lambda row: (-row['mean_accuracy'],
                                     _KERNEL_ORDER.index(row['kernel']),
                                     row['c']))
  return SearchResult(best['kernel'], best['c'], best['mean_accuracy'], table)


################################################################################
# Pipeline and persistence

@dataclasses.dataclass(frozen=True, eq=False)
class SvmPipeline(object):
  """Extractor, fitted scaler and SVM bound to one extractor fingerprint."""

  extractor: FeatureExtractor
  scaler: ScalerStats
  model: SvmModel
  fingerprint: str

  @property
  def class_names(self):
    return self.model.class_names

  def _Check(self, features):
    if features.fingerprint != self.fingerprint:
      raise errors.FingerprintMismatchError(
          'Features come from extractor %s but the model was trained on %s' %
          (features.fingerprint[:12], self.fingerprint[:12]))

  def Decision(self, features):
    self._Check(features)
    return self.model.Decision(ApplyScaler(features, self.scaler).values)

  def Predict(self, features):
    return np.argmax(self.Decision(features), axis=1)

  def Features(self, images, batch_size=32, resize=True):
    return ExtractFeatures(self.extractor, images, batch_size, resize)

  def Digest(self):
    """sha256 over the extractor fingerprint, the scaler and the SVM."""
    specs, payload = _PackArrays(_ModelArrays(self))
    digest = hashlib.sha256(self.fingerprint.encode())
    digest.update(json.dumps(_ModelHeader(self, specs),
                             sort_keys=True).encode())
    digest.update(payload)
    return digest.hexdigest()


def _PackArrays(arrays):
  specs, blobs = [], []
  for name, array in arrays:
    array = np.ascontiguousarray(array, dtype='<f8')
    specs.append({'name': name, 'shape': list(array.shape)})
    blobs.append(array.tobytes())
  return specs, b''.join(blobs)


def _ModelArrays(pipeline):
  model, stats = pipeline.model, pipeline.scaler
  arrays = [('scaler_mean', stats.mean), ('scaler_scale', stats.scale),
            ('scaler_zero_variance', stats.zero_variance.astype(np.float64)),
            ('intercepts', [head.intercept for head in model.heads])]
  for k, head in enumerate(model.heads):
    arrays.append(('support_vectors_%d' % k, head.support_vectors))
    arrays.append(('dual_coef_%d' % k, head.dual_coef))
  return arrays


def _ModelHeader(pipeline, specs):
  model = pipeline.model
  return {
      'format_version': FORMAT_VERSION,
      'class_names': list(model.class_names),
      'kernel': {'kind': model.kernel.kind, 'gamma': model.kernel.gamma},
      'c': model.c,
      'fingerprint': pipeline.fingerprint,
      'arrays': specs,
  }


def SaveModel(path, pipeline):
  """Write the SVM container plus the extractor weights into path."""
  os.makedirs(path, exist_ok=True)
  specs, payload = _PackArrays(_ModelArrays(pipeline))
  header = json.dumps(_ModelHeader(pipeline, specs),
                      sort_keys=True).encode('utf-8')
  try:
    with open(os.path.join(path, MODEL_FILE), 'wb') as output:
      output.write(_MAGIC)
      output.write(struct.pack('<I', len(header)))
      output.write(header)
      output.write(payload)
  except OSError as e:
    raise errors.ArtifactError('Could not write SVM model to %s' % path, e)
  if pipeline.extractor is not None:
    torch.save(pipeline.extractor.state_dict(),
               os.path.join(path, EXTRACTOR_WEIGHTS_FILE))
    artifacts.WriteJson(os.path.join(path, EXTRACTOR_CONFIG_FILE),
                        pipeline.extractor.ConfigDict())


def _ReadContainer(model_path):
  if not os.path.isfile(model_path):
    raise errors.MissingPathError('SVM model %s does not exist' % model_path)
  with open(model_path, 'rb') as source:
    blob = source.read()
  if not blob.startswith(_MAGIC) or len(blob) < len(_MAGIC) + 4:
    raise errors.ArtifactError('%s is not an SVM model file' % model_path)
  offset = len(_MAGIC)
  (header_length,) = struct.unpack_from('<I', blob, offset)
  offset += 4
  try:
    header = json.loads(blob[offset:offset + header_length].decode('utf-8'))
  except ValueError as e:
    raise errors.ArtifactError('Corrupt SVM model header in %s' % model_path,
                               e)
  if header.get('format_version') != FORMAT_VERSION:
    raise errors.ArtifactVersionError(
        'Unsupported SVM model format version %r in %s' %
        (header.get('format_version'), model_path))
  offset += header_length
  arrays = {}
  for spec in header['arrays']:
    count = int(np.prod(spec['shape'], dtype=np.int64))
    if offset + 8 * count > len(blob):
      raise errors.ArtifactError('Truncated SVM model %s' % model_path)
    arrays[spec['name']] = np.frombuffer(
        blob, dtype='<f8', count=count, offset=offset).reshape(
            spec['shape']).astype(np.float64)
    offset += 8 * count
  return header, arrays


def LoadModel(path):
  """Load an SvmPipeline written by SaveModel.

  Raises:
    MissingPathError: if the model directory or file is missing.
    ArtifactVersionError: on an unsupported format version.
    FingerprintMismatchError: if the stored extractor weights do not match
      the fingerprint the SVM was trained with.
  """
  artifacts.RequireDirectory(path, 'Model directory')
  header, arrays = _ReadContainer(os.path.join(path, MODEL_FILE))
  num_classes = len(header['class_names'])
  heads = tuple(
      SvmHead(arrays['support_vectors_%d' % k], arrays['dual_coef_%d' % k],
              float(arrays['intercepts'][k]))
      for k in range(num_classes))
  kernel = KernelSpec(header['kernel']['kind'], header['kernel']['gamma'])
  model = SvmModel(heads, kernel, header['c'], tuple(header['class_names']))
  scaler = ScalerStats(arrays['scaler_mean'], arrays['scaler_scale'],
                       arrays['scaler_zero_variance'].astype(bool))

  extractor = None
  config_path = os.path.join(path, EXTRACTOR_CONFIG_FILE)
  if os.path.isfile(config_path):
    extractor = _ExtractorFromConfig(artifacts.ReadJson(config_path))
    try:
      extractor.load_state_dict(torch.load(
          os.path.join(path, EXTRACTOR_WEIGHTS_FILE), weights_only=True))
    except (RuntimeError, OSError) as e:
      raise errors.ArtifactError('Could not load extractor weights in %s' %
                                 path, e)
    extractor.eval()
    if extractor.Fingerprint() != header['fingerprint']:
      raise errors.FingerprintMismatchError(
          'Extractor weights in %s do not match the SVM fingerprint' % path)
  return SvmPipeline(extractor, scaler, model, header['fingerprint'])
