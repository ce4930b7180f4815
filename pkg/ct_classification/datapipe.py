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

"""Dataset ingestion, preprocessing, splitting and class balancing.

Images are read from a class-foldered tree:

  <root>/Benign cases/0001.png
  <root>/Malignant cases/0001.jpg
  <root>/Normal cases/0001.bmp

Class indices follow the lexicographic order of the folder names.  Every image
is converted to grayscale, resized, scaled to [0, 1] and replicated into three
channels, giving float32 tensors of shape (height, width, 3).
"""

import csv
import dataclasses
import logging
import math
import os

import numpy as np
from PIL import Image
from sklearn.neighbors import NearestNeighbors

from ct_classification import artifacts
from ct_classification import errors
from ct_classification import validation


IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp')
LUMINANCE_WEIGHTS = (0.299, 0.587, 0.114)

# Rows interpolated per chunk while oversampling full-size images.
_SMOTE_CHUNK_ROWS = 64


class PreprocessConfig(validation.Validated):
  """Resize and channel settings applied to every decoded image."""

  ATTRIBUTES = {
      'target_size': validation.Repeated(validation.Range(1, None), length=2,
                                         default=(256, 256)),
      'replicate_channels': validation.Type(bool, default=True),
      'grayscale_weights': validation.Repeated(
          validation.Range(0.0, 1.0, float), length=3,
          default=LUMINANCE_WEIGHTS),
  }

  def CheckInitialized(self):
    super(PreprocessConfig, self).CheckInitialized()
    if abs(sum(self.grayscale_weights) - 1.0) > 1e-9:
      raise validation.ValidationError(
          'grayscale_weights %r must sum to 1.' % (self.grayscale_weights,))


class SplitSpec(validation.Validated):
  """Train/test split; val_fraction of the training part is held out for
  dense-branch model selection (0 disables it)."""

  ATTRIBUTES = {
      'train_fraction': validation.Range(0.0, 1.0, float, default=0.8,
                                         exclusive=True),
      'val_fraction': validation.Range(0.0, 0.5, float, default=0.1),
      'seed': validation.Optional(int),
      'stratified': validation.Type(bool, default=True),
  }


class SmoteConfig(validation.Validated):
  """SMOTE settings; dense and svm switch balancing per branch."""

  ATTRIBUTES = {
      'k_neighbors': validation.Range(1, None, default=5),
      'seed': validation.Optional(int),
      'dense': validation.Type(bool, default=True),
      'svm': validation.Type(bool, default=True),
  }


class DataConfig(validation.Validated):
  """Dataset source: a class-foldered root or the synthetic generator."""

  ATTRIBUTES = {
      'root': validation.Optional(str),
      'synthetic': validation.Type(bool, default=False),
  }


class SyntheticSpec(validation.Validated):
  ATTRIBUTES = {
      'num_classes': validation.Range(1, None, default=3),
      'per_class': validation.Range(1, None, default=100),
      'image_size': validation.Range(8, None, default=64),
      'separability': validation.Range(0.0, 1.0, float, default=1.0),
  }


@dataclasses.dataclass(frozen=True)
class Sample(object):
  image: np.ndarray
  label: int
  source_path: str
  class_name: str


def _ReadOnly(array):
  view = array.view()
  view.flags.writeable = False
  return view


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset(object):
  """Immutable labeled image collection.

  Attributes:
    images: float32 array (N, H, W, 3) with values in [0, 1].
    labels: int64 array (N,) of class indices.
    class_names: Class names, indexed by label.
    source_paths: Provenance of each image.
  """

  images: np.ndarray
  labels: np.ndarray
  class_names: tuple
  source_paths: tuple

  def __post_init__(self):
    images = np.asarray(self.images, dtype=np.float32)
    labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
    if images.ndim != 4:
      raise errors.ShapeError('Dataset images must be (N, H, W, C), got %s' %
                              (images.shape,))
    if len(images) != len(labels) or len(labels) != len(self.source_paths):
      raise errors.ShapeError('Dataset has %d images, %d labels and %d paths' %
                              (len(images), len(labels),
                               len(self.source_paths)))
    if labels.size and (labels.min() < 0 or
                        labels.max() >= len(self.class_names)):
      raise errors.LabelError('Labels must lie in [0, %d)' %
                              len(self.class_names))
    object.__setattr__(self, 'images', _ReadOnly(images))
    object.__setattr__(self, 'labels', _ReadOnly(labels))
    object.__setattr__(self, 'class_names', tuple(self.class_names))
    object.__setattr__(self, 'source_paths', tuple(self.source_paths))

  def __len__(self):
    return len(self.labels)

  def __getitem__(self, index):
    label = int(self.labels[index])
    return Sample(self.images[index], label, self.source_paths[index],
                  self.class_names[label])

  @property
  def num_classes(self):
    return len(self.class_names)

  def ClassCounts(self):
    return np.bincount(self.labels, minlength=self.num_classes)

  def Subset(self, indices):
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    return Dataset(self.images[indices], self.labels[indices],
                   self.class_names,
                   tuple(self.source_paths[i] for i in indices))


@dataclasses.dataclass
class LoadReport(object):
  root: str
  class_counts: dict
  skipped: list

  def ToDict(self):
    return {'root': self.root,
            'class_counts': dict(self.class_counts),
            'skipped': list(self.skipped),
            'num_skipped': len(self.skipped),
            'num_loaded': int(sum(self.class_counts.values()))}


def DecodeImage(path):
  """Decode an image file to a uint8/uint16 array of shape (H, W[, C]).

  Raises:
    DataError: if the file cannot be decoded.
  """
  try:
    with Image.open(path) as image:
      image.load()
      if image.mode in ('P', 'CMYK', 'YCbCr', 'LAB', 'HSV'):
        image = image.convert('RGB')
      elif image.mode in ('LA', 'PA', 'RGBa'):
        image = image.convert('RGBA')
      elif image.mode == '1':
        image = image.convert('L')
      return np.asarray(image)
  except (OSError, ValueError, SyntaxError) as e:
    raise errors.DataError('Could not decode image %s' % path, e)


def _ToUnitRange(image):
  if image.dtype == np.bool_:
    return image.astype(np.float64)
  if np.issubdtype(image.dtype, np.integer):
    scale = 255.0 if image.dtype == np.uint8 else float(
        np.iinfo(image.dtype).max)
    return image.astype(np.float64) / scale
  return image.astype(np.float64)


def _ToGray(image, weights):
  if image.shape[2] == 1:
    return image[:, :, 0]
  red, green, blue = image[:, :, 0], image[:, :, 1], image[:, :, 2]
  if np.array_equal(red, green) and np.array_equal(red, blue):
    return red
  return np.tensordot(image[:, :, :3], np.asarray(weights, np.float64),
                      axes=([2], [0]))


def _Resize(channel, size):
  height, width = size
  if channel.shape == (height, width):
    return channel
  resized = Image.fromarray(channel.astype(np.float32)).resize(
      (width, height), resample=Image.Resampling.BILINEAR)
  return np.asarray(resized, dtype=np.float64)


def Preprocess(raw_image, cfg=None):
  """Convert a decoded image to a (target_h, target_w, 3) tensor in [0, 1].

  Integer images are divided by their dtype maximum (255 for 8-bit).  With
  replicate_channels the luminance channel is copied into all three output
  channels; otherwise colour inputs keep their channels.  Inputs that already
  conform are returned unchanged.

  Args:
    raw_image: Array of shape (H, W) or (H, W, C) with C in {1, 3, 4}.
    cfg: PreprocessConfig; defaults to 256x256 with channel replication.

  Returns:
    float32 array of shape (target_h, target_w, 3).

  Raises:
    ShapeError: on zero-sized input or an unsupported channel count.
  """
  cfg = cfg or PreprocessConfig()
  image = np.asarray(raw_image)
  if image.ndim == 2:
    image = image[:, :, np.newaxis]
  if image.ndim != 3:
    raise errors.ShapeError('Expected an (H, W) or (H, W, C) image, got %s' %
                            (image.shape,))
  if min(image.shape) == 0:
    raise errors.ShapeError('Image has a zero dimension: %s' % (image.shape,))
  if image.shape[2] not in (1, 3, 4):
    raise errors.ShapeError('Unsupported channel count %d' % image.shape[2])

  image = _ToUnitRange(image)
  if image.shape[2] == 4:
    image = image[:, :, :3]
  if image.shape[2] == 1 or cfg.replicate_channels:
    channels = [_ToGray(image, cfg.grayscale_weights)] * 3
  else:
    channels = [image[:, :, i] for i in range(3)]
  channels = [_Resize(channel, cfg.target_size) for channel in channels]
  return np.clip(np.stack(channels, axis=-1), 0.0, 1.0).astype(np.float32)


def LoadDataset(root_dir, cfg=None):
  """Read a class-foldered image tree.

  Args:
    root_dir: Directory whose subdirectories are the classes.
    cfg: PreprocessConfig applied to every image.

  Returns:
    A (Dataset, LoadReport) tuple.  Undecodable files are skipped and listed
    in the report.

  Raises:
    MissingPathError: if root_dir does not exist.
    EmptyClassError: if there are no classes or a class has no usable image.
  """
  if not os.path.isdir(root_dir):
    raise errors.MissingPathError('Dataset directory %s does not exist' %
                                  root_dir)
  class_names = sorted(
      name for name in os.listdir(root_dir)
      if os.path.isdir(os.path.join(root_dir, name)) and
      not name.startswith('.'))
  if not class_names:
    raise errors.EmptyClassError('No class directories under %s' % root_dir)

  images, labels, paths, skipped = [], [], [], []
  counts = {}
  for label, class_name in enumerate(class_names):
    class_dir = os.path.join(root_dir, class_name)
    file_names = sorted(
        name for name in os.listdir(class_dir)
        if os.path.splitext(name)[1].lower() in IMAGE_EXTENSIONS and
        os.path.isfile(os.path.join(class_dir, name)))
    loaded = 0
    for file_name in file_names:
      path = os.path.join(class_dir, file_name)
      try:
        images.append(Preprocess(DecodeImage(path), cfg))
      except errors.Error as e:
        logging.warning('Skipping %s: %s', path, e)
        skipped.append({'path': path, 'reason': str(e)})
        continue
      labels.append(label)
      paths.append(path)
      loaded += 1
    if not loaded:
      raise errors.EmptyClassError('Class directory %s holds no decodable '
                                   'image' % class_dir)
    counts[class_name] = loaded
    logging.info('Loaded %d images of class %d (%s)', loaded, label,
                 class_name)

  dataset = Dataset(np.stack(images), np.asarray(labels), tuple(class_names),
                    tuple(paths))
  return dataset, LoadReport(root_dir, counts, skipped)


def _RoundHalfAway(value):
  # round() to 9 places first so 112.99999999999997 counts as 113.
  value = round(value, 9)
  return int(math.floor(abs(value) + 0.5)) * (1 if value >= 0 else -1)


def StratifiedSplit(dataset, spec=None):
  """Split a dataset into disjoint train and test parts.

  Each class contributes round(count * (1 - train_fraction)) test samples,
  halves rounded away from zero.  The split is a pure function of the dataset
  and spec.seed.

  Returns:
    A (train, test) tuple of Datasets, each in original sample order.

  Raises:
    SplitError: if a class has a single sample.
  """
  spec = spec or SplitSpec()
  rng = np.random.default_rng(spec.seed or 0)
  test_fraction = 1.0 - spec.train_fraction
  train_indices, test_indices = [], []
  if spec.stratified:
    for label, count in enumerate(dataset.ClassCounts()):
      if count == 0:
        continue
      if count < 2:
        raise errors.SplitError('Class %s has a single sample and cannot be '
                                'stratified' % dataset.class_names[label])
      members = rng.permutation(np.flatnonzero(dataset.labels == label))
      num_test = _RoundHalfAway(count * test_fraction)
      test_indices.extend(members[:num_test])
      train_indices.extend(members[num_test:])
  else:
    members = rng.permutation(len(dataset))
    num_test = _RoundHalfAway(len(dataset) * test_fraction)
    test_indices.extend(members[:num_test])
    train_indices.extend(members[num_test:])
  return (dataset.Subset(sorted(train_indices)),
          dataset.Subset(sorted(test_indices)))


def ValidationSplit(train, spec=None):
  """Carve spec.val_fraction of a training set off as validation data.

  Returns:
    A (train, validation) tuple; validation is None when val_fraction is 0 or
    the training set is too small to stratify.
  """
  spec = spec or SplitSpec()
  if not spec.val_fraction:
    return train, None
  holdout = SplitSpec(train_fraction=1.0 - spec.val_fraction,
                      seed=(spec.seed or 0) + 1,
                      stratified=spec.stratified)
  try:
    fit, val = StratifiedSplit(train, holdout)
  except errors.SplitError as e:
    logging.warning('No validation split: %s', e)
    return train, None
  if not len(val) or not len(fit):
    logging.warning('Validation split is empty; selecting on training data')
    return train, None
  return fit, val


def _NeighborsExcludingSelf(neighbors, k):
  result = np.empty((len(neighbors), k), dtype=np.int64)
  for i, row in enumerate(neighbors):
    result[i] = row[row != i][:k]
  return result


def SmoteBalance(x, y, cfg=None):
  """Oversample minority classes up to the majority class count.

  Each synthetic row is a + t * (b - a) where a is a random minority row, b one
  of its k nearest same-class neighbours and t uniform in [0, 1].  Original
  rows come first, unchanged, followed by the synthetic rows class by class.

  Args:
    x: Array (N, ...) of samples; trailing dimensions are flattened for the
      neighbour search and restored on output.
    y: Integer labels (N,).
    cfg: SmoteConfig.

  Returns:
    A (x_balanced, y_balanced) tuple.

  Raises:
    ShapeError: if x and y disagree in length.
    BalancingError: if a minority class has no more than k_neighbors rows.
  """
  cfg = cfg or SmoteConfig()
  x = np.asarray(x)
  y = np.asarray(y, dtype=np.int64).reshape(-1)
  if len(x) != len(y):
    raise errors.ShapeError('SMOTE got %d rows but %d labels' %
                            (len(x), len(y)))
  sample_shape = x.shape[1:]
  flat = x.reshape(len(x), -1)
  out_dtype = flat.dtype if np.issubdtype(flat.dtype,
                                          np.floating) else np.float64
  classes, counts = np.unique(y, return_counts=True)
  if len(classes) < 2:
    logging.warning('SMOTE needs at least two classes; input returned as is')
    return x.copy(), y.copy()

  majority = counts.max()
  k = cfg.k_neighbors
  rng = np.random.default_rng(cfg.seed or 0)
  new_rows, new_labels = [], []
  for label, count in zip(classes, counts):
    deficit = int(majority - count)
    if not deficit:
      continue
    if count <= k:
      raise errors.BalancingError(
          'Class %d has %d samples; SMOTE needs more than k_neighbors=%d' %
          (label, count, k))
    members = flat[y == label]
    index = NearestNeighbors(n_neighbors=k + 1).fit(members)
    neighbors = _NeighborsExcludingSelf(
        index.kneighbors(members, return_distance=False), k)
    bases = rng.integers(0, count, size=deficit)
    partners = neighbors[bases, rng.integers(0, k, size=deficit)]
    gaps = rng.random(deficit)
    for start in range(0, deficit, _SMOTE_CHUNK_ROWS):
      stop = start + _SMOTE_CHUNK_ROWS
      a = members[bases[start:stop]].astype(np.float64)
      b = members[partners[start:stop]].astype(np.float64)
      new_rows.append((a + gaps[start:stop, np.newaxis] * (b - a))
                      .astype(out_dtype))
    new_labels.append(np.full(deficit, label, dtype=np.int64))
    logging.info('SMOTE added %d synthetic rows to class %d', deficit, label)

  x_balanced = np.concatenate([flat.astype(out_dtype)] + new_rows)
  y_balanced = np.concatenate([y] + new_labels)
  return x_balanced.reshape((-1,) + sample_shape), y_balanced


def BalanceDataset(dataset, cfg=None):
  """SMOTE-balance a Dataset's images; synthetic rows get provenance tags."""
  images, labels = SmoteBalance(dataset.images, dataset.labels, cfg)
  extra = len(labels) - len(dataset)
  paths = dataset.source_paths + tuple(
      'smote:%s/%d' % (dataset.class_names[labels[len(dataset) + i]], i)
      for i in range(extra))
  return Dataset(images, labels, dataset.class_names, paths)


def OneHot(y, k):
  """Encode labels as a (len(y), k) float matrix of one-hot rows.

  Raises:
    LabelError: if a label lies outside [0, k).
  """
  y = np.asarray(y, dtype=np.int64).reshape(-1)
  if y.size and (y.min() < 0 or y.max() >= k):
    raise errors.LabelError('Labels must lie in [0, %d), got range [%d, %d]' %
                            (k, y.min(), y.max()))
  encoded = np.zeros((len(y), k), dtype=np.float64)
  encoded[np.arange(len(y)), y] = 1.0
  return encoded


def _SyntheticImage(label, spec, rng, xx, yy):
  # Every image draws the same random quantities regardless of its class, so
  # with separability 0 all classes share one distribution.
  phase = rng.uniform(0.0, 2.0 * np.pi)
  jitter = rng.normal(0.0, 0.03, size=2)
  noise = rng.normal(0.0, 0.05, size=xx.shape)

  k = spec.num_classes
  angle = np.pi * label / k
  frequency = 2.0 + 2.0 * label
  stripes = 0.5 + 0.5 * np.sin(
      2.0 * np.pi * frequency * (xx * np.cos(angle) + yy * np.sin(angle)) +
      phase)
  theta = 2.0 * np.pi * label / k
  center_x = 0.5 + 0.25 * np.cos(theta) + jitter[0]
  center_y = 0.5 + 0.25 * np.sin(theta) + jitter[1]
  blob = np.exp(-((xx - center_x) ** 2 + (yy - center_y) ** 2) /
                (2.0 * 0.1 ** 2))
  pattern = 0.5 * stripes + 0.5 * blob - 0.5
  level = label / (k - 1) - 0.5 if k > 1 else 0.0
  gray = 0.5 + spec.separability * (0.3 * pattern + 0.3 * level) + noise
  return np.clip(gray, 0.0, 1.0)


def MakeSyntheticDataset(spec=None, seed=0):
  """Generate a class-balanced stand-in dataset.

  Class c is marked by stripes of its own frequency and orientation, a blob at
  its own position and its own brightness level, all scaled by separability.

  Returns:
    Dataset of num_classes * per_class images, grouped by class.
  """
  spec = spec or SyntheticSpec()
  rng = np.random.default_rng(seed)
  size = spec.image_size
  yy, xx = np.mgrid[0:size, 0:size] / float(size - 1)
  total = spec.num_classes * spec.per_class
  images = np.empty((total, size, size, 3), dtype=np.float32)
  labels = np.repeat(np.arange(spec.num_classes), spec.per_class)
  class_names = tuple('class_%d' % c for c in range(spec.num_classes))
  paths = []
  for n, label in enumerate(labels):
    gray = _SyntheticImage(int(label), spec, rng, xx, yy)
    images[n] = np.repeat(gray[:, :, np.newaxis], 3, axis=2)
    paths.append('synthetic/%s/%04d' % (class_names[label], n))
  return Dataset(images, labels, class_names, tuple(paths))


def SaveDataset(dataset, path):
  np.savez(path, images=np.asarray(dataset.images),
           labels=np.asarray(dataset.labels),
           class_names=np.asarray(dataset.class_names, dtype=str),
           source_paths=np.asarray(dataset.source_paths, dtype=str))


def LoadCachedDataset(path):
  """Load a Dataset written by SaveDataset.

  Raises:
    MissingPathError: if path does not exist.
  """
  if not os.path.isfile(path):
    raise errors.MissingPathError('Dataset cache %s does not exist' % path)
  with np.load(path, allow_pickle=False) as cache:
    return Dataset(cache['images'], cache['labels'],
                   tuple(str(name) for name in cache['class_names']),
                   tuple(str(p) for p in cache['source_paths']))


def WriteSplitManifest(path, train, test):
  """Write one 'path,label,split' row per sample."""
  with open(path, 'w', newline='') as output:
    writer = csv.writer(output)
    writer.writerow(['path', 'label', 'split'])
    for split_name, part in (('train', train), ('test', test)):
      for source_path, label in zip(part.source_paths, part.labels):
        writer.writerow([source_path, int(label), split_name])


def WriteLoadReport(path, report):
  artifacts.WriteJson(path, report.ToDict())
