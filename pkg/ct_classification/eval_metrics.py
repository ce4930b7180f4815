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

"""Confusion matrices, per-class metrics, one-vs-rest ROC and report files.

Confusion matrices have true classes as rows and predicted classes as
columns.  Values keep full precision; RoundHalfUp is applied only when
rendering Markdown.
"""

import csv
import dataclasses
import decimal
import os

import matplotlib
matplotlib.use('Agg')
from matplotlib import pyplot
import numpy as np
from sklearn import metrics

from ct_classification import artifacts
from ct_classification import errors


SCHEMA_VERSION = 1


@dataclasses.dataclass(frozen=True, eq=False)
class ConfusionMatrix(object):
  counts: np.ndarray
  class_names: tuple

  @property
  def num_classes(self):
    return self.counts.shape[0]

  @property
  def support(self):
    return self.counts.sum(axis=1)

  @property
  def total(self):
    return int(self.counts.sum())


def CountConfusion(y_true, y_pred, num_classes, class_names=None):
  """Count samples with true class i predicted as j into cell (i, j).

  Raises:
    ShapeError: if the label vectors differ in length.
    LabelError: if a label lies outside [0, num_classes).
  """
  y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
  y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
  if len(y_true) != len(y_pred):
    raise errors.ShapeError('%d true labels but %d predictions' %
                            (len(y_true), len(y_pred)))
  for labels in (y_true, y_pred):
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
      raise errors.LabelError('Labels must lie in [0, %d)' % num_classes)
  counts = np.zeros((num_classes, num_classes), dtype=np.int64)
  np.add.at(counts, (y_true, y_pred), 1)
  names = tuple(class_names) if class_names else tuple(
      str(k) for k in range(num_classes))
  return ConfusionMatrix(counts, names)


@dataclasses.dataclass
class ClassMetrics(object):
  name: str
  precision: float
  recall: float
  f1: float
  support: int
  precision_undefined: bool = False
  recall_undefined: bool = False


@dataclasses.dataclass
class ClassificationResult(object):
  per_class: list
  accuracy: float
  macro_avg: dict
  weighted_avg: dict


def _Ratio(numerator, denominator):
  if denominator == 0:
    return 0.0, True
  return numerator / denominator, False


def ClassificationReport(cm):
  """Per-class precision, recall, F1 and support plus accuracy.

  Zero denominators give 0.0 with the matching *_undefined flag.

  Raises:
    MetricsError: if the matrix holds no samples.
  """
  if cm.total == 0:
    raise errors.MetricsError('Cannot report on an empty confusion matrix')
  counts = cm.counts
  per_class = []
  for k in range(cm.num_classes):
    hits = float(counts[k, k])
    precision, precision_undefined = _Ratio(hits, float(counts[:, k].sum()))
    recall, recall_undefined = _Ratio(hits, float(counts[k, :].sum()))
    f1 = (2.0 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    per_class.append(ClassMetrics(cm.class_names[k], precision, recall, f1,
                                  int(counts[k, :].sum()),
                                  precision_undefined, recall_undefined))
  supports = np.asarray([row.support for row in per_class], dtype=np.float64)

  def Average(weights):
    return {field: float(np.average([getattr(row, field) for row in per_class],
                                    weights=weights))
            for field in ('precision', 'recall', 'f1')}

  return ClassificationResult(
      per_class, float(np.trace(counts)) / cm.total,
      Average(np.ones(len(per_class))), Average(supports))


@dataclasses.dataclass
class RocCurve(object):
  class_idx: int
  fpr: list
  tpr: list
  auc: float = None
  undefined: bool = False


def RocAucOvr(y_true, scores, class_idx):
  """One-vs-rest ROC curve and AUC of one class.

  Every distinct score is a threshold, so tied scores contribute one half to
  the AUC.  If y_true lacks positives or negatives for the class, the AUC is
  None and undefined is set.

  Raises:
    MetricsError: on non-finite scores.
  """
  y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
  scores = np.asarray(scores, dtype=np.float64)
  column = scores[:, class_idx] if scores.ndim == 2 else scores
  if len(column) != len(y_true):
    raise errors.ShapeError('%d scores for %d labels' % (len(column),
                                                         len(y_true)))
  if not np.all(np.isfinite(column)):
    raise errors.MetricsError('Scores for class %d are not finite' %
                              class_idx)
  positive = y_true == class_idx
  if positive.all() or not positive.any():
    return RocCurve(class_idx, [], [], None, True)
  fpr, tpr, _ = metrics.roc_curve(positive, column, drop_intermediate=False)
  return RocCurve(class_idx, fpr.tolist(), tpr.tolist(),
                  float(metrics.auc(fpr, tpr)), False)


def RoundHalfUp(value, places=2):
  """Round for presentation, halves away from zero: 0.875 -> 0.88."""
  quantum = decimal.Decimal(1).scaleb(-places)
  return float(decimal.Decimal(repr(float(value))).quantize(
      quantum, rounding=decimal.ROUND_HALF_UP))


@dataclasses.dataclass
class EvalReport(object):
  """Everything emitted for one evaluation, in JSON-friendly types."""

  class_names: list
  confusion: list
  per_class: list
  accuracy: float
  macro_avg: dict
  weighted_avg: dict
  auc: list
  roc: list
  model_id: str = ''
  manifest_hash: str = ''
  branch: str = ''
  split: str = ''
  notes: list = dataclasses.field(default_factory=list)
  schema_version: int = SCHEMA_VERSION

  def ToDict(self):
    return dataclasses.asdict(self)

  @classmethod
  def FromDict(cls, values):
    if values.get('schema_version') != SCHEMA_VERSION:
      raise errors.ArtifactVersionError('Unsupported metrics schema version '
                                        '%r' % values.get('schema_version'))
    return cls(**values)


def BuildEvalReport(y_true, y_pred, scores, class_names, model_id='',
                    manifest_hash='', branch='', split=''):
  """Assemble an EvalReport from labels, predictions and class scores."""
  k = len(class_names)
  cm = CountConfusion(y_true, y_pred, k, class_names)
  result = ClassificationReport(cm)
  curves = [RocAucOvr(y_true, scores, c) for c in range(k)]
  notes = []
  for curve in curves:
    if curve.undefined:
      notes.append('AUC of class %s is undefined: the evaluated split lacks '
                   'positives or negatives for it' %
                   class_names[curve.class_idx])
  for row in result.per_class:
    if row.precision_undefined:
      notes.append('Precision of class %s is reported as 0: nothing was '
                   'predicted as it' % row.name)
  return EvalReport(
      class_names=list(class_names),
      confusion=cm.counts.tolist(),
      per_class=[dataclasses.asdict(row) for row in result.per_class],
      accuracy=result.accuracy,
      macro_avg=result.macro_avg,
      weighted_avg=result.weighted_avg,
      auc=[curve.auc for curve in curves],
      roc=[{'fpr': curve.fpr, 'tpr': curve.tpr} for curve in curves],
      model_id=model_id, manifest_hash=manifest_hash, branch=branch,
      split=split, notes=notes)


def _Cell(value):
  return '%.2f' % RoundHalfUp(value)


def MarkdownSummary(report):
  """Render the per-class table, averages and AUCs as Markdown."""
  lines = ['# Evaluation: %s on %s' % (report.branch or 'model',
                                       report.split or 'data'),
           '',
           '| Class | Precision | Recall | F1 | Support |',
           '| --- | --- | --- | --- | --- |']
  for row in report.per_class:
    lines.append('| %s | %s | %s | %s | %d |' % (
        row['name'], _Cell(row['precision']), _Cell(row['recall']),
        _Cell(row['f1']), row['support']))
  total = sum(row['support'] for row in report.per_class)
  for label, averages in (('Macro avg', report.macro_avg),
                          ('Weighted avg', report.weighted_avg)):
    lines.append('| %s | %s | %s | %s | %d |' % (
        label, _Cell(averages['precision']), _Cell(averages['recall']),
        _Cell(averages['f1']), total))
  lines.extend(['', 'Accuracy: %s' % _Cell(report.accuracy), '',
                '| Class | AUC |', '| --- | --- |'])
  for name, value in zip(report.class_names, report.auc):
    lines.append('| %s | %s |' % (name, 'undefined' if value is None
                                  else _Cell(value)))
  if report.notes:
    lines.extend([''] + ['Note: %s' % note for note in report.notes])
  return '\n'.join(lines) + '\n'


def WriteText(path, text):
  try:
    with open(path, 'w') as output:
      output.write(text)
  except OSError as e:
    raise errors.ArtifactError('Could not write %s' % path, e)


def WriteConfusionCsv(path, report):
  try:
    with open(path, 'w', newline='') as output:
      writer = csv.writer(output)
      writer.writerow(['true\\predicted'] + list(report.class_names))
      for name, row in zip(report.class_names, report.confusion):
        writer.writerow([name] + list(row))
  except OSError as e:
    raise errors.ArtifactError('Could not write %s' % path, e)


def PlotRoc(path, name, fpr, tpr, auc):
  figure, axes = pyplot.subplots(figsize=(5, 5))
  axes.plot(fpr, tpr, color='tab:orange', label='AUC = %.2f' % auc)
  axes.plot([0, 1], [0, 1], color='gray', linestyle='--', linewidth=0.8)
  axes.set_xlabel('False positive rate')
  axes.set_ylabel('True positive rate')
  axes.set_title('ROC: %s vs rest' % name)
  axes.legend(loc='lower right')
  figure.tight_layout()
  figure.savefig(path, dpi=100)
  pyplot.close(figure)


def PlotHistory(path, history):
  """Training and validation accuracy and loss per epoch."""
  epochs = range(1, len(history.train_loss) + 1)
  figure, (accuracy_axes, loss_axes) = pyplot.subplots(1, 2, figsize=(10, 4))
  accuracy_axes.plot(epochs, history.train_accuracy, label='train')
  accuracy_axes.plot(epochs, history.val_accuracy, label='validation')
  accuracy_axes.set_title('Accuracy')
  loss_axes.plot(epochs, history.train_loss, label='train')
  loss_axes.plot(epochs, history.val_loss, label='validation')
  loss_axes.set_title('Focal loss')
  for axes in (accuracy_axes, loss_axes):
    axes.set_xlabel('Epoch')
    axes.legend()
  figure.tight_layout()
  figure.savefig(path, dpi=100)
  pyplot.close(figure)


def EmitReport(report, out_dir):
  """Write metrics.json, confusion.csv, roc_class_<k>.png and report.md.

  Raises:
    ArtifactError: naming the path that could not be written.
  """
  artifacts.WriteJson(os.path.join(out_dir, 'metrics.json'), report.ToDict())
  WriteConfusionCsv(os.path.join(out_dir, 'confusion.csv'), report)
  for k, (name, curve, auc) in enumerate(zip(report.class_names, report.roc,
                                             report.auc)):
    if auc is None:
      continue
    PlotRoc(os.path.join(out_dir, 'roc_class_%d.png' % k), name,
            curve['fpr'], curve['tpr'], auc)
  WriteText(os.path.join(out_dir, 'report.md'), MarkdownSummary(report))


def LoadReport(path):
  return EvalReport.FromDict(artifacts.ReadJson(path))
