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

"""Implementation of the prepare, train, evaluate, explain and report commands.

A run directory is created by prepare and collects everything later commands
produce:

  <out>/run-<timestamp>/
    config.yaml  manifest.csv  load_report.json  data/{train,test}.npz
    train-<branch>-<timestamp>/model/...
    evaluate-<branch>-<split>-<timestamp>/metrics.json ...
    explain-<branch>-<method>-<timestamp>/...
    report-<timestamp>/comparison.{json,md}

Each command output is staged and renamed into place when complete.
"""

import logging
import os

import numpy as np
import torch

from ct_classification import artifacts
from ct_classification import datapipe
from ct_classification import dense_classifier
from ct_classification import errors
from ct_classification import eval_metrics
from ct_classification import explain
from ct_classification import run_config
from ct_classification import svm_branch


DATA_DIR = 'data'
MANIFEST_FILE = 'manifest.csv'
LOAD_REPORT_FILE = 'load_report.json'
MODEL_DIR = 'model'
FEATURES_FILE = 'features_train.npz'
SPLITS = ('train', 'test')


def _SplitPath(run_dir, split):
  return os.path.join(run_dir, DATA_DIR, split + '.npz')


def LoadSplit(run_dir, split):
  if split not in SPLITS:
    raise errors.ConfigError('Unknown split "%s"; expected one of %s' %
                             (split, ', '.join(SPLITS)))
  return datapipe.LoadCachedDataset(_SplitPath(run_dir, split))


def LatestRunDir(out):
  run_dir = artifacts.LatestInvocation(out, 'run')
  if run_dir is None:
    raise errors.MissingPathError('No run directory under %s; run prepare '
                                  'first' % out)
  return run_dir


def _LoadSource(config):
  """Return (Dataset, LoadReport) from the configured source."""
  if config.data.synthetic:
    dataset = datapipe.MakeSyntheticDataset(config.synthetic, config.seed)
    target = tuple(config.preprocess.target_size)
    if dataset.images.shape[1:3] != target:
      dataset = datapipe.Dataset(
          np.stack([datapipe.Preprocess(image, config.preprocess)
                    for image in dataset.images]),
          dataset.labels, dataset.class_names, dataset.source_paths)
    counts = dict(zip(dataset.class_names,
                      (int(c) for c in dataset.ClassCounts())))
    return dataset, datapipe.LoadReport('synthetic', counts, [])
  if not config.data.root:
    raise errors.ConfigError('Set data.root or pass --synthetic')
  return datapipe.LoadDataset(config.data.root, config.preprocess)


def Prepare(config):
  """Load, preprocess and split the dataset into a new run directory.

  Returns:
    Path of the run directory.
  """
  dataset, report = _LoadSource(config)
  train, test = datapipe.StratifiedSplit(dataset, config.split)
  logging.info('Split %d samples into %d train and %d test', len(dataset),
               len(train), len(test))
  run_dir = artifacts.NewInvocationPath(config.out, 'run')
  with artifacts.StagedDirectory(run_dir) as staging:
    os.makedirs(os.path.join(staging, DATA_DIR))
    datapipe.SaveDataset(train, _SplitPath(staging, 'train'))
    datapipe.SaveDataset(test, _SplitPath(staging, 'test'))
    datapipe.WriteSplitManifest(os.path.join(staging, MANIFEST_FILE), train,
                                test)
    datapipe.WriteLoadReport(os.path.join(staging, LOAD_REPORT_FILE), report)
    run_config.WriteRunConfig(config, staging)
  return run_dir


################################################################################
# train

def _TrainDense(config, train, staging):
  fit, val = datapipe.ValidationSplit(train, config.split)
  fit = dense_classifier.BalancedTrainingSet(fit, config.smote,
                                             config.smote.dense)
  model = dense_classifier.BuildModel(config.dense, train.num_classes,
                                      config.seed)
  model, history = dense_classifier.Train(model, fit, val, config.focal,
                                          config.dense, config.seed)
  dense_classifier.SaveModel(os.path.join(staging, MODEL_DIR), model,
                             config.dense, history, train.class_names)
  if history.epochs:
    eval_metrics.PlotHistory(os.path.join(staging, 'history.png'), history)


def _TrainSvm(config, train, staging):
  svm_cfg = config.svm
  extractor = svm_branch.BuildExtractor(svm_cfg, config.seed)
  features = svm_branch.ExtractFeatures(extractor, train.images,
                                        svm_cfg.batch_size, resize=True)
  labels = np.asarray(train.labels)
  svm_branch.SaveFeatures(os.path.join(staging, FEATURES_FILE),
                          features, labels)
  kernel, c = svm_cfg.kernel, svm_cfg.c
  if svm_cfg.search:
    result = svm_branch.HyperparamSearch(
        features.values, labels, svm_cfg.kernels, svm_cfg.c_values,
        svm_cfg.folds, config.seed)
    artifacts.WriteJson(os.path.join(staging, 'search.json'),
                        result.ToDict())
    kernel, c = result.kernel, result.c
    logging.info('Selected %s kernel with C=%g (CV accuracy %.4f)', kernel,
                 c, result.score)

  scaler = svm_branch.FitScaler(features)
  x, y = features.values, labels
  if config.smote.svm:
    x, y = datapipe.SmoteBalance(x, y, config.smote)
  model = svm_branch.SvmTrain(svm_branch.ApplyScaler(x, scaler), y, kernel,
                              c, svm_cfg.gamma, train.class_names)
  pipeline = svm_branch.SvmPipeline(extractor, scaler, model,
                                    features.fingerprint)
  svm_branch.SaveModel(os.path.join(staging, MODEL_DIR), pipeline)


_TRAINERS = {'dense': _TrainDense, 'svm': _TrainSvm}


def Train(config, run_dir):
  """Train every configured branch on the run's training split.

  Returns:
    List of the created train-<branch>-<timestamp> directories.
  """
  train = LoadSplit(run_dir, 'train')
  outputs = []
  for branch in config.branches:
    output = artifacts.NewInvocationPath(run_dir, 'train-%s' % branch)
    logging.info('Training the %s branch into %s', branch, output)
    with artifacts.StagedDirectory(output) as staging:
      _TRAINERS[branch](config, train, staging)
      run_config.WriteRunConfig(config, staging)
    outputs.append(output)
  return outputs


################################################################################
# evaluate / explain helpers

def ResolveModel(run_dir, branch, model_path=None):
  """Explicit model path, or the model of the latest training of branch.

  Raises:
    MissingPathError: if no model exists.
  """
  if model_path:
    return artifacts.RequireDirectory(model_path, 'Model directory')
  latest = artifacts.LatestInvocation(run_dir, 'train-%s' % branch)
  if latest is None:
    raise errors.MissingPathError('No trained %s model in %s' %
                                  (branch, run_dir))
  return artifacts.RequireDirectory(os.path.join(latest, MODEL_DIR),
                                    'Model directory')


def LoadBranchModel(branch, path):
  if branch == 'dense':
    model, _, _, class_names = dense_classifier.LoadModel(path)
    return model, class_names
  pipeline = svm_branch.LoadModel(path)
  return pipeline, pipeline.class_names


def _Scores(branch, model, images, config):
  if branch == 'dense':
    return dense_classifier.Predict(model, images, resize=True,
                                    batch_size=config.dense.batch_size)
  features = model.Features(images, config.svm.batch_size)
  return model.Decision(features)


def _LoadModels(config, run_dir, model_path):
  if model_path and len(config.branches) > 1:
    raise errors.ConfigError('--model needs a single --branch')
  models = []
  for branch in config.branches:
    path = ResolveModel(run_dir, branch, model_path)
    model, class_names = LoadBranchModel(branch, path)
    models.append((branch, path, model, class_names))
  return models


def _ModelId(branch, model):
  """Content digest of a loaded model; equal weights give equal ids."""
  if branch == 'dense':
    return 'sha256:' + dense_classifier.WeightsDigest(model)
  return 'sha256:' + model.Digest()


def _ModelPath(run_dir, path):
  absolute = os.path.abspath(path)
  root = os.path.abspath(run_dir)
  if absolute.startswith(root + os.sep):
    return os.path.relpath(absolute, root)
  return absolute


def Evaluate(config, run_dir, model_path=None, split='test'):
  """Score a split with each configured branch and emit report files.

  Returns:
    List of (output directory, EvalReport) pairs.
  """
  dataset = LoadSplit(run_dir, split)
  models = _LoadModels(config, run_dir, model_path)
  manifest = os.path.join(run_dir, MANIFEST_FILE)
  manifest_hash = (artifacts.FileSha256(manifest)
                   if os.path.isfile(manifest) else '')
  results = []
  for branch, path, model, class_names in models:
    if tuple(class_names) != tuple(dataset.class_names):
      raise errors.DataError('Model classes %s differ from dataset classes %s'
                             % (list(class_names), list(dataset.class_names)))
    scores = _Scores(branch, model, dataset.images, config)
    report = eval_metrics.BuildEvalReport(
        dataset.labels, np.argmax(scores, axis=1), scores, class_names,
        model_id=_ModelId(branch, model), manifest_hash=manifest_hash,
        branch=branch, split=split)
    logging.info('%s branch accuracy on %s: %.4f', branch, split,
                 report.accuracy)
    output = artifacts.NewInvocationPath(run_dir, 'evaluate-%s-%s' %
                                         (branch, split))
    with artifacts.StagedDirectory(output) as staging:
      eval_metrics.EmitReport(report, staging)
      run_config.WriteRunConfig(config, staging)
    results.append((output, report))
  return results


################################################################################
# explain

def _DenseFeatures(model, images, batch_size):
  rows = []
  model.eval()
  with torch.no_grad():
    for start in range(0, len(images), batch_size):
      x = dense_classifier.ToModelInput(images[start:start + batch_size],
                                        model.input_size)
      rows.append(model.Features(x).double().numpy())
  return np.concatenate(rows)


def _ShapSetup(branch, model, config):
  """Return (predict_fn, feature function) in the explained feature space."""
  if branch == 'dense':
    def PredictDense(rows):
      with torch.no_grad():
        logits = model.head(torch.as_tensor(rows, dtype=torch.float32))
        return torch.softmax(logits.double(), dim=1).numpy()

    def DenseFeatures(images):
      return _DenseFeatures(model, images, config.dense.batch_size)

    return PredictDense, DenseFeatures

  def SvmFeatures(images):
    features = model.Features(images, config.svm.batch_size)
    return svm_branch.ApplyScaler(features, model.scaler).values

  return model.model.Decision, SvmFeatures


def _ExplainImages(config, dataset, index, count, image_path):
  if image_path:
    image = datapipe.Preprocess(datapipe.DecodeImage(image_path),
                                config.preprocess)
    return image[np.newaxis], [image_path]
  if not 0 <= index < len(dataset) or count < 1:
    raise errors.ConfigError('Sample index %d (count %d) outside a split of '
                             '%d samples' % (index, count, len(dataset)))
  stop = min(len(dataset), index + count)
  return (np.asarray(dataset.images[index:stop]),
          list(dataset.source_paths[index:stop]))


def Explain(config, run_dir, model_path=None, method=None, index=0,
            image_path=None, count=1, class_idx=None, split='test'):
  """Write Grad-CAM heatmaps or SHAP attributions for selected images.

  Images are taken from the split starting at index, or from image_path.
  The explained class defaults to each image's predicted class.

  Returns:
    List of the created explain-<branch>-<method>-<timestamp> directories.
  """
  method = method or config.explain.method
  dataset = LoadSplit(run_dir, split)
  images, sources = _ExplainImages(config, dataset, index, count, image_path)
  models = _LoadModels(config, run_dir, model_path)
  outputs = []
  for branch, path, model, class_names in models:
    scores = _Scores(branch, model, images, config)
    targets = ([class_idx] * len(images) if class_idx is not None
               else np.argmax(scores, axis=1).tolist())
    output = artifacts.NewInvocationPath(run_dir, 'explain-%s-%s' %
                                         (branch, method))
    with artifacts.StagedDirectory(output) as staging:
      if method == 'gradcam':
        _WriteGradCams(config, branch, model, images, targets, staging)
      else:
        _WriteShap(config, branch, model, path, images, targets, run_dir,
                   staging)
      artifacts.WriteJson(os.path.join(staging, 'explained.json'), {
          'model_id': _ModelId(branch, model),
          'model_path': _ModelPath(run_dir, path),
          'method': method,
          'sources': sources,
          'classes': [class_names[t] for t in targets],
          'class_indices': [int(t) for t in targets]})
      run_config.WriteRunConfig(config, staging)
    outputs.append(output)
  return outputs


def _WriteGradCams(config, branch, model, images, targets, staging):
  for n, (image, target) in enumerate(zip(images, targets)):
    if branch == 'dense':
      heatmap = explain.GradCam(model, image, int(target),
                                config.explain.layer or explain.DENSE_LAYER)
    else:
      heatmap = explain.GradCamSvm(model, image, int(target))
    explain.WriteHeatmap(staging, 'gradcam_%d' % n, heatmap, image,
                         config.explain.opacity)


def _TrainingRows(branch, model, model_path, featurize, run_dir):
  """Training split in the explained feature space.

  The SVM branch reuses the features cached next to its model when they
  come from the same extractor.
  """
  if branch == 'svm':
    cache = os.path.join(os.path.dirname(os.path.abspath(model_path)),
                         FEATURES_FILE)
    if os.path.isfile(cache):
      features, _ = svm_branch.LoadFeatures(cache)
      if features.fingerprint == model.fingerprint:
        logging.info('Using cached training features %s', cache)
        return svm_branch.ApplyScaler(features, model.scaler).values
      logging.warning('Ignoring %s: it was extracted by another extractor',
                      cache)
  return featurize(np.asarray(LoadSplit(run_dir, 'train').images))


def _WriteShap(config, branch, model, model_path, images, targets, run_dir,
               staging):
  predict_fn, featurize = _ShapSetup(branch, model, config)
  background, weights = explain.SummarizeBackground(
      _TrainingRows(branch, model, model_path, featurize, run_dir),
      config.explain.background_size, config.seed)
  rows = featurize(images)
  explanations = [
      explain.KernelShap(predict_fn, row, background,
                         config.explain.n_samples, int(target), weights,
                         config.seed)
      for row, target in zip(rows, targets)]
  explain.WritePlotData(staging, explanations,
                        top=config.explain.top_features)


################################################################################
# report

def Report(config, run_dir):
  """Compare the latest test evaluation of every branch side by side.

  Returns:
    Path of the created report-<timestamp> directory.

  Raises:
    MissingPathError: if no branch has been evaluated.
  """
  rows = []
  for branch in ('dense', 'svm'):
    latest = artifacts.LatestInvocation(run_dir, 'evaluate-%s-test' % branch)
    if latest is None:
      logging.warning('No test evaluation of the %s branch in %s', branch,
                      run_dir)
      continue
    report = eval_metrics.LoadReport(os.path.join(latest, 'metrics.json'))
    rows.append((branch, os.path.basename(latest), report))
  if not rows:
    raise errors.MissingPathError('No evaluations to report in %s' % run_dir)

  comparison = {
      'branches': {
          branch: {'evaluation': name,
                   'model_id': report.model_id,
                   'accuracy': report.accuracy,
                   'macro_f1': report.macro_avg['f1'],
                   'per_class': report.per_class,
                   'auc': dict(zip(report.class_names, report.auc))}
          for branch, name, report in rows}}
  output = artifacts.NewInvocationPath(run_dir, 'report')
  with artifacts.StagedDirectory(output) as staging:
    artifacts.WriteJson(os.path.join(staging, 'comparison.json'), comparison)
    eval_metrics.WriteText(os.path.join(staging, 'comparison.md'),
                           _ComparisonMarkdown(rows))
    run_config.WriteRunConfig(config, staging)
  return output


def _ComparisonMarkdown(rows):
  def Cell(value):
    return '%.2f' % eval_metrics.RoundHalfUp(value)

  lines = ['# Branch comparison', '',
           '| Branch | Accuracy | Macro F1 | Evaluation |',
           '| --- | --- | --- | --- |']
  for branch, name, report in rows:
    lines.append('| %s | %s | %s | %s |' % (
        branch, Cell(report.accuracy), Cell(report.macro_avg['f1']), name))
  for branch, _, report in rows:
    lines.extend(['', '## %s' % branch, '',
                  '| Class | Precision | Recall | F1 | Support | AUC |',
                  '| --- | --- | --- | --- | --- | --- |'])
    for row, auc in zip(report.per_class, report.auc):
      lines.append('| %s | %s | %s | %s | %d | %s |' % (
          row['name'], Cell(row['precision']), Cell(row['recall']),
          Cell(row['f1']), row['support'],
          'undefined' if auc is None else Cell(auc)))
  return '\n'.join(lines) + '\n'
