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

"""Tests for ct_classification.dense_classifier."""

import math

import numpy as np
import pytest
import torch

from ct_classification import datapipe
from ct_classification import dense_classifier
from ct_classification import errors


def _ToyConfig(size=32, **overrides):
  values = dict(backbone='toy', pretrained=False, input_size=(size, size),
                learning_rate=1e-3, epochs=2, batch_size=16,
                pyramid_channels=32)
  values.update(overrides)
  return dense_classifier.DenseBranchConfig(**values)


def _Synthetic(per_class=20, size=32, seed=0):
  return datapipe.MakeSyntheticDataset(
      datapipe.SyntheticSpec(per_class=per_class, image_size=size), seed=seed)


def _Accuracy(model, dataset):
  probabilities = dense_classifier.Predict(model, dataset.images)
  return float(np.mean(probabilities.argmax(axis=1) == dataset.labels))


class TestFocalLoss(object):

  def test_hand_computed_value(self):
    p = torch.tensor([[0.9, 0.05, 0.05]], dtype=torch.float64)
    y = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    loss = dense_classifier.FocalLoss(p, y, alpha=0.25, gamma=2.0)
    assert abs(float(loss) - 2.6341e-4) < 1e-8

  def test_gamma_zero_is_cross_entropy(self):
    generator = torch.Generator().manual_seed(0)
    p = torch.softmax(torch.randn(8, 4, generator=generator,
                                  dtype=torch.float64), dim=1)
    labels = torch.randint(0, 4, (8,), generator=generator)
    y = torch.nn.functional.one_hot(labels, 4).double()
    loss = dense_classifier.FocalLoss(p, y, gamma=0.0)
    expected = -torch.log(p[torch.arange(8), labels]).mean()
    assert abs(float(loss) - float(expected)) < 1e-9

  def test_confident_prediction_costs_nothing(self):
    p = torch.tensor([[1 - 1e-7, 0.5e-7, 0.5e-7]], dtype=torch.float64)
    y = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    assert float(dense_classifier.FocalLoss(p, y)) <= 1e-6

  def test_decreases_with_gamma(self):
    p = torch.tensor([[0.6, 0.3, 0.1], [0.2, 0.7, 0.1]], dtype=torch.float64)
    y = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
    losses = [float(dense_classifier.FocalLoss(p, y, gamma=g))
              for g in (0.0, 0.5, 1.0, 2.0, 5.0)]
    assert all(a > b for a, b in zip(losses, losses[1:]))

  def test_linear_in_alpha(self):
    p = torch.tensor([[0.6, 0.4], [0.3, 0.7]], dtype=torch.float64)
    y = torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
    alpha = torch.tensor([0.7, 1.3], dtype=torch.float64)
    base = float(dense_classifier.FocalLoss(p, y, alpha))
    scaled = float(dense_classifier.FocalLoss(p, y, 3.5 * alpha))
    assert math.isclose(scaled, 3.5 * base, rel_tol=1e-12)

  def test_gradients_match_finite_differences(self):
    generator = torch.Generator().manual_seed(1)
    for _ in range(100):
      k = int(torch.randint(2, 5, (1,), generator=generator))
      logits = torch.randn(3, k, generator=generator, dtype=torch.float64)
      p = torch.softmax(logits, dim=1).clamp(1e-3, 1 - 1e-3)
      p.requires_grad_(True)
      labels = torch.randint(0, k, (3,), generator=generator)
      y = torch.nn.functional.one_hot(labels, k).double()
      gamma = float(torch.rand(1, generator=generator)) * 5.0
      alpha = torch.rand(k, generator=generator, dtype=torch.float64) + 0.1

      def Loss(probabilities, y=y, alpha=alpha, gamma=gamma):
        return dense_classifier.FocalLoss(probabilities, y, alpha, gamma)

      assert torch.autograd.gradcheck(Loss, (p,), eps=1e-6, atol=1e-8,
                                      rtol=1e-4)

  def test_shape_mismatch(self):
    with pytest.raises(errors.ShapeError):
      dense_classifier.FocalLoss(torch.ones(2, 3) / 3, torch.ones(2, 2))
    with pytest.raises(errors.ShapeError):
      dense_classifier.FocalLoss(torch.ones(2, 3) / 3, torch.ones(2, 3),
                                 alpha=[1.0, 1.0])


class TestFocalAlpha(object):

  def test_inverse_frequency(self):
    alpha = dense_classifier.FocalAlpha(dense_classifier.FocalLossConfig(),
                                        [0] * 10 + [1] * 30, 2)
    np.testing.assert_allclose(alpha, [1.5, 0.5])

  def test_configured_alpha_must_cover_classes(self):
    cfg = dense_classifier.FocalLossConfig(alpha=[1.0, 2.0])
    with pytest.raises(errors.ConfigError):
      dense_classifier.FocalAlpha(cfg, [0, 1, 2], 3)


class TestModel(object):

  def test_toy_forward(self):
    model = dense_classifier.BuildModel(_ToyConfig(64), 3, seed=0)
    images = np.random.default_rng(0).random((4, 64, 64, 3)).astype(np.float32)
    probabilities = dense_classifier.Predict(model, images)
    assert probabilities.shape == (4, 3)
    assert np.all(probabilities > 0)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0, atol=1e-9)

  def test_densenet_shapes(self):
    cfg = dense_classifier.DenseBranchConfig(pretrained=False)
    model = dense_classifier.BuildModel(cfg, 3, seed=0).eval()
    x = torch.rand(1, 3, 224, 224)
    with torch.no_grad():
      backbone = model.backbone(x)
      features = model.Features(x)
      logits = model(x)
    assert backbone.shape == (1, 1664, 7, 7)
    assert features.shape == (1, 256)
    assert logits.shape == (1, 3)

  def test_input_size_must_match_stride(self):
    with pytest.raises(errors.ConfigError):
      dense_classifier.BuildModel(_ToyConfig(60), 3)

  def test_needs_two_classes(self):
    with pytest.raises(errors.ConfigError):
      dense_classifier.BuildModel(_ToyConfig(), None)
    with pytest.raises(errors.ConfigError):
      dense_classifier.BuildModel(_ToyConfig(), 1)

  def test_predict_batches_and_duplicates(self):
    model = dense_classifier.BuildModel(_ToyConfig(16), 3, seed=0)
    images = np.random.default_rng(1).random((220, 16, 16, 3))
    images[1] = images[0]
    probabilities = dense_classifier.Predict(model, images, batch_size=64)
    assert probabilities.shape == (220, 3)
    np.testing.assert_allclose(probabilities[0], probabilities[1], atol=1e-12)
    assert dense_classifier.Predict(model, images[:0]).shape == (0, 3)

  def test_predict_rejects_other_sizes(self):
    model = dense_classifier.BuildModel(_ToyConfig(16), 3, seed=0)
    images = np.zeros((2, 24, 24, 3), dtype=np.float32)
    with pytest.raises(errors.ShapeError):
      dense_classifier.Predict(model, images)
    assert dense_classifier.Predict(model, images, resize=True).shape == (2, 3)


class TestTrain(object):

  def test_learns_separable_data(self):
    dataset = _Synthetic(per_class=100, size=64)
    assert len(dataset) == 300
    cfg = _ToyConfig(64, epochs=15)
    model = dense_classifier.BuildModel(cfg, 3, seed=0)
    model, history = dense_classifier.Train(model, dataset, cfg=cfg, seed=0)
    assert history.epochs == 15
    assert 0 <= history.best_epoch < 15
    assert _Accuracy(model, dataset) >= 0.95

  def test_shuffled_labels_do_not_generalize(self):
    dataset = _Synthetic(per_class=40)
    shuffled = datapipe.Dataset(
        dataset.images,
        np.random.default_rng(3).permutation(dataset.labels),
        dataset.class_names, dataset.source_paths)
    cfg = _ToyConfig(epochs=5)
    model, _ = dense_classifier.Train(
        dense_classifier.BuildModel(cfg, 3, seed=0), shuffled, cfg=cfg, seed=0)
    assert _Accuracy(model, _Synthetic(per_class=40, seed=9)) < 0.6

  def test_frozen_backbone_is_unchanged(self):
    cfg = _ToyConfig(epochs=1, freeze_backbone=True)
    model = dense_classifier.BuildModel(cfg, 3, seed=0)
    before = {k: v.clone() for k, v in model.backbone.state_dict().items()}
    head_before = model.head.weight.detach().clone()
    model, _ = dense_classifier.Train(model, _Synthetic(), cfg=cfg, seed=0)
    for key, value in model.backbone.state_dict().items():
      assert torch.equal(value, before[key]), key
    assert not torch.equal(model.head.weight, head_before)

  def test_zero_epochs_keeps_weights(self):
    cfg = _ToyConfig(epochs=0)
    model = dense_classifier.BuildModel(cfg, 3, seed=0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    model, history = dense_classifier.Train(model, _Synthetic(), cfg=cfg)
    assert history.epochs == 0 and history.train_loss == []
    for key, value in model.state_dict().items():
      assert torch.equal(value, before[key]), key

  def test_same_seed_same_curves(self):
    cfg = _ToyConfig(epochs=2)
    dataset = _Synthetic()
    runs = []
    for _ in range(2):
      model = dense_classifier.BuildModel(cfg, 3, seed=4)
      _, history = dense_classifier.Train(model, dataset, cfg=cfg, seed=4)
      runs.append(history)
    assert runs[0].train_loss == runs[1].train_loss
    assert runs[0].val_accuracy == runs[1].val_accuracy

  def test_non_finite_loss_is_reported(self):
    dataset = _Synthetic(per_class=4)
    images = np.array(dataset.images)
    images[:] = np.nan
    broken = datapipe.Dataset(images, dataset.labels, dataset.class_names,
                              dataset.source_paths)
    cfg = _ToyConfig(epochs=1)
    with pytest.raises(errors.TrainingDivergedError, match='learning_rate'):
      dense_classifier.Train(dense_classifier.BuildModel(cfg, 3), broken,
                             cfg=cfg)

  def test_empty_training_set(self):
    empty = datapipe.Dataset(np.zeros((0, 32, 32, 3)), np.zeros(0),
                             ('a', 'b'), ())
    with pytest.raises(errors.DataError):
      dense_classifier.Train(dense_classifier.BuildModel(_ToyConfig(), 2),
                             empty, cfg=_ToyConfig())


def test_save_and_load(tmp_path):
  cfg = _ToyConfig(epochs=1)
  dataset = _Synthetic(per_class=5)
  model, history = dense_classifier.Train(
      dense_classifier.BuildModel(cfg, 3, seed=0), dataset, cfg=cfg)
  path = str(tmp_path / 'model')
  dense_classifier.SaveModel(path, model, cfg, history, dataset.class_names)
  loaded, loaded_cfg, loaded_history, names = dense_classifier.LoadModel(path)
  assert loaded_cfg == cfg
  assert names == dataset.class_names
  assert loaded_history.train_loss == history.train_loss
  assert (dense_classifier.WeightsDigest(loaded) ==
          dense_classifier.WeightsDigest(model))
  np.testing.assert_array_equal(
      dense_classifier.Predict(loaded, dataset.images),
      dense_classifier.Predict(model, dataset.images))


def test_load_missing_model(tmp_path):
  with pytest.raises(errors.MissingPathError):
    dense_classifier.LoadModel(str(tmp_path / 'nothing'))


def test_weights_digest_tracks_parameters():
  cfg = _ToyConfig()
  model = dense_classifier.BuildModel(cfg, 3, seed=0)
  before = dense_classifier.WeightsDigest(model)
  assert before == dense_classifier.WeightsDigest(
      dense_classifier.BuildModel(cfg, 3, seed=0))
  with torch.no_grad():
    next(model.parameters()).add_(1.0)
  assert dense_classifier.WeightsDigest(model) != before
