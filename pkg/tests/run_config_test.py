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

"""Tests for ct_classification.run_config."""

import pytest
import yaml

from ct_classification import errors
from ct_classification import run_config
from ct_classification import validation


def _WriteConfig(tmp_path, values):
  path = tmp_path / 'config.yaml'
  path.write_text(yaml.safe_dump(values))
  return str(path)


class TestLoadRunConfig(object):

  def test_defaults(self):
    config = run_config.LoadRunConfig(environ={})
    assert config.seed == 0
    assert config.branch == 'both'
    assert config.branches == ('dense', 'svm')
    assert config.dense.epochs == 30
    assert config.svm.c_values == (0.01, 0.1, 1.0, 10.0, 100.0)
    assert config.preprocess.target_size == (256, 256)

  def test_split_and_smote_seeds_follow_the_global_seed(self):
    config = run_config.LoadRunConfig(seed=11, environ={})
    assert config.split.seed == 11 and config.smote.seed == 11
    pinned = run_config.LoadRunConfig(seed=11, overrides=['split.seed=2'],
                                      environ={})
    assert pinned.split.seed == 2 and pinned.smote.seed == 11

  def test_layer_precedence(self, tmp_path):
    path = _WriteConfig(tmp_path, {'seed': 3, 'dense.epochs': 5,
                                   'svm.c': 2.0, 'out': '/from/file'})
    config = run_config.LoadRunConfig(
        path, seed=9, overrides=['dense.epochs=7'],
        environ={run_config.OUTPUT_ROOT_ENV: '/from/env'})
    assert config.dense.epochs == 7
    assert config.svm.c == 2.0
    assert config.dense.batch_size == 16
    assert config.seed == 9
    assert config.out == '/from/env'

  def test_out_flag_beats_environment(self):
    config = run_config.LoadRunConfig(
        out='/from/flag', environ={run_config.OUTPUT_ROOT_ENV: '/from/env'})
    assert config.out == '/from/flag'

  def test_string_overrides_are_converted(self):
    config = run_config.LoadRunConfig(
        overrides=['dense.input_size=64x64', 'svm.kernels=rbf',
                   'svm.c_values=0.1,10', 'smote.svm=false',
                   'focal.alpha=1,2,3', 'svm.gamma=0.5'],
        synthetic=True, branch='svm', environ={})
    assert config.dense.input_size == (64, 64)
    assert config.svm.kernels == ('rbf',)
    assert config.svm.c_values == (0.1, 10.0)
    assert config.smote.svm is False
    assert config.focal.alpha == (1.0, 2.0, 3.0)
    assert config.svm.gamma == 0.5
    assert config.data.synthetic is True
    assert config.branches == ('svm',)

  def test_unknown_key_in_file(self, tmp_path):
    path = _WriteConfig(tmp_path, {'dense.epoch': 3})
    with pytest.raises(errors.UnknownConfigKey, match='dense.epoch'):
      run_config.LoadRunConfig(path, environ={})

  def test_unknown_key_in_flags(self):
    with pytest.raises(errors.UnknownConfigKey):
      run_config.LoadRunConfig(overrides=['svm.degree=3'], environ={})

  def test_malformed_override(self):
    with pytest.raises(errors.ConfigError):
      run_config.LoadRunConfig(overrides=['dense.epochs'], environ={})

  def test_out_of_range_value(self):
    with pytest.raises(validation.ValidationError):
      run_config.LoadRunConfig(overrides=['split.train_fraction=1.5'],
                               environ={})

  def test_missing_or_invalid_file(self, tmp_path):
    with pytest.raises(errors.ConfigError):
      run_config.LoadRunConfig(str(tmp_path / 'absent.yaml'), environ={})
    bad = tmp_path / 'bad.yaml'
    bad.write_text('- just\n- a list\n')
    with pytest.raises(errors.ConfigError):
      run_config.LoadRunConfig(str(bad), environ={})


def test_written_config_reloads_identically(tmp_path):
  config = run_config.LoadRunConfig(
      seed=5, overrides=['dense.backbone=toy', 'svm.gamma=0.25',
                         'data.root=/data/ct'], environ={})
  path = run_config.WriteRunConfig(config, str(tmp_path))
  reloaded = run_config.LoadRunConfig(path, environ={})
  assert reloaded == config
  with open(path) as source:
    flat = yaml.safe_load(source)
  assert flat['dense.backbone'] == 'toy'
  assert flat['split.seed'] == 5
