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

"""Run configuration: defaults, config file, environment and flags.

Layers are merged with increasing precedence:

  1. the defaults declared by the Validated sections below;
  2. a flat YAML file of dotted keys (--config);
  3. CT_CLASSIFY_OUTPUT_ROOT, which sets the output root;
  4. command line flags (--seed, --out, --branch, --synthetic, --set k=v).

Every layer passes through run_schema.SCHEMA, so unknown keys fail early.
"""

import logging
import os

import yaml

from ct_classification import datapipe
from ct_classification import dense_classifier
from ct_classification import errors
from ct_classification import explain
from ct_classification import run_schema
from ct_classification import schema
from ct_classification import svm_branch
from ct_classification import validation


OUTPUT_ROOT_ENV = 'CT_CLASSIFY_OUTPUT_ROOT'
CONFIG_FILE_NAME = 'config.yaml'


class RunConfig(validation.Validated):
  """The complete effective configuration of a run."""

  ATTRIBUTES = {
      'seed': validation.Range(0, None, default=0),
      'branch': validation.Options('dense', 'svm', 'both', default='both'),
      'out': validation.Type(str, default='runs'),
      'data': validation.Section(datapipe.DataConfig),
      'synthetic': validation.Section(datapipe.SyntheticSpec),
      'preprocess': validation.Section(datapipe.PreprocessConfig),
      'split': validation.Section(datapipe.SplitSpec),
      'smote': validation.Section(datapipe.SmoteConfig),
      'dense': validation.Section(dense_classifier.DenseBranchConfig),
      'focal': validation.Section(dense_classifier.FocalLossConfig),
      'svm': validation.Section(svm_branch.SvmConfig),
      'explain': validation.Section(explain.ExplainConfig),
  }

  def CheckInitialized(self):
    super(RunConfig, self).CheckInitialized()
    if self.split.seed is None:
      self.split.seed = self.seed
    if self.smote.seed is None:
      self.smote.seed = self.seed

  @property
  def branches(self):
    return ('dense', 'svm') if self.branch == 'both' else (self.branch,)


def ParseOverride(text):
  """Split a 'dotted.key=value' flag into its key and value."""
  key, separator, value = text.partition('=')
  if not separator or not key.strip():
    raise errors.ConfigError('Expected key=value, got "%s"' % text)
  return key.strip(), value.strip()


def ReadConfigFile(path):
  """Read a flat YAML config file.

  Raises:
    ConfigError: if the file is missing, unparseable or not a mapping.
  """
  if not os.path.isfile(path):
    raise errors.ConfigError('Config file %s does not exist' % path)
  try:
    with open(path) as source:
      values = yaml.safe_load(source)
  except (OSError, yaml.YAMLError) as e:
    raise errors.ConfigError('Could not read config file %s' % path, e)
  if values is None:
    return {}
  if not isinstance(values, dict):
    raise errors.ConfigError('Config file %s must hold a mapping' % path)
  return values


def _FlagLayer(seed=None, out=None, branch=None, synthetic=False,
               overrides=()):
  flat = {}
  for text in overrides or ():
    key, value = ParseOverride(text)
    flat[key] = value
  if seed is not None:
    flat['seed'] = seed
  if out is not None:
    flat['out'] = out
  if branch is not None:
    flat['branch'] = branch
  if synthetic:
    flat['data.synthetic'] = True
  return flat


def LoadRunConfig(config_path=None, seed=None, out=None, branch=None,
                  synthetic=False, overrides=(), environ=None):
  """Build the effective RunConfig from every layer.

  Args:
    config_path: Optional flat YAML file.
    seed, out, branch, synthetic: Values of the dedicated flags, None (or
      False) when not given.
    overrides: 'dotted.key=value' strings from --set.
    environ: Environment mapping; defaults to os.environ.

  Returns:
    RunConfig.

  Raises:
    ConfigError: for unreadable files, unknown keys or unconvertible values.
    ValidationError: for values out of range.
  """
  environ = os.environ if environ is None else environ
  layers = []
  if config_path:
    layers.append(('config file %s' % config_path,
                   ReadConfigFile(config_path)))
  if environ.get(OUTPUT_ROOT_ENV):
    layers.append((OUTPUT_ROOT_ENV, {'out': environ[OUTPUT_ROOT_ENV]}))
  layers.append(('command line', _FlagLayer(seed, out, branch, synthetic,
                                            overrides)))
  merged = {}
  for source, flat in layers:
    converted = run_schema.SCHEMA.ConvertValue(schema.UnflattenKeys(flat))
    merged = schema.MergeDictionaryValues(merged, converted, source)
  config = RunConfig.FromDict(merged)
  logging.debug('Effective configuration:\n%s', DumpRunConfig(config))
  return config


def DumpRunConfig(config):
  """Flat YAML text of every effective value, defaults included."""
  return yaml.safe_dump(schema.FlattenKeys(config.ToDict()),
                        default_flow_style=False, sort_keys=True)


def WriteRunConfig(config, directory):
  path = os.path.join(directory, CONFIG_FILE_NAME)
  try:
    with open(path, 'w') as output:
      output.write(DumpRunConfig(config))
  except OSError as e:
    raise errors.ArtifactError('Could not write %s' % path, e)
  return path
