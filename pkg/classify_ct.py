#!/usr/bin/env python
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

"""Command line driver for the lung CT classification toolkit.

Example invocation:
  classify_ct.py prepare --set data.root=/data/IQ-OTHNCCD
  classify_ct.py train --branch dense
  classify_ct.py evaluate --branch both
  classify_ct.py explain --branch svm --method shap --index 3
  classify_ct.py report

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime failure.
"""

import argparse
import logging
import os
import sys

from ct_classification import artifacts
from ct_classification import commands
from ct_classification import errors
from ct_classification import run_config
from ct_classification import validation


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _UsageError(Exception):
  pass


class _ArgumentParser(argparse.ArgumentParser):
  """Parser reporting usage errors with exit code 1 instead of 2."""

  def error(self, message):
    self.print_usage(sys.stderr)
    raise _UsageError(message)


def _SharedFlags():
  parser = argparse.ArgumentParser(add_help=False)
  parser.add_argument('--config', help='Flat YAML file of dotted keys.')
  parser.add_argument('--seed', type=int, help='Global random seed.')
  parser.add_argument('--out', help='Output root for new run directories.')
  parser.add_argument('--branch', choices=('dense', 'svm', 'both'))
  parser.add_argument('--synthetic', action='store_true',
                      help='Use the generated stand-in dataset.')
  parser.add_argument('--set', dest='overrides', action='append', default=[],
                      metavar='KEY=VALUE', help='Override one config key.')
  parser.add_argument('-v', '--verbose', action='store_true')
  return parser


def _BuildParser():
  shared = _SharedFlags()
  parser = _ArgumentParser(description='Hybrid lung CT classification: dense '
                           'attention network and deep-feature SVM.')
  subparsers = parser.add_subparsers(dest='command', required=True,
                                     parser_class=_ArgumentParser)
  subparsers.add_parser('prepare', parents=[shared],
                        help='Load, preprocess and split a dataset.')
  for name, description in (('train', 'Train the selected branches.'),
                            ('evaluate', 'Evaluate trained models.'),
                            ('explain', 'Explain model predictions.'),
                            ('report', 'Compare the latest evaluations.')):
    command = subparsers.add_parser(name, parents=[shared], help=description)
    command.add_argument('--run-dir', help='Run directory; defaults to the '
                         'latest one under the output root.')
    if name in ('evaluate', 'explain'):
      command.add_argument('--model', help='Model directory; defaults to the '
                           'latest trained model of the branch.')
      command.add_argument('--split', default='test',
                           choices=commands.SPLITS)
  explain_parser = subparsers.choices['explain']
  explain_parser.add_argument('--method', choices=('gradcam', 'shap'))
  explain_parser.add_argument('--index', type=int, default=0,
                              help='First sample of the split to explain.')
  explain_parser.add_argument('--count', type=int, default=1)
  explain_parser.add_argument('--image', help='Explain this image file.')
  explain_parser.add_argument('--class', dest='class_idx', type=int,
                              help='Class to explain; default predicted.')
  return parser


def _LoadConfig(args, config_path):
  return run_config.LoadRunConfig(
      config_path, seed=args.seed, out=args.out, branch=args.branch,
      synthetic=args.synthetic, overrides=args.overrides)


def _RunDirConfig(args):
  """Resolve the run directory and the config layered over its config.yaml."""
  run_dir = args.run_dir
  if not run_dir:
    run_dir = commands.LatestRunDir(_LoadConfig(args, args.config).out)
  artifacts.RequireDirectory(run_dir, 'Run directory')
  config_path = args.config or os.path.join(run_dir,
                                            run_config.CONFIG_FILE_NAME)
  if not os.path.isfile(config_path):
    config_path = None
  return run_dir, _LoadConfig(args, config_path)


def _Run(args):
  if args.command == 'prepare':
    return [commands.Prepare(_LoadConfig(args, args.config))]
  run_dir, config = _RunDirConfig(args)
  if args.command == 'train':
    return commands.Train(config, run_dir)
  if args.command == 'evaluate':
    return [output for output, _ in
            commands.Evaluate(config, run_dir, args.model, args.split)]
  if args.command == 'explain':
    return commands.Explain(config, run_dir, args.model, args.method,
                            args.index, args.image, args.count,
                            args.class_idx, args.split)
  return [commands.Report(config, run_dir)]


def main(argv=None):
  parser = _BuildParser()
  try:
    args = parser.parse_args(argv)
  except _UsageError as e:
    sys.stderr.write('error: %s\n' % e)
    return EXIT_USAGE
  logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                      format='%(levelname)s %(name)s: %(message)s')
  try:
    for output in _Run(args):
      print(output)
  except (errors.ConfigError, validation.ValidationError) as e:
    logging.error('Configuration error: %s', e)
    return EXIT_USAGE
  except errors.DataError as e:
    logging.error('Data error: %s', e)
    return EXIT_DATA
  except (errors.Error, RuntimeError) as e:
    logging.error('%s: %s', type(e).__name__, e)
    return EXIT_RUNTIME
  return EXIT_OK


if __name__ == '__main__':
  sys.exit(main())
