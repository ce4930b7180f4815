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

"""Helpers for writing run outputs atomically and reproducibly."""

import contextlib
import datetime
import glob
import hashlib
import json
import logging
import os
import shutil

from ct_classification import errors


def WriteJson(path, value):
  """Write value as JSON with sorted keys so identical runs match bytewise."""
  try:
    with open(path, 'w') as output:
      json.dump(value, output, indent=2, sort_keys=True, allow_nan=False)
      output.write('\n')
  except (OSError, ValueError) as e:
    raise errors.ArtifactError('Could not write %s' % path, e)


def ReadJson(path):
  if not os.path.isfile(path):
    raise errors.MissingPathError('File %s does not exist' % path)
  try:
    with open(path) as source:
      return json.load(source)
  except (OSError, ValueError) as e:
    raise errors.ArtifactError('Could not read %s' % path, e)


def FileSha256(path):
  digest = hashlib.sha256()
  with open(path, 'rb') as source:
    for block in iter(lambda: source.read(1 << 20), b''):
      digest.update(block)
  return digest.hexdigest()


def RequireDirectory(path, what):
  """Raise MissingPathError unless path is an existing directory."""
  if not path or not os.path.isdir(path):
    raise errors.MissingPathError('%s %s does not exist' % (what, path))
  return path


@contextlib.contextmanager
def StagedDirectory(final_path):
  """Yield a temporary directory which is renamed to final_path on success.

  The final directory is never overwritten.  If the body raises, the staged
  directory is removed and nothing appears at final_path.

  Raises:
    ArtifactError: if final_path already exists or cannot be created.
  """
  if os.path.exists(final_path):
    raise errors.ArtifactError('Output %s already exists' % final_path)
  parent = os.path.dirname(os.path.abspath(final_path))
  staging = os.path.join(parent, '.%s.tmp-%d' % (os.path.basename(final_path),
                                                 os.getpid()))
  try:
    os.makedirs(parent, exist_ok=True)
    if os.path.exists(staging):
      shutil.rmtree(staging)
    os.makedirs(staging)
  except OSError as e:
    raise errors.ArtifactError('Could not create %s' % staging, e)
  try:
    yield staging
    os.rename(staging, final_path)
  except OSError as e:
    shutil.rmtree(staging, ignore_errors=True)
    raise errors.ArtifactError('Could not write %s' % final_path, e)
  except BaseException:
    shutil.rmtree(staging, ignore_errors=True)
    raise
  logging.info('Wrote %s', final_path)


def NewInvocationPath(parent, name, now=None):
  """Return an unused timestamped path '<parent>/<name>-<YYYYmmdd-HHMMSS>'.

  A numeric suffix is appended when the timestamped name is taken, so run
  directories are never reused.
  """
  now = now or datetime.datetime.now()
  base = os.path.join(parent, '%s-%s' % (name, now.strftime('%Y%m%d-%H%M%S')))
  candidate = base
  suffix = 1
  while os.path.exists(candidate):
    candidate = '%s-%d' % (base, suffix)
    suffix += 1
  return candidate


def LatestInvocation(parent, name):
  """Return the newest '<parent>/<name>-*' directory, or None."""
  matches = [path for path in glob.glob(os.path.join(parent, name + '-*'))
             if os.path.isdir(path)]
  if not matches:
    return None
  return max(matches, key=_InvocationSortKey)


def _InvocationSortKey(path):
  # name-YYYYmmdd-HHMMSS[-n]: order by timestamp then numeric suffix.
  parts = os.path.basename(path).split('-')
  if len(parts) >= 2 and parts[-1].isdigit() and len(parts[-1]) != 6:
    return ('-'.join(parts[:-1]), int(parts[-1]))
  return (os.path.basename(path), 0)
