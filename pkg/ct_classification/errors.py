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

"""Errors raised by the CT classification toolkit.

Errors fall into three families which the command line maps to exit codes:
ConfigError (1), DataError (2) and everything else deriving from Error (3).
"""


class Error(Exception):
  """Base toolkit error type."""

  def __init__(self, message, cause=None):
    """Initialize error.

    Args:
      message: Human readable description.
      cause: Optional lower level exception which caused this error.
    """
    Exception.__init__(self, message)
    self.message = message
    self.cause = cause

  def __str__(self):
    if self.cause is not None:
      return '%s (caused by %s: %s)' % (self.message,
                                        type(self.cause).__name__,
                                        self.cause)
    return str(self.message)


class ConfigError(Error):
  """Invalid configuration or command line usage."""


class UnknownConfigKey(ConfigError):
  """Raised when a configuration file or flag names an unknown key."""


class DataError(Error):
  """Input data or artifacts are missing, malformed or inconsistent."""


class MissingPathError(DataError):
  """A required file or directory does not exist."""


class EmptyClassError(DataError):
  """A class directory holds no decodable image."""


class SplitError(DataError):
  """Raised when a dataset cannot be split as requested."""


class LabelError(DataError):
  """Raised when a label lies outside the range of known classes."""


class BalancingError(DataError):
  """Raised when SMOTE cannot balance the given classes."""


class ArtifactError(DataError):
  """A saved artifact is missing or corrupt."""


class ArtifactVersionError(ArtifactError):
  """A saved artifact was written with an unsupported format version."""


class FingerprintMismatchError(DataError):
  """Features were produced by a different extractor than the model expects."""


class ShapeError(Error):
  """Raised when an array or tensor has an unexpected shape."""


class BlockSpecError(Error):
  """Raised when a network block is constructed with inconsistent sizes."""


class TrainingDivergedError(Error):
  """Raised when the training loss stops being finite."""


class ExplainerError(Error):
  """Raised when an explanation cannot be computed."""


class UnsupportedExplainerError(ExplainerError):
  """Raised when an explainer does not apply to the given model."""


class MetricsError(Error):
  """Raised when metrics are undefined for the given counts."""
