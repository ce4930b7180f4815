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

"""Value conversions from config-file text to typed configuration values."""

import os
import re


_PAIR_REGEX = r'\s*(\d+)\s*[xX,]\s*(\d+)\s*'
_TRUE_STRINGS = ('true', 'yes', 'on', '1')
_FALSE_STRINGS = ('false', 'no', 'off', '0')


def EnumConverter(*allowed):
  """Create conversion function which normalizes an enumerated string value.

  Args:
    *allowed: Lower-cased values that are accepted.

  Returns:
    A conversion function which lower-cases its input and checks membership.

  Raises:
    ValueError: If no allowed values or non lower-cased values were provided.
  """
  if not allowed:
    raise ValueError('At least one allowed value must be provided')
  for value in allowed:
    if value != value.lower():
      raise ValueError('Lower-cased values must be provided: "%s"' % value)

  def Convert(value):
    value = str(value).strip().lower()
    if value not in allowed:
      raise ValueError('Unrecognized value "%s", expected one of %s' %
                       (value, ', '.join(allowed)))
    return value

  return Convert


def ToBool(value):
  """Convert booleans and their usual string spellings to bool."""
  if isinstance(value, bool):
    return value
  text = str(value).strip().lower()
  if text in _TRUE_STRINGS:
    return True
  if text in _FALSE_STRINGS:
    return False
  raise ValueError('Expected a boolean value. Got "%s"' % value)


def StringToInt(handle_none=False):
  """Create conversion function which converts from a string to an integer.

  Args:
    handle_none: Whether a value of "none" or null should pass through as None.

  Returns:
    A conversion function which converts a string to an integer.
  """
  def Convert(value):
    if handle_none and (value is None or str(value).lower() == 'none'):
      return None
    if isinstance(value, bool):
      raise ValueError('Expected an integer. Got "%s"' % value)
    if isinstance(value, float):
      if not value.is_integer():
        raise ValueError('Expected an integer. Got "%s"' % value)
      return int(value)
    return int(value)

  return Convert


def ToFloat(value):
  if isinstance(value, bool):
    raise ValueError('Expected a number. Got "%s"' % value)
  return float(value)


def ToOptionalFloat(value):
  if value is None or str(value).strip().lower() in ('', 'none', 'null'):
    return None
  return ToFloat(value)


def ToPair(value):
  """Convert "256x256", "256,256" or [256, 256] to an integer pair.

  Raises:
    ValueError: if the given value isn't parseable.
  """
  if isinstance(value, (list, tuple)):
    if len(value) != 2:
      raise ValueError('Expected two values. Got "%s"' % (value,))
    return [StringToInt()(item) for item in value]
  if isinstance(value, int) and not isinstance(value, bool):
    return [value, value]
  match = re.match('^%s$' % _PAIR_REGEX, str(value))
  if not match:
    raise ValueError('Unrecognized size: %s' % value)
  return [int(match.group(1)), int(match.group(2))]


def ToList(element_converter):
  """Create conversion function for lists given as YAML lists or "a,b,c"."""
  def Convert(value):
    if isinstance(value, str):
      items = [item for item in value.split(',') if item.strip()]
    elif isinstance(value, (list, tuple)):
      items = list(value)
    else:
      items = [value]
    return [element_converter(item) for item in items]

  return Convert


def ToOptionalList(element_converter):
  """Like ToList, but "none", "" and null convert to None."""
  convert = ToList(element_converter)

  def Convert(value):
    if value is None or str(value).strip().lower() in ('', 'none', 'null'):
      return None
    return convert(value)

  return Convert


def ToPath(value):
  """Expand a user path; null and empty strings become None."""
  if value is None or str(value).strip() == '':
    return None
  return os.path.expanduser(str(value))
