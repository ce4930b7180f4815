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

"""Collection of classes for converting flat configuration files.

A configuration file is a flat mapping of dotted keys, for example:

  seed: 7
  dense.epochs: 15
  preprocess.target_size: 64x64

Conversions are defined statically using subclasses of SchemaField (Message,
Value, RepeatedField).  UnflattenKeys() turns the dotted keys into nested
dictionaries and a Message schema converts them:

  SAMPLE_SCHEMA = Message(
      seed=Value(converter=int),
      dense=Message(epochs=Value(converter=int)))

  SAMPLE_SCHEMA.ConvertValue(UnflattenKeys({'seed': '7', 'dense.epochs': 3}))
  # {'seed': 7, 'dense': {'epochs': 3}}

Only fields listed in the schema are accepted.  Unlike a silent whitelist, a
key missing from the schema raises UnknownConfigKey, naming the full dotted
path, so typos in configuration files never go unnoticed.
"""

import logging

from ct_classification import errors


def UnflattenKeys(flat):
  """Convert {'a.b': 1, 'c': 2} to {'a': {'b': 1}, 'c': 2}.

  Nested mappings in the input are accepted too and merged in.

  Raises:
    ConfigError: if a key is both a value and a section.
  """
  result = {}
  for dotted_key, value in (flat or {}).items():
    parts = str(dotted_key).split('.')
    node = result
    for part in parts[:-1]:
      child = node.setdefault(part, {})
      if not isinstance(child, dict):
        raise errors.ConfigError(
            'Key "%s" is used both as a value and a section.' % dotted_key)
      node = child
    leaf = parts[-1]
    if isinstance(value, dict):
      existing = node.setdefault(leaf, {})
      if not isinstance(existing, dict):
        raise errors.ConfigError(
            'Key "%s" is used both as a value and a section.' % dotted_key)
      node[leaf] = MergeDictionaryValues(existing, UnflattenKeys(value))
    else:
      if isinstance(node.get(leaf), dict):
        raise errors.ConfigError(
            'Key "%s" is used both as a value and a section.' % dotted_key)
      node[leaf] = value
  return result


def FlattenKeys(nested, prefix=''):
  """Inverse of UnflattenKeys: nested dictionaries to sorted dotted keys."""
  result = {}
  for key in sorted(nested):
    value = nested[key]
    dotted = '%s.%s' % (prefix, key) if prefix else key
    if isinstance(value, dict):
      result.update(FlattenKeys(value, dotted))
    else:
      result[dotted] = value
  return result


def MergeDictionaryValues(old_dict, new_dict, source=None):
  """Recursively merge new_dict over old_dict.

  Values in new_dict take precedence.  Each overridden leaf is logged so that
  the effect of configuration layers can be traced.

  Args:
    old_dict: Existing (lower precedence) dictionary.
    new_dict: New (higher precedence) dictionary.
    source: Optional description of new_dict used in log messages.

  Returns:
    Result of merging the two dictionaries.  Inputs are not modified.
  """
  result = dict(old_dict)
  for key, new_value in new_dict.items():
    old_value = result.get(key)
    if isinstance(old_value, dict) and isinstance(new_value, dict):
      result[key] = MergeDictionaryValues(old_value, new_value, source)
      continue
    if key in result and old_value != new_value and source:
      logging.debug('\'%s\' overridden by %s: %r -> %r', key, source,
                    old_value, new_value)
    result[key] = new_value
  return result


class SchemaField(object):
  """Transformation strategy from an input value to an output value.

  ConvertValue() makes a copy of the input with the proper transformations
  applied, validating the input structure along the way.
  """

  def __init__(self, target_name=None, converter=None):
    """Constructor.

    Args:
      target_name: New field name to use in the output dictionary.  If None,
        the original name is used.
      converter: A function which performs a transformation on the value.
    """
    self.target_name = target_name
    self.converter = converter

  def ConvertValue(self, value, path=''):
    """Convert an input value using the given schema and converter.

    Args:
      value: Input value.
      path: Dotted path of the value, used in error messages.

    Returns:
      Output which has been transformed using the given schema.

    Raises:
      ConfigError: if the value does not fit the schema or the converter
        rejects it.
    """
    result = self._VisitInternal(value, path)
    return self._PerformConversion(result, path)

  def _VisitInternal(self, value, path):
    raise NotImplementedError()

  def _PerformConversion(self, result, path):
    if not self.converter:
      return result
    try:
      return self.converter(result)
    except (TypeError, ValueError) as e:
      raise errors.ConfigError('Invalid value for "%s"' % path, e)


class Message(SchemaField):
  """A message has a collection of named fields.

  Expected input type: Dictionary
  Output type: Dictionary
  """

  def __init__(self, target_name=None, converter=None, **kwargs):
    """Constructor.

    Args:
      target_name: New field name to use in the output dictionary.
      converter: A function which performs a transformation on the value.
      **kwargs: Field names mapped to the SchemaField for each child.

    Raises:
      ValueError: If the message has no child fields specified.
    """
    super(Message, self).__init__(target_name, converter)
    self.fields = kwargs
    if not self.fields:
      raise ValueError('Message must contain fields')

  def _VisitInternal(self, value, path):
    """Convert each child field and put the result in a new dictionary."""
    if value is None:
      return {}
    if not isinstance(value, dict):
      raise errors.ConfigError('Expected a section for "%s", got %r' %
                               (path or '<root>', value))
    result = {}
    for source_key in sorted(value):
      child_path = '%s.%s' % (path, source_key) if path else source_key
      field_schema = self.fields.get(source_key)
      if field_schema is None:
        raise errors.UnknownConfigKey('Unknown configuration key "%s"' %
                                      child_path)
      target_key = field_schema.target_name or source_key
      result[target_key] = field_schema.ConvertValue(value[source_key],
                                                     child_path)
    return result


class Value(SchemaField):
  """Represents a leaf node. Only the value itself is copied."""

  def _VisitInternal(self, value, path):
    if isinstance(value, dict):
      raise errors.ConfigError('Did not expect a section for "%s"' % path)
    return value


class RepeatedField(SchemaField):
  """Represents a list of elements of one kind.

  Expected input type: List, or a comma separated string
  Output type: List
  """

  def __init__(self, target_name=None, converter=None, element=None):
    super(RepeatedField, self).__init__(target_name, converter)
    self.element = element
    if not self.element:
      raise ValueError('Element required for a repeated field')

  def _VisitInternal(self, value, path):
    if isinstance(value, str):
      value = [item.strip() for item in value.split(',') if item.strip()]
    if not isinstance(value, (list, tuple)):
      value = [value]
    return [self.element.ConvertValue(item, '%s[%d]' % (path, i))
            for i, item in enumerate(value)]
