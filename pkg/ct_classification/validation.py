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

"""Validation tools for configuration objects.

Configuration classes derive from Validated and declare an ATTRIBUTES map from
attribute name to validator.  Assignment runs the validator, so an object can
never hold an out-of-range value:

  class SplitSpec(Validated):
    ATTRIBUTES = {
        'train_fraction': Range(0.0, 1.0, float, default=0.8),
        'seed': Type(int, default=0),
    }

Unlisted attributes are rejected, which is how unknown configuration keys are
caught.  Cross-field constraints go in CheckInitialized.
"""

import numbers


class Error(Exception):
  """Base class for all validation errors."""


class AttributeDefinitionError(Error):
  """An error occurred in the definition of class attributes."""


class ValidationError(Error):
  """Raised when a value fails validation."""

  def __init__(self, message, cause=None):
    Error.__init__(self, message)
    self.message = message
    self.cause = cause

  def __str__(self):
    return str(self.message)


class MissingAttribute(ValidationError):
  """Raised when a required attribute is missing from object."""


def AsValidator(validator):
  """Wrap various types as instances of a validator.

  Converts types to Type and collections to Options.

  Args:
    validator: Object to wrap in a validator.

  Returns:
    Validator instance that wraps the given value.

  Raises:
    AttributeDefinitionError: if validator is not one of the above types.
  """
  if isinstance(validator, Validator):
    return validator
  if isinstance(validator, type):
    return Type(validator)
  if isinstance(validator, (list, tuple, set)):
    return Options(*tuple(validator))
  raise AttributeDefinitionError('%s is not a valid validator' % validator)


def _SimplifiedValue(validator, value):
  """Convert any value to simple collections and basic types."""
  if isinstance(value, Validated):
    return value.ToDict()
  if isinstance(value, (list, tuple)):
    return [_SimplifiedValue(validator, item) for item in value]
  if isinstance(validator, Validator):
    return validator.ToValue(value)
  return value


class Validated(object):
  """Base class for classes that require validation.

  Each subclass defines an ATTRIBUTES class variable mapping attribute name to
  its validator.  Attributes start at their validator default.
  """

  ATTRIBUTES = None

  def __init__(self, **attributes):
    """Constructor for Validated classes.

    Raises:
      AttributeDefinitionError: when the class has no ATTRIBUTES map.
      ValidationError: when an attribute is unknown or fails validation.
    """
    if not isinstance(self.ATTRIBUTES, dict):
      raise AttributeDefinitionError(
          'The class %s does not define an ATTRIBUTES variable.'
          % self.__class__)

    for key in self.ATTRIBUTES:
      object.__setattr__(self, key, self.GetValidator(key).default)

    self.SetMultiple(attributes)
    self.CheckInitialized()

  @classmethod
  def GetValidator(cls, key):
    """Safely get the underlying attribute definition as a Validator.

    Raises:
      ValidationError: if key is not a declared attribute.
    """
    if key not in cls.ATTRIBUTES:
      raise ValidationError(
          'Unexpected attribute \'%s\' for object of type %s.' %
          (key, cls.__name__))
    return AsValidator(cls.ATTRIBUTES[key])

  @classmethod
  def FromDict(cls, values):
    """Build an instance from a (possibly nested) dictionary."""
    if values is None:
      values = {}
    if not isinstance(values, dict):
      raise ValidationError('Expected a mapping for %s, got %r.' %
                            (cls.__name__, values))
    return cls(**values)

  def SetMultiple(self, attributes):
    for key, value in attributes.items():
      setattr(self, key, value)

  def CheckInitialized(self):
    """Checks required fields and cross-field constraints.

    Subclasses extend this to enforce invariants spanning several attributes.

    Raises:
      MissingAttribute: when a required attribute is unset.
    """
    for key in self.ATTRIBUTES:
      try:
        self.GetValidator(key)(getattr(self, key), key)
      except MissingAttribute as e:
        e.message = "Missing required value '%s'." % key
        raise e

  def __setattr__(self, key, value):
    """Validate and set a declared attribute.

    Raises:
      ValidationError: when the attribute is unknown or the value invalid.
    """
    value = self.GetValidator(key)(value, key)
    object.__setattr__(self, key, value)

  def __repr__(self):
    values = ', '.join('%s=%r' % (attr, getattr(self, attr))
                       for attr in sorted(self.ATTRIBUTES))
    return '<%s %s>' % (self.__class__.__name__, values)

  def __eq__(self, other):
    if type(self) != type(other):
      return False
    return all(getattr(self, key) == getattr(other, key)
               for key in self.ATTRIBUTES)

  def __ne__(self, other):
    return not self.__eq__(other)

  __hash__ = None

  def ToDict(self):
    """Convert the object to a dictionary of simple values, defaults included."""
    result = {}
    for name in sorted(self.ATTRIBUTES):
      result[name] = _SimplifiedValue(self.GetValidator(name),
                                      getattr(self, name))
    return result


################################################################################
# Validators

class Validator(object):
  """Validator base class.

  Validators may return a converted value which is then assigned.
  """

  expected_type = object

  def __init__(self, default=None):
    self.default = default

  def __call__(self, value, key='???'):
    return self.Validate(value, key)

  def Validate(self, value, key='???'):
    return value

  def ToValue(self, value):
    """Convert 'value' to a simplified collection or basic type."""
    return value


class Type(Validator):
  """Verifies property is of expected type, converting when allowed."""

  def __init__(self, expected_type, convert=True, default=None):
    super(Type, self).__init__(default)
    self.expected_type = expected_type
    self.convert = convert

  def Validate(self, value, key='???'):
    """Validate that value has the correct type.

    Raises:
      MissingAttribute: if value is None.
      ValidationError: if value is not of the right type and cannot be
        converted.
    """
    if value is None:
      raise MissingAttribute('Missing value is required.')
    if self.expected_type is bool and not isinstance(value, bool):
      raise ValidationError('Value %r for %s is not a boolean.' % (value, key))
    if self.expected_type is not bool and isinstance(value, bool):
      raise ValidationError('Value %r for %s is not of type %s.' % (
          value, key, self.expected_type.__name__))
    if isinstance(value, self.expected_type):
      return value
    if not self.convert:
      raise ValidationError('Value %r for %s is not of the expected type %s' % (
          value, key, self.expected_type.__name__))
    if self.expected_type is int and isinstance(value, numbers.Real):
      if int(value) != value:
        raise ValidationError('Value %r for %s is not an integer.' %
                              (value, key))
    try:
      return self.expected_type(value)
    except (TypeError, ValueError) as e:
      raise ValidationError(
          'Value %r for %s could not be converted to type %s.' % (
              value, key, self.expected_type.__name__), e)


class Options(Validator):
  """Limit field to pre-determined string values, with optional aliases.

    'backbone': Options('toy', ('densenet169', ['densenet']), default='toy')
  """

  def __init__(self, *options, **kw):
    alias_map = {}

    def AddAlias(alias, original):
      if not isinstance(alias, str):
        raise AttributeDefinitionError(
            'All option values must be of type str.')
      if alias in alias_map:
        raise AttributeDefinitionError(
            "Option '%s' already defined for options property." % alias)
      alias_map[alias] = original

    for option in options:
      if isinstance(option, str):
        AddAlias(option, option)
      elif isinstance(option, (list, tuple)) and len(option) == 2:
        original, aliases = option
        AddAlias(original, original)
        for alias in aliases:
          AddAlias(alias, original)
      else:
        raise AttributeDefinitionError('All options must be of type str '
                                       'or of the form (str, [str...]).')
    super(Options, self).__init__(kw.get('default'))
    self.options = alias_map
    self.expected_type = str

  def Validate(self, value, key='???'):
    """Validate options.

    Returns:
      Original value for provided alias.

    Raises:
      ValidationError: when value is not one of predefined values.
    """
    if value is None:
      raise MissingAttribute('Value for options field must not be None.')
    value = str(value)
    if value not in self.options:
      raise ValidationError('Value \'%s\' for %s not in %s.'
                            % (value, key, sorted(self.options)))
    return self.options[value]


class Optional(Validator):
  """Attribute which may be None or hold a value passing another validator."""

  def __init__(self, validator, default=None):
    self.validator = AsValidator(validator)
    self.expected_type = self.validator.expected_type
    self.default = default

  def Validate(self, value, key='???'):
    if value is None:
      return None
    return self.validator(value, key)

  def ToValue(self, value):
    if value is None:
      return None
    return self.validator.ToValue(value)


class Range(Validator):
  """Validates that numbers fall within an inclusive or exclusive range.

  Range(0.0, 1.0, float, exclusive=True) accepts values in the open interval.
  Either bound may be None.
  """

  def __init__(self, minimum, maximum, range_type=int, default=None,
               exclusive=False):
    super(Range, self).__init__(default)
    if minimum is None and maximum is None:
      raise AttributeDefinitionError('Must specify minimum or maximum.')
    for bound in (minimum, maximum):
      if bound is not None and not isinstance(bound, range_type):
        raise AttributeDefinitionError(
            'Range bound %r must be of type %s.' % (bound, range_type))
    self.minimum = minimum
    self.maximum = maximum
    self.exclusive = exclusive
    self.expected_type = range_type
    self._type_validator = Type(range_type)

  def Validate(self, value, key='???'):
    """Validate that value is within range.

    Raises:
      ValidationError: when value is out of range or of the wrong type.
    """
    cast_value = self._type_validator.Validate(value, key)
    if self.exclusive:
      too_small = self.minimum is not None and cast_value <= self.minimum
      too_large = self.maximum is not None and cast_value >= self.maximum
    else:
      too_small = self.minimum is not None and cast_value < self.minimum
      too_large = self.maximum is not None and cast_value > self.maximum
    if too_small or too_large:
      raise ValidationError('Value \'%s\' for %s is out of range %s%s - %s%s'
                            % (value, key, '(' if self.exclusive else '[',
                               self.minimum, self.maximum,
                               ')' if self.exclusive else ']'))
    return cast_value


class Repeated(Validator):
  """Sequence whose elements all pass a validator.

  Values are stored as tuples so validated objects stay comparable.  When
  length is given the sequence must have exactly that many elements.
  """

  def __init__(self, constructor, default=None, length=None, min_length=0):
    super(Repeated, self).__init__(default)
    self.constructor = AsValidator(constructor)
    self.length = length
    self.min_length = min_length
    self.expected_type = tuple

  def Validate(self, value, key='???'):
    """Do validation of sequence.

    Raises:
      ValidationError: if value is not a sequence, has the wrong length or one
        of its elements is invalid.
    """
    if value is None:
      raise MissingAttribute('Missing value is required.')
    if not isinstance(value, (list, tuple)):
      raise ValidationError('Value \'%s\' for %s should be a sequence but '
                            'is not.' % (value, key))
    if self.length is not None and len(value) != self.length:
      raise ValidationError('Value %r for %s must have exactly %d elements.'
                            % (value, key, self.length))
    if len(value) < self.min_length:
      raise ValidationError('Value %r for %s must have at least %d elements.'
                            % (value, key, self.min_length))
    return tuple(self.constructor.Validate(item, key) for item in value)

  def ToValue(self, value):
    return [self.constructor.ToValue(item) for item in value]


class Section(Validator):
  """Nested Validated object, built from a mapping when needed."""

  def __init__(self, validated_class):
    super(Section, self).__init__(None)
    self.validated_class = validated_class
    self.expected_type = validated_class

  @property
  def default(self):
    return self.validated_class()

  @default.setter
  def default(self, value):
    pass

  def Validate(self, value, key='???'):
    if isinstance(value, self.validated_class):
      return value
    if value is None or isinstance(value, dict):
      try:
        return self.validated_class.FromDict(value)
      except ValidationError as e:
        raise ValidationError('In section %s: %s' % (key, e.message), e)
    raise ValidationError('Value %r for %s should be a mapping.' % (value, key))
