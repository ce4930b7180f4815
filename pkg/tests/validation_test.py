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

"""Tests for ct_classification.validation."""

import pytest

from ct_classification import validation


class _Inner(validation.Validated):
  ATTRIBUTES = {
      'size': validation.Range(1, 10, default=3),
  }


class _Outer(validation.Validated):
  ATTRIBUTES = {
      'name': validation.Type(str, default='x'),
      'mode': validation.Options('fast', ('slow', ['careful']),
                                 default='fast'),
      'rate': validation.Range(0.0, 1.0, float, default=0.5, exclusive=True),
      'limit': validation.Optional(int),
      'shape': validation.Repeated(validation.Range(1, None), length=2,
                                   default=(4, 4)),
      'inner': validation.Section(_Inner),
  }


class TestValidated(object):

  def test_defaults(self):
    outer = _Outer()
    assert outer.name == 'x' and outer.mode == 'fast'
    assert outer.limit is None
    assert outer.shape == (4, 4)
    assert outer.inner.size == 3

  def test_assignment_is_validated(self):
    outer = _Outer()
    with pytest.raises(validation.ValidationError):
      outer.rate = 1.0
    with pytest.raises(validation.ValidationError):
      outer.undeclared = 1

  def test_from_dict_builds_sections(self):
    outer = _Outer.FromDict({'inner': {'size': 7}, 'shape': [2, 3],
                             'mode': 'careful'})
    assert outer.inner.size == 7
    assert outer.shape == (2, 3)
    assert outer.mode == 'slow'

  def test_section_errors_name_the_section(self):
    with pytest.raises(validation.ValidationError, match='inner'):
      _Outer.FromDict({'inner': {'size': 11}})

  def test_equality_and_round_trip(self):
    outer = _Outer(limit=4, shape=(5, 6))
    assert _Outer.FromDict(outer.ToDict()) == outer
    assert outer != _Outer()
    assert outer.ToDict()['shape'] == [5, 6]


class TestValidators(object):

  def test_type_conversion(self):
    assert validation.Type(float)('0.25') == 0.25
    assert validation.Type(int)(3.0) == 3
    with pytest.raises(validation.ValidationError):
      validation.Type(int)(3.5)
    with pytest.raises(validation.ValidationError):
      validation.Type(int)(True)
    with pytest.raises(validation.ValidationError):
      validation.Type(bool)('yes')
    with pytest.raises(validation.MissingAttribute):
      validation.Type(str)(None)

  def test_range_bounds(self):
    inclusive = validation.Range(0, 5)
    assert inclusive(0) == 0 and inclusive(5) == 5
    exclusive = validation.Range(0.0, 1.0, float, exclusive=True)
    for value in (0.0, 1.0):
      with pytest.raises(validation.ValidationError):
        exclusive(value)
    assert validation.Range(1, None)(10 ** 9) == 10 ** 9

  def test_repeated(self):
    pair = validation.Repeated(validation.Range(1, None), length=2)
    assert pair([1, 2]) == (1, 2)
    with pytest.raises(validation.ValidationError):
      pair([1, 2, 3])
    with pytest.raises(validation.ValidationError):
      pair('12')
    some = validation.Repeated(float, min_length=1)
    with pytest.raises(validation.ValidationError):
      some([])

  def test_options(self):
    options = validation.Options('a', ('b', ['bee']))
    assert options('bee') == 'b'
    with pytest.raises(validation.ValidationError):
      options('c')
