# Copyright 2026 The CT Classification Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import setuptools
import os

# Compute the package tree of ct_classification since setuptools doesn't do
# it for us.
packages = []
base = os.path.dirname(__file__) or '.'
for root, dirs, files in os.walk(os.path.join(base, 'ct_classification')):
    if '__init__.py' in files:
        packages.append('.'.join(root[len(base) + 1:].split(os.path.sep)))

setuptools.setup(
    name="ct-classification",
    version="0.1",
    description="Hybrid lung CT classification with dense attention "
                "networks, deep-feature SVMs and explanations.",
    packages=packages,
    py_modules=['classify_ct'],
    python_requires='>=3.9',
    install_requires=[
        'PyYAML>=5.1',
        'numpy>=1.22',
        'scipy>=1.8',
        'torch>=1.13',
        'torchvision>=0.14',
        'scikit-learn>=1.1',
        'Pillow>=9.1',
        'matplotlib>=3.5',
    ],
    extras_require={'test': ['pytest>=7']},
    entry_points={'console_scripts': ['classify_ct=classify_ct:main']},
)
