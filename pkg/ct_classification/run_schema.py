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

"""Schema of run configuration files and --set overrides."""

from ct_classification import converters as c
from ct_classification import schema as s


SCHEMA = s.Message(
    seed=s.Value(converter=c.StringToInt()),
    branch=s.Value(converter=c.EnumConverter('dense', 'svm', 'both')),
    out=s.Value(converter=c.ToPath),
    data=s.Message(
        root=s.Value(converter=c.ToPath),
        synthetic=s.Value(converter=c.ToBool)),
    synthetic=s.Message(
        num_classes=s.Value(converter=c.StringToInt()),
        per_class=s.Value(converter=c.StringToInt()),
        image_size=s.Value(converter=c.StringToInt()),
        separability=s.Value(converter=c.ToFloat)),
    preprocess=s.Message(
        target_size=s.Value(converter=c.ToPair),
        replicate_channels=s.Value(converter=c.ToBool),
        grayscale_weights=s.Value(converter=c.ToList(c.ToFloat))),
    split=s.Message(
        train_fraction=s.Value(converter=c.ToFloat),
        val_fraction=s.Value(converter=c.ToFloat),
        seed=s.Value(converter=c.StringToInt(handle_none=True)),
        stratified=s.Value(converter=c.ToBool)),
    smote=s.Message(
        k_neighbors=s.Value(converter=c.StringToInt()),
        seed=s.Value(converter=c.StringToInt(handle_none=True)),
        dense=s.Value(converter=c.ToBool),
        svm=s.Value(converter=c.ToBool)),
    dense=s.Message(
        input_size=s.Value(converter=c.ToPair),
        backbone=s.Value(converter=c.EnumConverter('densenet169', 'toy')),
        pretrained=s.Value(converter=c.ToBool),
        freeze_backbone=s.Value(converter=c.ToBool),
        num_classes=s.Value(converter=c.StringToInt(handle_none=True)),
        se_ratio=s.Value(converter=c.StringToInt()),
        pyramid_channels=s.Value(converter=c.StringToInt()),
        learning_rate=s.Value(converter=c.ToFloat),
        epochs=s.Value(converter=c.StringToInt()),
        batch_size=s.Value(converter=c.StringToInt())),
    focal=s.Message(
        gamma=s.Value(converter=c.ToFloat),
        alpha=s.Value(converter=c.ToOptionalList(c.ToFloat)),
        epsilon=s.Value(converter=c.ToFloat)),
    svm=s.Message(
        extractor=s.Value(converter=c.EnumConverter('mobilenet_v2', 'toy')),
        pretrained=s.Value(converter=c.ToBool),
        input_size=s.Value(converter=c.ToPair),
        kernel=s.Value(converter=c.EnumConverter('linear', 'rbf')),
        c=s.Value(converter=c.ToFloat),
        gamma=s.Value(converter=c.ToOptionalFloat),
        search=s.Value(converter=c.ToBool),
        kernels=s.RepeatedField(
            element=s.Value(converter=c.EnumConverter('linear', 'rbf'))),
        c_values=s.RepeatedField(element=s.Value(converter=c.ToFloat)),
        folds=s.Value(converter=c.StringToInt()),
        batch_size=s.Value(converter=c.StringToInt())),
    explain=s.Message(
        method=s.Value(converter=c.EnumConverter('gradcam', 'shap')),
        layer=s.Value(),
        opacity=s.Value(converter=c.ToFloat),
        background_size=s.Value(converter=c.StringToInt()),
        n_samples=s.Value(converter=c.StringToInt()),
        top_features=s.Value(converter=c.StringToInt())),
)
