"""Shipped network descriptions.

Pooling is folded into the preceding conv layer (non-overlapping max pool),
so every compute layer owns exactly one weight region and one output
feature region.  ``resnet50-like`` keeps the ResNet-50 layer shapes as a
plain chain; shortcut connections are dropped.
"""
from __future__ import annotations

import copy


def _conv(out, kernel=3, stride=1, pad=None, pool=1):
    return {"kind": "conv", "out": out, "kernel": kernel, "stride": stride,
            "pad": kernel // 2 if pad is None else pad, "pool": pool}


def _fc(out, **kw):
    return {"kind": "fc", "out": out, **kw}


MLP_TINY = {
    "name": "mlp-tiny", "bits": 8, "input": [784],
    "layers": [_fc(512), _fc(256), _fc(10)],
}

ALEXNET = {
    "name": "alexnet", "bits": 8, "input": [3, 227, 227],
    "layers": [
        _conv(96, 11, 4, 0, pool=2),
        _conv(256, 5, pool=2),
        _conv(384), _conv(384),
        _conv(256, pool=2),
        _fc(4096), _fc(4096), _fc(1000),
    ],
}

VGG16 = {
    "name": "vgg16", "bits": 8, "input": [3, 224, 224],
    "layers": [
        _conv(64), _conv(64, pool=2),
        _conv(128), _conv(128, pool=2),
        _conv(256), _conv(256), _conv(256, pool=2),
        _conv(512), _conv(512), _conv(512, pool=2),
        _conv(512), _conv(512), _conv(512, pool=2),
        _fc(4096), _fc(4096), _fc(1000),
    ],
}


def _resnet50_layers():
    layers = [_conv(64, 7, 2, 3, pool=2)]
    stages = [(3, 64, 256), (4, 128, 512), (6, 256, 1024), (3, 512, 2048)]
    for s, (blocks, mid, out) in enumerate(stages):
        for b in range(blocks):
            stride = 2 if (b == 0 and s > 0) else 1
            layers += [_conv(mid, 1), _conv(mid, 3, stride), _conv(out, 1)]
    layers[-1]["pool"] = 7          # global pooling before the classifier
    layers.append(_fc(1000))
    return layers


RESNET50 = {
    "name": "resnet50", "bits": 8, "input": [3, 224, 224],
    "layers": _resnet50_layers(),
}

PRESETS = {
    "mlp-tiny": MLP_TINY,
    "alexnet": ALEXNET,
    "vgg16": VGG16,
    "resnet50": RESNET50,
}
# accepted spellings
ALIASES = {"resnet50-like": "resnet50", "vgg16-like": "vgg16", "vgg-16": "vgg16"}


def get_preset(name: str) -> dict:
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise KeyError(f"unknown network preset {name!r}")
    return copy.deepcopy(PRESETS[key])
