"""Named weight archives for the whole model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contrastive import ProjectionWeights
from .pyramid import BackboneWeights, FusionWeights
from .recognizer import RecognizerWeights
from .seghead import SegHeadWeights
from .tensor import load_archive, save_archive


class MissingWeight(KeyError):
    def __str__(self) -> str:
        return f"weight archive has no entry named {self.args[0]!r}"


def require(d, name: str) -> np.ndarray:
    try:
        return np.asarray(d[name], dtype=np.float32)
    except KeyError:
        raise MissingWeight(name) from None


@dataclass
class ModelWeights:
    backbone: BackboneWeights
    fusion: FusionWeights
    recognizer: RecognizerWeights
    seghead: SegHeadWeights
    projection: ProjectionWeights

    @classmethod
    def random(cls, channels: int = 16, hidden: int = 32, att: int = 32, embed: int = 16,
               num_classes: int = 40, seg_channels: int = 16, proj_dim: int = 16, seed: int = 0):
        return cls(
            backbone=BackboneWeights.random(channels, seed=seed),
            fusion=FusionWeights.random(seed=seed),
            recognizer=RecognizerWeights.random(channels, hidden, att, embed, num_classes, seed=seed),
            seghead=SegHeadWeights.random(channels, embed, seg_channels, seed=seed),
            projection=ProjectionWeights.random(channels, proj_dim, seed=seed),
        )

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for part in (self.backbone, self.fusion, self.recognizer, self.seghead, self.projection):
            out.update(part.to_dict())
        return out

    @classmethod
    def from_dict(cls, d) -> "ModelWeights":
        return cls(
            backbone=BackboneWeights.from_dict(d),
            fusion=FusionWeights.from_dict(d),
            recognizer=RecognizerWeights.from_dict(d),
            seghead=SegHeadWeights.from_dict(d),
            projection=ProjectionWeights.from_dict(d),
        )

    def save(self, path) -> None:
        save_archive(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "ModelWeights":
        return cls.from_dict(load_archive(path))
