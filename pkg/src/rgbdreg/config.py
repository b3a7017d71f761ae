"""Pipeline configuration.

Defaults mirror the reference operating point: 128x128 images, 32-dim
output features, k=200 correspondences, K_v2g=16 (train) / 32 (test),
K_g2v=1, RANSAC (t,l)=(10,80) train / (100,20) test, loss weight 0.1.
Every field can be overridden from a JSON config file that mirrors the
CLI flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


@dataclass
class PipelineConfig:
    # backbone
    image_size: int = 128
    channels: tuple[int, int, int] = (16, 32, 64)
    out_dim: int = 32
    base_voxel: float = 0.025       # meters; doubles per encoder level
    radius_scale: float = 2.5       # neighborhood radius = radius_scale * level voxel
    lrelu_slope: float = 0.1

    # cross-modal gathering
    k_v2g_train: int = 16
    k_v2g_test: int = 32
    k_g2v: int = 1

    # fusion stage toggles
    fuse_encode: bool = True
    fuse_decode: bool = True
    fuse_final: bool = True

    # correspondence + robust fit
    k_corr: int = 200
    ransac_t_train: int = 10
    ransac_l_train: int = 80
    ransac_t_test: int = 100
    ransac_l_test: int = 20

    # renderer + loss
    splat_sigma: float = 1.0        # px
    splat_tau: float = 0.5          # m, soft-occlusion temperature
    loss_lambda: float = 0.1
    accum_eps: float = 1e-6
    position_grads: bool = False    # route splat gradients into point positions

    # training
    lr: float = 1e-4
    weight_decay: float = 1e-6
    epochs: int = 12
    accum_pairs: int = 8            # gradient accumulation window (stands in for batch 8)

    seed: int = 0

    def k_v2g(self, train: bool) -> int:
        return self.k_v2g_train if train else self.k_v2g_test

    def ransac_params(self, train: bool) -> tuple[int, int]:
        if train:
            return self.ransac_t_train, self.ransac_l_train
        return self.ransac_t_test, self.ransac_l_test

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "channels" in d:
            d = dict(d, channels=tuple(d["channels"]))
        return cls(**d)

    @classmethod
    def from_json_file(cls, path: str) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kwargs) -> "PipelineConfig":
        return dataclasses.replace(self, **kwargs)
