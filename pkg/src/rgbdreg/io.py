"""File formats: depth/color PNG, intrinsics JSON, pose text files.

Depth is stored as 16-bit grayscale PNG in millimeters (0 = invalid) and
converted to meters on load. Poses are plaintext 4x4 row-major matrices.
"""

from __future__ import annotations

import json

import numpy as np
from PIL import Image

from .exceptions import InvalidInputError
from .geometry import CameraIntrinsics, RigidTransform, validate_color, validate_depth


def save_depth_png(path, depth_m: np.ndarray) -> None:
    depth_m = validate_depth(depth_m)
    mm = np.round(depth_m * 1000.0)
    if (mm > 65535).any():
        raise InvalidInputError("depth exceeds 65.535 m, not representable in 16-bit mm")
    img = Image.fromarray(mm.astype(np.uint16))
    img.save(path)


def load_depth_png(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise InvalidInputError(f"{path}: expected single-channel depth PNG")
    return arr.astype(np.float64) / 1000.0


def save_color_png(path, color01: np.ndarray) -> None:
    color01 = validate_color(color01)
    img = Image.fromarray(np.round(color01 * 255.0).astype(np.uint8))
    img.save(path)


def load_color_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"))
    return arr.astype(np.float64) / 255.0


def save_intrinsics(path, intr: CameraIntrinsics) -> None:
    d = {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
         "width": intr.width, "height": intr.height}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)


def load_intrinsics(path) -> CameraIntrinsics:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    try:
        return CameraIntrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                                width=int(d["width"]), height=int(d["height"]))
    except KeyError as exc:
        raise InvalidInputError(f"intrinsics file missing key {exc}") from exc


def save_pose(path, T: RigidTransform) -> None:
    m = T.matrix()
    with open(path, "w", encoding="utf-8") as fh:
        for row in m:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_pose(path) -> RigidTransform:
    with open(path, "r", encoding="utf-8") as fh:
        vals = [float(tok) for tok in fh.read().split()]
    if len(vals) != 16:
        raise InvalidInputError(f"{path}: pose file must hold 16 numbers")
    return RigidTransform.from_matrix(np.array(vals).reshape(4, 4))
