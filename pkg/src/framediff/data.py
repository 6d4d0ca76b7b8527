"""Triplet dataset loading, augmentation, and the synthetic motion generator.

A dataset directory holds one subdirectory per triplet with three image
files in lexicographic order (first, middle, last frame). Pixels map to
[-1, 1] via p -> 2p/255 - 1.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from PIL import Image


class DataError(Exception):
    """Unreadable or inconsistent dataset contents."""


@dataclasses.dataclass
class FrameTriplet:
    i0: np.ndarray
    mid: np.ndarray
    i1: np.ndarray
    source: str


def normalize(img_u8):
    """uint8 [H,W,3] -> float32 [3,H,W] in [-1,1]."""
    arr = np.asarray(img_u8, dtype=np.float32)
    return (arr * (2.0 / 255.0) - 1.0).transpose(2, 0, 1)


def denormalize(img):
    """float [3,H,W] in [-1,1] -> uint8 [H,W,3]."""
    arr = (np.asarray(img, dtype=np.float32) + 1.0) * (255.0 / 2.0)
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def read_image(path):
    try:
        with Image.open(path) as im:
            return normalize(np.asarray(im.convert("RGB")))
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read image {path}: {e}") from e


def write_image(path, img):
    Image.fromarray(denormalize(img), mode="RGB").save(path, format="PNG")


def list_triplet_dirs(root):
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not dirs:
        raise DataError(f"no triplet subdirectories under {root}")
    return dirs


def load_triplet(tdir):
    files = sorted(p for p in Path(tdir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if len(files) != 3:
        raise DataError(f"{tdir} holds {len(files)} images, expected 3")
    frames = [read_image(p) for p in files]
    if not (frames[0].shape == frames[1].shape == frames[2].shape):
        raise DataError(f"{tdir}: frame dimensions disagree")
    return FrameTriplet(frames[0], frames[1], frames[2], str(tdir))


def augment_triplet(tri, rng, crop=None, flips=True, time_reverse=True):
    """Random crop / horizontal+vertical flip / temporal reversal, p=0.5 each."""
    i0, mid, i1 = tri.i0, tri.mid, tri.i1
    if crop:
        _, h, w = i0.shape
        if crop > h or crop > w:
            raise DataError(f"crop {crop} exceeds frame size {h}x{w}")
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        sl = (slice(None), slice(top, top + crop), slice(left, left + crop))
        i0, mid, i1 = i0[sl], mid[sl], i1[sl]
    if flips:
        if rng.random() < 0.5:
            i0, mid, i1 = i0[:, :, ::-1], mid[:, :, ::-1], i1[:, :, ::-1]
        if rng.random() < 0.5:
            i0, mid, i1 = i0[:, ::-1, :], mid[:, ::-1, :], i1[:, ::-1, :]
    if time_reverse and rng.random() < 0.5:
        i0, i1 = i1, i0
    return FrameTriplet(np.ascontiguousarray(i0), np.ascontiguousarray(mid),
                        np.ascontiguousarray(i1), tri.source)


def load_triplets(root, rng=None, crop=None, augment=False):
    """Triplets in deterministic directory order, optionally augmented."""
    for tdir in list_triplet_dirs(root):
        tri = load_triplet(tdir)
        if augment:
            if rng is None:
                raise ValueError("augmentation needs a generator")
            tri = augment_triplet(tri, rng, crop=crop)
        elif crop:
            tri = augment_triplet(tri, rng or np.random.default_rng(0),
                                  crop=crop, flips=False, time_reverse=False)
        yield tri


# -- synthetic moving-shape generator -----------------------------------------


def _smooth_texture(rng, h, w, cells=8, lo=40, hi=210):
    """Coarse random grid bilinearly upsampled into a smooth texture."""
    grid = rng.uniform(lo, hi, (3, cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    out = (grid[:, y0][:, :, x0] * (1 - fy) * (1 - fx)
           + grid[:, y0][:, :, x0 + 1] * (1 - fy) * fx
           + grid[:, y0 + 1][:, :, x0] * fy * (1 - fx)
           + grid[:, y0 + 1][:, :, x0 + 1] * fy * fx)
    return out.transpose(1, 2, 0)


def _paste_shape(canvas, rng, y, x, size, kind, color):
    h, w, _ = canvas.shape
    y0, x0 = int(y), int(x)
    y1, x1 = min(y0 + size, h), min(x0 + size, w)
    y0, x0 = max(y0, 0), max(x0, 0)
    if y1 <= y0 or x1 <= x0:
        return
    if kind == "square":
        canvas[y0:y1, x0:x1] = color
    else:  # gradient-filled square
        ramp = np.linspace(0.35, 1.0, x1 - x0)[None, :, None]
        canvas[y0:y1, x0:x1] = color * ramp


def generate_triplet(rng, size=64):
    """One synthetic triplet: moving shapes over a panning textured background.

    All velocities are even integers so the middle frame lies on the pixel
    grid; the scene is exactly reconstructible from either neighbor.
    """
    margin = 8
    big = size + 2 * margin
    bg = _smooth_texture(rng, big, big)
    # the scene always moves: a static background would make frame averaging
    # nearly exact and the interpolation task degenerate
    bg_vel = rng.choice([-4, -2, 2, 4], size=2)
    n_shapes = int(rng.integers(1, 4))
    shapes = []
    for _ in range(n_shapes):
        shapes.append({
            "y": float(rng.integers(0, size)),
            "x": float(rng.integers(0, size)),
            "size": int(rng.integers(10, 26)),
            # midpoint displacement stays within the K=5 tap field (+-2 px)
            "vel": rng.choice([-4, -2, 2, 4], size=2),
            "kind": "square" if rng.random() < 0.5 else "gradient",
            "color": rng.uniform(30, 225, 3),
        })
    frames = []
    for step in (0.0, 0.5, 1.0):
        oy = margin + int(bg_vel[0] * step) - int(bg_vel[0] // 2)
        ox = margin + int(bg_vel[1] * step) - int(bg_vel[1] // 2)
        canvas = bg[oy:oy + size, ox:ox + size].copy()
        for sh in shapes:
            _paste_shape(canvas, rng,
                         sh["y"] + sh["vel"][0] * step,
                         sh["x"] + sh["vel"][1] * step,
                         sh["size"], sh["kind"], sh["color"])
        frames.append(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    return frames


def generate_dataset(out_dir, count, seed, size=64):
    """Write `count` synthetic triplets as PNG files under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        frames = generate_triplet(rng, size=size)
        tdir = out / f"triplet_{i:04d}"
        tdir.mkdir(exist_ok=True)
        for j, frame in enumerate(frames):
            Image.fromarray(frame, mode="RGB").save(tdir / f"frame{j}.png", format="PNG")
    return out
