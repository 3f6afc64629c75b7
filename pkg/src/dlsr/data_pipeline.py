"""Dataset ingestion: HR loading, bicubic degradation, patch sampling,
dihedral augmentation, and seed-deterministic batch streams."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".bmp")

_PERM_STREAM, _SAMPLE_STREAM = 11, 13


def imread_rgb(path) -> np.ndarray:
    """8-bit image file -> HxWx3 float64 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def imwrite_rgb(path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def list_images(hr_dir) -> list[str]:
    names = [n for n in sorted(os.listdir(hr_dir))
             if n.lower().endswith(IMAGE_EXTENSIONS)]
    return [os.path.join(hr_dir, n) for n in names]


def _cubic(x: np.ndarray) -> np.ndarray:
    # Keys kernel with a = -0.5 (Catmull-Rom)
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = 1.5 * ax3 - 2.5 * ax2 + 1.0
    far = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out x n_in) resampling matrix. When downsampling, the kernel is
    widened by the scale factor (antialiased); borders are edge-clamped and each
    output row is renormalized to sum to 1."""
    s = n_in / n_out
    f = max(s, 1.0)
    centers = (np.arange(n_out) + 0.5) * s - 0.5
    left = np.floor(centers - 2.0 * f).astype(int) + 1
    taps = int(np.ceil(4.0 * f)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = _cubic((idx - centers[:, None]) / f)
    idx = np.clip(idx, 0, n_in - 1)
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(matrix, (rows, idx.ravel()), weights.ravel())
    return matrix / matrix.sum(axis=1, keepdims=True)


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, _ = img.shape
    out = np.tensordot(_axis_weights(h, out_h), img, axes=(1, 0))
    out = np.tensordot(_axis_weights(w, out_w), out, axes=(1, 1)).transpose(1, 0, 2)
    out = np.clip(out, 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def bicubic_downsample(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = np.asarray(img).shape[:2]
    if scale < 1:
        raise ValueError("scale must be >= 1")
    if h % scale or w % scale:
        raise ValueError(f"image dims ({h}, {w}) not divisible by scale {scale}")
    return bicubic_resize(img, h // scale, w // scale)


def bicubic_upsample(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = np.asarray(img).shape[:2]
    return bicubic_resize(img, h * scale, w * scale)


@dataclass
class SRSample:
    hr_patch: np.ndarray
    lr_patch: np.ndarray
    source_id: str


@dataclass
class SRSource:
    """One HR image with its pre-computed bicubic degradation."""

    source_id: str
    hr: np.ndarray
    lr: np.ndarray


class SRDataset:
    """Indexed folder (or in-memory list) of HR images, degraded once on load."""

    def __init__(self, sources: list[SRSource], scale: int, patch_size: int):
        if not sources:
            raise ValueError("dataset is empty")
        if patch_size % scale:
            raise ValueError("patch size must be divisible by scale")
        for src in sources:
            if min(src.hr.shape[:2]) < patch_size:
                raise ValueError(
                    f"image {src.source_id!r} is smaller than the patch size")
        self.sources = sources
        self.scale = scale
        self.patch_size = patch_size

    def __len__(self) -> int:
        return len(self.sources)

    @classmethod
    def from_arrays(cls, images, scale: int, patch_size: int, ids=None) -> "SRDataset":
        sources = []
        for i, hr in enumerate(images):
            hr = np.asarray(hr, dtype=np.float64)
            h, w = hr.shape[:2]
            hr = hr[:h - h % scale, :w - w % scale]
            source_id = ids[i] if ids is not None else f"image_{i:04d}"
            sources.append(SRSource(source_id, hr, bicubic_downsample(hr, scale)))
        return cls(sources, scale, patch_size)

    @classmethod
    def from_dir(cls, hr_dir, scale: int, patch_size: int) -> "SRDataset":
        paths = list_images(hr_dir)
        if not paths:
            raise ValueError(f"no images found under {hr_dir!r}")
        images = [imread_rgb(p) for p in paths]
        ids = [os.path.basename(p) for p in paths]
        return cls.from_arrays(images, scale, patch_size, ids)

    def subset(self, indices) -> "SRDataset":
        return SRDataset([self.sources[i] for i in indices], self.scale, self.patch_size)


def augment(sample: SRSample, code: int) -> SRSample:
    """Dihedral-group element: rotation by 90 * (code % 4) degrees, then a
    horizontal flip when code >= 4, applied to HR and LR consistently."""
    if not 0 <= code <= 7:
        raise ValueError("augmentation code must be in 0..7")

    def apply(img):
        out = np.rot90(img, code % 4, axes=(0, 1))
        if code >= 4:
            out = out[:, ::-1]
        return np.ascontiguousarray(out)

    return SRSample(apply(sample.hr_patch), apply(sample.lr_patch), sample.source_id)


def sample_patch(source: SRSource, hr_patch_size: int,
                 rng: np.random.Generator) -> SRSample:
    """Uniform scale-aligned crop; the LR patch is cut from the pre-degraded LR
    at the corresponding coordinates."""
    hr_h, hr_w = source.hr.shape[:2]
    scale = hr_h // source.lr.shape[0]
    if hr_patch_size % scale:
        raise ValueError("patch size must be divisible by scale")
    if hr_patch_size > hr_h or hr_patch_size > hr_w:
        raise ValueError(f"image {source.source_id!r} smaller than the patch size")
    lp = hr_patch_size // scale
    y = int(rng.integers(0, source.lr.shape[0] - lp + 1))
    x = int(rng.integers(0, source.lr.shape[1] - lp + 1))
    lr = source.lr[y:y + lp, x:x + lp]
    hr = source.hr[y * scale:y * scale + hr_patch_size,
                   x * scale:x * scale + hr_patch_size]
    return SRSample(hr.copy(), lr.copy(), source.source_id)


def _to_chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


class PatchStream:
    """Infinite shuffled stream of augmented patch batches.

    Every batch is derived from a single global sample counter: epoch
    permutations and per-sample crop/augmentation draws are seeded by
    (seed, stream, index), so the stream resumes bit-identically from a
    stored position.
    """

    def __init__(self, dataset: SRDataset, batch_size: int, seed,
                 augment_samples: bool = True):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed_key = tuple(int(s) for s in seed) \
            if isinstance(seed, (tuple, list)) else (int(seed),)
        self.augment_samples = augment_samples
        self.position = 0
        self._perm_epoch = -1
        self._perm = None

    def _permutation(self, epoch: int) -> np.ndarray:
        if epoch != self._perm_epoch:
            rng = np.random.default_rng(
                np.random.SeedSequence((*self.seed_key, _PERM_STREAM, epoch)))
            self._perm = rng.permutation(len(self.dataset))
            self._perm_epoch = epoch
        return self._perm

    def sample_at(self, index: int) -> SRSample:
        n = len(self.dataset)
        perm = self._permutation(index // n)
        source = self.dataset.sources[perm[index % n]]
        rng = np.random.default_rng(
            np.random.SeedSequence((*self.seed_key, _SAMPLE_STREAM, index)))
        sample = sample_patch(source, self.dataset.patch_size, rng)
        if self.augment_samples:
            sample = augment(sample, int(rng.integers(0, 8)))
        return sample

    def __iter__(self):
        return self

    def __next__(self):
        samples = [self.sample_at(self.position + i) for i in range(self.batch_size)]
        self.position += self.batch_size
        hr = np.stack([_to_chw(s.hr_patch) for s in samples])
        lr = np.stack([_to_chw(s.lr_patch) for s in samples])
        return hr, lr

    def seek(self, position: int) -> None:
        self.position = int(position)


def make_batches(dataset: SRDataset, batch_size: int, seed,
                 augment_samples: bool = True) -> PatchStream:
    return PatchStream(dataset, batch_size, seed, augment_samples)


def synthetic_images(num_images: int, size: int = 96, seed: int = 0) -> list[np.ndarray]:
    """Procedural HR images with bicubic-hostile content: smooth gradients
    under sharp rectangles, bars, and thin lines."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 17)))
    images = []
    yy, xx = np.mgrid[0:size, 0:size] / size
    for _ in range(num_images):
        img = np.empty((size, size, 3))
        base = rng.uniform(0.15, 0.85, size=3)
        gx, gy = rng.uniform(-0.4, 0.4, size=(2, 3))
        for c in range(3):
            img[:, :, c] = base[c] + gx[c] * xx + gy[c] * yy
        for _ in range(rng.integers(6, 12)):
            h = rng.integers(size // 12, size // 2)
            w = rng.integers(size // 12, size // 2)
            y = rng.integers(0, size - h)
            x = rng.integers(0, size - w)
            img[y:y + h, x:x + w] = rng.uniform(0.05, 0.95, size=3)
        for _ in range(rng.integers(3, 7)):
            t = rng.integers(1, 3)
            color = rng.uniform(0.0, 1.0, size=3)
            if rng.integers(0, 2):
                y = rng.integers(0, size - t)
                img[y:y + t, :] = color
            else:
                x = rng.integers(0, size - t)
                img[:, x:x + t] = color
        images.append(np.clip(img, 0.0, 1.0))
    return images


def write_images(images, out_dir, prefix: str = "img") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        path = os.path.join(out_dir, f"{prefix}_{i:04d}.png")
        imwrite_rgb(path, img)
        paths.append(path)
    return paths


def dataset_from_descriptor(desc: dict) -> SRDataset:
    """Build a dataset from the config descriptor: either {hr_dir, scale,
    patch_size, ...} or {synthetic: {num_images, size, seed}, scale, patch_size}."""
    scale = int(desc.get("scale", 2))
    patch_size = int(desc.get("patch_size", 64))
    if "hr_dir" in desc and desc["hr_dir"]:
        return SRDataset.from_dir(desc["hr_dir"], scale, patch_size)
    if "synthetic" in desc and desc["synthetic"]:
        syn = desc["synthetic"]
        images = synthetic_images(int(syn.get("num_images", 20)),
                                  int(syn.get("size", 96)),
                                  int(syn.get("seed", 0)))
        return SRDataset.from_arrays(images, scale, patch_size)
    raise ValueError("dataset descriptor needs either 'hr_dir' or 'synthetic'")
