"""Image ingestion, PCA whitening, patch sampling and corruption.

All model-facing data lives in a whitened space where every component has
unit population variance on the training patches.  Images are stored as
``(count, height, width, channels)`` arrays and patches are flattened in the
same row-major ``(y, x, channel)`` order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

CIFAR_RECORD_BYTES = 3073
CIFAR_SIDE = 32
CIFAR_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6)) + ("test_batch.bin",)

SET_SIZE = 16
ROTATION_ANGLES = tuple(-32.0 + 4.0 * k for k in range(SET_SIZE))
ZOOM_FACTORS = tuple(round(0.6 + 0.05 * k, 2) for k in range(SET_SIZE))
TRANSFORM_KINDS = ("translation", "rotation", "scaling")


class DataFormatError(ValueError):
    """Raised when an on-disk dataset does not match its declared layout."""


@dataclass
class ImageSet:
    """A stack of equally sized images with a train/validation split."""

    images: np.ndarray
    validation_mask: np.ndarray = None
    split_tag: str = "all"

    def __post_init__(self):
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if self.images.ndim != 4 or len(self.images) < 1:
            raise ValueError("images must be a non-empty (count, height, width, channels) array")
        if self.validation_mask is None:
            self.validation_mask = np.zeros(len(self.images), dtype=bool)
        self.validation_mask = np.asarray(self.validation_mask, dtype=bool)

    @property
    def count(self):
        return len(self.images)

    @property
    def channel_count(self):
        return self.images.shape[3]

    @property
    def shape(self):
        return self.images.shape[1:3]

    @property
    def validation_count(self):
        return int(self.validation_mask.sum())

    def split(self, tag):
        """Return the ``"train"`` or ``"validation"`` subset as its own set."""
        if tag == "train":
            mask = ~self.validation_mask
        elif tag == "validation":
            mask = self.validation_mask
        else:
            raise ValueError(f"unknown split {tag!r}")
        if not mask.any():
            raise ValueError(f"split {tag!r} is empty")
        return ImageSet(self.images[mask], np.zeros(int(mask.sum()), dtype=bool), tag)


def load_cifar10(directory, pixel_scale=1.0 / 255.0, n_validation=10000):
    """Read the CIFAR-10 binary batches in ``directory``.

    The five training batches are followed by ``test_batch.bin``; the last
    ``n_validation`` images of that sequence form the validation split.
    Labels are dropped.  Byte ``b`` maps to ``b * pixel_scale``.
    """
    missing = [f for f in CIFAR_FILES if not os.path.isfile(os.path.join(directory, f))]
    if missing:
        raise DataFormatError(f"missing batch files in {directory}: {', '.join(missing)}")
    chunks = []
    for name in CIFAR_FILES:
        raw = np.fromfile(os.path.join(directory, name), dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES:
            raise DataFormatError(
                f"{name}: {raw.size} bytes is not a multiple of the {CIFAR_RECORD_BYTES}-byte record"
            )
        records = raw.reshape(-1, CIFAR_RECORD_BYTES)
        planes = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
        chunks.append(planes.transpose(0, 2, 3, 1))
    pixels = np.concatenate(chunks)
    images = pixels.astype(np.float64) * pixel_scale
    mask = np.zeros(len(images), dtype=bool)
    mask[len(images) - min(n_validation, len(images)):] = True
    return ImageSet(images.astype(np.float32), mask)


def read_sidecar(path):
    """Parse a ``key = value`` descriptor for :func:`load_raw_images`."""
    info = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            info[key] = value
    required = ("count", "height", "width", "channels")
    absent = [k for k in required if k not in info]
    if absent:
        raise DataFormatError(f"{path}: missing keys {absent}")
    unknown = set(info) - set(required) - {"validation_indices"}
    if unknown:
        raise DataFormatError(f"{path}: unknown keys {sorted(unknown)}")
    shape = tuple(int(info[k]) for k in required)
    text = info.get("validation_indices", "")
    indices = [int(v) for v in text.replace(",", " ").split()]
    return shape, indices


def load_raw_images(data_path, sidecar_path):
    """Load a flat little-endian float32 image stack described by a sidecar."""
    shape, validation = read_sidecar(sidecar_path)
    expected = int(np.prod(shape)) * 4
    actual = os.path.getsize(data_path)
    if actual != expected:
        raise DataFormatError(
            f"shape mismatch: sidecar declares {shape} ({expected} bytes), file has {actual} bytes"
        )
    images = np.fromfile(data_path, dtype="<f4").reshape(shape)
    mask = np.zeros(shape[0], dtype=bool)
    for i in validation:
        if not 0 <= i < shape[0]:
            raise DataFormatError(f"validation index {i} out of range for {shape[0]} images")
        mask[i] = True
    return ImageSet(images.astype(np.float32), mask)


def save_raw_images(images, data_path, sidecar_path, validation_indices=()):
    """Write the container read by :func:`load_raw_images`."""
    images = np.asarray(images, dtype="<f4")
    if images.ndim == 3:
        images = images[..., None]
    images.tofile(data_path)
    count, height, width, channels = images.shape
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        fh.write(f"count = {count}\nheight = {height}\nwidth = {width}\nchannels = {channels}\n")
        fh.write("validation_indices = " + ", ".join(str(int(i)) for i in validation_indices) + "\n")


@dataclass
class Whitener:
    """Affine map between pixel patches and a unit-variance PCA space.

    ``basis`` holds one principal direction per row, ``scale`` the matching
    inverse square-root eigenvalues.
    """

    mean: np.ndarray
    basis: np.ndarray
    scale: np.ndarray
    retained_variance_fraction: float = 1.0
    eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def input_dim(self):
        return self.basis.shape[1]

    @property
    def output_dim(self):
        return self.basis.shape[0]

    @classmethod
    def scaling_only(cls, d, mean, std):
        """Identity basis with a single global offset and scale.

        Used for already-whitened sources where only the overall data scale
        has to be brought to unit standard deviation.
        """
        return cls(
            mean=np.full(d, float(mean)),
            basis=np.eye(d),
            scale=np.full(d, 1.0 / float(std)),
            retained_variance_fraction=1.0,
        )

    def forward(self, patches):
        patches = np.asarray(patches)
        if patches.shape[-1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} pixel columns, got {patches.shape[-1]}")
        return ((patches - self.mean) @ self.basis.T) * self.scale

    def inverse(self, coords):
        coords = np.asarray(coords)
        if coords.shape[-1] != self.output_dim:
            raise ValueError(f"expected {self.output_dim} whitened columns, got {coords.shape[-1]}")
        return (coords / self.scale) @ self.basis + self.mean

    def __call__(self, patches):
        return self.forward(patches)


def fit_whitener(patches, k, floor=1e-8):
    """Fit a PCA whitener keeping the top ``k`` components of ``patches``."""
    patches = np.asarray(patches, dtype=np.float64)
    n, d = patches.shape
    if not np.all(np.isfinite(patches)):
        raise ValueError("patches contain non-finite values")
    if k > d:
        raise ValueError(f"k={k} exceeds the patch dimension {d}")
    if not 1 <= k < n:
        raise ValueError(f"need n > k >= 1, got n={n}, k={k}")
    mean = patches.mean(axis=0)
    centered = patches - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    top = eigvals[:k]
    total = eigvals.sum()
    fraction = float(top.sum() / total) if total > 0 else 1.0
    return Whitener(
        mean=mean,
        basis=eigvecs[:, :k].T.copy(),
        scale=1.0 / np.sqrt(top + floor),
        retained_variance_fraction=fraction,
        eigenvalues=top,
    )


def extract_patches(images, size, n, rng):
    """Cut ``n`` random ``size x size`` patches, flattened to rows."""
    count, height, width, _ = images.shape
    if size > min(height, width):
        raise ValueError(f"patch size {size} exceeds image size {height}x{width}")
    idx = rng.integers(0, count, size=n)
    ys = rng.integers(0, height - size + 1, size=n)
    xs = rng.integers(0, width - size + 1, size=n)
    # (n, size, size, C) gather in one fancy-index call
    rows = ys[:, None] + np.arange(size)
    cols = xs[:, None] + np.arange(size)
    patches = images[idx[:, None, None], rows[:, :, None], cols[:, None, :]]
    return patches.reshape(n, -1)


@dataclass
class PatchBatch:
    clean: np.ndarray
    corrupted: np.ndarray = None
    noise: np.ndarray = None
    in_whitened_space: bool = True


class PatchStream:
    """Endless source of model-ready patches drawn from an :class:`ImageSet`."""

    def __init__(self, images, size=16, whitener=None, dtype=np.float32):
        if isinstance(images, ImageSet):
            images = images.images
        self.images = images
        self.size = size
        self.whitener = whitener
        self.dtype = dtype
        if size > min(images.shape[1:3]):
            raise ValueError(f"patch size {size} exceeds image size {images.shape[1:3]}")

    @property
    def dim(self):
        if self.whitener is not None:
            return self.whitener.output_dim
        return self.size * self.size * self.images.shape[3]

    def prepare(self, pixel_patches):
        if self.whitener is None:
            return np.asarray(pixel_patches, dtype=self.dtype)
        return self.whitener.forward(pixel_patches).astype(self.dtype)

    def sample(self, batch, rng):
        return self.prepare(extract_patches(self.images, self.size, batch, rng))


class GaussianStream:
    """White, unit-variance Gaussian vectors; the analytic test bed."""

    def __init__(self, dim, dtype=np.float32):
        self.dim = dim
        self.dtype = dtype

    def sample(self, batch, rng):
        return rng.standard_normal((batch, self.dim)).astype(self.dtype)


def sample_patches(images, batch, size, rng, whitener=None):
    """Draw one batch of clean patches (whitened when a whitener is given)."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    stream = PatchStream(images, size, whitener, dtype=np.float64)
    return PatchBatch(clean=stream.sample(batch, rng), in_whitened_space=whitener is not None)


def corrupt(batch, sigma_n, rng):
    """Add white Gaussian noise of standard deviation ``sigma_n``.

    Accepts a :class:`PatchBatch` or a bare clean matrix and returns a new
    :class:`PatchBatch`; the clean array is never modified.
    """
    if sigma_n < 0:
        raise ValueError(f"sigma_n must be non-negative, got {sigma_n}")
    if isinstance(batch, PatchBatch):
        clean, whitened = batch.clean, batch.in_whitened_space
    else:
        clean, whitened = np.asarray(batch), True
    noise = (sigma_n * rng.standard_normal(clean.shape)).astype(clean.dtype)
    return PatchBatch(clean=clean, corrupted=clean + noise, noise=noise, in_whitened_space=whitened)


def fit_stream_whitener(images, size, n_patches, k, rng, floor=1e-8):
    """Fit the whitener used for a colour dataset such as CIFAR-10."""
    patches = extract_patches(images.images if isinstance(images, ImageSet) else images, size, n_patches, rng)
    return fit_whitener(patches, k, floor)


def fit_global_scaler(images, size, n_patches, rng):
    """Scale-only whitener giving patches zero mean and unit global std."""
    data = images.images if isinstance(images, ImageSet) else images
    patches = extract_patches(data, size, n_patches, rng).astype(np.float64)
    return Whitener.scaling_only(patches.shape[1], patches.mean(), patches.std())


@dataclass
class TransformSets:
    """``sets`` has shape ``(S, T, k)``: S sets of T whitened patches."""

    kind: str
    sets: np.ndarray
    parameters: tuple

    @property
    def set_size(self):
        return self.sets.shape[1]


def _resample(image, coords, fill):
    """Bilinear lookup of ``image`` (H, W, C) at ``coords`` (2, h, w)."""
    channels = [
        ndimage.map_coordinates(image[..., c], coords, order=1, mode="constant", cval=fill[c])
        for c in range(image.shape[2])
    ]
    return np.stack(channels, axis=-1)


def _warped_patches(image, center, size, matrices):
    """Patches whose pixel grid is mapped through each 2x2 matrix about ``center``."""
    offs = np.arange(size) - (size - 1) / 2.0
    grid = np.stack(np.meshgrid(offs, offs, indexing="ij")).reshape(2, -1)
    fill = image.reshape(-1, image.shape[2]).mean(axis=0)
    out = []
    for m in matrices:
        src = (m @ grid) + np.asarray(center, dtype=float)[:, None]
        out.append(_resample(image, src.reshape(2, size, size), fill).reshape(-1))
    return np.stack(out)


def transform_set(image, kind, rng, size=16, stride=2):
    """Build one set of 16 transformed pixel patches from a single image.

    Returns ``(patches, parameters)`` where ``parameters`` lists the shift,
    angle or zoom used for each member.
    """
    height, width = image.shape[:2]
    if kind == "translation":
        span = size + (4 - 1) * stride
        if span > min(height, width):
            raise ValueError(f"image {height}x{width} too small for a 4x4 grid with stride {stride}")
        y0 = rng.integers(0, height - span + 1)
        x0 = rng.integers(0, width - span + 1)
        shifts = [(stride * i, stride * j) for i in range(4) for j in range(4)]
        patches = np.stack(
            [image[y0 + dy:y0 + dy + size, x0 + dx:x0 + dx + size].reshape(-1) for dy, dx in shifts]
        )
        return patches, tuple(shifts)
    if size > min(height, width):
        raise ValueError(f"image {height}x{width} too small for {size}x{size} patches")
    if kind == "rotation":
        params = ROTATION_ANGLES
        mats = []
        for deg in params:
            t = np.deg2rad(deg)
            mats.append(np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]))
    elif kind == "scaling":
        params = ZOOM_FACTORS
        mats = [np.eye(2) / z for z in params]
    else:
        raise ValueError(f"unknown transformation {kind!r}; expected one of {TRANSFORM_KINDS}")
    # keep every warped grid inside the image when it fits; otherwise mean fill
    half = (size - 1) / 2.0
    reach = max(np.abs(m).sum(axis=1).max() for m in mats) * half
    cy = min(reach, (height - 1) / 2.0)
    cx = min(reach, (width - 1) / 2.0)
    center = (rng.uniform(cy, height - 1 - cy), rng.uniform(cx, width - 1 - cx))
    return _warped_patches(image, center, size, mats), params


def make_transform_sets(images, whitener, kind, rng, count, size=16, stride=2):
    """Generate ``count`` transformation sets, each from one random image."""
    data = images.images if isinstance(images, ImageSet) else images
    sets = []
    params = None
    for _ in range(count):
        image = data[rng.integers(0, len(data))].astype(np.float64)
        patches, params = transform_set(image, kind, rng, size, stride)
        sets.append(whitener.forward(patches) if whitener is not None else patches)
    return TransformSets(kind, np.stack(sets), params)
