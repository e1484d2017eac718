"""Dataset assembly: image pairs, PNG I/O, patch extraction, augmentation,
and seed-deterministic batching.

Dataset directory layout:

    clean/<id>.png      8-bit RGB
    corrupted/<id>.png  8-bit RGB
    masks/<id>.png      8-bit grayscale, 0 = untouched pixel
    manifest.tsv        id <TAB> seed per line

Everything downstream of a (dataset, config, seed) triple is
deterministic, including shuffle order and patch positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import degrade
from .tensorops import Tensor


@dataclass
class ImagePair:
    """Clean image, corrupted image and artifact mask for one sample.

    clean/corrupted are (3, h, w) floats in [0, 1]; mask is (h, w).
    Off-mask pixels of clean and corrupted agree exactly.
    """

    clean: np.ndarray
    corrupted: np.ndarray
    mask: np.ndarray
    id: str = ""

    def validate(self):
        if self.clean.shape != self.corrupted.shape:
            raise ValueError(f"pair {self.id}: clean/corrupted shape mismatch")
        if self.mask.shape != self.clean.shape[-2:]:
            raise ValueError(f"pair {self.id}: mask shape mismatch")
        off = self.mask == 0
        if not np.array_equal(self.clean[:, off], self.corrupted[:, off]):
            raise ValueError(f"pair {self.id}: off-mask pixels differ")


@dataclass
class PatchBatch:
    """One training batch: corrupted, clean, and median baselines, (b, 3, p, p)."""

    corrupted: Tensor
    clean: Tensor
    medians: Tensor


# -- PNG I/O --


def save_image(path, image: np.ndarray):
    """Write a (3, h, w) or (h, w) float [0,1] array as an 8-bit PNG."""
    arr = np.asarray(image)
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if q.ndim == 3:
        q = q.transpose(1, 2, 0)
    Image.fromarray(q).save(path, format="PNG")


def load_image(path) -> np.ndarray:
    """Read a PNG as (3, h, w) float in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def save_mask(path, mask: np.ndarray):
    """Write an (h, w) coverage map as 8-bit grayscale.

    Quantizes with ceil so any touched pixel stays nonzero in the file;
    rounding a faint artifact's mask to 0 would break the off-mask
    agreement invariant on reload.
    """
    q = np.clip(np.ceil(np.asarray(mask) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_dataset(root, pairs, seeds=None):
    """Write pairs to the dataset layout; returns the manifest path."""
    root = Path(root)
    for sub in ("clean", "corrupted", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    seeds = seeds if seeds is not None else [0] * len(pairs)
    lines = []
    for pair, seed in zip(pairs, seeds):
        save_image(root / "clean" / f"{pair.id}.png", pair.clean)
        save_image(root / "corrupted" / f"{pair.id}.png", pair.corrupted)
        save_mask(root / "masks" / f"{pair.id}.png", pair.mask)
        lines.append(f"{pair.id}\t{seed}\n")
    manifest = root / "manifest.tsv"
    manifest.write_text("".join(lines))
    return manifest


def load_dataset(root):
    """Load all pairs named by manifest.tsv; returns list of ImagePair."""
    root = Path(root)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.tsv under {root}")
    pairs = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        pair_id = line.split("\t")[0]
        pair = ImagePair(
            clean=load_image(root / "clean" / f"{pair_id}.png"),
            corrupted=load_image(root / "corrupted" / f"{pair_id}.png"),
            mask=load_mask(root / "masks" / f"{pair_id}.png"),
            id=pair_id,
        )
        pairs.append(pair)
    return pairs


# -- patches and augmentation --


def extract_patches(pair: ImagePair, p: int, n: int, rng_seed: int):
    """Cut n seed-deterministic p x p patches from a pair.

    When the mask is non-empty, at least half the patches are placed to
    intersect it; the rest are uniform. Returns a list of ImagePair.
    """
    c, h, w = pair.clean.shape
    if h < p or w < p:
        raise ValueError(f"pair {pair.id}: image {h}x{w} smaller than patch {p}")
    rng = np.random.default_rng(rng_seed)
    mask_ys, mask_xs = np.nonzero(pair.mask)
    biased = (n + 1) // 2 if mask_ys.size else 0
    out = []
    for i in range(n):
        if i < biased:
            j = int(rng.integers(mask_ys.size))
            my, mx = int(mask_ys[j]), int(mask_xs[j])
            top = int(np.clip(my - rng.integers(p), 0, h - p))
            left = int(np.clip(mx - rng.integers(p), 0, w - p))
        else:
            top = int(rng.integers(h - p + 1))
            left = int(rng.integers(w - p + 1))
        out.append(ImagePair(
            clean=pair.clean[:, top:top + p, left:left + p].copy(),
            corrupted=pair.corrupted[:, top:top + p, left:left + p].copy(),
            mask=pair.mask[top:top + p, left:left + p].copy(),
            id=f"{pair.id}#{i}",
        ))
    return out


def augment(pair: ImagePair, rng_seed: int) -> ImagePair:
    """Apply one random right-angle rotation / flip / rescale draw.

    The identical transform hits clean, corrupted, and mask; rescaling
    is nearest-neighbor so off-mask agreement is preserved exactly.
    """
    c, h, w = pair.clean.shape
    if h != w:
        raise ValueError("augment expects square patches")
    rng = np.random.default_rng(rng_seed)
    k = int(rng.integers(4))
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    scale = float(rng.uniform(0.8, 1.2))

    def tf(img):
        out = np.rot90(img, k, axes=(-2, -1))
        if hflip:
            out = out[..., ::-1]
        if vflip:
            out = out[..., ::-1, :]
        return _rescale_nearest(out, scale, h)

    return ImagePair(clean=tf(pair.clean), corrupted=tf(pair.corrupted),
                     mask=tf(pair.mask), id=pair.id)


def _rescale_nearest(img, scale, target):
    size = img.shape[-1]
    new = max(1, int(round(size * scale)))
    if new != size:
        idx = np.minimum((np.arange(new) / scale).astype(int), size - 1)
        img = img[..., idx, :][..., :, idx]
    cur = img.shape[-1]
    if cur > target:  # center crop
        off = (cur - target) // 2
        img = img[..., off:off + target, off:off + target]
    elif cur < target:  # reflect-pad back to target
        before = (target - cur) // 2
        after = target - cur - before
        pad = [(0, 0)] * (img.ndim - 2) + [(before, after), (before, after)]
        img = np.pad(img, pad, mode="symmetric")
    return np.ascontiguousarray(img)


def batches(pairs, batch_size: int, patch: int, rng_seed: int,
            n_patches_per_pair: int = 4, median_k: int = 5,
            augment_patches: bool = True, dtype=np.float32):
    """Yield one epoch of PatchBatch, seed-deterministically shuffled.

    The last partial batch is dropped. Medians are precomputed with the
    configured kernel.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2 (batch norm constraint)")
    all_patches = []
    for idx, pair in enumerate(pairs):
        sub = extract_patches(pair, patch, n_patches_per_pair,
                              _mix(rng_seed, idx, 0))
        if augment_patches:
            sub = [augment(pp, _mix(rng_seed, idx, 1 + j))
                   for j, pp in enumerate(sub)]
        all_patches.extend(sub)
    order = np.random.default_rng(_mix(rng_seed, 0xBA7C, 0)).permutation(
        len(all_patches))
    for start in range(0, len(all_patches) - batch_size + 1, batch_size):
        chunk = [all_patches[i] for i in order[start:start + batch_size]]
        corrupted = np.stack([pp.corrupted for pp in chunk]).astype(dtype)
        clean = np.stack([pp.clean for pp in chunk]).astype(dtype)
        medians = degrade.median_filter(corrupted, median_k)
        yield PatchBatch(corrupted=Tensor(corrupted), clean=Tensor(clean),
                         medians=Tensor(medians))


def _mix(seed: int, a: int, b: int) -> int:
    return int(np.random.SeedSequence([seed, a, b]).generate_state(1)[0])
