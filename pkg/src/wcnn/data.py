"""Dataset ingestion, split protocols, and the synthetic grating generator.

On-disk layout mirrors sample-grouped texture collections:

    root/<class>/<sample_group>/<image>.ppm

Classes, groups, and files are ordered lexicographically, so the item
order is a pure function of the directory contents. Splits either hold
out one sample group per class (training on it, testing on the rest) or
come from fixed list files of relative paths, one per line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, IngestError, ProtocolError
from .netpbm import load_image
from .tensor import DTYPE

IMAGE_SUFFIXES = (".ppm", ".pgm")


@dataclass(frozen=True)
class Item:
    image: np.ndarray  # [C, S, S] float32 in [0, 1]
    label: int
    group: str
    path: str  # relative to the dataset root; synthetic items get pseudo-paths


@dataclass
class Dataset:
    classes: list[str]
    items: list[Item]
    image_size: int

    def __len__(self):
        return len(self.items)

    def class_counts(self):
        counts = np.zeros(len(self.classes), dtype=np.int64)
        for item in self.items:
            counts[item.label] += 1
        return counts


@dataclass(frozen=True)
class SplitPlan:
    """One train/test partition over dataset item indices."""

    mode: str  # "group-holdout" | "fixed-lists"
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    index: int = 0

    def __post_init__(self):
        train, test = set(self.train_indices), set(self.test_indices)
        if train & test:
            raise ProtocolError(
                f"split {self.index}: {len(train & test)} items appear on both sides"
            )
        if not self.train_indices or not self.test_indices:
            raise ProtocolError(f"split {self.index}: empty train or test side")


def rescale_nearest(image, size):
    """Nearest-neighbor resample of [C, H, W] to [C, size, size].

    Source index is floor(i * extent / size): exact decimation for
    integer ratios, and the identity when sizes already match.
    """
    c, h, w = image.shape
    if (h, w) == (size, size):
        return image
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return np.ascontiguousarray(image[:, rows[:, None], cols[None, :]])


def ingest_directory(root, image_size):
    """Load every image under root/class/group/ into memory.

    Images are rescaled to image_size x image_size on ingestion. All
    images must agree on channel count. Empty class or group directories
    are layout errors, named in the exception.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise IngestError(f"no class directories under {root}")

    classes = [p.name for p in class_dirs]
    items = []
    channels = None
    for label, class_dir in enumerate(class_dirs):
        group_dirs = sorted(p for p in class_dir.iterdir() if p.is_dir())
        if not group_dirs:
            raise IngestError(f"class {class_dir.name!r} has no sample groups")
        n_before = len(items)
        for group_dir in group_dirs:
            files = sorted(
                p for p in group_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
            )
            if not files:
                raise IngestError(
                    f"group {group_dir.name!r} of class {class_dir.name!r} has no images"
                )
            for path in files:
                img = load_image(path).data
                if channels is None:
                    channels = img.shape[0]
                elif img.shape[0] != channels:
                    raise IngestError(
                        f"{path} has {img.shape[0]} channels, dataset started with {channels}"
                    )
                items.append(
                    Item(
                        image=rescale_nearest(img, image_size),
                        label=label,
                        group=group_dir.name,
                        path=path.relative_to(root).as_posix(),
                    )
                )
        if len(items) == n_before:
            raise IngestError(f"class {class_dir.name!r} has no images")
    return Dataset(classes=classes, items=items, image_size=image_size)


# --- split protocols ----------------------------------------------------------


def kth_style_splits(dataset):
    """One plan per sample group: train on group i of every class, test on the rest.

    Requires the same number of groups in every class; group identity is
    positional (sorted group names per class).
    """
    per_class_groups = {}
    for item in dataset.items:
        per_class_groups.setdefault(item.label, set()).add(item.group)
    group_lists = {label: sorted(groups) for label, groups in per_class_groups.items()}
    counts = {len(groups) for groups in group_lists.values()}
    if len(counts) != 1:
        detail = ", ".join(
            f"{dataset.classes[label]}={len(groups)}"
            for label, groups in sorted(group_lists.items())
        )
        raise ProtocolError(f"unequal sample-group counts across classes: {detail}")
    g = counts.pop()
    if g < 2:
        raise ProtocolError("group-holdout needs at least 2 sample groups per class")

    plans = []
    for i in range(g):
        train, test = [], []
        for idx, item in enumerate(dataset.items):
            if item.group == group_lists[item.label][i]:
                train.append(idx)
            else:
                test.append(idx)
        plans.append(
            SplitPlan(
                mode="group-holdout",
                train_indices=tuple(train),
                test_indices=tuple(test),
                index=i,
            )
        )
    return plans


def split_from_lists(dataset, train_list, test_list):
    """Fixed-list split from two text files of relative paths (one per line)."""
    by_path = {item.path: idx for idx, item in enumerate(dataset.items)}

    def read(path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        indices = []
        for line in lines:
            rel = line.strip()
            if not rel or rel.startswith("#"):
                continue
            if rel not in by_path:
                raise ProtocolError(f"{path}: {rel!r} is not in the dataset")
            indices.append(by_path[rel])
        return tuple(indices)

    return SplitPlan(
        mode="fixed-lists",
        train_indices=read(train_list),
        test_indices=read(test_list),
    )


def holdout_split(dataset, train_group="train"):
    """The canonical plan for datasets that carry explicit train/test groups."""
    train = tuple(i for i, it in enumerate(dataset.items) if it.group == train_group)
    test = tuple(i for i, it in enumerate(dataset.items) if it.group != train_group)
    return SplitPlan(mode="group-holdout", train_indices=train, test_indices=test)


# --- synthetic gratings --------------------------------------------------------


@dataclass(frozen=True)
class GratingClass:
    """A sinusoidal texture family: orientation in degrees, frequency in
    cycles per image, plus additive uniform noise amplitude."""

    name: str
    orientation_deg: float
    frequency: float
    noise: float = 0.1


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[GratingClass, ...]
    per_class_train: int = 100
    per_class_test: int = 50
    size: int = 64
    seed: int = 0
    channels: int = 3

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ArgumentError("need at least 2 synthetic classes")
        keys = set()
        for cls in self.classes:
            if cls.frequency < 0:
                raise ArgumentError(f"class {cls.name!r}: negative frequency")
            # f == 0 is constant regardless of orientation
            key = (cls.frequency, cls.orientation_deg % 180.0 if cls.frequency else None)
            if key in keys:
                raise ArgumentError(
                    f"class {cls.name!r} duplicates another class's pattern; "
                    "the spec is non-separable by construction"
                )
            keys.add(key)
        if self.per_class_train < 1 or self.per_class_test < 1:
            raise ArgumentError("per-class train and test counts must be positive")
        if self.size < 4:
            raise ArgumentError(f"image size {self.size} is too small")


def _grating(cls, size, channels, rng):
    ys, xs = np.meshgrid(
        np.arange(size, dtype=DTYPE) / size,
        np.arange(size, dtype=DTYPE) / size,
        indexing="ij",
    )
    theta = math.radians(cls.orientation_deg)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = np.sin(
        2.0 * math.pi * cls.frequency * (xs * math.cos(theta) + ys * math.sin(theta))
        + phase
    )
    img = 0.5 + 0.45 * wave[None, :, :].repeat(channels, axis=0)
    img = img + rng.uniform(-cls.noise, cls.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(DTYPE)


def gen_synthetic(spec):
    """Generate a reproducible grating dataset with train/test groups.

    Items of group "train" and "test" are generated per class from one
    seeded stream, so a fixed seed yields a byte-identical dataset.
    Pair with `holdout_split` for the canonical plan.
    """
    rng = np.random.default_rng(spec.seed)
    items = []
    for label, cls in enumerate(spec.classes):
        for group, count in (("train", spec.per_class_train), ("test", spec.per_class_test)):
            for i in range(count):
                items.append(
                    Item(
                        image=_grating(cls, spec.size, spec.channels, rng),
                        label=label,
                        group=group,
                        path=f"{cls.name}/{group}/{i:04d}",
                    )
                )
    return Dataset(
        classes=[c.name for c in spec.classes],
        items=items,
        image_size=spec.size,
    )


SYNTHETIC_PRESETS = {
    # orientation/frequency quadrants, well separated
    "orient4": (
        GratingClass("vert_coarse", 0.0, 4.0),
        GratingClass("horiz_coarse", 90.0, 4.0),
        GratingClass("vert_fine", 0.0, 12.0),
        GratingClass("horiz_fine", 90.0, 12.0),
    ),
    # classes differing only in low frequencies (coarse scale)
    "coarse4": (
        GratingClass("f2", 0.0, 2.0),
        GratingClass("f3", 0.0, 3.0),
        GratingClass("f4", 0.0, 4.0),
        GratingClass("f6", 0.0, 6.0),
    ),
}


def synthetic_preset(name, **overrides):
    """A SyntheticSpec from a named preset; overrides pass through."""
    if name not in SYNTHETIC_PRESETS:
        raise ArgumentError(
            f"unknown synthetic preset {name!r}; available: {sorted(SYNTHETIC_PRESETS)}"
        )
    return SyntheticSpec(classes=SYNTHETIC_PRESETS[name], **overrides)
