"""Quadrature-mirror filter pairs and the separable 2D wavelet transform.

Conventions, fixed here once so every consumer agrees:

* Filters are orthonormal (Haar taps are 1/sqrt(2), not the 1/2 of plain
  averaging), which buys energy conservation and a clean filter-pair
  check. Any intensity-scale difference against an averaging filter is
  absorbed by the learned convolutions downstream.
* Analysis is correlation with periodic (circular) boundary extension:
  low[i] = sum_m k_l[m] * x[(2i + m) mod n]. Periodic extension keeps
  every subband at exactly half size and the transform exactly
  invertible.
* 2D subband names read (vertical filter, horizontal filter): LH is
  high-pass along rows / low-pass along columns (horizontal detail), HL
  the transpose (vertical detail), HH diagonal detail.

These transforms carry no trainable parameters and never record onto an
autodiff tape; they are pure functions over immutable inputs and safe to
call from anywhere, including concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ShapeError
from .tensor import DTYPE, Tensor, as_tensor


@dataclass(frozen=True)
class WaveletFilterPair:
    """A low-pass / high-pass analysis filter pair."""

    k_l: np.ndarray
    k_h: np.ndarray
    name: str = ""

    def __post_init__(self):
        k_l = np.asarray(self.k_l, dtype=DTYPE)
        k_h = np.asarray(self.k_h, dtype=DTYPE)
        if k_l.ndim != 1 or k_h.ndim != 1:
            raise ShapeError("filter taps must be 1D")
        if len(k_l) != len(k_h):
            raise ShapeError(
                f"low/high filters must have equal length, got {len(k_l)} and {len(k_h)}"
            )
        if len(k_l) < 2 or len(k_l) % 2 != 0:
            raise ShapeError(f"filter length must be even and >= 2, got {len(k_l)}")
        k_l.setflags(write=False)
        k_h.setflags(write=False)
        object.__setattr__(self, "k_l", k_l)
        object.__setattr__(self, "k_h", k_h)

    def __len__(self):
        return len(self.k_l)


def haar():
    """The orthonormal Haar pair: scaling [1,1]/sqrt(2), wavelet [1,-1]/sqrt(2)."""
    s = 1.0 / math.sqrt(2.0)
    return WaveletFilterPair(k_l=[s, s], k_h=[s, -s], name="haar")


@dataclass(frozen=True)
class QmfReport:
    """Residuals of the quadrature-mirror-filter conditions for a pair.

    mirror_residual:        max |k_h[n] - (-1)^n k_l[L-1-n]|
    normalization_residual: |sum k_l[n]^2 - 1|
    orthogonality_residual: |sum k_l[n] k_h[n]|
    """

    mirror_residual: float
    normalization_residual: float
    orthogonality_residual: float
    tol: float

    @property
    def passed(self):
        return (
            self.mirror_residual <= self.tol
            and self.normalization_residual <= self.tol
            and self.orthogonality_residual <= self.tol
        )

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"qmf {status} (tol {self.tol:g}): "
            f"mirror={self.mirror_residual:.3g} "
            f"normalization={self.normalization_residual:.3g} "
            f"orthogonality={self.orthogonality_residual:.3g}"
        )


def qmf_check(pair, tol=1e-6):
    """Check the quadrature mirror filter relationship for a pair.

    Verifies the alternating-sign reversal k_h[n] = (-1)^n * k_l[L-1-n],
    unit energy of the low-pass taps, and orthogonality of the two
    filters. Failure is reported, not raised.
    """
    k_l = pair.k_l.astype(np.float64)
    k_h = pair.k_h.astype(np.float64)
    n = np.arange(len(k_l))
    mirror = np.abs(k_h - ((-1.0) ** n) * k_l[::-1]).max()
    normalization = abs((k_l**2).sum() - 1.0)
    orthogonality = abs((k_l * k_h).sum())
    return QmfReport(
        mirror_residual=float(mirror),
        normalization_residual=float(normalization),
        orthogonality_residual=float(orthogonality),
        tol=float(tol),
    )


# --- single-axis analysis/synthesis over plain arrays ------------------------


def _analyze_axis(a, axis, taps):
    """Correlate-and-halve along one axis with periodic extension."""
    n = a.shape[axis]
    if n % 2 != 0:
        raise ArgumentError(f"extent {n} along axis {axis} must be even")
    if n < len(taps):
        raise ArgumentError(f"signal length {n} is shorter than the filter ({len(taps)})")
    g = np.moveaxis(a, axis, -1)
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(taps))[None, :]) % n
    out = g[..., idx] @ taps
    return np.moveaxis(out, -1, axis)


def _synthesize_axis(low, high, axis, pair):
    """Adjoint of `_analyze_axis` for an orthonormal pair (exact inverse)."""
    half = low.shape[axis]
    n = 2 * half
    lo = np.moveaxis(low, axis, -1)
    hi = np.moveaxis(high, axis, -1)
    out = np.zeros((*lo.shape[:-1], n), dtype=DTYPE)
    starts = 2 * np.arange(half)
    for m in range(len(pair)):
        # positions (2i+m) mod n are distinct for fixed m, so += is collision-free
        out[..., (starts + m) % n] += pair.k_l[m] * lo + pair.k_h[m] * hi
    return np.moveaxis(out, -1, axis)


# --- public transforms -------------------------------------------------------


def dwt1d(x, pair):
    """Split an even-length signal into half-length low and high bands."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"dwt1d expects a 1D signal, got shape {x.shape}")
    low = _analyze_axis(x.data, 0, pair.k_l)
    high = _analyze_axis(x.data, 0, pair.k_h)
    return Tensor(low), Tensor(high)


def idwt1d(low, high, pair):
    """Exact inverse of `dwt1d`."""
    low, high = as_tensor(low), as_tensor(high)
    if low.shape != high.shape or low.ndim != 1:
        raise ShapeError(
            f"bands must be 1D with equal shape, got {low.shape} and {high.shape}"
        )
    return Tensor(_synthesize_axis(low.data, high.data, 0, pair))


def _dwt2d_data(a, pair):
    """Separable single-level transform of [..., H, W] arrays."""
    if a.ndim < 2:
        raise ShapeError(f"need at least 2 spatial dimensions, got shape {a.shape}")
    row_low = _analyze_axis(a, -1, pair.k_l)
    row_high = _analyze_axis(a, -1, pair.k_h)
    ll = _analyze_axis(row_low, -2, pair.k_l)
    hl = _analyze_axis(row_low, -2, pair.k_h)
    lh = _analyze_axis(row_high, -2, pair.k_l)
    hh = _analyze_axis(row_high, -2, pair.k_h)
    return ll, lh, hl, hh


def _idwt2d_data(ll, lh, hl, hh, pair):
    row_low = _synthesize_axis(ll, hl, -2, pair)
    row_high = _synthesize_axis(lh, hh, -2, pair)
    return _synthesize_axis(row_low, row_high, -1, pair)


def dwt2d(x, pair):
    """One separable 2D level: (LL, LH, HL, HH), each at half resolution.

    Channels (and any other leading axes) transform independently.
    """
    x = as_tensor(x)
    subbands = _dwt2d_data(x.data, pair)
    return tuple(Tensor(s) for s in subbands)


def idwt2d(ll, lh, hl, hh, pair):
    """Exact inverse of `dwt2d`."""
    bands = [as_tensor(b) for b in (ll, lh, hl, hh)]
    shapes = {b.shape for b in bands}
    if len(shapes) != 1:
        raise ShapeError(f"subbands must share one shape, got {sorted(shapes)}")
    return Tensor(_idwt2d_data(*(b.data for b in bands), pair))


@dataclass(frozen=True)
class MraLevel:
    """The four subbands of one decomposition level."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def bands(self):
        return (("LL", self.ll), ("LH", self.lh), ("HL", self.hl), ("HH", self.hh))


@dataclass(frozen=True)
class MraDecomposition:
    """Per-level subband pyramid of an image.

    Level l (1-based) holds subbands of shape [C, H/2^l, W/2^l]. Each
    level's LL band is the input of the next, so the stored intermediate
    LL bands are redundant but kept for direct consumption.
    """

    levels: list[MraLevel] = field(default_factory=list)
    source_shape: tuple[int, ...] = ()

    def __len__(self):
        return len(self.levels)


def decompose(x, pair, levels):
    """Recursive multiresolution analysis of [C,H,W] (or [...,H,W]) data."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"input must have spatial axes, got shape {x.shape}")
    if not isinstance(levels, (int, np.integer)) or levels < 1:
        raise ArgumentError(f"levels must be a positive integer, got {levels!r}")
    h, w = x.shape[-2], x.shape[-1]
    for level in range(1, levels + 1):
        if h % 2 or w % 2:
            raise ArgumentError(
                f"level {level}: spatial extents {h}x{w} are not even; "
                f"input {x.shape[-2]}x{x.shape[-1]} supports fewer levels"
            )
        h //= 2
        w //= 2

    out = []
    current = x.data
    for _ in range(levels):
        ll, lh, hl, hh = _dwt2d_data(current, pair)
        out.append(MraLevel(ll=Tensor(ll), lh=Tensor(lh), hl=Tensor(hl), hh=Tensor(hh)))
        current = ll
    return MraDecomposition(levels=out, source_shape=tuple(x.shape))


def reconstruct(d, pair):
    """Invert `decompose`; exact up to float32 rounding.

    Validates the pyramid structure first and names the offending level
    and subband on mismatch, so truncated or hand-edited pyramids fail
    loudly instead of producing garbage.
    """
    if not d.levels:
        raise ShapeError("cannot reconstruct from an empty pyramid")
    if len(d.source_shape) < 2:
        raise ShapeError(f"malformed source shape {d.source_shape}")
    lead = tuple(d.source_shape[:-2])
    h, w = d.source_shape[-2], d.source_shape[-1]
    for level, entry in enumerate(d.levels, start=1):
        h //= 2
        w //= 2
        expected = (*lead, h, w)
        for band_name, band in entry.bands():
            if tuple(band.shape) != expected:
                raise ShapeError(
                    f"level {level} subband {band_name} has shape {tuple(band.shape)}, "
                    f"expected {expected}"
                )

    current = d.levels[-1].ll.data
    for entry in reversed(d.levels):
        current = _idwt2d_data(current, entry.lh.data, entry.hl.data, entry.hh.data, pair)
    return Tensor(current)
