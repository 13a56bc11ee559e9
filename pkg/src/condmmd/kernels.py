"""Positive-definite kernels, Gram matrices and the median heuristic.

Kernels are small immutable descriptions (``KernelSpec`` subclasses). They
carry no data; :func:`gram` evaluates them on arrays of points of shape
``(n, d)``. A Gaussian kernel may be declared with ``bandwidth="median"`` and
resolved against data later with :func:`resolve`.

The Gaussian kernel is parametrised by an inverse squared length scale ``h``::

    k(x, x') = exp(-h/2 * ||x - x'||^2)

and the median heuristic sets ``h = 1 / median{||x_i - x_j||^2 : i < j}``,
so two points at the median distance have similarity ``exp(-1/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from ._validation import as_point, as_points, check_same_dim
from .exceptions import DegenerateDataError, InputError

__all__ = [
    "KernelSpec",
    "Gaussian",
    "Linear",
    "Polynomial",
    "KroneckerDelta",
    "TensorProduct",
    "eval_kernel",
    "gram",
    "median_heuristic_bandwidth",
    "resolve",
    "is_resolved",
    "kernel_from_config",
    "kernel_to_config",
]

MEDIAN = "median"


class KernelSpec:
    """Base class of all kernel descriptions."""

    def _gram(self, A, B):  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def normalized(self):
        """True when ``k(x, x) = 1`` for every ``x``."""
        return False


@dataclass(frozen=True)
class Gaussian(KernelSpec):
    bandwidth: Union[float, str] = MEDIAN

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != MEDIAN:
                raise InputError(f"unknown bandwidth rule {self.bandwidth!r}")
            return
        h = float(self.bandwidth)
        if not np.isfinite(h) or h <= 0:
            raise InputError(f"Gaussian bandwidth must be > 0, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", h)

    def _gram(self, A, B):
        if self.bandwidth == MEDIAN:
            raise InputError("Gaussian bandwidth 'median' must be resolved against data first")
        return np.exp(-0.5 * self.bandwidth * cdist(A, B, "sqeuclidean"))

    @property
    def normalized(self):
        return True


@dataclass(frozen=True)
class Linear(KernelSpec):
    def _gram(self, A, B):
        return A @ B.T


@dataclass(frozen=True)
class Polynomial(KernelSpec):
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise InputError(f"polynomial degree must be an integer >= 1, got {self.degree!r}")
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "offset", float(self.offset))

    def _gram(self, A, B):
        return (A @ B.T + self.offset) ** self.degree


@dataclass(frozen=True)
class KroneckerDelta(KernelSpec):
    """``k(x, x') = 1{x = x'}``; categorical covariates as integer codes."""

    def _gram(self, A, B):
        return np.all(A[:, None, :] == B[None, :, :], axis=-1).astype(float)

    @property
    def normalized(self):
        return True


@dataclass(frozen=True)
class TensorProduct(KernelSpec):
    """Product kernel on concatenated points ``(x, y)``.

    The first ``split`` coordinates go to ``left``, the remainder to ``right``.
    """

    left: KernelSpec
    right: KernelSpec
    split: int = 1

    def __post_init__(self):
        if not isinstance(self.left, KernelSpec) or not isinstance(self.right, KernelSpec):
            raise InputError("TensorProduct operands must be KernelSpec instances")
        if int(self.split) != self.split or self.split < 1:
            raise InputError(f"split must be a positive integer, got {self.split!r}")

    def _gram(self, A, B):
        s = self.split
        if A.shape[1] <= s:
            raise InputError(
                f"tensor-product points need more than {s} coordinates, got {A.shape[1]}"
            )
        return self.left._gram(A[:, :s], B[:, :s]) * self.right._gram(A[:, s:], B[:, s:])

    @property
    def normalized(self):
        return self.left.normalized and self.right.normalized


def gram(spec, rows, cols=None):
    """Gram matrix with entries ``k(rows[i], cols[j])``.

    ``cols=None`` means ``cols = rows``; the result is then exactly symmetric.
    """
    A = as_points(rows, "rows")
    if cols is None:
        K = spec._gram(A, A)
        # kill round-off asymmetry from BLAS
        return 0.5 * (K + K.T)
    B = as_points(cols, "cols")
    check_same_dim(A, B)
    return spec._gram(A, B)


def eval_kernel(spec, x, x2):
    """Evaluate ``k(x, x2)`` for two single points."""
    a = as_point(x, "x")
    b = as_point(x2, "x2")
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(spec._gram(a[None, :], b[None, :])[0, 0])


def median_heuristic_bandwidth(points):
    """Return ``1 / median`` of the pairwise squared distances.

    The median of an even number of distances is the mean of the two central
    values (``numpy.median``).
    """
    P = as_points(points, "points")
    if P.shape[0] < 2:
        raise InputError("median heuristic needs at least two points")
    med = float(np.median(pdist(P, "sqeuclidean")))
    if med <= 0.0:
        raise DegenerateDataError(
            "median pairwise distance is zero; cannot set a Gaussian bandwidth"
        )
    return 1.0 / med


def is_resolved(spec):
    if isinstance(spec, Gaussian):
        return spec.bandwidth != MEDIAN
    if isinstance(spec, TensorProduct):
        return is_resolved(spec.left) and is_resolved(spec.right)
    return True


def resolve(spec, points):
    """Replace ``bandwidth="median"`` by the median heuristic on ``points``."""
    if isinstance(spec, Gaussian) and spec.bandwidth == MEDIAN:
        return Gaussian(median_heuristic_bandwidth(points))
    if isinstance(spec, TensorProduct) and not is_resolved(spec):
        P = as_points(points, "points")
        s = spec.split
        return TensorProduct(resolve(spec.left, P[:, :s]), resolve(spec.right, P[:, s:]), s)
    return spec


_ALIASES = {
    "gaussian": "gaussian",
    "rbf": "gaussian",
    "linear": "linear",
    "polynomial": "polynomial",
    "poly": "polynomial",
    "delta": "delta",
    "kronecker_delta": "delta",
    "tensor_product": "tensor_product",
}


def kernel_from_config(cfg):
    """Build a kernel from ``{"type": "gaussian", "bandwidth": 0.5}`` style values.

    A bare string (``"linear"``) is accepted as shorthand for ``{"type": ...}``.
    """
    if isinstance(cfg, KernelSpec):
        return cfg
    if isinstance(cfg, str):
        cfg = {"type": cfg}
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise InputError(f"kernel config must be a mapping with a 'type' key, got {cfg!r}")
    kind = _ALIASES.get(str(cfg["type"]).lower())
    extra = set(cfg) - {"type"}
    if kind == "gaussian":
        bw = cfg.get("bandwidth", MEDIAN)
        allowed = {"bandwidth"}
        spec = Gaussian(bw if isinstance(bw, str) else float(bw))
    elif kind == "linear":
        allowed = set()
        spec = Linear()
    elif kind == "polynomial":
        allowed = {"degree", "offset"}
        spec = Polynomial(cfg.get("degree", 2), cfg.get("offset", 1.0))
    elif kind == "delta":
        allowed = set()
        spec = KroneckerDelta()
    elif kind == "tensor_product":
        allowed = {"left", "right", "split"}
        spec = TensorProduct(
            kernel_from_config(cfg["left"]),
            kernel_from_config(cfg["right"]),
            int(cfg.get("split", 1)),
        )
    else:
        raise InputError(f"unknown kernel type {cfg['type']!r}")
    if extra - allowed:
        raise InputError(f"unexpected keys for {kind} kernel: {sorted(extra - allowed)}")
    return spec


def kernel_to_config(spec):
    if isinstance(spec, Gaussian):
        return {"type": "gaussian", "bandwidth": spec.bandwidth}
    if isinstance(spec, Linear):
        return {"type": "linear"}
    if isinstance(spec, Polynomial):
        return {"type": "polynomial", "degree": spec.degree, "offset": spec.offset}
    if isinstance(spec, KroneckerDelta):
        return {"type": "delta"}
    if isinstance(spec, TensorProduct):
        return {
            "type": "tensor_product",
            "left": kernel_to_config(spec.left),
            "right": kernel_to_config(spec.right),
            "split": spec.split,
        }
    raise InputError(f"cannot serialise {spec!r}")
