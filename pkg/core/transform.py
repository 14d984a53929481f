"""
Transformations h of the external-model parameter with p×p′ gradients.

Indices are 0-based. For the ratio kind the first index is the denominator
and the rest are numerators (all other coordinates when omitted).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

from .exceptions import DegenerateTransformError, NumericError, SchemaError

logger = logging.getLogger(__name__)

IDENTITY = 'identity'
SUBSET = 'subset'
RATIO = 'ratio'
CUSTOM = 'custom'
KINDS = (IDENTITY, SUBSET, RATIO, CUSTOM)

DENOMINATOR_TOL = 1e-8
FD_STEP = 1e-6

# Reference coefficient when a ratio transform names none: the first slope.
DEFAULT_RATIO_DENOMINATOR = 1


@dataclass(frozen=True)
class Transformation:
    kind: str = IDENTITY
    indices: tuple = ()
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"Unknown transformation: {self.kind}. Supported: {', '.join(KINDS)}")
        object.__setattr__(self, 'indices', tuple(int(i) for i in self.indices))
        if any(i < 0 for i in self.indices):
            raise SchemaError(f"Transformation indices must be nonnegative: {self.indices}")
        if self.kind == SUBSET and not self.indices:
            raise SchemaError("subset transformation needs the kept coordinates")
        if self.kind == SUBSET and len(set(self.indices)) != len(self.indices):
            raise SchemaError(f"subset transformation repeats coordinates: {self.indices}")
        if self.kind == CUSTOM and self.fn is None:
            raise SchemaError("custom transformation needs a callable")

    @classmethod
    def identity(cls) -> 'Transformation':
        return cls(IDENTITY)

    @classmethod
    def drop_intercept(cls, p: int) -> 'Transformation':
        return cls(SUBSET, tuple(range(1, p)))

    @property
    def denominator(self) -> int:
        return self.indices[0] if self.indices else DEFAULT_RATIO_DENOMINATOR

    def numerators(self, p: int) -> tuple:
        if len(self.indices) > 1:
            return self.indices[1:]
        return tuple(j for j in range(p) if j != self.denominator)

    def output_dim(self, p: int) -> int:
        if self.kind == IDENTITY:
            return p
        if self.kind == SUBSET:
            return len(self.indices)
        if self.kind == RATIO:
            return len(self.numerators(p))
        return int(np.atleast_1d(self.fn(np.zeros(p))).shape[0])

    def declaration(self) -> tuple:
        """(kind, indices) as written to summary files"""
        return self.kind, self.indices

    def same_declaration(self, other: 'Transformation') -> bool:
        if self.kind == CUSTOM or other.kind == CUSTOM:
            return self is other or (self.kind == other.kind and self.fn is other.fn)
        return self.declaration() == other.declaration()


def _validate(t: Transformation, theta) -> NDArray[np.float64]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise SchemaError(f"theta must be a vector, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise NumericError("theta contains non-finite entries")
    p = theta.shape[0]
    if t.kind == SUBSET and max(t.indices) >= p:
        raise SchemaError(f"subset index out of range for p = {p}: {t.indices}")
    if t.kind == RATIO:
        used = (t.denominator,) + t.numerators(p)
        if max(used) >= p:
            raise SchemaError(f"ratio index out of range for p = {p}: {used}")
        if abs(theta[t.denominator]) < DENOMINATOR_TOL:
            raise DegenerateTransformError(
                f"Ratio denominator theta[{t.denominator}] = {theta[t.denominator]:.3e} is too close to zero"
            )
    return theta


def apply(t: Transformation, theta) -> NDArray[np.float64]:
    """
    Evaluate h(θ)

    Raises:
        DegenerateTransformError: Ratio denominator below 1e-8 in magnitude
        SchemaError: Dimension or index mismatch
    """
    theta = _validate(t, theta)
    if t.kind == IDENTITY:
        return theta.copy()
    if t.kind == SUBSET:
        return theta[list(t.indices)]
    if t.kind == RATIO:
        return theta[list(t.numerators(theta.shape[0]))] / theta[t.denominator]
    return np.atleast_1d(np.asarray(t.fn(theta), dtype=np.float64))


def finite_difference_gradient(fn: Callable, theta: NDArray[np.float64]) -> NDArray[np.float64]:
    """Central-difference p×p′ gradient with step 1e-6·(1 + |θⱼ|)"""
    theta = np.asarray(theta, dtype=np.float64)
    base = np.atleast_1d(fn(theta))
    grad = np.zeros((theta.shape[0], base.shape[0]))
    for j in range(theta.shape[0]):
        step = FD_STEP * (1.0 + abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += step
        down[j] -= step
        grad[j] = (np.atleast_1d(fn(up)) - np.atleast_1d(fn(down))) / (2.0 * step)
    return grad


def gradient(t: Transformation, theta) -> NDArray[np.float64]:
    """
    ∇h(θ) with one column per output coordinate (p×p′)

    Raises:
        DegenerateTransformError: Ratio denominator below 1e-8 in magnitude
    """
    theta = _validate(t, theta)
    p = theta.shape[0]
    if t.kind == IDENTITY:
        return np.eye(p)
    if t.kind == SUBSET:
        return np.eye(p)[:, list(t.indices)]
    if t.kind == RATIO:
        den = t.denominator
        nums = t.numerators(p)
        grad = np.zeros((p, len(nums)))
        for col, j in enumerate(nums):
            grad[j, col] += 1.0 / theta[den]
            grad[den, col] -= theta[j] / theta[den] ** 2
        return grad
    return finite_difference_gradient(lambda v: apply(t, v), theta)


def delta_covariance(t: Transformation, theta, cov) -> NDArray[np.float64]:
    """∇hᵀ·cov·∇h, symmetrized"""
    grad = gradient(t, theta)
    out = grad.T @ np.asarray(cov, dtype=np.float64) @ grad
    return 0.5 * (out + out.T)
