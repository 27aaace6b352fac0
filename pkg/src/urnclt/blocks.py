"""Block descriptors for the real Jordan form of a replacement matrix.

A real eigenvalue ``lam`` of multiplicity ``d`` contributes a ``d x d`` block
``lam*I + F`` (``F`` has ones on the superdiagonal).  A complex pair
``lr +/- i*lc`` contributes a ``2d x 2d`` block ``lr*I + lc*C + F`` where
``C`` repeats ``[[0, 1], [-1, 0]]`` along the diagonal and ``F`` carries
``2 x 2`` identities on the block superdiagonal.  Combination-matrix columns
of a complex block come in (real part, imaginary part) pairs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InputError, SingularCombination

_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


class BlockKind(str, enum.Enum):
    REAL = "real"
    COMPLEX = "complex"


def shift_matrix(d: int, k: int = 1) -> np.ndarray:
    """``d x d`` matrix with ones on the ``k``-th superdiagonal."""
    return np.eye(d, k=k)


def rotation_generator(d: int) -> np.ndarray:
    """Block-diagonal ``C`` of size ``2d``."""
    return np.kron(np.eye(d), _ROT)


def nilpotent_generator(kind: BlockKind, d: int) -> np.ndarray:
    """Nilpotent part ``F`` of a block of the given kind and multiplicity."""
    if BlockKind(kind) is BlockKind.REAL:
        return shift_matrix(d)
    return np.kron(shift_matrix(d), np.eye(2))


def complex_to_real(z: complex, kind: BlockKind) -> np.ndarray:
    """Real matrix of the scalar ``z``: ``[[z]]`` or ``Re z I + Im z C``."""
    if BlockKind(kind) is BlockKind.REAL:
        return np.array([[z.real]])
    return np.array([[z.real, z.imag], [-z.imag, z.real]])


def poly_to_matrix(coef: np.ndarray, kind: BlockKind) -> np.ndarray:
    """Materialize ``sum_k coef[k] F^k`` with complex scalars mapped through ``C``."""
    d = len(coef)
    size = d if BlockKind(kind) is BlockKind.REAL else 2 * d
    out = np.zeros((size, size))
    for k, c in enumerate(coef):
        out += np.kron(shift_matrix(d, k), complex_to_real(complex(c), kind))
    return out


@dataclass(frozen=True)
class JordanBlockSpec:
    """One real Jordan or rotation block.

    ``columns`` are the (contiguous) combination-matrix column indices the
    block acts on.
    """

    kind: BlockKind
    lambda_r: float
    lambda_c: float
    d: int
    columns: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", BlockKind(self.kind))
        object.__setattr__(self, "lambda_r", float(self.lambda_r))
        object.__setattr__(self, "lambda_c", float(self.lambda_c))
        object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise InputError(f"block multiplicity d must be a positive integer, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))
        if not np.isfinite(self.lambda_r) or not abs(self.lambda_r) < 1.0:
            raise InputError(f"|lambda_r| < 1 required, got {self.lambda_r}")
        if self.kind is BlockKind.REAL and self.lambda_c != 0.0:
            raise InputError("real blocks must have lambda_c = 0")
        if self.kind is BlockKind.COMPLEX and not self.lambda_c > 0.0:
            raise InputError("complex blocks must have lambda_c > 0")
        cols = self.columns
        if len(cols) != self.width:
            raise InputError(f"block needs {self.width} columns, got {len(cols)}")
        if any(b - a != 1 for a, b in zip(cols, cols[1:])):
            raise InputError(f"block columns must be contiguous, got {cols}")

    @property
    def width(self) -> int:
        return self.d if self.kind is BlockKind.REAL else 2 * self.d

    @property
    def eigenvalue(self) -> complex:
        return complex(self.lambda_r, self.lambda_c)

    def nilpotent(self) -> np.ndarray:
        return nilpotent_generator(self.kind, self.d)

    def rotation(self) -> np.ndarray:
        if self.kind is BlockKind.REAL:
            return np.zeros((self.d, self.d))
        return rotation_generator(self.d)

    def matrix(self) -> np.ndarray:
        """The block ``lam_r I + lam_c C + F``."""
        return self.lambda_r * np.eye(self.width) + self.lambda_c * self.rotation() + self.nilpotent()

    def with_columns(self, columns) -> "JordanBlockSpec":
        return JordanBlockSpec(self.kind, self.lambda_r, self.lambda_c, self.d, tuple(columns))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "lambda_r": self.lambda_r,
            "lambda_c": self.lambda_c,
            "d": self.d,
            "columns": list(self.columns),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "JordanBlockSpec":
        return cls(
            kind=BlockKind(data["kind"]),
            lambda_r=data["lambda_r"],
            lambda_c=data.get("lambda_c", 0.0),
            d=data.get("d", 1),
            columns=tuple(data["columns"]),
        )


def block_diagonal(mats) -> np.ndarray:
    mats = [np.atleast_2d(m) for m in mats]
    size = sum(m.shape[0] for m in mats)
    out = np.zeros((size, size))
    i = 0
    for m in mats:
        k = m.shape[0]
        out[i:i + k, i:i + k] = m
        i += k
    return out


@dataclass(frozen=True, eq=False)
class SpectralSpec:
    """Combination matrix plus the block structure of ``M^{-1} R M``.

    Column 0 of ``combination`` is the all-ones vector; the remaining columns
    are partitioned by ``blocks``.
    """

    combination: np.ndarray
    blocks: tuple[JordanBlockSpec, ...]

    def __post_init__(self):
        M = np.array(self.combination, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
            raise InputError(f"combination must be a square matrix, got shape {M.shape}")
        if not np.all(np.isfinite(M)):
            raise InputError("combination has non-finite entries")
        K = M.shape[0]
        if not np.allclose(M[:, 0], M[0, 0]) or M[0, 0] == 0.0:
            raise InputError("combination column 0 must be a nonzero constant vector")
        M[:, 0] = 1.0
        blocks = tuple(
            b if isinstance(b, JordanBlockSpec) else JordanBlockSpec.from_dict(b)
            for b in self.blocks
        )
        used = sorted(c for b in blocks for c in b.columns)
        if used != list(range(1, K)):
            raise InputError(f"block columns must partition 1..{K - 1}, got {used}")
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularCombination(f"combination matrix is singular (condition {cond:.3g})")
        M.setflags(write=False)
        object.__setattr__(self, "combination", M)
        object.__setattr__(self, "blocks", blocks)

    @property
    def K(self) -> int:
        return self.combination.shape[0]

    def jordan_matrix(self) -> np.ndarray:
        """``J`` with ``M^{-1} R M = J`` (columns in the combination order)."""
        J = np.zeros((self.K, self.K))
        J[0, 0] = 1.0
        for b in self.blocks:
            idx = np.array(b.columns)
            J[np.ix_(idx, idx)] = b.matrix()
        return J

    def reconstruct(self) -> np.ndarray:
        """``M J M^{-1}``."""
        M = self.combination
        return np.linalg.solve(M.T, (M @ self.jordan_matrix()).T).T

    def columns_of(self, block: JordanBlockSpec) -> np.ndarray:
        return self.combination[:, list(block.columns)]

    def to_dict(self) -> dict:
        return {
            "combination": self.combination.tolist(),
            "blocks": [b.to_dict() for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpectralSpec":
        return cls(
            combination=np.asarray(data["combination"], dtype=float),
            blocks=tuple(JordanBlockSpec.from_dict(b) for b in data["blocks"]),
        )
