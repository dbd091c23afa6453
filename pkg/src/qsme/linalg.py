"""Dense complex linear algebra for operators on a finite-dimensional Hilbert space.

States are plain numpy arrays: kets are complex vectors of shape ``(d,)``
(optionally batched ``(..., d)``), operators are complex matrices of shape
``(d, d)``.  Everything here treats its inputs as immutable and returns fresh
arrays, so values can be shared freely across concurrent trajectory workers.
"""

from __future__ import annotations

import numpy as np

# Tolerances used across the package.
HERMITICITY_TOL = 1e-12
DEFAULT_POS_TOL = 1e-9

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def dag(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose, batched over leading axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def hermitianize(a: np.ndarray) -> np.ndarray:
    """Return (A + A†)/2.

    Applied after any arithmetic meant to produce a Hermitian result;
    floating-point drift otherwise accumulates across SDE steps.
    """
    return 0.5 * (a + dag(a))


def hs_norm(a: np.ndarray) -> float | np.ndarray:
    """Hilbert-Schmidt (Frobenius) norm sqrt(tr A†A)."""
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=(-2, -1)))


def operator_norm(a: np.ndarray) -> float:
    """Largest singular value."""
    return float(np.linalg.norm(a, 2))


def trace_norm(a: np.ndarray) -> float:
    """Sum of singular values."""
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


def norms(a: np.ndarray) -> tuple[float, float, float]:
    """(operator norm, Hilbert-Schmidt norm, trace norm); always ordered op <= hs <= tr."""
    s = np.linalg.svd(a, compute_uv=False)
    return float(s.max(initial=0.0)), float(np.sqrt(np.sum(s**2))), float(np.sum(s))


def coupling_norm(ls: np.ndarray) -> float:
    """The channel norm used by every growth estimate: sum of per-channel operator norms."""
    return float(sum(operator_norm(l) for l in ls))


def is_hermitian(a: np.ndarray, tol: float = HERMITICITY_TOL) -> bool:
    return hs_norm(a - dag(a)) <= tol * max(1.0, float(hs_norm(a)))


def require_hermitian(a: np.ndarray, tol: float = HERMITICITY_TOL, name: str = "operator") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if not is_hermitian(a, tol):
        raise ValueError(f"{name} is not Hermitian within tolerance {tol}")
    return a


def require_ket(x: np.ndarray, name: str = "ket") -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.shape[-1] < 1:
        raise ValueError(f"{name} must have dimension >= 1")
    if not np.all(np.isfinite(x.view(float))):
        raise ValueError(f"{name} has non-finite entries")
    return x


def require_density(
    rho: np.ndarray,
    pos_tol: float = DEFAULT_POS_TOL,
    trace_tol: float = 1e-10,
    name: str = "rho",
) -> np.ndarray:
    """Validate Hermitian, positive within pos_tol, unit trace within trace_tol."""
    rho = require_hermitian(rho, name=name)
    tr = float(np.trace(rho).real)
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"{name} trace != 1 (got {tr!r})")
    wmin = float(np.linalg.eigvalsh(rho)[0])
    if wmin < -pos_tol:
        raise ValueError(f"{name} has eigenvalue {wmin!r} below -{pos_tol}")
    return rho


def bracket(a: np.ndarray, b: np.ndarray, kind: str = "commutator") -> np.ndarray:
    """AB - BA (``commutator``) or AB + BA (``anticommutator``)."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if kind == "commutator":
        return a @ b - b @ a
    if kind == "anticommutator":
        return a @ b + b @ a
    raise ValueError(f"unknown bracket kind {kind!r}")


def hermitian_spectrum(a: np.ndarray, tol: float = HERMITICITY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending, real) and orthonormal eigenvectors (columns) of a Hermitian matrix.

    For degenerate eigenvalues any orthonormal basis of the eigenspace may be
    returned; callers must not rely on the particular choice.
    """
    a = require_hermitian(a, tol)
    w, v = np.linalg.eigh(a)
    return w, v


def positive_parts(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spectral split A = A+ - A- with both parts positive semidefinite."""
    w, v = hermitian_spectrum(a)
    plus = hermitianize((v * np.maximum(w, 0.0)) @ dag(v))
    minus = hermitianize((v * np.maximum(-w, 0.0)) @ dag(v))
    return plus, minus


def evolution_factor(h: np.ndarray, t: float) -> np.ndarray:
    """Unitary exp(-iHt) via spectral decomposition of the Hermitian H."""
    w, v = hermitian_spectrum(h)
    return (v * np.exp(-1j * w * t)) @ dag(v)


def dress(l: np.ndarray, h: np.ndarray, t: float) -> np.ndarray:
    """Conjugate a coupling operator into the interaction picture: exp(iHt) L exp(-iHt)."""
    if l.shape[-1] != h.shape[-1]:
        raise ValueError(f"dimension mismatch: {l.shape} vs {h.shape}")
    u = evolution_factor(h, t)
    return dag(u) @ l @ u


class Propagator:
    """Cached spectral decomposition of a Hamiltonian.

    Interaction-picture stepping needs exp(±iHt) and dressed couplings fresh
    at every step; the eigendecomposition is done once here and each call is
    then O(d^3) matrix products, which is fine at desk scale.
    """

    def __init__(self, h: np.ndarray):
        self.h = require_hermitian(h, name="H")
        self.eigenvalues, self.eigenvectors = np.linalg.eigh(self.h)

    def factor(self, t: float) -> np.ndarray:
        """exp(-iHt)."""
        v = self.eigenvectors
        return (v * np.exp(-1j * self.eigenvalues * t)) @ dag(v)

    def dress(self, ls: np.ndarray, t: float) -> np.ndarray:
        """exp(iHt) L exp(-iHt) for a stack of channel operators of shape (n, d, d)."""
        u = self.factor(t)
        return dag(u)[None] @ ls @ u[None] if ls.ndim == 3 else dag(u) @ ls @ u


def random_ket(d: int, rng: np.random.Generator, unit: bool = True) -> np.ndarray:
    x = rng.normal(size=d) + 1j * rng.normal(size=d)
    return x / np.linalg.norm(x) if unit else x


def random_operator(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return scale * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2 * d)


def random_hermitian(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return hermitianize(random_operator(d, rng, scale * np.sqrt(2)))


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density operator; rank-limited when ``rank`` is given."""
    r = d if rank is None else min(rank, d)
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    rho = g @ dag(g)
    return hermitianize(rho / np.trace(rho).real)
