"""Euler-Maruyama stepping for the pure-state filtering equations.

Two equivalent descriptions are implemented:

* the linear equation for an unnormalized state chi driven by the output
  process Y, whose squared norm carries the observation likelihood, and
* the trace-preserving nonlinear equation for the normalized state phi driven
  by the innovation process B.

All steppers are pure functions of (state, params, increments) and broadcast
over leading batch axes, so Monte Carlo runs are vectorized over trajectories.
States evolved in the interaction picture are mapped back to the Schroedinger
frame whenever a driver records them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrajectoryAbort
from .linalg import Propagator, dag, require_hermitian

PICTURES = ("schroedinger", "interaction")


def _mv(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix times batched vector: (d,d) @ (..., d)."""
    return np.einsum("ij,...j->...i", a, x)


def _channel_mv(ls: np.ndarray, x: np.ndarray) -> np.ndarray:
    """All channel operators applied to a batched vector, result (n, ..., d)."""
    return np.einsum("nij,...j->n...i", ls, x)


@dataclass
class PureFilterParams:
    """Hamiltonian, coupling channels, step size and picture for the pure filters.

    ``ls`` is a stack of shape (n, d, d).  In the interaction picture the
    Hamiltonian term is dropped and every channel operator is dressed with
    exp(iHt) ... exp(-iHt) at each step, from a spectral decomposition of H
    cached at construction.
    """

    h: np.ndarray
    ls: np.ndarray
    dt: float
    picture: str = "schroedinger"
    _prop: Propagator = field(init=False, repr=False, default=None)
    _damping: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.h = require_hermitian(np.asarray(self.h, dtype=complex), name="H")
        ls = np.asarray(self.ls, dtype=complex)
        if ls.ndim == 2:
            ls = ls[None]
        if ls.ndim != 3 or ls.shape[-1] != ls.shape[-2] or ls.shape[-1] != self.h.shape[-1]:
            raise ValueError(f"channel stack shape {ls.shape} incompatible with H {self.h.shape}")
        self.ls = ls
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.picture not in PICTURES:
            raise ValueError(f"picture must be one of {PICTURES}")
        self._damping = 0.5 * sum(dag(l) @ l for l in ls)
        self._prop = Propagator(self.h)

    @property
    def dim(self) -> int:
        return self.h.shape[-1]

    @property
    def n_channels(self) -> int:
        return self.ls.shape[0]

    def channel_ops(self, t: float) -> np.ndarray:
        if self.picture == "schroedinger" or t == 0.0:
            return self.ls
        return self._prop.dress(self.ls, t)

    def damping(self, t: float) -> np.ndarray:
        """(1/2) sum_j L_j† L_j, dressed when in the interaction picture."""
        if self.picture == "schroedinger" or t == 0.0:
            return self._damping
        u = self._prop.factor(t)
        return dag(u) @ self._damping @ u

    def to_schroedinger_frame(self, state: np.ndarray, t: float) -> np.ndarray:
        """Map an interaction-picture ket back: chi = exp(-iHt) xi."""
        if self.picture == "schroedinger" or t == 0.0:
            return state
        return _mv(self._prop.factor(t), state)


def expectation(op: np.ndarray, phi: np.ndarray) -> complex | np.ndarray:
    """Value of an operator in a (not necessarily normalized) pure state.

    (phi, A phi) / (phi, phi); real for Hermitian A, invariant under scaling.
    """
    nrm2 = np.sum(np.abs(phi) ** 2, axis=-1)
    if np.any(nrm2 == 0.0):
        raise ValueError("expectation undefined for the zero vector")
    val = np.einsum("...i,ij,...j->...", np.conj(phi), op, phi) / nrm2
    return complex(val) if val.ndim == 0 else val


def _symmetric_expectations(ls_sym: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """<L_Sj> for every channel, shape (..., n); real by hermiticity."""
    nrm2 = np.sum(np.abs(phi) ** 2, axis=-1)
    vals = np.einsum("...i,nij,...j->...n", np.conj(phi), ls_sym, phi).real
    return vals / nrm2[..., None]


def linear_pure_step(
    chi: np.ndarray, p: PureFilterParams, dy: np.ndarray, t: float = 0.0
) -> np.ndarray:
    """One Euler-Maruyama update of the linear filtering equation.

    d chi = -[iH chi + (1/2) sum_j L_j† L_j chi] dt + sum_j L_j chi dY_j;
    in the interaction picture the -iH term is dropped and the channels are
    dressed at time ``t``.
    """
    chi = np.asarray(chi, dtype=complex)
    dy = np.asarray(dy, dtype=float)
    ls_t = p.channel_ops(t)
    drift = -_mv(p.damping(t), chi)
    if p.picture == "schroedinger":
        drift = drift - 1j * _mv(p.h, chi)
    noise = np.einsum("n...i,...n->...i", _channel_mv(ls_t, chi), dy)
    return chi + p.dt * drift + noise


def nonlinear_pure_step(
    phi: np.ndarray,
    p: PureFilterParams,
    db: np.ndarray,
    t: float = 0.0,
    renormalize: bool = True,
) -> np.ndarray:
    """One Euler update of the trace-preserving nonlinear filtering equation.

    d phi = -[i(H - sum_j <L_Sj> L_Aj) + (1/2) sum_j (L_j - <L_Sj>)†(L_j - <L_Sj>)] phi dt
            + sum_j (L_j - <L_Sj>) phi dB_j,

    with <L_Sj> the normalized expectation of the symmetric part of L_j.  The
    continuous equation preserves the norm but Euler does not, so the result
    is renormalized by default; pass ``renormalize=False`` to observe the raw
    per-step norm defect.
    """
    phi = np.asarray(phi, dtype=complex)
    if np.any(np.sum(np.abs(phi) ** 2, axis=-1) == 0.0):
        raise ValueError("nonlinear step undefined for the zero vector")
    db = np.asarray(db, dtype=float)
    ls_t = p.channel_ops(t)
    ls_sym = 0.5 * (ls_t + dag(ls_t))
    ls_asym = (ls_t - dag(ls_t)) / 2j
    a = _symmetric_expectations(ls_sym, phi)  # (..., n)

    shifted = _channel_mv(ls_t, phi) - np.moveaxis(a, -1, 0)[..., None] * phi  # (n, ..., d)
    quad = np.einsum("nji,n...j->n...i", np.conj(ls_t), shifted) - (
        np.moveaxis(a, -1, 0)[..., None] * shifted
    )
    drift = -0.5 * quad.sum(axis=0)
    drift = drift + 1j * np.einsum("n...i,...n->...i", _channel_mv(ls_asym, phi), a)
    if p.picture == "schroedinger":
        drift = drift - 1j * _mv(p.h, phi)
    noise = np.einsum("n...i,...n->...i", shifted, db)

    out = phi + p.dt * drift + noise
    if renormalize:
        out = out / np.linalg.norm(out, axis=-1, keepdims=True)
    return out


def norm_process_step(
    value: float | np.ndarray,
    kind: str,
    compensators: np.ndarray,
    incr: np.ndarray,
    dt: float | None = None,
) -> float | np.ndarray:
    """Euler update of the scalar norm processes of the linear equation.

    ``square_norm``:          d N = 2 N sum_j <L_Sj> dY_j     (incr = output dY)
    ``inverse_square_norm``:  d M = -2 M sum_j <L_Sj> dB_j    (incr = innovation dB)

    Both SDEs are driftless; ``dt`` is accepted for signature symmetry with
    the other steppers and unused.  ``compensators`` holds the per-channel
    normalized expectations <L_Sj> at the current state.
    """
    value = np.asarray(value, dtype=float)
    if np.any(value <= 0.0):
        raise ValueError("norm process value must be positive")
    kick = 2.0 * np.sum(np.asarray(compensators) * np.asarray(incr), axis=-1)
    if kind == "square_norm":
        out = value * (1.0 + kick)
    elif kind == "inverse_square_norm":
        out = value * (1.0 - kick)
    else:
        raise ValueError(f"unknown norm process kind {kind!r}")
    if np.any(out <= 0.0):
        raise TrajectoryAbort(f"{kind} process driven nonpositive")
    return float(out) if out.ndim == 0 else out


def mean_map(m: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """The map f(psi) = <M>_psi psi whose derivative the filtering drift bounds rely on."""
    return expectation(m, psi) * psi


def jacobian_norm_estimate(m: np.ndarray, psi: np.ndarray, step: float = 1e-6) -> float:
    """Operator norm of the real-linear finite-difference Jacobian of mean_map at psi.

    psi and its conjugate are treated as independent real directions: the map
    C^d -> C^d is flattened to R^{2d} -> R^{2d} and differentiated centrally.
    """
    psi = np.asarray(psi, dtype=complex)
    d = psi.shape[-1]
    h = step * max(1.0, float(np.linalg.norm(psi)))

    def as_real(z):
        return np.concatenate([z.real, z.imag])

    jac = np.empty((2 * d, 2 * d))
    for k in range(2 * d):
        direction = np.zeros(d, dtype=complex)
        direction[k % d] = 1.0 if k < d else 1.0j
        fp = mean_map(m, psi + h * direction)
        fm = mean_map(m, psi - h * direction)
        jac[:, k] = as_real((fp - fm) / (2.0 * h))
    return float(np.linalg.norm(jac, 2))


def run_linear(
    chi0: np.ndarray,
    p: PureFilterParams,
    increments: np.ndarray,
    innovation_driven: bool = False,
    checkpoint_stride: int = 1,
) -> np.ndarray:
    """Drive the linear stepper along given increments; states at checkpoints.

    ``increments`` has shape (..., steps, n).  With ``innovation_driven`` the
    given increments are innovations dB and the output is synthesized per step
    as dY_j = dB_j + <L_j + L_j†> dt, i.e. the linear equation under the
    physical measure.  Returns an array of shape (K+1, ..., d) of states in
    the Schroedinger frame, where K = steps // checkpoint_stride.
    """
    increments = np.asarray(increments, dtype=float)
    steps = increments.shape[-2]
    if steps % checkpoint_stride:
        raise ValueError("step count must be a multiple of checkpoint_stride")
    chi = np.broadcast_to(
        np.asarray(chi0, dtype=complex), increments.shape[:-2] + (p.dim,)
    ).copy()
    out = np.empty((steps // checkpoint_stride + 1,) + chi.shape, dtype=complex)
    out[0] = chi
    for k in range(steps):
        t = k * p.dt
        dy = increments[..., k, :]
        if innovation_driven:
            ls_t = p.channel_ops(t)
            comp = 2.0 * _symmetric_expectations(0.5 * (ls_t + dag(ls_t)), chi)
            dy = dy + comp * p.dt
        chi = linear_pure_step(chi, p, dy, t)
        if (k + 1) % checkpoint_stride == 0:
            out[(k + 1) // checkpoint_stride] = p.to_schroedinger_frame(chi, (k + 1) * p.dt)
    return out


def run_nonlinear(
    phi0: np.ndarray,
    p: PureFilterParams,
    increments: np.ndarray,
    checkpoint_stride: int = 1,
    renormalize: bool = True,
) -> np.ndarray:
    """Drive the nonlinear stepper along innovation increments dB; states at checkpoints."""
    increments = np.asarray(increments, dtype=float)
    steps = increments.shape[-2]
    if steps % checkpoint_stride:
        raise ValueError("step count must be a multiple of checkpoint_stride")
    phi = np.broadcast_to(
        np.asarray(phi0, dtype=complex), increments.shape[:-2] + (p.dim,)
    ).copy()
    out = np.empty((steps // checkpoint_stride + 1,) + phi.shape, dtype=complex)
    out[0] = phi
    for k in range(steps):
        phi = nonlinear_pure_step(phi, p, increments[..., k, :], k * p.dt, renormalize)
        if (k + 1) % checkpoint_stride == 0:
            out[(k + 1) // checkpoint_stride] = p.to_schroedinger_frame(phi, (k + 1) * p.dt)
    return out
