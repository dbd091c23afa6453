"""Mixed-state engines: stochastic quantum master equations and their transforms.

The linear equation evolves an unnormalized operator gamma driven by the
output process Y; its trace is the likelihood weight.  The normalized
equation evolves a density operator rho driven by the innovation process B
and preserves the trace exactly.  ``normalize_path`` / ``reconstruct_path``
realize the correspondence between the two at the discrete level, with
left-point (Ito) evaluation of every coefficient.

The deterministic (noise-averaged) Lindblad solver doubles as a test oracle:
the innovation term of the normalized equation has zero mean under a Brownian
driver, so the Monte Carlo mean of trajectories must track the ODE solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrajectoryAbort
from .linalg import dag, hermitianize, hs_norm
from .pure import PureFilterParams

RECORD_KINDS = ("linear", "normalized")


@dataclass
class SMEParams(PureFilterParams):
    """Coefficients of the stochastic master equations; contract as PureFilterParams."""

    def to_schroedinger_frame_matrix(self, state: np.ndarray, t: float) -> np.ndarray:
        """Map an interaction-picture operator back: gamma = exp(-iHt) nu exp(iHt)."""
        if self.picture == "schroedinger" or t == 0.0:
            return state
        u = self._prop.factor(t)
        return u @ state @ dag(u)


def _channel_left(ls: np.ndarray, x: np.ndarray) -> np.ndarray:
    """L_j x for every channel: (n, d, d) applied to (..., d, d) -> (n, ..., d, d)."""
    return np.einsum("nij,...jk->n...ik", ls, x)


def output_compensators(rho: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """m_j = tr(L_j rho + rho L_j†) = 2 Re tr(L_j rho), shape (..., n)."""
    return 2.0 * np.einsum("nij,...ji->...n", ls, rho).real


def lindblad_generator(gamma: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """Dissipator sum_j [L_j gamma L_j† - (1/2){L_j† L_j, gamma}]; traceless on all inputs."""
    if gamma.shape[-1] != ls.shape[-1]:
        raise ValueError(f"dimension mismatch: {gamma.shape} vs {ls.shape}")
    lg = _channel_left(ls, gamma)
    sandwich = np.einsum("n...ik,nlk->...il", lg, np.conj(ls))
    kap2 = np.einsum("nji,njk->ik", np.conj(ls), ls)  # sum_j L_j† L_j
    return sandwich - 0.5 * (kap2 @ gamma + gamma @ kap2)


def _noise_coefficients(x: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """L_j x + x L_j† per channel, shape (n, ..., d, d)."""
    lx = _channel_left(ls, x)
    return lx + dag(lx)


def linear_sme_step(
    gamma: np.ndarray, p: SMEParams, dy: np.ndarray, t: float = 0.0
) -> np.ndarray:
    """One Euler update of the linear stochastic master equation.

    d gamma = -i[H, gamma] dt + Dissipator(gamma) dt + sum_j (L_j gamma + gamma L_j†) dY_j;
    the commutator is dropped and the channels dressed in the interaction
    picture.  Output is exactly Hermitian (symmetrized).
    """
    gamma = np.asarray(gamma, dtype=complex)
    if gamma.shape[-1] != p.dim:
        raise ValueError(f"state dimension {gamma.shape[-1]} != params dimension {p.dim}")
    dy = np.asarray(dy, dtype=float)
    ls_t = p.channel_ops(t)
    drift = lindblad_generator(gamma, ls_t)
    if p.picture == "schroedinger":
        drift = drift - 1j * (p.h @ gamma - gamma @ p.h)
    noise = np.einsum("n...ij,...n->...ij", _noise_coefficients(gamma, ls_t), dy)
    return hermitianize(gamma + p.dt * drift + noise)


def nonlinear_sme_rhs(
    rho: np.ndarray, p: SMEParams, t: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Drift and per-channel noise coefficients of the normalized equation at rho."""
    ls_t = p.channel_ops(t)
    drift = lindblad_generator(rho, ls_t)
    if p.picture == "schroedinger":
        drift = drift - 1j * (p.h @ rho - rho @ p.h)
    coef = _noise_coefficients(rho, ls_t)
    m = output_compensators(rho, ls_t)
    coef = coef - np.moveaxis(m, -1, 0)[..., None, None] * rho
    return drift, coef


def nonlinear_sme_step(
    rho: np.ndarray,
    p: SMEParams,
    db: np.ndarray,
    t: float = 0.0,
    trace_tol: float = 1e-8,
) -> np.ndarray:
    """One Euler update of the normalized (nonlinear) stochastic master equation.

    d rho = -i[H, rho] dt + Dissipator(rho) dt
            + sum_j [L_j rho + rho L_j† - rho tr(L_j rho + rho L_j†)] dB_j.

    Drift and noise coefficients are traceless at unit trace, so the update
    preserves the trace to roundoff; the input trace is checked against
    ``trace_tol``.  Output is exactly Hermitian.
    """
    rho = np.asarray(rho, dtype=complex)
    tr = np.einsum("...ii->...", rho).real
    if np.max(np.abs(tr - 1.0)) > trace_tol:
        raise ValueError(f"input trace deviates from 1 beyond {trace_tol}")
    db = np.asarray(db, dtype=float)
    drift, coef = nonlinear_sme_rhs(rho, p, t)
    noise = np.einsum("n...ij,...n->...ij", coef, db)
    return hermitianize(rho + p.dt * drift + noise)


def trace_process_step(
    value: float | np.ndarray,
    rho: np.ndarray,
    ls: np.ndarray,
    incr: np.ndarray,
    direction: str = "forward_trace",
    dt: float | None = None,
) -> float | np.ndarray:
    """Euler update of the trace or inverse-trace process.

    ``forward_trace``: d T = T sum_j m_j dY_j         (incr = output dY)
    ``inverse_trace``: d S = -S sum_j m_j dB_j        (incr = innovation dB)

    with m_j = tr(L_j rho + rho L_j†) evaluated at the current *normalized*
    state.  Both SDEs are driftless; ``dt`` is accepted for signature
    symmetry and unused.
    """
    value = np.asarray(value, dtype=float)
    if np.any(value <= 0.0):
        raise ValueError("trace process value must be positive")
    m = output_compensators(np.asarray(rho, dtype=complex), ls)
    kick = np.sum(m * np.asarray(incr), axis=-1)
    if direction == "forward_trace":
        out = value * (1.0 + kick)
    elif direction == "inverse_trace":
        out = value * (1.0 - kick)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if np.any(out <= 0.0):
        raise TrajectoryAbort(f"{direction} process driven nonpositive")
    return float(out) if out.ndim == 0 else out


def project_to_density(rho: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero and renormalize the trace.

    Changes the law of the process; only used when positivity handling is
    explicitly set to ``project``.
    """
    w, v = np.linalg.eigh(rho)
    w = np.maximum(w, 0.0)
    out = np.einsum("...ik,...k,...jk->...ij", v, w, np.conj(v))
    tr = np.einsum("...ii->...", out).real
    return hermitianize(out / tr[..., None, None])


@dataclass
class TrajectoryRecord:
    """One full trajectory of a mixed-state equation on a uniform grid.

    ``noise`` holds the driving increments per step (dY for ``linear``, dB
    for ``normalized``); ``trace`` holds the likelihood process T(t), which
    for a linear record equals the actual state traces.  Positivity of the
    stored states is a monitored property (Euler paths dip below zero at
    O(dt)), checked explicitly via :meth:`min_eigenvalues`, not at
    construction.
    """

    times: np.ndarray
    states: np.ndarray  # (steps+1, d, d)
    noise: np.ndarray  # (steps, n)
    trace: np.ndarray  # (steps+1,)
    kind: str
    params: SMEParams

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=complex)
        self.noise = np.asarray(self.noise, dtype=float)
        self.trace = np.asarray(self.trace, dtype=float)
        if self.kind not in RECORD_KINDS:
            raise ValueError(f"kind must be one of {RECORD_KINDS}")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.states.shape[0] != self.times.shape[0] or self.noise.shape[0] != self.times.shape[0] - 1:
            raise ValueError("times/states/noise lengths are inconsistent")
        herm_defect = hs_norm(self.states - dag(self.states)).max()
        if herm_defect > 1e-10 * max(1.0, float(hs_norm(self.states).max())):
            raise ValueError("stored states are not Hermitian")
        if self.kind == "normalized":
            tr = np.einsum("kii->k", self.states).real
            if np.max(np.abs(tr - 1.0)) > 1e-8:
                raise ValueError("normalized record requires unit-trace states")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def min_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.states)[:, 0]


def simulate_linear_record(
    gamma0: np.ndarray, p: SMEParams, increments: np.ndarray
) -> TrajectoryRecord:
    """Integrate the linear equation along one noise path, storing every step.

    States are recorded in the Schroedinger frame even when stepping in the
    interaction picture.
    """
    increments = np.asarray(increments, dtype=float)
    steps = increments.shape[0]
    states = np.empty((steps + 1, p.dim, p.dim), dtype=complex)
    states[0] = hermitianize(np.asarray(gamma0, dtype=complex))
    x = states[0]
    for k in range(steps):
        x = linear_sme_step(x, p, increments[k], k * p.dt)
        states[k + 1] = p.to_schroedinger_frame_matrix(x, (k + 1) * p.dt)
    times = p.dt * np.arange(steps + 1)
    trace = np.einsum("kii->k", states).real
    return TrajectoryRecord(times, states, increments, trace, "linear", p)


def simulate_nonlinear_record(
    rho0: np.ndarray, p: SMEParams, increments: np.ndarray
) -> TrajectoryRecord:
    """Integrate the normalized equation along one innovation path, storing every step."""
    increments = np.asarray(increments, dtype=float)
    steps = increments.shape[0]
    states = np.empty((steps + 1, p.dim, p.dim), dtype=complex)
    states[0] = hermitianize(np.asarray(rho0, dtype=complex))
    x = states[0]
    trace = np.empty(steps + 1)
    trace[0] = 1.0
    for k in range(steps):
        rho_s = p.to_schroedinger_frame_matrix(x, k * p.dt)
        trace[k + 1] = trace_process_step(
            trace[k], rho_s, p.ls, increments[k], "inverse_trace"
        )
        x = nonlinear_sme_step(x, p, increments[k], k * p.dt)
        states[k + 1] = p.to_schroedinger_frame_matrix(x, (k + 1) * p.dt)
    times = p.dt * np.arange(steps + 1)
    return TrajectoryRecord(times, states, increments, 1.0 / trace, "normalized", p)


def normalize_path(rec: TrajectoryRecord) -> TrajectoryRecord:
    """Map a linear record to the normalized one: rho = gamma / tr gamma, dB = dY - m dt.

    The compensator m is always evaluated at the normalized state of the same
    step (left-point rule).  Aborts with the step index if a nonpositive
    trace is encountered.
    """
    if rec.kind != "linear":
        raise ValueError("normalize_path expects a linear record")
    traces = np.einsum("kii->k", rec.states).real
    bad = np.nonzero(traces <= 0.0)[0]
    if bad.size:
        raise TrajectoryAbort("nonpositive trace in linear path", step=int(bad[0]))
    rhos = rec.states / traces[:, None, None]
    m = output_compensators(rhos[:-1], rec.params.ls)
    db = rec.noise - m * rec.dt
    return TrajectoryRecord(rec.times, rhos, db, traces, "normalized", rec.params)


def reconstruct_path(rec: TrajectoryRecord, t0: float = 1.0) -> TrajectoryRecord:
    """Inverse of :func:`normalize_path` at the discrete level.

    Rebuilds the trace process from the inverse-trace dynamics driven by dB,
    then gamma = T rho and dY = dB + m dt.
    """
    if rec.kind != "normalized":
        raise ValueError("reconstruct_path expects a normalized record")
    if t0 <= 0.0:
        raise ValueError("initial trace must be positive")
    steps = rec.noise.shape[0]
    m = output_compensators(rec.states[:-1], rec.params.ls)
    dy = rec.noise + m * rec.dt
    trace = np.empty(steps + 1)
    trace[0] = t0
    for k in range(steps):
        nxt = trace[k] * (1.0 + float(np.dot(m[k], dy[k])))
        if nxt <= 0.0:
            raise TrajectoryAbort("reconstructed trace driven nonpositive", step=k)
        trace[k + 1] = nxt
    gammas = rec.states * trace[:, None, None]
    return TrajectoryRecord(rec.times, gammas, dy, trace, "linear", rec.params)


def run_linear_sme(
    gamma0: np.ndarray,
    p: SMEParams,
    increments: np.ndarray,
    checkpoint_stride: int = 1,
    track_min_eig: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Batched linear-equation driver; Schroedinger-frame states at checkpoints.

    ``increments`` has shape (..., steps, n); returns (K+1, ..., d, d).  With
    ``track_min_eig`` also returns the per-step minimum eigenvalue of the
    evolving state, shape (steps+1, ...), for positivity monitoring.
    """
    increments = np.asarray(increments, dtype=float)
    steps = increments.shape[-2]
    if steps % checkpoint_stride:
        raise ValueError("step count must be a multiple of checkpoint_stride")
    x = np.broadcast_to(
        hermitianize(np.asarray(gamma0, dtype=complex)),
        increments.shape[:-2] + (p.dim, p.dim),
    ).copy()
    out = np.empty((steps // checkpoint_stride + 1,) + x.shape, dtype=complex)
    out[0] = x
    mins = np.empty((steps + 1,) + x.shape[:-2]) if track_min_eig else None
    if track_min_eig:
        mins[0] = np.linalg.eigvalsh(x)[..., 0]
    for k in range(steps):
        x = linear_sme_step(x, p, increments[..., k, :], k * p.dt)
        if track_min_eig:
            mins[k + 1] = np.linalg.eigvalsh(x)[..., 0]
        if (k + 1) % checkpoint_stride == 0:
            out[(k + 1) // checkpoint_stride] = p.to_schroedinger_frame_matrix(
                x, (k + 1) * p.dt
            )
    return (out, mins) if track_min_eig else out


def run_nonlinear_sme(
    rho0: np.ndarray,
    p: SMEParams,
    increments: np.ndarray,
    checkpoint_stride: int = 1,
    positivity: str = "monitor",
    track_min_eig: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Batched normalized-equation driver; Schroedinger-frame states at checkpoints.

    ``positivity='project'`` clips negative eigenvalues after every step;
    this changes the law of the process and is opt-in.
    """
    if positivity not in ("monitor", "project"):
        raise ValueError("positivity must be 'monitor' or 'project'")
    increments = np.asarray(increments, dtype=float)
    steps = increments.shape[-2]
    if steps % checkpoint_stride:
        raise ValueError("step count must be a multiple of checkpoint_stride")
    x = np.broadcast_to(
        hermitianize(np.asarray(rho0, dtype=complex)),
        increments.shape[:-2] + (p.dim, p.dim),
    ).copy()
    out = np.empty((steps // checkpoint_stride + 1,) + x.shape, dtype=complex)
    out[0] = x
    mins = np.empty((steps + 1,) + x.shape[:-2]) if track_min_eig else None
    if track_min_eig:
        mins[0] = np.linalg.eigvalsh(x)[..., 0]
    for k in range(steps):
        x = nonlinear_sme_step(x, p, increments[..., k, :], k * p.dt)
        if positivity == "project":
            x = project_to_density(x)
        if track_min_eig:
            mins[k + 1] = np.linalg.eigvalsh(x)[..., 0]
        if (k + 1) % checkpoint_stride == 0:
            out[(k + 1) // checkpoint_stride] = p.to_schroedinger_frame_matrix(
                x, (k + 1) * p.dt
            )
    return (out, mins) if track_min_eig else out


def _lindblad_ode_rhs(eta: np.ndarray, p: SMEParams) -> np.ndarray:
    return -1j * (p.h @ eta - eta @ p.h) + lindblad_generator(eta, p.ls)


def deterministic_lindblad_solve(
    rho0: np.ndarray, p: SMEParams, t: float, steps: int | None = None
) -> np.ndarray:
    """Noise-averaged oracle: integrate d eta/dt = -i[H, eta] + Dissipator(eta).

    Classic fixed-step RK4 (the dB term of the normalized equation has zero
    mean under a Brownian driver, so trajectory means must match this).
    Always integrates in the Schroedinger frame.
    """
    path = deterministic_lindblad_path(rho0, p, t, steps, checkpoint_stride=None)
    return path[-1]


def deterministic_lindblad_path(
    rho0: np.ndarray,
    p: SMEParams,
    t: float,
    steps: int | None = None,
    checkpoint_stride: int | None = 1,
) -> np.ndarray:
    """RK4 path of the deterministic Lindblad equation; states at checkpoints."""
    if steps is None:
        steps = max(1, round(t / p.dt))
    h = t / steps
    eta = hermitianize(np.asarray(rho0, dtype=complex))
    stride = steps if checkpoint_stride is None else checkpoint_stride
    if steps % stride:
        raise ValueError("steps must be a multiple of checkpoint_stride")
    out = np.empty((steps // stride + 1,) + eta.shape, dtype=complex)
    out[0] = eta
    for k in range(steps):
        k1 = _lindblad_ode_rhs(eta, p)
        k2 = _lindblad_ode_rhs(eta + 0.5 * h * k1, p)
        k3 = _lindblad_ode_rhs(eta + 0.5 * h * k2, p)
        k4 = _lindblad_ode_rhs(eta + h * k3, p)
        eta = hermitianize(eta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if (k + 1) % stride == 0:
            out[(k + 1) // stride] = eta
    return out


def record_to_csv(rec: TrajectoryRecord, stream) -> None:
    """Serialize a record: t, row-major Re/Im of the state, T, noise increments.

    Row k carries the increment over [t_k, t_{k+1}); the final row leaves the
    increment columns empty.
    """
    d = rec.states.shape[-1]
    n = rec.noise.shape[-1]
    entry_cols = ",".join(
        f"re_{i}{j},im_{i}{j}" for i in range(d) for j in range(d)
    )
    incr_cols = ",".join(f"d{'Y' if rec.kind == 'linear' else 'B'}_{j + 1}" for j in range(n))
    stream.write(f"t,{entry_cols},T,{incr_cols}\n")
    for k, t in enumerate(rec.times):
        flat = rec.states[k].reshape(-1)
        entries = ",".join(f"{z.real:.17g},{z.imag:.17g}" for z in flat)
        incr = (
            ",".join(f"{v:.17g}" for v in rec.noise[k])
            if k < rec.noise.shape[0]
            else "," * (n - 1)
        )
        stream.write(f"{t:.17g},{entries},{rec.trace[k]:.17g},{incr}\n")


def record_summary(rec: TrajectoryRecord, observables: dict[str, np.ndarray]) -> dict:
    """JSON-able summary: normalized expectations of observables per checkpoint."""
    traces = np.einsum("kii->k", rec.states).real
    rhos = rec.states / traces[:, None, None]
    out = {"kind": rec.kind, "times": rec.times.tolist(), "expectations": {}}
    for label, op in observables.items():
        vals = np.einsum("ij,kji->k", np.asarray(op, dtype=complex), rhos).real
        out["expectations"][label] = vals.tolist()
    return out
