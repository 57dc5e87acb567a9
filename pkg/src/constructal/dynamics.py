"""Autonomous Filippov dynamics on the admissible box.

Two adjustment laws are realized: discontinuous sign descent (with either
equivalent-control or boundary-layer sliding) and projected gradient flow.
Integration uses classical RK4 on a fixed nominal output grid.  Within a
nominal step the integrator locates regime changes (switching-manifold
crossings, sliding entry/exit, box-face contact/release) by bisection and
re-takes the remainder in the new regime.  A deterministic step-doubling
error control subdivides stiff segments; the control is float-pure, so
identical inputs give bit-identical trajectories.

Coordinate indices in events and masks are flat: 0..p-1 are the aspect
ratios r_1..r_p, p..2p-2 are the branching numbers n_2..n_p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import hierarchy as hm
from .cones import Box, kkt_residual, tangent_project_batch
from .errors import DomainError, SingularSlidingError, StepFailureError

__all__ = [
    "ProjectedGradient",
    "SignDescent",
    "IntegrationOptions",
    "Regime",
    "EventRecord",
    "Trajectory",
    "PairedRun",
    "EnsembleResult",
    "velocity",
    "slide_velocity",
    "step",
    "integrate",
    "two_trajectory_run",
    "integrate_ensemble",
]

EQUIVALENT_CONTROL = "equivalent_control"
BOUNDARY_LAYER = "boundary_layer"

SWITCH_CROSS = "SwitchCross"
SLIDE_ENTER = "SlideEnter"
SLIDE_EXIT = "SlideExit"
BOUNDARY_CONTACT = "BoundaryContact"
BOUNDARY_RELEASE = "BoundaryRelease"


@dataclass(frozen=True)
class ProjectedGradient:
    """x' = P_T(-M grad R); mobility is a positive scalar or diagonal."""

    mobility: float | tuple[float, ...] = 1.0
    gradient_mode: str = "decoupled"

    def __post_init__(self):
        mob = self.mobility
        if np.ndim(mob) == 0:
            if float(mob) <= 0:
                raise DomainError("mobility must be positive")
        else:
            mob = tuple(float(v) for v in mob)
            if any(v <= 0 for v in mob):
                raise DomainError("mobility entries must be positive")
            object.__setattr__(self, "mobility", mob)
        if self.gradient_mode not in ("decoupled", "coupled"):
            raise DomainError(f"unknown gradient mode {self.gradient_mode!r}")

    def mobility_vector(self, d: int) -> np.ndarray:
        if np.ndim(self.mobility) == 0:
            return np.full(d, float(self.mobility))
        m = np.asarray(self.mobility, dtype=float)
        if m.size != d:
            raise DomainError(f"diagonal mobility has {m.size} entries, state has {d}")
        return m


@dataclass(frozen=True)
class SignDescent:
    """x'_j = -gain_j sgn(d_j R) with Filippov sliding on the manifolds.

    ``sliding`` selects the numerical realization: "equivalent_control"
    solves the sliding system exactly, "boundary_layer" replaces sgn(u)
    with clip(u/epsilon, -1, 1).
    """

    eta: float | tuple[float, ...] = 1.0
    zeta: float | tuple[float, ...] = 1.0
    sliding: str = BOUNDARY_LAYER
    epsilon: float = 1e-4
    gradient_mode: str = "decoupled"

    def __post_init__(self):
        if self.sliding not in (EQUIVALENT_CONTROL, BOUNDARY_LAYER):
            raise DomainError(f"unknown sliding realization {self.sliding!r}")
        if self.epsilon <= 0:
            raise DomainError("boundary layer width must be positive")
        for name in ("eta", "zeta"):
            v = getattr(self, name)
            if np.ndim(v) == 0:
                if float(v) <= 0:
                    raise DomainError(f"{name} gains must be positive")
            else:
                v = tuple(float(x) for x in v)
                if any(g <= 0 for g in v):
                    raise DomainError(f"{name} gains must be positive")
                object.__setattr__(self, name, v)
        if self.gradient_mode not in ("decoupled", "coupled"):
            raise DomainError(f"unknown gradient mode {self.gradient_mode!r}")

    def gains(self, p: int) -> np.ndarray:
        eta = np.full(p, self.eta) if np.ndim(self.eta) == 0 else np.asarray(self.eta, dtype=float)
        zeta = (
            np.full(p - 1, self.zeta)
            if np.ndim(self.zeta) == 0
            else np.asarray(self.zeta, dtype=float)
        )
        if eta.size != p or zeta.size != p - 1:
            raise DomainError(f"gains sized ({eta.size}, {zeta.size}), need ({p}, {p - 1})")
        return np.concatenate([eta, zeta])


DynamicsMode = ProjectedGradient | SignDescent


@dataclass(frozen=True)
class IntegrationOptions:
    switch_tol: float = 1e-9
    boundary_tol: float = 1e-9
    event_tol: float = 1e-10
    converge_tol: float = 1e-10
    stop_on_convergence: bool = True
    max_events_per_step: int = 64
    substep_rtol: float = 1e-9
    substep_atol: float = 1e-12
    cond_threshold: float = 1e12


@dataclass(frozen=True)
class Regime:
    """Active structure of the right-hand side at a point."""

    sliding: tuple[int, ...]
    lower: tuple[int, ...]
    upper: tuple[int, ...]
    signs: tuple[int, ...]
    velocity: np.ndarray

    def mask(self) -> int:
        bits = 0
        for j in self.sliding:
            bits |= 1 << j
        for j in self.lower:
            bits |= 1 << j
        for j in self.upper:
            bits |= 1 << j
        return bits


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    index: int


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    R_values: np.ndarray
    Psi_values: np.ndarray
    regime_masks: np.ndarray
    events: list[EventRecord]
    step_events: list[str]
    status: str
    max_clip: float
    notes: list[str] = field(default_factory=list)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def event_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for ev in self.events:
            out[ev.kind] = out.get(ev.kind, 0) + 1
        return out


@dataclass
class PairedRun:
    first: Trajectory
    second: Trajectory
    times: np.ndarray
    separation: np.ndarray


@dataclass
class EnsembleResult:
    times: np.ndarray
    final_states: np.ndarray
    R_values: np.ndarray
    Psi_values: np.ndarray
    max_clip: float


def _as_vector(x, p: int) -> np.ndarray:
    if isinstance(x, hm.ArchState):
        return x.vector()
    v = np.asarray(x, dtype=float).ravel()
    if v.size != 2 * p - 1:
        raise DomainError(f"state has dimension {v.size}, expected {2 * p - 1}")
    return v


# ---------------------------------------------------------------------------
# regime evaluation and frozen-regime fields
# ---------------------------------------------------------------------------

def _face_freeze(box: Box, x: np.ndarray, v: np.ndarray, tol: float):
    """Zero outward components at active faces; return (v, lower, upper)."""
    lower = []
    upper = []
    out = v.copy()
    at_lo = box.active_lower(x, tol)
    at_hi = box.active_upper(x, tol)
    for j in range(x.size):
        if at_lo[j] and out[j] < 0.0:
            out[j] = 0.0
            lower.append(j)
        elif at_hi[j] and out[j] > 0.0:
            out[j] = 0.0
            upper.append(j)
    return out, tuple(lower), tuple(upper)


def _slide_solve(
    mode: SignDescent,
    costs,
    cfg,
    x: np.ndarray,
    S: list[int],
    v_ext: np.ndarray,
    opts: IntegrationOptions,
    check_cond: bool = False,
) -> np.ndarray:
    """Solve the sliding system on the active set S with externals frozen."""
    H = hm.grad_jacobian(costs, cfg, x, mode.gradient_mode)
    in_S = np.zeros(x.size, dtype=bool)
    in_S[S] = True
    A = H[S][:, S]
    if check_cond and np.linalg.cond(A) > opts.cond_threshold:
        raise SingularSlidingError(
            f"sliding block on coordinates {S} has condition number beyond "
            f"{opts.cond_threshold:g}"
        )
    rhs = -(H[S][:, ~in_S] @ v_ext[~in_S]) if len(S) < x.size else np.zeros(len(S))
    try:
        return np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSlidingError(f"sliding block on coordinates {S} is singular") from exc


def _slide_iterate(
    mode: SignDescent,
    costs,
    cfg,
    x: np.ndarray,
    S0: list[int],
    signs: np.ndarray,
    gains: np.ndarray,
    opts: IntegrationOptions,
):
    """Clamp-and-drop iteration of the Filippov sliding condition.

    Returns (velocity, surviving set, drop directions) where drop
    directions record the saturated sign for coordinates expelled from S.
    """
    S = sorted(S0)
    v = -gains * signs
    dropped: dict[int, int] = {}
    while S:
        vS = _slide_solve(mode, costs, cfg, x, S, v, opts, check_cond=True)
        over = np.abs(vS) / gains[S]
        worst = int(np.argmax(over))
        if over[worst] <= 1.0 + 1e-12:
            for idx, j in enumerate(S):
                v[j] = vS[idx]
            return v, S, dropped
        j = S[worst]
        direction = 1 if vS[worst] > 0 else -1
        v[j] = direction * gains[j]
        dropped[j] = direction
        S.pop(worst)
    return v, S, dropped


def _regime_at(mode: DynamicsMode, costs, cfg, box: Box, x: np.ndarray, opts: IntegrationOptions) -> Regime:
    g = hm.gradient_vec(costs, cfg, x, mode.gradient_mode)
    d = x.size
    if isinstance(mode, ProjectedGradient):
        raw = -mode.mobility_vector(d) * g
        v, lower, upper = _face_freeze(box, x, raw, opts.boundary_tol)
        return Regime(sliding=(), lower=lower, upper=upper, signs=(0,) * d, velocity=v)

    gains = mode.gains(costs.p)
    if mode.sliding == BOUNDARY_LAYER:
        raw = -gains * np.clip(g / mode.epsilon, -1.0, 1.0)
        in_layer = tuple(int(j) for j in np.flatnonzero(np.abs(g) <= mode.epsilon))
        signs = tuple(int(s) for s in np.sign(np.where(np.abs(g) <= mode.epsilon, 0.0, g)))
        v, lower, upper = _face_freeze(box, x, raw, opts.boundary_tol)
        return Regime(sliding=in_layer, lower=lower, upper=upper, signs=signs, velocity=v)

    # equivalent control
    on_manifold = np.abs(g) <= opts.switch_tol
    signs_arr = np.where(on_manifold, 0, np.sign(g)).astype(int)
    S0 = [int(j) for j in np.flatnonzero(on_manifold)]
    if S0:
        v, S, dropped = _slide_iterate(mode, costs, cfg, x, S0, signs_arr, gains, opts)
        for j, direction in dropped.items():
            signs_arr[j] = -direction  # so that -gain*sign reproduces the escape velocity
    else:
        v, S = -gains * signs_arr, []
    v, lower, upper = _face_freeze(box, x, v, opts.boundary_tol)
    return Regime(
        sliding=tuple(S),
        lower=lower,
        upper=upper,
        signs=tuple(int(s) for s in signs_arr),
        velocity=v,
    )


def _frozen_field(mode: DynamicsMode, costs, cfg, box: Box, regime: Regime, opts: IntegrationOptions):
    """Smooth vector field valid while the regime stays frozen."""
    frozen = list(regime.lower) + list(regime.upper)
    gradient = hm.gradient_vec
    gmode = mode.gradient_mode

    if isinstance(mode, ProjectedGradient):
        neg_mob = -mode.mobility_vector(box.dim)

        def f(y: np.ndarray) -> np.ndarray:
            v = neg_mob * gradient(costs, cfg, y, gmode)
            if frozen:
                v[frozen] = 0.0
            return v

        return f

    gains = mode.gains(costs.p)
    if mode.sliding == BOUNDARY_LAYER:
        neg_gains_over_eps = -gains / mode.epsilon
        lim = gains

        def f(y: np.ndarray) -> np.ndarray:
            v = np.clip(neg_gains_over_eps * gradient(costs, cfg, y, gmode), -lim, lim)
            if frozen:
                v[frozen] = 0.0
            return v

        return f

    S = list(regime.sliding)
    signs = np.asarray(regime.signs, dtype=float)

    def f(y: np.ndarray) -> np.ndarray:
        v = -gains * signs
        if S:
            g = hm.gradient_vec(costs, cfg, y, mode.gradient_mode)
            vS = _slide_solve(mode, costs, cfg, y, S, v, opts)
            v[S] = vS
        v[frozen] = 0.0
        return v

    return f


# ---------------------------------------------------------------------------
# public velocity operations
# ---------------------------------------------------------------------------

def velocity(mode: DynamicsMode, costs, cfg, box: Box, x, options: IntegrationOptions | None = None):
    """Filippov velocity selection and regime descriptor at a state."""
    opts = options or IntegrationOptions()
    xv = _as_vector(x, costs.p)
    if not box.contains(xv, opts.boundary_tol):
        raise DomainError(f"state {xv.tolist()} outside the box")
    regime = _regime_at(mode, costs, cfg, box, xv, opts)
    return regime.velocity, regime


def slide_velocity(mode: SignDescent, costs, cfg, x, active_set, options: IntegrationOptions | None = None) -> np.ndarray:
    """Equivalent-control sliding velocity on the given active set.

    External coordinates keep their sign-descent values; solved components
    are clamped to the gain bounds and the set shrinks when the Filippov
    condition fails.
    """
    if not isinstance(mode, SignDescent) or mode.sliding != EQUIVALENT_CONTROL:
        raise DomainError("slide_velocity requires SignDescent with equivalent control")
    opts = options or IntegrationOptions()
    xv = _as_vector(x, costs.p)
    g = hm.gradient_vec(costs, cfg, xv, mode.gradient_mode)
    S0 = sorted(int(j) for j in active_set)
    gains = mode.gains(costs.p)
    signs = np.where(np.abs(g) <= opts.switch_tol, 0, np.sign(g)).astype(int)
    v, _, _ = _slide_iterate(mode, costs, cfg, xv, S0, signs, gains, opts)
    return v


# ---------------------------------------------------------------------------
# stepping with events
# ---------------------------------------------------------------------------

def _rk4(f, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _StepController:
    """Deterministic step-doubling control within nominal steps.

    ``dt`` is the preferred substep: it shrinks only on genuine error
    failures and doubles after comfortably accurate substeps; the
    remaining-time limit is applied per use so end-of-step slivers do not
    collapse the preferred size.
    """

    def __init__(self, dt: float):
        self.dt = dt

    def advance(self, f, x: np.ndarray, limit: float, opts: IntegrationOptions, t_abs: float):
        dt = min(self.dt, limit)
        capped = dt < self.dt
        while True:
            y_full = _rk4(f, x, dt)
            y_half = _rk4(f, _rk4(f, x, 0.5 * dt), 0.5 * dt)
            err = float(np.max(np.abs(y_full - y_half)))
            scale = opts.substep_atol + opts.substep_rtol * max(
                1.0, float(np.max(np.abs(x))), float(np.max(np.abs(y_half)))
            )
            if np.all(np.isfinite(y_half)) and err <= scale:
                break
            dt *= 0.5
            capped = False
            self.dt = dt
            if dt < 1e-15 * max(1.0, limit):
                raise StepFailureError(
                    "substep size underflow (field too stiff or non-finite)", t_abs
                )
        if not capped and err <= scale / 64.0:
            self.dt = 2.0 * dt
        return y_half, dt


def _crossing_tests(mode, costs, cfg, box, regime: Regime, opts: IntegrationOptions):
    """Crossing monitors for the frozen regime.

    Each test is (kind, index, band, needs_grad, phi) with phi(y, g) a
    scalar that starts above ``band`` and signals a regime change when it
    falls to ``band`` or below.  ``g`` is the mode gradient at y, computed
    once per scan point and shared across tests.
    """
    tests = []
    d = box.dim
    frozen = set(regime.lower) | set(regime.upper)

    if isinstance(mode, SignDescent):
        gains = mode.gains(costs.p)
        if mode.sliding == EQUIVALENT_CONTROL:
            S = list(regime.sliding)
            for j in range(d):
                if j in regime.sliding or j in frozen:
                    continue
                s = regime.signs[j]
                if s == 0:
                    continue
                tests.append(
                    ("switch", j, opts.switch_tol, True, lambda y, g, j=j, s=s: s * g[j])
                )
            if S:
                signs = np.asarray(regime.signs, dtype=float)

                def slide_feasibility(y, g):
                    v = -gains * signs
                    vS = _slide_solve(mode, costs, cfg, y, S, v, opts)
                    return float(np.min(gains[S] - np.abs(vS)))

                tests.append(("slide_exit", -1, 0.0, True, slide_feasibility))
        else:
            eps = mode.epsilon
            for j in range(d):
                if j in regime.sliding:
                    tests.append(
                        ("layer_exit", j, 0.0, True, lambda y, g, j=j: eps - abs(g[j]))
                    )
                else:
                    tests.append(
                        ("layer_enter", j, 0.0, True, lambda y, g, j=j: abs(g[j]) - eps)
                    )

    # box faces: contact for inactive coordinates, release for active ones
    def raw_velocity(y, g):
        if isinstance(mode, ProjectedGradient):
            return -mode.mobility_vector(d) * g
        gains = mode.gains(costs.p)
        if mode.sliding == BOUNDARY_LAYER:
            return -gains * np.clip(g / mode.epsilon, -1.0, 1.0)
        signs = np.asarray(regime.signs, dtype=float)
        v = -gains * signs
        S = list(regime.sliding)
        if S:
            v[S] = _slide_solve(mode, costs, cfg, y, S, v, opts)
        return v

    for j in range(d):
        if j in regime.lower:
            tests.append(("release_lo", j, 0.0, True, lambda y, g, j=j: -raw_velocity(y, g)[j]))
        elif j in regime.upper:
            tests.append(("release_hi", j, 0.0, True, lambda y, g, j=j: raw_velocity(y, g)[j]))
        else:
            tests.append(("face_lo", j, 0.0, False, lambda y, g, j=j: y[j] - box.lo[j]))
            tests.append(("face_hi", j, 0.0, False, lambda y, g, j=j: box.hi[j] - y[j]))
    return tests


def _locate_zero(f, grad, x0, dt, phi, phi0, opts: IntegrationOptions):
    """Bisect the first zero of phi along the frozen-regime flow from x0.

    Returns a point strictly on the crossed side (phi <= 0), as close to
    the zero as the value tolerance allows, so the regime re-evaluation
    at the returned state actually sees the transition.
    """
    a, b = 0.0, dt
    xb = None
    for _ in range(200):
        m = 0.5 * (a + b)
        xm = _rk4(f, x0, m)
        fm = phi(xm, grad(xm))
        if fm > 0.0:
            a = m
        else:
            b, xb = m, xm
            if -fm <= opts.event_tol:
                return m, xm
        if b - a <= 64.0 * np.finfo(float).eps * max(dt, 1e-30):
            break
    if xb is None:
        xb = _rk4(f, x0, b)
    return b, xb


def _classify_transition(kind, j, mode, costs, cfg, box, x_e, regime, opts):
    """Map a raw crossing to (event kind, index, snapped state)."""
    if kind in ("face_lo", "face_hi"):
        x_e = x_e.copy()
        x_e[j] = box.lo[j] if kind == "face_lo" else box.hi[j]
        return BOUNDARY_CONTACT, j, x_e
    if kind in ("release_lo", "release_hi"):
        return BOUNDARY_RELEASE, j, x_e
    if kind == "layer_enter":
        return SLIDE_ENTER, j, x_e
    if kind == "layer_exit":
        return SLIDE_EXIT, j, x_e
    if kind == "slide_exit":
        # identify the coordinate whose equivalent control saturates
        gains = mode.gains(costs.p)
        signs = np.asarray(regime.signs, dtype=float)
        S = list(regime.sliding)
        v = -gains * signs
        vS = _slide_solve(mode, costs, cfg, x_e, S, v, opts)
        worst = int(np.argmin(gains[S] - np.abs(vS)))
        return SLIDE_EXIT, S[worst], x_e
    # switching-manifold crossing: sliding entry iff the Filippov condition
    # accepts the coordinate at the located point
    new_regime = _regime_at(mode, costs, cfg, box, x_e, opts)
    return (SLIDE_ENTER if j in new_regime.sliding else SWITCH_CROSS), j, x_e


def _advance_nominal(mode, costs, cfg, box, x, t0, h, opts, ctrl: _StepController):
    """Advance one nominal step; returns (x, events, regime, clip_mag)."""
    events: list[EventRecord] = []
    t_rel = 0.0
    regime = _regime_at(mode, costs, cfg, box, x, opts)
    f = _frozen_field(mode, costs, cfg, box, regime, opts)
    tests = _crossing_tests(mode, costs, cfg, box, regime, opts)
    gmode = mode.gradient_mode

    def grad(y):
        return hm.gradient_vec(costs, cfg, y, gmode)

    tiny = 1e-12 * max(1.0, h)
    while t_rel < h - tiny:
        need_grad = any(t[3] for t in tests)
        g_x = grad(x) if need_grad else None
        keep = []
        for test in tests:
            v0 = test[4](x, g_x)
            if v0 > test[2]:
                keep.append((test, v0))
            # values at or below the band at segment start were already
            # absorbed into the regime evaluation; skip monitoring them
        try:
            y, dt = ctrl.advance(f, x, h - t_rel, opts, t0 + t_rel)
        except SingularSlidingError:
            # fall back to a boundary-layer step for this nominal step
            fallback = replace(mode, sliding=BOUNDARY_LAYER)
            fb_regime = _regime_at(fallback, costs, cfg, box, x, opts)
            fb_field = _frozen_field(fallback, costs, cfg, box, fb_regime, opts)
            y, dt = ctrl.advance(fb_field, x, h - t_rel, opts, t0 + t_rel)
            x, t_rel = y, t_rel + dt
            events.append(EventRecord(time=t0 + t_rel, kind=SLIDE_EXIT, index=-1))
            regime = _regime_at(mode, costs, cfg, box, x, opts)
            f = _frozen_field(mode, costs, cfg, box, regime, opts)
            tests = _crossing_tests(mode, costs, cfg, box, regime, opts)
            continue

        g_y = grad(y) if need_grad else None
        crossed = []
        for test, v0 in keep:
            if test[4](y, g_y) <= test[2]:
                crossed.append((test, v0))
        if not crossed:
            x, t_rel = y, t_rel + dt
            continue

        # locate the earliest transition among the candidates; a monitor
        # that ends inside its band without a sign change transitions at
        # the substep end
        best = None
        for test, v0 in crossed:
            kind, j, band, _, phi = test
            phi_end = phi(y, g_y)
            if phi_end <= 0.0 and v0 > 0.0:
                tau, x_e = _locate_zero(f, grad, x, dt, phi, v0, opts)
            else:
                tau, x_e = dt, y
            if best is None or tau < best[0]:
                best = (tau, x_e, kind, j)
        tau, x_e, kind, j = best
        ev_kind, ev_index, x_e = _classify_transition(
            kind, j, mode, costs, cfg, box, x_e, regime, opts
        )
        x, t_rel = x_e, t_rel + tau
        events.append(EventRecord(time=t0 + t_rel, kind=ev_kind, index=ev_index))
        # simultaneous transitions: other monitors already past their band
        # at the located point share the event time
        g_e = grad(x) if need_grad else None
        for test, v0 in crossed:
            t_kind, t_j, t_band, _, t_phi = test
            if t_kind == kind and t_j == j:
                continue
            if t_phi(x, g_e) <= t_band:
                co_kind, co_index, x = _classify_transition(
                    t_kind, t_j, mode, costs, cfg, box, x, regime, opts
                )
                events.append(EventRecord(time=t0 + t_rel, kind=co_kind, index=co_index))
        if len(events) > opts.max_events_per_step:
            raise StepFailureError(
                f"more than {opts.max_events_per_step} events within one nominal step "
                f"at t={t0 + t_rel:.6g}: likely chattering; enable the boundary-layer "
                "sliding realization or reduce the step h",
                t0 + t_rel,
            )
        regime = _regime_at(mode, costs, cfg, box, x, opts)
        f = _frozen_field(mode, costs, cfg, box, regime, opts)
        tests = _crossing_tests(mode, costs, cfg, box, regime, opts)

    clipped = box.clip(x)
    clip_mag = float(np.max(np.abs(clipped - x))) if x.size else 0.0
    return clipped, events, regime, clip_mag



def step(mode: DynamicsMode, costs, cfg, box: Box, x, h: float, options: IntegrationOptions | None = None):
    """One nominal step of size h; returns (x_next, events)."""
    if h <= 0:
        raise DomainError("step size must be positive")
    opts = options or IntegrationOptions()
    xv = _as_vector(x, costs.p)
    if not box.contains(xv, opts.boundary_tol):
        raise DomainError(f"state {xv.tolist()} outside the box")
    ctrl = _StepController(h)
    x_next, events, _, _ = _advance_nominal(mode, costs, cfg, box, xv, 0.0, h, opts, ctrl)
    return x_next, events


def integrate(
    mode: DynamicsMode,
    costs,
    cfg,
    box: Box,
    x0,
    t_end: float,
    h: float,
    options: IntegrationOptions | None = None,
) -> Trajectory:
    """Integrate the inclusion on the fixed nominal grid 0, h, 2h, ...

    Terminates early with status "converged" when both the KKT residual of
    the decoupled gradient and the imbalance fall below the convergence
    tolerance.  Step failures propagate with a timestamp.  The recorded
    R series is the resistance Lyapunov functional of the active gradient
    mode (see :func:`hierarchy.resistance_lyapunov_vec`), nonincreasing
    along every admissible run.
    """
    if t_end <= 0 or h <= 0:
        raise DomainError("t_end and h must be positive")
    opts = options or IntegrationOptions()
    x = _as_vector(x0, costs.p)
    if not box.contains(x, opts.boundary_tol):
        raise DomainError(f"initial state {x.tolist()} outside the box")
    x = box.clip(x)

    n_steps = max(1, int(math.ceil(t_end / h - 1e-12)))
    times = [0.0]
    states = [x.copy()]
    rvals = [float(hm.resistance_lyapunov_vec(costs, cfg, x, mode.gradient_mode))]
    psis = [float(hm.imbalance_vec(costs, cfg, x))]
    masks = [_regime_at(mode, costs, cfg, box, x, opts).mask()]
    step_events: list[str] = [""]
    events: list[EventRecord] = []
    notes: list[str] = []
    status = "finished"
    max_clip = 0.0
    ctrl = _StepController(h)

    for k in range(n_steps):
        t0 = k * h
        h_k = min(h, t_end - t0)
        try:
            x, evs, regime, clip_mag = _advance_nominal(
                mode, costs, cfg, box, x, t0, h_k, opts, ctrl
            )
        except StepFailureError as exc:
            raise StepFailureError(
                f"integration failed at t={exc.time if exc.time is not None else t0:.6g}: {exc}",
                exc.time if exc.time is not None else t0,
            ) from exc
        max_clip = max(max_clip, clip_mag)
        events.extend(evs)
        step_events.append(";".join(f"{e.kind}:{e.index}" for e in evs))
        times.append(t0 + h_k)
        states.append(x.copy())
        rvals.append(float(hm.resistance_lyapunov_vec(costs, cfg, x, mode.gradient_mode)))
        psis.append(float(hm.imbalance_vec(costs, cfg, x)))
        masks.append(regime.mask())
        if opts.stop_on_convergence:
            g_dec = hm.gradient_vec(costs, cfg, x, "decoupled")
            if (
                kkt_residual(box, x, g_dec, opts.boundary_tol) <= opts.converge_tol
                and psis[-1] <= opts.converge_tol
            ):
                status = "converged"
                break

    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        R_values=np.asarray(rvals),
        Psi_values=np.asarray(psis),
        regime_masks=np.asarray(masks, dtype=np.int64),
        events=events,
        step_events=step_events,
        status=status,
        max_clip=max_clip,
        notes=notes,
    )


def two_trajectory_run(
    mode: DynamicsMode,
    costs,
    cfg,
    box: Box,
    x0,
    y0,
    t_end: float,
    h: float,
    options: IntegrationOptions | None = None,
) -> PairedRun:
    """Integrate two initial states on a common grid with their separation."""
    opts = options or IntegrationOptions()
    opts_pair = replace(opts, stop_on_convergence=False)
    ta = integrate(mode, costs, cfg, box, x0, t_end, h, opts_pair)
    tb = integrate(mode, costs, cfg, box, y0, t_end, h, opts_pair)
    n = min(ta.times.size, tb.times.size)
    sep = np.linalg.norm(ta.states[:n] - tb.states[:n], axis=1)
    return PairedRun(first=ta, second=tb, times=ta.times[:n], separation=sep)


def integrate_ensemble(
    mode: ProjectedGradient,
    costs,
    cfg,
    box: Box,
    X0: np.ndarray,
    t_end: float,
    h: float,
    options: IntegrationOptions | None = None,
) -> EnsembleResult:
    """Vectorized projected-gradient integration of a batch of states.

    Same velocity law and nominal grid as :func:`integrate`, with the box
    enforced by a vectorized tangent projection plus clip instead of the
    per-event machinery; the shared substep sequence is deterministic.
    Intended for ensemble studies (many interior initial states).
    """
    if not isinstance(mode, ProjectedGradient):
        raise DomainError("ensemble integration supports projected gradient only")
    opts = options or IntegrationOptions()
    X = np.array(X0, dtype=float, ndmin=2)
    d = 2 * costs.p - 1
    if X.shape[1] != d:
        raise DomainError(f"states have dimension {X.shape[1]}, expected {d}")
    for row in X:
        if not box.contains(row, opts.boundary_tol):
            raise DomainError(f"initial state {row.tolist()} outside the box")
    mob = mode.mobility_vector(d)

    def F(Y):
        V = -mob * hm.gradient_vec(costs, cfg, Y, mode.gradient_mode)
        return tangent_project_batch(box, Y, V, opts.boundary_tol)

    def rk4(Y, dt):
        k1 = F(Y)
        k2 = F(Y + 0.5 * dt * k1)
        k3 = F(Y + 0.5 * dt * k2)
        k4 = F(Y + dt * k3)
        return Y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    n_steps = max(1, int(math.ceil(t_end / h - 1e-12)))
    times = np.empty(n_steps + 1)
    times[0] = 0.0
    Rs = np.empty((X.shape[0], n_steps + 1))
    Ps = np.empty_like(Rs)
    Rs[:, 0] = hm.resistance_lyapunov_vec(costs, cfg, X, mode.gradient_mode)
    Ps[:, 0] = hm.imbalance_vec(costs, cfg, X)
    max_clip = 0.0
    dt_cur = h

    for k in range(n_steps):
        h_k = min(h, t_end - k * h)
        t_rel = 0.0
        while t_rel < h_k * (1.0 - 1e-12):
            dt = min(dt_cur, h_k - t_rel)
            while True:
                Y_full = rk4(X, dt)
                Y_half = rk4(rk4(X, 0.5 * dt), 0.5 * dt)
                err = float(np.max(np.abs(Y_full - Y_half)))
                scale = opts.substep_atol + opts.substep_rtol * max(
                    1.0, float(np.max(np.abs(X))), float(np.max(np.abs(Y_half)))
                )
                if np.all(np.isfinite(Y_half)) and err <= scale:
                    break
                dt *= 0.5
                if dt < 1e-15:
                    raise StepFailureError("ensemble substep underflow", k * h + t_rel)
            clipped = np.clip(Y_half, box.lo, box.hi)
            max_clip = max(max_clip, float(np.max(np.abs(clipped - Y_half))))
            X = clipped
            t_rel += dt
            dt_cur = min(2.0 * dt, h) if err <= scale / 64.0 else dt
        times[k + 1] = (k + 1) * h if k + 1 < n_steps else t_end
        Rs[:, k + 1] = hm.resistance_lyapunov_vec(costs, cfg, X, mode.gradient_mode)
        Ps[:, k + 1] = hm.imbalance_vec(costs, cfg, X)

    return EnsembleResult(times=times, final_states=X, R_values=Rs, Psi_values=Ps, max_clip=max_clip)
