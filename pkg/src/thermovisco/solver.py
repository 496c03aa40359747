"""Time stepping for the coupled displacement / stress / temperature system.

One step advances, inside a Picard loop that mirrors the fixed-point
construction of the continuous problem:

  1. implicit heat solve for θ, with the advection coefficient div(u_t) and
     the clamped dissipation source frozen at the current mechanical iterate,
  2. momentum update for the velocity with that θ,
  3. semi-implicit monotone update for the stress with the new strain rate,

iterated until the successive-iterate residual drops below ``picard_tol``.
The scheme is first order in time and unconditionally stable at desk scale.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

from .constitutive import ElasticityTensor, FlowRule, TruncationLevel, truncate, verify_admissibility
from .discretization import GalerkinSystem, project_displacement, project_stress


class StepFailureError(RuntimeError):
    """A time step could not be completed."""


class PositivityError(StepFailureError):
    """Temperature lost strict positivity.

    For admissible flow rules the discrete scheme inherits the maximum
    principle bound θ(t) ≥ min θ₀ · exp(−∫‖div u_t‖_∞); tripping this error
    indicates too large a step or an inadmissible rule, never silent data.
    """


class PicardConvergenceError(StepFailureError):
    """The outer fixed-point loop did not reach tolerance."""

    def __init__(self, message, residual_history):
        super().__init__(message)
        self.residual_history = list(residual_history)


@dataclass
class SimState:
    """Coefficient vectors of (u, u_t, stress, θ) at one time instant."""

    t: float
    u: np.ndarray
    v: np.ndarray
    stress: np.ndarray
    theta: np.ndarray

    def copy(self) -> "SimState":
        return SimState(self.t, self.u.copy(), self.v.copy(),
                        self.stress.copy(), self.theta.copy())

    def freeze(self) -> "SimState":
        for arr in (self.u, self.v, self.stress, self.theta):
            arr.setflags(write=False)
        return self


@dataclass
class SolverConfig:
    """Time grid, material laws, data samplers and iteration controls.

    Samplers: ``u0``, ``u1`` map points (m,d) -> (m,d); ``stress0`` maps
    points -> symmetric matrices (m,d,d); ``theta0`` maps points -> (m,)
    and must be strictly positive; ``forcing`` maps (t, points) -> (m,d).
    ``truncation`` is a TruncationLevel, or "auto" to pick a height of
    10 · (initial total energy) / |Ω| that stays inactive in benign runs.
    """

    dt: float
    t_end: float
    elasticity: ElasticityTensor = field(default_factory=lambda: ElasticityTensor(0.0, 0.5))
    flow_rule: FlowRule = field(default_factory=FlowRule.linear)
    truncation: Union[TruncationLevel, str] = "auto"
    picard_tol: float = 1e-10
    picard_max_iters: int = 50
    stress_inner_max_iters: int = 200
    forcing: Optional[Callable] = None
    u0: Optional[Callable] = None
    u1: Optional[Callable] = None
    stress0: Optional[Callable] = None
    theta0: Callable = None
    check_flow_rule: bool = True
    admissibility_samples: int = 2000
    admissibility_seed: int = 0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= self.dt:
            raise ValueError(f"t_end must be at least one step, got {self.t_end} < dt={self.dt}")
        if not self.picard_tol > 0.0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be >= 1")
        if self.theta0 is None:
            raise ValueError("theta0 sampler is required")
        if isinstance(self.truncation, str) and self.truncation != "auto":
            raise ValueError(f"truncation must be a TruncationLevel or 'auto', got {self.truncation!r}")


@dataclass
class DivergenceField:
    """div(u_t) sampled where the heat solve needs it."""

    gauss: np.ndarray   # (n_cells, n_gauss)
    cells: np.ndarray   # (n_cells,) midpoint values
    sup: float          # sup-norm over the domain


def as_divergence_field(sys: GalerkinSystem, div) -> DivergenceField:
    """Normalize None / scalar / callable(points) / DivergenceField inputs."""
    if isinstance(div, DivergenceField):
        return div
    n_cells = sys.mesh.n_cells
    n_g = sys._gauss_ref.shape[0]
    if div is None:
        return DivergenceField(np.zeros((n_cells, n_g)), np.zeros(n_cells), 0.0)
    if np.isscalar(div):
        val = float(div)
        return DivergenceField(np.full((n_cells, n_g), val), np.full(n_cells, val), abs(val))
    pts = sys._gauss_xy.reshape(-1, sys.mesh.dim)
    vals = np.asarray(div(pts), dtype=float).reshape(n_cells, n_g)
    centers = np.asarray(div(sys.mesh.cell_centers), dtype=float)
    return DivergenceField(vals, centers, float(np.abs(vals).max()))


def divergence_of(sys: GalerkinSystem, v: np.ndarray) -> DivergenceField:
    gauss = sys.divergence_gauss(v)
    # div u_t is multilinear, so the symmetric Gauss-point mean is its center value.
    return DivergenceField(gauss, gauss.mean(axis=1), sys.divergence_sup(v))


@dataclass
class HeatResult:
    theta: np.ndarray
    source_raw: np.ndarray      # cellwise G(θ_old, T):T before clamping
    source_trunc: np.ndarray    # cellwise clamped source fed to the solve


@dataclass
class StepResult:
    state: SimState
    iterations: int
    residual_history: list
    div_sup: float
    heat: HeatResult
    f_load: np.ndarray
    stress_inner_iters: int


def initialize(sys: GalerkinSystem, cfg: SolverConfig) -> SimState:
    """Project the initial data onto the discrete spaces.

    Displacement, velocity and stress are L² projections; the temperature
    is interpolated at the nodes and must be strictly positive there.
    """
    u = project_displacement(sys, cfg.u0).values if cfg.u0 is not None else np.zeros(sys.n_disp)
    v = project_displacement(sys, cfg.u1).values if cfg.u1 is not None else np.zeros(sys.n_disp)
    stress = project_stress(sys, cfg.stress0).values if cfg.stress0 is not None \
        else np.zeros(sys.k_stress)
    theta = np.asarray(cfg.theta0(sys.mesh.nodes), dtype=float)
    if theta.shape != (sys.n_temp,):
        raise ValueError(f"theta0 sampler returned shape {theta.shape}, expected ({sys.n_temp},)")
    if not np.all(theta > 0.0):
        raise ValueError(f"initial temperature must be strictly positive everywhere, "
                         f"min = {theta.min():g}")
    return SimState(0.0, u, v, stress, theta)


def total_energy(sys: GalerkinSystem, C: ElasticityTensor, state: SimState) -> float:
    """½‖u_t‖² + ½∫ℂ⁻¹T:T + ∫θ."""
    kinetic = 0.5 * float(state.v @ (sys.M_u @ state.v))
    elastic = 0.5 * float(np.sum(stress_quadratic_form(sys, C, state.stress)))
    thermal = sys.integrate_nodal(state.theta)
    return kinetic + elastic + thermal


def stress_quadratic_form(sys: GalerkinSystem, C: ElasticityTensor,
                          coeffs: np.ndarray) -> np.ndarray:
    """Cellwise contributions vol·(ℂ⁻¹T̂):T̂, respecting a partial last cell."""
    s = sys.s_comp
    vals = np.zeros(sys.mesh.n_cells)
    full = sys.k_stress // s
    if full:
        block = coeffs[:full * s].reshape(full, s)
        cinv = C.inverse_apply_mandel(block, sys.mesh.dim)
        vals[:full] = np.einsum("ec,ec->e", cinv, block)
    rem = sys.k_stress - full * s
    if rem:
        comps = sys.stress_comp[full * s:]
        sub = C.inverse_mandel_matrix(sys.mesh.dim)[np.ix_(comps, comps)]
        tail = coeffs[full * s:]
        vals[full] = float(tail @ (sub @ tail))
    return vals * sys.mesh.cell_volume


def resolve_truncation(sys: GalerkinSystem, cfg: SolverConfig,
                       state: SimState) -> TruncationLevel:
    if isinstance(cfg.truncation, TruncationLevel):
        return cfg.truncation
    e0 = total_energy(sys, cfg.elasticity, state)
    return TruncationLevel(10.0 * e0 / sys.mesh.volume)


def momentum_substep(sys: GalerkinSystem, state: SimState, theta: np.ndarray,
                     stress: np.ndarray, f_load: np.ndarray, dt: float) -> np.ndarray:
    """Exact linear solve of M_u (v_new − v_old)/dt = −Sᵀ·T + Dᵀ·θ + load."""
    rhs = -(sys.S.T @ stress) + sys.D.T @ theta + f_load
    return state.v + dt * sys.solve_mass_u(rhs)


def _stress_blocks(sys: GalerkinSystem, C: ElasticityTensor):
    """(full-cell count, tail component indices, tail ℂ submatrix) for updates."""
    s = sys.s_comp
    full = sys.k_stress // s
    rem = sys.k_stress - full * s
    tail_C = None
    if rem:
        comps = sys.stress_comp[full * s:]
        tail_C = np.linalg.inv(C.inverse_mandel_matrix(sys.mesh.dim)[np.ix_(comps, comps)])
    return full, rem, tail_C


def stress_substep(sys: GalerkinSystem, C: ElasticityTensor, G: FlowRule,
                   theta_cells: np.ndarray, stress_old: np.ndarray,
                   strain_rate: np.ndarray, dt: float, tol: float = 1e-12,
                   max_iters: int = 200):
    """Semi-implicit monotone update per cell.

    Solves ℂ⁻¹(T_new − T_old)/dt + G(θ, T_new) = ε(u_t) by the damped
    fixed-point map T ← T_old + dt·ℂ(ε(u_t) − G(θ, T)); the factor ½ damping
    kicks in whenever the residual grows.  Returns (coefficients, iterations).
    """
    dim = sys.mesh.dim
    s = sys.s_comp
    full, rem, tail_C = _stress_blocks(sys, C)

    out = np.empty(sys.k_stress)
    iters = 0
    if full:
        T_old = stress_old[:full * s].reshape(full, s)
        E = strain_rate[:full * s].reshape(full, s)
        th = theta_cells[:full]
        T = T_old.copy()
        prev_res = np.inf
        scale = max(float(np.abs(T_old).max(initial=0.0)),
                    dt * float(np.abs(E).max(initial=0.0)), 1e-30)
        for iters in range(1, max_iters + 1):
            G_val = G.eval_mandel(th, T, dim)
            T_next = T_old + dt * C.apply_mandel(E - G_val, dim)
            res = float(np.abs(T_next - T).max(initial=0.0))
            if res > prev_res:
                T_next = 0.5 * (T_next + T)
                res = float(np.abs(T_next - T).max(initial=0.0))
            T = T_next
            prev_res = res
            if res <= tol * max(scale, float(np.abs(T).max(initial=0.0))):
                break
        else:
            raise StepFailureError(
                f"stress update failed to converge in {max_iters} iterations "
                f"(last residual {prev_res:.3e}); try a smaller dt")
        out[:full * s] = T.ravel()

    if rem:
        comps = sys.stress_comp[full * s:]
        t_old = stress_old[full * s:]
        e_tail = strain_rate[full * s:]
        th_e = theta_cells[full]
        t = t_old.copy()
        prev_res = np.inf
        pad = np.zeros(s)
        for it in range(1, max_iters + 1):
            pad[:] = 0.0
            pad[comps] = t
            g = G.eval_mandel(np.array([th_e]), pad[None, :], dim)[0][comps]
            t_next = t_old + dt * (tail_C @ (e_tail - g))
            res = float(np.abs(t_next - t).max(initial=0.0))
            if res > prev_res:
                t_next = 0.5 * (t_next + t)
                res = float(np.abs(t_next - t).max(initial=0.0))
            t = t_next
            prev_res = res
            if res <= tol * max(float(np.abs(t).max(initial=0.0)), 1e-30):
                break
        else:
            raise StepFailureError(
                f"stress update (partial cell) failed to converge in {max_iters} "
                f"iterations; try a smaller dt")
        out[full * s:] = t
        iters = max(iters, it)
    return out, iters


def heat_substep(sys: GalerkinSystem, state: SimState, div_v_field, G: FlowRule,
                 truncation: TruncationLevel, dt: float,
                 stress: Optional[np.ndarray] = None,
                 base_matrix: Optional[sp.csr_matrix] = None) -> HeatResult:
    """Implicit Euler heat solve with clamped dissipation source.

    (M + dt·K + dt·A_adv(div u_t))·θ_new = M·θ_old + dt·∫clamp(G(θ_old,T):T)φ

    The source is evaluated at cell midpoints from the start-of-step
    temperature and the supplied stress iterate; homogeneous Neumann data is
    built into the space (no constrained rows).  Raises PositivityError if
    any dof of the solution is nonpositive.
    """
    if not np.all(state.theta > 0.0):
        raise PositivityError(f"start-of-step temperature not positive "
                              f"(min = {state.theta.min():g})")
    stress = state.stress if stress is None else stress
    div = as_divergence_field(sys, div_v_field)

    theta_c = sys.cell_center_values(state.theta)
    src_raw = _cell_dissipation(sys, G, theta_c, stress)
    src = np.asarray(truncate(truncation, src_raw), dtype=float)

    if base_matrix is None:
        base_matrix = (sys.M_theta + dt * sys.K_theta).tocsr()
    A = base_matrix + dt * sys.advection_matrix(div.gauss)
    rhs = sys.M_theta @ state.theta + dt * sys.heat_source_vector(src)
    try:
        theta_new = spla.spsolve(A.tocsc(), rhs)
    except RuntimeError as exc:
        raise StepFailureError(f"heat solve failed: {exc}") from exc
    if not np.all(np.isfinite(theta_new)):
        raise StepFailureError("heat solve produced non-finite values")
    if theta_new.min() <= 0.0:
        raise PositivityError(
            f"temperature solve lost positivity (min dof = {theta_new.min():.6g}); "
            f"the maximum-principle lower bound min(θ₀)·exp(−∫‖div u_t‖_∞) requires "
            f"a nonnegative source and a resolvable step — reduce dt or check the flow rule")
    return HeatResult(theta_new, src_raw, src)


def _cell_dissipation(sys: GalerkinSystem, G: FlowRule, theta_cells: np.ndarray,
                      stress: np.ndarray) -> np.ndarray:
    """Midpoint values of G(θ,T):T per cell (zero where no stress dofs live)."""
    s = sys.s_comp
    full = sys.k_stress // s
    out = np.zeros(sys.mesh.n_cells)
    if full:
        block = stress[:full * s].reshape(full, s)
        g = G.eval_mandel(theta_cells[:full], block, sys.mesh.dim)
        out[:full] = np.einsum("ec,ec->e", g, block)
    rem = sys.k_stress - full * s
    if rem:
        pad = np.zeros(s)
        pad[sys.stress_comp[full * s:]] = stress[full * s:]
        g = G.eval_mandel(np.array([theta_cells[full]]), pad[None, :], sys.mesh.dim)[0]
        out[full] = float(g @ pad)
    return out


def _field_residual(new: np.ndarray, prev: np.ndarray) -> float:
    # Relative with a unit floor so roundoff on (near-)zero fields counts as
    # converged instead of bouncing the loop on noise.
    diff = float(np.abs(new - prev).max(initial=0.0))
    scale = max(float(np.abs(new).max(initial=0.0)), 1.0)
    return diff / scale


def step(sys: GalerkinSystem, cfg: SolverConfig, state: SimState,
         _heat_base: Optional[sp.csr_matrix] = None) -> StepResult:
    """One Picard-coupled implicit step of size dt.

    The (u, stress) iterate is frozen, the heat equation solved for θ, then
    the momentum and stress updates run with that θ; repeat until the
    successive-iterate residual (max over θ, u_t, stress, relative) is below
    ``picard_tol``.  Finally u advances with the converged velocity.
    """
    if isinstance(cfg.truncation, str):
        raise ValueError("step needs a resolved TruncationLevel; use run() or "
                         "resolve_truncation() for 'auto'")
    dt = cfg.dt
    t_new = state.t + dt
    f_load = sys.load_vector(cfg.forcing, t_new) if cfg.forcing is not None \
        else np.zeros(sys.n_disp)
    if _heat_base is None:
        _heat_base = (sys.M_theta + dt * sys.K_theta).tocsr()

    v_i, T_i, th_i = state.v, state.stress, state.theta
    history = []
    heat = None
    inner_total = 0
    for _ in range(1, cfg.picard_max_iters + 1):
        div = divergence_of(sys, v_i)
        heat = heat_substep(sys, state, div, cfg.flow_rule, cfg.truncation, dt,
                            stress=T_i, base_matrix=_heat_base)
        th_new = heat.theta
        v_new = momentum_substep(sys, state, th_new, T_i, f_load, dt)
        strain_rate = sys.B @ v_new
        T_new, inner = stress_substep(
            sys, cfg.elasticity, cfg.flow_rule, sys.cell_center_values(th_new),
            state.stress, strain_rate, dt,
            tol=min(cfg.picard_tol, 1e-12), max_iters=cfg.stress_inner_max_iters)
        inner_total += inner
        res = max(_field_residual(th_new, th_i),
                  _field_residual(v_new, v_i),
                  _field_residual(T_new, T_i))
        history.append(res)
        v_i, T_i, th_i = v_new, T_new, th_new
        if res < cfg.picard_tol:
            break
    else:
        raise PicardConvergenceError(
            f"Picard loop did not reach tol={cfg.picard_tol:g} in "
            f"{cfg.picard_max_iters} iterations at t={t_new:g}; "
            f"residual history: {['%.3e' % r for r in history]}", history)

    u_new = state.u + dt * v_i
    new_state = SimState(t_new, u_new, v_i, T_i, th_i).freeze()
    return StepResult(new_state, len(history), history,
                      divergence_of(sys, v_i).sup, heat, f_load, inner_total)


@dataclass
class RunResult:
    state: SimState
    ledger: object          # diagnostics.BalanceLedger
    n_steps: int
    step_infos: list


def run(sys: GalerkinSystem, cfg: SolverConfig, observers: Sequence[Callable] = (),
        collect_infos: bool = True) -> RunResult:
    """March to t_end, recording balances and invoking observers per step.

    Observers are called as ``observer(step_index, t, state, row)`` with a
    read-only state snapshot and the ledger row dict; they must not mutate.
    Step errors propagate annotated with the failing time.
    """
    from .diagnostics import BalanceLedger

    if cfg.check_flow_rule:
        report = verify_admissibility(cfg.flow_rule, cfg.admissibility_samples,
                                      cfg.admissibility_seed)
        if not report.passed:
            raise ValueError(f"flow rule failed admissibility checks:\n{report}")

    state = initialize(sys, cfg).freeze()
    trunc = resolve_truncation(sys, cfg, state)
    cfg = replace(cfg, truncation=trunc)

    n_steps = max(1, int(round(cfg.t_end / cfg.dt)))
    ledger = BalanceLedger(sys, cfg.elasticity, trunc, cfg.dt)
    ledger.record_initial(state)

    heat_base = (sys.M_theta + cfg.dt * sys.K_theta).tocsr()
    infos = []
    for i in range(1, n_steps + 1):
        try:
            result = step(sys, cfg, state, _heat_base=heat_base)
        except PicardConvergenceError as exc:
            raise PicardConvergenceError(
                f"step {i} (t={state.t + cfg.dt:g}) failed: {exc}",
                exc.residual_history) from exc
        except StepFailureError as exc:
            raise type(exc)(f"step {i} (t={state.t + cfg.dt:g}) failed: {exc}") \
                from exc
        state = result.state
        row = ledger.record_step(state, result)
        if collect_infos:
            infos.append(result)
        for obs in observers:
            obs(i, state.t, state, dict(row))
    return RunResult(state, ledger, n_steps, infos)
