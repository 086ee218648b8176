"""Time-incremental minimization and the evolution certificates.

Alternates a safeguarded gradient descent in the deformation with
iterated-conditional-modes sweeps over the phase labels, then audits the
resulting trajectory: per-step two-sided energy bounds, cumulative
balance residual, orientation preservation and stability margins.
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np

from .dissipation import total_dissipation
from .energy import (
    Deformation,
    deformation_gradients,
    energy_breakdown,
    interface_vectors,
    total_energy_gradient,
    work_integral,
)
from .mesh import PhaseField, phase_boundary
from .tensor3 import cof, det

__all__ = [
    "SolverConfig",
    "StepRecord",
    "Trajectory",
    "TrajectoryAudit",
    "LineSearchError",
    "EvolutionError",
    "YSolveStats",
    "minimize_y",
    "minimize_z",
    "incremental_step",
    "evolve",
    "audit_trajectory",
    "StabilityReport",
    "check_stability",
    "AdmissibilityReport",
    "check_admissibility",
    "OracleResult",
    "oracle_enumerate",
    "decode_labeling",
]

log = logging.getLogger("smasim.solver")


class LineSearchError(RuntimeError):
    """Backtracking collapsed below the machine floor."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class EvolutionError(RuntimeError):
    """A time step failed; the partial trajectory is preserved."""

    def __init__(self, message, trajectory, step):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


@dataclasses.dataclass
class SolverConfig:
    tol_outer: float = 1e-7        # relative objective decrease per alternation
    max_outer: int = 30
    tol_g: float = 1e-6            # gradient norm vs 1 + |energy|
    max_y_iters: int = 2000
    armijo: float = 1e-4
    backtrack: float = 0.5
    theta_safe: float = 0.5        # per-element determinant safeguard factor
    step_floor: float = 1e-14
    max_z_sweeps: int = 50
    z_restarts: int = 0
    z_uniform_starts: bool = True
    tol_bal: float = 1e-3
    families: str = "ab"           # stability competitor families, subset of abcd
    n_rand: int = 20
    exhaustive_cap: int = 8
    tol_oracle: float = 1e-6
    seed: int = 0
    h_vox: float = 1.0 / 64.0

    def __post_init__(self):
        for name in ("tol_outer", "tol_g", "armijo", "tol_bal", "tol_oracle",
                     "step_floor", "h_vox"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.theta_safe < 1.0:
            raise ValueError("theta_safe must lie in (0, 1)")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if any(ch not in "abcd" for ch in self.families):
            raise ValueError("families must be a subset of 'abcd'")

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


@dataclasses.dataclass
class StepRecord:
    k: int
    t: float
    e_bulk: float
    e_int: float
    w_ext: float
    e_spring: float
    e_total: float
    d_step: float
    diss_cum: float
    lower_2sided: float
    upper_2sided: float
    balance_residual: float
    min_det_f: float
    y_iters: int
    z_sweeps: int


@dataclasses.dataclass
class Trajectory:
    times: list
    deformations: list
    phases: list
    records: list
    fingerprint: str = ""
    stable_at_start: bool = True

    def steps(self):
        return list(zip(self.times, self.phases))


@dataclasses.dataclass
class YSolveStats:
    iterations: int
    grad_norm: float
    converged: bool
    energies: list
    min_dets: list
    evals: int


# ----------------------------------------------------------------------
# Deformation step


_LBFGS_MEMORY = 10


def _lbfgs_direction(g, history):
    """Two-loop recursion; falls back to -g on an empty history."""
    q = g.ravel().copy()
    alphas = []
    for s, yv, rho in reversed(history):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * yv
    if history:
        s_last, y_last, _ = history[-1]
        q *= float(np.dot(s_last, y_last)) / float(np.dot(y_last, y_last))
    for (s, yv, rho), a in zip(history, reversed(alphas)):
        b = rho * float(np.dot(yv, q))
        q += (a - b) * s
    return -q.reshape(g.shape)


def minimize_y(t, mesh, z, y_start, model, program, config):
    """Descent on the frozen-label energy.

    Limited-memory quasi-Newton directions with Armijo backtracking; the
    history resets to plain steepest descent whenever the curvature model
    misbehaves, so only the descent contract is relied upon.  Every
    accepted iterate keeps all element determinants positive: a trial step
    is rejected while any determinant would fall below theta_safe times
    its pre-step value.  Terminates when the gradient norm drops below
    tol_g (1 + |energy|) or the iteration cap is hit.
    """
    boundary = phase_boundary(mesh, z)
    pos = y_start.positions.copy()

    evals = 0

    def objective(p):
        nonlocal evals
        evals += 1
        return energy_breakdown(
            t, mesh, Deformation(p), z, model, program, smoothed=True,
            boundary=boundary,
        ).total

    def gradient(p):
        return total_energy_gradient(
            t, mesh, Deformation(p), z, model, program, boundary=boundary
        )

    dets = det(deformation_gradients(mesh, Deformation(pos)))
    if np.any(dets <= 0.0):
        bad = int(np.argmax(dets <= 0.0))
        raise LineSearchError(
            f"starting deformation is inadmissible on element {bad}", element=bad
        )

    f_cur = objective(pos)
    energies = [f_cur]
    min_dets = [float(dets.min())]
    g = gradient(pos)
    gnorm = float(np.linalg.norm(g))
    history = []

    def line_search(d, slope, alpha0):
        """Backtrack until the determinant safeguard and Armijo both hold."""
        alpha = alpha0
        worst = None
        while alpha >= config.step_floor * alpha0:
            trial = pos + alpha * d
            dets_t = det(deformation_gradients(mesh, Deformation(trial)))
            viol = (dets_t <= 0.0) | (dets_t < config.theta_safe * dets)
            if np.any(viol):
                worst = int(np.argmax(viol))
                alpha *= config.backtrack
                continue
            f_trial = objective(trial)
            if not np.isfinite(f_trial) or f_trial > f_cur + config.armijo * alpha * slope:
                alpha *= config.backtrack
                continue
            return trial, f_trial, dets_t, worst
        return None, None, None, worst

    iters = 0
    stall = 0
    while gnorm > config.tol_g * (1.0 + abs(f_cur)) and iters < config.max_y_iters:
        if stall >= 20:
            # decreases have fallen below double resolution; the gradient
            # norm is at its attainable floor for this energy scale
            log.debug("descent stalled at gradient norm %.3e", gnorm)
            break
        d = _lbfgs_direction(g, history)
        slope = float(np.dot(d.ravel(), g.ravel()))
        dnorm = float(np.linalg.norm(d))
        if not np.isfinite(slope) or slope >= -1e-14 * gnorm * dnorm:
            history.clear()
            d = -g
            slope = -gnorm * gnorm
        alpha0 = 1.0 if history else min(1.0, 1.0 / (1.0 + gnorm))
        trial, f_trial, dets_t, worst = line_search(d, slope, alpha0)
        if trial is None and history:
            # curvature direction failed outright: retry as steepest descent
            history.clear()
            d = -g
            slope = -gnorm * gnorm
            trial, f_trial, dets_t, worst = line_search(
                d, slope, min(1.0, 1.0 / (1.0 + gnorm))
            )
        if trial is None:
            raise LineSearchError(
                "line search collapsed"
                + (f" (determinant guard on element {worst})" if worst is not None else ""),
                element=worst,
            )
        g_new = gradient(trial)
        s = (trial - pos).ravel()
        yv = (g_new - g).ravel()
        sy = float(np.dot(s, yv))
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            history.append((s, yv, 1.0 / sy))
            if len(history) > _LBFGS_MEMORY:
                history.pop(0)
        if f_cur - f_trial <= 4.0 * np.finfo(float).eps * (1.0 + abs(f_cur)):
            stall += 1
        else:
            stall = 0
        pos, f_cur, dets, g = trial, f_trial, dets_t, g_new
        gnorm = float(np.linalg.norm(g))
        energies.append(f_cur)
        min_dets.append(float(dets.min()))
        iters += 1

    stats = YSolveStats(
        iterations=iters,
        grad_norm=gnorm,
        converged=gnorm <= config.tol_g * (1.0 + abs(f_cur)),
        energies=energies,
        min_dets=min_dets,
        evals=evals,
    )
    return Deformation(pos), stats


# ----------------------------------------------------------------------
# Label step


class _LabelCosts:
    """Per-element and per-face label cost tables at frozen deformation.

    The local cost of giving element e label i consists of the bulk term
    vol W_i(F_e), an anchor-dependent dissipation column, and for each
    interior face of e the shared interfacial charge against the
    neighbor's current label (zero when the labels agree).
    """

    def __init__(self, mesh, y, model):
        self.mesh = mesh
        f = deformation_gradients(mesh, y)
        self.bulk = model.bulk.density_table(f) * mesh.volumes[:, None]
        if np.any(np.isinf(self.bulk)):
            raise LineSearchError("label tables requested at an inadmissible state")
        nf = len(mesh.iface_area)
        P = model.num_phases
        if nf:
            ids = np.arange(nf)
            n, h, c = interface_vectors(mesh, y, ids)
            psi = np.stack(
                [model.interface.psi(i, n, h, c, smoothed=True) for i in range(P)],
                axis=-1,
            )
            self.face_cost = mesh.iface_area[:, None] * psi
        else:
            self.face_cost = np.zeros((0, P))
        self.num_phases = P

    def local_costs(self, e, labels):
        """Costs of every candidate label on element e (without dissipation)."""
        costs = self.bulk[e].copy()
        for slot in range(4):
            fid = self.mesh.tet_iface_index[e, slot]
            if fid < 0:
                break
            nb = self.mesh.tet_iface_neighbor[e, slot]
            nb_label = labels[nb]
            add = self.face_cost[fid] + self.face_cost[fid, nb_label]
            costs += add
            costs[nb_label] -= add[nb_label]
        return costs

    def objective(self, labels, diss):
        """Global frozen-deformation objective of a labeling.

        diss is the per-element, per-label dissipation table already
        multiplied by element volumes.
        """
        total = float(self.bulk[np.arange(len(labels)), labels].sum())
        total += float(diss[np.arange(len(labels)), labels].sum())
        lo, hi = self.mesh.iface_tets[:, 0], self.mesh.iface_tets[:, 1]
        ids = np.nonzero(labels[lo] != labels[hi])[0]
        if len(ids):
            total += float(
                (self.face_cost[ids, labels[lo[ids]]]
                 + self.face_cost[ids, labels[hi[ids]]]).sum()
            )
        return total


def _dissipation_table(mesh, metric, z_anchor):
    """vol_e * D(i, anchor_e) for every element e and label i, shape (m, P)."""
    return mesh.volumes[:, None] * metric.table[:, z_anchor.labels].T


def minimize_z(t, mesh, y, z_prev, model, metric, config, z_start=None, rng=None):
    """Iterated-conditional-modes sweeps over the phase labels.

    Visits elements in ascending index order; each takes the label
    minimizing its local bulk + dissipation + interface cost, ties keep
    the current label.  Stops when a full sweep changes nothing, so the
    result is flip-stable.  Best-of selection over additional sweep
    starts (the uniform labelings by default, plus optional seeded random
    restarts) lets collective transformations happen as soon as they pay,
    which single flips alone can miss.
    """
    costs = _LabelCosts(mesh, y, model)
    diss = _dissipation_table(mesh, metric, z_prev)

    def sweep_to_fixpoint(labels):
        sweeps = 0
        while sweeps < config.max_z_sweeps:
            changed = False
            for e in range(mesh.num_tets):
                local = costs.local_costs(e, labels) + diss[e]
                best = int(np.argmin(local))
                if local[best] < local[labels[e]]:
                    labels[e] = best
                    changed = True
            sweeps += 1
            if not changed:
                break
        return labels, sweeps

    start = (z_start if z_start is not None else z_prev).labels.copy()
    labels, sweeps = sweep_to_fixpoint(start)
    best_obj = costs.objective(labels, diss)

    candidates = []
    if config.z_uniform_starts:
        candidates.extend(
            np.full(mesh.num_tets, i, dtype=np.int64)
            for i in range(model.num_phases)
        )
    if config.z_restarts > 0:
        gen = rng if rng is not None else np.random.default_rng(config.seed)
        candidates.extend(
            gen.integers(0, model.num_phases, size=mesh.num_tets).astype(np.int64)
            for _ in range(config.z_restarts)
        )
    for cand in candidates:
        cand, extra = sweep_to_fixpoint(cand)
        sweeps += extra
        obj = costs.objective(cand, diss)
        if obj < best_obj:
            labels, best_obj = cand, obj

    return PhaseField(labels, model.num_phases), sweeps


# ----------------------------------------------------------------------
# One incremental problem


def _step_objective(t, mesh, y, z, z_prev, model, program, metric):
    e = energy_breakdown(t, mesh, y, z, model, program, smoothed=True).total
    return e + total_dissipation(mesh, z_prev, z, metric)


def incremental_step(t, mesh, y_prev, z_prev, model, program, metric, config,
                     rng=None):
    """Alternating minimization of energy plus dissipation from the
    previous state.

    Returns (deformation, phase field, info).  The returned objective
    never exceeds the warm-start objective: alternation only accepts
    monotone substeps, and a final guard falls back to the start.
    """
    obj_start = _step_objective(t, mesh, y_prev, z_prev, z_prev, model, program, metric)
    y = y_prev.copy()
    z = z_prev.copy()
    obj_prev = obj_start
    y_iters = 0
    z_sweeps = 0
    objective_trace = [obj_start]
    grad_norm = math.inf

    for _ in range(config.max_outer):
        y, ystats = minimize_y(t, mesh, z, y, model, program, config)
        y_iters += ystats.iterations
        grad_norm = ystats.grad_norm
        z_new, sweeps = minimize_z(
            t, mesh, y, z_prev, model, metric, config, z_start=z, rng=rng
        )
        z_sweeps += sweeps
        z_changed = not np.array_equal(z_new.labels, z.labels)
        z = z_new
        obj = _step_objective(t, mesh, y, z, z_prev, model, program, metric)
        objective_trace.append(obj)
        drop = obj_prev - obj
        obj_prev = obj
        if not z_changed and drop <= config.tol_outer * (1.0 + abs(obj)):
            break

    if obj_prev > obj_start:
        log.warning("incremental step did not improve; keeping the warm start")
        y, z, obj_prev = y_prev.copy(), z_prev.copy(), obj_start

    info = {
        "objective": obj_prev,
        "objective_trace": objective_trace,
        "y_iters": y_iters,
        "z_sweeps": z_sweeps,
        "grad_norm": grad_norm,
    }
    return y, z, info


# ----------------------------------------------------------------------
# Evolution


def _make_record(k, t, mesh, y, z, model, program, d_step, diss_cum,
                 lower, upper, residual, y_iters, z_sweeps):
    parts = energy_breakdown(t, mesh, y, z, model, program, smoothed=False)
    dets = det(deformation_gradients(mesh, y))
    return StepRecord(
        k=k, t=t,
        e_bulk=parts.bulk, e_int=parts.interface, w_ext=parts.external_work,
        e_spring=parts.spring, e_total=parts.total,
        d_step=d_step, diss_cum=diss_cum,
        lower_2sided=lower, upper_2sided=upper, balance_residual=residual,
        min_det_f=float(dets.min()), y_iters=y_iters, z_sweeps=z_sweeps,
    )


def evolve(mesh, model, program, metric, config, y0, z0, horizon, steps,
           fingerprint="", rng=None, on_step=None):
    """Run the incremental scheme on the uniform grid t_k = k T / N.

    Each record carries the per-step bracket on the energy change plus
    dissipation: the lower bound integrates the frozen new state, the
    upper bound the frozen previous state, both exactly for piecewise
    linear loads.  The balance residual accumulates the deviation from
    the work integral of the piecewise-constant interpolant.
    """
    if steps < 1:
        raise ValueError("need at least one time step")
    if horizon <= 0.0:
        raise ValueError("time horizon must be positive")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    dets0 = det(deformation_gradients(mesh, y0))
    if np.any(dets0 <= 0.0):
        raise ValueError("initial deformation is inadmissible")

    stable = True
    report = check_stability(0.0, mesh, y0, z0, model, program, metric, config,
                             rng=rng)
    if not report.passed:
        stable = False
        log.warning(
            "initial state is not stable within the competitor class "
            "(worst margin %.3e)", report.worst_margin,
        )

    times = [k * horizon / steps for k in range(steps + 1)]
    trajectory = Trajectory(
        times=[times[0]],
        deformations=[y0.copy()],
        phases=[z0.copy()],
        records=[_make_record(0, 0.0, mesh, y0, z0, model, program,
                              0.0, 0.0, 0.0, 0.0, 0.0, 0, 0)],
        fingerprint=fingerprint,
        stable_at_start=stable,
    )
    if on_step is not None:
        on_step(0, trajectory)

    e_start = trajectory.records[0].e_total
    diss_cum = 0.0
    work_cum = 0.0
    y, z = y0, z0

    for k in range(1, steps + 1):
        t_prev, t_k = times[k - 1], times[k]
        try:
            y_new, z_new, info = incremental_step(
                t_k, mesh, y, z, model, program, metric, config, rng=rng
            )
        except LineSearchError as exc:
            raise EvolutionError(
                f"step {k} failed: {exc}", trajectory, k
            ) from exc
        d_step = total_dissipation(mesh, z, z_new, metric)
        diss_cum += d_step
        lower = work_integral(t_prev, t_k, mesh, y_new, program)
        upper = work_integral(t_prev, t_k, mesh, y, program)
        work_cum += upper
        y, z = y_new, z_new
        record = _make_record(
            k, t_k, mesh, y, z, model, program, d_step, diss_cum,
            lower, upper,
            0.0, info["y_iters"], info["z_sweeps"],
        )
        record.balance_residual = (
            record.e_total + diss_cum - e_start - work_cum
        )
        trajectory.times.append(t_k)
        trajectory.deformations.append(y.copy())
        trajectory.phases.append(z.copy())
        trajectory.records.append(record)
        if on_step is not None:
            on_step(k, trajectory)
        log.info(
            "step %d/%d: E=%.6e D=%.3e iters=%d sweeps=%d",
            k, steps, record.e_total, d_step, info["y_iters"], info["z_sweeps"],
        )

    return trajectory


@dataclasses.dataclass
class TrajectoryAudit:
    two_sided_ok: bool
    dissipation_monotone: bool
    orientation_ok: bool
    balance_ok: bool
    worst_two_sided_slack: float
    final_residual: float
    residual_budget: float

    @property
    def passed(self):
        return (self.two_sided_ok and self.dissipation_monotone
                and self.orientation_ok and self.balance_ok)


def audit_trajectory(trajectory, tol_bal):
    """Evaluate the recorded evolution certificates.

    Per step: lower - slack <= (energy change + step dissipation) <= upper
    + slack with slack = tol_bal (1 + |E_k|); cumulative dissipation
    nondecreasing; all recorded states orientation preserving; final
    balance residual within the accumulated bracket widths plus slack.
    """
    recs = trajectory.records
    two_sided = True
    worst = 0.0
    budget = 0.0
    for prev, cur in zip(recs, recs[1:]):
        value = cur.e_total + cur.d_step - prev.e_total
        slack = tol_bal * (1.0 + abs(cur.e_total))
        low_gap = cur.lower_2sided - value
        high_gap = value - cur.upper_2sided
        worst = max(worst, low_gap, high_gap)
        if low_gap > slack or high_gap > slack:
            two_sided = False
        budget += (cur.upper_2sided - cur.lower_2sided) + slack
    diss = [r.diss_cum for r in recs]
    monotone = all(b >= a - 1e-15 for a, b in zip(diss, diss[1:]))
    orientation = all(r.min_det_f > 0.0 for r in recs)
    final_residual = recs[-1].balance_residual if recs else 0.0
    balance_ok = abs(final_residual) <= budget + 1e-15
    return TrajectoryAudit(
        two_sided_ok=two_sided,
        dissipation_monotone=monotone,
        orientation_ok=orientation,
        balance_ok=balance_ok,
        worst_two_sided_slack=worst,
        final_residual=final_residual,
        residual_budget=budget,
    )


# ----------------------------------------------------------------------
# Stability


@dataclasses.dataclass
class StabilityReport:
    t: float
    energy: float
    tol: float
    families: str
    n_competitors: int
    worst_margin: float
    worst_label: str
    violations: list

    @property
    def passed(self):
        return len(self.violations) == 0


def decode_labeling(index, num_phases, num_tets):
    """Mixed-radix decoding, element 0 least significant."""
    labels = np.empty(num_tets, dtype=np.int64)
    for e in range(num_tets):
        labels[e] = index % num_phases
        index //= num_phases
    return labels


def check_stability(t, mesh, y, z, model, program, metric, config, rng=None):
    """Margins of the state against finite competitor families.

    (a) single-element relabels with the deformation kept, (b) uniform
    relabelings with re-optimized deformation, (c) seeded random
    labelings with re-optimized deformation, (d) exhaustive labelings
    when the element count is within the cap.  A competitor with margin
    below -tol is a recorded violation.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    e_ref = energy_breakdown(t, mesh, y, z, model, program, smoothed=True).total
    tol = config.tol_bal * (1.0 + abs(e_ref))
    worst = math.inf
    worst_label = "none"
    n_checked = 0
    violations = []

    def consider(family, label, margin):
        nonlocal worst, worst_label, n_checked
        n_checked += 1
        if margin < worst:
            worst = margin
            worst_label = f"{family}:{label}"
        if margin < -tol:
            violations.append((family, label, margin))

    if "a" in config.families:
        costs = _LabelCosts(mesh, y, model)
        diss = _dissipation_table(mesh, metric, z)
        for e in range(mesh.num_tets):
            local = costs.local_costs(e, z.labels) + diss[e]
            cur = local[z.labels[e]]
            for i in range(model.num_phases):
                if i == z.labels[e]:
                    continue
                consider("a", f"element {e} -> {i}", float(local[i] - cur))

    def reoptimized_margin(labels):
        cand = PhaseField(labels, model.num_phases)
        y_cand, _ = minimize_y(t, mesh, cand, y, model, program, config)
        e_cand = energy_breakdown(
            t, mesh, y_cand, cand, model, program, smoothed=True
        ).total
        return e_cand + total_dissipation(mesh, z, cand, metric) - e_ref

    if "b" in config.families:
        for i in range(model.num_phases):
            labels = np.full(mesh.num_tets, i, dtype=np.int64)
            if np.array_equal(labels, z.labels):
                continue
            consider("b", f"uniform {i}", reoptimized_margin(labels))

    if "c" in config.families:
        for r in range(config.n_rand):
            labels = rng.integers(0, model.num_phases, size=mesh.num_tets).astype(
                np.int64
            )
            if np.array_equal(labels, z.labels):
                continue
            consider("c", f"random {r}", reoptimized_margin(labels))

    if "d" in config.families and mesh.num_tets <= config.exhaustive_cap:
        total = model.num_phases ** mesh.num_tets
        for idx in range(total):
            labels = decode_labeling(idx, model.num_phases, mesh.num_tets)
            if np.array_equal(labels, z.labels):
                continue
            consider("d", f"labeling {idx}", reoptimized_margin(labels))

    return StabilityReport(
        t=t, energy=e_ref, tol=tol, families=config.families,
        n_competitors=n_checked,
        worst_margin=worst if n_checked else 0.0,
        worst_label=worst_label, violations=violations,
    )


# ----------------------------------------------------------------------
# Admissibility


@dataclasses.dataclass
class AdmissibilityReport:
    orientation_ok: bool
    bad_elements: list
    min_det: float
    det_integral: float
    voxel_volume: float
    slack: float
    h_vox: float
    injectivity_ok: bool

    @property
    def passed(self):
        return self.orientation_ok and self.injectivity_ok


def _voxel_image_volume(mesh, pos, h):
    """Volume of the deformed image estimated on a voxel grid.

    A voxel counts when its center lies inside any deformed element
    (barycentric sign test).
    """
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    counts = np.maximum(np.ceil((hi - lo) / h - 1e-12).astype(int), 1)
    if int(np.prod(counts)) > 50_000_000:
        raise ValueError("voxel grid too large; increase h_vox")
    occupied = np.zeros(counts, dtype=bool)

    verts = pos[mesh.tets]
    for e in range(mesh.num_tets):
        v = verts[e]
        edge = (v[1:] - v[0]).T
        d = det(edge)
        if abs(d) < 1e-300:
            continue
        inv = cof(edge).T / d
        vlo = np.maximum(np.floor((v.min(axis=0) - lo) / h - 0.5).astype(int), 0)
        vhi = np.minimum(
            np.ceil((v.max(axis=0) - lo) / h + 0.5).astype(int), counts
        )
        if np.any(vhi <= vlo):
            continue
        ranges = [lo[i] + (np.arange(vlo[i], vhi[i]) + 0.5) * h for i in range(3)]
        gx, gy, gz = np.meshgrid(*ranges, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        lam = (pts - v[0]) @ inv.T
        inside = (
            (lam[:, 0] >= -1e-12) & (lam[:, 1] >= -1e-12) & (lam[:, 2] >= -1e-12)
            & (lam.sum(axis=1) <= 1.0 + 1e-12)
        )
        if inside.any():
            sub = occupied[vlo[0]:vhi[0], vlo[1]:vhi[1], vlo[2]:vhi[2]]
            sub |= inside.reshape(sub.shape)
            occupied[vlo[0]:vhi[0], vlo[1]:vhi[1], vlo[2]:vhi[2]] = sub
    return float(occupied.sum()) * h ** 3


def check_admissibility(mesh, y, h_vox=1.0 / 64.0):
    """Orientation and almost-everywhere injectivity checks.

    Injectivity uses the volume inequality: the determinant integral must
    not exceed the measured image volume plus a surface-layer slack of
    2 h_vox times the deformed boundary area.
    """
    pos = y.positions
    dets = det(deformation_gradients(mesh, y))
    bad = [int(i) for i in np.nonzero(dets <= 0.0)[0]]
    integral = float(np.dot(dets, mesh.volumes))
    vox = _voxel_image_volume(mesh, pos, h_vox)
    tri = mesh.bface_nodes
    a = pos[tri[:, 0]]
    area = 0.5 * np.linalg.norm(
        np.cross(pos[tri[:, 1]] - a, pos[tri[:, 2]] - a), axis=1
    ).sum()
    slack = 2.0 * h_vox * float(area)
    return AdmissibilityReport(
        orientation_ok=len(bad) == 0,
        bad_elements=bad,
        min_det=float(dets.min()),
        det_integral=integral,
        voxel_volume=vox,
        slack=slack,
        h_vox=h_vox,
        injectivity_ok=bool(integral <= vox + slack),
    )


# ----------------------------------------------------------------------
# Exhaustive reference


@dataclasses.dataclass
class OracleResult:
    num_phases: int
    num_tets: int
    energies: np.ndarray        # tight-solve energy per labeling
    objectives: np.ndarray      # energy + dissipation from the anchor field
    best_index: int
    best_labels: np.ndarray
    best_objective: float

    def stability_margin(self, mesh, metric, z_ref, e_ref):
        """Worst margin of (e_ref, z_ref) against every labeling."""
        worst = math.inf
        arg = -1
        for idx in range(len(self.energies)):
            labels = decode_labeling(idx, self.num_phases, self.num_tets)
            if np.array_equal(labels, z_ref.labels):
                continue
            cand = PhaseField(labels, self.num_phases)
            margin = (
                self.energies[idx]
                + total_dissipation(mesh, z_ref, cand, metric)
                - e_ref
            )
            if margin < worst:
                worst, arg = margin, idx
        return worst, arg


def oracle_enumerate(t, mesh, model, program, metric, z_prev, y_start, config,
                     tol_g=1e-7, max_iters=2000):
    """Global reference by exhaustive labeling enumeration with tight
    deformation solves.  Exponential cost; callers enforce the caps."""
    tight = config.replace(tol_g=tol_g, max_y_iters=max_iters)
    P = model.num_phases
    m = mesh.num_tets
    total = P ** m
    energies = np.empty(total)
    objectives = np.empty(total)
    for idx in range(total):
        labels = decode_labeling(idx, P, m)
        cand = PhaseField(labels, P)
        y_cand, _ = minimize_y(t, mesh, cand, y_start, model, program, tight)
        e = energy_breakdown(t, mesh, y_cand, cand, model, program,
                             smoothed=True).total
        energies[idx] = e
        objectives[idx] = e + total_dissipation(mesh, z_prev, cand, metric)
    best = int(np.argmin(objectives))
    return OracleResult(
        num_phases=P,
        num_tets=m,
        energies=energies,
        objectives=objectives,
        best_index=best,
        best_labels=decode_labeling(best, P, m),
        best_objective=float(objectives[best]),
    )
