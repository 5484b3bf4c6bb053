"""Closed-loop scenario engine and run metrics.

Per step ``k``:

1. advance the plant with the previous input and sampled process noise;
2. switch the spoofer on if a trigger distance is set and reached, then
   sample the three sensor outputs (spoofed while inside the range);
3. form the attack residual from Est. 1's *previous* estimate, update the
   CUSUM statistic and decide the mode;
4. update Est. 1 (GPS gated off while the alarm is raised) and Est. 2
   (IMU-only during an alarm, otherwise a copy of Est. 1);
5. in EMERGENCY feed the attacker tracker and re-solve the escape MPC,
   otherwise run the robust tracking controller on Est. 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import alt as alt_mod
from .config import ScenarioConfig
from .controller import detour_goal, robust_control
from .detector import ControlMode, DetectorState, cusum_step, decide, estimate_attack, innovation_covariance
from .errors import SpoofGuardError
from .escape import EscapeProblem, escape_time, solve_escape_potential, solve_escape_tube
from .estimator import EstimatorMode, EstimatorState, predict_covariance_gps_denied, update
from .model import Attacker, TrueState, distance, in_range, measure, step_dynamics
from .optim import SolverOptions
from .rng import NoiseStreams


class SimulationError(SpoofGuardError):
    """A run aborted; ``trace`` holds the steps completed so far."""

    def __init__(self, message: str, trace: "ScenarioTrace", cause: SpoofGuardError | None = None):
        super().__init__(message)
        self.trace = trace
        self.cause = cause
        if cause is not None:
            self.category = cause.category
            self.exit_code = cause.exit_code


def trace_columns(model) -> list[str]:
    """Trace CSV header for a model's dimensions (see ``docs/trace_schema.md``)."""
    n, mG, mI, mS, mu = model.n, model.m_G, model.m_I, model.m_S, model.m_u
    k = len(model.pos_index)
    cols = ["k", "t"]
    cols += [f"x_{i}" for i in range(n)]
    cols += [f"est1_{i}" for i in range(n)]
    cols += [f"est2_{i}" for i in range(n)]
    cols += [f"yG_{i}" for i in range(mG)]
    cols += [f"yI_{i}" for i in range(mI)]
    cols += [f"yS_{i}" for i in range(mS)]
    cols += [f"dhat_{i}" for i in range(mG)]
    cols += ["S", "threshold", "mode"]
    cols += [f"u_{i}" for i in range(mu)]
    cols += [f"alt_p{i}" for i in range(k)] + ["alt_eta"]
    cols += [f"alt_var_p{i}" for i in range(k)] + ["alt_var_eta"]
    cols += ["trP_est1", "trP_est2", "in_range", "attack_active", "k_a", "k_esc", "controller",
             "solver_iters", "solver_violation", "potential_cost"]
    return cols


EVENT_COLUMNS = ["k", "event", "value"]


@dataclass
class ScenarioTrace:
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    events: list[tuple] = field(default_factory=list)
    seed: int | None = None

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        vals = [r[j] for r in self.rows]
        if name in ("mode", "controller"):
            return np.array(vals, dtype=object)
        return np.array(vals, dtype=float)

    def block(self, prefix: str) -> np.ndarray:
        idx = [j for j, c in enumerate(self.columns) if c.startswith(prefix) and c[len(prefix):].isdigit()]
        return np.array([[r[j] for j in idx] for r in self.rows], dtype=float).reshape(len(self.rows), len(idx))

    def event_steps(self, name: str) -> list[int]:
        return [k for k, e, _ in self.events if e == name]

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class _Episode:
    k_a: int
    k_esc: int
    problem: EscapeProblem
    P_escape: np.ndarray
    use_potential: bool
    last_plan: np.ndarray | None = None


def _escape_problem(cfg: ScenarioConfig, k_a: int, k_esc: int) -> EscapeProblem:
    esc, con = cfg.section("escape"), cfg.section("constraints")
    return EscapeProblem(
        k_a=k_a,
        k_esc=k_esc,
        N=k_esc + int(esc["N_offset"]),
        Q=np.diag(esc["Q_diag"]),
        R=np.diag(esc["R_diag"]),
        x_goal=cfg.goal,
        r_effect=cfg.r_effect,
        beta=float(esc["beta"]),
        gamma=float(esc["gamma"]),
        v_max=float(con["v_max"]),
        u_max=float(con["u_max"]),
        min_horizon=int(esc["min_horizon"]),
    )


def run_scenario(
    cfg: ScenarioConfig,
    seed: int,
    until: Callable[[ScenarioTrace], bool] | None = None,
    steps: int | None = None,
) -> ScenarioTrace:
    """Simulate one closed-loop run.

    Identical ``(cfg, seed)`` give identical traces. ``until`` is checked
    after every step and ends the run early when it returns true.
    """
    model = cfg.model
    att_cfg, det_cfg, alt_cfg = cfg.section("attacker"), cfg.section("detector"), cfg.section("alt")
    esc_cfg, rob_cfg, con = cfg.section("escape"), cfg.section("robust"), cfg.section("constraints")
    est_cfg = cfg.section("estimator")
    n_steps = int(cfg.section("sim")["steps"] if steps is None else steps)
    u_max, v_max = float(con["u_max"]), float(con["v_max"])
    gains = (float(rob_cfg["kp"]), float(rob_cfg["kd"]))
    goal = cfg.goal
    goal_pos = model.position(goal)
    r_eff = cfg.r_effect
    solver_opts = SolverOptions(max_iter=int(esc_cfg["max_iter"]), gtol=float(esc_cfg["gtol"]))

    noise = NoiseStreams(seed)
    trace = ScenarioTrace(columns=trace_columns(model), seed=seed)

    x = TrueState(cfg.start, 0)
    P0 = float(est_cfg["P0_scale"]) * np.eye(model.n)
    est1 = EstimatorState(cfg.start.copy(), P0, EstimatorMode.GPS_IMU)
    est2 = est1
    det = DetectorState(delta=float(det_cfg["delta"]), alpha=float(det_cfg["alpha"]), df=model.m_G)
    tracker: alt_mod.AttackerEstimate | None = None
    episode: _Episode | None = None
    active = bool(att_cfg["enabled"]) and att_cfg["trigger_distance"] is None
    was_inside = False
    goal_reached = False

    u = robust_control(est1.x_hat, goal, gains, model, u_max, v_max)

    def attacker_at(k):
        pos = np.asarray(att_cfg["position"], dtype=float) + k * np.asarray(att_cfg["drift"], dtype=float)
        return Attacker(pos, float(att_cfg["eta"]), np.asarray(att_cfg["d"], dtype=float), r_eff)

    k = 0
    try:
        for k in range(1, n_steps + 1):
            w = noise.gaussian("process", model.Sigma_w)
            x_prev = x
            x = step_dynamics(model, x, u, w)
            attacker = attacker_at(k)
            if (
                not active
                and att_cfg["enabled"]
                and att_cfg["trigger_distance"] is not None
                and distance(model, x.x, attacker.x_a) <= float(att_cfg["trigger_distance"])
            ):
                active = True
                trace.events.append((k, "attack_start", ""))
            inside = active and in_range(model, x.x, attacker)
            v = (
                noise.gaussian("gps", model.Sigma_G),
                noise.gaussian("imu", model.Sigma_I),
                noise.gaussian("rssi", model.Sigma_S),
            )
            y = measure(model, x, x_prev, attacker, inside, v)
            if inside and not was_inside:
                trace.events.append((k, "range_entry", ""))
            if was_inside and not inside:
                trace.events.append((k, "range_exit", ""))
            was_inside = inside

            # detection on the previous Est. 1 estimate
            d_hat = estimate_attack(y.y_G, est1.x_hat, u, model)
            P_d = innovation_covariance(est1.P, model)
            prev_mode = det.mode
            det = decide(cusum_step(det, d_hat, P_d))
            emergency = det.mode is ControlMode.EMERGENCY

            gate = emergency and est_cfg["gate_gps_on_alarm"]
            est1_mode = EstimatorMode.IMU_ONLY if gate else EstimatorMode.GPS_IMU
            est1_new = update(est1.with_mode(est1_mode), u, y.y_G, y.y_I, model)
            if emergency:
                base = est2 if prev_mode is ControlMode.EMERGENCY else est1
                est2 = update(base.with_mode(EstimatorMode.IMU_ONLY), u, None, y.y_I, model)
            else:
                est2 = est1_new
            est1 = est1_new

            controller = "ROBUST"
            stats: dict = {}
            if emergency:
                if prev_mode is ControlMode.ROBUST:
                    trace.events.append((k, "detection", ""))
                    k_esc = escape_time(est2.P, float(esc_cfg["zeta"]), float(esc_cfg["alpha"]), model)
                    prob = _escape_problem(cfg, k, k_esc)
                    P_esc = predict_covariance_gps_denied(est2.P, k_esc, model)[-1] if k_esc > 0 else est2.P
                    variant = esc_cfg["controller"]
                    episode = _Episode(k, k_esc, prob, P_esc, use_potential=(variant == "POTENTIAL"))
                    trace.events.append((k, "escape_time", k_esc))
                    trace.events.append((k + k_esc, "deadline", ""))
                    uav_pos = model.position(est2.x_hat)
                    if tracker is None or tracker.n_updates == 0:
                        # (re)seed unless an earlier episode already localized something
                        eta0 = alt_cfg["eta0"]
                        if eta0 is None:
                            # known effective range: power implied by the genuine strength at r_effect
                            eta0 = model.eta_S * r_eff**2 / float(model.C_S[0])
                        tracker = alt_mod.initial_estimate(
                            uav_pos,
                            eta0=float(eta0),
                            offset=alt_cfg["offset"],
                            P0=np.diag(alt_cfg["P0_diag"]),
                            Sigma_wa=np.diag(alt_cfg["Sigma_wa_diag"]),
                            M=int(alt_cfg["M"]),
                        )
                    else:
                        tracker = alt_mod.AttackerEstimate(
                            tracker.z_hat, tracker.P_a, tracker.Sigma_wa, tracker.M, (), tracker.n_updates
                        )
                tracker = alt_mod.step(tracker, y.y_S, model.position(est2.x_hat), model)
                u, controller, stats = _escape_input(cfg, model, episode, est2, tracker, k, solver_opts, trace)
            else:
                if prev_mode is ControlMode.EMERGENCY:
                    trace.events.append((k, "recovered", ""))
                    episode = None
                target = goal
                if tracker is not None and tracker.n_updates > 0:
                    target = goal.copy()
                    target[list(model.pos_index)] = detour_goal(
                        model.position(est1.x_hat), goal_pos, tracker.position, r_eff + float(rob_cfg["avoid_margin"])
                    )
                u = robust_control(est1.x_hat, target, gains, model, u_max, v_max)

            if not goal_reached and np.linalg.norm(model.position(x.x) - goal_pos) <= float(cfg.section("sim")["goal_tolerance"]):
                goal_reached = True
                trace.events.append((k, "goal_reached", ""))

            trace.rows.append(_row(model, k, x, est1, est2, y, d_hat, det, u, tracker, inside, active, episode, controller, stats))
            if until is not None and until(trace):
                break
    except SpoofGuardError as exc:
        raise SimulationError(f"run aborted at step {k} (seed {seed}): {exc}", trace, exc) from exc
    return trace


def _escape_input(cfg, model, episode: _Episode, est2, tracker, k, opts, trace):
    prob = episode.problem
    plan = None
    controller = "POTENTIAL"
    if not episode.use_potential:
        plan = solve_escape_tube(
            est2, tracker, prob, model, k=k, P_escape=episode.P_escape, u_init=episode.last_plan, options=opts
        )
        controller = "TUBE"
        if not plan.feasible and cfg.section("escape")["controller"] == "TUBE_WITH_FALLBACK":
            trace.events.append((k, "tube_infeasible", ""))
            episode.use_potential = True
            episode.last_plan = None
            plan = None
    if plan is None:
        plan = solve_escape_potential(est2, tracker, prob, model, k=k, u_init=episode.last_plan, options=opts)
        controller = "POTENTIAL"
    # receding horizon: keep the tail as the next warm start
    episode.last_plan = plan.u_seq[1:] if plan.u_seq.shape[0] > 1 else None
    return plan.first_input.copy(), controller, plan.solver_stats


def _row(model, k, x, est1, est2, y, d_hat, det, u, tracker, inside, active, episode, controller, stats):
    kpos = len(model.pos_index)
    if tracker is not None:
        alt_vals = list(tracker.z_hat) + list(np.diag(tracker.P_a))
    else:
        alt_vals = [math.nan] * (2 * (kpos + 1))
    row = [k, k * model.dt]
    row += list(x.x) + list(est1.x_hat) + list(est2.x_hat)
    row += list(y.y_G) + list(y.y_I) + list(y.y_S) + list(d_hat)
    row += [det.S, det.threshold, det.mode.value]
    row += list(u) + alt_vals
    row += [
        float(np.trace(est1.P)),
        float(np.trace(est2.P)),
        int(inside),
        int(active),
        episode.k_a if episode is not None else math.nan,
        episode.k_esc if episode is not None else math.nan,
        controller,
        stats.get("iterations", math.nan),
        stats.get("violation", math.nan),
        stats.get("potential_cost", math.nan),
    ]
    return row


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _episode_start(mode: np.ndarray, j: int) -> int:
    while j > 0 and mode[j - 1] == ControlMode.EMERGENCY.value:
        j -= 1
    return j


def trace_metrics(
    trace: ScenarioTrace, zeta: float = 3.0, goal=None, goal_tolerance: float = 5.0, vel_index=None
) -> dict:
    """Per-run summary of the first attack episode.

    Detection is the first EMERGENCY step at or after true range entry;
    ``k_a`` is the step its episode started. The error is the full-state
    norm between truth and the control estimate (Est. 2) while inside the
    range before the exit. ``vel_index`` adds the peak true speed.
    """
    if len(trace) == 0:
        raise ValueError("cannot compute metrics of an empty trace")
    k = trace.column("k").astype(int)
    mode = trace.column("mode")
    inside = trace.column("in_range") > 0.5
    X = trace.block("x_")
    E2 = trace.block("est2_")
    k_esc_col = trace.column("k_esc")
    u = trace.block("u_")

    emergency = mode == ControlMode.EMERGENCY.value
    # a no-attack run has no entry; alarms there are false alarms
    out = {
        "steps": int(len(k)),
        "alarm_steps": int(emergency.sum()),
        "false_alarm_steps": int((emergency & ~inside).sum()),
        "max_input_norm": float(np.linalg.norm(u, axis=1).max()),
        "range_entry": math.nan,
        "detected": False,
        "detection_step": math.nan,
        "detection_latency": math.nan,
        "k_a": math.nan,
        "k_esc": math.nan,
        "exit_step": math.nan,
        "exited": False,
        "exit_in_time": False,
        "exit_delay": math.nan,
        "max_error": math.nan,
        "error_within_zeta": False,
    }
    if vel_index is not None:
        out["max_speed"] = float(np.linalg.norm(X[:, list(vel_index)], axis=1).max())
    if goal is not None:
        goal = np.asarray(goal, dtype=float)
        pos_dim = len(goal)
        out["final_goal_distance"] = float(np.linalg.norm(X[-1, :pos_dim] - goal))
        out["goal_reached"] = bool(out["final_goal_distance"] <= goal_tolerance)

    entries = np.flatnonzero(inside)
    if entries.size == 0:
        return out
    j_entry = int(entries[0])
    out["range_entry"] = int(k[j_entry])
    det_idx = np.flatnonzero(emergency[j_entry:])
    if det_idx.size == 0:
        return out
    j_det = j_entry + int(det_idx[0])
    j_a = _episode_start(mode, j_det)
    out.update(
        detected=True,
        detection_step=int(k[j_det]),
        detection_latency=int(k[j_det] - k[j_entry]),
        k_a=int(k[j_a]),
        k_esc=int(k_esc_col[j_det]),
    )
    after = np.flatnonzero(~inside[j_det:])
    j_exit = j_det + int(after[0]) if after.size else None
    if j_exit is not None:
        out["exit_step"] = int(k[j_exit])
        out["exited"] = True
        deadline = out["k_a"] + out["k_esc"]
        out["exit_in_time"] = bool(out["exit_step"] <= deadline)
        out["exit_delay"] = int(out["exit_step"] - deadline)
    stop = j_exit if j_exit is not None else len(k)
    err = np.linalg.norm(X[j_entry:stop] - E2[j_entry:stop], axis=1)
    out["max_error"] = float(err.max()) if err.size else 0.0
    out["error_within_zeta"] = bool(out["max_error"] <= zeta)
    return out


# ---------------------------------------------------------------------------
# detector calibration under H0
# ---------------------------------------------------------------------------

@dataclass
class CalibrationResult:
    """Detector behaviour on attack-free runs.

    ``statistic`` and ``S`` have shape ``(runs, steps)``.
    """

    statistic: np.ndarray
    S: np.ndarray
    threshold: float

    @property
    def mean_statistic(self) -> float:
        return float(self.statistic.mean())

    @property
    def alarm_step_rate(self) -> float:
        """Fraction of steps with ``S > threshold`` (time spent in EMERGENCY)."""
        return float((self.S > self.threshold).mean())

    @property
    def alarm_run_rate(self) -> float:
        """Fraction of runs with at least one alarm."""
        return float((self.S > self.threshold).any(axis=1).mean())


def detector_calibration(cfg: ScenarioConfig, seeds, steps: int = 500) -> CalibrationResult:
    """Run plant, GPS+IMU estimator and CUSUM without an attacker, batched over seeds.

    The estimator never gates GPS here, so every run shares one gain
    sequence and the statistic keeps its nominal chi-square law. Noise for
    seed ``s`` comes from the same streams :func:`run_scenario` would use.
    """
    from .detector import threshold as cusum_threshold
    from .estimator import gain, propagate_covariance, stacked

    model = cfg.model
    seeds = list(seeds)
    R = len(seeds)
    if R == 0 or steps <= 0:
        raise ValueError("need at least one seed and one step")
    det_cfg, rob_cfg, con = cfg.section("detector"), cfg.section("robust"), cfg.section("constraints")
    delta, alpha = float(det_cfg["delta"]), float(det_cfg["alpha"])
    gains = (float(rob_cfg["kp"]), float(rob_cfg["kd"]))
    u_max, v_max = float(con["u_max"]), float(con["v_max"])

    def block(channel, cov):
        return np.stack([NoiseStreams(s).gaussian_block(channel, cov, steps) for s in seeds], axis=1)

    W, VG, VI = block("process", model.Sigma_w), block("gps", model.Sigma_G), block("imu", model.Sigma_I)
    A, B, CG, CI = model.A, model.B, model.C_G, model.C_I
    st = stacked(model, EstimatorMode.GPS_IMU)
    X = np.tile(cfg.start, (R, 1))
    Xh = X.copy()
    P = float(cfg.section("estimator")["P0_scale"]) * np.eye(model.n)
    U = robust_control(Xh, cfg.goal, gains, model, u_max, v_max)
    S = np.zeros(R)
    stat_out = np.empty((R, steps))
    S_out = np.empty((R, steps))
    for k in range(steps):
        X_prev = X
        X = X @ A.T + U @ B.T + W[k]
        yG = X @ CG.T + VG[k]
        yI = (X - X_prev) @ CI.T + VI[k]
        x_pred = Xh @ A.T + U @ B.T
        d_hat = yG - x_pred @ CG.T
        P_d = innovation_covariance(P, model)
        stat = np.einsum("ri,ij,rj->r", d_hat, np.linalg.inv(P_d), d_hat)
        S = delta * S + stat
        K = gain(P, model, EstimatorMode.GPS_IMU, st)
        innov = np.hstack([d_hat, yI - (x_pred - Xh) @ CI.T])
        Xh = x_pred + innov @ K.T
        P = propagate_covariance(P, K, model, EstimatorMode.GPS_IMU, st)
        U = robust_control(Xh, cfg.goal, gains, model, u_max, v_max)
        stat_out[:, k] = stat
        S_out[:, k] = S
    return CalibrationResult(stat_out, S_out, cusum_threshold(model.m_G, alpha, delta))


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

def _run_one(args):
    cfg, seed, until = args
    try:
        trace = run_scenario(cfg, seed, until=until)
        m = trace_metrics(
            trace,
            zeta=float(cfg.section("escape")["zeta"]),
            goal=cfg.model.position(cfg.goal),
            goal_tolerance=float(cfg.section("sim")["goal_tolerance"]),
            vel_index=cfg.model.vel_index,
        )
        return {"seed": seed, "ok": True, "error": "", **m}
    except SpoofGuardError as exc:
        return {"seed": seed, "ok": False, "error": f"{exc.category}: {exc}"}


def stop_after_exit(trace: ScenarioTrace) -> bool:
    """``until`` predicate: first range exit after the first in-range detection."""
    entries = trace.event_steps("range_entry")
    if not entries:
        return False
    det = [k for k in trace.event_steps("detection") if k >= entries[0]]
    return bool(det) and any(k > det[0] for k in trace.event_steps("range_exit"))


def run_batch(cfg: ScenarioConfig, seeds, until=None, workers: int | None = None) -> list[dict]:
    """Per-seed metrics, in seed order; failed runs come back flagged with ``ok=False``.

    ``workers > 1`` spreads runs over processes; results do not depend on it.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("run_batch needs at least one seed")
    jobs = [(cfg, s, until) for s in seeds]
    if workers is not None and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def summarize(rows: list[dict]) -> dict:
    """Aggregate rates, means and percentiles over :func:`run_batch` rows."""
    ok = [r for r in rows if r.get("ok")]
    out = {"runs": len(rows), "failed": len(rows) - len(ok)}

    def rate(key, among=None):
        pool = ok if among is None else [r for r in ok if r.get(among)]
        return float(np.mean([bool(r[key]) for r in pool])) if pool else math.nan

    out["detected_rate"] = rate("detected")
    out["exit_in_time_rate"] = rate("exit_in_time", among="detected")
    out["error_within_zeta_rate"] = rate("error_within_zeta", among="detected")
    if ok and "goal_reached" in ok[0]:
        out["goal_reached_rate"] = rate("goal_reached")
    steps = sum(r["steps"] for r in ok)
    out["false_alarm_step_rate"] = sum(r["false_alarm_steps"] for r in ok) / steps if steps else math.nan
    for key in ("detection_latency", "k_esc", "exit_delay", "max_error", "max_speed"):
        vals = np.array([r[key] for r in ok], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            out[f"{key}_mean"] = float(vals.mean())
            for q in (50, 90):
                out[f"{key}_p{q}"] = float(np.percentile(vals, q))
    return out
