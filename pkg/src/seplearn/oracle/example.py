"""Two-step scalar example: model ``x+ = 3x + 2u + 2w`` then ``x+ = 3x + 3u``, plant
``xh+ = xh + u + w`` then ``xh+ = xh + u``, cost ``0.5 u1^2 + 0.5 xh2^2``.

X0 and W0 have unit variance and covariance ``rho``; W1 and the sensor noise
vanish. The optimal laws are affine in (x0, w0), so every route to them can be
compared coefficient by coefficient.
"""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonConvergence, SeplearnError
from ..lti import Dims, NoiseSpec, QuadraticCostSpec, TimeVaryingLinearSystem
from .affine import basis_from_names, exact_linear_strategy

TARGET = {"u0.x0": -0.5, "u1.x0": -0.25, "u1.w0": -0.5}
KEYS = ("u0.x0", "u1.x0", "u1.w0")
ANALYTIC_TOL = 1e-6
IDENTITY_TOL = 1e-9


def example_systems():
    model = TimeVaryingLinearSystem(A=[[[3.0]], [[3.0]]], B=[[[2.0]], [[3.0]]], D=[[[2.0]], [[0.0]]],
                                    C=[[[1.0]]] * 3, E=[[[0.0]]] * 3)
    plant = TimeVaryingLinearSystem(A=[[[1.0]], [[1.0]]], B=[[[1.0]], [[1.0]]], D=[[[1.0]], [[0.0]]],
                                    C=[[[1.0]]] * 3, E=[[[0.0]]] * 3)
    return model, plant


def example_noise(rho: float) -> NoiseSpec:
    dims = Dims(n=1, m=1, p=1, r=1, s=1, T=2)
    cov = np.zeros((dims.n_primitives,) * 2)
    cov[0, 0] = cov[1, 1] = 1.0
    cov[0, 1] = cov[1, 0] = rho
    return NoiseSpec(np.zeros(dims.n_primitives), cov, dims)


def example_cost(beta: float = 1.0) -> QuadraticCostSpec:
    return QuadraticCostSpec(Qx=np.zeros((2, 1, 1)), Ru=[[[0.0]], [[0.5]]], QT=[[0.5]], beta=beta)


def example_instance(rho: float = -0.5, beta: float = 1.0):
    """``(model, plant, noise, cost)`` for the given X0/W0 covariance."""
    model, plant = example_systems()
    return model, plant, example_noise(rho), example_cost(beta)


def oracle_solution(rho: float):
    """Optimal affine laws on the true plant over bases (x0) and (x0, w0)."""
    _, plant, noise, cost = example_instance(rho)
    basis = basis_from_names(noise, [["x0"], ["x0", "w0"]])
    coefs, J = exact_linear_strategy(plant, noise, cost, basis, labels=(("x0",), ("x0", "w0")))
    return coefs.as_dict(), J


def control_coefficients(plant, model, strategy, noise, plant_belief=None) -> dict:
    """Read the realized control's affine dependence on x0 and w0 off the closed loop."""
    from ..sim import rollout_primitives

    N = noise.dims.n_primitives
    prims = np.vstack([np.zeros(N), np.eye(N)])
    u = rollout_primitives(plant, model, strategy, noise, prims, plant_belief=plant_belief).u[:, :, 0]
    base = u[0]
    lin = u[1:] - base
    x0, w0 = noise.x0_slice.start, noise.w_slice(0).start
    return {"u0.x0": float(lin[x0, 0]), "u0.w0": float(lin[w0, 0]), "u0.1": float(base[0]),
            "u1.x0": float(lin[x0, 1]), "u1.w0": float(lin[w0, 1]), "u1.1": float(base[1])}


@dataclass
class ExampleReport:
    cov_sign: str
    rho: float
    oracle: dict                       # sign -> {"coefficients", "cost", "reproduces_target"}
    pipelines: dict = field(default_factory=dict)   # name -> {"coefficients", "stderr", "J1", "error"}
    checks: dict = field(default_factory=dict)      # name -> {"value", "threshold", "pass"}
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def failures(self):
        return [k for k, c in self.checks.items() if not c["pass"]]

    def to_dict(self, timing: bool = False) -> dict:
        out = {"cov_sign": self.cov_sign, "rho": self.rho, "oracle": self.oracle,
               "pipelines": self.pipelines, "checks": self.checks, "passed": self.passed}
        if timing:
            out["wall_clock"] = self.wall_clock
        return out

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"two-step example, cov(X0, W0) = {self.rho:+g}", ""]
        lines.append("oracle solutions by covariance sign:")
        for sign, o in sorted(self.oracle.items()):
            c = o["coefficients"]
            tag = "reproduces target laws" if o["reproduces_target"] else "differs from target laws"
            lines.append(f"  {sign}0.5: u0 = {c['u0.x0']:+.6f} x0; u1 = {c['u1.x0']:+.6f} x0 {c['u1.w0']:+.6f} w0;"
                         f" J = {o['cost']:.6f} ({tag})")
        lines.append("")
        lines.append(f"{'pipeline':<22}{'u0.x0':>12}{'u1.x0':>12}{'u1.w0':>12}{'J1':>12}")
        for name, p in self.pipelines.items():
            if p.get("error"):
                lines.append(f"{name:<22}  failed: {p['error']}")
                continue
            c = p["coefficients"]
            j1 = p.get("J1")
            lines.append(f"{name:<22}" + "".join(f"{c[k]:>12.6f}" for k in KEYS)
                         + (f"{j1:>12.6f}" if j1 is not None else f"{'':>12}"))
        lines.append("")
        for name, c in self.checks.items():
            lines.append(f"[{'PASS' if c['pass'] else 'FAIL'}] {name}: {c['value']:.3e} (limit {c['threshold']:.3e})")
        lines.append("")
        lines.append("PASS" if self.passed else "FAIL: " + ", ".join(self.failures()))
        return "\n".join(lines)


def _check(value, threshold, inclusive=True):
    value = float(value)
    ok = bool(np.isfinite(value) and (value <= threshold if inclusive else value < threshold))
    return {"value": value, "threshold": float(threshold), "pass": ok}


def _max_gap(a: dict, b: dict) -> float:
    return max(abs(a[k] - b[k]) for k in KEYS)


def reproduce_example(cov_sign: str = "-", episodes: int = 10_000, learn_episodes: int = 100_000,
                      n_outer: int = 2, seed: int = 0, workers: int = 1, dither: float = 0.1) -> ExampleReport:
    """Run every route to the optimal laws and cross-check them.

    Routes: (i) normal equations on the true plant, (ii) the matching strategy
    bound to the true plant response, (iii) the penalized tracking strategy with
    the paired Riccati pass, (iv) learning the response with the plant hidden.
    The shared-input reading of (iii) is reported as a diagnostic only.
    """
    from ..sim import closed_loop_learn, run_monte_carlo
    from ..solver import PlantResponse, bind_parameters, matching_strategy, paired_riccati, solve_tracking_lq

    if cov_sign not in ("+", "-"):
        raise ValueError("cov_sign must be '+' or '-'")
    t0 = time.perf_counter()
    rho = 0.5 if cov_sign == "+" else -0.5
    oracle = {}
    for sign, r in (("+", 0.5), ("-", -0.5)):
        c, J = oracle_solution(r)
        oracle[sign] = {"coefficients": c, "cost": J,
                        "reproduces_target": _max_gap(c, TARGET) <= ANALYTIC_TOL}
    rep = ExampleReport(cov_sign=cov_sign, rho=rho, oracle=oracle)
    model, plant, noise, cost = example_instance(rho)
    truth = PlantResponse.from_system(plant)
    ref = oracle[cov_sign]["coefficients"]
    rep.pipelines["oracle"] = {"coefficients": {k: ref[k] for k in KEYS}, "J1": oracle[cov_sign]["cost"]}

    strategies = {}

    def run(name, build):
        try:
            s = build()
            strategies[name] = s
            coefs = control_coefficients(plant, model, s, noise, truth)
            mc = run_monte_carlo(plant, model, s, noise, cost, episodes, seed, workers=workers,
                                 plant_belief=truth, keep_batch=True)
            rep.pipelines[name] = {"coefficients": coefs, "J1": mc.cost.J1_mean, "J1_stderr": mc.cost.J1_stderr,
                                   "J2": mc.cost.J2_mean, "penalty": mc.cost.penalty_mean}
            return mc
        except (SeplearnError, ValueError, np.linalg.LinAlgError) as exc:
            rep.pipelines[name] = {"error": f"{type(exc).__name__}: {exc}"}
            return None

    mc_match = run("matching", lambda: bind_parameters(matching_strategy(model, cost=cost), truth))
    run("tracking", lambda: bind_parameters(solve_tracking_lq(model, cost), truth))
    run("tracking_shared", lambda: paired_riccati(solve_tracking_lq(model, cost), truth, twin="shared"))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergence)
            learned = closed_loop_learn(plant, model, solve_tracking_lq(model, cost), noise, cost,
                                        n_outer=n_outer, n_inner=learn_episodes, seed=seed + 1,
                                        dither=dither, workers=workers)
        coefs = control_coefficients(plant, model, learned.strategy, noise, learned.response)
        groups = [control_coefficients(plant, model, bind_parameters(solve_tracking_lq(model, cost), g), noise, g)
                  for g in learned.group_responses]
        se = {k: float(np.std([g[k] for g in groups], ddof=1) / np.sqrt(len(groups))) if len(groups) > 1 else 0.0
              for k in KEYS}
        rep.pipelines["learned"] = {"coefficients": coefs, "stderr": se, "J1": learned.cost.J1_mean,
                                    "J1_stderr": learned.cost.J1_stderr, "converged": learned.converged}
    except (SeplearnError, ValueError, np.linalg.LinAlgError) as exc:
        rep.pipelines["learned"] = {"error": f"{type(exc).__name__}: {exc}"}

    def coef_of(name):
        p = rep.pipelines.get(name, {})
        return None if p.get("error") else p["coefficients"]

    inf = float("inf")
    for name in ("matching", "tracking"):
        c = coef_of(name)
        rep.checks[f"{name} agrees with oracle"] = _check(_max_gap(c, ref) if c else inf, ANALYTIC_TOL)
    c = coef_of("learned")
    if c:
        se = rep.pipelines["learned"]["stderr"]
        # noise-free residuals make the group spread vanish; keep a floor at the analytic tolerance
        worst = max(abs(c[k] - ref[k]) / max(4 * se[k], ANALYTIC_TOL) for k in KEYS)
    else:
        worst = inf
    rep.checks["learned agrees with oracle (units of max(4 se, 1e-6))"] = _check(worst, 1.0)

    if mc_match is not None:
        b = mc_match.batch
        rep.checks["pathwise x2 = xhat2"] = _check(np.max(np.abs(b.x[:, 2] - b.xhat[:, 2])), IDENTITY_TOL)
        rep.checks["pathwise x1 = xhat1"] = _check(np.max(np.abs(b.x[:, 1] - b.xhat[:, 1])), IDENTITY_TOL)
        rep.checks["stationarity |xhat1 + 2 u1|"] = _check(np.max(np.abs(b.xhat[:, 1, 0] + 2 * b.u[:, 1, 0])),
                                                          IDENTITY_TOL)
        j1, se = mc_match.cost.J1_mean, mc_match.cost.J1_stderr
        rep.checks["Monte Carlo J1 vs oracle cost (stderr units)"] = _check(
            abs(j1 - oracle[cov_sign]["cost"]) / max(se, 1e-15), 4.0)
    else:
        for k in ("pathwise x2 = xhat2", "pathwise x1 = xhat1", "stationarity |xhat1 + 2 u1|",
                  "Monte Carlo J1 vs oracle cost (stderr units)"):
            rep.checks[k] = _check(inf, 0.0)

    adjudicated = oracle["-"]["reproduces_target"] and not oracle["+"]["reproduces_target"]
    rep.checks["covariance sign adjudicated (-0.5 reproduces target laws)"] = _check(0.0 if adjudicated else 1.0, 0.0)
    if cov_sign == "-":
        rep.checks["target laws reproduced"] = _check(_max_gap(ref, TARGET), ANALYTIC_TOL)
    rep.wall_clock = time.perf_counter() - t0
    return rep
