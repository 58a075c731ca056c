"""Multi-start first-order maximization of Q2 over control schedules.

Each trial draws an independent random control schedule, then climbs the
exact adjoint gradient with adaptive moment estimates plus a backtracking
line search (a step is accepted only if the objective does not decrease, so
every stored trace is monotone).  The distribution over trials and the best
trial together estimate how far the controlled source can push the
correlated part of the QFI at a given horizon.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import PostselectionTooUnlikely, QfifError, ValidationError
from .model import preset
from .adjoint import ControlChain, control_chain, grad_q2
from .qfi import fit_loglog

LEVEL_STRUCTURES = ("two_level", "dark_1", "dark_2", "pi_level")


@dataclass
class TrialResult:
    trial: int
    seed: tuple
    q2_init: float
    q2_final: float
    trace: list
    theta_final: np.ndarray | None
    failed: bool = False
    message: str = ""


@dataclass
class OptimizationRun:
    structure: str
    horizon: float
    num_steps: int
    config: dict
    trials: list = dc_field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def completed(self) -> list:
        return [t for t in self.trials if not t.failed]

    @property
    def num_failed(self) -> int:
        return sum(t.failed for t in self.trials)

    @property
    def best_index(self) -> int:
        done = self.completed
        if not done:
            raise QfifError("all optimization trials failed")
        best = max(done, key=lambda t: t.q2_final)
        return self.trials.index(best)

    @property
    def best_q2(self) -> float:
        return self.trials[self.best_index].q2_final

    def q2_distribution(self) -> np.ndarray:
        return np.array([t.q2_final for t in self.completed])

    def to_dict(self, include_controls: bool = False) -> dict:
        out = {
            "structure": self.structure, "horizon": self.horizon,
            "num_steps": self.num_steps, "config": self.config,
            "best_index": self.best_index, "best_q2": self.best_q2,
            "num_failed": self.num_failed, "wall_time_s": self.wall_time_s,
            "trials": [{
                "trial": t.trial, "q2_init": t.q2_init, "q2_final": t.q2_final,
                "iterations": len(t.trace) - 1, "failed": t.failed,
                "message": t.message,
                **({"theta_final": t.theta_final.tolist()}
                   if include_controls and t.theta_final is not None else {}),
            } for t in self.trials],
        }
        return out


def structure_chain(structure: str, horizon: float, num_steps: int,
                    gamma: float = 1.0) -> ControlChain:
    """Controlled chain of one of the studied level structures."""
    if structure not in LEVEL_STRUCTURES:
        raise ValidationError(
            f"unknown level structure {structure!r}; known: {LEVEL_STRUCTURES}")
    model = preset(structure, gamma=gamma, horizon=horizon, steps=num_steps)
    return control_chain(model)


def _run_trial(chain: ControlChain, num_steps: int, trial: int, seed: int,
               iters: int, init_scale: float, learning_rate: float,
               max_backtracks: int) -> TrialResult:
    rng = np.random.default_rng([seed, trial])
    theta = chain.random_theta(num_steps, init_scale, rng)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    m_acc = np.zeros_like(theta)
    v_acc = np.zeros_like(theta)
    try:
        rep = grad_q2(chain, theta)
    except PostselectionTooUnlikely as exc:
        return TrialResult(trial=trial, seed=(seed, trial), q2_init=np.nan,
                           q2_final=np.nan, trace=[], theta_final=None,
                           failed=True, message=str(exc))
    obj, grad = rep.objective, rep.grad
    trace = [obj]
    q2_init = obj
    for it in range(1, iters + 1):
        m_acc = beta1 * m_acc + (1 - beta1) * grad
        v_acc = beta2 * v_acc + (1 - beta2) * grad ** 2
        m_hat = m_acc / (1 - beta1 ** it)
        v_hat = v_acc / (1 - beta2 ** it)
        direction = m_hat / (np.sqrt(v_hat) + adam_eps)
        step = learning_rate
        accepted = False
        for _ in range(max_backtracks):
            cand = theta + step * direction
            try:
                rep = grad_q2(chain, cand)
            except PostselectionTooUnlikely:
                step *= 0.5
                continue
            if rep.objective >= obj:
                theta, obj, grad = cand, rep.objective, rep.grad
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        trace.append(obj)
    return TrialResult(trial=trial, seed=(seed, trial), q2_init=q2_init,
                       q2_final=obj, trace=trace, theta_final=theta)


def optimize_q2(structure: str, horizon: float, num_steps: int,
                trials: int = 100, iters: int = 150, seed: int = 1234,
                init_scale: float = 1.0, learning_rate: float = 0.15,
                max_backtracks: int = 10, gamma: float = 1.0,
                threads: int = 1) -> OptimizationRun:
    """Multi-start ascent of the discrete Q2 for a given level structure.

    Per-trial randomness is split from the base seed by the trial counter,
    so any trial is reproducible in isolation and the result is independent
    of the thread count.  Trials whose postselection probability collapses
    are marked failed and excluded from the distribution.
    """
    t0 = time.perf_counter()
    chain = structure_chain(structure, horizon, num_steps, gamma=gamma)
    run = OptimizationRun(
        structure=structure, horizon=horizon, num_steps=num_steps,
        config={"trials": trials, "iters": iters, "seed": seed,
                "init_scale": init_scale, "learning_rate": learning_rate,
                "max_backtracks": max_backtracks, "gamma": gamma})

    def work(k):
        return _run_trial(chain, num_steps, k, seed, iters, init_scale,
                          learning_rate, max_backtracks)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            run.trials = list(pool.map(work, range(trials)))
    else:
        run.trials = [work(k) for k in range(trials)]
    run.wall_time_s = time.perf_counter() - t0
    return run


def scaling_report(runs_by_structure: dict, seed: int = 0) -> dict:
    """Log-log exponent of best Q2 versus horizon per level structure.

    ``runs_by_structure`` maps a structure name to a list of
    ``(horizon, OptimizationRun)`` pairs; at least three horizons are needed
    per structure for a meaningful fit.
    """
    out = {}
    for structure, pairs in runs_by_structure.items():
        if len(pairs) < 3:
            raise ValidationError(
                f"need at least 3 horizons for {structure}, got {len(pairs)}")
        ts = [p[0] for p in pairs]
        best = [p[1].best_q2 for p in pairs]
        out[structure] = fit_loglog(ts, best, seed=seed)
    return out
