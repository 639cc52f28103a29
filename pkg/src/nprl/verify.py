"""Verification bundle: exact oracles and short analytic fixtures, printed as a pass/fail table.

The fast bundle finishes in well under five minutes on one CPU core; ``long``
adds the pinned desk-scale training runs.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def load_oracles(path=None) -> dict:
    if path is None:
        return json.loads(resources.files("nprl").joinpath("oracles.json").read_text())
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read oracle file {path}: {exc}") from exc


def pearson_fraction(y, yp) -> Fraction:
    """Exact product-moment correlation of integer vectors, when its square is a perfect square ratio."""
    y = [Fraction(v) for v in y]
    yp = [Fraction(v) for v in yp]
    my, mp = sum(y) / len(y), sum(yp) / len(yp)
    num = sum((a - my) * (b - mp) for a, b in zip(y, yp))
    den2 = sum((a - my) ** 2 for a in y) * sum((b - mp) ** 2 for b in yp)
    r2 = num * num / den2
    root_n, root_d = _isqrt_exact(r2.numerator), _isqrt_exact(r2.denominator)
    if root_n is None or root_d is None:
        raise ValueError("correlation is irrational for these vectors")
    return Fraction(root_n, root_d) * (1 if num >= 0 else -1)


def _isqrt_exact(n: int):
    import math

    r = math.isqrt(n)
    return r if r * r == n else None


# ---------------------------------------------------------------------------- fast checks


def check_gradients(oracles: dict) -> tuple[bool, str]:
    from .gradcheck import gradient_suite

    cases = gradient_suite(seed=0)
    tol = oracles["gradient_tolerance"]
    worst = max(cases, key=lambda c: c.rel_error)
    bad = [c.name for c in cases if not c.rel_error < tol]
    detail = f"{len(cases)} configurations, worst {worst.rel_error:.2e} ({worst.name})"
    return not bad, detail + (f"; failing: {bad}" if bad else "")


def check_pearson(oracles: dict) -> tuple[bool, str]:
    from .predictivity import pearson_r

    exact = pearson_fraction([1, 2, 3, 4], [2, 1, 4, 3])
    got = pearson_r([1, 2, 3, 4], [2, 1, 4, 3])
    ok_fixed = exact == Fraction(oracles["pearson_fixed_case"]).limit_denominator(10 ** 6) and abs(got - float(exact)) < 1e-15
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 50))
        a, b = rng.normal(size=n), rng.normal(size=n)
        ma, mb = sum(a) / n, sum(b) / n
        num = sum((x - ma) * (z - mb) for x, z in zip(a, b))
        den = (sum((x - ma) ** 2 for x in a) * sum((z - mb) ** 2 for z in b)) ** 0.5
        worst = max(worst, abs(pearson_r(a, b) - num / den))
    ok = ok_fixed and worst < 1e-12
    return ok, f"fixed case {got!r} (exact {exact}), brute-force max deviation {worst:.1e} over 1000 pairs"


def check_architecture(oracles: dict) -> tuple[bool, str]:
    from .model import Head, TrunkConfig, build_model, parameter_count

    trunk = TrunkConfig()
    n_trunk = parameter_count(trunk)
    n_cls = parameter_count(trunk, Head.classifier(20)) - n_trunk
    n_duel = parameter_count(trunk, Head.dueling(6)) - n_trunk
    built = build_model(trunk, Head.classifier(20), seed=0).n_parameters()
    chain = trunk.spatial_sizes()
    ok = (n_trunk == oracles["trunk_parameters"] and n_cls == oracles["classifier20_head_parameters"]
          and n_duel == oracles["dueling6_head_parameters"] and built == n_trunk + n_cls
          and list(chain) == list(oracles["activation_chain_128"]))
    return ok, f"trunk {n_trunk:,}, +{n_cls} classifier-20, +{n_duel} dueling-6, chain 128->{'->'.join(map(str, chain))}"


def check_td_semantics(oracles: dict) -> tuple[bool, str]:
    from . import tensor as T
    from .dqn import dqn_loss, td_target
    from .model import Head, TrunkConfig, build_model, dueling_aggregate

    fixed = td_target(1.0, False, [0.5, 2.0], 0.9)
    terminal = td_target(3.0, True, [100.0, -4.0], 0.9)
    ok = abs(fixed - oracles["td_target_fixed_case"]) < 1e-12 and terminal == 3.0
    # the loss must not reach the target network
    trunk = TrunkConfig(resolution=32)
    online = build_model(trunk, Head.dueling(2), seed=0)
    target = build_model(trunk, Head.dueling(2), seed=1)
    rng = np.random.default_rng(0)
    batch = (rng.random((4, 3, 32, 32), dtype=np.float32), np.array([0, 1, 1, 0]), np.ones(4, np.float32),
             rng.random((4, 3, 32, 32), dtype=np.float32), np.array([False, True, False, False]))
    before = {k: p.data.copy() for k, p in target.params.items()}
    dqn_loss(batch, online, target, 0.9).backward()
    isolated = all(p.grad is None for p in target.params.values()) and all(
        np.array_equal(before[k], p.data) for k, p in target.params.items())
    v = T.Tensor(rng.normal(size=(5, 1)))
    a = T.Tensor(rng.normal(size=(5, 4)))
    q = dueling_aggregate(v, a).data
    centered = np.allclose(q.mean(axis=1, keepdims=True), v.data, atol=1e-12)
    argmax = np.array_equal(q.argmax(axis=1), a.data.argmax(axis=1))
    ok = ok and isolated and centered and argmax
    return ok, (f"td_target fixed {fixed!r}, terminal {terminal!r}; target isolated {isolated}; "
                f"dueling centered {centered}, argmax kept {argmax}")


def check_mdp(oracles: dict) -> tuple[bool, str]:
    from .dqn import greedy_q, train_dqn
    from .fixtures import mdp_anchor_config
    from .mdp import TwoStateEnv, state_image, value_iteration

    q_star = value_iteration(0.9)
    stored = np.array(oracles["mdp_q_star_gamma_0.9"])
    cfg = mdp_anchor_config()
    t0 = time.process_time()
    result = train_dqn("two-state-mdp", cfg, env=TwoStateEnv(cfg.resolution))
    q = np.array([greedy_q(result.model, state_image(s, cfg.resolution)) for s in (0, 1)])
    cpu = time.process_time() - t0
    err = float(np.abs(q - q_star).max())
    ok = np.allclose(q_star, stored, atol=1e-12) and err < oracles["mdp_tolerance"] and cpu < 60
    budget = "within" if cpu < 60 else "over"
    return ok, f"max |Q - Q*| = {err:.2e} after {result.updates} updates, {budget} the 60 s CPU budget"


def check_environment(oracles: dict) -> tuple[bool, str]:
    from .env import TASK_IDS, load_task, reset, step
    from .env.rollout import random_policy, replay_actions, run_episode
    from .env.world import is_wall

    notes = []
    ok = True
    for tid in TASK_IDS:
        task = load_task(tid)
        policy = random_policy(task, 1)
        ret, ticks, actions, rewards = run_episode(task, policy, seed=3)
        same = replay_actions(task, 3, actions) == rewards
        lo, hi = task.return_bounds()
        state, _ = reset(task, 5, render_frame=False)
        rng = np.random.default_rng(5)
        walls_ok = True
        for _ in range(10_000):
            if state.done:
                state, _ = reset(task, int(rng.integers(1 << 30)), render_frame=False)
            state, _, _, _ = step(state, task.actions[int(rng.integers(task.n_actions))], render_frame=False)
            walls_ok &= not is_wall(task.grid, state.x, state.y)
        good = same and lo <= ret <= hi and walls_ok
        ok &= good
        if not good:
            notes.append(f"{tid}: replay {same}, bounds {lo <= ret <= hi}, walls {walls_ok}")
    return ok, "six tasks: replay, bounds, wall clearance" + (f"; {notes}" if notes else "")


def check_ceiling(oracles: dict) -> tuple[bool, str]:
    from .predictivity import synthetic_ceiling

    c = synthetic_ceiling(0.5)
    return abs(c - oracles["ceiling_sigma_0.5"]) < 1e-12, f"1/sqrt(1 + 0.5^2) = {c!r}"


FAST_CHECKS = {
    "gradients": check_gradients,
    "pearson": check_pearson,
    "architecture": check_architecture,
    "td-semantics": check_td_semantics,
    "ceiling": check_ceiling,
    "environment": check_environment,
    "mdp-convergence": check_mdp,
}


# ---------------------------------------------------------------------------- long checks


def check_simpler_basic(oracles: dict, out: Path | None = None) -> tuple[bool, str]:
    from .dqn import train_dqn
    from .env.rollout import random_policy_stats
    from .fixtures import simpler_basic_config

    cfg = simpler_basic_config(0)
    base = random_policy_stats("simpler-basic", 100, seed=0)
    result = train_dqn("simpler-basic", cfg, out_dir=None if out is None else out / "simpler-basic")
    final = float(np.mean([m["return"] for m in result.metrics[-100:]]))
    margin = (final - base["mean"]) / base["std"]
    return margin >= 5.0, (f"final-100 mean {final:.1f} vs random {base['mean']:.1f} +- {base['std']:.1f} "
                           f"({margin:.1f} sd)")


def check_supervised(oracles: dict, out: Path | None = None) -> tuple[bool, str]:
    from .datasets import make_gratings, make_synthetic_mix
    from .fixtures import GRATINGS, MIX20, gratings_config, mix20_config
    from .model import TrunkConfig
    from .supervised import train_classifier

    g = make_gratings(**GRATINGS)
    rg = train_classifier(g, gratings_config(), trunk=TrunkConfig(resolution=g.resolution),
                          out_dir=None if out is None else out / "gratings")
    m = make_synthetic_mix(**MIX20)
    rm = train_classifier(m, mix20_config(), trunk=TrunkConfig(resolution=m.resolution),
                          out_dir=None if out is None else out / "mix20")
    acc_g = rg.curves[-1]["test_acc"]
    acc_m = max(r["test_acc"] for r in rm.curves)
    return acc_g > 0.95 and acc_m >= 0.70, f"gratings 1 epoch {acc_g:.3f}; mix-20 best {acc_m:.3f}"


LONG_CHECKS = {
    "supervised-fixtures": check_supervised,
    "dqn-simpler-basic": check_simpler_basic,
}


def run_checks(long: bool = False, oracles_path=None, out=None, echo=print) -> list[CheckResult]:
    oracles = load_oracles(oracles_path)
    out = Path(out) if out is not None else None
    results = []
    checks = list(FAST_CHECKS.items()) + (list(LONG_CHECKS.items()) if long else [])
    for name, fn in checks:
        t0 = time.time()
        try:
            ok, detail = fn(oracles, out) if name in LONG_CHECKS else fn(oracles)
        except Exception as exc:  # a crashing check is a failed check, reported by name
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(ok), detail, time.time() - t0)
        results.append(res)
        if echo is not None:
            echo(format_row(res))
    return results


def format_row(res: CheckResult) -> str:
    return f"{'PASS' if res.passed else 'FAIL':4}  {res.name:20} {res.seconds:7.1f}s  {res.detail}"
