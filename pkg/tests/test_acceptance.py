"""Acceptance criteria 1-14. Each test prints one PASS/FAIL line; the lines are
repeated in the terminal summary under "acceptance criteria"."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, tiny_config
from isacsim.channel import (conjugate_beamformer, effective_channel, steering_vector)
from isacsim.config import load_config
from isacsim.io import read_csv
from isacsim.marl import MlpParams, mlp_backward, mlp_forward, soft_update
from isacsim.marl.benchmark import run_benchmark
from isacsim.sensing import (EchoParams, beam_gain, beam_gain_derivative, crb_angle, crb_distance,
                             fim, measurement_variances, mse_bound_check, sense_target)
from isacsim.channel import LIGHT_SPEED
from isacsim.simulator import run_experiment
from isacsim.traffic import (CAV, ControlInput, VehicleState, cr_flag, cr_ratio, gap_report,
                             step_vehicle, ttc)
from isacsim.voi import SHORT, TrajectoryLog, estimate_values, kl_discrete_exact, kl_mc_estimate

# power audits gathered from every simulator run in this module (criterion 14)
AUDIT = {"runs": 0, "audits": 0, "violations": 0}


def verdict(n: int, ok: bool, what: str, detail: str) -> None:
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {what} ({detail})"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def audited(result):
    AUDIT["runs"] += 1
    AUDIT["audits"] += result.env.power_audits
    AUDIT["violations"] += result.env.power_violations
    return result


def random_beam(rng, n):
    g = rng.normal(size=n) + 1j * rng.normal(size=n)
    return g / np.linalg.norm(g)


def test_01_kinematics_conservation():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_y = worst_h = 0.0
    for i in range(1000):
        s = VehicleState(id=i, kind=CAV, lane=1, x=float(rng.uniform(0, 300)), y=2.0,
                         speed=float(rng.uniform(0, 40)), heading=0.0,
                         accel=float(rng.uniform(-3, 3)))
        ctl = ControlInput(u=float(rng.uniform(-5, 5)), alpha=0.0)
        for _ in range(10):
            nxt = step_vehicle(s, ctl, 0.1)
            worst_y = max(worst_y, abs(nxt.y - s.y))
            worst_h = max(worst_h, abs(nxt.heading - s.heading))
            s = nxt
    dt = time.perf_counter() - t0
    ok = worst_y < 1e-12 and worst_h < 1e-12 and dt < 1.0
    verdict(1, ok, "kinematics conservation", f"max|dy|={worst_y:.1e}, max|dtheta|={worst_h:.1e}, "
                                              f"{dt:.2f}s")


def test_02_ttc_cr_oracle():
    t0 = time.perf_counter()
    L, g0, vf, vl, dt, n_ticks = 4.0, 50.25, 15.0, 10.0, 0.1, 80
    f = VehicleState(id=0, kind=CAV, lane=1, x=0.0, y=2.0, speed=vf, length=L)
    lead = VehicleState(id=1, kind=CAV, lane=1, x=g0 + L, y=2.0, speed=vl, length=L)
    flags = []
    for _ in range(n_ticks):
        rep = gap_report(f, lead, 0.0)
        flags.append(cr_flag(ttc(f, lead, rep.gap), f.speed, f.accel, 1.0, 3.0).flag)
        f, lead = step_vehicle(f, ControlInput(), dt), step_vehicle(lead, ControlInput(), dt)
    simulated = cr_ratio(flags)
    # closed form: TTC_n = (g0 - n*dv*dt)/dv < 1 + vf/3  <=>  n > (g0 - th*dv)/(dv*dt)
    dv, th = vf - vl, 1.0 + vf / 3.0
    first = math.floor((g0 - th * dv) / (dv * dt)) + 1
    expected = (n_ticks - first) / n_ticks
    elapsed = time.perf_counter() - t0
    ok = simulated == expected and elapsed < 1.0
    verdict(2, ok, "TTC/CR oracle", f"simulated {simulated}, closed form {expected}, {elapsed:.3f}s")


def test_03_steering_and_beams():
    rng = np.random.default_rng(3)
    worst = 0.0
    for m in range(1, 65):
        for th in rng.uniform(-math.pi, math.pi, size=1000):
            worst = max(worst, abs(np.linalg.norm(steering_vector(th, m)) - 1.0))
    h = effective_channel(40.0, 1.1, 8)
    best = abs(np.vdot(h, conjugate_beamformer(h, 1.0)))
    losses = sum(abs(np.vdot(h, random_beam(rng, 8))) >= best for _ in range(1000))
    ok = worst <= 1e-12 and losses == 0
    verdict(3, ok, "steering norm and conjugate beam", f"max norm error {worst:.1e}, "
                                                        f"{losses}/1000 random beams at least as good")


def test_04_crb_closed_form():
    rng = np.random.default_rng(4)
    echo = EchoParams(sigma2_k=1e-6, sigma2_m=1e-6)
    s2 = float(rng.uniform(1e-20, 1e-16))
    d_ok = crb_distance(s2) == s2 * LIGHT_SPEED ** 2 / 4
    worst_half = 0.0
    for _ in range(100):
        f = random_beam(rng, 8)
        th, d = float(rng.uniform(0.1, 3.0)), float(rng.uniform(5, 200))
        rel = abs(crb_angle(math.sqrt(2) * f, th, d, echo) / crb_angle(f, th, d, echo) - 0.5) / 0.5
        worst_half = max(worst_half, rel)
    min_eig = math.inf
    for _ in range(1000):
        f = random_beam(rng, int(rng.integers(1, 17)))
        J = fim([rng.uniform(0.05, 3.1), rng.uniform(1, 300), rng.uniform(0, 30)], f, echo,
                float(rng.uniform(1e-20, 1e-16)), float(rng.uniform(1e-20, 1e-16))).fim
        min_eig = min(min_eig, float(np.linalg.eigvalsh(J / np.abs(J).max()).min()))
    ok = d_ok and worst_half < 1e-9 and min_eig >= -1e-10
    verdict(4, ok, "CRB closed forms and FIM PSD", f"range CRB exact={d_ok}, angle halving error "
                                                   f"{worst_half:.1e}, min eigenvalue {min_eig:.1e}")


def test_05_analytic_derivative():
    rng = np.random.default_rng(5)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(2, 17))
        f = random_beam(rng, m)
        th = float(rng.uniform(0.05, math.pi - 0.05))
        fd = (beam_gain(f, th + h) - beam_gain(f, th - h)) / (2 * h)
        an = beam_gain_derivative(f, th)
        worst = max(worst, abs(an - fd) / abs(an))
    verdict(5, worst < 1e-6, "analytic beam-gain derivative", f"max relative error {worst:.1e}")


def test_06_noise_calibration():
    rng = np.random.default_rng(6)
    echo = EchoParams(sigma2_k=1e-4, sigma2_m=1e-4)
    f = steering_vector(1.0, 8)
    d, th, speed = 30.0, 1.0, 12.0
    ms = [sense_target(d, th, speed, f, echo, rng) for _ in range(100_000)]
    dist = np.array([m.distance for m in ms])
    ang = np.array([m.angle for m in ms])
    var_d = measurement_variances(f, th, d, echo)[0]
    rel = abs(np.var(dist) / var_d - 1)
    rep = mse_bound_check({"d": dist, "theta": ang}, {"d": d, "theta": th},
                          {"d": ms[0].crb_distance, "theta": ms[0].crb_angle})
    ok = rel < 0.05 and rep.violated == []
    verdict(6, ok, "measurement-noise calibration",
            f"variance off by {100 * rel:.2f}%, MSE/CRB d={rep.ratio['d']:.3f} "
            f"theta={rep.ratio['theta']:.3f}")


def _tables(rng, n):
    pij = rng.dirichlet(np.ones(n * n)).reshape(n, n)
    num = rng.dirichlet(np.ones(n), size=n)
    joint = np.einsum("ij,ia->aij", pij, num)
    p_aj = joint.sum(axis=1)
    return joint, num, (p_aj / p_aj.sum(axis=0)).T


def _table_sampler(joint):
    flat = joint.ravel()

    def draw(rng, n):
        return np.unravel_index(rng.choice(flat.size, size=n, p=flat), joint.shape)
    return draw


def test_07_kl_estimator():
    from scipy.stats import norm
    rng = np.random.default_rng(7)
    sampler = lambda r, n: (r.normal(size=n), np.zeros(n), np.zeros(n))
    t0 = time.perf_counter()
    g = kl_mc_estimate(sampler, lambda a, s: norm.pdf(a), lambda a, s: norm.pdf(a, 1.0), 100_000, rng)
    elapsed = time.perf_counter() - t0
    gauss_ok = abs(g.kl - 0.7213475) <= 3 * g.sigma and elapsed < 5.0
    disc_ok = True
    for _ in range(5):
        joint, num, den = _tables(rng, 4)
        exact = kl_discrete_exact(joint, num, den)
        rec = kl_mc_estimate(_table_sampler(joint), lambda a, s: num[s, a], lambda a, s: den[s, a],
                             100_000, rng)
        disc_ok &= abs(rec.kl - exact) <= 3 * rec.sigma
    pa = rng.dirichlet(np.ones(4))
    joint = np.einsum("a,i,j->aij", pa, np.ones(4) / 4, np.ones(4) / 4)
    table = np.tile(pa, (4, 1))
    ind = kl_mc_estimate(_table_sampler(joint), lambda a, s: table[s, a], lambda a, s: table[s, a],
                         100_000, rng)
    ind_ok = abs(ind.kl) <= 3 * ind.sigma + 1e-15
    verdict(7, gauss_ok and disc_ok and ind_ok, "KL estimator",
            f"Gaussian {g.kl:.4f}+-{g.sigma:.4f} bits in {elapsed:.2f}s, 4-state cases ok={disc_ok}, "
            f"independent {ind.kl:.1e}")


def test_08_voi_ordering():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        log = TrajectoryLog(maxlen=1000)
        for _ in range(500):
            cands = {1: rng.normal(size=6), 2: rng.normal(size=6)}
            log.observe(0, SHORT, rng.normal(size=6), cands)
            log.resolve(0, SHORT, cands[1][:2] + 0.1 * rng.normal(size=2))
        recs = {r.source: r.kl for r in estimate_values(log, 0, SHORT, [1, 2], 1000, rng)}
        wins += recs[1] > recs[2]
    verdict(8, wins >= 19, "VoI ordering", f"dependent source ranked first in {wins}/20 trials")


def test_09_backprop_exactness():
    rng = np.random.default_rng(9)
    h = 1e-5
    worst = 0.0
    for trial in range(10):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 6))] + [int(rng.integers(2, 9)) for _ in range(depth)] + \
                [int(rng.integers(1, 4))]
        p = MlpParams.init(sizes, ("linear", "tanh")[trial % 2], rng, final_scale=0.5)
        for b in p.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(4, sizes[0]))
        gout = rng.normal(size=(4, sizes[-1]))
        _, cache = mlp_forward(p, x)
        grads, _ = mlp_backward(p, cache, gout)
        loss = lambda: float(np.sum(mlp_forward(p, x)[0] * gout))
        for t, g in zip(p.tensors(), grads):
            num = np.zeros_like(t)
            for idx in np.ndindex(t.shape):
                old = t[idx]
                t[idx] = old + h
                up = loss()
                t[idx] = old - h
                num[idx] = (up - loss()) / (2 * h)
                t[idx] = old
            worst = max(worst, float(np.abs(g - num).max() / max(np.abs(num).max(), 1e-8)))
    verdict(9, worst < 1e-4, "backprop exactness", f"max relative error {worst:.1e} over 10 nets")


def test_10_soft_update_closed_form():
    rng = np.random.default_rng(10)
    m = MlpParams.init([6, 32, 32, 2], rng=rng, final_scale=1.0)
    t = MlpParams.init([6, 32, 32, 2], rng=rng, final_scale=1.0)
    t0 = [x.copy() for x in t.tensors()]
    rate, n = 0.005, 200
    for _ in range(n):
        soft_update(m, t, rate)
    k = (1 - rate) ** n
    err = max(float(np.abs(tt - ((1 - k) * mm + k * i0)).max())
              for mm, tt, i0 in zip(m.tensors(), t.tensors(), t0))
    verdict(10, err <= 1e-12, "soft-update closed form", f"max deviation {err:.1e} after {n} updates")


@pytest.mark.slow
def test_11_learning_sanity():
    t0 = time.perf_counter()
    finals = []
    for seed in range(5):
        errs = run_benchmark(seed, episodes=300)
        finals.append(float(np.mean(errs[-20:])))
    elapsed = time.perf_counter() - t0
    passed = sum(e < 0.5 for e in finals)
    ok = passed >= 3 and elapsed < 300
    verdict(11, ok, "DDPG double-integrator benchmark",
            f"last-20 mean |e| per seed {[round(e, 3) for e in finals]}, {passed}/5 below 0.5 m, "
            f"{elapsed:.0f}s")


def test_12_two_time_scale_accounting(tmp_path):
    cfg = lambda: tiny_config("timing.episodes=3", "timing.long_steps=3", "timing.short_per_long=4",
                              "timing.eval_episodes=2", seed=12)
    for d in ("a", "b"):
        audited(run_experiment(cfg(), tmp_path / d))
    c = cfg()
    rows = read_csv(tmp_path / "a" / "transitions.csv")
    trace = read_csv(tmp_path / "a" / "trace.csv")
    episodes = sorted({(r["phase"], r["episode"]) for r in rows})
    want = c.timing.long_steps * c.timing.short_per_long
    counts_ok = len(episodes) == 5 and all(
        sum(r["kind"] == "short" and (r["phase"], r["episode"]) == ep for r in rows) == want and
        sum((r["phase"], r["episode"]) == ep for r in trace) == want * c.counts.cavs
        for ep in episodes)
    names = ("metrics.csv", "evaluation.csv", "voi.csv", "training_log.csv", "trace.csv",
             "transitions.csv", "config.json")
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    verdict(12, counts_ok and same, "two-time-scale accounting",
            f"{len(episodes)} episodes x {want} short slots each={counts_ok}, byte-identical={same}")


TREND = ["timing.episodes=6", "timing.long_steps=5", "timing.short_per_long=10",
         "timing.eval_episodes=4", "marl.hidden=[32,32]", "marl.batch_size=32",
         "marl.learn_start=64", "marl.voi_every=3", "marl.voi_samples=200",
         "marl.voi_min_samples=20"]
SWEEPS = {"ttc vs CAVs": ("counts.cavs", [4, 8, 16]),
          "CRB vs antennas": ("counts.antennas", [4, 8, 16]),
          "CRB vs power": ("physics.p_max_dbm", [20.0, 23.0, 26.0])}


def _non_increasing(values):
    return all(b <= a for a, b in zip(values, values[1:]))


@pytest.mark.slow
def test_13_trend_replication():
    t0 = time.perf_counter()
    held, detail = {}, []
    for name, (key, xs) in SWEEPS.items():
        ok_seeds = 0
        for seed in range(5):
            ttc_v, th_v, d_v = [], [], []
            for x in xs:
                res = audited(run_experiment(load_config(None, TREND + [f"{key}={x}"], seed)))
                ttc_v.append(np.mean([r.mean_ttc for r in res.evaluation]))
                th_v.append(np.mean([r.mean_crb_theta for r in res.evaluation]))
                d_v.append(np.mean([r.mean_crb_d for r in res.evaluation]))
            if name.startswith("ttc"):
                ok_seeds += _non_increasing(ttc_v)
            else:
                ok_seeds += _non_increasing(th_v) and _non_increasing(d_v)
        held[name] = ok_seeds
        detail.append(f"{name} {ok_seeds}/5")
    elapsed = time.perf_counter() - t0
    ok = all(v >= 4 for v in held.values()) and elapsed < 3600
    verdict(13, ok, "trend replication", ", ".join(detail) + f", {elapsed:.0f}s")


def test_14_power_audit():
    # an extra learned run and a baseline run, in case this test runs alone
    audited(run_experiment(tiny_config(seed=14)))
    audited(run_experiment(tiny_config(seed=14), learned=False, agents={}))
    ok = AUDIT["violations"] == 0 and AUDIT["audits"] > 0
    verdict(14, ok, "power audit", f"{AUDIT['violations']} violations in {AUDIT['audits']} per-slot "
                                   f"audits over {AUDIT['runs']} runs")
