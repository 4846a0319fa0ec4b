"""Acceptance suite: one test per criterion, named ``test_criterion_<k>_<what>``.

A summary line per criterion is printed at the end of the session.
"""

import math
import time

import numpy as np
import pytest

from dualforge import accel, bounds, cli, dadm, dataio, metrics, oracle
from dualforge.losses import Hinge, Logistic, SmoothedHinge, SmoothHinge
from dualforge.regularizer import ElasticNet

from conftest import synthetic

M, SP = 4, 0.2


def _default_part(ds, m=M, seed=42):
    return dataio.partition(ds.n, m, seed)


def _n_tilde(part, sp):
    return max(s / max(1, math.floor(sp * s + 0.5)) for s in part.sizes)


def test_criterion_01_duality_identities(default_data):
    start = time.perf_counter()
    ds = default_data
    res = dadm.run(ds, _default_part(ds), ElasticNet(1e-3, 1e-5), SmoothHinge(),
                   dadm.RunConfig(target_gap=1e-12, max_rounds=100, sp=SP, seed=1, diagnostics=True))
    worst_gap = max(r.gap_decomposition_error / (1 + abs(r.primal)) for r in res.trace)
    worst_beta = max(r.beta_sum_max for r in res.trace)
    elapsed = time.perf_counter() - start
    print(f"max relative gap decomposition error {worst_gap:.3e}, max |sum beta| {worst_beta:.3e}, {elapsed:.1f}s")
    assert len(res.trace) == 101
    assert worst_gap <= 1e-9
    assert worst_beta <= 1e-9
    assert elapsed < 10


def test_criterion_02_single_worker_reduction(default_data):
    start = time.perf_counter()
    ds = default_data
    reg, loss = ElasticNet(1e-3, 1e-5), SmoothHinge()
    part = dataio.partition(ds.n, 1, 42)
    hist, _ = oracle.single_machine_sdca(ds, reg, loss, 5, seed=7, order=part.assignments[0])
    worst = 0.0
    for k in range(1, 6):
        res = dadm.run(ds, part, reg, loss, dadm.RunConfig(target_gap=1e-300, max_rounds=k, sp=1.0, seed=7))
        a_ref, w_ref = hist[k]
        worst = max(worst, float(np.max(np.abs(res.alpha - a_ref))), float(np.max(np.abs(res.w - w_ref))))
    elapsed = time.perf_counter() - start
    print(f"max abs difference over 5 epochs {worst:.3e}, {elapsed:.1f}s")
    assert worst <= 1e-12
    assert elapsed < 5


def test_criterion_03_dual_monotonicity(default_data):
    ds = default_data
    res = dadm.run(ds, _default_part(ds), ElasticNet(1e-3, 1e-5), SmoothHinge(),
                   dadm.RunConfig(target_gap=1e-300, max_rounds=200, sp=SP, seed=3))
    drops = [a.dual - b.dual for a, b in zip(res.trace, res.trace[1:])]
    print(f"rounds {res.rounds}, largest dual decrease {max(drops):.3e}")
    assert res.rounds == 200
    assert max(drops) <= 1e-10


def test_criterion_04_linear_rate_within_bound(default_data):
    start = time.perf_counter()
    ds = default_data
    part = _default_part(ds)
    lam = 0.05
    reg, loss = ElasticNet(lam, 1e-5), SmoothHinge()
    gap0 = dadm.evaluate_full(ds, reg, loss, np.zeros(ds.n))[2]
    T = bounds.theory_bounds("dadm-smooth", R=ds.stats.R, gamma=1.0, lam=lam, n_tilde=_n_tilde(part, SP), gap_ratio=1e6)
    res = dadm.run(ds, part, reg, loss, dadm.RunConfig(target_gap=1e-6 * gap0, max_rounds=T, sp=SP, seed=4,
                                                        mode="conservative-smooth", gap_every=50))
    elapsed = time.perf_counter() - start
    print(f"gap0 {gap0:.6g}, reached {res.gap:.3e} in {res.rounds} rounds, bound {T}, {elapsed:.1f}s")
    assert res.converged and res.gap <= 1e-6 * gap0
    assert res.rounds <= T
    assert elapsed < 30


@pytest.mark.parametrize("loss", [SmoothHinge(), Logistic()], ids=repr)
def test_criterion_05_optimum_agreement(default_data, loss):
    ds = default_data
    reg = ElasticNet(1e-2, 1e-5)
    cert = oracle.prox_grad_reference(ds, reg, loss, tol=1e-10)
    res = dadm.run(ds, _default_part(ds), reg, loss, dadm.RunConfig(target_gap=1e-8, max_rounds=5000, sp=SP, seed=5))
    P = oracle.primal_objective(ds, reg, loss, res.w)
    dw = float(np.max(np.abs(res.w - cert.w_star)))
    print(f"{loss!r}: rounds {res.rounds}, gap {res.gap:.3e}, max|w - w*| {dw:.3e}, |P - P*| {abs(P - cert.primal_at_star):.3e}")
    assert res.converged and res.gap <= 1e-8
    assert dw <= 1e-4
    assert abs(P - cert.primal_at_star) <= 2e-8


def _first_comm_below(trace, target, original):
    for rec in trace:
        gap = rec.orig_gap if original else rec.gap
        if gap <= target:
            return rec.comms
    return None


def test_criterion_06_acceleration_benefit():
    start = time.perf_counter()
    ds = synthetic(2000, 200, 0.3, 42)
    m = 8
    part = dataio.partition(ds.n, m, 42)
    reg, loss = ElasticNet(1e-7, 1e-5), SmoothHinge()
    target = 1e-3 * ds.n
    plain = dadm.run(ds, part, reg, loss, dadm.RunConfig(target_gap=target, max_rounds=300, sp=1.0, seed=6))
    plain_rounds = _first_comm_below(plain.trace, target, False)
    plain_rounds = 300 if plain_rounds is None else plain_rounds
    acc = accel.run_acc(ds, part, reg, loss, accel.AccConfig(target_gap=target, nu="0", sp=1.0, seed=6,
                                                             inner_max=300, max_comms=300))
    acc_rounds = _first_comm_below(acc.trace, target, True)
    elapsed = time.perf_counter() - start
    print(f"plain DADM: normalized gap {plain.gap / ds.n:.4g} after {plain.rounds} rounds (counted {plain_rounds}); "
          f"Acc-DADM kappa {acc.kappa:.4g}: normalized gap {acc.gap / ds.n:.4g} after {acc.comms} comms, "
          f"{len(acc.stages)} stages, reached target at {acc_rounds}; {elapsed:.1f}s")
    assert elapsed < 120
    assert acc_rounds is not None and acc_rounds <= 0.5 * plain_rounds


@pytest.mark.parametrize("gamma", [1.0, 0.1, 0.01])
def test_criterion_07_smoothing_bound(gamma):
    grid = np.linspace(-4.0, 4.0, 10_000)
    hinge, sm = Hinge(), SmoothedHinge(gamma)
    for y in (1.0, -1.0):
        diff = sm.value(grid, y) - hinge.value(grid, y)
        print(f"gamma {gamma}, y {y:+}: max(smoothed - hinge) {diff.max():.3e}, max |difference| {np.abs(diff).max():.6g}")
        assert 0.0 <= diff.max() <= gamma / 2
        assert np.abs(diff).max() <= gamma / 2 + 1e-15
    if gamma == 1.0:
        ref = SmoothHinge()
        for y in (1.0, -1.0):
            assert np.max(np.abs(sm.value(grid, y) - ref.value(grid, y))) <= 1e-12
            assert np.max(np.abs(sm.deriv(grid, y) - ref.deriv(grid, y))) <= 1e-12
            b = y * np.linspace(0, 1, 101)
            assert np.max(np.abs(sm.conj(b, y) - ref.conj(b, y))) <= 1e-12


ORACLE_LOSSES = [SmoothHinge(), SmoothedHinge(0.1), Logistic(), Hinge()]


@pytest.mark.parametrize("loss", ORACLE_LOSSES, ids=repr)
def test_criterion_08_conjugate_and_prox_oracles(loss):
    worst_conj = worst_fy = worst_fd = 0.0
    for y in (1.0, -1.0):
        for t in np.linspace(0.05, 0.95, 7):
            b = t * y
            val, _ = oracle.grid_sup(lambda a: -b * a - loss.value(a, y), -40.0, 40.0, 1e-4)
            worst_conj = max(worst_conj, abs(val - loss.conj(b, y)))
        a = np.linspace(-4, 4, 401)
        fy = loss.value(a, y) + loss.conj(-loss.deriv(a, y), y) - loss.deriv(a, y) * a
        worst_fy = max(worst_fy, float(np.max(np.abs(fy))))
        kinks = (1.0, 1.0 - getattr(loss, "gamma", 0.0))
        for x in np.linspace(-3.05, 3.05, 61):
            if any(abs(x * y - k) < 1e-4 for k in kinks):
                continue
            fd = oracle.central_difference(lambda z: loss.value(z, y), x)
            worst_fd = max(worst_fd, abs(fd - loss.deriv(x, y)))
    print(f"{loss!r}: conjugate {worst_conj:.2e}, Fenchel-Young {worst_fy:.2e}, derivative {worst_fd:.2e}")
    assert worst_conj <= 1e-6
    assert worst_fy <= 1e-6
    assert worst_fd <= 1e-5


def test_criterion_08_grad_conj_grid_argmax():
    reg = ElasticNet(0.1, 0.03)
    v = np.array([-2.0, -0.31, -0.2, 0.0, 0.25, 0.3, 1.7])
    w = reg.grad_conj(v)
    worst = 0.0
    for vj, wj in zip(v, w):
        _, arg = oracle.grid_sup(lambda x: vj * x - (0.5 * x * x + reg.threshold * np.abs(x)), -3.0, 3.0, 1e-6)
        worst = max(worst, abs(arg - wj))
    print(f"grad_conj vs grid argmax {worst:.2e}")
    assert worst <= 1e-6


@pytest.mark.parametrize("m", [1, 4, 8])
def test_criterion_09_cli_determinism(tmp_path_factory, m):
    root = tmp_path_factory.mktemp(f"det{m}")
    data = root / "default.libsvm"
    assert cli.main(["gen", str(data)]) == 0
    args = ["train", str(data), "--algo", "dadm", "--lambda", "1e-3", "--mu", "1e-5", "--m", str(m),
            "--sp", "0.2", "--seed", "42", "--max-rounds", "40", "--target-gap", "1e-12"]
    assert cli.main(args + ["--out-dir", str(root / "a")]) == 0
    assert cli.main(["train", "--config", str(root / "a" / "manifest.json"), "--out-dir", str(root / "b")]) == 0

    def body(path):
        rows = metrics.read_metrics(path)
        for r in rows:
            r.pop("time_ms")
        return metrics.format_csv([dict(r, time_ms=0.0) for r in rows])

    a, b = body(root / "a" / "metrics.csv"), body(root / "b" / "metrics.csv")
    print(f"m={m}: {a.count(chr(10)) - 1} rows, identical={a == b}")
    assert a == b


def test_criterion_10_schedule_formulas():
    from fractions import Fraction
    import random

    s = accel.schedule(0.01, 0.08, 1.0)
    eta = s.eta
    print(f"eta^-2 {s.eta_inv_sq!r}, nu {s.nu!r}, first target {s.stage_target(s.xi0)!r}")
    assert s.eta_inv_sq == 17.0
    assert abs(s.nu - (1 - eta) / (1 + eta)) <= 1e-12
    xi = s.xi0
    for _ in range(50):
        nxt = s.next_xi(xi)
        assert nxt == (1 - eta / 2) * xi
        xi = nxt
    rnd = random.Random(2024)
    for _ in range(100):
        m, R, g = rnd.randint(1, 128), rnd.uniform(1e-3, 100), rnd.uniform(1e-4, 10)
        n, lam = rnd.randint(1, 10**7), 10 ** rnd.uniform(-10, 0)
        exact = max(Fraction(m) * Fraction(R) / (Fraction(g) * Fraction(n)) - Fraction(lam), Fraction(0))
        assert accel.default_kappa(m, R, g, n, lam) == float(exact)


def test_criterion_11_lipschitz_path(default_data):
    start = time.perf_counter()
    ds = default_data
    part = _default_part(ds)
    lam, eps = 1e-3, 1e-2
    reg = ElasticNet(lam, 1e-5)
    n, R = ds.n, ds.stats.R

    # plain DADM on the raw hinge with exact coordinate updates
    gap0 = dadm.evaluate_full(ds, reg, Hinge(), np.zeros(n))[2]
    _, T = bounds.theory_bounds("dadm-lipschitz", n_tilde=_n_tilde(part, SP), G=4 * R, lam=lam, eps=eps,
                                n=n, eps_d0=gap0)
    cap = min(T, 5000)
    plain = dadm.run(ds, part, reg, Hinge(), dadm.RunConfig(target_gap=eps * n, max_rounds=cap, sp=SP, seed=11))

    # accelerated solver on the smoothed surrogate, certified against the smoothed oracle
    sm, inner = accel.smooth_wrap(Hinge(), eps)
    acc = accel.run_acc(ds, part, reg, sm, accel.AccConfig(target_gap=inner * n, sp=SP, seed=11, inner_max=2000))
    cert = oracle.prox_grad_reference(ds, reg, sm, tol=1e-6)
    lower = cert.primal_at_star - cert.certified_gap  # below the smoothed optimum, hence below the hinge optimum
    subopt = (oracle.primal_objective(ds, reg, Hinge(), acc.w) - lower) / n
    elapsed = time.perf_counter() - start
    print(f"plain: normalized gap {plain.gap / n:.3e} in {plain.rounds} rounds (bound {T}); "
          f"acc: kappa {acc.kappa:.4g}, {acc.rounds} rounds, {acc.comms} comms, "
          f"certified normalized suboptimality {subopt:.3e}; {elapsed:.1f}s")
    assert plain.converged and plain.rounds <= T
    assert acc.converged
    assert subopt <= eps
