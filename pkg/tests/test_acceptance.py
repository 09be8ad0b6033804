"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines live.
The heavy Monte Carlo grids are cached at module scope; the determinism
criterion re-runs them from scratch and compares against the cache.
"""

import math
import time
from contextlib import contextmanager

import numpy as np

from compatkit import ActiveSet, GramMatrix, gram, standardize
from compatkit.bnb import BnbConfig, Formulation, phi_bnb
from compatkit.compound import CompoundSymmetry, population_phi_sq, witness_vector
from compatkit.enumeration import phi_enumerate
from compatkit.lasso import fit_lasso, lambda_bound, lambda_max
from compatkit.model import check_result_invariants
from compatkit.qp import QpProblem, QpStatus, solve_qp
from compatkit.simulate import (
    SimConfig,
    gen_compound_data,
    records_equal_ignoring_time,
    run_grid,
)

MASTER_SEED = 20250808

_cache: dict = {}


@contextmanager
def criterion(num: int, label: str, budget_s: float | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        print(f"[criterion {num:02d}] FAIL {label}: {exc}", flush=True)
        raise
    elapsed = time.perf_counter() - t0
    print(f"[criterion {num:02d}] PASS {label} ({elapsed:.1f}s)", flush=True)
    if budget_s is not None:
        assert elapsed < budget_s, f"criterion {num} exceeded its {budget_s}s budget"


# ---------------------------------------------------------------- instances


def _bnb_instances():
    """The 50 random instances for the BnB-enumeration equivalence check."""
    instances = []
    rng = np.random.default_rng(MASTER_SEED + 4)
    for idx in range(50):
        n = int(rng.choice([30, 100]))
        p = int(rng.choice([10, 30]))
        s = int(rng.integers(1, 7))
        design_seed = int(rng.integers(0, 2**31))
        g = gram(standardize(np.random.default_rng(design_seed).standard_normal((n, p))).design)
        active = ActiveSet(tuple(int(j) for j in rng.choice(p, size=s, replace=False)))
        instances.append((idx, n, p, s, design_seed, g, active))
    return instances


def _run_bnb_equivalence() -> list[str]:
    rows = ["idx,n,p,s,seed,phi_enum,phi_sos1,phi_bigm"]
    for idx, n, p, s, seed, g, active in _bnb_instances():
        exact = phi_enumerate(g, active)
        vals = {}
        for form in (Formulation.SOS1, Formulation.BIG_M):
            cfg = BnbConfig(formulation=form, big_m=1.0, warm_starts_k=2,
                            seed=idx, time_limit=None, gap_tol=1e-6)
            res = phi_bnb(g, active, cfg)
            assert abs(res.phi_sq - exact.phi_sq) <= 1e-5, (
                f"instance {idx} ({form.value}): |{res.phi_sq} - {exact.phi_sq}| > 1e-5"
            )
            vals[form] = res.phi_sq
        rows.append(
            f"{idx},{n},{p},{s},{seed},{exact.phi_sq!r},"
            f"{vals[Formulation.SOS1]!r},{vals[Formulation.BIG_M]!r}"
        )
    return rows


def _figure1_config(seed=MASTER_SEED) -> SimConfig:
    return SimConfig(
        n_grid=(100, 200, 500, 1000),
        p_grid=(20, 50, 200),
        rho_grid=(0.0, 0.4, 0.8),
        s=5,
        seed=seed,
        replications=10,
    )


def _coverage_config(seed=MASTER_SEED + 9) -> SimConfig:
    return SimConfig(n_grid=(1000,), p_grid=(50,), rho_grid=(0.4,), s=5,
                     seed=seed, replications=50)


def _figure1_records():
    if "figure1" not in _cache:
        _cache["figure1"] = list(run_grid(_figure1_config()))
    return _cache["figure1"]


def _coverage_records():
    if "coverage" not in _cache:
        _cache["coverage"] = list(run_grid(_coverage_config()))
    return _cache["coverage"]


# ---------------------------------------------------------------- criteria


def test_c01_identity_gram_exactness():
    with criterion(1, "identity Gram: phi^2 = 1 across p and s", budget_s=5.0):
        rng = np.random.default_rng(MASTER_SEED + 1)
        checked = 0
        for p in (5, 20, 100):
            for s in (1, 3, 6):
                if s > p:
                    continue
                active = ActiveSet(tuple(int(j) for j in rng.choice(p, size=s, replace=False)))
                res = phi_enumerate(GramMatrix(np.eye(p)), active)
                assert abs(res.phi_sq - 1.0) <= 1e-5, f"p={p}, s={s}: {res.phi_sq}"
                checked += 1
        assert checked == 8  # (p=5, s=6) is impossible and skipped


def test_c02_compound_symmetry_even_case():
    with criterion(2, "compound symmetry even s: phi^2 = 1 - rho", budget_s=30.0):
        for rho in (0.2, 0.4, 0.6, 0.8):
            for s in (2, 4):
                for p in (20, 100):
                    cs = CompoundSymmetry(rho, p)
                    res = phi_enumerate(cs.gram(), ActiveSet(tuple(range(s))))
                    assert abs(res.phi_sq - (1 - rho)) <= 1e-4, (rho, s, p, res.phi_sq)
                    w = witness_vector(cs, s)
                    w_obj = s * float(w @ cs.matrix() @ w)
                    assert abs(res.phi_sq - w_obj) <= 1e-4


def test_c03_compound_symmetry_odd_bracket():
    with criterion(3, "compound symmetry odd s: bracket and witness", budget_s=60.0):
        for rho in (0.2, 0.4, 0.6, 0.8):
            for s in (1, 3, 5):
                for p in (20, 100):
                    cs = CompoundSymmetry(rho, p)
                    bracket = population_phi_sq(cs, s)
                    res = phi_enumerate(cs.gram(), ActiveSet(tuple(range(s))))
                    assert bracket.lower - 1e-6 <= res.phi_sq <= bracket.upper + 1e-6, (
                        rho, s, p, res.phi_sq, bracket
                    )
                    w = witness_vector(cs, s)
                    w_obj = s * float(w @ cs.matrix() @ w)
                    assert abs(w_obj - bracket.upper) <= 1e-12


def test_c04_bnb_enumeration_equivalence():
    with criterion(4, "BnB equals enumeration on 50 instances, both formulations",
                   budget_s=300.0):
        _cache["c4_rows"] = _run_bnb_equivalence()
        assert len(_cache["c4_rows"]) == 51


def test_c05_anytime_soundness_and_ratio():
    with criterion(5, "time-limited BnB soundness and warm-start ratio", budget_s=180.0):
        rng = np.random.default_rng(MASTER_SEED + 5)
        ratio_ok = 0
        for idx in range(20):
            p = 30
            s = int(rng.choice([8, 9, 10]))
            design_seed = int(rng.integers(0, 2**31))
            g = gram(standardize(
                np.random.default_rng(design_seed).standard_normal((100, p))
            ).design)
            active = ActiveSet(tuple(int(j) for j in rng.choice(p, size=s, replace=False)))
            exact = phi_enumerate(g, active)
            for k in (1, 20):
                res = phi_bnb(g, active, BnbConfig(warm_starts_k=k, seed=idx,
                                                   time_limit=1.0))
                assert res.phi_sq >= exact.phi_sq - 1e-6, (idx, k)
                assert res.lower_bound <= exact.phi_sq + 1e-6, (idx, k)
                if k == 20 and exact.phi_sq > 0:
                    ratio_ok += math.sqrt(res.phi_sq / exact.phi_sq) <= 2.0
        assert ratio_ok >= 18, f"phi ratio within 2 on only {ratio_ok}/20 instances"


def test_c06_lambda_formula_reproduction():
    with criterion(6, "reported penalty level reproduced", budget_s=1.0):
        got = lambda_bound(float(np.sqrt(1.268e-4)), 1009, 475, 0.1)
        assert abs(got - 3.085e-3) / 3.085e-3 <= 1e-3, got


def test_c07_error_bound_identity():
    with criterion(7, "9 s lam^2/phi^2 equals 72 sigma^2 s (1+log(p/delta))/(n phi^2)",
                   budget_s=1.0):
        rng = np.random.default_rng(MASTER_SEED + 7)
        for _ in range(100):
            sigma = float(rng.uniform(0.01, 10))
            s = int(rng.integers(1, 50))
            n = int(rng.integers(10, 5000))
            p = int(rng.integers(2, 5000))
            delta = float(rng.uniform(0.01, 0.99))
            phi_sq = float(rng.uniform(0.01, 2.0))
            lam = lambda_bound(sigma, n, p, delta)
            lhs = 9 * s * lam**2 / phi_sq
            rhs = 72 * sigma**2 * s * (1 + np.log(p / delta)) / (n * phi_sq)
            assert abs(lhs - rhs) <= 1e-10 * abs(rhs)


def test_c08_figure1_trends_at_desk_scale():
    with criterion(8, "phi trends over (n, p, rho) grid, R=10", budget_s=1800.0):
        records = _figure1_records()
        cfg = _figure1_config()
        assert len(records) == 4 * 3 * 3 * 10
        assert all(not r.status.startswith("Error") for r in records)

        def med_phi(n, p, rho):
            phis = [r.phi for r in records if (r.n, r.p, r.rho) == (n, p, rho)]
            assert len(phis) == 10
            return float(np.median(phis))

        # (a) median phi non-decreasing in n within each (p, rho)
        for p in cfg.p_grid:
            for rho in cfg.rho_grid:
                meds = [med_phi(n, p, rho) for n in cfg.n_grid]
                viol = sum(b < a - 1e-9 for a, b in zip(meds, meds[1:]))
                assert viol <= 1, f"(p={p}, rho={rho}): medians {meds}"

        # (b) median phi non-increasing in p within each (n, rho)
        for n in cfg.n_grid:
            for rho in cfg.rho_grid:
                meds = [med_phi(n, p, rho) for p in cfg.p_grid]
                viol = sum(b > a + 1e-9 for a, b in zip(meds, meds[1:]))
                assert viol <= 1, f"(n={n}, rho={rho}): medians {meds}"

        # (c) near-failure regime shows up at n=100, p=200
        small = [r.phi for r in records if (r.n, r.p) == (100, 200)]
        assert min(small) < 0.05, f"min phi at (100, 200) = {min(small)}"


def test_c09_mse_bound_coverage():
    with criterion(9, "MSE <= bound in >= 85% of 50 replications", budget_s=600.0):
        records = _coverage_records()
        assert len(records) == 50
        covered = sum(r.mse <= r.bound for r in records)
        assert covered >= 0.85 * 50, f"covered {covered}/50"


def test_c10_kkt_property_suite():
    with criterion(10, "KKT and feasibility contracts on every solve", budget_s=120.0):
        rng = np.random.default_rng(MASTER_SEED + 10)
        # QP stationarity + primal feasibility with the returned duals
        for seed in range(10):
            m = int(rng.integers(3, 9))
            B = rng.standard_normal((m, m))
            P = B @ B.T + 0.1 * np.eye(m)
            q = rng.standard_normal(m)
            A = np.vstack([np.ones(m), np.eye(m)])
            l = np.concatenate([[1.0], -np.ones(m)])
            u = np.concatenate([[1.0], np.ones(m)])
            prob = QpProblem(P=P, q=q, A=A, l=l, u=u)
            sol = solve_qp(prob)
            assert sol.status is QpStatus.SOLVED
            stat = np.abs(P @ sol.x + q + A.T @ sol.y).max()
            assert stat <= 1e-8
            Ax = A @ sol.x
            assert max((l - Ax).max(), (Ax - u).max()) <= 1e-8

        # lasso KKT at several penalties
        for seed in range(5):
            data = gen_compound_data(n=150, p=12, rho=0.3, s=4, seed=seed)
            X, y = data.design.values, data.y
            lam = 0.3 * lambda_max(X, y)
            fit = fit_lasso(X, y, lam, tol=1e-10)
            g_vec = X.T @ (y - X @ fit.beta) / len(y)
            for j in range(12):
                if fit.beta[j] != 0:
                    assert abs(g_vec[j] - lam * np.sign(fit.beta[j])) <= 1e-9
                else:
                    assert abs(g_vec[j]) <= lam + 1e-9

        # CompatResult minimizers feasible for the cone, both solvers
        for seed in range(5):
            g = gram(standardize(rng.standard_normal((60, 10))).design)
            active = ActiveSet(tuple(int(j) for j in rng.choice(10, size=4, replace=False)))
            res_enum = phi_enumerate(g, active)
            check_result_invariants(res_enum, g, active)
            res_bnb = phi_bnb(g, active, BnbConfig(warm_starts_k=2, seed=seed,
                                                   time_limit=None))
            check_result_invariants(res_bnb, g, active)


def test_c11_determinism():
    with criterion(11, "re-runs bit-identical; worker count immaterial", budget_s=2400.0):
        # criterion 4 rows, recomputed from scratch
        first = _cache.get("c4_rows") or _run_bnb_equivalence()
        again = _run_bnb_equivalence()
        assert first == again, "criterion 4 CSV changed across re-runs"

        # criterion 9 records, recomputed
        cov_a = _coverage_records()
        cov_b = list(run_grid(_coverage_config()))
        assert len(cov_a) == len(cov_b)
        assert all(records_equal_ignoring_time(a, b) for a, b in zip(cov_a, cov_b))

        # criterion 8 grid: fresh serial run, then a 2-worker run; the sorted
        # record set must be identical (wall-clock column aside)
        fig_a = _figure1_records()
        fig_b = list(run_grid(_figure1_config()))
        assert all(records_equal_ignoring_time(a, b) for a, b in zip(fig_a, fig_b))
        fig_c = list(run_grid(_figure1_config(), workers=2))
        key = lambda r: (r.n, r.p, r.rho, r.replication)
        assert all(
            records_equal_ignoring_time(a, b)
            for a, b in zip(sorted(fig_a, key=key), sorted(fig_c, key=key))
        )
