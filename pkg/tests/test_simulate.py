import csv
import math

import numpy as np
import pytest

from compatkit import ActiveSet
from compatkit.errors import InvalidConfig, PrefixTooSmall
from compatkit.lasso import lambda_bound
from compatkit.rng import cell_seed
from compatkit.simulate import (
    RECORD_COLUMNS,
    SimConfig,
    bound_and_ratios,
    evaluate_cell,
    gen_compound_data,
    phi_curve,
    record_to_row,
    records_equal_ignoring_time,
    run_grid,
    write_records_csv,
)


def small_config(**overrides):
    base = dict(
        n_grid=(40, 80, 150), p_grid=(6, 12), rho_grid=(0.0, 0.5),
        s=2, seed=12345, replications=2,
    )
    base.update(overrides)
    return SimConfig(**base)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        small_config(n_grid=())
    with pytest.raises(InvalidConfig):
        small_config(rho_grid=(1.0,))
    with pytest.raises(InvalidConfig):
        small_config(s=13)
    with pytest.raises(InvalidConfig):
        small_config(coef_low=3.0, coef_high=1.0)
    with pytest.raises(InvalidConfig):
        small_config(snr=0.0)
    with pytest.raises(InvalidConfig):
        small_config(solver="bnb")  # needs a BnbConfig


def test_noise_level_formula():
    # sigma^2 = beta' Sigma_rho beta / snr; with five coefficients of 1.5:
    # rho = 0   -> 5 * 1.5^2 = 11.25
    # rho = 0.4 -> 0.6 * 11.25 + 0.4 * 7.5^2 = 29.25
    beta = np.full(5, 1.5)
    for rho, expected in [(0.0, 11.25), (0.4, 29.25)]:
        val = (1 - rho) * float(beta @ beta) + rho * float(beta.sum()) ** 2
        assert val == pytest.approx(expected)
    data = gen_compound_data(n=50, p=10, rho=0.4, s=3, seed=5)
    b = data.beta[list(data.active.indices)]
    expected = (1 - 0.4) * float(b @ b) + 0.4 * float(b.sum()) ** 2
    assert data.sigma_sq == pytest.approx(expected, rel=1e-12)


def test_generated_data_shapes_and_determinism():
    a = gen_compound_data(n=30, p=8, rho=0.3, s=3, seed=42)
    b = gen_compound_data(n=30, p=8, rho=0.3, s=3, seed=42)
    assert np.array_equal(a.design.values, b.design.values)
    assert np.array_equal(a.y, b.y)
    assert a.active == b.active
    assert a.design.is_standardized()
    assert a.active.s == 3
    assert np.count_nonzero(a.beta) == 3
    assert np.all(a.beta[list(a.active.indices)] >= 1.0)
    c = gen_compound_data(n=30, p=8, rho=0.3, s=3, seed=43)
    assert not np.array_equal(a.y, c.y)


def test_empirical_correlations_match_rho():
    data = gen_compound_data(n=5000, p=10, rho=0.5, s=2, seed=7)
    corr = data.design.values.T @ data.design.values / 5000
    off = corr[~np.eye(10, dtype=bool)]
    assert abs(off.mean() - 0.5) < 0.03


def test_bound_formula_arithmetic():
    # bound = 9 s lambda^2 / phi^2: s=5, lambda=0.1, phi=0.5 -> 1.8
    bound, _, _ = bound_and_ratios(0.25, True, 5, 0.1, mse=1.0)
    assert bound == pytest.approx(1.8)


def test_ratio_conventions():
    bound, r_bm, r_mb = bound_and_ratios(0.25, True, 5, 0.1, mse=0.9)
    assert r_bm == pytest.approx(bound / 0.9)
    assert r_mb == pytest.approx(0.9 / bound)
    assert r_bm * r_mb == pytest.approx(1.0, rel=1e-12)
    # oracle fit: zero error
    _, r_bm, r_mb = bound_and_ratios(0.25, True, 5, 0.1, mse=0.0)
    assert r_bm == math.inf and r_mb == 0.0
    # condition fails: infinite bound
    bound, r_bm, r_mb = bound_and_ratios(0.0, False, 5, 0.1, mse=0.9)
    assert bound == math.inf and r_bm == math.inf and r_mb == 0.0


def test_evaluate_cell_record_fields():
    data = gen_compound_data(n=120, p=10, rho=0.2, s=3, seed=11)
    rec = evaluate_cell(
        data.design, data.y, data.beta, data.active, 0.1,
        sigma_sq=data.sigma_sq, rho=0.2, seed=11, replication=0,
    )
    assert (rec.n, rec.p, rec.s) == (120, 10, 3)
    assert rec.lam == pytest.approx(lambda_bound(np.sqrt(data.sigma_sq), 120, 10, 0.1))
    assert rec.phi == pytest.approx(np.sqrt(rec.phi_sq))
    assert rec.mse >= 0 and np.isfinite(rec.mse)
    if rec.status == "Optimal":
        assert rec.bound == pytest.approx(9 * 3 * rec.lam**2 / rec.phi_sq, rel=1e-12)
    assert rec.mse_scaled == pytest.approx(rec.mse * 120 / np.log(10), rel=1e-12)
    assert rec.bound_scaled == pytest.approx(rec.bound * 120 / np.log(10), rel=1e-12)


def test_zero_phi_cell_flagged_with_infinite_bound():
    data = gen_compound_data(n=4, p=12, rho=0.0, s=2, seed=0)
    rec = evaluate_cell(
        data.design, data.y, data.beta, data.active, 0.1,
        sigma_sq=data.sigma_sq,
    )
    assert rec.status == "ZeroDetected"
    assert rec.phi == 0.0
    assert rec.bound == math.inf
    assert rec.ratio_bound_over_mse == math.inf
    assert rec.ratio_mse_over_bound == 0.0


def test_error2_identity_per_record():
    # at the threshold penalty, 9 s lam^2 / phi^2 == 72 sigma^2 s (1 + log(p/delta)) / (n phi^2)
    data = gen_compound_data(n=100, p=8, rho=0.3, s=3, seed=21)
    rec = evaluate_cell(
        data.design, data.y, data.beta, data.active, 0.1,
        sigma_sq=data.sigma_sq, rho=0.3,
    )
    rhs = 72 * data.sigma_sq * 3 * (1 + np.log(8 / 0.1)) / (100 * rec.phi_sq)
    assert rec.bound == pytest.approx(rhs, rel=1e-10)


def test_grid_cardinality_and_keys():
    cfg = small_config()
    records = list(run_grid(cfg))
    assert len(records) == 3 * 2 * 2 * 2
    keys = {(r.n, r.p, r.rho, r.replication) for r in records}
    assert len(keys) == 24
    seeds = {r.seed for r in records}
    assert len(seeds) == 24  # distinct derived seeds
    for r in records:
        assert r.seed == cell_seed(cfg.seed, r.n, r.p, r.rho, r.replication)


def test_grid_rerun_is_bit_identical_modulo_time():
    cfg = small_config(n_grid=(40, 80), p_grid=(6,), replications=2)
    first = list(run_grid(cfg))
    second = list(run_grid(cfg))
    assert len(first) == len(second)
    for a, b in zip(first, second):
        assert records_equal_ignoring_time(a, b)


def test_grid_worker_count_does_not_change_records():
    cfg = small_config(n_grid=(40,), p_grid=(6, 12), replications=2)
    serial = list(run_grid(cfg, workers=1))
    parallel = list(run_grid(cfg, workers=2))
    assert len(serial) == len(parallel)
    key = lambda r: (r.n, r.p, r.rho, r.replication)
    for a, b in zip(sorted(serial, key=key), sorted(parallel, key=key)):
        assert records_equal_ignoring_time(a, b)


def test_csv_round_trip_and_inf_literal(tmp_path):
    cfg = small_config(n_grid=(40,), p_grid=(6,), rho_grid=(0.0,), replications=1)
    out = tmp_path / "records.csv"
    count = write_records_csv(out, run_grid(cfg))
    assert count == 1
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == RECORD_COLUMNS
    # every non-status cell parses back as a plain number
    status_col = RECORD_COLUMNS.index("status")
    for row in rows[1:]:
        for i, cell in enumerate(row):
            if i != status_col:
                float(cell)
    # a zero-phi record serializes bound as the literal "inf"
    data = gen_compound_data(n=4, p=12, rho=0.0, s=2, seed=0)
    rec = evaluate_cell(data.design, data.y, data.beta, data.active, 0.1,
                        sigma_sq=data.sigma_sq)
    row = record_to_row(rec)
    assert row[RECORD_COLUMNS.index("bound")] == "inf"


def test_enum_config_rejects_oversized_support():
    with pytest.raises(InvalidConfig):
        small_config(p_grid=(30,), s=25)


def test_cell_failure_recorded_not_raised(monkeypatch):
    import compatkit.simulate as sim
    from compatkit.errors import SolverFailure

    real = sim.evaluate_cell

    def flaky(design, y, beta_true, s_true, delta, *args, **kwargs):
        if design.n == 40:
            raise SolverFailure("injected")
        return real(design, y, beta_true, s_true, delta, *args, **kwargs)

    monkeypatch.setattr(sim, "evaluate_cell", flaky)
    cfg = small_config(n_grid=(40, 80), p_grid=(6,), rho_grid=(0.0,), replications=1)
    records = list(run_grid(cfg))
    assert len(records) == 2
    failed = [r for r in records if r.status.startswith("Error:")]
    assert len(failed) == 1 and failed[0].n == 40
    assert math.isnan(failed[0].phi)
    assert records[1].status in ("Optimal", "ZeroDetected")


def test_phi_curve_identical_rows_give_constant_phi():
    rng = np.random.default_rng(3)
    row = rng.standard_normal(6)
    X = np.vstack([row + 0.01 * rng.standard_normal(6) for _ in range(10)])
    X = np.tile(X, (10, 1))  # 100 rows made of 10 repeated blocks
    y = rng.standard_normal(100)
    pts = phi_curve(X, y, ActiveSet((0, 1)), [10, 50, 100], sigma_sq=1.0,
                    beta_ref=np.zeros(6))
    phis = [p.phi for p in pts]
    assert phis[0] == pytest.approx(phis[1], abs=1e-6)
    assert phis[1] == pytest.approx(phis[2], abs=1e-6)


def test_phi_curve_rank_deficient_prefixes_report_zero():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((60, 30))
    beta = np.zeros(30)
    beta[:2] = 1.0
    y = X @ beta + rng.standard_normal(60)
    pts = phi_curve(X, y, ActiveSet((0, 1)), [6, 12], sigma_sq=1.0, beta_ref=beta)
    for pt in pts:
        assert pt.status == "ZeroDetected"
        assert pt.phi == 0.0
        assert pt.bound == math.inf
    assert all(p.mse >= 0 for p in pts)


def test_phi_curve_monotone_in_n_for_most_seeds():
    # the rank-driven regime n <~ p up through a few multiples of p; observed
    # 10/10 monotone when frozen, asserted at the 9/10 baseline
    good = 0
    for seed in range(10):
        data = gen_compound_data(n=200, p=40, rho=0.3, s=2, seed=600 + seed)
        pts = phi_curve(data.design.values, data.y, data.active, [15, 25, 50, 100, 200],
                        sigma_sq=data.sigma_sq, beta_ref=data.beta)
        phis = [p.phi for p in pts]
        good += all(b >= a - 1e-9 for a, b in zip(phis, phis[1:]))
    assert good >= 9


def test_phi_curve_rejects_bad_prefixes():
    X = np.random.default_rng(0).standard_normal((20, 4))
    y = np.zeros(20)
    with pytest.raises(PrefixTooSmall):
        phi_curve(X, y, ActiveSet((0, 1)), [30], sigma_sq=1.0, beta_ref=np.zeros(4))
    with pytest.raises(PrefixTooSmall):
        phi_curve(X, y, ActiveSet((0, 1, 2)), [3], sigma_sq=1.0, beta_ref=np.zeros(4))
