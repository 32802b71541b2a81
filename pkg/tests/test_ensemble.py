import csv
import json
import math

import numpy as np
import pytest

from rfo.ensemble import (
    ExperimentSpec,
    RealizationResult,
    aggregate,
    energy_trend_failure,
    run_ensemble,
    run_realization,
    stats_to_dict,
    sweep_parameter,
    with_parameter,
    write_realizations_csv,
    write_summary_json,
)
from rfo.fields import ModelParams, derive_rng
from rfo.sampler import ChainConfig

NAMES = ("m_par", "p_norm_sq", "energy_density")


def small_spec(eps=0.5, beta=2.0, N=8, realizations=6, **chain):
    kw = dict(therm_sweeps=100, meas_sweeps=400, observables=NAMES, block_eps=0.25)
    kw.update(chain)
    return ExperimentSpec(2, N, ModelParams(eps=eps, beta=beta), ChainConfig(**kw), realizations=realizations)


def test_spec_validation():
    with pytest.raises(ValueError):
        small_spec(realizations=0)
    with pytest.raises(ValueError):
        ExperimentSpec(2, 8, chain=ChainConfig(observables=()))
    with pytest.raises(ValueError):
        with_parameter(small_spec(), "coupling", 1.0)
    with pytest.raises(ValueError):
        sweep_parameter(small_spec(), "k", [1])


def test_infinite_temperature_mean_vanishes():
    st = run_ensemble(small_spec(eps=0.3, beta=0.0, therm_sweeps=50, init="random"))
    m = st["m_par"]
    assert st.failures == 0 and m.count == 6
    assert abs(m.mean) <= 4 * m.combined


def test_zero_disorder_realizations_agree():
    st = run_ensemble(small_spec(eps=0.0))
    for n in NAMES:
        s = st[n]
        # identical in law: spread between realizations is pure chain noise
        assert s.between <= 3 * s.within


def test_rerun_bit_reproduces():
    spec = small_spec(realizations=3)
    one = run_ensemble(spec)
    two = run_ensemble(spec)
    for a, b in zip(one.table, two.table):
        assert a == b
    assert run_realization(spec, 1) == one.table[1]


def _table(seed, R=7):
    rng = derive_rng(seed, 0)
    return [
        RealizationResult(i, {"x": float(rng.normal())}, {"x": float(rng.uniform(0.01, 0.1))}, 0.5)
        for i in range(R)
    ]


@pytest.mark.parametrize("seed", range(5))
def test_aggregate_permutation_invariant(seed):
    table = _table(seed)
    perm = [table[i] for i in derive_rng(seed, 1).permutation(len(table))]
    a, b = aggregate(table, ["x"], 0)["x"], aggregate(perm, ["x"], 0)["x"]
    assert a.mean == pytest.approx(b.mean, abs=1e-15)
    assert a.between == pytest.approx(b.between, abs=1e-15)
    assert a.within == pytest.approx(b.within, abs=1e-15)
    assert a.combined >= a.between


def test_aggregate_two_level_formulas():
    table = _table(9)
    vals = np.array([r.mean["x"] for r in table])
    ses = np.array([r.stderr["x"] for r in table])
    s = aggregate(table, ["x"], 0)["x"]
    assert s.mean == pytest.approx(vals.mean())
    assert s.between == pytest.approx(vals.std(ddof=1) / math.sqrt(7))
    assert s.within == pytest.approx(math.sqrt((ses**2).sum()) / 7)


def test_failures_excluded_and_counted():
    table = _table(3, 5)
    table[2] = RealizationResult(2, {}, {}, float("nan"), True, "boom")
    st = aggregate(table, ["x"], 0)
    assert st.failures == 1 and st["x"].count == 4
    assert stats_to_dict(st)["failed"] == [{"realization": 2, "reason": "boom"}]
    # a chain error inside a job becomes a recorded failure
    bad = small_spec(eps=0.0, realizations=2, block_eps=None)
    st = run_ensemble(bad)
    assert st.failures == 2 and all("eps > 0" in r.reason for r in st.table)
    assert math.isnan(st["m_par"].mean)


def test_energy_trend_detection():
    rng = derive_rng(4, 0)
    flat = rng.normal(size=2000)
    assert energy_trend_failure(flat, 5.0) is None
    drift = flat + np.linspace(0, 5, 2000)
    assert "sigma" in energy_trend_failure(drift, 5.0)
    assert energy_trend_failure(np.ones(10), 5.0) is None
    assert energy_trend_failure(np.r_[np.zeros(5), np.ones(5)], 5.0) is not None
    assert energy_trend_failure(np.ones(3), 5.0) is None


def test_beta_sweep_monotone_without_disorder():
    rows = sweep_parameter(small_spec(eps=0.0, realizations=4), "beta", [0.5, 1.0, 2.0, 4.0])
    for (_, lo), (_, hi) in zip(rows, rows[1:]):
        a, b = lo["m_par"], hi["m_par"]
        assert b.mean >= a.mean - 2 * math.hypot(a.combined, b.combined)


def test_eps_sweep_projection_non_increasing():
    rows = sweep_parameter(small_spec(beta=4.0), "eps", [0.8, 0.5, 0.25])
    for (_, hi), (_, lo) in zip(rows, rows[1:]):
        a, b = hi["p_norm_sq"], lo["p_norm_sq"]
        assert b.mean <= a.mean + 2 * math.hypot(a.combined, b.combined)


def test_sweep_shares_seeds():
    spec = small_spec(realizations=2)
    rows = sweep_parameter(spec, "N", [8, 8])
    assert rows[0][1].table == rows[1][1].table
    assert with_parameter(spec, "xi", 0.5).params.xi == 0.5


@pytest.mark.slow
def test_bad_box_density_stable_in_size():
    obs = ("m_par", "bad_box_density")
    spec = small_spec(eps=0.5, beta=4.0, realizations=4, observables=obs, meas_sweeps=200, block_eps=None)
    rows = sweep_parameter(spec, "N", [16, 24])
    (_, a), (_, b) = rows
    x, y = a["bad_box_density"], b["bad_box_density"]
    assert a.failures == b.failures == 0
    assert abs(x.mean - y.mean) <= 2 * math.hypot(x.combined, y.combined)


def test_outputs_embed_seed_and_version(tmp_path):
    st = run_ensemble(small_spec(realizations=2))
    path = tmp_path / "r.csv"
    write_realizations_csv(path, st, "9.9", {"eps": 0.5})
    lines = path.read_text().splitlines()
    assert lines[0] == "# rfo version=9.9 master=0 eps=0.5"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 2
    assert float(rows[1]["m_par"]) == st.table[1].mean["m_par"]
    js = tmp_path / "s.json"
    write_summary_json(js, {"version": "9.9", **stats_to_dict(st)})
    back = json.loads(js.read_text())
    assert back["master"] == 0 and back["version"] == "9.9"
    assert back["observables"]["m_par"]["count"] == 2
