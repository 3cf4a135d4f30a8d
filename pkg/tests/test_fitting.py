import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qreadout import fitting as ft
from qreadout.distributions import peak_pdf_minus, support_hint
from qreadout.model import QubitState, ReadoutConfig, simulate_binned

DEVICE = dict(gamma=4.0, tau_m=2.5, r=110.0, tau_b=0.075, p_plus=0.47)


def device_config(**kw):
    p = {**DEVICE, **kw}
    n = ft.bins_for(p["tau_m"], p["tau_b"])
    return ReadoutConfig(r=p["r"], gamma=p["gamma"], tau_m=n * p["tau_b"], n_bins=n, p_plus=p["p_plus"])


# ---------------------------------------------------------------- ingestion


def test_edges_csv_round_trip(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("edge_lo,edge_hi,count\n0.0,0.5,3\n0.5,1.0,7\n1.0,2.0,0\n")
    h = ft.ingest_histogram(path)
    assert h.counts.tolist() == [3, 7, 0] and h.edges.tolist() == [0.0, 0.5, 1.0, 2.0]
    out = tmp_path / "g.csv"
    ft.write_histogram(h, out)
    again = ft.ingest_histogram(out)
    assert np.array_equal(again.edges, h.edges) and np.array_equal(again.counts, h.counts)


def test_raw_samples_are_binned(tmp_path):
    x = np.random.default_rng(0).normal(size=10**5)
    path = tmp_path / "raw.csv"
    path.write_text("psi\n" + "\n".join(repr(float(v)) for v in x) + "\n")
    h = ft.ingest_histogram(path, fmt="raw")
    assert h.total == 10**5
    assert h.edges.size - 1 == np.histogram_bin_edges(x, bins="fd").size - 1


@pytest.mark.parametrize(
    "body,line",
    [
        ("edge_lo,edge_hi,count\n0,1,3\n0.5,2,1\n", 3),
        ("0,1,3\n1,0.5,1\n", 2),
        ("0,1,3\n1,2,-1\n", 2),
        ("0,1,3\n1,2,x\n", 2),
        ("0,1,3\n1,2\n", 2),
    ],
)
def test_malformed_rows_are_located(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ft.HistogramError, match=f"bad.csv:{line}:"):
        ft.ingest_histogram(path)


def test_empty_and_missing_inputs(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("edge_lo,edge_hi,count\n")
    with pytest.raises(ft.HistogramError):
        ft.ingest_histogram(path)
    with pytest.raises(ft.HistogramError):
        ft.ingest_histogram(tmp_path / "nope.csv")
    with pytest.raises(ft.HistogramError):
        ft.Histogram([0, 1, 2], [0, 0])
    with pytest.raises(ft.HistogramError):
        ft.Histogram([0, 2, 1], [1, 1])


# ---------------------------------------------------------------- mixture


def test_mixture_without_plus_is_minus():
    params = ft.FitParams(2.0, 110.0, 0.075, 0.0)
    x = np.linspace(-2, 2, 41)
    cfg = device_config()
    assert np.allclose(ft.mixture_pdf(x, params, 4.0, 2.5), peak_pdf_minus(x, cfg), rtol=1e-13)


def test_device_mixture_is_bimodal():
    params = ft.FitParams(2.0, 110.0, 0.075, 0.47)
    x = np.linspace(-2, 2.5, 2001)
    f = ft.mixture_pdf(x, params, 4.0, 2.5)
    peaks = x[1:-1][(f[1:-1] > f[:-2]) & (f[1:-1] > f[2:])]
    assert len(peaks) == 2
    assert -1.0 < peaks[0] < -0.2 and peaks[1] > 0.9


@settings(max_examples=10)
@given(st.floats(20, 400), st.floats(0.02, 0.5), st.floats(0.0, 1.0))
def test_mixture_normalized(r, tau_b, p):
    params = ft.FitParams(1.0, r, tau_b, p)
    lo, hi = support_hint(1 / np.sqrt(r * tau_b))
    f = lambda v: float(ft.mixture_pdf(np.array([v]), params, 4.0, 2.5)[0])
    val, _ = quad(f, lo, hi, points=[-1, 1], limit=300, epsabs=1e-10)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_raw_mapping_inverts():
    x = np.linspace(-1, 3, 9)
    assert np.allclose(ft.to_reduced(ft.to_raw(x, 2.0), 2.0), x)
    assert ft.to_reduced(2.0, 2.0) == 1.0 and ft.to_reduced(0.0, 2.0) == -1.0


def test_bin_probabilities_sum_to_one():
    h = ft.Histogram(np.linspace(0, 2.5, 31), np.ones(30, dtype=int))
    p = ft.bin_probabilities(h, ft.FitParams(2.0, 110.0, 0.075, 0.47), 4.0, 2.5)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- fits


@pytest.fixture(scope="module")
def device_fit():
    cfg = device_config()
    raw = ft.synthetic_peaks(cfg, 20000, np.random.default_rng(2024), scale=2.0)
    hist = ft.Histogram.from_samples(raw)
    truth = ft.FitParams(2.0, DEVICE["r"], DEVICE["tau_b"], DEVICE["p_plus"])
    guess = ft.FitParams(1.8, 80.0, 0.1, 0.4)
    return hist, truth, ft.fit(hist, 4.0, 2.5, init=guess)


def test_fit_round_trip(device_fit):
    hist, truth, res = device_fit
    assert res.r == pytest.approx(truth.r, rel=0.10)
    assert abs(res.p_plus - truth.p_plus) < 0.02
    assert res.tau_b == pytest.approx(truth.tau_b, rel=0.15)
    assert res.I == pytest.approx(2.0, rel=0.02)
    assert np.all(np.isfinite(res.stderr)) and np.all(res.stderr > 0)


def test_fit_likelihood_not_below_truth(device_fit):
    hist, truth, res = device_fit
    assert res.log_likelihood >= ft.log_likelihood(hist, truth, 4.0, 2.5) - 2.0


def test_fit_goodness(device_fit):
    hist, truth, res = device_fit
    assert res.dof > 5
    assert res.chi2 < res.dof + 5 * np.sqrt(2 * res.dof)
    d = json.loads(json.dumps(res.to_json()))
    assert {"I", "r", "tau_b", "p_plus", "chi2", "dof"} <= set(d)


@pytest.mark.slow
def test_fit_insensitive_to_init(device_fit):
    hist, truth, ref = device_fit
    for f in (0.5, 1.5):
        init = ft.FitParams(2.0 * f, 110.0 * f, 0.075 * f, 0.47)
        res = ft.fit(hist, 4.0, 2.5, init=init, n_starts=4, seed=1)
        assert res.r == pytest.approx(ref.r, rel=0.02)
        assert abs(res.p_plus - ref.p_plus) < 0.005
        assert res.log_likelihood >= ref.log_likelihood - 0.1


def test_fit_recovers_empty_plus_prior():
    cfg = device_config()
    psi = simulate_binned(cfg, QubitState.MINUS, 20000, np.random.default_rng(7)).max(axis=1)
    raw = ft.to_raw(psi, 2.0)
    hist = ft.Histogram.from_samples(raw)
    res = ft.fit(hist, 4.0, 2.5, init=ft.FitParams(2.0, 100.0, 0.08, 0.2), fix_scale=True, n_starts=3)
    assert res.p_plus < 0.01
    assert res.I == 2.0 and res.covariance[0, 0] == 0.0


def test_fit_needs_enough_bins():
    h = ft.Histogram(np.linspace(0, 1, 10), np.arange(9))
    with pytest.raises(ft.HistogramError):
        ft.fit(h, 4.0, 2.5)


@pytest.mark.slow
@pytest.mark.parametrize("k", range(5))
def test_round_trip_random_parameters(k):
    # box: r in [30, 300], tau_b in [0.02, 0.3], P(+) in [0.2, 0.8]
    rng = np.random.default_rng(100 + k)
    r = float(np.exp(rng.uniform(np.log(30), np.log(300))))
    tau_b = float(np.exp(rng.uniform(np.log(0.02), np.log(0.3))))
    p = float(rng.uniform(0.2, 0.8))
    cfg = device_config(r=r, tau_b=tau_b, p_plus=p)
    true_tau_b = cfg.tau_b
    hist = ft.Histogram.from_samples(ft.synthetic_peaks(cfg, 20000, rng, scale=2.0))
    guess = ft.FitParams(2.0 * 1.1, r * 0.8, tau_b * 1.2, 0.5)
    res = ft.fit(hist, 4.0, 2.5, init=guess)
    assert res.r == pytest.approx(r, rel=0.10)
    assert abs(res.p_plus - p) < 0.02
    assert res.tau_b == pytest.approx(true_tau_b, rel=0.15)
