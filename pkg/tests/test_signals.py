import logging

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from vitalconv.signals import (
    BPEstimate,
    GlobalBounds,
    Kind,
    Unit,
    UnitError,
    Waveform,
    global_minmax,
    local_minmax,
    mean_arterial_pressure,
    rescale_abp,
    to_mmHg,
    zero_center,
    zero_pad,
)

UCI = GlobalBounds(50.0, 189.98)
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def wf(samples, kind=Kind.ECG, unit=Unit.RAW):
    return Waveform(kind, np.asarray(samples, dtype=float), unit=unit)


def test_local_minmax_examples():
    assert np.allclose(local_minmax(wf([2, 4, 6])).samples, [0, 0.5, 1])
    assert np.array_equal(local_minmax(wf([5, 5, 5])).samples, [0, 0, 0])
    unit = np.array([0.0, 0.3, 1.0, 0.7])
    assert np.allclose(local_minmax(wf(unit)).samples, unit)


def test_waveform_rejects_empty():
    with pytest.raises(ValueError):
        wf([])
    with pytest.raises(ValueError):
        GlobalBounds(10, 10)


def test_global_minmax_uci_bounds():
    out = global_minmax(wf([50.0, 189.98], Kind.ABP, Unit.MMHG), UCI)
    assert out.unit is Unit.GLOBAL
    assert out.samples[0] == pytest.approx(0.0, abs=1e-12)
    assert out.samples[1] == pytest.approx(1.0, abs=1e-12)


def test_global_minmax_requires_mmhg():
    with pytest.raises(UnitError):
        global_minmax(wf([0.1, 0.2], Kind.ABP, Unit.LOCAL), UCI)
    with pytest.raises(UnitError):
        to_mmHg(wf([80.0], Kind.ABP, Unit.MMHG), UCI)


def test_global_minmax_clamps_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        out = global_minmax(wf([0.0, 120.0, 400.0], Kind.ABP, Unit.MMHG), UCI, slack=0.05)
    assert "clamping" in caplog.text
    assert out.samples.min() == pytest.approx(-0.05) and out.samples.max() == pytest.approx(1.05)


def test_zero_center():
    out = zero_center(wf(np.linspace(0, 1, 11), unit=Unit.LOCAL))
    assert abs(out.samples.mean()) < 1e-12
    with pytest.raises(UnitError):
        zero_center(wf([0.1, 0.5], Kind.ABP, Unit.GLOBAL))


def test_zero_pad_examples():
    x = wf(np.arange(1, 1251))
    out = zero_pad(x, 1280)
    assert len(out) == 1280
    assert np.all(out.samples[:15] == 0) and np.all(out.samples[-15:] == 0)
    assert np.array_equal(out.samples[15:-15], x.samples)
    assert np.array_equal(zero_pad(x, 1250).samples, x.samples)
    odd = zero_pad(wf([1.0, 2.0]), 5).samples
    assert np.array_equal(odd, [0, 1, 2, 0, 0])
    with pytest.raises(ValueError):
        zero_pad(x, 1000)


def test_rescale_abp_examples():
    y = wf(np.linspace(0, 1, 50), Kind.ABP, Unit.LOCAL)
    bp = BPEstimate.from_mmHg(120.0, 80.0, UCI)
    out = rescale_abp(y, bp)
    assert out.unit is Unit.MMHG
    assert out.samples.max() == pytest.approx(120.0, abs=1e-9)
    assert out.samples.min() == pytest.approx(80.0, abs=1e-9)
    flat = rescale_abp(wf(np.zeros(10), Kind.ABP, Unit.LOCAL), bp).samples
    assert np.allclose(flat, 80.0)
    assert bp.map_mmHg == pytest.approx(93.33, abs=5e-3)
    assert mean_arterial_pressure(120, 80) == pytest.approx(280 / 3)


def test_rescale_abp_errors():
    with pytest.raises(ValueError):
        BPEstimate.from_mmHg(80.0, 120.0, UCI)
    with pytest.raises(UnitError):
        rescale_abp(wf([0.0, 1.0], Kind.ABP, Unit.GLOBAL), BPEstimate.from_mmHg(120.0, 80.0, UCI))


# ---------------------------------------------------------------- properties


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 64), elements=finite), st.floats(1e-3, 1e3), finite)
def test_local_minmax_affine_invariant(x, a, c):
    assume(np.ptp(x) > 1e-6)
    base = local_minmax(wf(x)).samples
    assert base.min() == pytest.approx(0.0, abs=1e-9) and base.max() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(local_minmax(wf(a * x + c)).samples, base, atol=1e-6)
    assert np.allclose(local_minmax(wf(base)).samples, base, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 64), elements=st.floats(50, 189.98)))
def test_global_round_trip(x):
    back = to_mmHg(global_minmax(wf(x, Kind.ABP, Unit.MMHG), UCI), UCI).samples
    assert np.max(np.abs(back - x)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(3, 64), elements=st.floats(0, 1)), st.floats(60, 180), st.floats(1, 60))
def test_rescale_is_affine(y, sbp, gap):
    assume(np.ptp(y) > 1e-3)
    out = rescale_abp(wf(y, Kind.ABP, Unit.LOCAL), BPEstimate.from_mmHg(sbp, sbp - gap, UCI)).samples
    assert oracles.pearson(y, out) == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.diff(out[np.argsort(y)]) >= -1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.integers(0, 41))
def test_zero_pad_keeps_center(x, extra):
    out = zero_pad(wf(x), len(x) + extra).samples
    left = extra // 2
    assert np.array_equal(out[left: left + len(x)], x)
    assert np.count_nonzero(out[:left]) == 0 and np.count_nonzero(out[left + len(x):]) == 0
