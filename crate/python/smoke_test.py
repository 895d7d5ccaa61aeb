"""Smoke test for the Python bindings.

Build and install first, e.g. ``maturin develop --release`` in crates/python,
then run ``python python/smoke_test.py`` or ``pytest python/``.
"""

import json
import math

import ratiotune_py as rt


def test_dataset_round_trip():
    d = rt.Dataset([0.0, 1.0, 2.0, 3.0], [2, 2], dtype="f64", field="t", step=3)
    assert d.shape == [2, 2] and d.dtype == "f64" and d.field == "t" and d.step == 3
    assert d.values == [0.0, 1.0, 2.0, 3.0] and len(d) == 4
    try:
        rt.Dataset([1.0, 2.0], [3])
    except rt.RatiotuneError:
        pass
    else:
        raise AssertionError("shape mismatch accepted")


def test_compress_decompress_respects_the_bound():
    data = rt.smooth_field([32, 32], 1)
    for name in ("pq", "bt"):
        c = rt.Compressor(name)
        blob = c.compress(data, 1e-3)
        back = c.decompress(blob)
        assert back.shape == data.shape
        assert rt.max_abs_error(data, back) <= 1e-3
        assert c.eval_ratio(data, 1e-3) > 1.0


def test_tune_meets_the_target():
    data = rt.smooth_field([64, 64], 2)
    vals = data.values
    spec = rt.TargetSpec(8.0, max(vals) - min(vals), seed=1)
    c = rt.Compressor("pq")
    r = rt.tune(c, data, spec)
    assert r.feasible and spec.accepts(r.rho_achieved)
    assert spec.accepts(c.eval_ratio(data, r.error_bound))
    assert r.compressor_calls > 0
    assert json.loads(r.to_json())["feasible"] is True


def test_series_reuses_the_bound():
    base = rt.smooth_field([32, 32], 3)
    steps = [rt.Dataset(base.values, base.shape, field="f", step=t) for t in range(5)]
    r = rt.tune_series(rt.Compressor("bt"), steps, rt.TargetSpec(5.0, 2.0, seed=2))
    assert r.feasible and r.retrain_steps == [0]


def test_sweep_and_metrics():
    data = rt.noisy_field([16, 16], 4)
    ratios = rt.sweep(rt.Compressor("bt"), data, [1e-4, 1e-2, 1e-1])
    assert len(ratios) == 3 and ratios[0] <= ratios[-1]
    a = rt.Dataset([0.0, 1.0], [2], dtype="f64")
    b = rt.Dataset([0.5, 0.5], [2], dtype="f64")
    assert abs(rt.psnr(a, b) - 20 * math.log10(2)) < 1e-9
    assert rt.rmse(a, b) == 0.5
    assert rt.ssim(data, data) == 1.0
    assert rt.ssim(a, b) is None


def test_minimize_python_objective():
    x, value, evals = rt.minimize(lambda x: (x - 0.3) ** 2, 0.0, 1.0, cutoff=1e-8, seed=5)
    assert abs(x - 0.3) < 1e-3 and value <= 1e-8 and evals <= 100


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok  {name}")
