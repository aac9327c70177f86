"""Smoke test for the checkprobe Python module.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import json
import math
from pathlib import Path

import checkprobe as cp

ROOT = Path(__file__).resolve().parent.parent


def close(a, b, rel):
    return abs(a - b) <= rel * abs(b)


def main():
    r = cp.Response.lorentzian(6.5, 33e6)
    assert close(r(0.0), 6.5, 1e-12)
    assert close(r(16.5e6), 3.25, 1e-12)

    assert cp.pass_probability(3.0, 0) == 1.0
    widths = [cp.posterior_fwhm(r, t) for t in (1, 7, 13)]
    assert widths[0] > widths[1] > widths[2], widths
    f, dens = cp.posterior(r, 7)
    step = f[1] - f[0]
    assert close(sum(dens) * step, 1.0, 1e-3)
    sig = cp.probe_signal(r, 13, [0.0, 50e6])
    assert sig[0] > sig[1] > 0.0

    try:
        cp.posterior(r, 0)
    except ValueError as e:
        assert "improper" in str(e)
    else:
        raise AssertionError("T=0 must be rejected")

    lzs = cp.Response.lzs(1.0, 118e6, 26e6, 70e6, 8.7e-9, 16.4e-9)
    assert abs(lzs(70e6) - cp.lzs_oracle(lzs, 70e6)) < 0.1 * lzs.peak

    half = cp.mean_counts([36e6 / 0.6e9], "diff-only", 25.0, 36e6, gamma_d=0.6e9)[0]
    assert close(half, 12.5, 1e-12)
    assert set(cp.model_variants()) >= {"no-recap", "full", "diff-only"}

    cfg = json.loads((ROOT / "configs" / "nir_dynamics.json").read_text())
    cfg["repetitions"] = 20000
    text = json.dumps(cfg)
    data = cp.simulate_dynamics(text, seed=3)
    again = cp.simulate_dynamics(text, seed=3)
    assert data.mean == again.mean
    assert len(data) == 26 and data.threshold == 10
    assert cp.config_hash(text) != cp.config_hash(json.dumps({**cfg, "seed": 4}))

    back = cp.Dataset.from_csv(data.to_csv())
    assert back.delays == data.delays and back.mean == data.mean

    truth = dict(c0=25.0, gamma_hz=36e6, gamma_d=0.6e9, gamma_i=1.0)
    exact = cp.mean_counts(data.delays, "no-recap", **truth)
    synthetic = cp.Dataset(10, data.delays, exact, [0.01 * m + 1e-3 for m in exact])
    fit = cp.fit_dynamics(synthetic, "no-recap")
    assert fit.converged
    assert close(fit["gamma_d"], 0.6e9, 1e-4) and close(fit["gamma_i"], 1.0, 1e-3), fit

    fits = cp.compare_models(data)
    best = min(fits, key=lambda k: fits[k].bic)
    assert math.isfinite(fits[best].bic)
    print(f"ok: posterior FWHM {[round(w / 1e6, 1) for w in widths]} MHz, {fit}, best BIC {best}")


if __name__ == "__main__":
    main()
