"""Acceptance criteria 1 to 12.

Experiment criteria run the bundled presets through the command line once
per session; the per-criterion verdicts are printed in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from nsamp import cli
from nsamp import config as cfgmod
from nsamp import denoisers as dn
from nsamp import io
from nsamp import state_evolution as se
from nsamp.ensembles import goe_geometry_probe, operator_norm, sample_goe
from nsamp.experiments import nmse, piecewise_constant_image

from oracles import brute_force_nlm, fd_divergence, lockstep

pytestmark = pytest.mark.acceptance

PRESETS = cfgmod.preset_names()


@pytest.fixture(scope="module")
def preset_runs(tmp_path_factory):
    """Run every preset once; returns {name: (out_dir, seconds)}."""
    root = tmp_path_factory.mktemp("presets")
    out = {}
    for name in PRESETS:
        start = time.perf_counter()
        code = cli.main(["run", "--config", name, "--out-dir", str(root / name)])
        assert code == 0, name
        out[name] = (root / name, time.perf_counter() - start)
    return out


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def report(criterion, **values):
    print(f"criterion {criterion}: " + ", ".join(f"{k}={v:.4g}" for k, v in values.items()))


@pytest.mark.criterion_1
def test_goe_operator_norm():
    start = time.perf_counter()
    norms = [operator_norm(sample_goe(1000, s)) for s in range(5)]
    elapsed = time.perf_counter() - start
    report(1, max_dev=max(abs(x - 2) for x in norms), seconds=elapsed)
    assert all(abs(x - 2.0) <= 0.15 for x in norms)
    assert elapsed <= 30


@pytest.mark.criterion_2
def test_goe_geometry():
    n = 2000
    inner, energy = [], []
    for s in range(10):
        rng = np.random.default_rng(1000 + s)
        u, v = rng.standard_normal(n), rng.standard_normal(n)
        u *= np.sqrt(n) / np.linalg.norm(u)
        v *= np.sqrt(n) / np.linalg.norm(v)
        a, b = goe_geometry_probe(sample_goe(n, s), u, v)
        inner.append(a)
        energy.append(b)
    report(2, max_inner=max(map(abs, inner)), min_energy=min(energy), max_energy=max(energy))
    assert sum(abs(a) <= 0.1 for a in inner) >= 9
    assert all(0.9 <= b <= 1.1 for b in energy)


@pytest.mark.criterion_3
def test_stein_identity():
    lhs, rhs = se.stein_check(dn.soft_threshold_denoiser(1.0), [[1.0, 0.7], [0.7, 1.0]], 4000, mc_samples=200)
    report(3, lhs=lhs, rhs=rhs, rel=abs(lhs - rhs) / abs(rhs))
    assert abs(lhs - rhs) <= 0.03 * abs(rhs)


@pytest.mark.criterion_4
def test_divergence_oracles():
    shape = dn.MatrixShape(20, 30)
    worst = 0.0
    for s in range(10):
        y = np.random.default_rng(s).standard_normal(600)
        lam = 0.5 * np.linalg.svd(shape.as_matrix(y), compute_uv=False)[0]
        exact = dn.svt_divergence(y, shape, lam)
        cfg = dn.DivergenceEstimatorConfig(epsilon=1e-4, num_samples=50, seed=s)
        mc = dn.mc_divergence(lambda v: dn.svt(v, shape, lam), y, cfg)
        worst = max(worst, abs(mc - exact) / exact)
    x = np.random.default_rng(99).standard_normal(50)
    ball = dn.Ball(2.0)
    ball_err = abs(fd_divergence(ball.project, x) - ball.divergence(x)) / ball.divergence(x)
    report(4, svt_rel=worst, ball_rel=ball_err)
    assert worst <= 0.05
    assert ball_err <= 0.01


@pytest.mark.criterion_5
def test_matrix_cs_tracking(preset_runs):
    out, seconds = preset_runs["matrix_cs_desk"]
    comp = io.read_csv(out / "comparison.csv")
    assert list(comp["t"]) == list(range(9))
    gap = np.abs(comp["nmse_emp"] - comp["nmse_pred"])
    report(5, max_gap=gap.max(), final_nmse=comp["nmse_emp"][-1], seconds=seconds)
    assert gap.max() <= 0.05
    assert comp["nmse_emp"][-1] <= 0.1
    assert seconds <= 300


@pytest.mark.criterion_6
def test_separable_tracking(preset_runs):
    out, _ = preset_runs["separable_desk"]
    comp = io.read_csv(out / "comparison.csv")
    assert list(comp["t"]) == list(range(11))
    gap = np.abs(comp["nmse_emp"] - comp["nmse_pred"])
    tau = np.sqrt(comp["tau_sq"])
    noise_rel = np.abs(comp["resid_over_sqrt_m"] - tau) / tau
    report(6, max_gap=gap.max(), max_noise_rel=noise_rel.max())
    assert gap.max() <= 0.02
    assert noise_rel.max() <= 0.1


@pytest.mark.criterion_7
def test_convex_rate(preset_runs):
    out, _ = preset_runs["convex_desk"]
    tab = io.read_csv(out / "convex.csv")
    res = manifest(out)["results"]
    assert res["rho"] == 0.5 and res["stat_dim"] == 1500
    # bound_next[t] bounds the error of theta^{t+1}
    ratio = tab["mse"][1:12] / tab["bound_next"][:11]
    report(7, max_ratio=ratio.max(), slope=res["slope"], log_rho=math.log(0.5))
    assert ratio.max() <= 1.25
    assert abs(res["slope"] - math.log(0.5)) <= 0.25 * abs(math.log(0.5))


@pytest.mark.criterion_8
def test_lamp_matches_amp(preset_runs):
    out, _ = preset_runs["lamp_desk"]
    tab = io.read_csv(out / "symmetric.csv")
    res = manifest(out)["results"]
    assert manifest(out)["config"]["problem"]["n"] == 4000
    assert list(tab["t"]) == [1, 2, 3, 4, 5]
    report(8, max_lamp_gap=tab["lamp_gap"].max(), geometry_gap=res["lamp_geometry_gap"])
    assert tab["lamp_gap"].max() <= 0.05
    assert res["lamp_geometry_gap"] <= 0.05


@pytest.mark.criterion_9
def test_onsager_estimators(preset_runs):
    out, _ = preset_runs["onsager_desk"]
    tab = io.read_csv(out / "onsager.csv")
    assert list(tab["t"]) == [1, 2, 3, 4, 5]
    report(9, max_seed_mean_diff=tab["abs_diff"].max(), max_single_seed_diff=tab["max_seed_abs_diff"].max())
    assert tab["abs_diff"].max() <= 0.02


@pytest.mark.criterion_10
def test_cs_asymmetric_equivalence():
    gaps = lockstep(500, 1000, 5)
    report(10, max_rel=gaps.max())
    assert gaps.max() <= 1e-9


@pytest.mark.criterion_11
def test_nlm_suite(preset_runs):
    shape = dn.MatrixShape(12, 10)
    const = np.full(120, 0.42)
    np.testing.assert_array_equal(dn.nlm(const, shape, 5, 5, 0.1), const)

    Z = np.random.default_rng(11).random((16, 16))
    out = dn.nlm(Z.ravel(), dn.MatrixShape(16, 16), 3, 2, 0.5).reshape(16, 16)
    oracle_err = np.abs(out - brute_force_nlm(Z, 3, 2, 0.5)).max()
    assert oracle_err <= 1e-10

    img = piecewise_constant_image(64, 64, 0)
    noisy = np.clip(img + 0.1 * np.random.default_rng(12).standard_normal(img.shape), -1, 2)
    den = dn.nlm(noisy.ravel(), dn.MatrixShape(64, 64), 5, 5, 0.2)
    assert noisy.min() <= den.min() and den.max() <= noisy.max()
    assert nmse(den, img.ravel()) < nmse(noisy.ravel(), img.ravel())

    run_dir, _ = preset_runs["image_desk"]
    comp = io.read_csv(run_dir / "comparison.csv")
    assert list(comp["t"]) == list(range(6))
    gap = np.abs(comp["nmse_emp"] - comp["nmse_pred"])
    report(11, oracle_err=oracle_err, nmse_t5=comp["nmse_emp"][5], max_gap=gap.max())
    assert comp["nmse_emp"][5] <= 0.2
    assert gap.max() <= 0.1


@pytest.mark.criterion_12
@pytest.mark.parametrize("name", PRESETS)
def test_determinism(preset_runs, tmp_path, name):
    first, _ = preset_runs[name]
    assert cli.main(["run", "--config", name, "--out-dir", str(tmp_path)]) == 0
    csvs = sorted(p.name for p in first.glob("*.csv"))
    assert csvs == sorted(p.name for p in tmp_path.glob("*.csv"))
    for f in csvs:
        assert (first / f).read_bytes() == (tmp_path / f).read_bytes(), f
