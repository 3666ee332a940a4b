"""The twelve acceptance criteria, each at its stated tolerance.

Every test prints one ``ACCEPTANCE <n> PASS|FAIL`` line (visible even when
pytest captures output) before asserting.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from casgrad.baselines import cd_noise_error
from casgrad.casg import _positive_cubic_root, casg_sample_set, get_lambda_next, get_sigma_star, hadamard
from casgrad.cli import main
from casgrad.ecasg import Partition, assemble_blocks, cell_sizes, subdivide
from casgrad.global_model import fit_rbf, model_query
from casgrad.harness.config import dfo_config, sensitivity_config
from casgrad.harness.dfo import data_profile, dfo_run, select_best
from casgrad.harness.sensitivity import sensitivity_experiment, summarize, toy_sweep
from casgrad.history import EvaluationHistory
from casgrad.simplex_core import CurvatureSpec, approximation_error, difference_matrix, noise_error, objective

from conftest import naive_sigma_star, random_curvatures, random_orthogonal, random_symmetric

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return _report


def _feasible_stack(rng, n, d, h):
    """Random difference matrices with spectral norm uniform in (0.05 h, h]."""
    S = rng.normal(size=(n, d, d))
    sv = np.linalg.svd(S, compute_uv=False)
    S *= (h * rng.uniform(0.05, 1.0, size=n) / sv[:, 0])[:, None, None]
    return S


def _stack_objective(S, H, sigma, h):
    """Objective for a stack of difference matrices; inf where infeasible."""
    sv = np.linalg.svd(S, compute_uv=False)
    Sinv = np.linalg.inv(S)
    SinvT = np.swapaxes(Sinv, 1, 2)
    curv = np.einsum("nji,jk,nki->ni", S, H, S)
    ae = 0.25 * np.sum(np.einsum("nij,nj->ni", SinvT, curv) ** 2, axis=1)
    ne = sigma**2 * (np.sum(Sinv**2, axis=(1, 2)) + np.sum(SinvT.sum(axis=2) ** 2, axis=1))
    out = ae + ne
    out[(sv[:, 0] > h * (1 + 1e-12)) | (sv[:, 0] > 1e12 * sv[:, -1])] = np.inf
    return out


def test_01_optimality_against_random_search(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = -np.inf
    for i in range(50):
        d = (2, 4, 8)[i % 3]
        H = random_symmetric(rng, d)
        sigma, h = 10.0 ** rng.uniform(-3, 0), 10.0 ** rng.uniform(-1, 1)
        spec = CurvatureSpec(H, sigma, h)
        _, res = casg_sample_set(spec, np.zeros(d))
        best = res.objective_value
        for chunk in range(4):
            n = 25_000
            if chunk < 2:
                S = _feasible_stack(rng, n, d, h)
            else:
                # perturbations of the optimum, rescaled back into the ball when needed
                S = res.S_star[None] * (1 + 0.1 * rng.normal(size=(n, 1, 1))) + 0.05 * h * rng.normal(size=(n, d, d))
                sv = np.linalg.svd(S, compute_uv=False)[:, 0]
                S *= np.minimum(1.0, h / sv)[:, None, None]
            vals = _stack_objective(S, H, sigma, h)
            worst = max(worst, (best - vals.min()) / vals.min())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed <= 120
    report(1, ok, f"max relative gain of random S over CASG {worst:.3g} (slack 1e-9), {elapsed:.1f}s")
    assert ok


def test_02_closed_form_solver(report):
    rng = np.random.default_rng(202)
    j_mismatch, lam_err, foc, cubic_res, quartic_res = 0, 0.0, 0.0, 0.0, 0.0
    for _ in range(200):
        d = int(rng.integers(1, 65))
        D = random_curvatures(rng, d)
        sigma, h = 10.0 ** rng.uniform(-4, 1), 10.0 ** rng.uniform(-2, 1)
        sol = get_sigma_star(D, sigma, h)
        lam_ref, J_ref = naive_sigma_star(D, sigma, h)
        j_mismatch += sol.J != J_ref
        lam_err = max(lam_err, float(np.max(np.abs(sol.lam - lam_ref) / lam_ref)))
        lam = sol.lam
        if sol.J < d:
            lmax = lam.max()
            free = np.arange(max(sol.J, 1), d)
            g = D[free] * sol.a / (2 * d * lmax) - sigma**2 / lam[free] ** 2
            foc = max(foc, float(np.max(np.abs(g) / (sigma**2 / lam[free] ** 2), initial=0.0)))
            if sol.J == 0:
                r = D[0] * sol.a / (2 * d * lam[0]) - sol.a**2 / (4 * d * lam[0] ** 2) - sigma**2 * (d + 1) / lam[0] ** 2
                foc = max(foc, abs(r) / (D[0] * sol.a / (2 * d * lam[0])))
        # quartic branch
        if np.all(D > 0):
            c1 = float(np.sum(np.sqrt(D)))
            lam1, a = get_lambda_next(0, D, sigma, h, c1, 0.0)
            C = float(np.sum(np.sqrt(D[1:])))
            q = a * a / 2 + 2 * sigma**2 * d * (d + 1)
            rhs = (sigma * math.sqrt(2 * d / D[0] * q) * C + q) / a
            quartic_res = max(quartic_res, abs(a - rhs) / a)
    # both cubic branches
    hits = {1: 0, -1: 0}
    for _ in range(2000):
        c1 = 10.0 ** rng.uniform(-6, 6)
        c2 = 10.0 ** rng.uniform(-6, 6) * rng.choice([1.0, -1.0])
        hits[1 if 27 * c1**2 - 4 * c2**3 > 0 else -1] += 1
        x = float(_positive_cubic_root(c1, c2))
        cubic_res = max(cubic_res, abs(x**3 - c2 * x - c1) / (abs(x**3) + abs(c2 * x) + abs(c1)))
    ok = (j_mismatch == 0 and lam_err <= 1e-10 and foc <= 1e-8 and cubic_res <= 1e-9
          and quartic_res <= 1e-9 and min(hits.values()) > 0)
    report(2, ok, f"J mismatches {j_mismatch}, lambda rel err {lam_err:.2g}, FOC {foc:.2g}, "
                  f"cubic residual {cubic_res:.2g} (branches {hits}), quartic residual {quartic_res:.2g}")
    assert ok


def test_03_mse_decomposition(report):
    rng = np.random.default_rng(303)
    n = 100_000
    t0 = time.perf_counter()
    worst_noise = worst_total = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 7))
        sigma, h = 10.0 ** rng.uniform(-2, 0), 1.0
        S = _feasible_stack(rng, 1, d, h)[0]
        SinvT = np.linalg.inv(S).T
        eps = sigma * rng.standard_normal((n, d + 1))
        g = (eps[:, 1:] - eps[:, :1]) @ SinvT.T
        err = np.sum(g * g, axis=1)
        z = abs(err.mean() - noise_error(S, sigma)) / (err.std(ddof=1) / math.sqrt(n))
        worst_noise = max(worst_noise, z)

        H = random_symmetric(rng, d, (-1, 1))
        b = rng.normal(size=d)
        x0 = rng.normal(size=d)
        f = lambda X: 0.5 * np.einsum("ni,ij,nj->n", X, H, X) + X @ b
        pts = np.vstack([x0, x0 + S.T])
        df = f(pts[1:]) - f(pts[:1])
        g_true = H @ x0 + b
        eps = sigma * rng.standard_normal((n, d + 1))
        g = (df[None, :] + eps[:, 1:] - eps[:, :1]) @ SinvT.T
        err = np.sum((g - g_true) ** 2, axis=1)
        total = objective(S, CurvatureSpec(H, sigma, h))
        z = abs(err.mean() - total) / (err.std(ddof=1) / math.sqrt(n))
        worst_total = max(worst_total, z)
    elapsed = time.perf_counter() - t0
    ok = worst_noise <= 3 and worst_total <= 3 and elapsed <= 60
    report(3, ok, f"max |z| noise-only {worst_noise:.2f}, quadratic total {worst_total:.2f} (limit 3), {elapsed:.1f}s")
    assert ok


def test_04_toy_sweep(report):
    sigma, h = 0.1, 100.0
    ks = [10.0**e for e in range(-4, 5)]
    rows = toy_sweep(ks, sigma, h)
    dominated = all(r["casg"] <= r["fd"] * (1 + 1e-12) for r in rows)
    small = [r for r in rows if r["k"] <= 1e-2]
    min_ratio = min(r["ratio_fd_casg"] for r in small)
    neg = toy_sweep([-(10.0**e) for e in range(-4, 5)], sigma, h)
    neg_dominated = all(r["casg"] <= r["fd"] * (1 + 1e-12) for r in neg)
    spec = CurvatureSpec(np.diag([-2.0, 2.0]), sigma, h)
    sample, res = casg_sample_set(spec, np.zeros(2))
    ae = approximation_error(difference_matrix(sample), spec.H)
    cd = cd_noise_error(2, sigma, h / 2)
    cd_gap = abs(res.objective_value - cd) / cd
    ok = dominated and neg_dominated and min_ratio >= 10 and ae <= 1e-18 and cd_gap <= 0.05
    ratios = ", ".join(f"k={r['k']:g}: {r['ratio_fd_casg']:.3f}" for r in small)
    report(4, ok, f"CASG<=FD everywhere {dominated and neg_dominated}; FD/CASG ratios ({ratios}) need >=10; "
                  f"k=-1 AE {ae:.2g}, CASG vs CD noise gap {cd_gap:.2g}")
    assert ok


def test_05_invariance(report):
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        spec = CurvatureSpec(random_symmetric(rng, d), 10.0 ** rng.uniform(-3, 0), 10.0 ** rng.uniform(-1, 1))
        S = _feasible_stack(rng, 1, d, spec.h)[0]
        l_h = objective(S, spec)
        S_rot = spec.R.T @ S
        for D in (spec.D, -spec.D):
            l_d = objective(S_rot, CurvatureSpec(np.diag(D), spec.sigma, spec.h))
            worst = max(worst, abs(l_h - l_d) / (1 + l_h))
    ok = worst <= 1e-10
    report(5, ok, f"max rotation/negation deviation {worst:.2g} (limit 1e-10)")
    assert ok


def test_06_ecasg_additivity(report):
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 21))
        D = np.sort(rng.normal(size=d) * 10.0 ** rng.uniform(-2, 2, size=d))
        R = random_orthogonal(rng, d)
        H = R @ np.diag(D) @ R.T
        sigma, h = 10.0 ** rng.uniform(-3, 0), 10.0 ** rng.uniform(-1, 1)
        perm = rng.permutation(d)
        k = min(d - 1, int(rng.integers(0, 5)))
        cuts = np.sort(rng.choice(np.arange(1, d), size=k, replace=False)) if k else []
        cells = tuple(tuple(int(i) for i in c) for c in np.split(perm, cuts))
        blocks, total = [], 0.0
        for c in cells:
            B = rng.normal(size=(len(c), len(c)))
            B *= h * rng.uniform(0.2, 1.0) / np.linalg.norm(B, 2)
            blocks.append(B)
            total += objective(B, CurvatureSpec(np.diag(D[list(c)]), sigma, h))
        l = objective(assemble_blocks(R, Partition(cells), blocks), CurvatureSpec(H, sigma, h))
        worst = max(worst, abs(l - total) / (1 + l))
    valid = True
    for d in range(1, 258):
        part = subdivide(np.arange(d, dtype=float))
        flat = sorted(i for c in part.cells for i in c)
        expected = [1 << b for b in range(d.bit_length() - 1, -1, -1) if d >> b & 1]
        valid &= flat == list(range(d)) and sorted(part.sizes, reverse=True) == expected
    eleven = sorted(cell_sizes(11), reverse=True)
    ok = worst <= 1e-10 and valid and eleven == [8, 2, 1]
    report(6, ok, f"additivity deviation {worst:.2g}, partitions valid for 1..257 {valid}, d=11 cells {eleven}")
    assert ok


def test_07_hadamard(report):
    orth, entries, positive = 0.0, True, True
    for d in (1, 2, 4, 8, 16, 32):
        for k in range(1, d + 1):
            V = hadamard(d, k)
            orth = max(orth, float(np.abs(V.T @ V - np.eye(d)).max()))
            entries &= bool(np.all(np.abs(V) == 1 / math.sqrt(d)))
            positive &= bool(np.all(V[:, k - 1] > 0))
    ok = orth <= 1e-12 and entries and positive
    report(7, ok, f"orthogonality {orth:.2g}, exact magnitudes {entries}, designated column positive {positive}")
    assert ok


def test_08_rbf_derivatives(report):
    rng = np.random.default_rng(808)
    d = 4
    X = rng.uniform(-1, 1, size=(120, d))
    y = np.sin(X @ np.arange(1.0, d + 1)) + np.sum(X**2, axis=1)
    model = fit_rbf(EvaluationHistory.from_arrays(X, y), 0.0)
    worst_g = worst_h = 0.0
    for x in rng.uniform(-1, 1, size=(100, d)):
        g = model.gradient(x)
        fd_g = np.array([(model_query(model, x + 1e-5 * u) - model_query(model, x - 1e-5 * u)) / 2e-5 for u in np.eye(d)])
        worst_g = max(worst_g, np.linalg.norm(g - fd_g) / np.linalg.norm(g))
        H = model.hessian(x)
        fd_h = np.array([(model.gradient(x + 1e-4 * u) - model.gradient(x - 1e-4 * u)) / 2e-4 for u in np.eye(d)])
        worst_h = max(worst_h, np.linalg.norm(H - fd_h) / np.linalg.norm(H))
    interp = float(np.max(np.abs(model.value(X) - y) / (1 + np.abs(y))))
    ok = worst_g <= 1e-5 and worst_h <= 1e-3 and interp <= 1e-8
    report(8, ok, f"gradient rel err {worst_g:.2g}, Hessian rel err {worst_h:.2g}, interpolation {interp:.2g}")
    assert ok


def test_09_sensitivity_trend(report):
    cfg = sensitivity_config({})
    assert cfg["problems"][0] == {"name": "ackley", "dim": 8, "sigma": 1e-5}
    assert cfg["n_model_points"] == 2000 and cfg["n_points"] == 100
    t0 = time.perf_counter()
    records, _, _ = sensitivity_experiment(cfg, threads=1)
    elapsed = time.perf_counter() - t0
    s = summarize(records)["ackley8"]
    med = {m: s[m]["median"] for m in s}
    ok = (med["casg_rbf"] <= med["fd_exact"] and med["casg_exact"] <= med["fd_exact"]
          and med["global_grad"] >= med["casg_rbf"] and elapsed <= 600)
    report(9, ok, ", ".join(f"{m} {v:.3g}" for m, v in sorted(med.items())) + f", {elapsed:.1f}s")
    assert ok


def test_10_dfo_trend(report):
    cfg = dfo_config({})
    assert cfg["problems"] == "builtin" and cfg["sigmas"] == [1e-5]
    t0 = time.perf_counter()
    records = select_best(dfo_run(cfg, threads=1))
    elapsed = time.perf_counter() - t0
    failed = sum(r.status != "ok" for r in records)
    grid = np.unique(np.concatenate([np.arange(0.0, cfg["budget"] + 1)] + [r.budgets() for r in records]))
    fine = data_profile(records, 1e-5, grid)
    beyond = grid > 20
    gaps = fine["fd_exact"][beyond] - fine["casg_exact"][beyond]
    bad = grid[beyond][gaps > 0]
    coarse = data_profile(records, 1e-1, [100.0])
    reach = {m: float(coarse[m][0]) for m in ("casg_exact", "fd_exact")}
    dominance = bad.size == 0
    ok = dominance and min(reach.values()) >= 0.8 and elapsed <= 1200 and failed == 0
    detail = (f"tau=1e-5 CASG>=FD beyond 20: {dominance}"
              + (f" (violated at {bad.size} budgets in [{bad.min():.1f}, {bad.max():.1f}], max gap {gaps.max():.3f})" if bad.size else "")
              + f"; tau=1e-1 fraction at 100: {reach}; failed runs {failed}; {elapsed:.1f}s")
    report(10, ok, detail)
    assert ok


def test_11_linear_scaling(report):
    rng = np.random.default_rng(1111)
    times = []
    for e in range(10, 19):
        d = 2**e
        D = np.sort(10.0 ** rng.uniform(-3, 3, size=d))
        get_sigma_star(D, 1e-3, 1.0)
        reps = []
        for _ in range(21):
            t = time.perf_counter()
            get_sigma_star(D, 1e-3, 1.0)
            reps.append(time.perf_counter() - t)
        times.append(float(np.median(reps)))
    ratios = [b / a for a, b in zip(times, times[1:])]
    ok = max(ratios) <= 2.5
    report(11, ok, "per-doubling ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (limit 2.5)")
    assert ok


def _cli_outputs(capsys, root: Path):
    """Run every subcommand into ``root``; returns the stdout of each."""
    hist_dir = root / "history"
    runs = {
        "estimate": ["estimate", "--method", "casg", "--problem", "quad_k", "--k", "-1", "--sigma", "0.1",
                     "--h", "1", "--at", "0,0", "--seed", "4"],
        "sensitivity": ["sensitivity", "--config", str(GOLDEN / "sensitivity_config.json"), "--out", str(root / "sens")],
        "dfo": ["dfo", "--config", str(GOLDEN / "dfo_config.json"), "--out", str(root / "dfo")],
        "history-export": ["history-export", "--config", str(GOLDEN / "history_config.json"), "--out", str(hist_dir)],
        "profile": ["profile", "--input", str(root / "dfo" / "dfo_records.csv"), "--out", str(root / "prof")],
        "history-import": ["history-import", "--input", str(hist_dir / "history.csv"), "--out", str(root / "imp")],
    }
    out = {}
    for name, argv in runs.items():
        code = main(argv + ["--threads", "1"])
        out[name] = (code, capsys.readouterr().out)
    return out


def test_12_cli_determinism(report, capsys, tmp_path):
    first = _cli_outputs(capsys, tmp_path / "a")
    second = _cli_outputs(capsys, tmp_path / "b")
    codes_ok = all(code == 0 for code, _ in first.values())
    stdout_same = all(first[k][1].replace(str(tmp_path / "a"), "") == second[k][1].replace(str(tmp_path / "b"), "")
                      for k in first)
    for _, text in first.values():
        json.loads(text)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    files_same = files_a == files_b and all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files_a)
    ok = codes_ok and stdout_same and files_same
    report(12, ok, f"subcommands {sorted(first)} exit 0 {codes_ok}; stdout identical {stdout_same}; "
                   f"{len(files_a)} output files identical {files_same}")
    assert ok
