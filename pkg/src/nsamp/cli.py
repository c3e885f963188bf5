"""Command-line front end: ``nsamp run|se|compare|gen``.

Exit status is 0 on success, 1 on a runtime failure (the message names the
iteration) and 2 on invalid configuration or input files.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
import warnings
from collections import Counter
from pathlib import Path

import numpy as np

from nsamp import __version__
from nsamp import config as cfgmod
from nsamp import denoisers as dn
from nsamp import experiments as ex
from nsamp import io
from nsamp.amp import AmpIterationError
from nsamp.ensembles import sample_goe
from nsamp.rng import stream
from nsamp.state_evolution import StateEvolutionError


# -- building blocks from a config ------------------------------------------------------


def load_image(cfg) -> np.ndarray:
    p = cfg.problem
    if p.image == "synthetic":
        return ex.piecewise_constant_image(p.image_size, p.image_size, p.image_seed)
    return io.read_pgm(p.image)


def _shape(cfg):
    kind = cfg.experiment.kind
    if kind == "matrix_cs":
        return dn.MatrixShape(cfg.problem.n1, cfg.problem.n2)
    if kind == "image_cs":
        return dn.MatrixShape(*load_image(cfg).shape)
    return None


def family_for(cfg, seed: int, shape=None) -> ex.NoiseAdaptiveFamily:
    d = cfg.denoiser
    kind = cfg.denoiser_kind
    if kind in ("svt", "nlm") and shape is None:
        raise cfgmod.ConfigError(f"denoiser.kind {kind!r} needs a matrix-shaped signal")
    if kind == "svt":
        return ex.svt_family(shape, cfg.lambda_coef)
    if kind == "soft_threshold":
        return ex.soft_threshold_family(cfg.lambda_coef)
    if kind == "nlm":
        mc = dn.DivergenceEstimatorConfig(num_samples=d.mc_samples, seed=seed)
        return ex.nlm_family(shape, d.patch, d.search, d.h_coef, d.h_floor, mc)
    if kind == "projection":
        return ex.projection_family(dn.Orthant())
    if kind == "identity":
        return ex.NoiseAdaptiveFamily("identity", lambda lv: float("nan"), lambda _: dn.identity())
    if kind == "zero":
        return ex.NoiseAdaptiveFamily("zero", lambda lv: float("nan"), lambda _: dn.zero())
    raise cfgmod.ConfigError(f"denoiser.kind {kind!r} is not a compressed sensing denoiser")


def problem_maker(cfg):
    """``seed -> SensingProblem`` for the CS kinds."""
    p = cfg.problem
    kind = cfg.experiment.kind
    if kind == "matrix_cs":
        return lambda s: ex.make_low_rank_problem(p.n1, p.n2, p.r, p.m, p.sigma_w, s)[0]
    if kind == "separable_cs":
        return lambda s: ex.make_sparse_problem(p.n, p.m, p.sparsity, p.sigma_w, s)
    if kind == "image_cs":
        image = load_image(cfg)
        return lambda s: ex.make_image_problem(image, p.m, p.noise_coef, s)
    if kind == "convex_cs":
        _, m = ex.orthant_design(p.n, p.constrained, p.rho)
        return lambda s: ex.make_orthant_problem(p.n, p.constrained, m, p.sigma_w, s)
    raise cfgmod.ConfigError(f"experiment.kind {kind!r} has no sensing problem")


def signal_maker(cfg):
    """``seed -> (theta0, sigma_w, m)`` without drawing the sensing matrix."""
    p = cfg.problem
    kind = cfg.experiment.kind
    if kind == "matrix_cs":
        return lambda s: (ex.low_rank_signal(p.n1, p.n2, p.r, s).X0, p.sigma_w, p.m)
    if kind == "separable_cs":
        return lambda s: (ex.sparse_signal(p.n, p.sparsity, s), p.sigma_w, p.m)
    if kind == "image_cs":
        image = load_image(cfg)
        return lambda s: (image.ravel(), ex.image_noise_level(image, p.noise_coef), p.m)
    _, m = ex.orthant_design(p.n, p.constrained, p.rho)
    return lambda s: (ex.orthant_signal(p.n, p.constrained, s), p.sigma_w, m)


def se_signal_maker(cfg):
    """Optional replacement signal for the SE when ``se.n`` is set (separable kind only)."""
    if cfg.se.n is None:
        return None
    n, sparsity = cfg.se.n, cfg.problem.sparsity
    return lambda s: ex.bernoulli_gaussian(n, sparsity, stream(s, "se-signal"))


def seeds_of(cfg, offset: int) -> list:
    seeds = [s + offset for s in cfg.experiment.seeds]
    for s in seeds:
        if not 0 <= s < 2**64:
            raise cfgmod.ConfigError(f"experiment.seeds: seed {s} outside the unsigned 64-bit range after offset")
    return seeds


# -- commands ---------------------------------------------------------------------


def cmd_run(cfg, out_dir: Path, threads: int = 1, seed_offset: int = 0) -> dict:
    """Run the configured experiment and write its tables; returns artifact paths and timings."""
    seeds = seeds_of(cfg, seed_offset)
    kind = cfg.experiment.kind
    T = cfg.experiment.max_iters
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts, timings = [], {}

    def write(name, header, rows):
        io.write_csv(out_dir / name, header, rows)
        artifacts.append(name)

    if kind in ("symmetric_synthetic", "lamp_diagnostic"):
        if T < 1:
            raise cfgmod.ConfigError("experiment.max_iters must be >= 1 for symmetric kinds")
        p = cfg.problem
        t0 = time.perf_counter()
        rep = ex.symmetric_study(p.n, p.threshold, p.offset_scale, seeds, T, cfg.se.mc_samples,
                                 kind == "lamp_diagnostic", threads, cfg.experiment.onsager)
        timings["total"] = time.perf_counter() - t0
        write("symmetric.csv", ex.SYMMETRIC_HEADER, rep.rows())
        write("se.csv", ex.SE_HEADER, rep.se_rows())
        extra = {"lamp_geometry_gap": rep.lamp_geometry_gap, "lamp_min_rank": rep.min_rank}
        return {"artifacts": artifacts, "timings": timings, "results": extra}

    shape = _shape(cfg)
    make = problem_maker(cfg)
    t0 = time.perf_counter()
    study = ex.cs_study(make, lambda s: family_for(cfg, s, shape), seeds, T, cfg.experiment.onsager,
                        cfg.se.mc_samples, threads, cfg.denoiser.mc_samples, se_signal_maker(cfg), cfg.se.enabled)
    timings["total"] = time.perf_counter() - t0
    for run in study.runs:
        timings[f"seed_{run.seed}"] = run.trajectory.records[-1].wall_time
        rows = [{"t": t, "nmse_emp": run.nmse[t], "nmse_emp_stderr": 0.0,
                 "resid_over_sqrt_m": run.resid_over_sqrt_m[t], "lambda_or_h": run.params[t],
                 "onsager": run.trajectory.records[t].onsager} for t in range(len(run.trajectory))]
        write(f"trajectory_seed{run.seed}.csv", ex.TRAJECTORY_HEADER, rows)
    write("trajectory.csv", ex.TRAJECTORY_HEADER, study.trajectory_rows)
    results = {"max_iters": T}
    if cfg.se.enabled:
        write("se.csv", ex.SE_HEADER, study.se_rows)
        write("comparison.csv", ex.COMPARISON_HEADER, study.comparison)
        results["max_abs_gap"] = max(r["abs_gap"] for r in study.comparison)
    results["final_nmse"] = study.trajectory_rows[-1]["nmse_emp"]

    if kind == "convex_cs":
        p = cfg.problem
        rep = ex.convex_report(study, p.n, p.constrained, p.rho, p.sigma_w)
        write("convex.csv", ex.CONVEX_HEADER, rep.rows())
        results.update({"m": rep.m, "stat_dim": rep.stat_dim, "rho": rep.rho, "R0": rep.R0, "slope": rep.slope})
    if cfg.experiment.onsager_check:
        fam = family_for(cfg, 0)
        rows = ex.onsager_rows(np.stack(ex.map_seeds(lambda s: ex.onsager_pair(make(s), fam, max(T, 1)),
                                                     seeds, threads)))
        write("onsager.csv", ex.ONSAGER_HEADER, rows)
        results["onsager_max_abs_diff"] = max(r["abs_diff"] for r in rows)
    return {"artifacts": artifacts, "timings": timings, "results": results}


def cmd_se(cfg, out_dir: Path, threads: int = 1, seed_offset: int = 0) -> dict:
    """State evolution only; no AMP iterations."""
    seeds = seeds_of(cfg, seed_offset)
    kind = cfg.experiment.kind
    T = cfg.experiment.max_iters
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if kind in ("symmetric_synthetic", "lamp_diagnostic"):
        p = cfg.problem
        K, err = ex.symmetric_se(p.n, p.threshold, p.offset_scale, seeds, T, cfg.se.mc_samples, threads)
        rows = ex.symmetric_se_rows(K, err)
    else:
        shape = _shape(cfg)
        sig = signal_maker(cfg)
        alt = se_signal_maker(cfg)

        def one(seed):
            theta0, sigma_w, m = sig(seed)
            delta = m / theta0.size
            se_theta = theta0 if alt is None else alt(seed)
            return ex.scalar_se_for(se_theta, family_for(cfg, seed, shape), sigma_w, delta, T,
                                    cfg.se.mc_samples, seed)

        rows = ex.se_rows(ex.map_seeds(one, seeds, threads))
    io.write_csv(out_dir / "se.csv", ex.SE_HEADER, rows)
    return {"artifacts": ["se.csv"], "timings": {"total": time.perf_counter() - t0}, "results": {}}


TRAJ_REQUIRED = ("t", "nmse_emp", "nmse_emp_stderr", "resid_over_sqrt_m", "lambda_or_h")
SE_REQUIRED = ("t", "tau_sq", "predicted_nmse")


def cmd_compare(traj_path, se_path, out_path) -> list:
    """Join a trajectory table and an SE table on ``t``."""
    traj = io.read_csv(traj_path, TRAJ_REQUIRED)
    se = io.read_csv(se_path, SE_REQUIRED)
    traj_rows = [{k: traj[k][i] for k in TRAJ_REQUIRED} for i in range(len(traj["t"]))]
    se_rows = [{k: se[k][i] for k in SE_REQUIRED} for i in range(len(se["t"]))]
    try:
        rows = ex.join_comparison(traj_rows, se_rows)
    except ValueError as exc:
        raise io.SchemaError(str(exc)) from None
    io.write_csv(out_path, ex.COMPARISON_HEADER, rows)
    return rows


def cmd_gen(cfg, out_dir: Path, seed_offset: int = 0) -> dict:
    """Write each seed's problem instance as ``problem_seed<s>.npz``."""
    seeds = seeds_of(cfg, seed_offset)
    kind = cfg.experiment.kind
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for s in seeds:
        name = f"problem_seed{s}.npz"
        if kind in ("symmetric_synthetic", "lamp_diagnostic"):
            p = cfg.problem
            offset = p.offset_scale * stream(s, "offset").standard_normal(p.n)
            np.savez(out_dir / name, A=sample_goe(p.n, s), offset=offset, threshold=p.threshold)
        else:
            prob = problem_maker(cfg)(s)
            np.savez(out_dir / name, A=prob.A, theta0=prob.theta0, w=prob.w, y=prob.y)
        artifacts.append(name)
    if kind == "image_cs":
        io.write_pgm(out_dir / "image.pgm", load_image(cfg))
        artifacts.append("image.pgm")
    return {"artifacts": artifacts, "timings": {}, "results": {}}


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsamp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nsamp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def configured(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="config file, or the name of a bundled preset")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out-dir", help="output directory (default: output.dir from the config)")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
        return p

    p = configured("run", "run an experiment and write trajectory, SE and comparison tables")
    p.add_argument("--threads", type=int, default=1, help="seeds run concurrently")
    p = configured("se", "run the state evolution only")
    p.add_argument("--threads", type=int, default=1)
    configured("gen", "write problem instances")
    p = sub.add_parser("compare", help="join a trajectory CSV with an SE CSV")
    p.add_argument("trajectory")
    p.add_argument("se")
    p.add_argument("--out", default="comparison.csv")
    sub.add_parser("presets", help="list bundled presets")
    return parser


def _manifest(command, cfg, seeds, outcome, counts, status, error=None) -> dict:
    return {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.model_dump(mode="json"),
        "seeds": seeds,
        "status": status,
        "error": error,
        "artifacts": outcome.get("artifacts", []),
        "timings": outcome.get("timings", {}),
        "results": outcome.get("results", {}),
        "warnings": dict(sorted(counts.items())),
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print("\n".join(cfgmod.preset_names()))
        return 0
    if args.command == "compare":
        try:
            rows = cmd_compare(args.trajectory, args.se, args.out)
        except (io.SchemaError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"wrote {args.out} ({len(rows)} rows, max abs_gap {max(r['abs_gap'] for r in rows):.4g})")
        return 0

    threads = getattr(args, "threads", 1)
    try:
        if threads < 1:
            raise cfgmod.ConfigError("--threads must be >= 1")
        cfg = cfgmod.load(args.config, args.set)
        seeds = seeds_of(cfg, args.seed_offset)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out_dir or cfg.output.dir)

    status, error, outcome = 0, None, {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            if args.command == "run":
                outcome = cmd_run(cfg, out_dir, threads, args.seed_offset)
            elif args.command == "se":
                outcome = cmd_se(cfg, out_dir, threads, args.seed_offset)
            else:
                outcome = cmd_gen(cfg, out_dir, args.seed_offset)
        except cfgmod.ConfigError as exc:
            status, error = 2, f"config error: {exc}"
        except (io.SchemaError, OSError) as exc:
            status, error = 2, f"input error: {exc}"
        except (AmpIterationError, StateEvolutionError) as exc:
            status, error = 1, f"runtime failure at iteration {exc.iteration}: {exc}"
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            status, error = 1, f"runtime failure: {type(exc).__name__}: {exc}"
    counts = Counter(w.category.__name__ for w in caught)
    if status == 2 and not out_dir.exists():
        print(error, file=sys.stderr)
        return status
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args.command, cfg, seeds, outcome, counts, status, error)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if error:
        print(error, file=sys.stderr)
        return status
    res = outcome.get("results", {})
    summary = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in res.items())
    print(f"{args.command}: wrote {len(outcome['artifacts'])} file(s) to {out_dir}" + (f" ({summary})" if summary else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
