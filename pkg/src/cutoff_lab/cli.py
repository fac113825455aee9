"""Command-line front end.

    cutoff-lab {oracle|support|mixing|gap|verify} --config run.ini [--sec.key=v]

Every run resolves its configuration up front, writes all artifacts into
one output directory, and finishes with a manifest recording the
resolved config and the digest of every file. Exit codes: 0 success,
2 config error, 3 size-cap violation, 4 numerical failure, 5 acceptance
failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .dynamics import sample_update_sequence
from .estimators import (FitRefused, GapEstimate, XiCurve, gap_from_xi,
                         mixing_profile, xi_t_curve)
from .lattice import CapExceeded, build_torus
from .model import ModelSpec
from .oracle import (build_generator, log_sobolev_upper_estimate, m_t_exact,
                     spectral_data)
from .report import ArtifactDir, LineSeries
from .rng import derive_seed
from .support import (BlockPartition, classify_sparse,
                      default_sparse_thresholds, default_tiling,
                      exact_support, support_map, support_superset_paths)
from .verify import QUICK_SUBSET, run_criteria

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAP = 3
EXIT_NUMERICAL = 4
EXIT_ACCEPTANCE = 5


def _slug(m: ModelSpec, sides, seed: int) -> str:
    """Filename stem embedding the model, lattice, and seed."""
    parts = [m.family, f"b{m.beta:g}"]
    if m.h:
        parts.append(f"h{m.h:g}")
    if m.rate_rule != "heat_bath":
        parts.append(m.rate_rule)
    parts.append("x".join(str(s) for s in sides))
    parts.append(f"s{seed}")
    return "_".join(parts).replace(".", "p").replace("-", "m")


def _meta(cfg: RunConfig, m: ModelSpec, sides, **extra) -> dict:
    meta = {"family": m.family, "beta": m.beta, "h": m.h,
            "rate_rule": m.rate_rule, "sides": "x".join(map(str, sides)),
            "seed": cfg.run["seed"]}
    meta.update(extra)
    return meta


def _time_grid(cfg: RunConfig, default_max: float) -> np.ndarray:
    """The method grid: explicit t_grid, or t_points spread up to t_max."""
    if cfg.method["t_grid"]:
        grid = np.asarray(sorted(cfg.method["t_grid"]), dtype=np.float64)
        if grid[0] < 0:
            raise ConfigError("method.t_grid times must be nonnegative")
        return grid
    t_max = cfg.method["t_max"] or default_max
    pts = cfg.method["t_points"]
    if t_max <= 0 or pts < 2:
        raise ConfigError("method.t_max must be positive and t_points >= 2")
    return np.linspace(t_max / pts, t_max, pts)


def cmd_oracle(cfg: RunConfig) -> int:
    m = cfg.model_spec()
    g = cfg.torus()
    seed = cfg.run["seed"]
    out = ArtifactDir(cfg.output_dir(), "oracle", cfg.as_tree())
    stem = _slug(m, g.sides, seed)

    gen = build_generator(m, g)
    sd = spectral_data(gen)
    meta = _meta(cfg, m, g.sides, n_states=gen.n_states,
                 gap=sd.gap, mu_min=float(gen.mu.min()))
    if cfg.method["log_sobolev"]:
        est = log_sobolev_upper_estimate(gen, seed=seed)
        meta["alpha_upper"] = est.alpha
        meta["alpha_certificate_ok"] = est.certificate_ok
    k = min(16, len(sd.eigenvalues))
    out.csv(f"spectrum_{stem}.csv", ["index", "eigenvalue"],
            [[i, float(sd.eigenvalues[i])] for i in range(k)], meta)

    region = list(cfg.method["region"])
    if region:
        grid = _time_grid(cfg, default_max=8.0)
        rows = [[t, m_t_exact(m, g, region, float(t), gen=gen)] for t in grid]
        out.csv(f"mt_{stem}.csv", ["t", "m_t"],
                rows, _meta(cfg, m, g.sides,
                            region=" ".join(map(str, region))))
    out.finalize()
    return EXIT_OK


def cmd_support(cfg: RunConfig) -> int:
    m = cfg.model_spec()
    g = cfg.torus()
    seed = cfg.run["seed"]
    b, w = default_tiling(g)
    if cfg.method["block_side"]:
        b = cfg.method["block_side"]
    if cfg.method["halo_width"]:
        w = cfg.method["halo_width"]
    try:
        part = BlockPartition(g, b, w)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if not m.is_monotone(part.plus_geometry):
        raise ConfigError(
            "support maps use the block-coalescence certificate, which "
            "needs a monotone instance on the enlarged block torus")
    if not cfg.method["t_grid"] and cfg.method["t_max"] <= 0:
        raise ConfigError("support needs method.t_grid or method.t_max")
    grid = _time_grid(cfg, default_max=0.0)

    out = ArtifactDir(cfg.output_dir(), "support", cfg.as_tree())
    stem = _slug(m, g.sides, seed)
    smap = support_map(m, part, grid, seed)
    fracs = smap.fraction_curve()

    thresholds = None
    if cfg.method["diameter_cap"] or cfg.method["linkage"] \
            or cfg.method["count_cap"]:
        D0, S0, L0 = default_sparse_thresholds(g)
        thresholds = (cfg.method["diameter_cap"] or D0,
                      cfg.method["linkage"] or S0,
                      cfg.method["count_cap"] or L0)
    sparsity_rows = []
    for t, frac in zip(grid, fracs):
        rep = classify_sparse(g, smap.support_at(float(t)), thresholds)
        sparsity_rows.append([t, frac, rep.n_components,
                              max(rep.diameters, default=0),
                              rep.sparse, rep.first_violation or ""])
    out.csv(f"sparsity_{stem}.csv",
            ["t", "support_fraction", "n_components", "max_diameter",
             "sparse", "first_violation"],
            sparsity_rows, _meta(cfg, m, g.sides, block_side=b, halo=w))

    if g.dimension <= 2:
        shape = g.sides if g.dimension == 2 else (1, g.sides[0])
        top = float(grid[-1])
        img = np.rint(255.0 * smap.last_time.reshape(shape) / top)
        out.pgm(f"last_time_{stem}.pgm", img)
        for i, t in enumerate(grid):
            mask = (smap.last_time >= t).reshape(shape)
            out.pgm(f"support_t{i}_{stem}.pgm", mask * 255)
    coords = g.coords_array()
    xy = np.zeros((g.n_sites, 2), dtype=np.int64)
    xy[:, :coords.shape[1]] = coords[:, :2]
    out.csv(f"last_time_{stem}.csv", ["x", "y", "last_support_time"],
            [[int(r[0]), int(r[1]), float(lt)]
             for r, lt in zip(xy, smap.last_time)],
            _meta(cfg, m, g.sides, block_side=b, halo=w))

    if g.n_sites <= 12:
        w_seq = sample_update_sequence(g, float(grid[-1]), seed)
        exact = exact_support(m, g, w_seq)
        paths = support_superset_paths(
            g, w_seq, self_reading=(m.rate_rule != "heat_bath"))
        sound = set(exact.sites) <= set(paths.sites)
        out.note(f"tiny-instance cross-check: exact support "
                 f"({len(exact.sites)} sites) inside paths superset "
                 f"({len(paths.sites)} sites): {sound}")
        if not sound:
            out.finalize()
            print("support soundness cross-check failed", file=sys.stderr)
            return EXIT_NUMERICAL
    out.finalize()
    return EXIT_OK


def cmd_mixing(cfg: RunConfig) -> int:
    m = cfg.model_spec()
    eps = tuple(cfg.method["eps"])
    if not eps:
        raise ConfigError("mixing needs method.eps (e.g. eps = 0.25, 0.75)")
    if any(not 0 < e < 1 for e in eps):
        raise ConfigError("method.eps entries must lie strictly in (0, 1)")
    sweep = list(cfg.method["sweep_sides"])
    dim = max(1, cfg.geometry["d"]) if sweep else cfg.dimension()
    tori = [build_torus([n] * dim) for n in sweep] if sweep else [cfg.torus()]
    seed = cfg.run["seed"]
    replicas = cfg.method["replicas"]
    grid = _time_grid(cfg, 0.0) if (cfg.method["t_grid"] or cfg.method["t_max"]) \
        else None

    out = ArtifactDir(cfg.output_dir(), "mixing", cfg.as_tree())
    diag_rows = []
    series = []
    failed_brackets = []
    for g in tori:
        n = g.sides[0]
        prof = mixing_profile(m, g, replicas, derive_seed(seed, 10, n),
                              eps=eps, grid=grid,
                              lower_mode=cfg.method["statistic"],
                              workers=cfg.workers())
        stem = _slug(m, g.sides, seed)
        out.csv(f"mixing_{stem}.csv",
                ["t", "tv_upper", "upper_se", "tv_lower", "lower_se"],
                [[t, u, us, lo, ls] for t, u, us, lo, ls in
                 zip(prof.upper.grid, prof.upper.upper, prof.upper.se,
                     prof.lower.lower, prof.lower.se)],
                _meta(cfg, m, g.sides, replicas=replicas))
        series.append(LineSeries(prof.upper.grid, prof.upper.upper,
                                 f"upper n={n}"))
        series.append(LineSeries(prof.lower.grid, prof.lower.lower,
                                 f"lower n={n}"))
        for e in eps:
            lo_t, hi_t = prof.brackets[float(e)]
            diag_rows.append([g.n_sites, e, lo_t, hi_t,
                              prof.ratio_quarter_three_quarter,
                              prof.normalized_location,
                              prof.consistency_margin()])
            if math.isnan(lo_t) or math.isnan(hi_t):
                failed_brackets.append((g.n_sites, e))
    out.csv("diagnostics.csv",
            ["n_sites", "eps", "lower_crossing", "upper_crossing",
             "ratio_quarter_three_quarter", "normalized_location",
             "consistency_margin"],
            diag_rows, {"seed": seed, "replicas": replicas})
    out.svg("mixing_curves.svg", series, title="TV mixing bounds",
            xlabel="t", ylabel="total variation")
    for n, e in failed_brackets:
        out.note(f"bracket failure at n_sites={n}, eps={e}: bounds too "
                 "loose on this grid")
    out.finalize()
    return EXIT_OK


def _synthetic_curve(grid: np.ndarray, rate: float = 0.5) -> XiCurve:
    xi = np.exp(-rate * grid)
    return XiCurve(grid, xi, np.zeros_like(grid), 0, 0, True)


def cmd_gap(cfg: RunConfig) -> int:
    m = cfg.model_spec()
    seed = cfg.run["seed"]
    out = ArtifactDir(cfg.output_dir(), "gap", cfg.as_tree())

    if cfg.method["synthetic"]:
        grid = _time_grid(cfg, default_max=12.0)
        fit = gap_from_xi(_synthetic_curve(grid))
        out.csv("synthetic_fit.csv",
                ["rate", "se", "window_lo", "window_hi", "n_points",
                 "resid_rms"],
                [[fit.rate, fit.se, fit.window[0], fit.window[1],
                  fit.n_points, fit.resid_rms]],
                {"true_rate": 0.5, "abs_error": abs(fit.rate - 0.5)})
        out.finalize()
        return EXIT_OK

    r_list = list(cfg.method["r_list"]) or [cfg.resolved_sides()[0]]
    dim = max(1, cfg.geometry["d"]) if cfg.method["r_list"] else cfg.dimension()
    grid = _time_grid(cfg, default_max=16.0)
    replicas = cfg.method["replicas"]
    fit_rows = []
    series = []
    refused = []
    for r in r_list:
        g = build_torus([r] * dim)
        curve = xi_t_curve(m, g, grid, replicas, derive_seed(seed, 8, r),
                           workers=cfg.workers())
        stem = _slug(m, g.sides, seed)
        out.csv(f"xi_{stem}.csv", ["t", "xi", "se"],
                [[t, x, s] for t, x, s in zip(curve.grid, curve.xi, curve.se)],
                _meta(cfg, m, g.sides, replicas=replicas,
                      wrap_ok=curve.wrap_ok))
        series.append(LineSeries(curve.grid, curve.xi, f"r={r}", curve.se))
        try:
            fit = gap_from_xi(curve)
        except FitRefused as e:
            refused.append(f"r={r}: {e}")
            fit_rows.append([r, math.nan, math.nan, math.nan, math.nan, 0,
                             math.nan])
            continue
        fit_rows.append([r, fit.rate, fit.se, fit.window[0], fit.window[1],
                         fit.n_points, fit.resid_rms])
    out.csv("fits.csv",
            ["r", "rate", "se", "window_lo", "window_hi", "n_points",
             "resid_rms"],
            fit_rows, {"seed": seed, "replicas": replicas})
    out.svg("xi_curves.svg", series, title="influence decay", xlabel="t",
            ylabel="xi(t)", logy=True)
    for msg in refused:
        out.note(f"fit refused: {msg}")
    out.finalize()
    if refused:
        print("; ".join(refused), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    out = ArtifactDir(cfg.output_dir(), "verify", cfg.as_tree())
    numbers = QUICK_SUBSET if cfg.method["quick"] else None
    results = run_criteria(numbers, workers=cfg.workers(),
                           progress=lambda r: print(r.line(), flush=True))
    out.csv("verify_report.csv",
            ["number", "slug", "passed", "seconds", "detail"],
            [[r.number, r.slug, r.passed, round(r.seconds, 2),
              r.detail.replace(",", ";")] for r in results],
            {"quick": cfg.method["quick"],
             "passed": sum(r.passed for r in results),
             "total": len(results)})
    out.text("verify_report.txt",
             "\n".join(r.line() for r in results) + "\n")
    out.finalize()
    if not all(r.passed for r in results):
        return EXIT_ACCEPTANCE
    return EXIT_OK


COMMANDS = {
    "oracle": cmd_oracle,
    "support": cmd_support,
    "mixing": cmd_mixing,
    "gap": cmd_gap,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cutoff-lab",
        description="Glauber dynamics toolkit: exact analysis, mixing "
                    "estimators, and update-support diagnostics.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", default=None,
                       help="INI config file (defaults apply when omitted)")
    args, extra = parser.parse_known_args(argv)

    overrides = []
    for tok in extra:
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            overrides.append(tok[2:])
        else:
            print(f"unrecognized argument: {tok}", file=sys.stderr)
            return EXIT_CONFIG

    try:
        cfg = load_config(args.config, overrides, args.subcommand)
        return COMMANDS[args.subcommand](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CapExceeded as e:
        print(f"size cap: {e}", file=sys.stderr)
        return EXIT_CAP
    except FitRefused as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
