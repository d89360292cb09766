"""Command-line interface: ``sbgraph {sample-prior,fit,simulate,evaluate}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then explicit flags. Every output file carries the resolved settings
and seed, and reruns with the same settings produce identical bytes.

Exit codes: 0 success, 2 invalid input or settings, 3 numerical failure,
4 file-system error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AllDivergent, NotPositiveDefinite, Overflow, SBGraphError
from .io import (
    InputError,
    read_data_csv,
    read_matrix,
    read_pattern,
    write_json,
    write_jsonl,
    write_table,
)
from .linalg import SparsityPattern, chol_product, cholesky, pattern_of
from .mcmc import format_interval, predictive_draws, run_chain, summarize
from .metrics import (
    EvalReport,
    crps_empirical,
    kl_discrepancy,
    sensitivity,
    specificity,
)
from .nuts import NutsConfig
from .posterior import ModelSpec
from .sbartlett import SBartlettParams, sample_prior
from .sim import PATTERNS, SimScenario, run_study

log = logging.getLogger("sbgraph")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class ConfigError(SBGraphError, ValueError):
    pass


GLOBAL_DEFAULTS = {"seed": None, "threads": 1, "out": "sbgraph-out"}

COMMAND_DEFAULTS = {
    "sample-prior": {
        "p": None, "pattern": "full", "pattern_file": None, "draws": 100,
        "nu": 3.0, "scale": "identity", "save_q": False,
    },
    "fit": {
        "data": None, "family": "gaussian", "iterations": 2000, "burnin": 1000, "thin": 1,
        "nu": 3.0, "scale": "identity", "pi": 0.5, "holdout": 0.0, "nuts_madapt": 10,
        "nuts_delta": 0.5, "threshold": 0.5, "center": True,
    },
    "simulate": {
        "p": 10, "pattern": "band", "width": 1, "alpha": 0.0, "n": 100, "family": "gaussian",
        "mu": None, "pmiss": 0.1, "replicas": 20, "iterations": 2000, "burnin": 1000, "thin": 1,
        "nu": 3.0, "pi": 0.5, "nuts_madapt": 10, "nuts_delta": 0.5, "rowwise_missing": False,
    },
    "evaluate": {"truth": None, "fit": None, "kl_orientation": "estimate||truth", "threshold": None},
}


def _add_globals(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON file of settings (flags override it)")
    parser.add_argument("--seed", type=int, default=d, help="random seed (required)")
    parser.add_argument("--threads", type=int, default=d, help="worker processes for simulation replicas")
    parser.add_argument("--out", default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbgraph", description="Sparse precision matrices with the S-Bartlett prior.")
    parser.add_argument("--version", action="version", version=f"sbgraph {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sample-prior", help="draw precision matrices from the prior")
    _add_globals(sp, suppress=True)
    sp.add_argument("--p", type=int, help="dimension (implied by --pattern-file)")
    sp.add_argument("--pattern", help="full, identity, band:W or random:ALPHA")
    sp.add_argument("--pattern-file", help="square 0/1 matrix file")
    sp.add_argument("--draws", type=int)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--scale", help="'identity' or a matrix file")
    sp.add_argument("--save-q", action="store_true", default=None, help="also write the Cholesky factors")

    fp = sub.add_parser("fit", help="run the sampler on a data file")
    _add_globals(fp, suppress=True)
    fp.add_argument("--data", help="CSV, n rows x p columns; empty or NA marks a missing cell")
    fp.add_argument("--family", choices=["gaussian", "poisson"])
    fp.add_argument("--iterations", type=int)
    fp.add_argument("--burnin", type=int)
    fp.add_argument("--thin", type=int)
    fp.add_argument("--nu", type=float)
    fp.add_argument("--scale", help="'identity' or a matrix file")
    fp.add_argument("--pi", type=float, help="prior edge inclusion probability")
    fp.add_argument("--holdout", type=float, help="fraction of observed cells to withhold and score")
    fp.add_argument("--nuts-madapt", type=int)
    fp.add_argument("--nuts-delta", type=float)
    fp.add_argument("--threshold", type=float, help="inclusion probability needed to keep an edge")
    fp.add_argument("--no-center", dest="center", action="store_false", default=None,
                    help="do not subtract observed column means (Gaussian family)")

    mp = sub.add_parser("simulate", help="run a simulation study")
    _add_globals(mp, suppress=True)
    mp.add_argument("--p", type=int)
    mp.add_argument("--pattern", help=f"one of: {', '.join(PATTERNS)}")
    mp.add_argument("--width", type=int)
    mp.add_argument("--alpha", type=float, help="probability that an off-diagonal entry is zero")
    mp.add_argument("--n", type=int)
    mp.add_argument("--family", choices=["gaussian", "poisson"])
    mp.add_argument("--mu", type=float)
    mp.add_argument("--pmiss", type=float)
    mp.add_argument("--replicas", type=int)
    mp.add_argument("--iterations", type=int)
    mp.add_argument("--burnin", type=int)
    mp.add_argument("--thin", type=int)
    mp.add_argument("--nu", type=float)
    mp.add_argument("--pi", type=float)
    mp.add_argument("--nuts-madapt", type=int)
    mp.add_argument("--nuts-delta", type=float)
    mp.add_argument("--rowwise-missing", action="store_true", default=None)

    ep = sub.add_parser("evaluate", help="score a fit against a known precision matrix")
    _add_globals(ep, suppress=True)
    ep.add_argument("--truth", help="matrix file with the true precision")
    ep.add_argument("--fit", help="output directory of a previous 'fit' run")
    ep.add_argument("--kl-orientation", choices=["estimate||truth", "truth||estimate"])
    ep.add_argument("--threshold", type=float, help="re-threshold the edge probabilities")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config file and explicit flags."""
    cmd = args.command
    cfg = dict(GLOBAL_DEFAULTS)
    cfg.update(COMMAND_DEFAULTS[cmd])
    path = getattr(args, "config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"{path}: unknown settings {unknown}; valid: {sorted(cfg)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["seed"] is None:
        raise ConfigError("a seed is required (--seed or 'seed' in the config file)")
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be at least 1")
    cfg["command"] = cmd
    return cfg


def provenance(cfg: dict) -> dict:
    # the output directory is left out so reruns elsewhere compare equal
    return {k: v for k, v in sorted(cfg.items()) if k != "out"}


def _load_scale(spec, p: int) -> np.ndarray:
    if spec in (None, "identity"):
        return np.eye(p)
    s = read_matrix(spec)
    if s.shape != (p, p):
        raise ConfigError(f"scale matrix is {s.shape[0]} x {s.shape[1]}, expected {p} x {p}")
    return s


def _resolve_pattern(cfg: dict, rng: np.random.Generator) -> SparsityPattern:
    if cfg["pattern_file"]:
        z = read_pattern(cfg["pattern_file"])
        if cfg["p"] is not None and int(cfg["p"]) != len(z):
            raise ConfigError(f"--p {cfg['p']} disagrees with the {len(z)} x {len(z)} pattern file")
        return SparsityPattern(z)
    if cfg["p"] is None:
        raise ConfigError("give --p or --pattern-file")
    p = int(cfg["p"])
    if p < 1:
        raise ConfigError("p must be positive")
    name, _, arg = str(cfg["pattern"]).partition(":")
    try:
        if name == "full":
            return SparsityPattern.full(p)
        if name == "identity":
            return SparsityPattern.identity(p)
        if name == "band":
            return SparsityPattern.band(p, int(arg or 1))
        if name == "random":
            alpha = float(arg or 0.5)
            if not 0 <= alpha < 1:
                raise ConfigError("random pattern needs 0 <= ALPHA < 1")
            return SparsityPattern.from_lower_flags(p, rng.random(p * (p - 1) // 2) >= alpha)
    except ValueError as exc:
        raise ConfigError(f"bad pattern {cfg['pattern']!r}: {exc}") from None
    raise ConfigError(f"unknown pattern {cfg['pattern']!r}; options: full, identity, band:W, random:ALPHA")


def _lower_labels(prefix: str, p: int) -> list[str]:
    rows, cols = np.tril_indices(p)
    return [f"{prefix}_{j}_{k}" for j, k in zip(rows, cols)]


def cmd_sample_prior(cfg: dict, out: Path) -> int:
    """Prior draws of ``Lambda`` and a check of exact zeros and positive definiteness."""
    rng = np.random.default_rng(int(cfg["seed"]))
    z = _resolve_pattern(cfg, rng)
    p = z.p
    draws = int(cfg["draws"])
    if draws < 1:
        raise ConfigError("draws must be at least 1")
    params = SBartlettParams(float(cfg["nu"]), _load_scale(cfg["scale"], p))
    q = sample_prior(params, z, rng, size=draws)
    lam = chol_product(q)
    lower = np.tril_indices(p)
    meta = provenance(cfg)
    write_table(out / "lambda_draws.csv", _lower_labels("lambda", p), lam[:, lower[0], lower[1]], meta)
    if cfg["save_q"]:
        write_table(out / "q_draws.csv", _lower_labels("q", p), q[:, lower[0], lower[1]], meta)

    diag_max = np.max(np.diagonal(lam, axis1=1, axis2=2), axis=1)
    forced = ~z.z
    ratio = np.max(np.abs(lam[:, forced]), axis=1) / diag_max if forced.any() else np.zeros(draws)
    pivots = np.diagonal(q, axis1=1, axis2=2)
    mean = lam.mean(axis=0)
    report = {
        "config": meta,
        "pattern": z.z.astype(int),
        "draws": draws,
        "max_forced_over_max_diag": float(ratio.max()),
        "min_pivot": float(pivots.min()),
        "all_positive_definite": bool(np.all(pivots > 0)),
        "zeros_exact": bool(np.all(ratio < 1e-10)),
        "mean_lambda": mean,
    }
    if z.edge_count == p * (p - 1) // 2:
        # full pattern: Wishart with nu + p - 1 degrees of freedom
        expected = (params.nu + p - 1) * params.scale
        report["wishart_df"] = params.nu + p - 1
        report["expected_mean_lambda"] = expected
        report["max_abs_mean_error"] = float(np.max(np.abs(mean - expected)))
    write_json(out / "verification.json", report)
    print(f"{draws} draws, p={p}, edges={z.edge_count}: zeros exact={report['zeros_exact']}, "
          f"all PD={report['all_positive_definite']}")
    return EXIT_OK


def _holdout_mask(obs: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    idx = np.flatnonzero(obs)
    k = int(np.floor(frac * len(idx) + 0.5))
    mask = np.zeros(obs.size, dtype=bool)
    mask[rng.choice(idx, size=k, replace=False)] = True
    return mask.reshape(obs.shape)


def cmd_fit(cfg: dict, out: Path) -> int:
    """Fit a data file; writes the sample stream, a summary and predictive draws."""
    if not cfg["data"]:
        raise ConfigError("--data is required")
    y, header = read_data_csv(cfg["data"])
    n, p = y.shape
    if p < 2:
        raise ConfigError("need at least two columns")
    missing = np.isnan(y)
    empty = np.flatnonzero(missing.all(axis=0))
    if len(empty):
        raise ConfigError(f"column(s) {empty.tolist()} have no observed values")
    holdout = float(cfg["holdout"])
    if not 0 <= holdout < 1:
        raise ConfigError("holdout must lie in [0, 1)")
    hold_ss, chain_ss = np.random.SeedSequence(int(cfg["seed"])).spawn(2)
    held = _holdout_mask(~missing, holdout, np.random.default_rng(hold_ss)) if holdout > 0 else np.zeros_like(missing)
    mask = missing | held
    if mask.all(axis=0).any():
        raise ConfigError("holdout leaves a column with no observed values")

    family = cfg["family"]
    offset = np.zeros(p)
    y_fit = y.copy()
    if family == "gaussian" and cfg["center"]:
        offset = np.nanmean(np.where(mask, np.nan, y), axis=0)
        y_fit = y - offset
    prior = SBartlettParams(float(cfg["nu"]), _load_scale(cfg["scale"], p))
    model = ModelSpec(family, y_fit, float(cfg["pi"]), prior, mask=mask)
    ncfg = NutsConfig(m_adapt=int(cfg["nuts_madapt"]), delta=float(cfg["nuts_delta"]))
    recs = run_chain(model, ncfg, int(cfg["iterations"]), int(cfg["burnin"]), int(cfg["thin"]), chain_ss)
    summ = summarize(recs, float(cfg["threshold"]))
    meta = provenance(cfg)

    lower, strict = np.tril_indices(p), np.tril_indices(p, -1)
    write_jsonl(out / "records.jsonl", (
        {
            "iteration": r.iteration,
            "edge_count": r.edge_count,
            "log_posterior": r.log_post,
            "z": r.z.z[strict].astype(int),
            "lambda": r.lam[lower],
        }
        for r in recs
    ), header={"config": meta})

    summary = {
        "config": meta,
        "columns": header,
        "n": n,
        "p": p,
        "n_samples": summ.n_samples,
        "threshold": summ.threshold,
        "lambda_hat": summ.lambda_hat,
        "z_prob": summ.z_prob,
        "z_hat": summ.z_hat.z.astype(int),
        "edge_count": {
            "mean": summ.edge_mean,
            "lo": summ.edge_interval[0],
            "hi": summ.edge_interval[1],
            "display": summ.edge_string(),
        },
        "column_offset": offset,
    }
    if mask.any():
        rows, cols = np.nonzero(mask)
        draws = predictive_draws(recs) + offset[cols]
        truth = np.where(held[rows, cols], y[rows, cols], np.nan)
        crps = np.array([
            crps_empirical(draws[:, c], truth[c]) if held[rows[c], cols[c]] else np.nan
            for c in range(len(rows))
        ])
        columns = ["row", "col", "heldout_value", "crps", "mean"] + [f"draw_{i}" for i in range(draws.shape[0])]
        table = [
            [rows[c], cols[c], truth[c], crps[c], draws[:, c].mean(), *draws[:, c]]
            for c in range(len(rows))
        ]
        write_table(out / "predictive.csv", columns, table, meta)
        summary["n_missing"] = int(missing.sum())
        summary["n_heldout"] = int(held.sum())
        if held.any():
            summary["crps_mean"] = float(np.nanmean(crps))
    write_json(out / "summary.json", summary)
    print(f"{summ.n_samples} samples; edges {summ.edge_string()}")
    if "crps_mean" in summary:
        print(f"mean CRPS over {summary['n_heldout']} held-out cells: {summary['crps_mean']:.4f}")
    return EXIT_OK


REPLICA_COLUMNS = [
    "replica", "failed", "sensitivity", "specificity", "kl_discrepancy", "crps_mean",
    "edge_count_mean", "edge_count_lo", "edge_count_hi", "true_edges", "error",
]


def cmd_simulate(cfg: dict, out: Path) -> int:
    """Replicated simulation study; writes per-replica and aggregate tables."""
    try:
        scen = SimScenario(
            p=int(cfg["p"]), pattern=str(cfg["pattern"]), width=int(cfg["width"]),
            alpha=float(cfg["alpha"]), n=int(cfg["n"]), family=cfg["family"],
            mu=None if cfg["mu"] is None else float(cfg["mu"]), pmiss=float(cfg["pmiss"]),
            replicas=int(cfg["replicas"]), seed=int(cfg["seed"]), nu=float(cfg["nu"]),
            pi=float(cfg["pi"]), rowwise_missing=bool(cfg["rowwise_missing"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ncfg = NutsConfig(m_adapt=int(cfg["nuts_madapt"]), delta=float(cfg["nuts_delta"]))
    rows, agg = run_study(scen, ncfg, int(cfg["iterations"]), int(cfg["burnin"]), int(cfg["thin"]), int(cfg["threads"]))
    meta = provenance(cfg)
    full_rows = [{c: r.get(c, np.nan) for c in REPLICA_COLUMNS} for r in rows]
    for r in full_rows:
        r["error"] = str(r["error"]).replace(",", ";")
    write_table(out / "replicas.csv", REPLICA_COLUMNS, full_rows, meta)
    write_table(out / "aggregate.csv", ["metric", "n", "mean", "median", "lo", "hi"], agg, meta)
    n_failed = sum(r["failed"] for r in rows)
    print(f"{len(rows)} replicas ({n_failed} failed)")
    for a in agg:
        print(f"  {a['metric']:<16} median {a['median']:.4f}  95% ({a['lo']:.4f}, {a['hi']:.4f})")
    return EXIT_OK


def cmd_evaluate(cfg: dict, out: Path) -> int:
    """Compare a fit summary with the true precision matrix."""
    if not cfg["truth"] or not cfg["fit"]:
        raise ConfigError("--truth and --fit are required")
    truth = read_matrix(cfg["truth"])
    summary_path = Path(cfg["fit"])
    if summary_path.is_dir():
        summary_path = summary_path / "summary.json"
    summary = json.loads(summary_path.read_text())
    lam_hat = np.array(summary["lambda_hat"], dtype=float)
    if truth.shape != lam_hat.shape:
        raise ConfigError(f"truth is {truth.shape[0]} x {truth.shape[1]} but the fit has p={lam_hat.shape[0]}")
    cholesky(truth)
    z_true = pattern_of(truth, 1e-10)
    if cfg["threshold"] is not None:
        z_hat = SparsityPattern(np.array(summary["z_prob"]) >= float(cfg["threshold"]))
    else:
        z_hat = SparsityPattern(np.array(summary["z_hat"], dtype=bool))
    ec = summary["edge_count"]
    crps = summary.get("crps_mean")
    rep = EvalReport(
        sensitivity=sensitivity(z_true, z_hat),
        specificity=specificity(z_true, z_hat),
        kl_discrepancy=kl_discrepancy(lam_hat, truth, cfg["kl_orientation"]),
        crps_mean=float("nan") if crps is None else float(crps),
        edge_count_mean=float(ec["mean"]),
        edge_count_lo=float(ec["lo"]),
        edge_count_hi=float(ec["hi"]),
        kl_orientation=cfg["kl_orientation"],
    )
    result = {"config": provenance(cfg), "report": rep.as_dict(),
              "edge_count_display": format_interval(rep.edge_count_mean, (rep.edge_count_lo, rep.edge_count_hi)),
              "true_edges": z_true.edge_count}
    write_json(out / "evaluation.json", result)
    lines = [
        ("sensitivity", f"{rep.sensitivity:.4f}"),
        ("specificity", f"{rep.specificity:.4f}"),
        (f"KL ({rep.kl_orientation})", f"{rep.kl_discrepancy:.6g}"),
        ("mean CRPS", "NA" if crps is None else f"{rep.crps_mean:.4f}"),
        ("edges", result["edge_count_display"]),
        ("true edges", str(z_true.edge_count)),
    ]
    for name, val in lines:
        print(f"{name:<26}{val}")
    return EXIT_OK


COMMANDS = {
    "sample-prior": cmd_sample_prior,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (NotPositiveDefinite, Overflow, AllDivergent, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"sbgraph: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, InputError, ValueError) as exc:
        print(f"sbgraph: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"sbgraph: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
