"""Command-line interface.

    dsgof fit --dataset shipyard --alpha 0.5 --beta 0.5
    dsgof diagnose --data panel.csv --family poisson
    dsgof macro --dataset rat --num-modes 2 --boot 200 --out results/
    dsgof micro --dataset rat --y 4 --n 14
    dsgof sample --dataset rat --k 1000
    dsgof maxent --dataset rat
    dsgof simulate --experiment pharma --replicates 50

Every command prints (or writes to ``--out``) a JSON run report; grids go
to CSV files next to it.  Exit codes: 0 success, 2 invalid input,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import traceback
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import IngestError, StudyTable, ingest, load_dataset
from .ds_core import (
    DEFAULT_EPS,
    DEFAULT_GRID,
    DEFAULT_M_MAX,
    DegenerateModel,
    DSModel,
    fit_mom2,
    kl_divergence,
    prior_grid,
    qlp,
    u_function,
)
from .families import ConjugateSpec, Family, InvalidObservation, Observation
from .hyperparams import NonIdentifiable, fit_hyperparameters
from .inference import cluster_studies, macro_mean, macro_modes, micro
from .maxent import as_maxent_model, to_maxent
from .sampler import BootstrapConfig, BootstrapFailure, sample_ds
from .simbench import ScenarioConfig, compound_config, compound_decision_experiment, pharma_experiment

log = logging.getLogger("dsgof")

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3

_INVALID = (IngestError, InvalidObservation, NonIdentifiable, FileNotFoundError, ValueError, KeyError)
_NUMERIC = (DegenerateModel, BootstrapFailure, ArithmeticError, FloatingPointError, RuntimeError)


class Output:
    """Collects the JSON report and CSV grids for one command."""

    def __init__(self, out_dir: Optional[str]):
        self.dir = Path(out_dir) if out_dir else None
        self.tables: dict[str, str] = {}

    def table(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.tables[name] = buf.getvalue()

    def emit(self, report: dict) -> None:
        text = json.dumps(_jsonable(report), indent=2, sort_keys=False, allow_nan=True)
        if self.dir is None:
            print(text)
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "report.json").write_text(text + "\n")
        for name, body in self.tables.items():
            (self.dir / name).write_text(body)
        print(str(self.dir / "report.json"))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# ---------------------------------------------------------------------------
# shared setup


def _load_table(args) -> StudyTable:
    if bool(args.data) == bool(args.dataset):
        raise ValueError("give exactly one of --data PATH or --dataset NAME")
    if args.dataset:
        if args.family:
            return load_dataset(args.dataset, args.family)
        return load_dataset(args.dataset)
    if not args.family:
        raise ValueError("--family is required with --data")
    return ingest(args.data, args.family, exposure_col=args.exposure_col)


def _user_spec(args, family: Family) -> Optional[ConjugateSpec]:
    if family is Family.NORMAL:
        if args.mu is None and args.tau is None:
            return None
        if args.mu is None or args.tau is None:
            raise ValueError("--mu and --tau must be given together")
        return ConjugateSpec.normal(args.mu, args.tau)
    if args.alpha is None and args.beta is None:
        return None
    if args.alpha is None or args.beta is None:
        raise ValueError("--alpha and --beta must be given together")
    return ConjugateSpec(family, args.alpha, args.beta)


def _fit(args, report: dict, out: Output):
    table = _load_table(args)
    spec = _user_spec(args, table.family)
    args.user_prior = spec is not None
    report["input"] = {
        "name": table.name,
        "family": table.family.value,
        "k": table.k,
        "digest": table.digest(),
    }
    if spec is None:
        mle = fit_hyperparameters(table, zero_truncated=args.zero_truncated)
        spec = mle.spec
        report["hyperparameters"] = {"source": "mle", **mle.to_dict()}
    else:
        report["hyperparameters"] = {"source": "user", "spec": spec.to_dict()}
    model = fit_mom2(table, spec, m_max=args.m_max, eps=args.eps)
    uf = u_function(model, args.grid)
    report["model"] = model.to_dict()
    report["qlp"] = qlp(model)
    report["u_min"] = uf.min
    report["warnings"] = list(model.warnings)
    out.table("ufunc.csv", ("u", "d"), zip(uf.grid.tolist(), uf.values.tolist()))
    theta, dens, g = prior_grid(model, args.grid)
    out.table("prior.csv", ("theta", "ds_density", "g_density"), zip(theta.tolist(), dens.tolist(), g.tolist()))
    if args.maxent:
        sol = to_maxent(model)
        report["maxent"] = sol.to_dict()
        model = as_maxent_model(model, sol)
    return table, model


def _boot_config(args) -> Optional[BootstrapConfig]:
    if args.boot <= 0:
        return None
    return BootstrapConfig(
        B=args.boot,
        seed=args.seed,
        refit_hyperparameters=not args.user_prior,
        m_max=args.m_max,
        eps=args.eps,
        zero_truncated=args.zero_truncated,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args, report, out):
    _fit(args, report, out)


def cmd_diagnose(args, report, out):
    table, model = _fit(args, report, out)
    try:
        report["kl"] = kl_divergence(model)
    except DegenerateModel:
        report["kl"] = None
    if model.m_selected == 0:
        verdict = "prior consistent with data"
    else:
        terms = ", ".join(f"T_{j}" for j in model.retained)
        verdict = f"prior needs correction ({terms})"
    report["verdict"] = verdict
    trace = model.bic_trace
    out.table("bic.csv", ("m", "bic"), trace)


def cmd_macro(args, report, out):
    table, model = _fit(args, report, out)
    boot = _boot_config(args)
    if args.num_modes:
        rep = macro_modes(model, args.num_modes, table, boot, args.grid)
    else:
        rep = macro_mean(model, table, boot, args.grid)
    section = rep.to_dict()
    if args.groups:
        labels = cluster_studies(model, table, args.groups, seed=args.seed)
        section["cluster_assignments"] = labels.tolist()
        out.table("clusters.csv", ("row", "y", "size", "group"),
                  [(i, float(a), float(b), int(g)) for i, (a, b, g) in enumerate(zip(table.y, table.sizes, labels))])
    if rep.bootstrap is not None:
        out.table("bootstrap.csv", tuple(f"loc{i}" for i in range(rep.locations.size)), rep.bootstrap.replicates.tolist())
    report["macro"] = section
    report["seeds"] = {"bootstrap": args.seed}


def _observation(args, family: Family) -> Observation:
    if args.y is None:
        raise ValueError("--y is required")
    size = next((v for v in (args.n, args.se, args.exposure) if v is not None), None)
    if family is Family.EXPONENTIAL:
        if size is not None:
            raise ValueError("exponential observations take no size")
        return Observation(args.y)
    if family is Family.BINOMIAL and size is None:
        raise ValueError("--n is required for binomial observations")
    if family is Family.NORMAL and size is None:
        raise ValueError("--se is required for normal observations")
    return Observation(args.y, size)


def cmd_micro(args, report, out):
    table, model = _fit(args, report, out)
    obs = _observation(args, table.family)
    summ = micro(model, obs, args.grid)
    report["micro"] = {"y": obs.y, "size": obs.size, **summ.to_dict()}
    out.table("posterior.csv", ("theta", "density", "weight"),
              zip(summ.theta.tolist(), summ.density.tolist(), summ.weights.tolist()))


def cmd_sample(args, report, out):
    table, model = _fit(args, report, out)
    batch = sample_ds(model, args.k, seed=args.seed, grid_size=args.grid)
    report["sample"] = {
        "k": args.k,
        "acceptance_rate": batch.acceptance_rate,
        "envelope": batch.envelope,
        "mean": float(np.mean(batch.draws)) if batch.draws.size else None,
    }
    report["seeds"] = {"sample": args.seed}
    out.table("draws.csv", ("theta",), ([float(t)] for t in batch.draws))


def cmd_maxent(args, report, out):
    args.maxent = False
    table, model = _fit(args, report, out)
    sol = to_maxent(model, tol=args.tol)
    report["maxent"] = sol.to_dict()
    me = as_maxent_model(model, sol)
    uf = u_function(me, args.grid)
    out.table("ufunc_maxent.csv", ("u", "d"), zip(uf.grid.tolist(), uf.values.tolist()))
    if not sol.converged:
        raise ArithmeticError(f"max-entropy solve did not converge (residual {sol.residual:.3g})")


def cmd_simulate(args, report, out):
    etas = tuple(float(e) for e in args.etas.split(",")) if args.etas else None
    if args.experiment == "pharma":
        cfg = ScenarioConfig(
            **({"etas": etas} if etas else {}),
            replicates=args.replicates or 250,
            k=args.k_panel or 100,
            seed=args.seed,
            m_max=args.m_max,
            eps=args.eps,
        )
        table = pharma_experiment(cfg)
    else:
        cfg = compound_config(
            **({"etas": etas} if etas else {}),
            replicates=args.replicates or 500,
            k=args.k_panel or 1000,
            seed=args.seed,
            m_max=args.m_max,
            eps=args.eps,
        )
        table = compound_decision_experiment(cfg)
    report["simulation"] = {"experiment": args.experiment, "config": {
        "etas": list(cfg.etas), "replicates": cfg.replicates, "k": cfg.k, "seed": cfg.seed}, **table.to_dict()}
    report["seeds"] = {"simulation": args.seed}
    out.tables[f"{args.experiment}.csv"] = table.to_csv()


COMMANDS = {
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "macro": cmd_macro,
    "micro": cmd_micro,
    "sample": cmd_sample,
    "maxent": cmd_maxent,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser, with_data: bool = True) -> None:
    if with_data:
        g = p.add_argument_group("input")
        g.add_argument("--data", help="CSV file with a header row")
        g.add_argument("--dataset", help="bundled dataset name (or a file in $DSGOF_DATA_DIR)")
        g.add_argument("--family", choices=[f.value for f in Family])
        g.add_argument("--exposure-col", help="column holding poisson exposures")
        g.add_argument("--zero-truncated", action="store_true", help="zero-truncated poisson MLE")
        h = p.add_argument_group("starting prior (MLE when omitted)")
        h.add_argument("--alpha", type=float)
        h.add_argument("--beta", type=float)
        h.add_argument("--mu", type=float)
        h.add_argument("--tau", type=float, help="prior standard deviation")
        p.add_argument("--m-max", type=int, default=DEFAULT_M_MAX)
        p.add_argument("--grid", type=int, default=DEFAULT_GRID)
        p.add_argument("--maxent", action="store_true", help="use the max-entropy representation downstream")
    else:
        p.add_argument("--m-max", type=int, default=DEFAULT_M_MAX)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for report.json and CSV grids (default: JSON to stdout)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsgof", description="Empirical Bayes via goodness of fit (DS priors).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the DS prior and report coefficients")
    _add_common(p)
    p = sub.add_parser("diagnose", help="U-function, qLP and BIC trace with a verdict")
    _add_common(p)
    p = sub.add_parser("macro", help="prior mean or modes with bootstrap SEs")
    _add_common(p)
    p.add_argument("--num-modes", type=int, help="report this many modes (default: the mean)")
    p.add_argument("--boot", type=int, default=1000, help="bootstrap replicates (0 disables)")
    p.add_argument("--groups", type=int, help="also cluster studies into this many groups")
    p = sub.add_parser("micro", help="posterior mean, median and mode of one study")
    _add_common(p)
    p.add_argument("--y", type=float)
    p.add_argument("--n", type=float, help="binomial trials")
    p.add_argument("--se", type=float, help="normal standard error")
    p.add_argument("--exposure", type=float, help="poisson exposure")
    p = sub.add_parser("sample", help="draw from the fitted DS prior")
    _add_common(p)
    p.add_argument("--k", type=int, default=1000)
    p = sub.add_parser("maxent", help="convert the fit to the max-entropy form")
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p = sub.add_parser("simulate", help="run a simulation benchmark")
    _add_common(p, with_data=False)
    p.add_argument("--experiment", choices=("pharma", "compound"), required=True)
    p.add_argument("--etas", help="comma-separated eta values in [0, 0.5]")
    p.add_argument("--replicates", type=int)
    p.add_argument("--k-panel", type=int, help="studies per simulated panel")
    return parser


def _provenance(exc: BaseException) -> str:
    frames = [f for f in traceback.extract_tb(exc.__traceback__) if "/dsgof/" in f.filename.replace("\\", "/")]
    if not frames:
        return "dsgof"
    f = frames[-1]
    return f"{Path(f.filename).stem}.{f.name}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    report = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "out")},
        "seeds": {},
    }
    out = Output(args.out)
    try:
        COMMANDS[args.command](args, report, out)
    except _NUMERIC as exc:
        if isinstance(exc, ValueError):
            raise
        print(f"error [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _INVALID as exc:
        print(f"error [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out.emit(report)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
