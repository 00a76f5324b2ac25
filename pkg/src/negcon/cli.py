"""Command-line front end: ``negcon simulate | fit | report``.

Exit status: 0 success, 2 usage or configuration error, 3 ingestion error,
4 non-convergence or divergence, 5 numerical failure. Output files are
written only after every computation has succeeded, each one atomically.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config, model_config, parse_overrides, run_options, sim_config
from .core import DyadRecord, build_frames, read_csv, write_csv
from .errors import ConfigError, ConvergenceError, NegconError
from .outcome import contagion_effect, fit_naive
from .pipeline import bootstrap, two_step
from .report import (dumps, fit_report, load_report, nameship_report, render_fits,
                     render_nameship, render_report, render_wald)
from .simulation import simulate

log = logging.getLogger("negcon")


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="negcon", description=(
        "Contagion effects in dyadic network data with negative-control adjustment "
        "for homophily bias."))
    top.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    top.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")

    p = sub.add_parser("simulate", help="draw a synthetic dataset with known truth")
    common(p)
    p.add_argument("--seed", type=int, help="overrides sim.seed")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="run the two-step estimator on a dyad CSV")
    common(p)
    p.add_argument("--input", required=True, help="dyad CSV")
    p.add_argument("--link", choices=("additive", "multiplicative"))
    p.add_argument("--strata", help="comma-separated nameship types to fit (default 1,2,3)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--naive-pooled", action="store_true", help="also fit the naive pooled model")
    p.add_argument("--naive-stratified", action="store_true",
                   help="also fit the naive per-stratum model")
    p.add_argument("--no-adjusted", action="store_true",
                   help="skip the nameship and homophily-adjusted fits")
    p.add_argument("--bootstrap", type=int, metavar="N", help="dyad-bootstrap replicates for SEs")
    p.add_argument("--seed", type=int, help="bootstrap / role-randomization seed")
    p.add_argument("--randomize-roles", action="store_true",
                   help="swap ego and alter in each dyad with probability 1/2 (seeded)")
    p.add_argument("--covariance", action="store_true", help="include covariance dumps in JSON")

    p = sub.add_parser("report", help="render saved fit reports as tables")
    p.add_argument("--fit", required=True, nargs="+", help="report JSON file(s)")
    p.add_argument("--full-precision", action="store_true",
                   help="print every number losslessly instead of two decimals")
    p.add_argument("--out", help="directory for tables.txt and report.json (default: stdout)")
    return top


def _values(args) -> dict:
    values = load_config(args.config) if args.config else {}
    values.update(parse_overrides(args.set))
    return values


def _atomic_write(outputs: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in outputs.items():
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, out / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def cmd_simulate(args) -> int:
    values = _values(args)
    if args.seed is not None:
        values["sim.seed"] = str(args.seed)
    model = model_config(values)
    sim = sim_config(values, model)
    if sim is None:
        raise ConfigError("simulate needs sim.* keys in the configuration")
    out = simulate(sim, model)
    path = Path(args.out) / "data.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    truth = {"kind": "truth", "sim": sim.to_json(),
             "n_candidate": int(out.n_candidate), "n_truncated": int(out.n_truncated),
             "n_observed": len(out.frames), "n_clipped": int(out.n_clipped),
             "beta_a": {str(s): sim.beta_a[s - 1] for s in (1, 2, 3)},
             "homophily": {str(s): sim.true_homophily(s) for s in (1, 2, 3)}}
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".data.csv.", suffix=".tmp")
    os.close(fd)
    try:
        write_csv(out.records(model), tmp, model)
        _atomic_write({"truth.json": dumps(truth)}, args.out)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    log.info("wrote %d dyads (%d truncated) to %s", len(out.frames), out.n_truncated, path)
    return 0


def randomize_roles(records, seed) -> list:
    """Swap ego and alter in each record with probability 1/2."""
    rng = np.random.default_rng(seed)
    out = []
    for rec, flip in zip(records, rng.random(len(records)) < 0.5):
        if flip:
            if len(rec.x1) != len(rec.x2):
                raise ConfigError("role randomization needs matching alter/ego covariate layouts")
            rec = DyadRecord(dyad_id=rec.dyad_id, y1_b=rec.y2_b, y1_f=rec.y2_f, y2_b=rec.y1_b,
                             y2_f=rec.y1_f, r1=rec.r2, r2=rec.r1, x1=rec.x2, x2=rec.x1)
        out.append(rec)
    return out


def cmd_fit(args) -> int:
    values = _values(args)
    if args.link:
        values["link"] = args.link
    if args.strata:
        values["strata"] = args.strata
    if args.bootstrap is not None:
        values["bootstrap"] = str(args.bootstrap)
    if args.seed is not None:
        values["bootstrap_seed"] = str(args.seed)
    model = model_config(values)
    opts = run_options(values)
    records = read_csv(args.input, model)
    if args.randomize_roles:
        records = randomize_roles(records, opts["bootstrap_seed"])
    frames = build_frames(records, model)

    outputs, tables = {}, []
    if args.naive_pooled:
        rep = fit_report(fit_naive(frames, model), centers=frames.centers)
        outputs["naive_pooled.json"] = dumps(rep)
        tables.append(render_fits([rep]))
    if args.naive_stratified:
        fits = fit_naive(frames, model, stratified=True, strata=opts["strata"])
        reps = [fit_report(f, centers=frames.centers) for f in fits.values()]
        outputs["naive_stratified.json"] = dumps({"kind": "naive_stratified", "fits": reps})
        tables.append(render_fits(reps))
    if not args.no_adjusted:
        res = two_step(frames, model, opts["strata"])
        if not res.mle.converged:
            raise ConvergenceError("nameship model did not converge; see the log for details")
        for s, f in res.fits.items():
            if not f.converged:
                raise ConvergenceError(f"outcome model for stratum {s} did not converge")
        outputs["nameship.json"] = dumps(nameship_report(res.mle))
        reps = []
        boot = None
        if opts["bootstrap"]:
            boot = bootstrap(frames, model, opts["bootstrap"], opts["bootstrap_seed"],
                             opts["strata"], init=res.mle.theta_hat)
        for s, f in res.fits.items():
            rep = fit_report(f, res.cov, frames.centers, include_covariance=args.covariance)
            if boot is not None:
                rep["bootstrap"] = {"replicates": opts["bootstrap"],
                                    "se": {n: boot.se(s, n) for n in f.names}}
            reps.append(rep)
            outputs[f"fit_s{s}.json"] = dumps(rep)
        tests = {str(k): t.to_json() for k, t in res.homophily.items()}
        for s in res.strata:
            tests[f"contagion_s{s}"] = res.exposure_test(s).to_json()
        outputs["wald.json"] = dumps({"kind": "wald", "tests": tests})
        tables += [render_nameship(nameship_report(res.mle)), render_fits(reps),
                   render_wald(tests)]
        for s, f in res.fits.items():
            log.info("stratum %d: contagion effect %.4f", s, contagion_effect(f))
    if not outputs:
        raise ConfigError("nothing to fit: --no-adjusted given without a naive model")
    outputs["tables.txt"] = "\n".join(tables)
    _atomic_write(outputs, args.out)
    return 0


def cmd_report(args) -> int:
    reps = [load_report(p) for p in args.fit]
    digits = None if args.full_precision else 2
    fits = [r for r in reps if r["kind"] in ("outcome_fit", "naive_fit")]
    others = [r for r in reps if r["kind"] not in ("outcome_fit", "naive_fit")]
    parts = [render_report(r, digits) for r in others]
    for kind in ("naive_fit", "outcome_fit"):
        group = [r for r in fits if r["kind"] == kind]
        if group:
            parts.append(render_fits(group, digits=digits))
    text = "\n".join(parts)
    if args.out:
        _atomic_write({"tables.txt": text,
                       "report.json": dumps({"kind": "bundle", "members": reps})}, args.out)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "report": cmd_report}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="negcon: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NegconError as exc:
        print(f"negcon: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except json.JSONDecodeError as exc:
        print(f"negcon: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
