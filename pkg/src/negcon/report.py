"""JSON reports and plain-text coefficient tables.

Tables are laid out as blocks of ``Est SE p`` columns, one block per
stratum (or per naming model), with row labels taken from the column names.
Homophily rows are relabelled ``beta^{ss1}``, ``beta^{ss2}``, ``beta^{ss3}``,
placed last, and a footnote maps each label to its probability column per
stratum.

``digits=None`` renders every number with ``repr`` so that
:func:`parse_tables` recovers the exact values; the default renders two
decimals and prints p-values below 0.01 as ``<0.01``.
"""

from __future__ import annotations

import json
import math
import re

import numpy as np
from scipy.stats import norm

from .errors import InvalidArgumentError, NegconError
from .inference import SandwichCov, robust_cov
from .nameship import MleReport
from .outcome import OutcomeFit, contagion_effect

MISSING = "-"
HOM_LABEL = "beta^{{ss{}}}"


class ReportError(NegconError):
    """A report file is missing, unreadable or of the wrong kind."""

    exit_code = 3


def _p(est, se):
    return float(2 * norm.sf(abs(est / se))) if se > 0 else float("nan")


def fit_report(fit: OutcomeFit, cov: SandwichCov | None = None, centers=None,
               include_covariance=False) -> dict:
    """Serialize a stage-2 fit with SEs and two-sided normal p-values.

    Adjusted fits take SEs from the joint sandwich ``cov``; naive fits (or
    any fit without ``cov``) use the HC0 robust covariance with theta fixed.
    """
    if cov is not None:
        names = [f"s{fit.stratum}:{n}" for n in fit.names]
        block = cov.estimate_cov(names)
    else:
        block = robust_cov(fit)
    se = np.sqrt(np.diag(block))
    coefs = {name: {"est": float(b), "se": float(s), "p": _p(b, s)}
             for name, b, s in zip(fit.names, fit.coef, se)}
    out = {"kind": "outcome_fit" if fit.kind != "naive" else "naive_fit",
           "stratum": fit.stratum, "link": fit.link, "n_used": int(fit.n_used),
           "coefficients": coefs, "homophily": list(fit.homophily_names),
           "contagion_effect": contagion_effect(fit), "converged": bool(fit.converged)}
    if fit.theta_used is not None:
        out["theta_used"] = fit.theta_used.to_dict()
    if centers:
        out["centers"] = {k: float(v) for k, v in centers.items()}
    if include_covariance:
        out["covariance"] = {"names": list(fit.names),
                             "matrix": [[float(v) for v in row] for row in block]}
    return out


def nameship_report(mle: MleReport) -> dict:
    return mle.to_json()


def _fmt(value, digits, is_p=False):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return MISSING
    if digits is None:
        return repr(float(value))
    if is_p and value < 10 ** (-digits):
        return f"<{10 ** (-digits):.{digits}f}"
    text = f"{value:.{digits}f}"
    if float(text) == 0:
        text = text.lstrip("-")
    return text


def _order(blocks):
    """Row labels: non-homophily names in first-seen order, then beta^{ss*}."""
    rows = []
    for _, coefs, hom in blocks:
        for name in coefs:
            if name not in hom and name not in rows:
                rows.append(name)
    n_hom = max((len(hom) for _, _, hom in blocks), default=0)
    return rows, n_hom


def render_blocks(title, blocks, digits=2, notes=()) -> str:
    """Render ``blocks`` = [(heading, {name: {est, se, p}}, homophily names)]."""
    rows, n_hom = _order(blocks)
    body = []
    for name in rows:
        cells = [name]
        for _, coefs, _ in blocks:
            c = coefs.get(name)
            cells += ([MISSING] * 3 if c is None else
                      [_fmt(c["est"], digits), _fmt(c["se"], digits), _fmt(c["p"], digits, True)])
        body.append(cells)
    footnote = []
    for j in range(n_hom):
        label = HOM_LABEL.format(j + 1)
        cells = [label]
        for heading, coefs, hom in blocks:
            if j < len(hom):
                c = coefs[hom[j]]
                cells += [_fmt(c["est"], digits), _fmt(c["se"], digits), _fmt(c["p"], digits, True)]
            else:
                cells += [MISSING] * 3
        body.append(cells)
    if n_hom:
        for heading, _, hom in blocks:
            pairs = ", ".join(f"{HOM_LABEL.format(j + 1)}={h}" for j, h in enumerate(hom))
            footnote.append(f"  {heading}: {pairs}")

    head = ["term"] + [h for h, _, _ in blocks for h in (h, "", "")]
    sub = [""] + ["Est", "SE", "p"] * len(blocks)
    widths = [max(len(r[i]) for r in [head, sub] + body) for i in range(len(head))]

    def line(cells):
        parts = [cells[0].ljust(widths[0])]
        for i in range(1, len(cells)):
            gap = "    " if (i - 1) % 3 == 0 else "  "
            parts.append(gap + cells[i].rjust(widths[i]))
        return "".join(parts).rstrip()

    def heading_line():
        parts = ["term".ljust(widths[0])]
        for b, (h, _, _) in enumerate(blocks):
            w = sum(widths[1 + 3 * b:4 + 3 * b]) + 4
            parts.append("    " + h.center(w))
        return "".join(parts).rstrip()

    rule = "-" * len(line(sub).ljust(max(len(line(r)) for r in body + [sub])))
    out = [title, rule, heading_line(), line(sub), rule] + [line(r) for r in body] + [rule]
    if footnote:
        out.append("homophily columns:")
        out += footnote
    out += [f"  {n}" for n in notes]
    return "\n".join(out) + "\n"


def _fit_block(rep):
    heading = f"S={rep['stratum']}" if rep["stratum"] != "pooled" else "pooled"
    return heading, rep["coefficients"], tuple(rep.get("homophily", ()))


def render_fits(reports, title=None, digits=2) -> str:
    """Table of one or more fit reports side by side (pooled or per stratum)."""
    reports = sorted(reports, key=lambda r: (str(r["stratum"])))
    if not reports:
        raise InvalidArgumentError("nothing to render")
    kinds = {r["kind"] for r in reports}
    links = {r["link"] for r in reports}
    if title is None:
        what = "Naive fit" if kinds == {"naive_fit"} else "Homophily-adjusted fit"
        title = f"{what} ({'/'.join(sorted(links))} link)"
    notes = ["n used: " + ", ".join(f"{r['n_used']} ({_fit_block(r)[0]})" for r in reports)]
    return render_blocks(title, [_fit_block(r) for r in reports], digits, notes)


def render_nameship(rep, digits=2) -> str:
    """Ego-model and alter-model blocks of a nameship fit."""
    parts = []
    for heading, key in (("Ego model", "theta2"), ("Alter model", "theta1")):
        se = rep.get(f"{key}_se", {})
        p = rep.get(f"{key}_p", {})
        coefs = {n: {"est": v, "se": se.get(n, float("nan")), "p": p.get(n, float("nan"))}
                 for n, v in rep[key].items()}
        parts.append(render_blocks(f"Nameship model: {heading}", [("naming", coefs, ())], digits))
    note = (f"  log-likelihood {_fmt(rep['loglik'], digits if digits is None else 3)}, "
            f"converged={rep['converged']}, iterations={rep['iterations']}\n")
    return "".join(parts) + note


def render_wald(tests) -> str:
    lines = ["Wald tests"]
    for key, t in tests.items():
        lines.append(f"  [{key}] {t['hypothesis']}: chi2 = {t['statistic']:.3f}, "
                     f"df = {t['df']}, p = {t['p_value']:.4f}")
    return "\n".join(lines) + "\n"


def render_report(rep, digits=2) -> str:
    """Render any report kind produced by this module or the CLI."""
    kind = rep.get("kind")
    if kind == "nameship":
        return render_nameship(rep, digits)
    if kind in ("outcome_fit", "naive_fit"):
        return render_fits([rep], digits=digits)
    if kind == "naive_stratified":
        return render_fits(rep["fits"], digits=digits)
    if kind == "wald":
        return render_wald(rep["tests"])
    if kind == "bundle":
        return "\n".join(render_report(m, digits) for m in rep["members"])
    raise ReportError(f"unknown report kind {kind!r}")


_VALUE = re.compile(r"^(-|<?-?[0-9.]+(e[-+]?\d+)?|-?inf|nan)$")


def parse_tables(text) -> list[dict]:
    """Inverse of the table renderer.

    Returns one dict per table: ``{"title", "blocks": {heading: {name:
    {est, se, p}}}, "homophily": {heading: [names]}}``. Values are floats
    (exact for ``digits=None`` renders); ``<0.01`` is returned as the string.
    """
    lines = text.splitlines()
    tables = []
    i = 0
    while i < len(lines):
        if i + 4 < len(lines) and set(lines[i + 1]) == {"-"} and lines[i + 2].startswith("term"):
            title = lines[i]
            headings = lines[i + 2].split()[1:]
            j = i + 5
            rows = []
            while j < len(lines) and not set(lines[j]) == {"-"}:
                rows.append(lines[j].split())
                j += 1
            j += 1
            hom_map = {}
            if j < len(lines) and lines[j] == "homophily columns:":
                j += 1
                while j < len(lines) and lines[j].startswith("  ") and "=" in lines[j]:
                    head, pairs = lines[j].strip().split(": ", 1)
                    hom_map[head] = [p.split("=", 1)[1] for p in pairs.split(", ")]
                    j += 1
            blocks = {h: {} for h in headings}
            for row in rows:
                label, cells = row[0], row[1:]
                if len(cells) != 3 * len(headings) or not all(_VALUE.match(c) for c in cells):
                    raise ReportError(f"malformed table row: {' '.join(row)}")
                for b, h in enumerate(headings):
                    est, se, p = cells[3 * b:3 * b + 3]
                    if est == MISSING:
                        continue
                    name = label
                    m = re.fullmatch(r"beta\^\{ss(\d+)\}", label)
                    if m and h in hom_map:
                        name = hom_map[h][int(m.group(1)) - 1]
                    blocks[h][name] = {"est": _num(est), "se": _num(se), "p": _num(p)}
            tables.append({"title": title, "blocks": blocks, "homophily": hom_map})
            i = j
        else:
            i += 1
    return tables


def _num(token):
    if token.startswith("<") or token == MISSING:
        return token
    return float(token)


def load_report(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            rep = json.load(fh)
    except FileNotFoundError:
        raise ReportError(f"report file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportError(f"cannot read report {path}: {exc}") from None
    if not isinstance(rep, dict) or "kind" not in rep:
        raise ReportError(f"{path} is not a report file (no 'kind' field)")
    return rep


def dumps(rep) -> str:
    return json.dumps(rep, indent=2, sort_keys=False, allow_nan=True) + "\n"
