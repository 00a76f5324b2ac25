"""Tests for JSON fit reports, table rendering and table parsing."""

import json
from pathlib import Path

import numpy as np
import pytest

from negcon.errors import InvalidArgumentError
from negcon.nameship import fit_nameship
from negcon.outcome import fit_adjusted, fit_naive
from negcon.pipeline import two_step
from negcon.report import (
    ReportError,
    dumps,
    fit_report,
    load_report,
    parse_tables,
    render_fits,
    render_report,
)
from negcon.simulation import example_config, simulate

DATA = Path(__file__).parent / "data"

TINY = {
    "kind": "outcome_fit", "stratum": 1, "link": "additive", "n_used": 10,
    "coefficients": {"(intercept)": {"est": 1.234, "se": 0.5, "p": 0.0134},
                     "pr0": {"est": 2.0, "se": 1.0, "p": 0.0455},
                     "a": {"est": -0.004, "se": 0.1, "p": 0.96}},
    "homophily": ["pr0"], "contagion_effect": -0.004, "converged": True,
}

# written out by hand from the layout rules: label column as wide as its
# longest entry, four spaces before each block, two between columns,
# homophily rows last whatever their position in the report
TINY_TEXT = """\
Homophily-adjusted fit (additive link)
-------------------------------
term                 S=1
                Est    SE     p
-------------------------------
(intercept)    1.23  0.50  0.01
a              0.00  0.10  0.96
beta^{ss1}     2.00  1.00  0.05
-------------------------------
homophily columns:
  S=1: beta^{ss1}=pr0
  n used: 10 (S=1)
"""


def load(name):
    return json.loads((DATA / name).read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def fitted():
    frames = simulate(example_config(n_observed=1500, beta_a=0.3, seed=41)).frames
    return frames, two_step(frames)


class TestGoldenRenders:
    """Frozen renders of frozen reports; any layout change shows up here."""

    def test_hand_written_layout(self):
        assert render_fits([TINY]) == TINY_TEXT

    @pytest.mark.parametrize("inputs, golden", [
        (["fit_s1.json", "fit_s2.json", "fit_s3.json"], "adjusted.txt"),
        (["naive_pooled.json"], "naive_pooled.txt"),
        (["naive_stratified.json"], "naive_stratified.txt"),
        (["nameship.json"], "nameship.txt"),
        (["wald.json"], "wald.txt"),
    ])
    def test_two_decimal(self, inputs, golden):
        reps = [load(n) for n in inputs]
        text = render_fits(reps) if len(reps) > 1 else render_report(reps[0])
        assert text == (DATA / golden).read_text(encoding="utf-8")

    def test_full_precision(self):
        assert render_report(load("fit_s2.json"), digits=None) == \
            (DATA / "fit_s2_full.txt").read_text(encoding="utf-8")

    def test_order_of_inputs_irrelevant(self):
        reps = [load(f"fit_s{s}.json") for s in (3, 1, 2)]
        assert render_fits(reps) == (DATA / "adjusted.txt").read_text(encoding="utf-8")


class TestLayout:
    def test_homophily_rows_last(self):
        lines = (DATA / "adjusted.txt").read_text().splitlines()
        labels = [ln.split()[0] for ln in lines[5:16]]
        assert labels[-3:] == ["beta^{ss1}", "beta^{ss2}", "beta^{ss3}"]
        assert not any(lab.startswith("pr") for lab in labels)

    def test_footnote_maps_columns(self):
        text = (DATA / "adjusted.txt").read_text()
        assert "  S=2: beta^{ss1}=pr0, beta^{ss2}=pr1, beta^{ss3}=pr3" in text

    def test_naive_pooled_rows(self):
        rep = load("naive_pooled.json")
        assert list(rep["coefficients"]) == ["(intercept)", "a", "y2_b", "sex2", "age2", "sex1",
                                             "age1", "age2:age1"]
        assert rep["homophily"] == [] and rep["stratum"] == "pooled"

    def test_small_p_values(self):
        text = render_fits([dict(TINY, coefficients={"a": {"est": 3.0, "se": 0.1, "p": 1e-9}},
                                 homophily=[])])
        assert "<0.01" in text and "0.00  " not in text.split("\n")[5]

    def test_missing_cells(self):
        other = dict(TINY, stratum=2, coefficients={"a": {"est": 1.0, "se": 0.5, "p": 0.05}},
                     homophily=[])
        row = [ln for ln in render_fits([TINY, other]).splitlines() if ln.startswith("(intercept)")]
        assert row[0].split()[-3:] == ["-", "-", "-"]

    def test_nothing_to_render(self):
        with pytest.raises(InvalidArgumentError):
            render_fits([])

    def test_unknown_kind(self):
        with pytest.raises(ReportError):
            render_report({"kind": "histogram"})


class TestRoundTrip:
    def test_full_precision_exact(self):
        reps = [load(f"fit_s{s}.json") for s in (1, 2, 3)]
        table = parse_tables(render_fits(reps, digits=None))[0]
        for rep in reps:
            block = table["blocks"][f"S={rep['stratum']}"]
            assert block == rep["coefficients"]
        assert table["homophily"]["S=3"] == ["pr0", "pr1", "pr2"]

    def test_bundle_of_tables(self):
        text = render_report(load("nameship.json"), digits=None)
        tables = parse_tables(text)
        assert [t["title"] for t in tables] == ["Nameship model: Ego model",
                                                "Nameship model: Alter model"]
        rep = load("nameship.json")
        assert {k: v["est"] for k, v in tables[1]["blocks"]["naming"].items()} == rep["theta1"]

    def test_two_decimal_parse(self):
        table = parse_tables((DATA / "naive_pooled.txt").read_text())[0]
        assert table["blocks"]["pooled"]["a"] == {"est": 0.26, "se": 0.08, "p": "<0.01"}

    def test_malformed_row(self):
        text = TINY_TEXT.replace("0.50", "zero")
        with pytest.raises(ReportError, match="malformed"):
            parse_tables(text)


class TestFitReport:
    def test_adjusted_uses_joint_sandwich(self, fitted):
        frames, res = fitted
        rep = fit_report(res.fits[2], res.cov, frames.centers)
        assert rep["kind"] == "outcome_fit"
        assert rep["coefficients"]["a"]["se"] == pytest.approx(res.se(2), rel=1e-12)
        assert rep["homophily"] == ["pr0", "pr1", "pr3"]
        assert rep["centers"] == pytest.approx(frames.centers)
        assert rep["theta_used"] == res.mle.theta_hat.to_dict()

    def test_naive_uses_hc0(self, fitted):
        frames, _ = fitted
        fit = fit_naive(frames)
        rep = fit_report(fit)
        x, e = fit.design, fit.residuals
        inv = np.linalg.inv(x.T @ x)
        hc0 = inv @ (x.T * e**2) @ x @ inv
        assert rep["kind"] == "naive_fit"
        assert rep["coefficients"]["a"]["se"] == pytest.approx(np.sqrt(hc0[1, 1]), rel=1e-10)

    def test_p_value(self, fitted):
        frames, res = fitted
        c = fit_report(res.fits[1], res.cov)["coefficients"]["a"]
        from scipy.stats import norm

        assert c["p"] == pytest.approx(2 * norm.sf(abs(c["est"] / c["se"])), rel=1e-12)

    def test_covariance_dump(self, fitted):
        frames, res = fitted
        rep = fit_report(res.fits[3], res.cov, include_covariance=True)
        m = np.array(rep["covariance"]["matrix"])
        np.testing.assert_allclose(np.sqrt(np.diag(m)),
                                   [v["se"] for v in rep["coefficients"].values()], rtol=1e-12)

    def test_json_serializable(self, fitted):
        frames, res = fitted
        rep = fit_report(fit_adjusted(frames, fit_nameship(frames).theta_hat, 1), res.cov)
        assert json.loads(dumps(rep)) == rep


class TestLoadReport:
    def test_missing(self, tmp_path):
        with pytest.raises(ReportError, match="not found"):
            load_report(tmp_path / "nope.json")

    def test_not_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{oops")
        with pytest.raises(ReportError, match="cannot read"):
            load_report(p)

    def test_no_kind(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("[1, 2]")
        with pytest.raises(ReportError, match="kind"):
            load_report(p)

    def test_loads_fixture(self):
        assert load_report(DATA / "wald.json")["kind"] == "wald"
