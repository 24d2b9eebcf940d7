"""Experiment orchestration: simulate, extract, deflate, trade and classify."""

from __future__ import annotations

import csv
import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import characteristics as chx
from . import deflators as dfl
from . import strategies as stg
from .artifacts import gnuplot_blocks, histogram_rows, write_manifest, write_text, write_with
from .classifier import (CONDITIONS, Thresholds, classify, deviations, summary_table,
                         write_spectrum_csv)
from .config import ExperimentConfig, StrategySettings, config_sections
from .evidence import RunSettings, gather
from .grid import TimeGrid
from .models import (AbsLocalMartingale, BlackScholes, BridgeExp, IntegratedRatio, MVTJump,
                     PowerVol, local_time_estimate, simulate)

log = logging.getLogger(__name__)

ZOO = {
    "AbsLocalMartingale": AbsLocalMartingale(),
    "MVTJump": MVTJump(beta=1.0, gamma=0.5, tau=0.0),
    "IntegratedRatio": IntegratedRatio(),
    "BridgeExp": BridgeExp(K=1.0),
    "PowerVol": PowerVol(mu_exp=-1.0),
    "BlackScholes": BlackScholes(mu=0.05, sigma=0.2),
}


@dataclass(eq=False)
class RunResult:
    """Files written by :func:`run` and the spectrum report if one was requested."""

    output_dir: Path
    files: list = field(default_factory=list)
    report: object = None
    stats: dict = field(default_factory=dict)


def _csv_text(header, rows):
    import io

    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _g(v):
    return f"{v:.10g}"


# -- tasks -------------------------------------------------------------------


def _characteristics_task(cfg, ev, run, out, files):
    if run is not None:
        write_with(out / "khat_quantiles.csv", chx.write_khat_csv, run.khats, run.grids)
        files.append(out / "khat_quantiles.csv")
        blocks = []
        for lvl, (k, g) in enumerate(zip(run.khats, run.grids)):
            t, q = chx.khat_quantiles(k, g)
            blocks.append((f"level {lvl} n_steps {g.n_steps}", [(ti, *row) for ti, row in zip(t, q)]))
        write_text(out / "khat.dat", gnuplot_blocks(blocks, ["time", "q10", "q50", "q90"]))
        files.append(out / "khat.dat")
        d = ev.divergence
        rows = [(d.describe(), d.confidence, "" if d.probe is None else _g(d.probe),
                 " ".join(_g(x) for x in np.atleast_1d(d.evidence)))]
        write_text(out / "divergence.csv", _csv_text(["verdict", "confidence", "probe", "ratios"], rows))
        files.append(out / "divergence.csv")
    if ev.nu_test is not None:
        rows = [(lv.n_steps, _g(lv.residual_fraction), lv.bins_used, lv.bins_total,
                 int(lv.drift_significant)) for lv in ev.nu_test.levels]
        write_text(out / "nu_test.csv", _csv_text(
            ["n_steps", "residual_fraction", "bins_used", "bins_total", "drift_significant"], rows))
        files.append(out / "nu_test.csv")


def _deflators_task(cfg, ev, run, out, files):
    if run is None:
        log.info("deflators: %s has no closed-form characteristics", cfg.model.kind)
        return
    rows = [(cfg.model.label(), "Zhat", ev.martingale)]
    if cfg.model.kind == "BlackScholes" or cfg.model.khat_bound(cfg.settings.horizon) is not None:
        tr = dfl.tradability_check(run.zhat, run.chars, run.bundle)
        write_text(out / "tradability.csv", _csv_text(
            ["n_steps", "rms", "relative_rms", "truncated"],
            [(run.bundle.n_steps, _g(tr.rms), _g(tr.relative_rms), int(tr.truncated.sum()))]))
        files.append(out / "tradability.csv")
    write_with(out / "deflator_verdicts.csv", dfl.write_verdicts_csv, rows)
    files.append(out / "deflator_verdicts.csv")


def _gains_files(report, name, out, files):
    write_with(out / f"gains_{name}.csv", report.write_csv)
    files.append(out / f"gains_{name}.csv")
    write_text(out / f"gains_{name}_hist.dat",
               gnuplot_blocks([(name, histogram_rows(report.terminal))], ["left", "right", "count"]))
    files.append(out / f"gains_{name}_hist.dat")


def bridge_strategy_grid(st, horizon):
    """Grid for the bridge strategies: fine geometric layers towards ``T``."""
    return TimeGrid.refined(horizon, 1024, singular=(horizon,), depth=st.bridge_depth,
                            substeps=st.bridge_substeps, start=st.bridge_start * horizon)


def _strategies_task(cfg, ev, run, out, files):
    spec, s, st = cfg.model, cfg.settings, cfg.strategies
    stats = {}
    fine_n = s.n_steps * 2 ** (s.levels - 1)
    if spec.kind == "AbsLocalMartingale":
        g = TimeGrid.uniform(s.horizon, fine_n)
        b = simulate(spec, g, s.n_paths, s.master_seed, workers=s.workers)
        strat = stg.increasing_profit_strategy(b, c=st.eps_zero_c)
        rep = stg.integrate(strat, b, st.tol_floor)
        tol = st.eps_zero_c * g.dt
        lt = local_time_estimate(b).tanaka[:, -1]
        stats.update(increasing_mean=_g(rep.mean), increasing_p_pos=_g(rep.prob_above(0.0)),
                     monotonicity_violations=_g(stg.monotonicity_violations(rep.g, tol)),
                     tanaka_mean=_g(float(lt.mean())),
                     band_constant=_g(stg.band_occupation_constant(st.eps_zero_c)))
        _gains_files(rep, "increasing_profit", out, files)
    elif spec.kind in ("MVTJump", "IntegratedRatio") and run is not None:
        b, g = run.bundle, run.bundle.grid
        tau = spec.singular_times(s.horizon)[0]
        strong = stg.market_price_of_risk_strategy(run.chars)
        strong_rep = stg.integrate(strong, b, st.tol_floor)
        comb = stg.immediate_arbitrage_combination(strong, g, tau, st.combination_terms)
        rep = stg.integrate(comb, b, st.tol_floor)
        k = g.index_at(tau + 0.5 * (s.horizon - tau))
        stats.update(combination_p_pos_mid=_g(float(np.mean(rep.g[:, k] > 0))),
                     combination_floor_violations=rep.floor_violations,
                     strong_floor_violations=strong_rep.floor_violations)
        _gains_files(rep, "immediate_arbitrage", out, files)
    elif spec.kind == "BridgeExp":
        g = bridge_strategy_grid(st, s.horizon)
        b = simulate(spec, g, st.bridge_paths, s.master_seed, workers=s.workers)
        ch = chx.extract(spec, b)
        z = dfl.minimal_deflator(ch, b, k_cap=s.k_cap, z_floor=s.z_floor)
        seq = stg.unbounded_profit_sequence(ch, z, b, st.profit_levels, st.tol_floor)
        stats["unbounded_medians"] = " ".join(_g(m) for m in seq.medians())
        for n, r in zip(seq.levels, seq.reports):
            _gains_files(r, f"unbounded_{n:g}", out, files)
        del z
        z = dfl.minimal_deflator(ch, b, k_cap=np.inf, z_floor=s.z_floor)
        p_nonneg, p_target = [], []
        for n in st.approx_levels:
            aa = stg.approximate_arbitrage_sequence(z, ch, b, st.k_const, n, st.tol_floor)
            p_nonneg.append(aa.prob_nonnegative())
            p_target.append(aa.prob_target())
            _gains_files(aa.report, f"approximate_{n:g}", out, files)
        stats["approximate_p_nonneg"] = " ".join(_g(p) for p in p_nonneg)
        stats["approximate_p_target"] = " ".join(_g(p) for p in p_target)
    elif spec.kind == "PowerVol" and spec.mu_exp == -1:
        g = TimeGrid.uniform(s.horizon, fine_n)
        b = simulate(spec, g, s.n_paths, s.master_seed, workers=s.workers)
        ba = stg.bessel_arbitrage(b, st.tol_floor)
        rep = ba.report
        stats.update(bessel_mean=_g(rep.mean), bessel_se=_g(rep.se),
                     bessel_p_pos=_g(rep.prob_above(0.0)), bessel_cost=_g(ba.initial_cost))
        _gains_files(rep, "bessel", out, files)
    elif run is not None:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            seq = stg.unbounded_profit_sequence(run.chars, run.zhat, run.bundle, st.profit_levels,
                                                st.tol_floor)
        for w in caught:
            log.info("unbounded profit: %s", w.message)
        stats["unbounded_medians"] = " ".join(_g(m) for m in seq.medians())
        for n, r in zip(seq.levels, seq.reports):
            _gains_files(r, f"unbounded_{n:g}", out, files)
    return stats


def run(cfg: ExperimentConfig):
    """Execute the tasks of ``cfg`` and write every artifact plus the manifest."""
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = RunResult(out)
    files = result.files
    log.info("gathering evidence for %s", cfg.model.label())
    ev, ladder_run = gather(cfg.model, cfg.settings)
    if "characteristics" in cfg.tasks:
        _characteristics_task(cfg, ev, ladder_run, out, files)
    if "deflators" in cfg.tasks:
        _deflators_task(cfg, ev, ladder_run, out, files)
    if "strategies" in cfg.tasks:
        log.info("running strategies")
        result.stats = _strategies_task(cfg, ev, ladder_run, out, files)
        ev = dataclasses.replace(ev, strategy_stats=dict(result.stats))
    del ladder_run
    if "classify" in cfg.tasks:
        rep = classify(cfg.model, ev, cfg.settings.horizon, cfg.thresholds)
        result.report = rep
        write_text(out / "spectrum.txt", rep.to_text())
        write_text(out / "spectrum.csv", write_spectrum_csv([rep]))
        files += [out / "spectrum.txt", out / "spectrum.csv"]
    write_manifest(out / "manifest.ini", config_sections(cfg), files, cfg.settings.master_seed)
    return result


def reproduce_paper_examples(settings=RunSettings(), models=None, output_dir=None,
                             thresholds=Thresholds()):
    """Classify the model zoo and compare with the expected verdict table.

    Returns
    -------
    reports : list of SpectrumReport
    devs : list of str
        Empty when every verdict matches.
    """
    names = list(ZOO) if not models else list(models)
    unknown = [n for n in names if n not in ZOO]
    if unknown:
        from .errors import ValidationError

        raise ValidationError(f"unknown models {unknown}; choose from {list(ZOO)}")
    settings.validate()
    reports = []
    for name in names:
        spec = ZOO[name]
        log.info("classifying %s", spec.label())
        ev, _ = gather(spec, settings)
        reports.append(classify(spec, ev, settings.horizon, thresholds))
    devs = deviations(reports)
    if output_dir is not None:
        out = Path(output_dir)
        files = [out / "summary.txt", out / "spectrum.csv"]
        write_text(files[0], summary_table(reports))
        write_text(files[1], write_spectrum_csv(reports))
        sections = {"reproduce": {"models": ", ".join(names)},
                    "grid": {"T": repr(settings.horizon), "n_steps": str(settings.n_steps),
                             "refinement_levels": str(settings.levels)},
                    "mc": {"n_paths": str(settings.n_paths), "nu_paths": str(settings.nu_paths)}}
        write_manifest(out / "manifest.ini", sections, files, settings.master_seed)
    return reports, devs


__all__ = ["ZOO", "RunResult", "run", "reproduce_paper_examples", "bridge_strategy_grid",
           "CONDITIONS", "StrategySettings"]
