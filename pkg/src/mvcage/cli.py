"""Command-line entry point: ``mvcage <command> [--preset P] [--config F] ...``.

Commands: simulate, fit, eigensystem, cage, regionalize, report.
Exit codes: 0 success, 2 configuration error, 3 numerical or model error,
4 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import formats as fm
from . import plots
from .basis import fourier_basis, gaussian_rbf_basis, oc_orthogonalize, regular_knots
from .bayes import gibbs_fit, per_draw_coeff_cov, posterior_coeff_cov, summarize
from .cage import dmvcage, posterior_mvcage
from .config import resolve
from .covariance import build_joint_cov, empirical_cross_cov, simulate_gp
from .errors import ConfigError, FormatError, MvcageError
from .geometry import areal_average, build_grid, make_partition, singleton_partition, whole_partition
from .kle import (dense_eigensystem, empirical_coefficient_eigensystem, multivariate_eigensystem,
                  posterior_eof_eigensystem, score_cov, univariate_kle_galerkin)
from .regionalize import (argmin_over_candidates, cut_dendrogram, feature_matrix,
                          kle_feature_matrix, regionalize, ward_hgc)

log = logging.getLogger("mvcage")


class Pipeline:
    """Lazily built artifacts shared by the commands of one run."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def grid(self):
        g = self.cfg.grid
        return self._get("grid", lambda: build_grid(g.bbox, g.counts))

    @property
    def covariance(self):
        def make():
            if self.cfg.covariance.source == "parametric":
                return build_joint_cov(self.grid, self.cfg.matern())
            return empirical_cross_cov(self.data)
        return self._get("cov", make)

    @property
    def data(self):
        def make():
            c = self.cfg.covariance
            if c.source == "data":
                p = c.data_path
                Z = fm.read_binary(p)[0]["data"] if not str(p).endswith(".csv") else fm.read_data_csv(p)
                if Z.ndim != 3 or Z.shape[1] != self.grid.n:
                    raise FormatError(f"data in {p} do not match the grid ({self.grid.n} cells)")
                return Z
            cov = build_joint_cov(self.grid, self.cfg.matern())
            return simulate_gp(cov, c.replications, self.cfg.seed)
        return self._get("data", make)

    @property
    def ocs(self):
        def make():
            b = self.cfg.basis
            if b.kind == "fourier":
                basis = fourier_basis(self.grid, b.K)
            else:
                basis = gaussian_rbf_basis(self.grid, regular_knots(self.grid, b.knots), b.bandwidth)
            oc = oc_orthogonalize(basis, self.grid)
            return [oc, oc]
        return self._get("ocs", make)

    @property
    def draws(self):
        return self._get("draws", lambda: gibbs_fit(self.data, self.ocs, self.cfg.model_config()))

    @property
    def eigensystem(self):
        def make():
            route = self.cfg.route
            if route == "plug-in":
                return dense_eigensystem(self.covariance, self.grid)
            if route == "score-cov":
                C = self.covariance
                systems = [univariate_kle_galerkin(C.block(j, j), self.ocs[j], self.grid, process=j)
                           for j in range(C.N)]
                return multivariate_eigensystem(score_cov(C, systems, self.grid), systems)
            if route == "empirical":
                return empirical_coefficient_eigensystem(self.data, self.ocs, self.grid)
            return posterior_eof_eigensystem(posterior_coeff_cov(self.draws), self.ocs)
        return self._get("eig", make)

    @property
    def partition(self):
        spec = self.cfg.cage.partition
        g = self.grid
        if spec == "singleton":
            return singleton_partition(g)
        if spec == "whole":
            return whole_partition(g)
        if spec.startswith("regular:"):
            m = int(spec.split(":", 1)[1])
            if g.counts is None or not 1 <= m <= g.n:
                raise ConfigError("regular partitions need a regular grid and 1 <= m <= n")
            if g.dim == 1:
                labels = np.arange(g.n) * m // g.n
            else:
                side = max(1, int(round(m ** (1.0 / g.dim))))
                idx = np.indices(g.counts).reshape(g.dim, -1)
                blocks = [(i * side) // c for i, c in zip(idx, g.counts)]
                labels = np.ravel_multi_index(blocks, (side,) * g.dim)
            return make_partition(labels, g)
        return fm.read_labels(spec, g)

    def estimates(self):
        """Per-cell process estimates used as clustering features."""
        if self.cfg.route == "posterior-EOF":
            d = self.draws
            est = [d.mu[:, j].mean() + d.nu[j][:, 0].mean(axis=0) @ self.ocs[j].values.T
                   for j in range(d.N)]
            return np.column_stack(est)
        Z = self.data[0]
        if np.isnan(Z).any():
            Z = np.where(np.isnan(Z), np.nanmean(Z, axis=0), Z)
        return Z

    def cage_report(self, part):
        c = self.cfg.cage
        if c.mode == "expectation":
            if self.cfg.route != "posterior-EOF":
                raise ConfigError("expectation mode needs the posterior-EOF route")
            covs = per_draw_coeff_cov(self.draws)
            return posterior_mvcage(covs, lambda S: posterior_eof_eigensystem(S, self.ocs),
                                    part, self.grid, c.loss, threads=self.cfg.threads)
        return dmvcage(self.eigensystem, part, self.grid, c.loss)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(out, command, cfg, files, extra=None):
    doc = {"command": command, "version": __version__, "seed": cfg.seed,
           "config": cfg.to_dict(),
           "files": {Path(f).name: _sha256(f) for f in files}}
    if extra:
        doc.update(extra)
    fm.write_json(Path(out) / f"manifest-{command}.json", doc)


def cmd_simulate(pl, out):
    cfg = pl.cfg
    if cfg.covariance.source != "parametric":
        raise ConfigError("simulate needs a parametric covariance source")
    Z = pl.data
    params = cfg.matern().to_dict()
    fm.write_binary(out / "data.bin", {"data": Z}, {"seed": cfg.seed, "params": params})
    fm.write_data_csv(out / "data.csv", Z)
    _manifest(out, "simulate", cfg, [out / "data.bin", out / "data.csv"],
              {"params": params, "shape": list(Z.shape)})
    return {"replications": Z.shape[0], "cells": Z.shape[1], "processes": Z.shape[2]}


def cmd_fit(pl, out):
    d = pl.draws
    fm.write_draws_csv(out / "draws.csv", d)
    fm.write_draws_binary(out / "draws.bin", d)
    summary = summarize(d)
    fm.write_json(out / "fit-summary.json", summary)
    _manifest(out, "fit", pl.cfg, [out / "draws.csv", out / "draws.bin", out / "fit-summary.json"])
    return {"draws": d.n_draws, "observed": d.n_obs.tolist()}


def cmd_eigensystem(pl, out):
    sys_ = pl.eigensystem
    fm.write_eigensystem(out / "eigensystem", sys_)
    _manifest(out, "eigensystem", pl.cfg, [out / "eigensystem.json", out / "eigensystem.csv"])
    return {"M": sys_.M, "provenance": sys_.provenance,
            "top_eigenvalues": sys_.eigenvalues[:5].tolist()}


def _unit_plots(pl, out, part, report, stem):
    g = pl.grid
    plots.bar_chart(out / f"{stem}.svg", report.values, "Criterion value over the areal units")
    if g.dim == 2 and g.counts is not None:
        plots.choropleth(out / f"{stem}-map.svg", g, part, report.values,
                         "Criterion value over the areal units")


def cmd_cage(pl, out):
    part = pl.partition
    rep = pl.cage_report(part)
    fm.write_report_csv(out / "cage.csv", rep)
    fm.write_geojson(out / "cage.geojson", pl.grid, part, rep)
    fm.write_json(out / "cage-summary.json",
                  {"total": fm.fmt(rep.total), "weighted_total": fm.fmt(rep.weighted_total),
                   "units": rep.m, "provenance": rep.provenance, "loss": rep.loss})
    _unit_plots(pl, out, part, rep, "cage")
    _manifest(out, "cage", pl.cfg, [out / "cage.csv", out / "cage.geojson", out / "cage-summary.json"])
    return {"total": rep.total, "units": rep.m}


def cmd_regionalize(pl, out):
    cfg = pl.cfg
    rc = cfg.region_config()
    g = pl.grid
    sys_ = pl.eigensystem
    if rc.features == "kle":
        feats = kle_feature_matrix(sys_, g, rc.gamma)
    else:
        feats = feature_matrix(pl.estimates(), g, rc.gamma)
    evaluate = pl.cage_report
    if cfg.regionalize.mode == "argmin":
        dend = ward_hgc(feats)
        js = range(rc.j_min, rc.j_max + 1)
        cands = [cut_dendrogram(dend, j, g, rc.enforce_contiguity) for j in js]
        idx, totals = argmin_over_candidates(cands, evaluate, g)
        part, reason, sel = cands[idx], "argmin", rc.j_min + idx
        trace = [(j, c.m, float(t), evaluate(c).weighted_total) for j, c, t in zip(js, cands, totals)]
    else:
        res = regionalize(evaluate, g, rc, features=feats)
        part, reason, sel, trace = res.partition, res.reason, res.selected_j, res.trace
    rep = evaluate(part)
    fm.write_labels(out / "labels.csv", part)
    fm.write_trace_csv(out / "trace.csv", trace)
    fm.write_geojson(out / "regions.geojson", g, part, rep)
    fm.write_json(out / "regionalize-summary.json",
                  {"selected_j": sel, "units": part.m, "reason": reason,
                   "total": fm.fmt(rep.total), "weighted_total": fm.fmt(rep.weighted_total)})
    plots.trace_plot(out / "trace.svg", trace)
    _unit_plots(pl, out, part, rep, "regions")
    if g.dim == 1:
        est = pl.estimates()
        agg = areal_average(est, part)[part.labels]
        x = g.centers[:, 0]
        for j in range(est.shape[1]):
            plots.line_plot(out / f"fields-{j}.svg", x,
                            {"original": est[:, j], "aggregated": agg[:, j]},
                            f"process {j}: original and aggregated", "s", "value")
    _manifest(out, "regionalize", cfg,
              [out / "labels.csv", out / "trace.csv", out / "regions.geojson",
               out / "regionalize-summary.json"])
    return {"selected_j": sel, "units": part.m, "reason": reason, "total": rep.total}


def cmd_report(pl, out):
    found = sorted(Path(out).glob("manifest-*.json"))
    if not found:
        raise FormatError(f"no manifests in {out}")
    lines = []
    for p in found:
        m = fm.read_json(p)
        lines.append(f"{m['command']}: seed {m['seed']}, files {', '.join(sorted(m['files']))}")
    for name in ("cage-summary.json", "regionalize-summary.json", "fit-summary.json"):
        p = Path(out) / name
        if p.exists():
            s = fm.read_json(p)
            keys = {k: v for k, v in s.items() if not isinstance(v, (list, dict))}
            lines.append(f"{name}: {keys}")
    (Path(out) / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"manifests": len(found)}


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "eigensystem": cmd_eigensystem,
            "cage": cmd_cage, "regionalize": cmd_regionalize, "report": cmd_report}


def build_parser():
    p = argparse.ArgumentParser(prog="mvcage", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config or a manifest from an earlier run")
        s.add_argument("--preset", help="named preset (sim-matern-1d, county-style, argmin-bounded)")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. regionalize.epsilon=1")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args.preset, args.config, args.set, args.seed, args.threads)
        out = Path(args.out)
        result = COMMANDS[args.command](Pipeline(cfg), out)
    except MvcageError as exc:
        print(f"mvcage {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"mvcage {args.command}: I/O error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    print(" ".join(f"{k}={v}" for k, v in result.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
