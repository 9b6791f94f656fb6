"""Command-line driver: ``sinhpoisson SUBCOMMAND --config FILE [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from .assembly import assemble, star_norm
from .config import ConfigError, ExperimentConfig, load_config
from .fullsolve import newton_solve, neumann_defect
from .geometry import GeometryError, MeshError, build_mesh
from .green import GreenError, GreenTable, check_symmetry
from .profiles import check_admissible, solve_mu
from .reduction import energy_expansion, maximize_F

log = logging.getLogger("sinhpoisson")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


class Writer:
    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, payload: dict) -> Path:
        payload = {"config_fingerprint": self.cfg.fingerprint, "seed": self.cfg.seed, **payload}
        p = self.out / name
        p.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")
        return p

    def csv(self, name: str, header: list, rows) -> Path:
        p = self.out / name
        with p.open("w", newline="") as fh:
            fh.write(f"# config {self.cfg.fingerprint}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
        return p


def _mesh(cfg: ExperimentConfig):
    nr, nt = cfg.resolution
    return build_mesh(cfg.domain, nr, nt, grading=cfg.grading)


def _greens(mesh, cfg: ExperimentConfig, scfg) -> GreenTable:
    table = GreenTable(mesh, cfg.anisotropy, cfg.alpha)
    table.add("q", scfg.qv, scfg.q_location)
    for i in range(scfg.m):
        table.add(scfg.source_id(i + 1), scfg.xi[i], scfg.location(i + 1))
    return table


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def fit_slope(eps, values) -> float:
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])


# ---------------------------------------------------------------- subcommands


def cmd_green(cfg: ExperimentConfig, w: Writer, threads: int = 1) -> int:
    mesh = _mesh(cfg)
    scfg = cfg.spike_config(cfg.eps[0])
    table = _greens(mesh, cfg, scfg)
    ids = [scfg.source_id(i) for i in range(scfg.m + 1)]
    w.csv("robin.csv", ["source", "x", "y", "robin"],
          [(sid, *table[sid].y, table.robin(sid)) for sid in ids])
    sym = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            sym.append((ids[i], ids[j], check_symmetry(table, ids[i], ids[j])))
    w.csv("symmetry.csv", ["source_1", "source_2", "defect"], sym)
    # Robin value at q on coarsened copies of the mesh
    nr, nt = cfg.resolution
    conv = []
    for k in (2, 1, 0):
        r, t = nr >> k, nt >> k
        if r < 16 or t < 32:
            continue
        mk = build_mesh(cfg.domain, r, t, grading=cfg.grading)
        tk = GreenTable(mk, cfg.anisotropy, cfg.alpha)
        tk.add("q", scfg.qv, scfg.q_location)
        conv.append((r, t, tk.robin("q")))
    w.csv("convergence.csv", ["n_r", "n_theta", "robin_q"], conv)
    w.json("green.json", {
        "resolution": list(cfg.resolution),
        "robin": {sid: table.robin(sid) for sid in ids},
        "max_symmetry_defect": max((s[2] for s in sym), default=0.0),
        "robin_convergence": [list(c) for c in conv],
    })
    return EXIT_OK


def cmd_mu(cfg: ExperimentConfig, w: Writer, threads: int = 1) -> int:
    mesh = _mesh(cfg)

    def one(eps):
        scfg = cfg.spike_config(eps)
        mu = solve_mu(scfg, _greens(mesh, cfg, scfg))
        return eps, mu

    rows, summary = [], []
    for eps, mu in _map(one, cfg.eps, threads):
        rows.append((eps, *mu.mu, float(np.max(np.abs(mu.residuals))), str(bool(np.all(mu.bounds_ok)))))
        summary.append({"eps": eps, "mu": mu.mu, "max_residual": float(np.max(np.abs(mu.residuals))),
                        "bounds_ok": mu.bounds_ok})
    w.csv("mu.csv", ["eps"] + [f"mu{i}" for i in range(cfg.m + 1)] + ["max_residual", "bounds_ok"], rows)
    w.json("mu.json", {"runs": summary})
    return EXIT_OK


def cmd_assemble(cfg: ExperimentConfig, w: Writer, threads: int = 1) -> int:
    mesh = _mesh(cfg)
    params = cfg.norm_params()
    runs = []
    for eps in cfg.eps:
        scfg = cfg.spike_config(eps)
        greens = _greens(mesh, cfg, scfg)
        mu = solve_mu(scfg, greens)
        field_ = assemble(mesh, cfg.anisotropy, scfg, mu)
        rep = star_norm(field_.R, scfg, mu, params, mesh, exclude=field_.singular_nodes)
        tag = f"{eps:.6e}"
        np.savez(w.out / f"ansatz_{tag}.npz", nodes=mesh.nodes, U=field_.U, W=field_.W, R=field_.R)
        runs.append({"eps": eps, "mu": mu.mu, "R_star": rep.value, "R_star_at": rep.x,
                     "U_max": float(np.max(field_.U)), "U_min": float(np.min(field_.U))})
    w.json("assemble.json", {"runs": runs})
    return EXIT_OK


def cmd_residual_sweep(cfg: ExperimentConfig, w: Writer, threads: int = 1) -> int:
    if len(cfg.eps) < 3:
        raise ConfigError("need ≥3 epsilons")
    mesh = _mesh(cfg)
    params = cfg.norm_params()

    def one(eps):
        scfg = cfg.spike_config(eps)
        adm = check_admissible(scfg, cfg.domain)
        if not adm.admissible:
            return eps, None, None, adm
        greens = _greens(mesh, cfg, scfg)
        mu = solve_mu(scfg, greens)
        field_ = assemble(mesh, cfg.anisotropy, scfg, mu)
        return eps, star_norm(field_.R, scfg, mu, params, mesh, exclude=field_.singular_nodes), mu, adm

    rows, kept_e, kept_r, skipped = [], [], [], []
    for eps, rep, mu, adm in _map(one, sorted(cfg.eps, reverse=True), threads):
        if rep is None:
            skipped.append({"eps": eps, "margins": adm.margins})
            continue
        kept_e.append(eps)
        kept_r.append(rep.value)
        slope = fit_slope(kept_e, kept_r) if len(kept_e) >= 2 else math.nan
        rows.append((eps, rep.value, rep.x[0], rep.x[1], slope))
    w.csv("residual_sweep.csv", ["eps", "R_star", "x", "y", "slope_to_date"], rows)
    target = params.residual_exponent(cfg.alpha)
    slope = fit_slope(kept_e, kept_r) if len(kept_e) >= 2 else math.nan
    w.json("residual_sweep.json", {
        "slope": slope,
        "theoretical_exponent": target,
        "ratio": slope / target,
        "passes_0.8": bool(slope >= 0.8 * target),
        "skipped": skipped,
        "mode": cfg.mode,
    })
    if len(kept_e) < 2:
        raise NumericalFailure("fewer than two admissible epsilons")
    return EXIT_OK


def cmd_optimize(cfg: ExperimentConfig, w: Writer, threads: int = 1) -> int:
    mesh = _mesh(cfg)
    opts = {k: cfg.optimizer[k] for k in ("max_iter", "xatol", "frtol", "sigma_tilde") if k in cfg.optimizer}

    def one(eps):
        template = cfg.spike_config(eps)
        start = cfg.points
        return eps, maximize_F(mesh, cfg.anisotropy, template, start=start, **opts)

    results = _map(one, cfg.eps, threads)
    summary, fit_rows, bad = [], [], []
    for eps, tr in results:
        tag = f"{eps:.6e}"
        rows = [(k, *np.ravel(pts), F, mg) for k, (pts, F, mg) in enumerate(tr.iterates)]
        w.csv(f"trace_{tag}.csv", ["iter"] + [f"{c}{i + 1}" for i in range(cfg.m) for c in "xy"]
              + ["F", "min_margin"], rows)
        pts, F, _ = tr.best
        L = abs(math.log(eps))
        fit_rows.append((eps, L, F, F / L))
        binding = tr.binding() if tr.status == "hit-constraint" else []
        if tr.status == "hit-constraint":
            bad.append({"eps": eps, "binding": [k for k, v in tr.relative_margins().items() if v < 0.01]})
        summary.append({"eps": eps, "status": tr.status, "F": F, "points": pts,
                        "relative_margins": tr.relative_margins(), "binding": binding,
                        "n_evals": tr.n_evals})
    w.csv("F_vs_logeps.csv", ["eps", "abs_log_eps", "F", "F_over_abs_log_eps"], fit_rows)
    fit = None
    if len(fit_rows) >= 2:
        Ls = np.array([r[1] for r in fit_rows])
        Fs = np.array([r[2] for r in fit_rows])
        A, B = np.polyfit(Ls, Fs, 1)
        fit = {"slope": float(A), "intercept": float(B),
               "predicted_slope": 16 * math.pi * float(cfg.anisotropy(np.asarray(cfg.q))) * (1 + cfg.alpha + cfg.m)}
    w.json("optimize.json", {"runs": summary, "F_fit": fit, "hit_constraint": bad})
    if bad:
        for b in bad:
            click.echo(f"eps={b['eps']:g}: hit constraint {', '.join(b['binding'])}", err=True)
        raise NumericalFailure("optimizer run ended on the constraint boundary")
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, w: Writer, threads: int = 1) -> int:
    mesh = _mesh(cfg)
    newton_opts = {k: cfg.newton[k] for k in ("max_iter", "rtol") if k in cfg.newton}

    def one(eps):
        scfg = cfg.spike_config(eps)
        greens = _greens(mesh, cfg, scfg)
        mu = solve_mu(scfg, greens)
        field_ = assemble(mesh, cfg.anisotropy, scfg, mu)
        return eps, scfg, field_, newton_solve(field_, params=cfg.norm_params(), **newton_opts)

    runs, ok = [], 0
    for eps, scfg, field_, res in _map(one, cfg.eps, threads):
        tag = f"{eps:.6e}"
        entry = {"eps": eps, "status": res.status, "converged": res.converged, "iterations": res.iterations,
                 "residual_history": res.history, "phi_sup": res.phi_sup, "phi_budget": res.phi_budget,
                 "phi_within_budget": res.phi_within_budget, "metadata": res.metadata}
        if res.converged:
            ok += 1
            entry["neumann_defect"] = neumann_defect(field_, res.u)
            sp = res.spikes
            entry["spikes"] = sp.as_dict()
            entry["configured_signs"] = list(scfg.signs)
            w.csv(f"spikes_{tag}.csv", ["x", "y", "sign", "mass", "normalized_mass", "target"],
                  [(*sp.locations[i], int(sp.signs[i]), sp.masses[i], sp.normalized[i], sp.targets[i])
                   for i in range(len(sp.signs))])
        w.csv(f"solution_{tag}.csv", ["x", "y", "u"], [(x, y, u) for (x, y), u in zip(mesh.nodes, res.u)])
        np.savez(w.out / f"solution_{tag}.npz", nodes=mesh.nodes, triangles=mesh.triangles, u=res.u, phi=res.phi)
        runs.append(entry)
    w.json("solve.json", {"runs": runs})
    if ok == 0:
        raise NumericalFailure("no epsilon converged")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, w: Writer, threads: int = 1) -> int:
    """Collect the JSON summaries already in the output directory into one file."""
    parts = {}
    for p in sorted(w.out.glob("*.json")):
        if p.name == "report.json":
            continue
        data = json.loads(p.read_text())
        if data.get("config_fingerprint") != cfg.fingerprint:
            log.warning("%s was produced by a different config; skipped", p.name)
            continue
        parts[p.stem] = data
    w.json("report.json", {"parts": parts})
    for name in parts:
        click.echo(name)
    return EXIT_OK


COMMANDS = {
    "green": cmd_green,
    "mu": cmd_mu,
    "assemble": cmd_assemble,
    "residual-sweep": cmd_residual_sweep,
    "optimize": cmd_optimize,
    "solve": cmd_solve,
    "report": cmd_report,
}


def _resolution(ctx, param, value):
    if value is None:
        return None
    try:
        a, b = value.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise click.BadParameter("expected NRxNT, e.g. 64x128") from None


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("command", type=click.Choice(list(COMMANDS)))
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", default=None, help="output directory (default: the config's out)")
@click.option("--threads", default=1, show_default=True, type=click.IntRange(1))
@click.option("--resolution", default=None, callback=_resolution, help="mesh size as NRxNT")
@click.option("-v", "--verbose", is_flag=True)
def main(command, config_path, out_dir, threads, resolution, verbose):
    """Run one stage of the spike-solution pipeline."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(config_path, resolution)
        w = Writer(cfg, Path(out_dir or cfg.out))
        code = COMMANDS[command](cfg, w, threads)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (NumericalFailure, GreenError, MeshError, GeometryError, np.linalg.LinAlgError, RuntimeError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    sys.exit(code)


if __name__ == "__main__":
    main()
