"""File-based pipeline stages.

Each ``run_*`` function reads its inputs from the output directory (or the
configured input files), writes its artifacts there and records them in
``manifest.txt``. Nothing is passed between stages in memory, so any stage
can be rerun on its own.
"""
from __future__ import annotations

import hashlib
import shutil
import warnings
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from . import clustering as cl
from . import correlation as corr
from . import fixedpoint as fp
from . import ingest
from . import langevin as lv
from . import synth
from .config import PipelineConfig, id_list, interval, optional_float, optional_int
from .errors import (
    AllWindowsFailedError,
    ConfigurationError,
    EstimationError,
    PipelineOrderError,
)
from .ingest import FLOAT_FMT

STAGES = ("synth", "ingest", "correlate", "cluster", "potentials", "merge", "fixedpoint", "report")
MANIFEST = "manifest.txt"
LOCK = ".pipeline.lock"

# which stage writes which artifact, for "run X first" messages
PRODUCER = {
    "data/prices.csv": "synth",
    "data/sectors.csv": "synth",
    "normalized_returns.csv": "ingest",
    "sectors.csv": "ingest",
    "states.csv": "correlate",
    "model.json": "cluster",
    "potentials": "potentials",
    "merged_model.json": "merge",
    "fixed_point.csv": "fixedpoint",
    "delta.csv": "fixedpoint",
}


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.out)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def require(self, stage, *names):
        for name in names:
            if not self.path(name).exists():
                producer = PRODUCER.get(name, "an earlier stage")
                raise PipelineOrderError(
                    f"{stage}: {self.path(name)} not found; run `{producer}` first"
                )

    def label(self, path) -> str:
        """Path as recorded in the manifest: relative to the output directory if inside it."""
        path = Path(path)
        try:
            return path.resolve().relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(path)

    def record(self, stage, inputs, outputs):
        """Replace ``stage``'s section of the manifest."""
        sections = read_manifest(self.path(MANIFEST))
        lines = [f"version {__version__}", f"config_hash {self.cfg.digest()}"]
        for p in inputs:
            lines.append(f"input {self.label(p)} {sha256(p)}")
        for p in sorted(outputs, key=lambda q: self.label(q)):
            lines.append(f"output {self.label(p)} {sha256(p)}")
        sections[stage] = lines
        with self.path(MANIFEST).open("w", encoding="utf-8") as fh:
            for name in STAGES:
                if name in sections:
                    fh.write(f"[{name}]\n")
                    fh.write("".join(f"{line}\n" for line in sections[name]))


def read_manifest(path) -> dict:
    sections, current = {}, None
    path = Path(path)
    if not path.exists():
        return sections
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is not None and line:
            sections[current].append(line)
    return sections


def _price_inputs(cfg: PipelineConfig, ws: Workspace):
    out = []
    for key in ("prices", "sectors"):
        given = getattr(cfg, key)
        if given:
            path = Path(given)
            if not path.exists():
                raise FileNotFoundError(2, "No such file or directory", str(path))
        else:
            path = ws.path("data", f"{key}.csv")
            if not path.exists():
                raise PipelineOrderError(
                    f"ingest: no `{key}` configured and {path} not found; run `synth` first"
                )
        out.append(path)
    return out


def _estimation_config(cfg: PipelineConfig) -> lv.EstimationConfig:
    return lv.EstimationConfig(
        n_grid=cfg.n_grid,
        bandwidth=optional_float(cfg, "bandwidth"),
        tau_policy=cfg.tau_policy,
        count_min=cfg.count_min,
        prominence=cfg.prominence,
    )


def run_synth(cfg: PipelineConfig, ws: Workspace) -> list:
    if not cfg.scenario:
        raise ConfigurationError("synth: set `scenario` to a bundled name or a JSON file")
    n_days = cfg.n_days or None
    if cfg.scenario in synth.BUNDLED:
        scenario = synth.bundled(cfg.scenario, cfg.seed, n_days)
        inputs = []
    else:
        path = Path(cfg.scenario)
        if not path.exists():
            raise FileNotFoundError(2, "No such file or directory", str(path))
        scenario = synth.load_scenario(path, cfg.seed)
        inputs = [path]
    data = synth.generate(scenario)
    ws.path("data").mkdir(parents=True, exist_ok=True)
    outputs = [ws.path("data", n) for n in ("prices.csv", "sectors.csv", "labels.csv")]
    ingest.write_prices(outputs[0], data.prices)
    ingest.write_sectors(outputs[1], data.sectors)
    synth.write_labels(outputs[2], data)
    ws.record("synth", inputs, outputs)
    n_reg = len(scenario.regimes)
    return [f"synth: {len(data.prices.tickers)} stocks, {len(data.prices)} days, {n_reg} regimes"]


def run_ingest(cfg: PipelineConfig, ws: Workspace) -> list:
    prices_path, sectors_path = _price_inputs(cfg, ws)
    panel = ingest.load_prices(prices_path)
    sectors = ingest.load_sectors(sectors_path).restrict(panel.tickers)
    returns = ingest.compute_returns(panel, cfg.horizon)
    normalized = ingest.local_normalize(returns, cfg.norm_window)
    outputs = [ws.path("returns.csv"), ws.path("normalized_returns.csv"), ws.path("sectors.csv")]
    ingest.write_returns(outputs[0], returns)
    ingest.write_returns(outputs[1], normalized)
    ingest.write_sectors(outputs[2], sectors)
    ws.record("ingest", [prices_path, sectors_path], outputs)
    lines = [f"ingest: {len(panel.tickers)} tickers kept, {len(panel.dropped)} dropped, "
             f"{len(normalized)} normalized returns"]
    if panel.dropped:
        lines.append("ingest: dropped " + ", ".join(panel.dropped))
    return lines


def run_correlate(cfg: PipelineConfig, ws: Workspace) -> list:
    ws.require("correlate", "normalized_returns.csv", "sectors.csv")
    inputs = [ws.path("normalized_returns.csv"), ws.path("sectors.csv")]
    panel = ingest.read_returns(inputs[0])
    sectors = ingest.load_sectors(inputs[1])
    states = corr.state_points(panel, sectors, cfg.corr_window, cfg.corr_step)
    corr.write_states(ws.path("states.csv"), states)
    ws.record("correlate", inputs, [ws.path("states.csv")])
    return [f"correlate: {len(states)} state points in R^{states.dim}"]


def write_distances(path, states, model):
    cols = [cl.center_distance_series(states, model, i).values for i in model.leaves]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("t," + ",".join(f"X_{i}" for i in model.leaves) + "\n")
        for k, t in enumerate(states.t_end):
            fh.write(f"{int(t)}," + ",".join(FLOAT_FMT % c[k] for c in cols) + "\n")


def _write_model(ws, prefix, states, model):
    names = [f"{prefix}model.json", f"{prefix}timeline.csv", f"{prefix}centers.csv",
             f"{prefix}tree.txt"]
    cl.save_model(ws.path(names[0]), model)
    cl.write_timeline(ws.path(names[1]), cl.StateTimeline(states.t_end, model.labels))
    cl.write_centers(ws.path(names[2]), model)
    ws.path(names[3]).write_text(cl.tree_text(model), encoding="utf-8")
    return [ws.path(n) for n in names]


def run_cluster(cfg: PipelineConfig, ws: Workspace) -> list:
    ws.require("cluster", "states.csv")
    states = corr.read_states(ws.path("states.csv"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = cl.bisecting_kmeans(states, cfg.threshold, seed=cfg.seed, n_restarts=cfg.restarts)
    outputs = _write_model(ws, "", states, model)
    write_distances(ws.path("distances.csv"), states, model)
    outputs.append(ws.path("distances.csv"))
    ws.record("cluster", [ws.path("states.csv")], outputs)
    lines = [f"cluster: {model.n_clusters} clusters at threshold {cfg.threshold:g} "
             f"(leaves {', '.join(map(str, model.leaves))})"]
    lines += [f"cluster: warning: {w.message}" for w in caught]
    return lines


def _live_ids(model, ids, key):
    for i in ids:
        if i not in model.leaves:
            raise ConfigurationError(f"{key}: {i} is not a live cluster (live: {list(model.leaves)})")
    return ids


def write_potential(path, curve: lv.PotentialCurve):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("x,D1,D2,Phi,count\n")
        for row in zip(curve.grid, curve.d1, curve.d2, curve.phi, curve.counts):
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def read_potential(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {"x": data[:, 0], "D1": data[:, 1], "D2": data[:, 2], "Phi": data[:, 3],
            "count": data[:, 4]}


def potential_references(ws) -> list:
    return sorted(int(p.stem.split("_r")[1]) for p in ws.path("potentials").glob("windows_r*.csv"))


def read_windows(path):
    """Rows of a windows status file: (k, t1, t2, status, message)."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        k, t1, t2, status, n_min, message = line.split(",", 5)
        rows.append((int(k), int(t1), int(t2), status, message))
    return rows


def read_minima(path) -> dict:
    """(t1, t2) -> list of Minimum."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        t1, t2, x, phi, prom = line.split(",")
        out.setdefault((int(t1), int(t2)), []).append(lv.Minimum(float(x), float(phi), float(prom)))
    return out


def run_potentials(cfg: PipelineConfig, ws: Workspace) -> list:
    ws.require("potentials", "states.csv", "model.json")
    states = corr.read_states(ws.path("states.csv"))
    model = cl.load_model(ws.path("model.json"))
    refs = id_list(cfg, "references")
    refs = model.leaves if refs is None else _live_ids(model, refs, "references")
    est = _estimation_config(cfg)
    base = ws.path("potentials")
    if base.exists():
        shutil.rmtree(base)
    base.mkdir(parents=True)
    outputs, lines = [], []
    n_ok = 0
    for ref in refs:
        series = cl.center_distance_series(states, model, ref)
        curves = lv.sliding_potentials(series, cfg.pot_window, cfg.pot_shift, est)
        (base / f"r{ref}").mkdir()
        status = base / f"windows_r{ref}.csv"
        minima = base / f"minima_r{ref}.csv"
        with status.open("w", encoding="utf-8") as fs, minima.open("w", encoding="utf-8") as fm:
            fs.write("k,t1,t2,status,n_minima,message\n")
            fm.write("t1,t2,x_star,phi,prominence\n")
            for k, c in enumerate(curves):
                t1, t2 = c.window
                if c.failed:
                    msg = c.message.replace(",", ";").replace("\n", " ")
                    fs.write(f"{k},{t1},{t2},failed,0,{msg}\n")
                    continue
                n_ok += 1
                fs.write(f"{k},{t1},{t2},ok,{len(c.minima)},\n")
                for m in c.minima:
                    fm.write(f"{t1},{t2},{FLOAT_FMT % m.x},{FLOAT_FMT % m.phi},"
                             f"{FLOAT_FMT % m.prominence}\n")
                path = base / f"r{ref}" / f"w{k:04d}.csv"
                write_potential(path, c)
                outputs.append(path)
                if cfg.window_figures:
                    from .report import window_figure

                    fig_path = base / f"r{ref}" / f"w{k:04d}.svg"
                    window_figure(fig_path, c, model, ref)
                    outputs.append(fig_path)
        outputs += [status, minima]
        failed = sum(c.failed for c in curves)
        lines.append(f"potentials: reference {ref}: {len(curves)} windows, {failed} failed")
    ws.record("potentials", [ws.path("states.csv"), ws.path("model.json")], outputs)
    if n_ok == 0:
        raise AllWindowsFailedError("potentials: every window failed to estimate")
    return lines


def collect_proposals(model, ws, tol, min_support):
    """Run propose_merges on every window and aggregate by member set.

    Returns (accepted, tallies): ``accepted`` holds one proposal per
    disjoint member set, chosen by best support, then by the number of
    windows proposing it; ``tallies`` maps each member set to
    (windows, best support).
    """
    refs = potential_references(ws)
    per_ref = {r: read_minima(ws.path("potentials", f"minima_r{r}.csv")) for r in refs}
    windows = {}
    for r in refs:
        for k, t1, t2, status, _ in read_windows(ws.path("potentials", f"windows_r{r}.csv")):
            if status == "ok":
                windows.setdefault((k, t1, t2), []).append(r)
    best, count = {}, Counter()
    for (k, t1, t2), rs in sorted(windows.items()):
        if len(rs) < min_support:
            continue
        pots = {r: per_ref[r].get((t1, t2), []) for r in rs if r in model.leaves}
        for p in cl.propose_merges(model, pots, tol, min_support):
            count[p.members] += 1
            if p.members not in best or p.support > best[p.members].support:
                best[p.members] = p
    order = sorted(best, key=lambda g: (-best[g].support, -count[g], g))
    accepted, used = [], set()
    for g in order:
        if used.isdisjoint(g):
            accepted.append(best[g])
            used.update(g)
    tallies = {g: (count[g], best[g].support) for g in order}
    return accepted, tallies


def run_merge(cfg: PipelineConfig, ws: Workspace) -> list:
    ws.require("merge", "states.csv", "model.json", "potentials")
    states = corr.read_states(ws.path("states.csv"))
    model = cl.load_model(ws.path("model.json"))
    tol = optional_float(cfg, "merge_tol")
    tol = cfg.threshold if tol is None else tol
    accepted, tallies = collect_proposals(model, ws, tol, cfg.merge_support)
    cl.write_proposals(ws.path("proposals.csv"), accepted)
    with ws.path("proposal_windows.csv").open("w", encoding="utf-8") as fh:
        fh.write("member_ids,windows,max_support\n")
        for g, (n, s) in tallies.items():
            fh.write(f"{';'.join(map(str, g))},{n},{s}\n")
    merged = model
    if cfg.apply_merges:
        for p in accepted:
            merged = cl.merge_clusters(merged, p.members, states)
    outputs = [ws.path("proposals.csv"), ws.path("proposal_windows.csv")]
    outputs += _write_model(ws, "merged_", states, merged)
    inputs = [ws.path("states.csv"), ws.path("model.json")]
    inputs += sorted(ws.path("potentials").glob("minima_r*.csv"))
    ws.record("merge", inputs, outputs)
    lines = [f"merge: {len(accepted)} proposal(s)"]
    for p in accepted:
        lines.append(f"merge: {list(p.members)} supported by references {list(p.references)}")
    if cfg.apply_merges and merged.merges:
        lines.append(f"merge: {merged.n_clusters} states after merging")
    return lines


def _target(cfg, model):
    target = optional_int(cfg, "fp_target")
    if target is not None:
        return _live_ids(model, (target,), "fp_target")[0]
    if model.merges:
        return model.merges[-1].new_id
    counts = Counter(model.labels.tolist())
    return min(model.leaves, key=lambda i: (-counts[i], i))


def _interval_positions(cfg, states, labels, target):
    given = interval(cfg)
    if given is not None:
        pos = np.flatnonzero((states.t_end >= given[0]) & (states.t_end <= given[1]))
        if len(pos) == 0:
            raise ConfigurationError(f"fp_interval {given} contains no state points")
        return pos
    w, s = cfg.pot_window, cfg.pot_shift
    if len(states) < w:
        raise ConfigurationError(f"series of {len(states)} points is shorter than pot_window {w}")
    starts = np.arange(0, len(states) - w + 1, s)
    hits = np.concatenate([[0], np.cumsum(labels == target)])
    occupancy = hits[starts + w] - hits[starts]
    a = int(starts[int(np.argmax(occupancy))])
    return np.arange(a, a + w)


def run_fixedpoint(cfg: PipelineConfig, ws: Workspace) -> list:
    ws.require("fixedpoint", "states.csv", "merged_model.json")
    states = corr.read_states(ws.path("states.csv"))
    model = cl.load_model(ws.path("merged_model.json"))
    target = _target(cfg, model)
    pos = _interval_positions(cfg, states, model.labels, target)
    points = states.coords[pos]
    t1, t2 = int(states.t_end[pos[0]]), int(states.t_end[pos[-1]])
    refs = id_list(cfg, "fp_references")
    if refs is None:
        present = Counter(model.labels[pos].tolist())
        others = sorted((i for i in model.leaves if i != target), key=lambda i: (present[i], i))
        refs = tuple(others[:2])
    else:
        refs = _live_ids(model, refs, "fp_references")
    if not refs:
        raise ConfigurationError("fixedpoint: no reference cluster besides the target")

    est = _estimation_config(cfg)
    radii, lines = {}, []
    for r in refs:
        x = np.linalg.norm(points - model.center(r), axis=1)
        try:
            deepest = lv.potential(x, est, (t1, t2)).deepest()
        except EstimationError as exc:
            lines.append(f"fixedpoint: reference {r}: potential failed ({exc})")
            continue
        if deepest is None:
            lines.append(f"fixedpoint: reference {r}: potential has no minimum")
            continue
        radii[r] = deepest.x
    if not radii:
        raise EstimationError("fixedpoint: no reference produced a potential minimum")

    solver = {"n_starts": cfg.fp_starts, "seed": cfg.seed}
    problems = [(model.center(r), radii[r]) for r in radii]
    results = []
    for mu, radius in problems:
        problem = fp.FixedPointProblem(points, mu, radius, cfg.fp_tol, cfg.fp_max_iter)
        results.append(fp.constrained_fixed_point(problem, **solver))
    tol_match = optional_float(cfg, "consistency_tol")
    if tol_match is None:
        c = model.centers
        gaps = [np.linalg.norm(c[a] - c[b]) for a in range(len(c)) for b in range(a + 1, len(c))]
        tol_match = 0.1 * min(gaps) if gaps else np.inf

    d = states.dim
    with ws.path("fixed_point.csv").open("w", encoding="utf-8") as fh:
        fh.write("reference_id,radius,objective,residual,iterations,converged,unique,"
                 "tangential_gradient,target_id,t1,t2," + ",".join(f"x{i}" for i in range(d)) + "\n")
        for r, res in zip(radii, results):
            fh.write(f"{r},{FLOAT_FMT % radii[r]},{FLOAT_FMT % res.objective},"
                     f"{FLOAT_FMT % res.residual},{res.iterations},{int(res.converged)},"
                     f"{int(res.unique)},{FLOAT_FMT % res.tangential_gradient},{target},{t1},{t2},"
                     + ",".join(FLOAT_FMT % v for v in res.point) + "\n")
    ids = list(radii)
    with ws.path("consistency.csv").open("w", encoding="utf-8") as fh:
        fh.write("reference_a,reference_b,distance,tol,consistent\n")
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                dist = float(np.linalg.norm(results[a].point - results[b].point))
                fh.write(f"{ids[a]},{ids[b]},{FLOAT_FMT % dist},{FLOAT_FMT % tol_match},"
                         f"{int(dist < tol_match)}\n")
    cbar = corr.interval_mean(states, (int(pos[0]), int(pos[-1]))).mean
    delta = fp.delta_series(states, results[0].point, cbar)
    with ws.path("delta.csv").open("w", encoding="utf-8") as fh:
        fh.write("t,delta,state_id\n")
        for t, v, s in zip(delta.times, delta.values, model.labels):
            fh.write(f"{int(t)},{FLOAT_FMT % v},{int(s)}\n")
    outputs = [ws.path(n) for n in ("fixed_point.csv", "consistency.csv", "delta.csv")]
    ws.record("fixedpoint", [ws.path("states.csv"), ws.path("merged_model.json")], outputs)
    lines.append(f"fixedpoint: target {target}, interval [{t1}, {t2}], references {ids}")
    for r, res in zip(ids, results):
        lines.append(f"fixedpoint: reference {r}: X0={radii[r]:.4f} objective={res.objective:.6g} "
                     f"residual={res.residual:.2e} unique={res.unique}")
    return lines


def run_report(cfg: PipelineConfig, ws: Workspace) -> list:
    from . import report

    ws.require("report", "states.csv", "model.json", "merged_model.json", "potentials",
               "fixed_point.csv", "delta.csv")
    outputs = report.write_figures(ws)
    inputs = [ws.path(n) for n in ("states.csv", "model.json", "merged_model.json",
                                   "fixed_point.csv", "delta.csv")]
    ws.record("report", inputs, outputs)
    return [f"report: {len(outputs)} figures in {ws.path('figures')}"]


RUNNERS = {
    "synth": run_synth,
    "ingest": run_ingest,
    "correlate": run_correlate,
    "cluster": run_cluster,
    "potentials": run_potentials,
    "merge": run_merge,
    "fixedpoint": run_fixedpoint,
    "report": run_report,
}


def run_all(cfg: PipelineConfig, ws: Workspace) -> list:
    lines = []
    for stage in STAGES:
        if stage == "synth" and not cfg.scenario:
            continue
        lines += RUNNERS[stage](cfg, ws)
    return lines
