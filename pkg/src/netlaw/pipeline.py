"""End-to-end discovery loop with file artifacts per stage.

Stages run in order: simulate, corrupt, preprocess, then per round train,
regress and evaluate.  Every stage writes its outputs to the run directory
and is recorded in ``status.json``; a resumed run reloads finished stages
from disk instead of recomputing them.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_config
from .decoupler import DecouplerModel, MlpSpec, TrainConfig, TrainLog, train_decoupler
from .dynamics import (DynamicsSpec, IntegrationError, Trajectory, add_state_noise, builtin_rhs,
                       integrate_ivp, predator_prey_topology, simulate_dataset)
from .metrics import (MetricsError, MetricsReport, coefficient_vector, l2_coeff_error, mre_mae, ned_score,
                      r2_score, support_scores)
from .preprocess import IntervalChoice, TrainingSet, build_training_pairs, full_interval, select_interval
from .symreg.expression import to_infix
from .symreg.library import FunctionLibrary
from .symreg.regress import (DiscoveredModel, SamplingConfig, SearchBackend, SparseBackend, assemble_rhs,
                             regress_decoupler, select_on_data, variable_names)
from .symreg.search import SearchConfig
from .topology import Topology, gen_ba, gen_er, load_adjacency_csv, load_edge_list, perturb_topology

log = logging.getLogger(__name__)

STAGES = ("simulate", "corrupt", "preprocess", "train", "regress", "evaluate")


class StageError(RuntimeError):
    """A stage failed; ``stage`` names it and earlier artifacts stay on disk."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


def stage_seed(root: int, stage: str, round_: int = 0) -> int:
    """Independent 32-bit seed for a (stage, round) pair derived from the root seed."""
    ss = np.random.SeedSequence(root, spawn_key=(STAGES.index(stage), round_))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------- topology files

def topology_to_json(top: Topology) -> dict:
    return {"n": top.n, "directed": top.directed, "adjacency": top.adjacency.tolist(),
            "node_type": top.node_type.tolist(), "edge_type": top.edge_type.tolist()}


def topology_from_json(obj: dict) -> Topology:
    return Topology(np.array(obj["adjacency"], dtype=float), bool(obj["directed"]),
                    np.array(obj["node_type"]), np.array(obj["edge_type"]))


def build_topology(cfg: PipelineConfig) -> Topology:
    tb = cfg.topology
    seed = stage_seed(cfg.seed, "simulate", 1) if tb.seed is None else tb.seed
    if tb.kind == "er":
        top = gen_er(tb.n, tb.p, seed)
    elif tb.kind == "ba":
        top = gen_ba(tb.n, tb.m, seed)
    elif tb.kind == "edge_list":
        top = load_edge_list(tb.path, weighted=tb.weighted, directed=tb.directed)
    elif tb.kind == "adjacency_csv":
        top = load_adjacency_csv(tb.path)
    else:
        return predator_prey_topology(tb.n - 1)
    if tb.node_types == "per_node":
        top = Topology(top.adjacency, top.directed, np.arange(top.n), top.edge_type)
    return top


# ---------------------------------------------------------------------------- run state

def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class _Run:
    def __init__(self, cfg: PipelineConfig, out: Path, resume: bool):
        self.cfg = cfg
        self.dir = out
        self.dir.mkdir(parents=True, exist_ok=True)
        cfg_path = self.dir / "config.json"
        if resume and cfg_path.exists():
            if json.loads(cfg_path.read_text()) != cfg.to_json():
                raise ConfigError(f"{out}: existing run used a different config; refusing to resume")
        _dump(cfg_path, cfg.to_json())
        status_path = self.dir / "status.json"
        self.status = json.loads(status_path.read_text()) if resume and status_path.exists() else {}
        self.status.setdefault("completed", [])
        self.status.pop("failed", None)
        self.resume = resume

    def done(self, key: str) -> bool:
        return self.resume and key in self.status["completed"]

    def mark(self, key: str) -> None:
        if key not in self.status["completed"]:
            self.status["completed"].append(key)
        self.save_status()

    def save_status(self) -> None:
        _dump(self.dir / "status.json", self.status)


def _stage(name: str):
    """Wrap stage failures in :class:`StageError` (config errors pass through)."""

    def deco(fn):
        def wrapped(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except (StageError, ConfigError):
                raise
            except Exception as exc:
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        return wrapped

    return deco


# ---------------------------------------------------------------------------- stages

@_stage("simulate")
def _simulate(run: _Run):
    cfg = run.cfg
    top_path, traj_path = run.dir / "topology.json", run.dir / "trajectory.csv"
    if run.done("simulate"):
        top = topology_from_json(json.loads(top_path.read_text()))
        return top, Trajectory.load_csv(traj_path, top)
    top = build_topology(cfg)
    row = cfg.dynamics.table_row()
    spec = DynamicsSpec(cfg.dynamics.model, dict(cfg.dynamics.params))
    traj = simulate_dataset(spec, top, row["init"], row, stage_seed(cfg.seed, "simulate"),
                            rtol=cfg.dynamics.rtol, atol=cfg.dynamics.atol)
    _dump(top_path, topology_to_json(top))
    traj.save_csv(traj_path)
    run.mark("simulate")
    return top, traj


@_stage("corrupt")
def _corrupt(run: _Run, top: Topology, traj: Trajectory):
    """Observed window (noisy if requested) and observed topology (links flipped if requested)."""
    cfg = run.cfg
    obs_path, otop_path = run.dir / "observed.csv", run.dir / "observed_topology.json"
    if run.done("corrupt"):
        otop = topology_from_json(json.loads(otop_path.read_text()))
        return otop, Trajectory.load_csv(obs_path, otop)
    seed = stage_seed(cfg.seed, "corrupt")
    obs = traj.window(cfg.dynamics.table_row()["T"])
    if cfg.corruption.snr_db is not None:
        obs = add_state_noise(obs, cfg.corruption.snr_db, seed)
    otop = perturb_topology(top, cfg.corruption.eta, seed + 1) if cfg.corruption.eta > 0 else top
    obs.save_csv(obs_path)
    _dump(otop_path, topology_to_json(otop))
    run.mark("corrupt")
    return otop, obs


@_stage("preprocess")
def _preprocess(run: _Run, otop: Topology, obs: Trajectory):
    cfg, pb = run.cfg, run.cfg.preprocess
    ipath, tpath = run.dir / "interval.json", run.dir / "training.csv"
    if run.done("preprocess"):
        return TrainingSet.load_csv(tpath)
    if pb.select == "anneal":
        T = float(obs.times[-1])
        choice = select_interval(obs, pb.s_steps, pb.lam, cooling=pb.cooling, iters=pb.iters,
                                 seed=stage_seed(cfg.seed, "preprocess"), t_min=pb.t_min_frac * T)
    else:
        choice = full_interval(obs, pb.s_steps)
    smooth = pb.smooth == "on" or (pb.smooth == "auto" and cfg.corruption.snr_db is not None)
    ts = build_training_pairs(obs, otop, choice, smooth=smooth, window=pb.window, polyorder=pb.polyorder,
                              val_ratio=pb.val_ratio, split_seed=stage_seed(cfg.seed, "preprocess", 1))
    info = {k: v for k, v in asdict(choice).items() if k != "history"}
    info["smooth"] = smooth
    _dump(ipath, info)
    ts.save_csv(tpath)
    run.mark("preprocess")
    return TrainingSet.load_csv(tpath)


@_stage("train")
def _train(run: _Run, rnd: int, otop: Topology, ts: TrainingSet):
    rdir = run.dir / f"round_{rnd}"
    rdir.mkdir(exist_ok=True)
    key = f"train:{rnd}"
    if run.done(key):
        lg = json.loads((rdir / "train_log.json").read_text())
        return DecouplerModel.load(rdir / "model.json"), TrainLog(**lg)
    db = run.cfg.decoupler
    opt = TrainConfig(lr=db.lr, weight_decay=db.weight_decay, epochs=db.epochs, patience=db.patience,
                      seed=stage_seed(run.cfg.seed, "train", rnd), lam=db.lam, loss_mode=db.loss_mode,
                      batch_size=db.batch_size, lr_schedule=db.lr_schedule)
    model, lg = train_decoupler(ts, otop, MlpSpec(hidden=db.hidden), opt)
    model.save(rdir / "model.json")
    _dump(rdir / "train_log.json", lg.to_json())
    run.mark(key)
    # reload so a resumed run sees exactly the same parameters
    return DecouplerModel.load(rdir / "model.json"), lg


def _backend(sb):
    if sb.backend == "sparse":
        lib = FunctionLibrary(sb.library) if sb.library is not None else FunctionLibrary.from_file(sb.library_file)
        return SparseBackend(lib, sb.threshold)
    s = sb.search
    return SearchBackend(SearchConfig(operators=tuple(s.operators), max_depth=s.max_depth,
                                      beam_width=s.beam_width, max_terms=s.max_terms, iters=s.iters,
                                      parsimony=s.parsimony, restarts=s.restarts, pool_size=s.pool_size))


@_stage("regress")
def _regress(run: _Run, rnd: int, model: DecouplerModel, otop: Topology, ts: TrainingSet):
    rdir = run.dir / f"round_{rnd}"
    key = f"regress:{rnd}"
    if run.done(key):
        return DiscoveredModel.load(rdir / "discovered.json")
    sb = run.cfg.symreg
    sampling = SamplingConfig(n_raw=sb.n_raw, k=sb.k, jitter=sb.jitter)
    backend = _backend(sb)
    dm = regress_decoupler(model, ts.states, otop, sampling, backend, stage_seed(run.cfg.seed, "regress", rnd))
    dm.save(rdir / "discovered_decoupler.json")
    if sb.refine == "terms":
        lib = backend.library if isinstance(backend, SparseBackend) else None
        par = sb.search.parsimony if sb.refine_parsimony is None else sb.refine_parsimony
        dm = select_on_data(dm, ts.states, ts.targets, otop, sb.refine_threshold, par, library=lib)
    dm.save(rdir / "discovered.json")
    run.mark(key)
    return DiscoveredModel.load(rdir / "discovered.json")


def _coefficients(cfg: PipelineConfig, dm: DiscoveredModel) -> dict:
    ev = cfg.evaluation
    if ev.library is None or ev.true_self is None or ev.true_inter is None:
        return {}
    lib = FunctionLibrary(ev.library)
    true_v, pred_v, other = [], [], 0.0
    for c in range(dm.d):
        for truth, expr in ((ev.true_self[c], dm.self_expr(0, c)), (ev.true_inter[c], dm.inter_expr(0, c))):
            xt, ot = coefficient_vector(FunctionLibrary((truth,)).terms[0], lib)
            if ot:
                raise MetricsError(f"true expression {truth!r} is not spanned by the evaluation library")
            xp, op = coefficient_vector(expr, lib)
            true_v.append(xt)
            pred_v.append(xp)
            other += op
    xt, xp = np.concatenate(true_v), np.concatenate(pred_v)
    recall, precision = support_scores(xt, xp, other, ev.support_tol)
    return {"recall": recall, "precision": precision, "l2_error": l2_coeff_error(xt, xp),
            "xi_true": xt.tolist(), "xi_pred": xp.tolist(), "other": other}


@_stage("evaluate")
def _evaluate(run: _Run, rnd: int, dm: DiscoveredModel, top: Topology, otop: Topology, traj: Trajectory,
              final: bool = False):
    """Integrate the discovered model on the observed topology from the true initial state."""
    cfg = run.cfg
    rdir = run.dir / f"round_{rnd}"
    key = f"evaluate:{rnd}"
    if run.done(key) and not final:
        return MetricsReport.load(rdir / "metrics.json"), None
    row = cfg.dynamics.table_row()
    t_end = cfg.evaluation.t_end or row["T_end"]
    truth = traj.window(t_end)
    dt = cfg.evaluation.dt_out or traj.dt
    stride = max(1, int(round(dt / traj.dt)))
    truth = Trajectory(truth.times[::stride], truth.states[::stride], truth.spec, top)
    rhs = assemble_rhs(dm, otop)
    extra = {"round": rnd, "t_end": float(truth.times[-1])}
    extra.update(_coefficients(cfg, dm))
    pred = None
    try:
        pred = integrate_ivp(rhs, otop, truth.states[0], float(truth.times[-1]), truth.dt,
                             rtol=cfg.dynamics.rtol, atol=cfg.dynamics.atol, method=cfg.dynamics.method)
    except IntegrationError as exc:
        extra["integration_failed"] = float(exc.t_fail)
    report = MetricsReport(extra=extra, l2_error=extra.pop("l2_error", None),
                           recall=extra.pop("recall", None), precision=extra.pop("precision", None))
    if pred is not None and pred.states.shape == truth.states.shape:
        X, Xh = truth.states, pred.states
        report.extra["mse"] = float(np.mean((X - Xh) ** 2))
        try:
            report.r2 = r2_score(X.transpose(1, 0, 2), Xh.transpose(1, 0, 2))
        except MetricsError as exc:
            report.extra["r2_error"] = str(exc)
        report.mre, report.mae, report.mre_excluded = mre_mae(X, Xh, return_excluded=True)
        V = np.stack([builtin_rhs(truth.spec, top, x) for x in X])
        Vh = np.stack([rhs(0.0, x) for x in Xh])
        try:
            report.ned = ned_score(X.transpose(1, 0, 2), Xh.transpose(1, 0, 2),
                                   V.transpose(1, 0, 2), Vh.transpose(1, 0, 2)).tolist()
        except MetricsError as exc:
            report.extra["ned_error"] = str(exc)
    report.save(rdir / "metrics.json")
    run.mark(key)
    return MetricsReport.load(rdir / "metrics.json"), (truth, pred)


def _write_prediction(path: Path, truth: Trajectory, pred: Trajectory | None) -> None:
    with open(path, "w") as fh:
        fh.write("t,node,dim,truth,pred\n")
        T, N, d = truth.states.shape
        for k in range(T):
            for i in range(N):
                for c in range(d):
                    p = repr(float(pred.states[k, i, c])) if pred is not None else ""
                    fh.write(f"{float(truth.times[k])!r},{i},{c},{float(truth.states[k, i, c])!r},{p}\n")


def _round_ok(cfg: PipelineConfig, report: MetricsReport, lg: TrainLog) -> bool:
    tb = cfg.termination
    if report.r2 is None or report.r2 < tb.r2_min:
        return False
    best_val = min(lg.val_loss) if lg.val_loss else math.inf
    return tb.val_loss_max is None or best_val <= tb.val_loss_max


# ---------------------------------------------------------------------------- driver

def run_pipeline(cfg: PipelineConfig | dict | str, out: str | Path | None = None, resume: bool = False,
                 until: str | None = None) -> Path:
    """Execute the loop and return the run directory.

    ``until`` stops after the named stage (round 0 for per-round stages).
    Rounds repeat training with fresh seeds until the termination block is
    satisfied or ``max_rounds`` is reached; the round with the highest R2 is
    promoted to the top-level ``discovered.json`` / ``metrics.json``.
    """
    cfg = cfg if isinstance(cfg, PipelineConfig) else load_config(cfg)
    if until is not None and until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}")
    run = _Run(cfg, Path(out or cfg.out), resume)
    try:
        top, traj = _simulate(run)
        if until == "simulate" or cfg.termination.max_rounds == 0:
            return run.dir
        otop, obs = _corrupt(run, top, traj)
        if until == "corrupt":
            return run.dir
        ts = _preprocess(run, otop, obs)
        if until == "preprocess":
            return run.dir
        best = None
        rounds = []
        for rnd in range(cfg.termination.max_rounds):
            model, lg = _train(run, rnd, otop, ts)
            if until == "train":
                return run.dir
            dm = _regress(run, rnd, model, otop, ts)
            if until == "regress":
                return run.dir
            report, pair = _evaluate(run, rnd, dm, top, otop, traj)
            rounds.append({"round": rnd, "r2": report.r2,
                           "best_val_loss": min(lg.val_loss) if lg.val_loss else None})
            score = -math.inf if report.r2 is None else report.r2
            if best is None or score > best[0]:
                best = (score, rnd, dm, pair)
            if _round_ok(cfg, report, lg):
                run.status["terminated"] = "thresholds met"
                break
        else:
            run.status["terminated"] = "max_rounds"
        _, rnd, dm, pair = best
        if pair is None:
            report, pair = _evaluate(run, rnd, dm, top, otop, traj, final=True)
        else:
            report = MetricsReport.load(run.dir / f"round_{rnd}" / "metrics.json")
        dm.save(run.dir / "discovered.json")
        report.save(run.dir / "metrics.json")
        report.save_ned_csv(run.dir / "ned.csv")
        _write_prediction(run.dir / "prediction.csv", pair[0], pair[1])
        run.status["rounds"] = rounds
        run.status["final_round"] = rnd
        run.mark("final")
        emit_report(run.dir)
    except StageError as exc:
        run.status["failed"] = {"stage": exc.stage, "error": str(exc)}
        run.save_status()
        raise
    return run.dir


# ---------------------------------------------------------------------------- report

_REPORT_FILES = ("config.json", "status.json", "topology.json", "trajectory.csv", "interval.json",
                 "training.csv", "discovered.json", "metrics.json", "ned.csv", "prediction.csv")


def _equations(dm: DiscoveredModel) -> list[str]:
    names = variable_names(dm.d)[0]
    lines = []
    for k in range(len(dm.self_exprs)):
        for c in range(dm.d):
            lhs = f"d{names[c]}/dt" + (f" [node type {k}]" if len(dm.self_exprs) > 1 else "")
            parts = [to_infix(dm.self_expr(k, c))]
            for e in range(len(dm.inter_exprs)):
                tag = "A_ij" if len(dm.inter_exprs) == 1 else f"A_ij[type {e}]"
                parts.append(f"Σ_j {tag} ({to_infix(dm.inter_expr(e, c))})")
            lines.append(f"{lhs} = " + " + ".join(parts))
    return lines


def emit_report(run_dir) -> Path:
    """Write ``report.json`` and ``report.txt`` summarising whatever the run directory holds.

    Missing artifacts are listed rather than treated as errors; the output
    depends only on the directory contents, so repeated calls are byte-identical.
    """
    rd = Path(run_dir)
    rd.mkdir(parents=True, exist_ok=True)
    missing = [f for f in _REPORT_FILES if not (rd / f).exists()]
    report = {"run_dir": rd.name, "missing": missing, "equations": [], "metrics": {}, "status": {},
              "bifurcation": {}}
    if (rd / "status.json").exists():
        report["status"] = json.loads((rd / "status.json").read_text())
    if (rd / "discovered.json").exists():
        report["equations"] = _equations(DiscoveredModel.load(rd / "discovered.json"))
    if (rd / "metrics.json").exists():
        report["metrics"] = json.loads((rd / "metrics.json").read_text())
    if (rd / "bifurcation.json").exists():
        report["bifurcation"] = json.loads((rd / "bifurcation.json").read_text())
    _dump(rd / "report.json", report)
    m = report["metrics"]
    lines = [f"run: {rd.name}", "", "equations:"]
    lines += [f"  {eq}" for eq in report["equations"]] or ["  (none)"]
    lines += ["", "metrics:"]
    shown = [(k, m.get(k)) for k in ("r2", "mre", "mae", "l2_error", "recall", "precision")]
    lines += [f"  {k:<10} {v:.6g}" if isinstance(v, (int, float)) else f"  {k:<10} -" for k, v in shown]
    if m.get("ned"):
        lines.append(f"  {'ned_mean':<10} {float(np.mean(m['ned'])):.6g}")
    for label, counts in report["bifurcation"].get("cluster_counts", {}).items():
        lines.append(f"  clusters[{label}] " + ", ".join(f"c={c}: {n}" for c, n in counts.items()))
    if report["status"].get("failed"):
        f = report["status"]["failed"]
        lines += ["", f"failed stage: {f['stage']}: {f['error']}"]
    lines += ["", "missing artifacts:"] + ([f"  {f}" for f in missing] or ["  (none)"])
    (rd / "report.txt").write_text("\n".join(lines) + "\n")
    return rd / "report.json"
