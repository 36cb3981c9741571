"""Declarative run configuration with strict validation.

Every block is a dataclass; unknown keys and wrongly typed values are
rejected before any computation starts.
"""
from __future__ import annotations

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import DEFAULT_PARAMS, STATE_DIM, SIM_SETTINGS


class ConfigError(ValueError):
    pass


def _check_type(value, hint, where: str):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        opts = typing.get_args(hint)
        if value is None and type(None) in opts:
            return None
        errors = []
        for opt in opts:
            if opt is type(None):
                continue
            try:
                return _check_type(value, opt, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{where}: invalid value {value!r}")
    if hint is typing.Any:
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected string, got {value!r}")
        return value
    if origin in (list, tuple) or hint in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected list, got {value!r}")
        args = typing.get_args(hint)
        if args and args[-1] is not Ellipsis and origin is tuple and len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items")
        inner = args[0] if args else typing.Any
        return tuple(_check_type(v, inner, f"{where}[{k}]") for k, v in enumerate(value))
    if origin is dict or hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected object, got {value!r}")
        return dict(value)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, where)
    raise ConfigError(f"{where}: unsupported type {hint}")


def _build(cls, data, where: str):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    kwargs = {k: _check_type(v, hints[k], f"{where}.{k}") for k, v in data.items()}
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    check = getattr(obj, "validate", None)
    if check is not None:
        check(where)
    return obj


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class TopologyBlock:
    kind: str = "er"                 # er | ba | edge_list | adjacency_csv | predator_prey
    n: int = 30
    p: float = 0.15
    m: int = 2
    path: str | None = None
    weighted: bool = False
    directed: bool = False
    node_types: str = "single"       # single | per_node
    seed: int | None = None

    def validate(self, where):
        _require(self.kind in ("er", "ba", "edge_list", "adjacency_csv", "predator_prey"),
                 f"{where}.kind: unknown topology kind {self.kind!r}")
        _require(self.node_types in ("single", "per_node"), f"{where}.node_types: single or per_node")
        if self.kind in ("edge_list", "adjacency_csv"):
            _require(self.path is not None, f"{where}.path: required for kind {self.kind}")
            _require(Path(self.path).exists(), f"{where}.path: file not found: {self.path}")
        else:
            _require(self.n >= 2, f"{where}.n: must be >= 2")
        if self.kind == "er":
            _require(0.0 <= self.p <= 1.0, f"{where}.p: must lie in [0, 1]")
        if self.kind == "ba":
            _require(1 <= self.m < self.n, f"{where}.m: need 1 <= m < n")


@dataclass(frozen=True)
class InitBlock:
    kind: str = "uniform"            # uniform | gaussian | constant
    low: float = 0.0
    high: float = 1.0
    mean: float = 0.0
    std: float = 1.0
    value: float = 0.0

    def validate(self, where):
        _require(self.kind in ("uniform", "gaussian", "constant"), f"{where}.kind: uniform, gaussian or constant")
        _require(self.high >= self.low and self.std >= 0, f"{where}: invalid bounds")

    def as_tuple(self):
        if self.kind == "uniform":
            return ("uniform", self.low, self.high)
        if self.kind == "gaussian":
            return ("gaussian", self.mean, self.std)
        return ("constant", self.value)


@dataclass(frozen=True)
class DynamicsBlock:
    model: str = "LV"
    params: dict = field(default_factory=dict)
    init: InitBlock | None = None
    dt: float | None = None
    T: float | None = None
    T_end: float | None = None
    rtol: float = 1e-12
    atol: float = 1e-12
    method: str = "RK45"

    def validate(self, where):
        _require(self.model in STATE_DIM, f"{where}.model: unknown model {self.model!r}; "
                                          f"choose from {sorted(STATE_DIM)}")
        unknown = set(self.params) - set(DEFAULT_PARAMS.get(self.model, {}))
        _require(not unknown, f"{where}.params: unknown parameter(s) {sorted(unknown)} for {self.model}")
        for k, v in self.params.items():
            _require(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
                     f"{where}.params.{k}: must be a finite number")
        row = self.table_row()
        _require(row["dt"] > 0 and row["T"] >= row["dt"] and row["T_end"] >= row["T"],
                 f"{where}: need 0 < dt <= T <= T_end")
        _require(self.rtol > 0 and self.atol > 0, f"{where}: tolerances must be positive")
        _require(self.method in ("RK45", "DOP853", "RK23", "Radau", "BDF", "LSODA"), f"{where}.method: unknown")

    def table_row(self) -> dict:
        init, dt, T, T_end = SIM_SETTINGS.get(self.model, (("uniform", 0.0, 1.0), 0.01, 1.0, 5.0))
        return {"init": self.init.as_tuple() if self.init else init,
                "dt": self.dt or dt, "T": self.T or T, "T_end": self.T_end or T_end}


@dataclass(frozen=True)
class CorruptionBlock:
    snr_db: float | None = None
    eta: float = 0.0

    def validate(self, where):
        _require(0.0 <= self.eta <= 1.0, f"{where}.eta: must lie in [0, 1]")


@dataclass(frozen=True)
class PreprocessBlock:
    s_steps: int = 100
    select: str = "anneal"           # anneal | full
    lam: float = 1.0
    t_min_frac: float = 0.5
    iters: int = 200
    cooling: float = 0.95
    smooth: str = "auto"             # auto | on | off
    window: int = 7
    polyorder: int = 3
    val_ratio: float = 0.2

    def validate(self, where):
        _require(self.select in ("anneal", "full"), f"{where}.select: anneal or full")
        _require(self.smooth in ("auto", "on", "off"), f"{where}.smooth: auto, on or off")
        _require(self.s_steps >= 4, f"{where}.s_steps: must be >= 4")
        _require(self.lam >= 0, f"{where}.lam: must be >= 0")
        _require(0.0 <= self.t_min_frac <= 1.0, f"{where}.t_min_frac: must lie in [0, 1]")
        _require(0.0 <= self.val_ratio < 1.0, f"{where}.val_ratio: must lie in [0, 1)")
        _require(self.window % 2 == 1 and self.polyorder < self.window, f"{where}: window odd and > polyorder")


@dataclass(frozen=True)
class DecouplerBlock:
    hidden: int = 50
    lr: float = 5e-3
    weight_decay: float = 1e-3
    epochs: int = 1000
    patience: int = 50
    lam: float = 0.1
    loss_mode: str = "variance"
    batch_size: int | None = None
    lr_schedule: str = "cosine"

    def validate(self, where):
        _require(self.hidden >= 1 and self.epochs >= 0 and self.patience >= 1, f"{where}: invalid sizes")
        _require(self.lr > 0 and self.weight_decay >= 0 and self.lam >= 0, f"{where}: invalid optimiser values")
        _require(self.loss_mode in ("variance", "literal"), f"{where}.loss_mode: variance or literal")
        _require(self.lr_schedule in ("cosine", "constant"), f"{where}.lr_schedule: cosine or constant")
        _require(self.batch_size is None or self.batch_size >= 1, f"{where}.batch_size: >= 1")


@dataclass(frozen=True)
class SearchBlock:
    operators: tuple[str, ...] = ("+", "-", "*", "/", "pow", "exp", "sin", "cos")
    max_depth: int = 3
    beam_width: int = 8
    max_terms: int = 4
    iters: int = 4
    parsimony: float = 1e-3
    restarts: int = 8
    pool_size: int = 6000

    def validate(self, where):
        from .symreg.expression import ARITY
        bad = [op for op in self.operators if op not in ARITY]
        _require(not bad, f"{where}.operators: unknown operator(s) {bad}")
        _require(self.max_depth >= 1 and self.beam_width >= 1 and self.max_terms >= 1, f"{where}: invalid sizes")


@dataclass(frozen=True)
class SymregBlock:
    backend: str = "search"          # search | sparse
    library: tuple[str, ...] | None = None
    library_file: str | None = None
    threshold: float = 0.05
    n_raw: int = 10000
    k: int = 512
    jitter: float = 0.01
    search: SearchBlock = field(default_factory=SearchBlock)
    refine: str = "none"             # none | terms
    refine_threshold: float = 0.05
    refine_parsimony: float | None = None    # None: use search.parsimony

    def validate(self, where):
        _require(self.backend in ("search", "sparse"), f"{where}.backend: search or sparse")
        _require(self.refine_parsimony is None or self.refine_parsimony >= 0, f"{where}.refine_parsimony: must be >= 0")
        _require(self.refine in ("none", "terms"), f"{where}.refine: none or terms")
        if self.library_file is not None:
            _require(Path(self.library_file).exists(), f"{where}.library_file: file not found: {self.library_file}")
        if self.backend == "sparse":
            _require(self.library is not None or self.library_file is not None,
                     f"{where}: sparse backend needs library or library_file")
        if self.library is not None:
            from .symreg.expression import ExpressionError, parse_infix
            for k, term in enumerate(self.library):
                try:
                    parse_infix(term)
                except ExpressionError as exc:
                    raise ConfigError(f"{where}.library[{k}]: {exc}") from None
        _require(self.k >= 1 and self.n_raw >= self.k, f"{where}: need 1 <= k <= n_raw")


@dataclass(frozen=True)
class EvaluationBlock:
    t_end: float | None = None
    dt_out: float | None = None
    library: tuple[str, ...] | None = None
    true_self: tuple[str, ...] | None = None
    true_inter: tuple[str, ...] | None = None
    support_tol: float = 0.0


@dataclass(frozen=True)
class TerminationBlock:
    max_rounds: int = 3
    val_loss_max: float | None = None
    r2_min: float = 0.99

    def validate(self, where):
        _require(self.max_rounds >= 0, f"{where}.max_rounds: must be >= 0")


@dataclass(frozen=True)
class BifurcationBlock:
    c_values: tuple[float, ...] | None = None
    c_range: tuple[float, float] | None = None
    c_steps: int | None = None
    t_end: float = 1000.0
    transient: float | None = None
    dt_out: float = 0.01
    rtol: float = 1e-10
    atol: float = 1e-10
    x0: float = 0.1
    section_dim: int = 0
    section_value: float = 0.1
    record_dim: int = 1
    node: int = 0
    family: str = "both"             # true | discovered | both
    param_term: str = "x_i3"
    param_dim: int = 2
    gap_frac: float = 0.05
    distinct_frac: float = 1e-3

    def validate(self, where):
        _require(self.c_values is not None or (self.c_range is not None and (self.c_steps or 0) >= 2),
                 f"{where}: give c_values or c_range with c_steps >= 2")
        _require(self.family in ("true", "discovered", "both"), f"{where}.family: true, discovered or both")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out: str = "run"
    topology: TopologyBlock = field(default_factory=TopologyBlock)
    dynamics: DynamicsBlock = field(default_factory=DynamicsBlock)
    corruption: CorruptionBlock = field(default_factory=CorruptionBlock)
    preprocess: PreprocessBlock = field(default_factory=PreprocessBlock)
    decoupler: DecouplerBlock = field(default_factory=DecouplerBlock)
    symreg: SymregBlock = field(default_factory=SymregBlock)
    evaluation: EvaluationBlock = field(default_factory=EvaluationBlock)
    termination: TerminationBlock = field(default_factory=TerminationBlock)
    bifurcation: BifurcationBlock | None = None

    def validate(self, where):
        if self.topology.kind == "predator_prey":
            _require(self.dynamics.model == "PredatorPrey", f"{where}: predator_prey topology needs PredatorPrey")
        if self.symreg.backend == "search" and STATE_DIM[self.dynamics.model] > 1:
            pass  # allowed, but slow for d > 1

    def to_json(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def replace(self, **changes) -> "PipelineConfig":
        return load_config({**self.to_json(), **changes})


def load_config(source) -> PipelineConfig:
    """Parse a config from a dict, a JSON string or a path to a JSON file."""
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    elif isinstance(source, str):
        try:
            data = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc})") from None
    else:
        data = source
    return _build(PipelineConfig, data, "config")
