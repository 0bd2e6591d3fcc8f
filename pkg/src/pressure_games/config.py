"""Scenario files: strict schema, YAML/JSON loading with line numbers, and object builders."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import (AttachSpec, ClassStructure, ConfigError, ConstantDetection, CorruptionParams, CyberParams,
                   InspectionParams, KernelSpec, LogisticDetection, OccupationState, PayoffModel,
                   PrincipalModel, RatioDetection, SizePayoff, TerrorParams)
from .markov import (AttachmentModel, CoalitionModel, CompositeModel, GrowthModel, GrowthTerm, KthOrderModel,
                     MulticlassModel, PairwiseModel, constant_rate, linear_rate)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DetectionConfig(Strict):
    kind: Literal["ratio", "logistic", "constant"] = "ratio"
    theta: float = 0.0
    levels: Optional[List[float]] = None
    a: float = 1.0
    c: float = 0.0
    slope: float = 0.0
    p: Optional[List[float]] = None


class PayoffConfig(Strict):
    kind: Literal["tabular", "inspection", "corruption", "cyber", "terror"] = "tabular"
    table: Optional[Union[List[float], List[List[float]]]] = None
    b_axes: List[List[float]] = Field(default_factory=list)
    x_coef: Optional[List[List[float]]] = None
    r: float = 0.0
    r_list: Optional[List[float]] = None
    fine: float = 0.0
    w: float = 0.0
    w0: float = 0.0
    c: float = 0.0
    S_list: Optional[List[float]] = None
    r_fail: float = 0.0
    r_succ: float = 0.0
    detection: Optional[DetectionConfig] = None

    @model_validator(mode="after")
    def _needs(self):
        if self.kind == "tabular" and self.table is None:
            raise ValueError("tabular payoff needs `table`")
        if self.kind in ("inspection", "corruption", "cyber") and self.r_list is None:
            raise ValueError(f"{self.kind} payoff needs `r_list`")
        if self.kind == "terror" and self.S_list is None:
            raise ValueError("terror payoff needs `S_list`")
        return self


class RateConfig(Strict):
    const: float = 0.0
    linear: Dict[str, float] = Field(default_factory=dict)


class GrowthTermConfig(Strict):
    kind: Literal["birth", "death", "mutation", "split", "merge", "regroup"]
    src: List[int] = Field(default_factory=list)
    dst: List[int] = Field(default_factory=list)
    rate: RateConfig


class KernelConfig(Strict):
    merge: Optional[float] = 1.0
    split: Optional[float] = 0.0
    merge_weights: float = 0.0
    split_weights: float = 0.0


class SizePayoffConfig(Strict):
    intercept: float = 0.0
    slope: float = 0.0
    b_coef: float = 0.0
    table: Optional[List[float]] = None


class AttachConfig(Strict):
    alpha: float
    lam: float


class ClassConfig(Strict):
    comm_mode: Literal["C1_no_communication", "C2_full_communication"]
    class_fractions: List[float]
    per_class_kappa: List[float]
    payoffs: List[PayoffConfig]


class ModelConfig(Strict):
    family: Literal["pairwise", "kth_order", "multiclass", "growth", "coalition", "attachment",
                    "coalition_attachment"]
    kappa: float = 1.0
    K: int = 2
    payoff: Optional[PayoffConfig] = None
    classes: Optional[ClassConfig] = None
    growth_terms: List[GrowthTermConfig] = Field(default_factory=list)
    kernel: Optional[KernelConfig] = None
    size_payoff: Optional[SizePayoffConfig] = None
    attach: Optional[AttachConfig] = None
    J_max: int = 64
    h: Optional[float] = None

    @model_validator(mode="after")
    def _needs(self):
        need = {"pairwise": "payoff", "kth_order": "payoff", "multiclass": "classes",
                "coalition": "kernel", "attachment": "attach"}
        key = need.get(self.family)
        if key and getattr(self, key) is None:
            raise ValueError(f"family {self.family} needs `{key}`")
        if self.family == "coalition_attachment" and (self.kernel is None or self.attach is None):
            raise ValueError("family coalition_attachment needs `kernel` and `attach`")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        return self


class InitialConfig(Strict):
    counts: Optional[List[int]] = None
    x: Optional[List[float]] = None
    N: Optional[int] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.counts is None) == (self.x is None):
            raise ValueError("give exactly one of `counts` or `x`")
        return self


class RewardConfig(Strict):
    """B(x, b) = constant + x . x_weights + sum_a [b_linear_a b_a - b_quadratic_a (b_a - b_center_a)^2]."""

    constant: float = 0.0
    x_weights: Optional[List[float]] = None
    b_linear: Optional[List[float]] = None
    b_quadratic: Optional[List[float]] = None
    b_center: Optional[List[float]] = None


class PrincipalConfig(Strict):
    mode: Literal["fixed", "best_response"] = "fixed"
    b: Optional[List[float]] = None
    control_box: List[List[float]] = Field(default_factory=lambda: [[0.0, 0.0]])
    reward: RewardConfig = Field(default_factory=RewardConfig)


class NumericsConfig(Strict):
    method: Literal["rk45", "rk4"] = "rk45"
    rtol: float = 1e-8
    atol: float = 1e-10
    h_ode: Optional[float] = None
    m: int = 10
    b_points: int = 11
    refine: bool = True
    support_tol: float = 1e-8
    n_starts: int = 32


class ObservableConfig(Strict):
    kind: Literal["coordinate", "linear", "constant", "moment"] = "coordinate"
    index: int = 1
    weights: Optional[List[float]] = None
    value: float = 0.0
    order: int = 0


class ExperimentConfig(Strict):
    t_end: float = 1.0
    tau: float = 0.5
    horizon: int = 1
    beta: Optional[float] = None
    N_values: List[int] = Field(default_factory=lambda: [50, 200, 800])
    h_values: Optional[List[float]] = None
    n_runs: int = 1000
    master_seed: int = 0
    g: ObservableConfig = Field(default_factory=ObservableConfig)
    regularity: Literal["smooth", "lipschitz", "smooth_f2", "lipschitz_f2"] = "lipschitz"
    nash_N: List[int] = Field(default_factory=list)


class ScenarioConfig(Strict):
    model: ModelConfig
    initial: InitialConfig
    principal: PrincipalConfig = Field(default_factory=PrincipalConfig)
    numerics: NumericsConfig = Field(default_factory=NumericsConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)


# --------------------------------------------------------------------------
# loading


def _line_map(text: str) -> dict:
    """Map key paths of a YAML document to 1-based line numbers."""
    out: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                out[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                p = path + (i,)
                out[p] = v.start_mark.line + 1
                walk(v, p)
    if root is not None:
        walk(root, ())
    return out


def _format_errors(exc: ValidationError, lines: dict, source: str) -> List[str]:
    msgs = []
    for err in exc.errors():
        loc = tuple(err["loc"])
        line = None
        for k in range(len(loc), 0, -1):
            if loc[:k] in lines:
                line = lines[loc[:k]]
                break
        where = ".".join(str(p) for p in loc) or "<root>"
        prefix = f"{source}:{line}: " if line else f"{source}: "
        if err["type"] == "extra_forbidden":
            msgs.append(f"{prefix}unknown key `{loc[-1]}` at {where}")
        else:
            msgs.append(f"{prefix}{where}: {err['msg']}")
    return msgs


class ConfigErrors(ConfigError):
    def __init__(self, messages: List[str]):
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigErrors([f"{source}: not valid YAML/JSON: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigErrors([f"{source}: top level must be a mapping"])
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigErrors(_format_errors(exc, _line_map(text), source)) from exc
    problems = cross_check(cfg)
    if problems:
        raise ConfigErrors([f"{source}: {p}" for p in problems])
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigErrors([f"{path}: cannot read ({exc.strerror})"]) from exc
    return parse_config(text, str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    """Resolved configuration (defaults filled in) as YAML."""
    return yaml.safe_dump(json.loads(cfg.model_dump_json()), sort_keys=False)


# --------------------------------------------------------------------------
# builders


def build_detection(cfg: Optional[DetectionConfig], d: int, r_list):
    cfg = cfg or DetectionConfig()
    if cfg.kind == "ratio":
        return RatioDetection(d, cfg.theta, cfg.levels)
    if cfg.kind == "logistic":
        return LogisticDetection(d, cfg.a, cfg.c, cfg.slope, r_list if r_list is not None else [0.0] * d, cfg.levels)
    return ConstantDetection(cfg.p if cfg.p is not None else [0.0] * d)


def build_payoff(cfg: PayoffConfig) -> PayoffModel:
    if cfg.kind == "tabular":
        return PayoffModel.tabular(cfg.table, cfg.b_axes, cfg.x_coef)
    d = len(cfg.S_list if cfg.kind == "terror" else cfg.r_list)
    det = build_detection(cfg.detection, d, cfg.r_list)
    if cfg.kind == "inspection":
        return PayoffModel.inspection(InspectionParams(cfg.r, cfg.r_list, cfg.fine), det)
    if cfg.kind == "corruption":
        return PayoffModel.corruption(CorruptionParams(cfg.w, cfg.w0, cfg.r_list, cfg.fine), det)
    if cfg.kind == "cyber":
        return PayoffModel.cyber(CyberParams(cfg.c, cfg.r_list), det)
    return PayoffModel.terror(TerrorParams(cfg.S_list, cfg.r_fail, cfg.r_succ), det)


def build_kernel(cfg: KernelConfig) -> KernelSpec:
    return KernelSpec(cfg.merge, cfg.split, cfg.merge_weights, cfg.split_weights)


def build_size_payoff(cfg: Optional[SizePayoffConfig]) -> Optional[SizePayoff]:
    if cfg is None:
        return None
    if cfg.table is not None:
        return SizePayoff(table=cfg.table)
    return SizePayoff.linear(cfg.intercept, cfg.slope, cfg.b_coef)


def _h(cfg: ScenarioConfig) -> float:
    if cfg.model.h is not None:
        return cfg.model.h
    if cfg.initial.counts is not None:
        return 1.0 / max(1, sum(cfg.initial.counts))
    return 1.0 / (cfg.initial.N or 100)


def build_model(cfg: ScenarioConfig, h: Optional[float] = None):
    m = cfg.model
    h = _h(cfg) if h is None else h
    if m.family == "pairwise":
        return PairwiseModel(build_payoff(m.payoff), m.kappa)
    if m.family == "kth_order":
        return KthOrderModel(build_payoff(m.payoff), m.kappa, m.K)
    if m.family == "multiclass":
        c = m.classes
        cs = ClassStructure(len(c.class_fractions), c.comm_mode, c.class_fractions, c.per_class_kappa)
        return MulticlassModel([build_payoff(p) for p in c.payoffs], cs, m.kappa)
    if m.family == "growth":
        terms = [GrowthTerm(t.kind, tuple(t.src), tuple(t.dst),
                            linear_rate(t.rate.linear, t.rate.const) if t.rate.linear else constant_rate(t.rate.const))
                 for t in m.growth_terms]
        return GrowthModel(terms, h, m.J_max)
    attach = AttachSpec(m.attach.alpha, m.attach.lam) if m.attach is not None else None
    if m.family == "attachment":
        return AttachmentModel(attach, h, m.J_max)
    coal = CoalitionModel(build_kernel(m.kernel), build_size_payoff(m.size_payoff), h, m.J_max)
    if m.family == "coalition":
        return coal
    return CompositeModel([coal, AttachmentModel(attach, h, m.J_max)])


def build_reward(cfg: RewardConfig):
    const = cfg.constant
    wx = None if cfg.x_weights is None else np.asarray(cfg.x_weights, float)
    bl = None if cfg.b_linear is None else np.asarray(cfg.b_linear, float)
    bq = None if cfg.b_quadratic is None else np.asarray(cfg.b_quadratic, float)
    bc = None if cfg.b_center is None else np.asarray(cfg.b_center, float)

    def reward(x, b):
        x = np.asarray(x, float)
        b = np.asarray(b, float)
        out = np.full(np.broadcast_shapes(x.shape[:-1], b.shape[:-1]), const)
        if wx is not None:
            out = out + x[..., :wx.size] @ wx
        if bl is not None:
            out = out + b[..., :bl.size] @ bl
        if bq is not None:
            center = bc if bc is not None else np.zeros_like(bq)
            out = out - ((b[..., :bq.size] - center) ** 2) @ bq
        return out
    return reward


def build_principal(cfg: ScenarioConfig) -> PrincipalModel:
    p = cfg.principal
    box = np.asarray(p.control_box, float)
    b = p.b
    if b is None and p.mode == "fixed" and box.ndim == 2:
        b = box[:, 0]      # an omitted fixed control sits at the lower corner of the box
    return PrincipalModel(build_reward(p.reward), box, p.mode, None if b is None else np.asarray(b, float))


def build_initial(cfg: ScenarioConfig, model) -> OccupationState:
    """Start as counts; an `x` start is rounded to the lattice (population models) or scaled by 1/h."""
    from .equilibria import rational_approximation
    init = cfg.initial
    dim = model.dim
    if init.counts is not None:
        c = np.asarray(init.counts, dtype=np.int64)
        if isinstance(model, (PairwiseModel, KthOrderModel)):
            return OccupationState.population(c)
        if isinstance(model, MulticlassModel):
            return OccupationState(c, 1.0 / max(1, c.sum()))
        return OccupationState(c, model.h, dim)
    x = np.asarray(init.x, float)
    if isinstance(model, (PairwiseModel, KthOrderModel)):
        return rational_approximation(x, init.N or 100)
    if isinstance(model, MulticlassModel):
        N = init.N or 100
        return OccupationState(np.round(x * N).astype(np.int64), 1.0 / N)
    h = model.models[0].h if isinstance(model, CompositeModel) else model.h
    c = np.round(x / h).astype(np.int64)
    return OccupationState(c, h, dim)


def initial_x(cfg: ScenarioConfig, model) -> np.ndarray:
    """Macroscopic start for the kinetic limit."""
    if cfg.initial.x is not None:
        return np.asarray(cfg.initial.x, float)
    return model.to_x(np.asarray(cfg.initial.counts, float))


def build_observable(cfg: ObservableConfig):
    if cfg.kind == "coordinate":
        i = cfg.index - 1
        return lambda x: float(np.asarray(x)[i])
    if cfg.kind == "linear":
        w = np.asarray(cfg.weights, float)
        return lambda x: float(np.asarray(x)[:w.size] @ w)
    if cfg.kind == "constant":
        v = cfg.value
        return lambda x: v
    k = cfg.order
    return lambda x: float(np.sum(np.arange(1, len(x) + 1, dtype=float) ** k * np.asarray(x)))


def cross_check(cfg: ScenarioConfig) -> List[str]:
    """Semantic checks that need several sections at once; every problem is listed."""
    problems = []
    try:
        model = build_model(cfg)
    except (ConfigError, ValueError) as exc:
        return [f"model: {exc}"]
    try:
        principal = build_principal(cfg)
    except (ConfigError, ValueError) as exc:
        problems.append(f"principal: {exc}")
        principal = None
    try:
        x0 = build_initial(cfg, model)
        if x0.counts.size != model.dim:
            problems.append(f"initial: state has {x0.counts.size} entries, model has {model.dim}")
    except (ConfigError, ValueError) as exc:
        problems.append(f"initial: {exc}")
    if principal is not None and isinstance(getattr(model, "payoff", None), PayoffModel):
        try:
            d = model.payoff.d
            model.payoff.rewards(np.full(d, 1.0 / d), principal.b if principal.b is not None
                                 else principal.control_box[:, 0])
        except (ConfigError, ValueError, IndexError) as exc:
            problems.append(f"payoff/principal: {exc}")
    e = cfg.experiment
    if e.n_runs < 2:
        problems.append("experiment.n_runs must be at least 2")
    if e.beta is not None and not 0 < e.beta < 1:
        problems.append("experiment.beta must lie in (0, 1)")
    if cfg.numerics.method == "rk4" and not cfg.numerics.h_ode:
        problems.append("numerics.h_ode is required with method rk4")
    return problems
