"""Scenario files: JSON schema, parsing, canonical serialization, presets.

A scenario bundles four blocks:

* ``model`` — dimensions, horizon, grid steps, initial state, coefficient
  entries (scalar, matrix, ``{"const": [[...]]}`` or
  ``{"schedule": [[[...]], ...]}`` with one matrix per grid node), terminal
  weight G and the R lower bound r_min;
* ``solver`` — optional steps override, P and Gamma route selection,
  iteration limits, and the m-equation diffusion variant flag;
* ``experiment`` — what to run (solve, simulate, rate_state, rate_cost,
  deviation) and its parameters;
* ``output`` — destination directory and file-name prefix.

Parsing normalizes every coefficient to an explicit const/schedule form, so
serializing a parsed config and re-parsing it yields an identical config.
Two presets reproduce the network-security examples: ``netsec-closed-form``
(the explicitly solvable parameter set) and ``netsec-numeric`` (the 50-agent
simulation set).
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .errors import UsageError
from .model import DEFAULT_R_MIN, LqMfgModel, TimeGrid
from .population import DeviationCandidate, default_candidate_family

FORMAT_VERSION = 1

KINDS = ("solve", "simulate", "rate_state", "rate_cost", "deviation")
P_METHODS = ("direct", "iterative", "both")
GAMMA_METHODS = ("direct", "pi_transform", "both")
PRESET_NAMES = ("netsec-closed-form", "netsec-numeric")

_COEFF_SHAPES = (
    ("A", "nn"), ("B", "nk"), ("alpha", "nn"), ("b", "n1"),
    ("C", "nn"), ("D", "nk"), ("beta", "nn"), ("sigma", "n1"),
    ("C0", "nn"), ("D0", "nk"), ("beta0", "nn"), ("sigma0", "n1"),
    ("Q", "nn"), ("R", "kk"),
)


def _shape_of(code: str, n: int, k: int) -> tuple[int, int]:
    dims = {"n": n, "k": k, "1": 1}
    return dims[code[0]], dims[code[1]]


def _require_keys(d, allowed, context):
    if not isinstance(d, dict):
        raise UsageError(f"{context} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise UsageError(f"unknown key(s) {unknown} in {context}; "
                         f"allowed: {sorted(allowed)}")


def _float_matrix(value, rows, cols, context):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if (rows, cols) == (1, 1):
            arr = arr.reshape(1, 1)
        elif float(arr) == 0.0:
            arr = np.zeros((rows, cols))
        else:
            raise UsageError(f"{context}: a nonzero scalar is only valid for "
                             f"1x1 entries; give a {rows}x{cols} matrix")
    if arr.ndim == 1 and cols == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape != (rows, cols):
        raise UsageError(f"{context}: expected shape ({rows}, {cols}), "
                         f"got {arr.shape}")
    if not np.isfinite(arr).all():
        raise UsageError(f"{context}: non-finite entry")
    return tuple(tuple(float(v) for v in row) for row in arr)


@dataclasses.dataclass(frozen=True)
class CoefficientSpec:
    kind: str       # "const" or "schedule"
    values: tuple   # (r, c) nested floats, or (count, r, c) nested floats

    def to_json(self):
        return {self.kind: [list(row) for row in self.values]} \
            if self.kind == "const" else \
            {self.kind: [[list(row) for row in mat] for mat in self.values]}


def _parse_coefficient(name, value, rows, cols, steps):
    context = f"model.{name}"
    if isinstance(value, dict):
        _require_keys(value, ("const", "schedule"), context)
        if len(value) != 1:
            raise UsageError(f"{context}: give exactly one of 'const' or "
                             f"'schedule'")
        if "const" in value:
            return CoefficientSpec(
                "const", _float_matrix(value["const"], rows, cols, context))
        seq = value["schedule"]
        if not isinstance(seq, list) or len(seq) != steps + 1:
            raise UsageError(f"{context}: a schedule needs steps + 1 = "
                             f"{steps + 1} matrices, got "
                             f"{len(seq) if isinstance(seq, list) else type(seq).__name__}")
        return CoefficientSpec("schedule", tuple(
            _float_matrix(mat, rows, cols, f"{context}[{j}]")
            for j, mat in enumerate(seq)))
    return CoefficientSpec("const", _float_matrix(value, rows, cols, context))


@dataclasses.dataclass(frozen=True)
class ModelBlock:
    n: int
    k: int
    horizon: float
    steps: int
    x0: tuple[float, ...]
    coefficients: dict
    G: tuple
    r_min: float = DEFAULT_R_MIN

    @classmethod
    def from_dict(cls, d) -> "ModelBlock":
        allowed = ("n", "k", "T", "steps", "x0", "G", "r_min") + \
            tuple(name for name, _ in _COEFF_SHAPES)
        _require_keys(d, allowed, "model block")
        for key in ("n", "k", "T", "steps", "x0"):
            if key not in d:
                raise UsageError(f"model block is missing '{key}'")
        n, k = int(d["n"]), int(d["k"])
        if n < 1 or k < 1:
            raise UsageError("model dimensions n and k must be positive")
        horizon = float(d["T"])
        if not (horizon > 0 and np.isfinite(horizon)):
            raise UsageError(f"model horizon T must be positive, got {horizon}")
        steps = int(d["steps"])
        if steps < 1:
            raise UsageError(f"model steps must be positive, got {steps}")
        x0 = np.asarray(d["x0"], dtype=float).reshape(-1)
        if x0.shape != (n,):
            raise UsageError(f"x0 must have length n = {n}, got {x0.shape[0]}")
        coeffs = {}
        for name, code in _COEFF_SHAPES:
            rows, cols = _shape_of(code, n, k)
            coeffs[name] = _parse_coefficient(name, d.get(name, 0.0),
                                              rows, cols, steps)
        G = _float_matrix(d.get("G", 0.0), n, n, "model.G")
        r_min = float(d.get("r_min", DEFAULT_R_MIN))
        if not (r_min > 0):
            raise UsageError(f"r_min must be positive, got {r_min}")
        return cls(n=n, k=k, horizon=horizon, steps=steps,
                   x0=tuple(float(v) for v in x0), coefficients=coeffs,
                   G=G, r_min=r_min)

    def to_dict(self):
        out = {"n": self.n, "k": self.k, "T": self.horizon,
               "steps": self.steps, "x0": list(self.x0)}
        for name, _ in _COEFF_SHAPES:
            out[name] = self.coefficients[name].to_json()
        out["G"] = [list(row) for row in self.G]
        out["r_min"] = self.r_min
        return out

    def build(self, steps_override: int | None = None) -> LqMfgModel:
        steps = int(steps_override) if steps_override else self.steps
        if steps < 1:
            raise UsageError(f"steps override must be positive, got {steps}")
        grid = TimeGrid(self.horizon, steps)
        kwargs = {}
        for name, spec in self.coefficients.items():
            if spec.kind == "const":
                kwargs[name] = np.asarray(spec.values, float)
            else:
                arr = np.asarray(spec.values, float)
                if arr.shape[0] != steps + 1:
                    raise UsageError(
                        f"schedule for '{name}' has {arr.shape[0]} entries "
                        f"but the grid has {steps + 1} nodes; explicit "
                        f"schedules cannot be combined with a steps override")
                kwargs[name] = arr
        return LqMfgModel.from_constants(
            grid, G=np.asarray(self.G, float), x0=np.asarray(self.x0, float),
            r_min=self.r_min, **kwargs)


@dataclasses.dataclass(frozen=True)
class SolverBlock:
    steps: int | None = None
    p_method: str = "direct"
    gamma_method: str = "direct"
    m00_beta_literal: bool = False
    max_iters: int = 100
    tol: float = 1e-10

    @classmethod
    def from_dict(cls, d) -> "SolverBlock":
        if d is None:
            return cls()
        _require_keys(d, ("steps", "p_method", "gamma_method",
                          "m00_beta_literal", "max_iters", "tol"),
                      "solver block")
        p_method = str(d.get("p_method", "direct"))
        if p_method not in P_METHODS:
            raise UsageError(f"solver.p_method must be one of {P_METHODS}, "
                             f"got '{p_method}'")
        gamma_method = str(d.get("gamma_method", "direct"))
        if gamma_method not in GAMMA_METHODS:
            raise UsageError(f"solver.gamma_method must be one of "
                             f"{GAMMA_METHODS}, got '{gamma_method}'")
        steps = d.get("steps")
        if steps is not None:
            steps = int(steps)
            if steps < 1:
                raise UsageError("solver.steps must be positive")
        max_iters = int(d.get("max_iters", 100))
        if max_iters < 1:
            raise UsageError("solver.max_iters must be positive")
        tol = float(d.get("tol", 1e-10))
        if not (tol > 0):
            raise UsageError("solver.tol must be positive")
        return cls(steps=steps, p_method=p_method, gamma_method=gamma_method,
                   m00_beta_literal=bool(d.get("m00_beta_literal", False)),
                   max_iters=max_iters, tol=tol)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class CandidateFamilyBlock:
    gain_scales: tuple[float, ...] = ()
    include_zero: bool = True
    offsets: tuple[float, ...] = ()

    @classmethod
    def from_dict(cls, d) -> "CandidateFamilyBlock":
        _require_keys(d, ("gain_scales", "include_zero", "offsets"),
                      "experiment.candidates")
        return cls(
            gain_scales=tuple(float(v) for v in d.get("gain_scales", ())),
            include_zero=bool(d.get("include_zero", True)),
            offsets=tuple(float(v) for v in d.get("offsets", ())))

    def to_dict(self):
        return {"gain_scales": list(self.gain_scales),
                "include_zero": self.include_zero,
                "offsets": list(self.offsets)}


def build_candidates(block: CandidateFamilyBlock | None
                     ) -> tuple[DeviationCandidate, ...]:
    """Candidate family from config; the equilibrium policy always leads."""
    if block is None:
        return default_candidate_family()
    family = [DeviationCandidate("self")]
    for theta in block.gain_scales:
        if theta != 1.0:
            family.append(DeviationCandidate(f"gain_scale_{theta:g}",
                                             gain_scale=theta))
    if block.include_zero:
        family.append(DeviationCandidate("zero_control", zero_control=True))
    for off in block.offsets:
        if off != 0.0:
            family.append(DeviationCandidate(f"offset_{off:+g}", offset=off))
    return tuple(family)


@dataclasses.dataclass(frozen=True)
class ExperimentBlock:
    kind: str = "solve"
    seed: int = 0
    N: int | None = None
    Ns: tuple[int, ...] | None = None
    S: int = 256
    candidates: CandidateFamilyBlock | None = None

    @classmethod
    def from_dict(cls, d) -> "ExperimentBlock":
        if d is None:
            return cls()
        _require_keys(d, ("kind", "seed", "N", "Ns", "S", "candidates"),
                      "experiment block")
        kind = str(d.get("kind", "solve"))
        if kind not in KINDS:
            raise UsageError(f"experiment.kind must be one of {KINDS}, "
                             f"got '{kind}'")
        seed = int(d.get("seed", 0))
        if not 0 <= seed < (1 << 64):
            raise UsageError("experiment.seed must fit in 64 bits")
        N = d.get("N")
        if N is not None:
            N = int(N)
            if N < 1:
                raise UsageError("experiment.N must be at least 1")
        Ns = d.get("Ns")
        if Ns is not None:
            Ns = tuple(int(v) for v in Ns)
        S = int(d.get("S", 256))
        if S < 2:
            raise UsageError("experiment.S must be at least 2")
        cand = d.get("candidates")
        if cand is not None:
            cand = CandidateFamilyBlock.from_dict(cand)
        return cls(kind=kind, seed=seed, N=N, Ns=Ns, S=S, candidates=cand)

    def to_dict(self):
        return {"kind": self.kind, "seed": self.seed, "N": self.N,
                "Ns": list(self.Ns) if self.Ns is not None else None,
                "S": self.S,
                "candidates": (self.candidates.to_dict()
                               if self.candidates else None)}


@dataclasses.dataclass(frozen=True)
class OutputBlock:
    directory: str = "."
    prefix: str = "run"

    @classmethod
    def from_dict(cls, d) -> "OutputBlock":
        if d is None:
            return cls()
        _require_keys(d, ("directory", "prefix"), "output block")
        prefix = str(d.get("prefix", "run"))
        if not prefix or "/" in prefix or "\\" in prefix:
            raise UsageError("output.prefix must be a plain file-name prefix")
        return cls(directory=str(d.get("directory", ".")), prefix=prefix)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    model: ModelBlock
    solver: SolverBlock = SolverBlock()
    experiment: ExperimentBlock = ExperimentBlock()
    output: OutputBlock = OutputBlock()

    @classmethod
    def from_dict(cls, d) -> "ScenarioConfig":
        _require_keys(d, ("format_version", "model", "solver", "experiment",
                          "output"), "scenario")
        version = d.get("format_version", FORMAT_VERSION)
        if int(version) != FORMAT_VERSION:
            raise UsageError(f"unsupported format_version {version}; this "
                             f"build reads version {FORMAT_VERSION}")
        if "model" not in d:
            raise UsageError("scenario is missing the 'model' block")
        return cls(model=ModelBlock.from_dict(d["model"]),
                   solver=SolverBlock.from_dict(d.get("solver")),
                   experiment=ExperimentBlock.from_dict(d.get("experiment")),
                   output=OutputBlock.from_dict(d.get("output")))

    def to_dict(self):
        return {"format_version": FORMAT_VERSION,
                "model": self.model.to_dict(),
                "solver": self.solver.to_dict(),
                "experiment": self.experiment.to_dict(),
                "output": self.output.to_dict()}

    def replace(self, **kwargs) -> "ScenarioConfig":
        return dataclasses.replace(self, **kwargs)


def parse_scenario(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"scenario parse error at line {exc.lineno}, "
                         f"column {exc.colno}: {exc.msg}") from None
    return ScenarioConfig.from_dict(data)


def serialize_scenario(config: ScenarioConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read scenario file: {exc}") from None
    return parse_scenario(text)


def preset(name: str) -> ScenarioConfig:
    """Named built-in scenarios for the network-security examples."""
    if name == "netsec-closed-form":
        return ScenarioConfig.from_dict({
            "format_version": 1,
            "model": {
                "n": 1, "k": 1, "T": 1.0, "steps": 1000, "x0": [1.0],
                "A": 1.0, "B": 1.0, "alpha": 1.0, "b": 0.0,
                "C": 0.0, "D": 0.0, "beta": 0.0, "sigma": 1.0,
                "C0": 0.0, "D0": 0.0, "beta0": 0.0, "sigma0": 1.0,
                "Q": 3.0, "R": 1.0, "G": 1.0,
            },
            "solver": {"p_method": "both", "gamma_method": "both"},
            "experiment": {"kind": "solve", "seed": 20250801},
            "output": {"directory": "out", "prefix": "netsec-closed-form"},
        })
    if name == "netsec-numeric":
        return ScenarioConfig.from_dict({
            "format_version": 1,
            "model": {
                "n": 1, "k": 1, "T": 1.0, "steps": 1000, "x0": [1.0],
                "A": 1.5, "B": 2.8, "alpha": 1.0, "b": 2.0,
                "C": 0.6, "D": 2.5, "beta": 0.0, "sigma": 0.8,
                "C0": 0.0, "D0": 6.0, "beta0": 0.0, "sigma0": 0.3,
                "Q": 3.3, "R": 2.5, "G": 5.0,
            },
            "solver": {"p_method": "both", "gamma_method": "both"},
            "experiment": {"kind": "simulate", "seed": 20250801, "N": 50},
            "output": {"directory": "out", "prefix": "netsec-numeric"},
        })
    raise UsageError(f"unknown preset '{name}'; available presets: "
                     + ", ".join(PRESET_NAMES))
