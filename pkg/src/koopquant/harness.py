"""Monte-Carlo word-length sweeps and their persisted outputs.

A sweep trains once on simulated data, fits the unquantized reference
predictor, and then for every word length ``b`` and dither seed fits a
predictor on dither-quantized snapshots.  Each record holds the relative
errors of ``A`` and ``B`` against the reference, the open-loop prediction
error on held-out trajectories and, optionally, the achieved closed-loop
cost.

Seed derivation
---------------
Every random stream is ``SeedSequence(master_seed, spawn_key=(label, *index))``
with the integer labels in :data:`SEED_LABELS`.  A single record
``(b, seed)`` can therefore be recomputed in isolation, and records do not
depend on the order in which they are evaluated.

Config schema (YAML)
--------------------
::

    plant: pendulum            # pendulum | vdp | motor | kdv
    plant_params: {}           # keyword overrides for the plant factory
    dictionary:
      kind: tps                # tps | kdv
      n_centers: 100           # tps only; centers uniform in [-1, 1]^n
    n_traj: 20
    steps: 500                 # snapshots per trajectory
    n_test_traj: 5             # held-out trajectories for prediction error
    test_horizon: null         # defaults to ``steps``
    word_lengths: [4, 5, 6, 7, 8, 9, 10]
    n_monte_carlo: 10
    mode: state-input          # state-input | observable
    shared_resolution: false   # one common quantizer range for all channels
    margin: 0.05               # quantizer range widening per side
    master_seed: 0
    paper_scale: false         # 200 trajectories x 1000 steps x 50 seeds
    workers: 1
    output_dir: results
    mpc:                       # optional closed-loop scenario
      duration: 4.0            # seconds
      x0: [0.0, 0.0]
      reference: {levels: [0.5, -0.5], switch_every: 200, coordinate: 0}
      quantize_measurements: false
      Q: [1.0, 0.0]            # optional overrides of the plant defaults
      R: 0.01
      horizon: 100
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .dictionary import Dictionary, make_kdv_dictionary, make_tps_dictionary, sample_centers
from .dynamics import PlantModel, TrajectorySet, generate_training_set, make_plant
from .errors import ConfigError, KoopquantError, NumericalError
from .ident import (
    LinearPredictor,
    assemble_snapshots,
    default_quantizers,
    edmd_fit,
    estimate_gap,
    fit_decoder,
)
from .mpc import ClosedLoopResult, MpcConfig, run_closed_loop, step_reference
from .predictor import evaluate_predictor
from .quantization import DitherStream

__all__ = [
    "ExperimentConfig",
    "SweepResult",
    "SEED_LABELS",
    "derive_seed",
    "load_config",
    "build_dictionary",
    "fit_predictor",
    "run_sweep",
    "evaluate_record",
    "fit_log_slope",
    "emit_outputs",
    "load_records",
    "records_csv",
    "config_hash",
]

SEED_LABELS = {"train": 0, "test": 1, "dither": 2, "centers": 3, "measurement": 4}

PAPER_SCALE = {"n_traj": 200, "steps": 1000, "n_monte_carlo": 50}

RECORD_FIELDS = [
    "b", "seed", "relA", "relB", "relG", "prediction_error", "J",
    "saturated", "max_kkt", "soft_violation_steps",
]
METRICS = ["relA", "relB", "relG", "prediction_error", "J"]


def derive_seed(master: int, label: str, *index: int) -> np.random.SeedSequence:
    """Substream ``(master, label, index...)``; see the module docstring."""
    if label not in SEED_LABELS:
        raise ValueError(f"unknown seed label {label!r}")
    return np.random.SeedSequence(int(master), spawn_key=(SEED_LABELS[label],) + tuple(int(i) for i in index))


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class ExperimentConfig:
    """Settings of one word-length sweep.  See the module docstring for the file schema."""

    plant: str = "pendulum"
    plant_params: dict = field(default_factory=dict)
    dictionary: dict = field(default_factory=lambda: {"kind": "tps", "n_centers": 100})
    n_traj: int = 20
    steps: int = 500
    n_test_traj: int = 5
    test_horizon: Optional[int] = None
    word_lengths: list = field(default_factory=lambda: [4, 5, 6, 7, 8, 9, 10])
    n_monte_carlo: int = 10
    mode: str = "state-input"
    shared_resolution: bool = False
    margin: float = 0.05
    master_seed: int = 0
    paper_scale: bool = False
    workers: int = 1
    output_dir: str = "results"
    mpc: Optional[dict] = None

    def __post_init__(self):
        if not self.word_lengths:
            raise ConfigError("word_lengths must not be empty")
        self.word_lengths = [int(b) for b in self.word_lengths]
        if any(b < 1 or b > 32 for b in self.word_lengths):
            raise ConfigError("word lengths must lie in 1..32")
        if self.n_monte_carlo < 1:
            raise ConfigError("n_monte_carlo must be at least 1")
        if self.n_traj < 1 or self.steps < 1 or self.n_test_traj < 1:
            raise ConfigError("n_traj, steps and n_test_traj must be at least 1")
        if self.mode not in ("state-input", "observable"):
            raise ConfigError(f"mode must be 'state-input' or 'observable', got {self.mode!r}")
        if self.dictionary.get("kind") not in ("tps", "kdv"):
            raise ConfigError("dictionary.kind must be 'tps' or 'kdv'")
        if self.mpc is not None:
            unknown = set(self.mpc) - {"duration", "x0", "reference", "quantize_measurements", "Q", "R", "horizon"}
            if unknown:
                raise ConfigError(f"unknown mpc keys {sorted(unknown)}")
            if float(self.mpc.get("duration", 0)) <= 0:
                raise ConfigError("mpc.duration must be positive")
        if self.paper_scale:
            for k, v in PAPER_SCALE.items():
                setattr(self, k, v)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def make_plant(self) -> PlantModel:
        try:
            return make_plant(self.plant, **self.plant_params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    """Read an :class:`ExperimentConfig` from a YAML file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return ExperimentConfig.from_dict(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form of ``cfg``."""
    text = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def build_dictionary(cfg: ExperimentConfig, plant: PlantModel) -> Dictionary:
    spec = cfg.dictionary
    if spec["kind"] == "kdv":
        return make_kdv_dictionary(plant.n)
    rng = np.random.Generator(np.random.Philox(derive_seed(cfg.master_seed, "centers", 0)))
    return make_tps_dictionary(plant.n, sample_centers(plant.n, int(spec.get("n_centers", 100)), rng))


def fit_predictor(s, d: Dictionary, data: TrajectorySet) -> LinearPredictor:
    """EDMD fit with the decoder ``C`` (exact ``[I, 0]`` when the state is lifted)."""
    p, _ = edmd_fit(s, d)
    if d.has_state_block:
        return p.with_decoder()
    X = np.concatenate([x[:, :-1] for x in data.X], axis=1)
    return p.with_decoder(fit_decoder(X, s.Phi))


def _mpc_scenario(cfg: ExperimentConfig, plant: PlantModel):
    m = dict(cfg.mpc)
    ref_spec = m.get("reference") or {}
    duration = float(m["duration"])
    steps = int(round(duration / plant.dt))
    ref = step_reference(
        ref_spec.get("levels", [0.0]),
        int(ref_spec.get("switch_every", max(steps, 1))),
        plant.n,
        int(ref_spec.get("coordinate", 0)),
    )
    overrides = {k: m[k] for k in ("Q", "R", "horizon") if k in m}
    mcfg = MpcConfig.for_plant(plant, reference=ref, **overrides)
    x0 = np.asarray(m.get("x0", np.zeros(plant.n)), dtype=float)
    return mcfg, x0, duration, bool(m.get("quantize_measurements", False))


class _Context:
    """Everything shared by the records of one sweep."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.plant = cfg.make_plant()
        self.d = build_dictionary(cfg, self.plant)
        self.train = generate_training_set(
            self.plant, cfg.n_traj, cfg.steps, _int_seed(derive_seed(cfg.master_seed, "train", 0)))
        self.test = generate_training_set(
            self.plant, cfg.n_test_traj, cfg.test_horizon or cfg.steps,
            _int_seed(derive_seed(cfg.master_seed, "test", 0)))
        s = assemble_snapshots(self.train, self.d, "none")
        self.reference = fit_predictor(s, self.d, self.train)
        self.scenario = _mpc_scenario(cfg, self.plant) if cfg.mpc else None
        self._quantizers = {}

    def quantizers(self, b: int) -> dict:
        if b not in self._quantizers:
            self._quantizers[b] = default_quantizers(
                self.train, self.d, b, self.cfg.mode, self.cfg.margin, self.cfg.shared_resolution)
        return self._quantizers[b]

    def closed_loop(self, p: LinearPredictor, b=None, seed=None) -> ClosedLoopResult:
        mcfg, x0, duration, quantize = self.scenario
        qs = stream = None
        if quantize and b is not None:
            qs = self.quantizers(b)["signal"] if self.cfg.mode == "state-input" else None
            stream = DitherStream(derive_seed(self.cfg.master_seed, "measurement", b, seed))
        return run_closed_loop(self.plant, p, mcfg, x0, duration, measurement_quantizers=qs, stream=stream)


def evaluate_record(ctx: _Context, b: int, seed: int, keep_trace: bool = False):
    """Fit and score one ``(b, seed)`` cell; returns ``(record, trace or None)``."""
    try:
        stream = DitherStream(derive_seed(ctx.cfg.master_seed, "dither", b, seed))
        s = assemble_snapshots(ctx.train, ctx.d, ctx.cfg.mode, b, ctx.quantizers(b), stream)
        p = fit_predictor(s, ctx.d, ctx.train)
        relA, relB, relG = estimate_gap(ctx.reference, p)
        try:
            err = evaluate_predictor(p, ctx.test)
        except NumericalError:
            err = math.inf
        rec = {
            "b": b, "seed": seed, "relA": relA, "relB": relB, "relG": relG,
            "prediction_error": err, "J": math.nan, "saturated": s.quantization_tag.get("saturated", 0),
            "max_kkt": math.nan, "soft_violation_steps": 0,
        }
        trace = None
        if ctx.scenario is not None:
            res = ctx.closed_loop(p, b, seed)
            rec.update(J=res.J, max_kkt=res.max_kkt, soft_violation_steps=res.soft_violation_steps)
            trace = res if keep_trace else None
        return rec, trace
    except KoopquantError as exc:
        raise type(exc)(f"(b={b}, seed={seed}) {exc}") from exc


_WORKER_CTX = None


def _worker_init(cfg_dict):
    global _WORKER_CTX
    _WORKER_CTX = _Context(ExperimentConfig.from_dict(cfg_dict))


def _worker_eval(cell):
    b, seed = cell
    return evaluate_record(_WORKER_CTX, b, seed, keep_trace=(seed == 0))


@dataclass
class SweepResult:
    """Per-cell records plus the unquantized reference and aggregates."""

    config: ExperimentConfig
    records: list
    reference: dict
    traces: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = len(self.config.word_lengths) * self.config.n_monte_carlo
        if self.records and len(self.records) != expected:
            raise ValueError(f"expected {expected} records, got {len(self.records)}")

    def values(self, metric: str, b: int) -> np.ndarray:
        return np.array([r[metric] for r in self.records if r["b"] == b], dtype=float)

    def aggregate(self) -> list:
        """Mean and sample standard deviation of every metric per word length."""
        rows = []
        for b in self.config.word_lengths:
            row = {"b": b, "n": int(self.values("relA", b).size)}
            for k in METRICS:
                v = self.values(k, b)
                row[f"{k}_mean"] = float(np.mean(v))
                row[f"{k}_std"] = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
                with np.errstate(divide="ignore", invalid="ignore"):
                    row[f"log10_{k}_mean"] = float(np.mean(np.log10(v)))
            rows.append(row)
        return rows

    def slopes(self) -> dict:
        """Fitted ``log10(error)`` vs ``b`` lines of the mean relative errors."""
        out = {}
        agg = self.aggregate()
        b = [r["b"] for r in agg]
        if len(b) < 3:
            return out
        for k in ("relA", "relB", "relG"):
            try:
                slope, icpt, r2 = fit_log_slope(b, [r[f"{k}_mean"] for r in agg])
            except ValueError:
                continue
            out[k] = {"slope": slope, "intercept": icpt, "r2": r2}
        return out

    def digest(self) -> str:
        return hashlib.sha256(records_csv(self.records).encode()).hexdigest()


def run_sweep(cfg: ExperimentConfig, keep_traces: bool = True) -> SweepResult:
    """Run the full ``word_lengths x n_monte_carlo`` grid.

    The training data and the reference predictor are shared by all cells;
    dither noise differs per cell.  With ``cfg.workers > 1`` the cells are
    spread over processes; the result is identical either way.
    """
    ctx = _Context(cfg)
    cells = [(b, k) for b in cfg.word_lengths for k in range(cfg.n_monte_carlo)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers, initializer=_worker_init, initargs=(cfg.to_dict(),)) as ex:
            results = list(ex.map(_worker_eval, cells))
    else:
        results = [evaluate_record(ctx, b, k, keep_trace=keep_traces and k == 0) for b, k in cells]
    records = [r for r, _ in results]
    traces = {f"b{b}": tr for (b, k), (_, tr) in zip(cells, results) if tr is not None}

    reference = {"prediction_error": evaluate_predictor(ctx.reference, ctx.test), "J": math.nan}
    if ctx.scenario is not None:
        res = ctx.closed_loop(ctx.reference)
        reference["J"] = res.J
        reference["max_kkt"] = res.max_kkt
        traces["unquantized"] = res
    return SweepResult(cfg, records, reference, traces)


def fit_log_slope(b_values, errors):
    """Least-squares line through ``(b, log10(error))``.

    Returns
    -------
    slope, intercept, r2 : float
        ``r2`` is 1 when the points are exactly collinear (including the
        constant case).
    """
    b = np.asarray(b_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if b.size != e.size:
        raise ValueError("b_values and errors differ in length")
    if b.size < 3:
        raise ValueError("need at least three points")
    if not np.all(np.isfinite(e)) or np.any(e <= 0):
        raise ValueError("errors must be positive and finite")
    y = np.log10(e)
    slope, intercept = np.polyfit(b, y, 1)
    resid = y - (slope * b + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def records_csv(records) -> str:
    """Records as CSV text; floats are written with ``repr`` so they round-trip."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(r[k]) for k in RECORD_FIELDS])
    return buf.getvalue()


def load_records(path) -> list:
    """Inverse of the records CSV written by :func:`emit_outputs`."""
    ints = {"b", "seed", "saturated", "soft_violation_steps"}
    with open(path, newline="") as fh:
        return [{k: int(v) if k in ints else float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _write_rows(path, rows) -> None:
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in keys])


def _svg_charts(result: SweepResult, directory) -> list:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    paths = []
    agg = result.aggregate()
    b = [r["b"] for r in agg]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k in ("relA", "relB"):
        ax.errorbar(b, [r[f"{k}_mean"] for r in agg], yerr=[r[f"{k}_std"] for r in agg], marker="o", label=k)
    ax.set_yscale("log")
    ax.set_xlabel("word length b")
    ax.set_ylabel("relative error")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(directory, "error_vs_b.svg")
    fig.savefig(path)
    plt.close(fig)
    paths.append(path)
    if result.config.mpc:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(b, [r["J_mean"] for r in agg], yerr=[r["J_std"] for r in agg], marker="o", label="quantized")
        ax.axhline(result.reference["J"], color="k", ls="--", label="unquantized")
        ax.set_xlabel("word length b")
        ax.set_ylabel("achieved cost J")
        ax.legend()
        fig.tight_layout()
        path = os.path.join(directory, "cost_vs_b.svg")
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths


def emit_outputs(result: SweepResult, directory, svg: bool = False) -> dict:
    """Write records, aggregates, manifest and plot data into ``directory``.

    Returns a mapping from output kind to path.  Nothing is written for an
    empty result.
    """
    if not result.records:
        raise ValueError("sweep result has no records; nothing written")
    try:
        os.makedirs(directory, exist_ok=True)
        paths = {}
        paths["records"] = os.path.join(directory, "records.csv")
        with open(paths["records"], "w", newline="") as fh:
            fh.write(records_csv(result.records))
        agg = result.aggregate()
        paths["aggregate"] = os.path.join(directory, "aggregate.csv")
        _write_rows(paths["aggregate"], agg)

        paths["error_vs_b"] = os.path.join(directory, "error_vs_b.csv")
        _write_rows(paths["error_vs_b"], [
            {"b": r["b"], **{f"{k}_{s}": r[f"{k}_{s}"] for k in ("relA", "relB", "relG", "prediction_error")
                             for s in ("mean", "std")}}
            for r in agg])
        if result.config.mpc:
            paths["cost_vs_b"] = os.path.join(directory, "cost_vs_b.csv")
            _write_rows(paths["cost_vs_b"], [
                {"b": r["b"], "J_mean": r["J_mean"], "J_std": r["J_std"], "J_unquantized": result.reference["J"]}
                for r in agg])
        for label, trace in sorted(result.traces.items()):
            key = f"tracking_{label}"
            paths[key] = os.path.join(directory, f"{key}.csv")
            trace.to_csv(paths[key])

        cfg = result.config
        manifest = {
            "config": cfg.to_dict(),
            "config_sha256": config_hash(cfg),
            "records_sha256": result.digest(),
            "seeds": {
                "master_seed": cfg.master_seed,
                "derivation": "SeedSequence(master_seed, spawn_key=(label, *index))",
                "labels": SEED_LABELS,
                "dither_index": "(b, seed)",
            },
            "reference": result.reference,
            "slopes": result.slopes(),
        }
        paths["manifest"] = os.path.join(directory, "manifest.json")
        with open(paths["manifest"], "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_float)
        if svg:
            for p in _svg_charts(result, directory):
                paths[os.path.splitext(os.path.basename(p))[0] + "_svg"] = p
    except OSError as exc:
        raise OSError(f"cannot write sweep outputs to {directory}: {exc}") from exc
    return paths


def _json_float(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")
