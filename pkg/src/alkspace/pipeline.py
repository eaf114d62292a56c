"""End-to-end workflow: enumerate, select, simulate, fit, predict, evaluate.

Stage artifacts are immutable files named by a short hash of the config
that produced them, so a rerun reuses finished stages and an interrupted
run resumes from the last durable checkpoint. Apart from logging and
timing, every output is a pure function of the configuration.
"""

from __future__ import annotations

import hashlib
import io
import csv
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import active_learning as al
from . import gpr, thermo
from .mgk import KernelMatrix, MgkCalculator, MgkHyperparameters
from .molspace import (
    MolecularGraph,
    descriptors,
    enumerate_alkane_smiles,
    parse_smiles,
)

logger = logging.getLogger(__name__)

PROPERTIES = ("density", "heat_capacity", "hov")

PREDICTION_HEADER = ["smiles", "temperature_K", "density_kgm3", "cp_Jmolk", "hvap_kJmol"]

# Full pairwise kernel matrices beyond this many molecules are refused;
# the memory/time budget is meant for desk-scale carbon ranges.
DENSE_KERNEL_LIMIT = 20000

_HASH_CHARS = 12


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


class StageError(RuntimeError):
    """A stage failed after the configuration was accepted."""


# -- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class GprSettings:
    """Noise levels and the temperature length scale of the composite kernel."""

    al_noise: float = 1e-4
    regression_noise: float = 1e-2
    temperature_length_scale: float = 50.0

    def __post_init__(self) -> None:
        for name in ("al_noise", "regression_noise"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ConfigError(f"{name} must be finite and non-negative, got {value}")
        if not (
            math.isfinite(self.temperature_length_scale)
            and self.temperature_length_scale > 0.0
        ):
            raise ConfigError("temperature_length_scale must be finite and positive")

    def to_dict(self) -> dict[str, float]:
        return {
            "al_noise": self.al_noise,
            "regression_noise": self.regression_noise,
            "temperature_length_scale": self.temperature_length_scale,
        }


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on; two equal configs give identical outputs.

    The JSON form groups the fields into sections (chemical_space, kernel,
    gpr, active_learning, oracle, evaluation) plus a top-level out_dir.
    """

    min_carbons: int = 4
    max_carbons: int = 12
    kernel: MgkHyperparameters = field(default_factory=MgkHyperparameters)
    gpr: GprSettings = field(default_factory=GprSettings)
    thresholds: tuple[float, ...] = (0.5, 0.4, 0.3)
    batch: int = 1000
    al_seed: int = 1
    checkpoint_every: int = 25
    noise_sigma: float = 0.0
    oracle_seed: int = 7
    n_test: int = 200
    split_seed: int = 11
    control_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "out"

    def __post_init__(self) -> None:
        if not (1 <= self.min_carbons <= self.max_carbons):
            raise ConfigError(
                f"carbon range must satisfy 1 <= min <= max, got "
                f"[{self.min_carbons}, {self.max_carbons}]"
            )
        object.__setattr__(self, "thresholds", tuple(self.thresholds))
        if not self.thresholds:
            raise ConfigError("need at least one threshold")
        for t in self.thresholds:
            if not 0.0 < t <= 1.0:
                raise ConfigError(f"thresholds must lie in (0, 1], got {t}")
        if any(b >= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ConfigError(f"thresholds must decrease strictly: {self.thresholds}")
        if self.batch < 1:
            raise ConfigError("batch must be at least 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.n_test < 0:
            raise ConfigError("n_test must be non-negative")
        object.__setattr__(self, "control_seeds", tuple(self.control_seeds))
        if len(set(self.control_seeds)) != len(self.control_seeds):
            raise ConfigError("control_seeds must be distinct")

    # section dicts double as hash inputs for artifact names

    def space_dict(self) -> dict[str, int]:
        return {"min_carbons": self.min_carbons, "max_carbons": self.max_carbons}

    def al_dict(self, n_stages: int | None = None) -> dict[str, object]:
        ts = self.thresholds if n_stages is None else self.thresholds[:n_stages]
        return {
            "thresholds": list(ts),
            "batch": self.batch,
            "seed": self.al_seed,
            "al_noise": self.gpr.al_noise,
        }

    def oracle_dict(self) -> dict[str, object]:
        return {"noise_sigma": self.noise_sigma, "seed": self.oracle_seed}

    def evaluation_dict(self) -> dict[str, object]:
        return {
            "n_test": self.n_test,
            "split_seed": self.split_seed,
            "control_seeds": list(self.control_seeds),
        }

    def to_dict(self) -> dict[str, object]:
        return {
            "chemical_space": self.space_dict(),
            "kernel": self.kernel.to_dict(),
            "gpr": self.gpr.to_dict(),
            "active_learning": {
                "thresholds": list(self.thresholds),
                "batch": self.batch,
                "seed": self.al_seed,
                "checkpoint_every": self.checkpoint_every,
            },
            "oracle": self.oracle_dict(),
            "evaluation": self.evaluation_dict(),
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> "PipelineConfig":
        known_sections = {
            "chemical_space",
            "kernel",
            "gpr",
            "active_learning",
            "oracle",
            "evaluation",
            "out_dir",
        }
        unknown = set(raw) - known_sections
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        def section(name: str) -> dict[str, object]:
            value = raw.get(name, {})
            if not isinstance(value, Mapping):
                raise ConfigError(f"config section {name!r} must be a mapping")
            return dict(value)

        space = section("chemical_space")
        alsec = section("active_learning")
        orac = section("oracle")
        evalsec = section("evaluation")
        gprsec = section("gpr")
        try:
            kernel = MgkHyperparameters.from_dict(section("kernel"))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        kwargs: dict[str, object] = {
            "min_carbons": space.pop("min_carbons", 4),
            "max_carbons": space.pop("max_carbons", 12),
            "kernel": kernel,
            "thresholds": tuple(alsec.pop("thresholds", (0.5, 0.4, 0.3))),
            "batch": alsec.pop("batch", 1000),
            "al_seed": alsec.pop("seed", 1),
            "checkpoint_every": alsec.pop("checkpoint_every", 25),
            "noise_sigma": orac.pop("noise_sigma", 0.0),
            "oracle_seed": orac.pop("seed", 7),
            "n_test": evalsec.pop("n_test", 200),
            "split_seed": evalsec.pop("split_seed", 11),
            "control_seeds": tuple(evalsec.pop("control_seeds", (0, 1, 2, 3, 4))),
            "out_dir": raw.get("out_dir", "out"),
        }
        for name, sec in (
            ("chemical_space", space),
            ("active_learning", alsec),
            ("oracle", orac),
            ("evaluation", evalsec),
        ):
            if sec:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(sec)}")
        try:
            gpr_settings = GprSettings(**gprsec)  # type: ignore[arg-type]
        except TypeError as exc:
            raise ConfigError(f"bad gpr section: {exc}") from exc
        kwargs["gpr"] = gpr_settings
        try:
            return cls(**kwargs)  # type: ignore[arg-type]
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str) -> "PipelineConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(raw)

    def to_json(self, path: str) -> None:
        _write_atomic(path, json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def content_hash(self) -> str:
        # out_dir names the workspace, it does not influence results
        d = self.to_dict()
        d.pop("out_dir")
        return _hash_obj(d)


# -- metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    """Error summary of one prediction column; r2 is None when the truth
    column has zero variance."""

    rmse: float
    mae: float
    r2: float | None

    @property
    def r2_defined(self) -> bool:
        return self.r2 is not None

    def to_dict(self) -> dict[str, object]:
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "r2": self.r2,
            "r2_defined": self.r2_defined,
        }


def evaluate(predictions: Sequence[float], truths: Sequence[float]) -> Metrics:
    """RMSE, MAE and R2 of predictions against truths (equal-length, nonempty)."""
    p = np.asarray(predictions, dtype=float).reshape(-1)
    t = np.asarray(truths, dtype=float).reshape(-1)
    if p.size == 0 or p.size != t.size:
        raise ValueError(
            f"need equal nonzero lengths, got {p.size} predictions, {t.size} truths"
        )
    err = p - t
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    ss_res = float(np.sum(err * err))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    # quadratic mean dominates arithmetic mean; allow rounding slack
    assert rmse >= mae - 1e-12 * max(1.0, mae)
    return Metrics(rmse=rmse, mae=mae, r2=r2)


@dataclass(frozen=True)
class StageResult:
    """Per-stage outcome of the staged run."""

    stage: int
    threshold: float
    n_selected: int
    n_train_rows: int
    selected_fraction: float
    metrics: Mapping[str, Metrics]

    def to_dict(self) -> dict[str, object]:
        return {
            "stage": self.stage,
            "threshold": self.threshold,
            "n_selected": self.n_selected,
            "n_train_rows": self.n_train_rows,
            "selected_fraction": self.selected_fraction,
            "metrics": {k: m.to_dict() for k, m in sorted(self.metrics.items())},
        }


@dataclass(frozen=True)
class EvalReport:
    """Per-property, per-stage error metrics of a full run.

    ``runtime_seconds`` is informational and excluded from the serialized
    form so that reruns of one config produce byte-identical report files.
    """

    config_hash: str
    n_molecules: int
    n_test_molecules: int
    n_test_rows: int
    stages: tuple[StageResult, ...]
    runtime_seconds: float | None = None

    def to_dict(self) -> dict[str, object]:
        return {
            "config_hash": self.config_hash,
            "n_molecules": self.n_molecules,
            "n_test_molecules": self.n_test_molecules,
            "n_test_rows": self.n_test_rows,
            "stages": [s.to_dict() for s in self.stages],
        }


# -- small shared helpers ----------------------------------------------------


def _hash_obj(obj: object) -> str:
    payload = json.dumps(obj, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:_HASH_CHARS]


def _write_atomic(path: str, text: str) -> None:
    """Write-then-rename so readers never observe a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-artifact-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_dataset_atomic(path: str, series: Sequence[thermo.ThermoSeries]) -> int:
    """thermo.write_dataset through a temp file, renamed into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-dataset-")
    os.close(fd)
    try:
        count = thermo.write_dataset(tmp, series)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return count


def load_molecule_file(path: str) -> list[str]:
    """Molecule ids from a text file, one per line, blanks skipped."""
    with open(path) as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if not ids:
        raise ValueError(f"no molecules in {path!r}")
    return ids


def _graphs_for(ids: Sequence[str]) -> list[MolecularGraph]:
    return [parse_smiles(m) for m in ids]


# -- test split ---------------------------------------------------------------


def split_test(
    ccs: Sequence[str],
    selected_all: Sequence[str],
    n_test: int,
    seed: int,
) -> list[str]:
    """Seeded uniform sample of n_test molecules from ccs minus selected_all."""
    if n_test < 0:
        raise ValueError("n_test must be non-negative")
    if n_test == 0:
        return []
    excluded = set(selected_all)
    pool = [m for m in ccs if m not in excluded]
    if n_test > len(pool):
        raise ValueError(
            f"test size {n_test} exceeds the {len(pool)} molecules left "
            "after excluding the selected set"
        )
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=n_test, replace=False)
    return [pool[int(i)] for i in picks]


# -- workspace plumbing -------------------------------------------------------


class _Workspace:
    """Artifact paths and cached stage products for one configuration."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        os.makedirs(config.out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.config.out_dir, name)

    # molecule list

    def molecule_ids(self) -> list[str]:
        cfg = self.config
        path = self.path(f"molecules_{_hash_obj(cfg.space_dict())}.txt")
        if os.path.exists(path):
            ids = load_molecule_file(path)
            logger.info("reusing molecule list %s (%d molecules)", path, len(ids))
            return ids
        t0 = time.monotonic()
        ids = [str(s) for s in enumerate_alkane_smiles(cfg.min_carbons, cfg.max_carbons)]
        _write_atomic(path, "\n".join(ids) + "\n")
        logger.info(
            "enumerated %d molecules (C%d..C%d) in %.1fs -> %s",
            len(ids), cfg.min_carbons, cfg.max_carbons, time.monotonic() - t0, path,
        )
        return ids

    # kernel matrix

    def kernel_hash(self) -> str:
        cfg = self.config
        return _hash_obj({"space": cfg.space_dict(), "kernel": cfg.kernel.to_dict()})

    def kernel_matrix(self, ids: Sequence[str]) -> KernelMatrix:
        cfg = self.config
        if len(ids) > DENSE_KERNEL_LIMIT:
            raise StageError(
                f"{len(ids)} molecules exceed the dense kernel limit "
                f"({DENSE_KERNEL_LIMIT}); narrow the carbon range"
            )
        calc = MgkCalculator(cfg.kernel)
        graphs = _graphs_for(ids)
        cache = self.path(f"kernel_{self.kernel_hash()}.csv")
        if os.path.exists(cache):
            n = calc.load_cache(cache)
            logger.info("loaded %d cached kernel entries from %s", n, cache)
        t0 = time.monotonic()
        matrix = calc.matrix(graphs)
        if not os.path.exists(cache):
            fd, tmp = tempfile.mkstemp(dir=cfg.out_dir, prefix=".tmp-kernel-")
            os.close(fd)
            try:
                calc.save_cache(tmp)
                os.replace(tmp, cache)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        logger.info(
            "kernel matrix %dx%d ready in %.1fs", len(ids), len(ids),
            time.monotonic() - t0,
        )
        return matrix

    # staged active learning

    def al_stage_hash(self, n_stages: int) -> str:
        cfg = self.config
        return _hash_obj(
            {
                "space": cfg.space_dict(),
                "kernel": cfg.kernel.to_dict(),
                "al": cfg.al_dict(n_stages),
            }
        )

    def al_states(self, ids: Sequence[str], provider) -> list[al.AlState]:
        """Terminal state per threshold stage, reusing finished checkpoints."""
        cfg = self.config
        states: list[al.AlState] = []
        prev: al.AlState | None = None
        for i, threshold in enumerate(cfg.thresholds):
            path = self.path(f"al_stage{i + 1}_{self.al_stage_hash(i + 1)}.json")
            state: al.AlState | None = None
            if os.path.exists(path):
                loaded = al.load_checkpoint(path)
                if loaded.universe != frozenset(ids):
                    raise StageError(
                        f"checkpoint {path} does not cover the configured molecule set"
                    )
                if loaded.is_terminal:
                    logger.info(
                        "stage %d: reusing finished selection %s (|S|=%d)",
                        i + 1, path, len(loaded.selected),
                    )
                    state = loaded
                else:
                    logger.info("stage %d: resuming from %s", i + 1, path)
                    state = al.al_resume(
                        loaded, provider, noise=cfg.gpr.al_noise,
                        checkpoint_path=path, checkpoint_every=cfg.checkpoint_every,
                    )
            elif i == 0:
                t0 = time.monotonic()
                state = al.al_run(
                    ids, threshold, cfg.batch, cfg.al_seed, provider,
                    noise=cfg.gpr.al_noise, checkpoint_path=path,
                    checkpoint_every=cfg.checkpoint_every,
                )
                logger.info(
                    "stage 1 (U_t=%g): |S|=%d after %d iterations, %.1fs",
                    threshold, len(state.selected), state.iteration,
                    time.monotonic() - t0,
                )
            else:
                assert prev is not None
                t0 = time.monotonic()
                state = al.al_continue(
                    prev, threshold, provider, noise=cfg.gpr.al_noise,
                    checkpoint_path=path, checkpoint_every=cfg.checkpoint_every,
                )
                logger.info(
                    "stage %d (U_t=%g): |S|=%d, %.1fs",
                    i + 1, threshold, len(state.selected), time.monotonic() - t0,
                )
            states.append(state)
            prev = state
        return states

    # oracle datasets

    def dataset_for(self, tag: str, stage_hash: str, ids: Sequence[str]) -> list[thermo.DatasetRow]:
        """Simulated dataset for the given molecules, cached as a CSV artifact.

        Row order follows ``ids``; the file carries all rows with their QC
        flag, training-side filtering happens at read time.
        """
        cfg = self.config
        h = _hash_obj({"members": stage_hash, "oracle": cfg.oracle_dict()})
        path = self.path(f"dataset_{tag}_{h}.csv")
        if not os.path.exists(path):
            t0 = time.monotonic()
            series = simulate_molecules(ids, cfg.noise_sigma, cfg.oracle_seed)
            write_dataset_atomic(path, series)
            logger.info(
                "simulated %d molecules (%s) in %.1fs -> %s",
                len(ids), tag, time.monotonic() - t0, path,
            )
        return thermo.read_dataset(path)


def simulate_molecules(
    ids: Sequence[str], noise_sigma: float, seed: int
) -> list[thermo.ThermoSeries]:
    """Oracle series for each molecule id; QC failures are logged."""
    out = []
    for m in ids:
        series = thermo.simulate_series(parse_smiles(m), noise_sigma, seed)
        if not series.qc.passed:
            logger.warning(
                "QC drop %s: failed %s", m, ",".join(series.qc.failed_checks())
            )
        out.append(series)
    return out


def training_arrays(
    rows: Sequence[thermo.DatasetRow],
) -> tuple[list[tuple[str, float]], np.ndarray]:
    """(molecule, temperature) keys and target matrix of QC-passing rows."""
    kept = [r for r in rows if r.qc_pass]
    keys = [(r.smiles, r.temperature) for r in kept]
    targets = np.array([[r.density, r.heat_capacity, r.hov] for r in kept], dtype=float)
    return keys, targets


def _composite(provider, cfg: PipelineConfig):
    return gpr.TemperatureProductKernel(provider, cfg.gpr.temperature_length_scale)


def _fit_on_rows(rows: Sequence[thermo.DatasetRow], provider, cfg: PipelineConfig):
    keys, targets = training_arrays(rows)
    if not keys:
        raise StageError("no QC-passing training rows")
    return gpr.fit(keys, targets, cfg.gpr.regression_noise, _composite(provider, cfg))


def _metrics_by_property(
    predictions: np.ndarray, truths: np.ndarray
) -> dict[str, Metrics]:
    return {
        prop: evaluate(predictions[:, j], truths[:, j])
        for j, prop in enumerate(PROPERTIES)
    }


# -- the full staged run ------------------------------------------------------


def run_alms(config: PipelineConfig) -> EvalReport:
    """Enumerate, select in stages, simulate, fit, and score on a held-out set.

    Emits (all under config.out_dir, all named by config-section hashes):
    the molecule list, the kernel cache, one AL checkpoint and one training
    dataset per stage, the test dataset, parity CSVs, a summary CSV, and
    the report JSON. Returns the report with wall-clock runtime attached.
    """
    t_start = time.monotonic()
    ws = _Workspace(config)
    ids = ws.molecule_ids()
    if len(ids) < 2:
        raise ConfigError("need at least two molecules; widen the carbon range")
    matrix = ws.kernel_matrix(ids)
    states = ws.al_states(ids, matrix)

    final_selected = states[-1].selected
    if config.n_test > len(ids) - len(final_selected):
        raise ConfigError(
            f"n_test={config.n_test} does not fit: {len(ids)} molecules minus "
            f"{len(final_selected)} selected leaves too few"
        )
    test_ids = split_test(ids, final_selected, config.n_test, config.split_seed)
    if not test_ids:
        raise ConfigError("n_test must be positive for a scored run")
    test_rows = ws.dataset_for(
        "test", _hash_obj({"al": ws.al_stage_hash(len(config.thresholds)),
                           "split": config.evaluation_dict()}),
        test_ids,
    )
    test_keys = [(r.smiles, r.temperature) for r in test_rows]
    test_truth = np.array(
        [[r.density, r.heat_capacity, r.hov] for r in test_rows], dtype=float
    )

    stage_results: list[StageResult] = []
    parity: dict[tuple[int, str], list[tuple[str, float, float, float]]] = {}
    for i, state in enumerate(states):
        stage_no = i + 1
        train_rows = ws.dataset_for(
            f"stage{stage_no}", ws.al_stage_hash(stage_no), list(state.selected)
        )
        model = _fit_on_rows(train_rows, matrix, config)
        t0 = time.monotonic()
        preds = model.predict_mean(test_keys)
        logger.info(
            "stage %d: predicted %d test rows in %.1fs",
            stage_no, len(test_keys), time.monotonic() - t0,
        )
        metrics = _metrics_by_property(preds, test_truth)
        n_train_rows = int(sum(1 for r in train_rows if r.qc_pass))
        stage_results.append(
            StageResult(
                stage=stage_no,
                threshold=state.threshold,
                n_selected=len(state.selected),
                n_train_rows=n_train_rows,
                selected_fraction=len(state.selected) / len(ids),
                metrics=metrics,
            )
        )
        for j, prop in enumerate(PROPERTIES):
            parity[(stage_no, prop)] = [
                (k[0], k[1], float(test_truth[r, j]), float(preds[r, j]))
                for r, k in enumerate(test_keys)
            ]
        for prop in PROPERTIES:
            m = metrics[prop]
            logger.info(
                "stage %d %s: rmse=%.4g mae=%.4g r2=%s",
                stage_no, prop, m.rmse, m.mae,
                "undefined" if m.r2 is None else f"{m.r2:.4f}",
            )

    report = EvalReport(
        config_hash=config.content_hash(),
        n_molecules=len(ids),
        n_test_molecules=len(test_ids),
        n_test_rows=len(test_keys),
        stages=tuple(stage_results),
        runtime_seconds=time.monotonic() - t_start,
    )
    report_path = ws.path(f"report_{report.config_hash}.json")
    _write_atomic(report_path, json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    export_plot_data(report, parity, config.out_dir)
    logger.info(
        "run complete in %.1fs, report at %s", report.runtime_seconds, report_path
    )
    return report


# -- plot-data export ---------------------------------------------------------


def export_plot_data(
    report: EvalReport,
    predictions: Mapping[tuple[int, str], Sequence[tuple[str, float, float, float]]],
    out_dir: str,
) -> list[str]:
    """Parity CSV per (stage, property) plus one metrics summary CSV.

    ``predictions`` maps (stage, property) to (molecule, temperature,
    truth, prediction) rows. Deterministic inputs give identical bytes,
    so re-export is idempotent.
    """
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []
    for (stage, prop), rows in sorted(predictions.items()):
        path = os.path.join(
            out_dir, f"parity_stage{stage}_{prop}_{report.config_hash}.csv"
        )
        body = [
            [mol, repr(float(t)), repr(float(truth)), repr(float(pred))]
            for mol, t, truth, pred in rows
        ]
        _write_atomic(
            path,
            _csv_text(["smiles", "temperature_K", "truth", "prediction"], body),
        )
        written.append(path)
    summary_rows = []
    for stage in report.stages:
        for prop in sorted(stage.metrics):
            m = stage.metrics[prop]
            summary_rows.append(
                [
                    prop,
                    stage.stage,
                    repr(float(stage.threshold)),
                    stage.n_selected,
                    stage.n_train_rows,
                    report.n_test_rows,
                    repr(m.rmse),
                    repr(m.mae),
                    "" if m.r2 is None else repr(m.r2),
                ]
            )
    summary_path = os.path.join(out_dir, f"summary_{report.config_hash}.csv")
    _write_atomic(
        summary_path,
        _csv_text(
            [
                "property", "stage", "threshold", "n_selected",
                "n_train_rows", "n_test_rows", "rmse", "mae", "r2",
            ],
            summary_rows,
        ),
    )
    written.append(summary_path)
    return written


# -- AL vs random control -----------------------------------------------------


@dataclass(frozen=True)
class SeedComparison:
    """Both arms scored on the same evaluation rows for one control seed."""

    seed: int
    n_eval_rows: int
    al_metrics: Mapping[str, Metrics]
    random_metrics: Mapping[str, Metrics]

    def to_dict(self) -> dict[str, object]:
        return {
            "seed": self.seed,
            "n_eval_rows": self.n_eval_rows,
            "al": {k: m.to_dict() for k, m in sorted(self.al_metrics.items())},
            "random": {k: m.to_dict() for k, m in sorted(self.random_metrics.items())},
        }


@dataclass(frozen=True)
class ComparisonReport:
    """Stage-1 AL selection versus equally sized random selections."""

    config_hash: str
    n_train_molecules: int
    seeds: tuple[int, ...]
    per_seed: tuple[SeedComparison, ...]
    median_rmse_al: Mapping[str, float]
    median_rmse_random: Mapping[str, float]
    runtime_seconds: float | None = None

    def al_wins(self, prop: str) -> bool:
        return self.median_rmse_al[prop] <= self.median_rmse_random[prop]

    def to_dict(self) -> dict[str, object]:
        return {
            "config_hash": self.config_hash,
            "n_train_molecules": self.n_train_molecules,
            "seeds": list(self.seeds),
            "per_seed": [s.to_dict() for s in self.per_seed],
            "median_rmse_al": dict(sorted(self.median_rmse_al.items())),
            "median_rmse_random": dict(sorted(self.median_rmse_random.items())),
            "al_wins": {p: self.al_wins(p) for p in sorted(self.median_rmse_al)},
        }


def compare_al_random(config: PipelineConfig) -> ComparisonReport:
    """Score the stage-1 AL training set against random sets of equal size.

    Controls are drawn from the held-out test pool with dedicated seeds;
    both arms are evaluated on the test rows not used by the control, and
    per-property medians over seeds are reported.
    """
    if not config.control_seeds:
        raise ConfigError("compare_al_random needs at least one control seed")
    t_start = time.monotonic()
    ws = _Workspace(config)
    ids = ws.molecule_ids()
    matrix = ws.kernel_matrix(ids)
    states = ws.al_states(ids, matrix)
    s1 = states[0]

    test_ids = split_test(ids, states[-1].selected, config.n_test, config.split_seed)
    if len(s1.selected) > len(test_ids):
        raise ConfigError(
            f"cannot draw a {len(s1.selected)}-molecule control from a "
            f"{len(test_ids)}-molecule test pool; raise n_test"
        )
    test_rows = ws.dataset_for(
        "test", _hash_obj({"al": ws.al_stage_hash(len(config.thresholds)),
                           "split": config.evaluation_dict()}),
        test_ids,
    )
    rows_by_molecule: dict[str, list[thermo.DatasetRow]] = {}
    for r in test_rows:
        rows_by_molecule.setdefault(r.smiles, []).append(r)

    stage1_rows = ws.dataset_for("stage1", ws.al_stage_hash(1), list(s1.selected))
    al_model = _fit_on_rows(stage1_rows, matrix, config)

    per_seed: list[SeedComparison] = []
    for seed in config.control_seeds:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(test_ids), size=len(s1.selected), replace=False)
        control_ids = [test_ids[int(i)] for i in picks]
        control_set = set(control_ids)
        eval_ids = [m for m in test_ids if m not in control_set]
        if not eval_ids:
            raise ConfigError("control set swallowed the whole test pool")

        control_rows = [r for m in control_ids for r in rows_by_molecule[m]]
        random_model = _fit_on_rows(control_rows, matrix, config)

        eval_rows = [r for m in eval_ids for r in rows_by_molecule[m]]
        eval_keys = [(r.smiles, r.temperature) for r in eval_rows]
        truth = np.array(
            [[r.density, r.heat_capacity, r.hov] for r in eval_rows], dtype=float
        )
        al_pred = al_model.predict_mean(eval_keys)
        rnd_pred = random_model.predict_mean(eval_keys)
        comparison = SeedComparison(
            seed=seed,
            n_eval_rows=len(eval_rows),
            al_metrics=_metrics_by_property(al_pred, truth),
            random_metrics=_metrics_by_property(rnd_pred, truth),
        )
        per_seed.append(comparison)
        for prop in PROPERTIES:
            logger.info(
                "seed %d %s: rmse AL=%.4g random=%.4g",
                seed, prop,
                comparison.al_metrics[prop].rmse,
                comparison.random_metrics[prop].rmse,
            )

    median_al = {
        p: float(np.median([s.al_metrics[p].rmse for s in per_seed]))
        for p in PROPERTIES
    }
    median_rnd = {
        p: float(np.median([s.random_metrics[p].rmse for s in per_seed]))
        for p in PROPERTIES
    }
    report = ComparisonReport(
        config_hash=config.content_hash(),
        n_train_molecules=len(s1.selected),
        seeds=tuple(config.control_seeds),
        per_seed=tuple(per_seed),
        median_rmse_al=median_al,
        median_rmse_random=median_rnd,
        runtime_seconds=time.monotonic() - t_start,
    )
    path = ws.path(f"comparison_{report.config_hash}.json")
    _write_atomic(path, json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    for prop in PROPERTIES:
        logger.info(
            "median rmse %s: AL=%.4g random=%.4g -> %s",
            prop, median_al[prop], median_rnd[prop],
            "AL wins" if report.al_wins(prop) else "random wins",
        )
    return report


# -- standalone fit/predict/evaluate (CLI building blocks) --------------------


@dataclass(frozen=True)
class PredictionRow:
    smiles: str
    temperature: float
    density: float
    heat_capacity: float
    hov: float


def predict_properties(
    train_rows: Sequence[thermo.DatasetRow],
    molecule_ids: Sequence[str],
    config: PipelineConfig,
) -> list[PredictionRow]:
    """Fit on a dataset and predict all three properties for each molecule
    on its own oracle temperature grid."""
    calc = MgkCalculator(config.kernel)
    train_graphs = _graphs_for(sorted({r.smiles for r in train_rows}))
    query_graphs = _graphs_for(molecule_ids)
    calc.register(train_graphs)
    query_keys = calc.register(query_graphs)
    model = _fit_on_rows(train_rows, calc, config)
    out: list[PredictionRow] = []
    queries: list[tuple[str, float]] = []
    for g, key in zip(query_graphs, query_keys):
        tc = thermo.synth_critical_temperature(descriptors(g))
        for t in thermo.temperature_grid(tc):
            queries.append((key, float(t)))
    preds = model.predict_mean(queries)
    for (key, t), row in zip(queries, preds):
        out.append(
            PredictionRow(
                smiles=key,
                temperature=t,
                density=float(row[0]),
                heat_capacity=float(row[1]),
                hov=float(row[2]),
            )
        )
    return out


def write_predictions(path: str, rows: Sequence[PredictionRow]) -> int:
    body = [
        [r.smiles, repr(r.temperature), repr(r.density), repr(r.heat_capacity), repr(r.hov)]
        for r in rows
    ]
    _write_atomic(path, _csv_text(PREDICTION_HEADER, body))
    return len(rows)


def read_predictions(path: str) -> list[PredictionRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTION_HEADER:
            raise ValueError(f"unrecognized prediction header in {path!r}")
        return [
            PredictionRow(
                smiles=row[0],
                temperature=float(row[1]),
                density=float(row[2]),
                heat_capacity=float(row[3]),
                hov=float(row[4]),
            )
            for row in reader
        ]


def evaluate_predictions(
    predictions: Sequence[PredictionRow],
    truths: Sequence[thermo.DatasetRow],
) -> dict[str, Metrics]:
    """Join predictions to truth rows on (molecule, temperature) and score
    each property; every prediction must find its truth row."""
    truth_map = {(r.smiles, r.temperature): r for r in truths}
    pred_cols: list[list[float]] = []
    truth_cols: list[list[float]] = []
    for p in predictions:
        key = (p.smiles, p.temperature)
        if key not in truth_map:
            raise ValueError(f"no truth row for {key}")
        t = truth_map[key]
        pred_cols.append([p.density, p.heat_capacity, p.hov])
        truth_cols.append([t.density, t.heat_capacity, t.hov])
    if not pred_cols:
        raise ValueError("no predictions to evaluate")
    pm = np.array(pred_cols)
    tm = np.array(truth_cols)
    return _metrics_by_property(pm, tm)
