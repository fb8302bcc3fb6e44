"""The data-driven design loop: select elites, compress, train, generate, evaluate, repeat.

A run is described by a :class:`RunConfig` (usually read from an INI file)
and carried by a :class:`RunState`, which can be checkpointed to a single
``.npz`` file and resumed bit-identically.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import os
import time
import warnings
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import fem
from .field import DensityField, Mesh, Sample, SampleStatus, load_field, save_field
from .initgen import generate_initial_set
from .levelset import normalize_field
from .pareto import dominates, hypervolume, reference_point, select_elites, write_front_csv
from .pca import DegeneratePCAWarning, PCACompressor
from .vae import TrainConfig, TrainingDivergedError, generate, train

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

STEPS = ("compress", "train", "generate", "restore", "normalize", "evaluate", "merge", "select")


class CheckpointError(RuntimeError):
    """Unreadable, truncated or incompatible checkpoint."""


class IterationError(RuntimeError):
    """An iteration could not produce new designs (VAE divergence, degenerate PCA)."""


class InitialSetError(RuntimeError):
    """The initial designs contain nothing that can be evaluated."""


# -- configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    """Everything that determines a run.

    ``elite_cap=None`` keeps the whole first front. ``n_gen=None`` generates
    as many designs per iteration as there are elites. ``threads=0`` uses one
    evaluation thread per CPU.
    """

    problem: str = "mech2d"
    problem_options: dict = dc_field(default_factory=dict)
    spec: fem.ProblemSpec | None = None
    elite_cap: int | None = 400
    iterations: int = 50
    train: TrainConfig = dc_field(default_factory=TrainConfig)
    h: float = 0.01
    n_gen: int | None = None
    rng_seed: int = 0
    output: str = "run"
    checkpoint_every: int = 1
    threads: int = 0
    solver: str = "cg"
    sampling: str = "crossover"
    blend_alpha: float = 0.5
    warm_start: bool = False
    max_retries: int = 2
    stop_on_stagnation: bool = False
    stagnation_window: int = 10
    stagnation_tol: float = 1e-3
    initial_count: int = 30
    initial_fields: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.elite_cap is not None and self.elite_cap < 2:
            raise ValueError(f"elite_cap must be >= 2, got {self.elite_cap}")
        if self.n_gen is not None and self.n_gen < 1:
            raise ValueError(f"n_gen must be >= 1, got {self.n_gen}")
        if not self.h > 0:
            raise ValueError(f"band half-width h must be positive, got {self.h}")
        if self.sampling not in ("crossover", "prior"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.max_retries < 0 or self.checkpoint_every < 0 or self.threads < 0:
            raise ValueError("max_retries, checkpoint_every and threads must be >= 0")

    def problem_spec(self) -> fem.ProblemSpec:
        if self.spec is not None:
            return self.spec
        return fem.builtin_problem(self.problem, **self.problem_options)

    def n_threads(self) -> int:
        n = self.threads or os.cpu_count() or 1
        cap = os.environ.get("DDTD_THREADS")
        if cap:
            n = min(n, max(1, int(cap)))
        return n


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return " ".join(str(v) for v in value)
    return str(value)


def _parse_number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def config_to_ini(config: RunConfig) -> str:
    """INI text that :func:`parse_config` reads back to an equal config."""
    if config.spec is not None:
        raise ValueError("an inline ProblemSpec cannot be written to a config file")
    cp = configparser.ConfigParser()
    cp["run"] = {
        "problem": config.problem,
        "iterations": config.iterations,
        "elite_cap": _format_value(config.elite_cap),
        "n_gen": _format_value(config.n_gen),
        "rng_seed": config.rng_seed,
        "output": config.output,
        "checkpoint_every": config.checkpoint_every,
        "threads": config.threads,
        "solver": config.solver,
        "max_retries": config.max_retries,
        "stop_on_stagnation": _format_value(config.stop_on_stagnation),
        "stagnation_window": config.stagnation_window,
        "stagnation_tol": repr(config.stagnation_tol),
    }
    cp["problem"] = {k: _format_value(v) for k, v in config.problem_options.items()}
    cp["initial"] = {
        "count": config.initial_count,
        "fields": _format_value(config.initial_fields),
    }
    t = config.train
    cp["train"] = {
        "learning_rate": repr(t.learning_rate),
        "batch_size": t.batch_size,
        "epochs": t.epochs,
        "n_latent": t.n_latent,
        "beta": repr(t.beta),
        "hidden": _format_value(t.hidden),
        "sampling": config.sampling,
        "blend_alpha": repr(config.blend_alpha),
        "warm_start": _format_value(config.warm_start),
    }
    cp["levelset"] = {"h": repr(config.h)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_config(text: str) -> RunConfig:
    """Build a :class:`RunConfig` from INI text. Missing keys take defaults."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    known = {"run", "problem", "initial", "train", "levelset"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    run = cp["run"] if cp.has_section("run") else {}
    tr = cp["train"] if cp.has_section("train") else {}
    ini = cp["initial"] if cp.has_section("initial") else {}
    d = RunConfig.__dataclass_fields__
    td = TrainConfig()

    def get(section, key, conv, default):
        raw = section.get(key, None) if section else None
        if raw is None:
            return default
        raw = raw.strip()
        if raw == "" or raw.lower() == "none":
            return None
        return conv(raw)

    def boolean(raw):
        return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]

    hidden = get(tr, "hidden", lambda s: tuple(int(v) for v in s.split()), None)
    train_cfg = TrainConfig(
        learning_rate=get(tr, "learning_rate", float, td.learning_rate),
        batch_size=get(tr, "batch_size", int, td.batch_size),
        epochs=get(tr, "epochs", int, td.epochs),
        n_latent=get(tr, "n_latent", int, td.n_latent),
        beta=get(tr, "beta", float, td.beta),
        hidden=hidden,
    )
    options = {}
    if cp.has_section("problem"):
        for key, raw in cp["problem"].items():
            parts = raw.split()
            if key == "dims":
                options[key] = tuple(int(p) for p in parts)
            elif parts:
                options[key] = _parse_number(parts[0])
    h = get(cp["levelset"] if cp.has_section("levelset") else None, "h", float,
            d["h"].default)
    elite_cap = get(run, "elite_cap", int, d["elite_cap"].default)
    return RunConfig(
        problem=get(run, "problem", str, d["problem"].default),
        problem_options=options,
        elite_cap=None if elite_cap in (None, 0) else elite_cap,
        iterations=get(run, "iterations", int, d["iterations"].default),
        train=train_cfg,
        h=h,
        n_gen=get(run, "n_gen", int, None),
        rng_seed=get(run, "rng_seed", int, d["rng_seed"].default),
        output=get(run, "output", str, d["output"].default),
        checkpoint_every=get(run, "checkpoint_every", int, d["checkpoint_every"].default),
        threads=get(run, "threads", int, d["threads"].default),
        solver=get(run, "solver", str, d["solver"].default),
        sampling=get(tr, "sampling", str, d["sampling"].default),
        blend_alpha=get(tr, "blend_alpha", float, d["blend_alpha"].default),
        warm_start=get(tr, "warm_start", boolean, False),
        max_retries=get(run, "max_retries", int, d["max_retries"].default),
        stop_on_stagnation=get(run, "stop_on_stagnation", boolean, False),
        stagnation_window=get(run, "stagnation_window", int, d["stagnation_window"].default),
        stagnation_tol=get(run, "stagnation_tol", float, d["stagnation_tol"].default),
        initial_count=get(ini, "count", int, d["initial_count"].default),
        initial_fields=get(ini, "fields", str, None),
    )


def load_config(path) -> RunConfig:
    """Read an INI run config. ``DDTD_SEED`` overrides its seed.

    A relative ``output`` or initial-fields directory is taken relative to
    the config file.
    """
    path = Path(path)
    config = parse_config(path.read_text())
    base = path.resolve().parent
    config.output = str(base / config.output)
    if config.initial_fields:
        config.initial_fields = str(base / config.initial_fields)
    seed = os.environ.get("DDTD_SEED")
    if seed:
        config.rng_seed = int(seed)
    return config


# -- run state ---------------------------------------------------------------

@dataclass
class RunState:
    """Iteration index, every evaluated sample, the elites and the indicator trace.

    ``hv_trace[i]`` is the normalized hypervolume of the elites after
    iteration ``i`` (entry 0 is the initial set, 1.0 by construction).
    """

    iteration: int
    samples: list[Sample]
    elite_ids: list[int]
    hv_trace: list[float]
    reference: np.ndarray
    baseline: float
    rng: np.random.Generator
    next_id: int
    model: object = None  # last VAE, kept only for warm starts

    @property
    def by_id(self) -> dict[int, Sample]:
        return {s.id: s for s in self.samples}

    @property
    def elites(self) -> list[Sample]:
        index = self.by_id
        return [index[i] for i in self.elite_ids]


def _feasible_objectives(samples) -> np.ndarray:
    objs = [s.objectives for s in samples
            if s.status is SampleStatus.OK and np.all(s.objectives < fem.SENTINEL)]
    return np.array(objs, dtype=float)


def front_hypervolume(state: RunState, elites=None) -> float:
    """Normalized hypervolume of ``elites`` (default: the current elites)."""
    elites = state.elites if elites is None else elites
    objs = _feasible_objectives(elites)
    if objs.size == 0:
        return 0.0
    return hypervolume(objs, state.reference) / state.baseline


def check_elites(state: RunState) -> None:
    """Raise AssertionError unless the elites are mutually non-dominated members of X_all."""
    index = state.by_id
    for i in state.elite_ids:
        if i not in index:
            raise AssertionError(f"elite {i} is not among the evaluated samples")
    objs = [index[i].objectives for i in state.elite_ids]
    for a in range(len(objs)):
        for b in range(len(objs)):
            if a != b and dominates(objs[a], objs[b]):
                raise AssertionError(
                    f"elite {state.elite_ids[a]} dominates elite {state.elite_ids[b]}")


def _select(samples, cap):
    return select_elites(samples, cap if cap is not None else max(1, len(samples)))


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def evaluate_samples(samples, spec, threads=1, solver="cg"):
    """Evaluate samples in place, concurrently; results are merged by id."""
    def job(s):
        return s.id, fem.evaluate(s.field, spec, solver)

    results = dict(_map(job, list(samples), threads))
    for s in samples:
        objs, status, info = results[s.id]
        s.objectives, s.status = objs, status
        s.info.update(info)
    return samples


def initial_state(fields, config: RunConfig, spec=None, threads=None) -> RunState:
    """Evaluate the initial designs, select elites and fix the indicator reference."""
    spec = spec or config.problem_spec()
    threads = config.n_threads() if threads is None else threads
    samples = [Sample(f, i, 0) for i, f in enumerate(fields)]
    evaluate_samples(samples, spec, threads, config.solver)
    feasible = _feasible_objectives(samples)
    if feasible.size == 0:
        counts = {st.value: sum(s.status is st for s in samples) for st in SampleStatus}
        flags = sorted({str(s.info.get("flag", s.info.get("error", ""))) for s in samples})
        raise InitialSetError(f"none of the {len(samples)} initial designs is evaluable: "
                              f"status counts {counts}, flags {flags}")
    elites = _select(samples, config.elite_cap)
    elite_objs = _feasible_objectives(elites)
    reference = reference_point(elite_objs)
    baseline = hypervolume(elite_objs, reference)
    if not baseline > 0:
        raise InitialSetError("initial elites span zero hypervolume")
    state = RunState(
        iteration=0, samples=samples, elite_ids=[s.id for s in elites], hv_trace=[1.0],
        reference=reference, baseline=baseline,
        rng=np.random.default_rng(config.rng_seed), next_id=len(samples),
    )
    check_elites(state)
    return state


def iterate_once(state: RunState, config: RunConfig, spec=None, observer: Callable | None = None,
                 threads=None) -> RunState:
    """One generation. Returns a new state; ``state`` itself is left untouched.

    ``observer(step, info)`` is called after each of :data:`STEPS`. Raises
    :class:`IterationError` when the VAE diverges or the elites are
    degenerate; the caller decides whether to retry.
    """
    spec = spec or config.problem_spec()
    threads = config.n_threads() if threads is None else threads
    notify = observer or (lambda step, info: None)
    elites = state.elites
    if len(elites) < 2:
        raise IterationError(f"need at least two elites, have {len(elites)}")
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng.bit_generator.state
    train_seed, gen_seed = (int(v) for v in rng.integers(0, 2**63 - 1, size=2))

    X = np.array([s.field.values for s in elites])
    with warnings.catch_warnings():
        warnings.simplefilter("error", DegeneratePCAWarning)
        try:
            pca = PCACompressor()
            S = pca.fit_transform(X)
        except DegeneratePCAWarning as exc:
            raise IterationError(f"degenerate elites: {exc}") from exc
    notify("compress", {"n_components": pca.n_components_, "n_elites": len(elites)})

    tcfg = replace(config.train, rng_seed=train_seed,
                   batch_size=min(config.train.batch_size, S.shape[0]))
    init = state.model if config.warm_start else None
    if init is not None and (init.k_in != S.shape[1]):
        init = None
    try:
        model, trace = train(S, tcfg, init=init)
    except TrainingDivergedError as exc:
        raise IterationError(f"VAE training diverged: {exc}") from exc
    notify("train", {"final_loss": trace[-1][1] if trace else float("nan")})

    n_gen = config.n_gen or len(elites)
    S_gen = generate(model, S, n_gen, gen_seed, method=config.sampling, alpha=config.blend_alpha)
    if not np.all(np.isfinite(S_gen)):
        raise IterationError("VAE produced non-finite scores")
    notify("generate", {"n_gen": n_gen})

    X_gen = pca.restore(S_gen)
    notify("restore", {"shape": X_gen.shape})

    mesh = elites[0].field.mesh
    fields = _map(lambda v: normalize_field(DensityField(mesh, v), config.h), list(X_gen), threads)
    notify("normalize", {"count": len(fields)})

    born = state.iteration + 1
    new = [Sample(f, state.next_id + k, born) for k, f in enumerate(fields)]
    evaluate_samples(new, spec, threads, config.solver)
    notify("evaluate", {"status": {st.value: sum(s.status is st for s in new)
                                   for st in SampleStatus}})

    samples = state.samples + new
    notify("merge", {"n_samples": len(samples)})

    chosen = _select(elites + new, config.elite_cap)
    out = RunState(
        iteration=born, samples=samples, elite_ids=[s.id for s in chosen],
        hv_trace=list(state.hv_trace), reference=state.reference, baseline=state.baseline,
        rng=rng, next_id=state.next_id + len(new), model=model if config.warm_start else None,
    )
    out.hv_trace.append(front_hypervolume(out))
    check_elites(out)
    notify("select", {"n_elites": len(chosen), "hv": out.hv_trace[-1]})
    return out


def termination_check(state: RunState, config: RunConfig) -> bool:
    """Budget exhausted, or (if enabled) the indicator stalled over the window."""
    if state.iteration >= config.iterations:
        return True
    if config.stop_on_stagnation and len(state.hv_trace) >= config.stagnation_window:
        old = state.hv_trace[-config.stagnation_window]
        return state.hv_trace[-1] - old < config.stagnation_tol * abs(old)
    return False


def advance(state: RunState, config: RunConfig, spec=None, observer=None, threads=None) -> RunState:
    """iterate_once with bounded retries, each retry drawing fresh seeds."""
    for attempt in range(config.max_retries + 1):
        try:
            return iterate_once(state, config, spec, observer, threads)
        except IterationError as exc:
            log.warning("iteration %d attempt %d aborted: %s", state.iteration + 1, attempt + 1, exc)
            if attempt == config.max_retries:
                raise
            state.rng.integers(0, 2**63 - 1)


# -- checkpoints -------------------------------------------------------------

def checkpoint(state: RunState, path, config: RunConfig | None = None) -> None:
    """Atomically write ``state`` (and optionally the config) to one ``.npz`` file."""
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "iteration": state.iteration,
        "elite_ids": state.elite_ids,
        "hv_trace": state.hv_trace,
        "baseline": state.baseline,
        "next_id": state.next_id,
        "rng": state.rng.bit_generator.state,
        "mesh": {"dims": list(state.samples[0].field.mesh.dims),
                 "element_length": state.samples[0].field.mesh.element_length},
        "status": [s.status.value for s in state.samples],
        "info": [s.info for s in state.samples],
        "config": config_to_ini(config) if config is not None and config.spec is None else None,
    }
    arrays = {
        "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        "ids": np.array([s.id for s in state.samples], dtype=np.int64),
        "born": np.array([s.iteration_born for s in state.samples], dtype=np.int64),
        "objectives": np.array([s.objectives for s in state.samples], dtype=float),
        "fields": np.array([s.field.values for s in state.samples], dtype=float),
        "reference": np.asarray(state.reference, dtype=float),
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez_compressed(fh, **arrays)
    os.replace(tmp, path)


def resume(path) -> tuple[RunState, RunConfig | None]:
    """Read a checkpoint. Returns the state and the config stored with it."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(data["meta"].tobytes().decode())
            arrays = {k: data[k] for k in ("ids", "born", "objectives", "fields", "reference")}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError,
            json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    version = meta.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, "
                              f"this build reads version {CHECKPOINT_VERSION}")
    try:
        mesh = Mesh(tuple(meta["mesh"]["dims"]), meta["mesh"]["element_length"])
        samples = [
            Sample(DensityField(mesh, arrays["fields"][k]), int(arrays["ids"][k]),
                   int(arrays["born"][k]), arrays["objectives"][k].copy(),
                   SampleStatus(meta["status"][k]), dict(meta["info"][k]))
            for k in range(len(arrays["ids"]))
        ]
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        state = RunState(
            iteration=int(meta["iteration"]), samples=samples,
            elite_ids=[int(i) for i in meta["elite_ids"]],
            hv_trace=[float(v) for v in meta["hv_trace"]], reference=arrays["reference"],
            baseline=float(meta["baseline"]), rng=rng, next_id=int(meta["next_id"]),
        )
        check_elites(state)
        config = parse_config(meta["config"]) if meta.get("config") else None
    except (KeyError, IndexError, ValueError, TypeError, AssertionError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
    return state, config


# -- outputs -----------------------------------------------------------------

def write_trace_csv(trace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "normalized_hypervolume"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])


def read_trace_csv(path) -> list[float]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [float(r[1]) for r in rows]


def write_samples_csv(samples, path) -> None:
    """Every sample with its status and objectives."""
    n_obj = max((len(s.objectives) for s in samples if s.objectives is not None), default=0)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "iteration_born", "status"] + [f"J{i + 1}" for i in range(n_obj)])
        for s in samples:
            w.writerow([s.id, s.iteration_born, s.status.value]
                       + [repr(float(v)) for v in s.objectives])


def write_outputs(state: RunState, out_dir) -> None:
    """Pareto CSV, indicator trace, sample table and elite field files."""
    out = Path(out_dir)
    (out / "elites").mkdir(parents=True, exist_ok=True)
    write_front_csv(state.elites, out / "front.csv")
    write_trace_csv(state.hv_trace, out / "hv_trace.csv")
    write_samples_csv(state.samples, out / "samples.csv")
    for old in (out / "elites").glob("*.ddtd"):
        old.unlink()
    for s in state.elites:
        save_field(s.field, out / "elites" / f"{s.id:06d}.ddtd")


def load_initial_fields(directory) -> list[DensityField]:
    """Fields listed in ``index.csv`` of a directory written by ``ddtd init``."""
    directory = Path(directory)
    with (directory / "index.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [load_field(directory / r["file"]) for r in rows]


def write_initial_fields(fields, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "index.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "file"])
        for i, f in enumerate(fields):
            name = f"init_{i:04d}.ddtd"
            save_field(f, directory / name)
            w.writerow([i, name])


# -- whole runs --------------------------------------------------------------

def initial_fields(config: RunConfig, spec=None, threads=None) -> list[DensityField]:
    if config.initial_fields:
        return load_initial_fields(config.initial_fields)
    spec = spec or config.problem_spec()
    threads = config.n_threads() if threads is None else threads
    return generate_initial_set(spec, config.initial_count, seed=config.rng_seed, n_jobs=threads)


def run(config: RunConfig, fields=None, state: RunState | None = None, observer=None,
        threads=None, write=True) -> RunState:
    """Run (or continue ``state``) until the termination check fires.

    ``fields`` overrides the configured initial designs. With ``write`` the
    output directory receives checkpoints and the final artifacts.
    """
    spec = config.problem_spec()
    threads = config.n_threads() if threads is None else threads
    out = Path(config.output)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        if config.spec is None:
            (out / "config.ini").write_text(config_to_ini(config))
    if state is None:
        t0 = time.perf_counter()
        if fields is None:
            fields = initial_fields(config, spec, threads)
        state = initial_state(fields, config, spec, threads)
        log.info("initial set: %d designs, %d elites (%.1fs)", len(fields), len(state.elite_ids),
                 time.perf_counter() - t0)
    while not termination_check(state, config):
        t0 = time.perf_counter()
        state = advance(state, config, spec, observer, threads)
        log.info("iteration %d: %d elites, normalized hypervolume %.6f (%.1fs)", state.iteration,
                 len(state.elite_ids), state.hv_trace[-1], time.perf_counter() - t0)
        if write and config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
            checkpoint(state, out / "checkpoint.npz", config)
    if write:
        checkpoint(state, out / "checkpoint.npz", config)
        write_outputs(state, out)
    return state


def resume_run(path, config: RunConfig | None = None, **kwargs) -> RunState:
    """Continue the run stored in a checkpoint file."""
    state, stored = resume(path)
    config = config or stored
    if config is None:
        raise CheckpointError(f"{path}: no config stored; pass one explicitly")
    return run(config, state=state, **kwargs)
