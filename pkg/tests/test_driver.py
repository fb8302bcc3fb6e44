import warnings
from pathlib import Path

import numpy as np
import pytest

from ddtd import driver, fem
from ddtd.driver import (
    STEPS, CheckpointError, InitialSetError, IterationError, RunConfig, checkpoint, config_to_ini,
    initial_state, iterate_once, load_config, parse_config, resume, run, termination_check,
)
from ddtd.field import SampleStatus, uniform_field
from ddtd.initgen import generate_initial_set
from ddtd.pareto import dominates, read_front_csv
from ddtd.vae import TrainConfig, TrainingDivergedError

PROBLEM = {"dims": (20, 20)}


@pytest.fixture(scope="module")
def fields():
    spec = fem.lbeam2d(**PROBLEM)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return generate_initial_set(spec, 10)


def _config(tmp_path=None, **kw):
    base = dict(problem="lbeam2d", problem_options=dict(PROBLEM), iterations=3, n_gen=8,
                threads=1, train=TrainConfig(learning_rate=1e-3, epochs=30, beta=0.1),
                output=str(tmp_path / "run") if tmp_path else "run")
    base.update(kw)
    return RunConfig(**base)


# -- configuration -----------------------------------------------------------

def test_defaults():
    cfg = RunConfig()
    assert (cfg.elite_cap, cfg.iterations, cfg.h) == (400, 50, 0.01)
    t = cfg.train
    assert (t.learning_rate, t.batch_size, t.epochs, t.n_latent, t.beta) == (1e-4, 20, 400, 8, 4.0)


def test_default_ini_prefilled():
    text = config_to_ini(RunConfig())
    for line in ("learning_rate = 0.0001", "batch_size = 20", "epochs = 400", "n_latent = 8",
                 "beta = 4.0", "elite_cap = 400", "iterations = 50", "h = 0.01"):
        assert line in text


def test_ini_round_trip():
    cfg = _config(elite_cap=None, warm_start=True, stop_on_stagnation=True, initial_count=12)
    assert parse_config(config_to_ini(cfg)) == cfg


@pytest.mark.parametrize("kw", [{"n_gen": 0}, {"iterations": 0}, {"elite_cap": 1},
                                {"h": 0.0}, {"sampling": "bogus"}])
def test_config_errors(kw):
    with pytest.raises(ValueError):
        RunConfig(**kw)


def test_readme_config_parses():
    readme = (Path(__file__).parents[1] / "README.md").read_text()
    block = readme.split("```ini\n", 1)[1].split("```", 1)[0]
    cfg = parse_config(block)
    assert cfg.elite_cap == 400 and cfg.n_gen is None and cfg.problem_options == {"dims": (40, 20)}
    assert cfg.train == TrainConfig()


def test_config_rejects_unknown_section():
    with pytest.raises(ValueError):
        parse_config("[run]\niterations = 2\n[nonsense]\nx = 1\n")


def test_environment_overrides(tmp_path, monkeypatch):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nrng_seed = 3\nthreads = 8\noutput = out\n")
    monkeypatch.setenv("DDTD_SEED", "11")
    monkeypatch.setenv("DDTD_THREADS", "2")
    cfg = load_config(path)
    assert cfg.rng_seed == 11 and cfg.n_threads() == 2
    assert cfg.output == str(tmp_path / "out")


# -- termination -------------------------------------------------------------

def _state_with_trace(trace, iteration):
    return driver.RunState(iteration, [], [], list(trace), np.zeros(2), 1.0,
                           np.random.default_rng(0), 0)


def test_termination_budget():
    assert termination_check(_state_with_trace([1.0], 3), _config(iterations=3))
    assert not termination_check(_state_with_trace([1.0], 2), _config(iterations=3))


def test_termination_stagnation():
    cfg = _config(iterations=50, stop_on_stagnation=True)
    flat = _state_with_trace([1.2] * 10, 9)
    rising = _state_with_trace(np.linspace(1.0, 1.5, 10), 9)
    assert termination_check(flat, cfg)
    assert not termination_check(rising, cfg)
    assert not termination_check(flat, _config(iterations=50))


# -- iterations --------------------------------------------------------------

def test_iterate_once_step_order_and_purity(fields):
    cfg = _config()
    state = initial_state(fields, cfg)
    before = (state.iteration, list(state.elite_ids), len(state.samples), list(state.hv_trace),
              state.rng.bit_generator.state)
    steps = []
    new = iterate_once(state, cfg, observer=lambda step, info: steps.append(step))
    assert tuple(steps) == STEPS
    assert (state.iteration, state.elite_ids, len(state.samples), state.hv_trace,
            state.rng.bit_generator.state) == before
    assert new.iteration == 1 and len(new.samples) == len(state.samples) + cfg.n_gen
    ids = [s.id for s in new.samples]
    assert len(set(ids)) == len(ids)
    assert all(s.iteration_born == 1 for s in new.samples[len(state.samples):])
    assert all(s.iteration_born == 0 for s in new.samples[:len(state.samples)])
    objs = [s.objectives for s in new.elites]
    assert not any(dominates(a, b) for a in objs for b in objs)
    assert len(new.hv_trace) == 2


def test_unbounded_cap_trace_nondecreasing(fields):
    state = run(_config(elite_cap=None, iterations=3), fields=fields, write=False)
    assert np.all(np.diff(state.hv_trace) >= 0)


def test_dominated_generation_repeats_trace(fields, monkeypatch):
    cfg = _config()
    state = initial_state(fields, cfg)
    monkeypatch.setattr(driver.fem, "evaluate",
                        lambda f, spec, solver="cg": (np.array([1e6, 1e6]), SampleStatus.OK, {}))
    new = iterate_once(state, cfg)
    assert new.elite_ids == state.elite_ids
    assert new.hv_trace[-1] == new.hv_trace[-2]


def test_retries_then_gives_up(fields, monkeypatch):
    cfg = _config(max_retries=2)
    state = initial_state(fields, cfg)
    real_train = driver.train
    calls = []

    def flaky(S, config, init=None):
        calls.append(config.rng_seed)
        if len(calls) <= 2:
            raise TrainingDivergedError(0, 0, float("nan"), 0.0)
        return real_train(S, config, init=init)

    monkeypatch.setattr(driver, "train", flaky)
    new = driver.advance(state, cfg)
    assert new.iteration == 1 and len(set(calls)) == 3

    def broken(S, config, init=None):
        raise TrainingDivergedError(0, 0, float("nan"), 0.0)

    monkeypatch.setattr(driver, "train", broken)
    before = len(new.samples)
    with pytest.raises(IterationError):
        driver.advance(new, cfg)
    assert new.iteration == 1 and len(new.samples) == before


def test_unevaluable_initial_set():
    spec = fem.lbeam2d(**PROBLEM)
    void = [uniform_field(spec.mesh, 0.0)] * 3
    with pytest.raises(InitialSetError, match="infeasible"):
        initial_state(void, _config())


# -- whole runs, outputs, checkpoints ----------------------------------------

def test_run_writes_outputs(fields, tmp_path):
    cfg = _config(tmp_path)
    state = run(cfg, fields=fields)
    out = tmp_path / "run"
    for name in ("front.csv", "hv_trace.csv", "samples.csv", "checkpoint.npz", "config.ini"):
        assert (out / name).exists()
    assert not list(out.glob("*.tmp"))
    front = read_front_csv(out / "front.csv")
    assert [r[0] for r in front] == state.elite_ids
    assert len(list((out / "elites").glob("*.ddtd"))) == len(state.elite_ids)
    assert driver.read_trace_csv(out / "hv_trace.csv") == state.hv_trace


def test_determinism(fields, tmp_path):
    a = run(_config(tmp_path / "a"), fields=fields)
    b = run(_config(tmp_path / "b"), fields=fields)
    assert a.hv_trace == b.hv_trace
    assert ((tmp_path / "a/run/front.csv").read_bytes()
            == (tmp_path / "b/run/front.csv").read_bytes())


def test_checkpoint_resume_matches_uninterrupted(fields, tmp_path):
    full = run(_config(iterations=3), fields=fields, write=False)
    part = run(_config(iterations=1), fields=fields, write=False)
    checkpoint(part, tmp_path / "c.npz", _config(iterations=3))
    restored, cfg = resume(tmp_path / "c.npz")
    assert restored.iteration == 1
    assert restored.elite_ids == part.elite_ids
    assert restored.rng.bit_generator.state == part.rng.bit_generator.state
    assert all(np.array_equal(a.field.values, b.field.values)
               for a, b in zip(restored.samples, part.samples))
    cont = run(cfg, state=restored, write=False)
    assert cont.hv_trace == full.hv_trace
    assert cont.elite_ids == full.elite_ids


def test_resume_at_budget_finalizes(fields, tmp_path):
    cfg = _config(tmp_path, iterations=1)
    done = run(cfg, fields=fields)
    again = driver.resume_run(tmp_path / "run" / "checkpoint.npz")
    assert again.iteration == 1 and again.hv_trace == done.hv_trace


def test_corrupt_checkpoint(fields, tmp_path):
    state = initial_state(fields, _config())
    path = tmp_path / "c.npz"
    checkpoint(state, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        resume(path)
    (tmp_path / "junk.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        resume(tmp_path / "junk.npz")


def test_checkpoint_version_mismatch(fields, tmp_path, monkeypatch):
    state = initial_state(fields, _config())
    monkeypatch.setattr(driver, "CHECKPOINT_VERSION", 99)
    checkpoint(state, tmp_path / "c.npz")
    monkeypatch.undo()
    with pytest.raises(CheckpointError, match="version 99"):
        resume(tmp_path / "c.npz")
