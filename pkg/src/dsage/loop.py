"""Outer-loop orchestrator for surrogate-assisted QD environment generation.

One run owns a ground-truth archive, a dataset of agent simulations, and
(optionally) a surrogate model. Each outer iteration exploits the surrogate
with an inner QD optimizer on a fresh surrogate archive, evaluates a selected
subset of its elites with the real agent, and then retrains the model on the
accumulated data. With the surrogate disabled, the loop degenerates to the
configured optimizer (or pure random search) running directly against
ground-truth evaluations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import latent as latent_mod
from . import maze
from .archive import GridArchive, MeasureSpec
from .optimizers import (
    BitGenotypeSpace,
    CmaMe,
    ContinuousGenotypeSpace,
    DomainRandomization,
    MapElites,
)
from .surrogate import Dataset, Record, SurrogateConfig, SurrogateModel

DIRECT_MAZE = "direct-maze"
LATENT_MAZE = "latent-maze"

SELECTOR_DOWNSAMPLE = "downsample"
SELECTOR_RANDOM = "random"
SELECTOR_ALL = "all"

# measure set -> (lows, highs, default archive cell counts)
MEASURE_GRIDS = {
    "walls+path": ((0.0, 0.0), (256.0, 648.0), (256, 162)),
    "walls+repeats": ((0.0, 0.0), (256.0, 648.0), (256, 162)),
    "exploration+repeats": ((0.0, 0.0), (1.0, 648.0), (100, 162)),
}


@dataclass
class DsageConfig:
    """Everything one trial needs; condition presets fill in selector/mode."""

    domain: str = DIRECT_MAZE
    measure_set: str = "walls+path"
    archive_cells: Optional[Tuple[int, int]] = None  # default per measure set

    budget: int = 10000
    n_rand: int = 100
    n_exploit: int = 1000
    inner_batch: int = 50
    batch_size: int = 150  # ground-truth optimizer batch (baseline conditions)

    surrogate_mode: str = "two-stage"  # two-stage | direct | none
    selector: str = SELECTOR_DOWNSAMPLE  # downsample | random | all
    region_shape: Tuple[int, int] = (8, 6)
    random_k: Optional[int] = None  # default: one per downsample region

    inner_optimizer: Optional[str] = None  # map-elites | cma-me; default by domain
    baseline_optimizer: str = "map-elites"  # map-elites | cma-me | dr

    mutation_k: int = 10
    n_init: int = 100
    n_emitters: int = 5
    emitter_batch: int = 30
    sigma0: float = 0.2
    latent_dim: int = 32
    decoder_seed: int = 42

    agent: str = "greedy-vision"  # greedy-vision | optimal
    episodes: int = 50
    tau: float = 0.5

    epochs: int = 200
    train_batch: int = 64
    window: int = 20000
    hidden_channels: int = 64
    fc_hidden: int = 128
    learning_rate: float = 1e-3
    lambda_occupancy: float = 1.0
    detach_occupancy: bool = False
    dtype: str = "float64"

    seed: int = 0
    trials: int = 5

    def __post_init__(self):
        if self.domain not in (DIRECT_MAZE, LATENT_MAZE):
            raise ValueError(f"unknown domain: {self.domain}")
        if self.measure_set not in MEASURE_GRIDS:
            raise ValueError(f"unknown measure set: {self.measure_set}")
        if self.surrogate_mode not in ("two-stage", "direct", "none"):
            raise ValueError(f"unknown surrogate mode: {self.surrogate_mode}")
        if self.selector not in (SELECTOR_DOWNSAMPLE, SELECTOR_RANDOM, SELECTOR_ALL):
            raise ValueError(f"unknown selector: {self.selector}")
        if self.budget < self.n_rand or self.n_rand < 1:
            raise ValueError("need budget >= n_rand >= 1")
        if self.surrogate_mode != "none" and self.n_exploit < 1:
            raise ValueError("n_exploit must be >= 1 when the surrogate is enabled")

    def measure_spec(self) -> MeasureSpec:
        lows, highs, cells = MEASURE_GRIDS[self.measure_set]
        return MeasureSpec(lows=lows, highs=highs,
                           cells=tuple(self.archive_cells or cells))

    def agent_spec(self) -> maze.AgentSpec:
        episodes = 1 if self.agent == "optimal" else self.episodes
        return maze.AgentSpec(kind=self.agent, episodes=episodes, tau=self.tau)

    def region_count(self) -> int:
        cells = self.measure_spec().cells
        return int(np.prod([int(np.ceil(c / r)) for c, r in zip(cells, self.region_shape)]))

    def surrogate_config(self, model_seed: int) -> SurrogateConfig:
        lows, highs, _ = MEASURE_GRIDS[self.measure_set]
        return SurrogateConfig(
            mode=self.surrogate_mode,
            measure_lows=lows,
            measure_highs=highs,
            hidden_channels=self.hidden_channels,
            fc_hidden=self.fc_hidden,
            lambda_occupancy=self.lambda_occupancy,
            detach_occupancy=self.detach_occupancy,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.train_batch,
            window=self.window,
            seed=model_seed,
            dtype=self.dtype,
        )


# --- domains -----------------------------------------------------------------


class DirectMazeDomain:
    """Genotype is the 256-bit wall bitmap itself."""

    def __init__(self, config: DsageConfig):
        self.space = BitGenotypeSpace(maze.INTERIOR * maze.INTERIOR)
        self.agent = config.agent_spec()
        self.measure_set = config.measure_set

    def to_env(self, genotype: np.ndarray) -> maze.MazeEnv:
        return maze.build_maze(np.rint(genotype).astype(np.int8))

    def evaluate(self, genotype, rng) -> Record:
        env = self.to_env(genotype)
        result = maze.simulate(env, self.agent, rng, self.measure_set)
        return Record(
            genotype=np.asarray(genotype),
            encoding=maze.encode_env(env),
            objective=result.objective,
            measures=result.measures,
            occupancy=result.occupancy,
        )


class LatentMazeDomain(DirectMazeDomain):
    """Genotype is a latent vector run through the fixed threshold decoder."""

    def __init__(self, config: DsageConfig):
        super().__init__(config)
        self.space = ContinuousGenotypeSpace(config.latent_dim)
        self.decoder = latent_mod.DecoderParams.from_seed(config.decoder_seed,
                                                          config.latent_dim)

    def to_env(self, genotype: np.ndarray) -> maze.MazeEnv:
        return maze.build_maze(latent_mod.decode(np.asarray(genotype, dtype=float),
                                                 self.decoder))


def make_domain(config: DsageConfig):
    if config.domain == DIRECT_MAZE:
        return DirectMazeDomain(config)
    return LatentMazeDomain(config)


# --- seeds ---------------------------------------------------------------------

INIT_STREAM, INNER_STREAM, MODEL_STREAM, EVAL_STREAM, BASELINE_STREAM = range(5)


def seed_rng(master: int, *key: int) -> np.random.Generator:
    """Deterministic independent stream for (master seed, key...)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master, *key])))


def eval_rng(master: int, eval_index: int) -> np.random.Generator:
    """Per-evaluation stream: parallel evaluations stay reproducible."""
    return seed_rng(master, EVAL_STREAM, eval_index)


def model_seed(master: int) -> int:
    return int(np.random.SeedSequence([master, MODEL_STREAM]).generate_state(1)[0])


# --- run state -------------------------------------------------------------------


@dataclass
class MetricsRow:
    evals: int
    qd_score: float
    coverage: float
    outer_iter: int
    wall_clock_s: float


@dataclass
class RunState:
    archive: GridArchive
    dataset: Dataset
    model: Optional[SurrogateModel]
    evals: int = 0
    outer_iter: int = 0
    metrics: List[MetricsRow] = field(default_factory=list)
    started: float = field(default_factory=time.perf_counter)

    def log(self) -> None:
        self.metrics.append(MetricsRow(
            evals=self.evals,
            qd_score=self.archive.qd_score(),
            coverage=self.archive.coverage(),
            outer_iter=self.outer_iter,
            wall_clock_s=time.perf_counter() - self.started,
        ))


@dataclass
class RunResult:
    config: DsageConfig
    archive: GridArchive
    dataset: Optional[Dataset]
    model: Optional[SurrogateModel]
    metrics: List[MetricsRow]

    @property
    def qd_score(self) -> float:
        return self.archive.qd_score()

    @property
    def coverage(self) -> float:
        return self.archive.coverage()

    @property
    def evals(self) -> int:
        return self.metrics[-1].evals if self.metrics else 0


# --- phases ---------------------------------------------------------------------


def initialize(config: DsageConfig, domain, state: RunState) -> None:
    """Evaluate n_rand random genotypes with the true agent."""
    rng = seed_rng(config.seed, INIT_STREAM)
    genotypes = [domain.space.sample(rng) for _ in range(config.n_rand)]
    _evaluate_into_state(config, domain, state, genotypes, with_dataset=True)
    state.log()


def _evaluate_into_state(config, domain, state, genotypes, with_dataset) -> int:
    for g in genotypes:
        record = domain.evaluate(g, eval_rng(config.seed, state.evals))
        if with_dataset:
            state.dataset.append(record)
        state.archive.add(record.genotype, record.objective, record.measures)
        state.evals += 1
    return len(genotypes)


def make_inner_optimizer(config: DsageConfig, domain, archive: GridArchive,
                         rng: np.random.Generator):
    name = config.inner_optimizer or (
        "map-elites" if config.domain == DIRECT_MAZE else "cma-me")
    if name == "map-elites":
        return MapElites(archive, domain.space, batch_size=config.inner_batch,
                         k_mutations=config.mutation_k, n_init=config.n_init, rng=rng)
    if name == "cma-me":
        return CmaMe(archive, domain.space, n_emitters=config.n_emitters,
                     emitter_batch=config.emitter_batch, sigma0=config.sigma0, rng=rng)
    raise ValueError(f"unknown inner optimizer: {name}")


def model_exploitation(config: DsageConfig, domain, model, state: RunState) -> GridArchive:
    """Build a fresh surrogate archive by running the inner optimizer against
    model predictions only; no ground-truth evaluations happen here."""
    surrogate_archive = GridArchive(config.measure_spec())
    rng = seed_rng(config.seed, INNER_STREAM, state.outer_iter, 0)
    optimizer = make_inner_optimizer(config, domain, surrogate_archive, rng)
    for _ in range(config.n_exploit):
        solutions = optimizer.ask()
        encodings = np.stack([maze.encode_env(domain.to_env(g)) for g in solutions])
        objectives, measures = model.predict_batch(encodings)
        optimizer.tell(solutions, [float(o) for o in objectives], list(measures))
    return surrogate_archive


def select_solutions(config: DsageConfig, surrogate_archive: GridArchive,
                     rng: np.random.Generator) -> List[np.ndarray]:
    if config.selector == SELECTOR_DOWNSAMPLE:
        elites = surrogate_archive.select_downsample(config.region_shape, rng)
    elif config.selector == SELECTOR_RANDOM:
        k = config.random_k if config.random_k is not None else config.region_count()
        elites = surrogate_archive.select_random(k, rng)
    else:
        elites = surrogate_archive.select_all()
    return [e.solution for e in elites]


def agent_simulation(config: DsageConfig, domain, state: RunState,
                     surrogate_archive: GridArchive) -> int:
    """Ground-truth evaluation of the selected surrogate elites, capped at the
    remaining budget (selection list truncated in selector-return order)."""
    rng = seed_rng(config.seed, INNER_STREAM, state.outer_iter, 1)
    selected = select_solutions(config, surrogate_archive, rng)
    if not selected:
        # degenerate surrogate archive; keep the budget moving
        selected = [domain.space.sample(rng)]
    selected = selected[: config.budget - state.evals]
    for lo in range(0, len(selected), config.batch_size):
        _evaluate_into_state(config, domain, state,
                             selected[lo : lo + config.batch_size], with_dataset=True)
        state.log()
    return len(selected)


def model_improvement(config: DsageConfig, state: RunState):
    return state.model.train(state.dataset)


def run_baseline(config: DsageConfig, domain, state: RunState) -> None:
    rng = seed_rng(config.seed, BASELINE_STREAM)
    archive = state.archive
    if config.baseline_optimizer == "map-elites":
        opt = MapElites(archive, domain.space, batch_size=config.batch_size,
                        k_mutations=config.mutation_k, n_init=config.n_init, rng=rng)
        partial_ok = True
    elif config.baseline_optimizer == "dr":
        opt = DomainRandomization(archive, domain.space,
                                  batch_size=config.batch_size, rng=rng)
        partial_ok = True
    elif config.baseline_optimizer == "cma-me":
        opt = CmaMe(archive, domain.space, n_emitters=config.n_emitters,
                    emitter_batch=config.emitter_batch, sigma0=config.sigma0, rng=rng)
        partial_ok = False
    else:
        raise ValueError(f"unknown baseline optimizer: {config.baseline_optimizer}")
    while state.evals < config.budget:
        remaining = config.budget - state.evals
        count = min(opt.batch_size, remaining)
        if count < opt.batch_size and not partial_ok:
            break  # emitter pools only run full batches
        solutions = opt.ask(count)
        objectives, measures = [], []
        for g in solutions:
            record = domain.evaluate(g, eval_rng(config.seed, state.evals))
            objectives.append(record.objective)
            measures.append(record.measures)
            state.evals += 1
        opt.tell(solutions, objectives, measures)
        state.log()


def run(config: DsageConfig,
        model_factory: Optional[Callable[[DsageConfig], object]] = None,
        log_fn: Optional[Callable[[str], None]] = None) -> RunResult:
    """Execute one full trial and return the archive, dataset, and metrics."""
    domain = make_domain(config)
    state = RunState(
        archive=GridArchive(config.measure_spec()),
        dataset=Dataset(),
        model=None,
    )

    if config.surrogate_mode == "none":
        run_baseline(config, domain, state)
        return RunResult(config, state.archive, None, None, state.metrics)

    if model_factory is not None:
        state.model = model_factory(config)
    else:
        state.model = SurrogateModel(config.surrogate_config(model_seed(config.seed)))

    initialize(config, domain, state)
    while state.evals < config.budget:
        state.outer_iter += 1
        surrogate_archive = model_exploitation(config, domain, state.model, state)
        n_evaluated = agent_simulation(config, domain, state, surrogate_archive)
        model_improvement(config, state)
        if log_fn:
            log_fn(
                f"outer {state.outer_iter}: surrogate archive "
                f"{len(surrogate_archive)}, evaluated {n_evaluated}, "
                f"evals {state.evals}/{config.budget}, "
                f"qd {state.archive.qd_score():.1f}, "
                f"coverage {state.archive.coverage():.4f}"
            )
    return RunResult(config, state.archive, state.dataset, state.model, state.metrics)


def config_to_dict(config: DsageConfig) -> dict:
    d = asdict(config)
    d["archive_cells"] = list(config.measure_spec().cells)
    d["region_shape"] = list(config.region_shape)
    return d
