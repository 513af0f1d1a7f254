"""Ask/tell QD optimizers: MAP-Elites, CMA-ME, and domain randomization.

All optimizers own a GridArchive and follow the same protocol: ask() yields a
batch of candidate genotypes, tell() hands back their evaluated objectives
and measures, updates the archive, and (for CMA-ME) adapts the emitters'
search distributions. Asks and tells must strictly alternate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .archive import GridArchive, INSERTED, IMPROVED, REJECTED


# --- genotype spaces -------------------------------------------------------

class BitGenotypeSpace:
    """Fixed-length binary genotypes with per-position resampling mutation."""

    def __init__(self, dim: int):
        self.dim = dim

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, 2, self.dim, dtype=np.int8)

    def mutate(self, parent: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        child = np.array(parent, dtype=np.int8, copy=True)
        positions = rng.integers(0, self.dim, size=k)
        child[positions] = rng.integers(0, 2, size=k, dtype=np.int8)
        return child


class ContinuousGenotypeSpace:
    """Unbounded real genotypes; random draws are standard normal."""

    def __init__(self, dim: int):
        self.dim = dim

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim)


# --- common ask/tell bookkeeping -------------------------------------------

class _AskTellBase:
    def __init__(self, archive: GridArchive, batch_size: int, rng: np.random.Generator):
        self.archive = archive
        self.batch_size = batch_size
        self.rng = rng
        self._pending: Optional[int] = None

    def _start_ask(self, count: Optional[int]) -> int:
        if self._pending is not None:
            raise RuntimeError("ask() called twice without an intervening tell()")
        count = self.batch_size if count is None else count
        if count < 1:
            raise ValueError("ask count must be >= 1")
        self._pending = count
        return count

    def _start_tell(self, solutions, objectives, measures) -> None:
        if self._pending is None:
            raise RuntimeError("tell() called without a preceding ask()")
        if not (len(solutions) == len(objectives) == len(measures) == self._pending):
            raise ValueError(
                f"tell() expected {self._pending} entries, got "
                f"{len(solutions)}/{len(objectives)}/{len(measures)}"
            )
        self._pending = None


class MapElites(_AskTellBase):
    """Uniform-elite parents with k-position resampling mutation.

    The first n_init solutions are drawn uniformly at random; afterwards each
    offspring mutates a uniformly chosen archive elite. An empty archive
    falls back to random draws.
    """

    def __init__(self, archive: GridArchive, space: BitGenotypeSpace,
                 batch_size: int = 150, k_mutations: int = 10, n_init: int = 100,
                 rng: Optional[np.random.Generator] = None):
        super().__init__(archive, batch_size, rng or np.random.default_rng())
        if k_mutations < 1:
            raise ValueError("k_mutations must be >= 1")
        self.space = space
        self.k_mutations = k_mutations
        self.n_init = n_init
        self.init_count = 0

    def ask(self, count: Optional[int] = None) -> List[np.ndarray]:
        count = self._start_ask(count)
        out = []
        for _ in range(count):
            if self.init_count < self.n_init or len(self.archive) == 0:
                out.append(self.space.sample(self.rng))
                self.init_count += 1
            else:
                parent = self.archive.sample_elite(self.rng).solution
                out.append(self.space.mutate(parent, self.k_mutations, self.rng))
        return out

    def tell(self, solutions, objectives, measures) -> List[str]:
        self._start_tell(solutions, objectives, measures)
        return [self.archive.add(s, o, m) for s, o, m in zip(solutions, objectives, measures)]


class DomainRandomization(_AskTellBase):
    """Pure random search: every ask is a fresh uniform draw."""

    def __init__(self, archive: GridArchive, space, batch_size: int = 150,
                 rng: Optional[np.random.Generator] = None):
        super().__init__(archive, batch_size, rng or np.random.default_rng())
        self.space = space

    def ask(self, count: Optional[int] = None) -> List[np.ndarray]:
        count = self._start_ask(count)
        return [self.space.sample(self.rng) for _ in range(count)]

    def tell(self, solutions, objectives, measures) -> List[str]:
        self._start_tell(solutions, objectives, measures)
        return [self.archive.add(s, o, m) for s, o, m in zip(solutions, objectives, measures)]


# --- CMA-ES core ------------------------------------------------------------

class CmaEs:
    """Covariance matrix adaptation with the standard dimension-dependent
    defaults (positive-half log weights, cumulative step-size adaptation,
    rank-one plus rank-mu covariance update).

    tell() consumes the sampled batch sorted best first; the caller defines
    what "best" means, which is how CMA-ME feeds in improvement rankings.
    """

    def __init__(self, mean: np.ndarray, sigma: float, rng: np.random.Generator,
                 popsize: Optional[int] = None):
        mean = np.asarray(mean, dtype=float)
        n = mean.size
        if n < 2:
            raise ValueError("dimension must be >= 2")
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.n = n
        self.rng = rng
        self.lam = popsize if popsize is not None else 4 + int(3 * np.log(n))
        self.mu = self.lam // 2
        w = np.log(self.lam / 2 + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)

        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 2 * self.mueff / self.lam + 0.3 + self.cs

        self.mean = mean.copy()
        self.sigma = float(sigma)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.cov = np.eye(n)
        self.generation = 0
        self._decompose()

    def _decompose(self) -> None:
        self.cov = (self.cov + self.cov.T) / 2
        eigvals, eigvecs = np.linalg.eigh(self.cov)
        eigvals = np.maximum(eigvals, 1e-12)
        self._eigvecs = eigvecs
        self._eig_sqrt = np.sqrt(eigvals)
        self._inv_sqrt = eigvecs @ np.diag(1.0 / self._eig_sqrt) @ eigvecs.T

    def ask(self) -> List[np.ndarray]:
        z = self.rng.standard_normal((self.lam, self.n))
        y = (z * self._eig_sqrt) @ self._eigvecs.T
        return list(self.mean + self.sigma * y)

    def tell(self, ranked: Sequence[np.ndarray]) -> None:
        """Update mean, paths, covariance, and step size; best solution first."""
        if len(ranked) != self.lam:
            raise ValueError(f"expected {self.lam} ranked solutions, got {len(ranked)}")
        n = self.n
        self.generation += 1
        old_mean = self.mean
        top = np.asarray(ranked[: self.mu], dtype=float)
        self.mean = self.weights @ top

        y = (self.mean - old_mean) / self.sigma
        self.ps = (1 - self.cs) * self.ps + np.sqrt(
            self.cs * (2 - self.cs) * self.mueff
        ) * (self._inv_sqrt @ y)
        ps_norm2 = float(self.ps @ self.ps)
        hsig = ps_norm2 / n / (1 - (1 - self.cs) ** (2 * self.generation)) < 2 + 4 / (n + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * np.sqrt(
            self.cc * (2 - self.cc) * self.mueff
        ) * y

        c1a = self.c1 * (1 - (1 - hsig**2) * self.cc * (2 - self.cc))
        self.cov *= 1 - c1a - self.cmu
        self.cov += self.c1 * np.outer(self.pc, self.pc)
        dx = (top - old_mean) / self.sigma
        self.cov += self.cmu * (dx.T * self.weights) @ dx

        self.sigma *= np.exp(min(1.0, self.cs / self.damps * (ps_norm2 / n - 1) / 2))
        self._decompose()

    @property
    def healthy(self) -> bool:
        return (
            np.isfinite(self.sigma)
            and 0 < self.sigma < 1e12
            and np.all(np.isfinite(self.mean))
            and np.all(np.isfinite(self.cov))
        )


def cma_es_sphere_check(dim: int, budget: int, seed: int = 0,
                        sigma0: float = 0.5) -> float:
    """Run the bare CMA-ES core on f(x) = -||x||^2 and return the best value.

    Validation harness for the core update equations; the mean starts away
    from the optimum so convergence is not trivial.
    """
    rng = np.random.default_rng(seed)
    es = CmaEs(np.full(dim, 3.0), sigma0, rng)
    best = -np.inf
    evals = 0
    while evals < budget:
        xs = es.ask()
        fs = np.array([-float(x @ x) for x in xs])
        evals += len(xs)
        best = max(best, float(fs.max()))
        order = np.argsort(-fs, kind="stable")
        es.tell([xs[i] for i in order])
        assert es.sigma > 0
    return best


# --- CMA-ME -----------------------------------------------------------------

@dataclass
class _TellRecord:
    index: int
    status: str
    gain: float
    objective: float


class CmaMeEmitter:
    """One improvement emitter: a CMA-ES instance ranked by archive gain."""

    def __init__(self, archive: GridArchive, dim: int, batch_size: int,
                 sigma0: float, rng: np.random.Generator):
        self.archive = archive
        self.dim = dim
        self.batch_size = batch_size
        self.sigma0 = sigma0
        self.rng = rng
        self.restarts = 0
        self._new_es(np.zeros(dim))

    def _new_es(self, mean: np.ndarray) -> None:
        self.es = CmaEs(mean, self.sigma0, self.rng, popsize=self.batch_size)

    def restart(self) -> None:
        """Fresh CMA-ES state at a uniformly chosen elite (origin if empty)."""
        self.restarts += 1
        if len(self.archive) > 0:
            mean = self.archive.sample_elite(self.rng).solution.astype(float)
        else:
            mean = np.zeros(self.dim)
        self._new_es(mean)

    def ask(self) -> List[np.ndarray]:
        return self.es.ask()

    def tell(self, solutions, objectives, statuses, gains) -> None:
        """Rank by (improved the archive, gain, objective) and update."""
        records = [
            _TellRecord(i, s, g, o)
            for i, (s, g, o) in enumerate(zip(statuses, gains, objectives))
        ]
        records.sort(
            key=lambda r: (r.status != REJECTED, r.gain if r.status != REJECTED else r.objective,
                           r.objective),
            reverse=True,
        )
        self.es.tell([solutions[r.index] for r in records])
        improved = any(r.status != REJECTED for r in records)
        if not improved or not self.es.healthy:
            self.restart()


class CmaMe(_AskTellBase):
    """Emitter pool over a shared archive; ask/tell batches concatenate the
    emitters' batches in pool order."""

    def __init__(self, archive: GridArchive, space: ContinuousGenotypeSpace,
                 n_emitters: int = 5, emitter_batch: int = 30, sigma0: float = 0.2,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        super().__init__(archive, n_emitters * emitter_batch, rng)
        if n_emitters < 1:
            raise ValueError("need at least one emitter")
        self.space = space
        self.emitters = [
            CmaMeEmitter(archive, space.dim, emitter_batch, sigma0, rng)
            for _ in range(n_emitters)
        ]

    def ask(self, count: Optional[int] = None) -> List[np.ndarray]:
        count = self._start_ask(count)
        if count != self.batch_size:
            raise ValueError("emitter pools only support full batches")
        out = []
        for emitter in self.emitters:
            out.extend(emitter.ask())
        return out

    def tell(self, solutions, objectives, measures) -> List[str]:
        self._start_tell(solutions, objectives, measures)
        statuses, gains = [], []
        for s, o, m in zip(solutions, objectives, measures):
            cell = self.archive.spec.discretize(np.asarray(m, dtype=float))
            incumbent = self.archive.elite_at(cell)
            status = self.archive.add(s, o, m)
            statuses.append(status)
            if status == INSERTED:
                gains.append(float(o))
            elif status == IMPROVED:
                gains.append(float(o) - incumbent.objective)
            else:
                gains.append(0.0)
        b = self.emitters[0].batch_size
        for i, emitter in enumerate(self.emitters):
            sl = slice(i * b, (i + 1) * b)
            emitter.tell(solutions[sl], objectives[sl], statuses[sl], gains[sl])
        return statuses
