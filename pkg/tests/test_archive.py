import copy

import numpy as np
import pytest

from dsage.archive import GridArchive, MeasureSpec, INSERTED, IMPROVED, REJECTED
from helpers import MAZE_SPEC_ARGS, NaiveArchive

MAZE_SPEC = MeasureSpec(**MAZE_SPEC_ARGS)


def small_spec(cells=(10, 10)):
    return MeasureSpec(lows=(0.0, 0.0), highs=(1.0, 1.0), cells=cells)


def test_measure_spec_validation():
    with pytest.raises(ValueError):
        MeasureSpec(lows=(1.0,), highs=(0.0,), cells=(4,))
    with pytest.raises(ValueError):
        MeasureSpec(lows=(0.0,), highs=(1.0,), cells=(0,))
    with pytest.raises(ValueError):
        MeasureSpec(lows=(0.0, 0.0), highs=(1.0,), cells=(4,))


def test_discretize_bounds_and_widths():
    assert MAZE_SPEC.widths == (1.0, 4.0)
    assert MAZE_SPEC.discretize((0, 0)) == (0, 0)
    assert MAZE_SPEC.discretize((256, 648)) == (255, 161)
    assert MAZE_SPEC.discretize((10, 32)) == (10, 8)
    # below-range values clamp to cell 0
    assert MAZE_SPEC.discretize((-3, -1)) == (0, 0)
    with pytest.raises(ValueError):
        MAZE_SPEC.discretize((1.0,))


def test_add_statuses():
    archive = GridArchive(small_spec())
    sol = np.array([1.0, 2.0])
    assert archive.add(sol, 1.0, (0.5, 0.5)) == INSERTED
    assert archive.add(sol, 0.5, (0.05, 0.05)) == INSERTED
    assert archive.add(sol, 0.7, (0.05, 0.05)) == IMPROVED
    assert archive.add(sol, 0.7, (0.05, 0.05)) == REJECTED  # tie keeps incumbent
    assert archive.elite_at((0, 0)).objective == 0.7


def test_add_rejects_non_finite():
    archive = GridArchive(small_spec())
    with pytest.raises(ValueError):
        archive.add(np.zeros(2), np.nan, (0.5, 0.5))
    with pytest.raises(ValueError):
        archive.add(np.zeros(2), 1.0, (np.inf, 0.5))


def test_qd_score_and_coverage():
    archive = GridArchive(small_spec())
    assert archive.qd_score() == 0
    assert archive.coverage() == 0
    for obj, m in [(1.0, (0.05, 0.05)), (1.0, (0.15, 0.05)), (0.5, (0.25, 0.05))]:
        archive.add(np.zeros(1), obj, m)
    assert archive.qd_score() == pytest.approx(2.5)
    assert archive.coverage() == pytest.approx(3 / 100)

    maze_archive = GridArchive(MAZE_SPEC)
    maze_archive.add(np.zeros(1), 1.0, (3.0, 5.0))
    assert maze_archive.coverage() == pytest.approx(1 / 41472)


def fill_archive(spec, rng=None):
    archive = GridArchive(spec)
    widths = spec.widths
    for idx in np.ndindex(*spec.cells):
        measures = [lo + (i + 0.5) * w for i, lo, w in zip(idx, spec.lows, widths)]
        archive.add(np.array([float(i) for i in idx]), 1.0, measures)
    assert len(archive) == spec.total_cells
    return archive


def test_select_downsample_structure():
    rng = np.random.default_rng(0)
    spec = MeasureSpec(lows=(0.0, 0.0), highs=(1.0, 1.0), cells=(16, 12))
    archive = fill_archive(spec)
    picked = archive.select_downsample((8, 6), rng)
    assert len(picked) == 4
    regions = {tuple(c // r for c, r in zip(e.cell, (8, 6))) for e in picked}
    assert len(regions) == 4

    assert GridArchive(spec).select_downsample((8, 6), rng) == []

    # elites always lie inside their own region on a partially filled archive
    sparse = GridArchive(spec)
    rng2 = np.random.default_rng(1)
    for _ in range(60):
        sparse.add(np.zeros(1), 1.0, rng2.uniform(0, 1, 2))
    for e in sparse.select_downsample((5, 5), rng):
        assert all(0 <= c - (c // r) * r < r for c, r in zip(e.cell, (5, 5)))


def test_select_downsample_region_count_full_maze_archive():
    archive = fill_archive(MAZE_SPEC)
    picked = archive.select_downsample((8, 6), np.random.default_rng(3))
    assert len(picked) == 32 * 27 == 864
    regions = {tuple(c // r for c, r in zip(e.cell, (8, 6))) for e in picked}
    assert len(regions) == 864
    for e in picked:
        assert e.cell == archive.spec.discretize(e.measures)


def test_select_random():
    rng = np.random.default_rng(0)
    spec = small_spec((4, 4))
    archive = fill_archive(spec)
    assert archive.select_random(0, rng) == []
    assert len(archive.select_random(99, rng)) == 16
    picked = archive.select_random(5, rng)
    assert len(picked) == 5
    assert len({e.cell for e in picked}) == 5
    with pytest.raises(ValueError):
        archive.select_random(-1, rng)


def test_select_random_downsample_budget_parity():
    archive = fill_archive(MAZE_SPEC)
    picked = archive.select_random(864, np.random.default_rng(7))
    assert len(picked) == 864
    assert len({e.cell for e in picked}) == 864


def test_select_all():
    spec = small_spec((4, 4))
    assert GridArchive(spec).select_all() == []
    archive = fill_archive(spec)
    assert len(archive.select_all()) == 16


def test_rejected_add_leaves_archive_identical():
    archive = GridArchive(small_spec())
    archive.add(np.array([1.0]), 0.9, (0.5, 0.5))
    before = copy.deepcopy(archive._cells)
    assert archive.add(np.array([2.0]), 0.1, (0.5, 0.5)) == REJECTED
    after = archive._cells
    assert before.keys() == after.keys()
    for cell in before:
        b, a = before[cell], after[cell]
        assert b.objective == a.objective
        assert np.array_equal(b.solution, a.solution)
        assert np.array_equal(b.measures, a.measures)


def test_brute_force_equivalence_and_monotonicity():
    rng = np.random.default_rng(42)
    spec = small_spec((10, 10))
    archive = GridArchive(spec)
    naive = NaiveArchive(spec)
    last_qd, last_cov = 0.0, 0.0
    for _ in range(1000):
        sol = rng.uniform(-1, 1, 3)
        obj = float(rng.uniform(0, 2))
        meas = rng.uniform(-0.2, 1.2, 2)  # exercise clamping too
        archive.add(sol, obj, meas)
        naive.add(sol, obj, meas)
        qd, cov = archive.qd_score(), archive.coverage()
        assert qd >= last_qd
        assert cov >= last_cov
        assert 0.0 <= cov <= 1.0
        last_qd, last_cov = qd, cov
    assert archive.qd_score() == pytest.approx(naive.qd_score(), abs=1e-12)
    assert archive.coverage() == pytest.approx(naive.coverage())
    best = naive.best_per_cell()
    assert set(best) == {e.cell for e in archive}
    for e in archive:
        assert e.objective == best[e.cell][1]
        assert np.array_equal(e.solution, best[e.cell][0])
        assert e.cell == spec.discretize(e.measures)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    archive = GridArchive(MAZE_SPEC)
    for _ in range(50):
        sol = rng.integers(0, 2, 8).astype(np.int8)
        archive.add(sol, float(rng.uniform()), (rng.uniform(0, 256), rng.uniform(0, 648)))
    path = tmp_path / "archive.csv"
    archive.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "cell_0,cell_1,objective,measure_0,measure_1,solution"
    loaded = GridArchive.from_csv(path, MAZE_SPEC)
    assert len(loaded) == len(archive)
    for e in archive:
        l = loaded.elite_at(e.cell)
        assert l.objective == e.objective  # full round-trip precision
        assert np.array_equal(l.measures, e.measures)
        assert np.array_equal(l.solution.astype(int), e.solution.astype(int))
    # byte-identical re-serialization
    path2 = tmp_path / "again.csv"
    loaded.to_csv(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_sample_elite_uniformity():
    spec = small_spec((4, 1))
    archive = GridArchive(spec)
    for i in range(4):
        archive.add(np.array([i]), 1.0, ((i + 0.5) / 4, 0.5))
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    for _ in range(4000):
        counts[int(archive.sample_elite(rng).solution[0])] += 1
    assert counts.min() > 800  # roughly uniform
