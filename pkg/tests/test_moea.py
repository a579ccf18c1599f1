import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomoea import (
    InvalidConfigError,
    Individual,
    MoeaConfig,
    PrivacyConfig,
    binary_partition,
    binary_tournament,
    crossover,
    crowding_distance,
    dominates,
    dpive_baseline,
    evolve,
    fast_nondominated_sort,
    hypervolume,
    min_conditional_error,
    mutate,
    pso_baseline,
    validate_partition,
    verify_dp_within_pls,
)
from geomoea.mechanism import build_matrix
from geomoea.pls import PlsContext
from conftest import make_domain, random_domain
from oracles import brute_hypervolume, brute_nds, mc_hypervolume

# Small enough that evolve runs in seconds, big enough for 4 cells.
CFG = PrivacyConfig(epsilon0=1.0, e_m=0.1, n0=15, min_report_locations=30, min_report_plss=2)


def small_setup(seed=5, n=64):
    domain = random_domain(np.random.default_rng(seed), n)
    tree = binary_partition(domain, CFG.n0)
    return domain, tree


def fake(obj, rank=0, crowding=0.0):
    return Individual(partition=None, objectives=obj, rank=rank, crowding=crowding)


# -- dominance and sorting ----------------------------------------------------


def test_dominates_truth_table():
    assert dominates((1.0, 2.0), (2.0, 2.0))
    assert dominates((1.0, 1.0), (1.0, 2.0))
    assert not dominates((1.0, 2.0), (2.0, 1.0))
    assert not dominates((2.0, 1.0), (1.0, 2.0))
    assert not dominates((1.0, 2.0), (1.0, 2.0))


@given(
    st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
    st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
)
@settings(max_examples=200, deadline=None)
def test_dominates_is_a_strict_partial_order(a, b):
    assert not dominates(a, a)
    assert not (dominates(a, b) and dominates(b, a))


def test_nds_frozen_example():
    objs = [(1.0, 1.0), (2.0, 2.0), (1.0, 3.0), (3.0, 1.0)]
    fronts = fast_nondominated_sort(objs)
    assert fronts[0] == [0]
    assert sorted(fronts[1]) == [1, 2, 3]
    assert len(fronts) == 2


def test_nds_identical_points_share_one_front():
    fronts = fast_nondominated_sort([(1.0, 1.0)] * 5)
    assert len(fronts) == 1
    assert sorted(fronts[0]) == [0, 1, 2, 3, 4]


def test_nds_covers_population_once():
    rng = np.random.default_rng(0)
    objs = [tuple(v) for v in rng.uniform(0, 4, size=(30, 2))]
    fronts = fast_nondominated_sort(objs)
    flat = sorted(i for front in fronts for i in front)
    assert flat == list(range(30))


def test_nds_agrees_with_oracle():
    rng = np.random.default_rng(42)
    for case in range(20):
        n = int(rng.integers(2, 51))
        # integer grid forces plenty of ties and duplicates
        objs = [tuple(map(float, v)) for v in rng.integers(0, 6, size=(n, 2))]
        got = [sorted(front) for front in fast_nondominated_sort(objs)]
        assert got == brute_nds(objs), f"case {case}"


# -- crowding and selection ---------------------------------------------------


def test_crowding_frozen_example():
    dist = crowding_distance([(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)])
    assert dist[0] == math.inf and dist[2] == math.inf
    assert dist[1] == pytest.approx(2.0)


def test_crowding_tiny_fronts_are_all_infinite():
    assert np.all(np.isinf(crowding_distance([(1.0, 2.0)])))
    assert np.all(np.isinf(crowding_distance([(1.0, 2.0), (2.0, 1.0)])))
    assert crowding_distance([]).size == 0


def test_crowding_duplicates_stay_finite_inside():
    dist = crowding_distance([(1.0, 3.0), (2.0, 2.0), (2.0, 2.0), (3.0, 1.0)])
    assert np.isfinite(dist[1]) and np.isfinite(dist[2])


def contested_seeds(n_pop=2, want=25):
    """Seeds whose first two index draws differ, so the comparison rule fires."""
    seeds = []
    for s in range(1000):
        i, j = np.random.default_rng(s).integers(n_pop, size=2)
        if i != j:
            seeds.append(s)
        if len(seeds) == want:
            return seeds
    raise AssertionError("rng never drew two distinct contestants")


def test_tournament_rank_beats_crowding():
    pop = [fake((0.0, 0.0), rank=1, crowding=math.inf), fake((0.0, 0.0), rank=0, crowding=0.0)]
    for seed in contested_seeds():
        assert binary_tournament(pop, np.random.default_rng(seed)).rank == 0


def test_tournament_crowding_breaks_rank_tie():
    pop = [fake((0.0, 0.0), rank=0, crowding=0.5), fake((0.0, 0.0), rank=0, crowding=2.0)]
    for seed in contested_seeds():
        assert binary_tournament(pop, np.random.default_rng(seed)).crowding == 2.0


def test_tournament_full_tie_is_a_coin_flip():
    a = fake((0.0, 0.0))
    b = fake((0.0, 0.0))
    winners = {id(binary_tournament([a, b], np.random.default_rng(s))) for s in range(200)}
    assert winners == {id(a), id(b)}


# -- hypervolume --------------------------------------------------------------


def test_hypervolume_frozen_examples():
    assert hypervolume([(1.0, 2.0), (2.0, 1.0)], (3.0, 3.0)) == pytest.approx(3.0)
    assert hypervolume([(1.0, 1.0)], (2.0, 2.0)) == pytest.approx(1.0)
    assert hypervolume([], (3.0, 3.0)) == 0.0


def test_hypervolume_rejects_point_beyond_reference():
    with pytest.raises(InvalidConfigError):
        hypervolume([(4.0, 1.0)], (3.0, 3.0))


def test_hypervolume_dominated_points_add_nothing():
    base = hypervolume([(1.0, 2.0), (2.0, 1.0)], (3.0, 3.0))
    assert hypervolume([(1.0, 2.0), (2.0, 1.0), (2.5, 2.5)], (3.0, 3.0)) == pytest.approx(base)


def test_hypervolume_agrees_with_oracles():
    rng = np.random.default_rng(9)
    ref = (10.0, 10.0)
    for case in range(25):
        n = int(rng.integers(1, 13))
        pts = [tuple(map(float, v)) for v in rng.uniform(0, 10, size=(n, 2))]
        got = hypervolume(pts, ref)
        assert got == pytest.approx(brute_hypervolume(pts, ref), abs=1e-9), f"case {case}"
    pts = [tuple(map(float, v)) for v in rng.uniform(0, 9, size=(8, 2))]
    est, half = mc_hypervolume(pts, ref, 200_000, np.random.default_rng(3))
    assert abs(hypervolume(pts, ref) - est) <= half


# -- variation operators ------------------------------------------------------


def allowed_counts(ctx):
    out = {}
    for ci, k in enumerate(ctx.k_by_cell):
        m = len(ctx.cell_indices[ci])
        out[ci] = {k, min(k + 1, m // 2)}
    return out


def counts_by_cell(partition, n_cells):
    counts = dict.fromkeys(range(n_cells), 0)
    for pls in partition.plss:
        counts[pls.cell_id] += 1
    return counts


def test_crossover_offspring_group_counts():
    domain, tree = small_setup()
    ctx = PlsContext(domain, tree, CFG, seed=0)
    allowed = allowed_counts(ctx)
    rng = np.random.default_rng(100)
    parents = [Individual(partition=ctx.ret_c(base_key=(9, i))) for i in range(5)]
    for trial in range(100):
        child = crossover(parents, tree, domain, CFG, rng)
        assert validate_partition(child.partition, domain, CFG, tree) == []
        for ci, count in counts_by_cell(child.partition, len(tree.cells)).items():
            assert count in allowed[ci], f"trial {trial} cell {ci}"


def test_crossover_is_deterministic_per_seed():
    domain, tree = small_setup()
    ctx = PlsContext(domain, tree, CFG, seed=0)
    parents = [Individual(partition=ctx.ret_c(base_key=(9, i))) for i in range(5)]
    a = crossover(parents, tree, domain, CFG, np.random.default_rng(7))
    b = crossover(parents, tree, domain, CFG, np.random.default_rng(7))
    assert [p.member_ids for p in a.partition.plss] == [p.member_ids for p in b.partition.plss]


def test_mutate_output_is_valid_and_deterministic():
    domain, tree = small_setup(seed=11)
    ctx = PlsContext(domain, tree, CFG, seed=1)
    parent = Individual(partition=ctx.ret_c(base_key=(3, 0)))
    a = mutate(parent, tree, domain, CFG, np.random.default_rng(21))
    b = mutate(parent, tree, domain, CFG, np.random.default_rng(21))
    assert validate_partition(a.partition, domain, CFG, tree) == []
    assert [p.member_ids for p in a.partition.plss] == [p.member_ids for p in b.partition.plss]


def test_mutate_single_group_cell_gets_rebuilt():
    # 4 locations, n0=2: two cells of two, so k=1 with one group of 2 each
    cfg = PrivacyConfig(epsilon0=1.0, e_m=0.01, n0=2, min_report_locations=4, min_report_plss=2)
    domain = make_domain([(0.0, 0.0), (1.0, 0.0), (5.0, 0.0), (6.0, 0.0)])
    tree = binary_partition(domain, cfg.n0)
    ctx = PlsContext(domain, tree, cfg, seed=2)
    parent = Individual(partition=ctx.ret_c(base_key=(0, 0)))
    child = mutate(parent, tree, domain, cfg, np.random.default_rng(5))
    assert validate_partition(child.partition, domain, cfg, tree) == []
    assert counts_by_cell(child.partition, len(tree.cells)) == {0: 1, 1: 1}


# -- evolve -------------------------------------------------------------------


def quick_moea(seed=4, gens=6):
    return MoeaConfig(population=8, max_generations=gens, tournament_pool=3, seed=seed)


def test_evolve_trace_is_monotone_and_front_non_dominated():
    domain, tree = small_setup()
    front = evolve(domain, tree, CFG, quick_moea())
    assert len(front.hv_trace) >= 2
    diffs = np.diff(front.hv_trace)
    assert np.all(diffs >= -1e-12)
    objs = [ind.objectives for ind in front.members]
    for i, a in enumerate(objs):
        for j, b in enumerate(objs):
            assert not (i != j and dominates(a, b)), (a, b)


def test_evolve_front_members_are_deployable():
    domain, tree = small_setup()
    front = evolve(domain, tree, CFG, quick_moea(seed=8, gens=4))
    assert front.members
    for ind in front.members:
        assert validate_partition(ind.partition, domain, CFG, tree) == []
        matrix = build_matrix(ind.partition, domain)
        report = verify_dp_within_pls(matrix, ind.partition)
        assert report.passed
        assert min_conditional_error(domain, matrix) >= CFG.e_m - 1e-9
        pair = ind.partition.objectives
        assert ind.objectives == (pair.qloss, -pair.exp_err)


def test_evolve_is_deterministic_and_thread_invariant():
    domain, tree = small_setup(seed=13)
    runs = [evolve(domain, tree, CFG, quick_moea(gens=3), n_threads=t) for t in (1, 1, 2)]
    keys = [sorted(ind.objectives for ind in front.members) for front in runs]
    assert keys[0] == keys[1] == keys[2]
    assert runs[0].hv_trace == runs[1].hv_trace == runs[2].hv_trace


def test_evolve_reference_caps_the_trace():
    domain, tree = small_setup(seed=19)
    front = evolve(domain, tree, CFG, quick_moea(gens=3))
    rx, ry = front.reference
    box = rx * ry if rx > 0 and ry > 0 else math.inf
    assert 0.0 < front.hv_trace[-1] <= box + 1e-12


def test_moea_config_validation():
    with pytest.raises(InvalidConfigError):
        MoeaConfig(population=5)
    with pytest.raises(InvalidConfigError):
        MoeaConfig(population=2)
    with pytest.raises(InvalidConfigError):
        MoeaConfig(max_generations=0)
    with pytest.raises(InvalidConfigError):
        MoeaConfig(tournament_pool=1)
    assert MoeaConfig().max_generations == 500


# -- baselines ----------------------------------------------------------------


def test_pso_returns_one_solution_per_alpha():
    domain, tree = small_setup()
    alphas = (0.0, 0.5, 1.0)
    rows = pso_baseline(domain, tree, CFG, alphas, mcfg=quick_moea(), particles=4, iterations=3)
    assert [a for a, _ in rows] == list(alphas)
    for _, ind in rows:
        assert validate_partition(ind.partition, domain, CFG, tree) == []
        assert ind.objectives is not None


def test_pso_is_deterministic():
    domain, tree = small_setup()
    runs = [
        pso_baseline(domain, tree, CFG, (0.5,), mcfg=quick_moea(), particles=4, iterations=2)
        for _ in range(2)
    ]
    assert runs[0][0][1].objectives == runs[1][0][1].objectives


def test_dpive_spends_the_full_budget_everywhere():
    domain, tree = small_setup()
    ind = dpive_baseline(domain, tree, CFG, np.random.default_rng(6))
    assert validate_partition(ind.partition, domain, CFG, tree) == []
    for pls in ind.partition.plss:
        assert pls.epsilon == pytest.approx(CFG.epsilon0)
    cells = {cell.id: cell.member_ids for cell in tree.cells}
    for pls, rng_ids in zip(ind.partition.plss, ind.partition.reporting_ranges):
        assert rng_ids == cells[pls.cell_id]
    matrix = build_matrix(ind.partition, domain)
    assert min_conditional_error(domain, matrix) >= CFG.e_m - 1e-9
