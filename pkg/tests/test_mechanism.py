import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomoea import (
    DegeneratePlsError,
    InvalidConfigError,
    PrivacyConfig,
    binary_partition,
    build_matrix,
    build_reporting_ranges,
    identity_matrix,
    loss_kernel,
    matrix_from_payload,
    matrix_payload,
    mechanism_row,
    quality_loss_at,
    read_matrix_binary,
    ret_c,
    row_sums,
    sample_pseudo,
    verify_cross_pls,
    verify_dp_within_pls,
    write_matrix_binary,
)
from geomoea.pls import Pls, PlsPartition
from conftest import domain_dicts, make_domain, matrix_rows, random_domain
from oracles import brute_dp_ratio


def pair_pls(epsilon=2.0):
    return Pls(member_ids=(0, 1), diameter=1.0, e_prime=0.5, epsilon=epsilon, cell_id=0)


@pytest.fixture
def pair(pair_domain):
    return pair_domain, pair_pls()


@pytest.fixture(scope="module")
def bench_matrix_setup():
    from conftest import BENCH_SPEC
    from geomoea import load_domain

    domain = load_domain(BENCH_SPEC)
    cfg = PrivacyConfig()
    tree = binary_partition(domain, cfg.n0)
    partition = ret_c(tree, domain, cfg, np.random.default_rng(12))
    build_reporting_ranges(partition, domain, cfg)
    matrix = build_matrix(partition, domain)
    return domain, cfg, partition, matrix


# -- mechanism_row -----------------------------------------------------------------


def test_row_two_point_hand_values(pair):
    dom, pls = pair
    row = mechanism_row(dom.location(0), pls, (0, 1), dom)
    assert row[0] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-4)
    assert row[1] == pytest.approx(0.2689, abs=1e-4)
    assert row.sum() == pytest.approx(1.0)


def test_row_vanishing_budget_is_uniform(pair):
    dom, _ = pair
    pls = pair_pls(epsilon=1e-12)
    row = mechanism_row(dom.location(0), pls, (0, 1), dom)
    assert np.all(np.abs(row - 0.5) < 1e-9)


def test_row_true_location_gets_the_mode():
    rng = np.random.default_rng(8)
    dom = random_domain(rng, 12, side=3.0)
    members = tuple(range(12))
    idx = np.arange(12)
    diam = float(dom.distance_matrix[np.ix_(idx, idx)].max())
    pls = Pls(member_ids=members, diameter=diam, e_prime=1.0, epsilon=1.0, cell_id=0)
    for loc in dom.locations:
        row = mechanism_row(loc, pls, members, dom)
        assert np.argmax(row) == loc.id


def test_row_rejects_non_member(pair):
    dom, pls = pair
    other = make_domain([(0, 0), (1, 0), (2, 0)])
    with pytest.raises(InvalidConfigError):
        mechanism_row(other.location(2), pls, (0, 1), other)


def test_row_rejects_zero_diameter(pair):
    dom, _ = pair
    flat = Pls(member_ids=(0, 1), diameter=0.0, e_prime=0.0, epsilon=1.0, cell_id=0)
    with pytest.raises(DegeneratePlsError):
        mechanism_row(dom.location(0), flat, (0, 1), dom)


# -- loss kernel --------------------------------------------------------------------


def test_loss_kernel_monotone_on_grid():
    rng = np.random.default_rng(2)
    grid = np.arange(0.1, 5.01, 0.1)
    for _ in range(20):
        d = rng.uniform(0.0, 4.0, size=int(rng.integers(2, 30)))
        values = [loss_kernel(d, g) for g in grid]
        diffs = np.diff(values)
        assert np.all(diffs <= 1e-12)


def test_loss_kernel_limits():
    d = np.array([0.0, 1.0, 3.0])
    assert loss_kernel(d, 0.0) == pytest.approx(d.mean())
    assert loss_kernel(d, 200.0) == pytest.approx(0.0, abs=1e-12)


def test_loss_kernel_large_rate_does_not_overflow():
    d = np.array([10.0, 500.0, 1000.0])
    assert loss_kernel(d, 1000.0) == pytest.approx(10.0)


# -- matrix assembly -----------------------------------------------------------------


def test_build_matrix_rows_sum_to_one(bench_matrix_setup):
    _, _, _, matrix = bench_matrix_setup
    assert len(matrix.row_ids) == 400
    assert np.abs(row_sums(matrix) - 1.0).max() < 1e-9


def test_same_set_shares_support(bench_matrix_setup):
    _, _, partition, matrix = bench_matrix_setup
    for pls in partition.plss:
        first, *rest = pls.member_ids
        base, _ = matrix.row(first)
        for mid in rest:
            support, _ = matrix.row(mid)
            assert support is base  # literally the same array, by construction


def test_all_probabilities_positive(bench_matrix_setup):
    _, _, _, matrix = bench_matrix_setup
    assert all(np.all(p > 0.0) for p in matrix.probs)


def test_matrix_needs_reporting_ranges(pair_domain):
    partition = PlsPartition(plss=[pair_pls()])
    with pytest.raises(InvalidConfigError, match="reporting ranges"):
        build_matrix(partition, pair_domain)


def test_matrix_row_lookup_unknown_id(bench_matrix_setup):
    _, _, _, matrix = bench_matrix_setup
    with pytest.raises(InvalidConfigError):
        matrix.row(404000)


def test_json_roundtrip_is_bit_identical(bench_matrix_setup):
    domain, _, _, matrix = bench_matrix_setup
    payload = json.loads(json.dumps(matrix_payload(matrix)))
    back = matrix_from_payload(payload, domain)
    assert back.row_ids == matrix.row_ids
    for i in range(len(matrix.row_ids)):
        assert np.array_equal(back.supports[i], matrix.supports[i])
        assert np.array_equal(back.probs[i], matrix.probs[i])


def test_binary_roundtrip_is_bit_identical(tmp_path, bench_matrix_setup):
    domain, _, _, matrix = bench_matrix_setup
    path = tmp_path / "m.bin"
    write_matrix_binary(matrix, path)
    back = read_matrix_binary(path, domain)
    assert back.row_ids == matrix.row_ids
    for i in range(len(matrix.row_ids)):
        assert np.array_equal(back.supports[i], matrix.supports[i])
        assert np.array_equal(back.probs[i], matrix.probs[i])


def test_binary_rejects_bad_magic(tmp_path, pair_domain):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(InvalidConfigError, match="magic"):
        read_matrix_binary(path, pair_domain)


def test_identity_matrix_reports_self(grid_domain):
    matrix = identity_matrix(grid_domain)
    for loc in grid_domain.locations:
        support, probs = matrix.row(loc.id)
        assert list(support) == [loc.id]
        assert probs[0] == 1.0


# -- sampling -----------------------------------------------------------------------


def test_sample_degenerate_row(grid_domain):
    matrix = identity_matrix(grid_domain)
    rng = np.random.default_rng(0)
    assert all(sample_pseudo(matrix, grid_domain.location(4), rng).id == 4 for _ in range(20))


def test_sample_matches_probabilities_within_3_sigma(pair):
    dom, pls = pair
    partition = PlsPartition(plss=[pls], reporting_ranges=[(0, 1)])
    matrix = build_matrix(partition, dom)
    _, probs = matrix.row(0)
    n = 100_000
    rng = np.random.default_rng(77)
    hits = sum(sample_pseudo(matrix, dom.location(0), rng).id == 0 for _ in range(n))
    sigma = math.sqrt(probs[0] * (1 - probs[0]) / n)
    assert abs(hits / n - probs[0]) < 3 * sigma


def test_sample_deterministic_with_equal_seeds(bench_matrix_setup):
    domain, _, _, matrix = bench_matrix_setup
    a = [
        sample_pseudo(matrix, domain.location(i), np.random.default_rng(100 + i))
        for i in range(50)
    ]
    b = [
        sample_pseudo(matrix, domain.location(i), np.random.default_rng(100 + i))
        for i in range(50)
    ]
    assert a == b


# -- quality loss ------------------------------------------------------------------


def test_quality_loss_identity_is_zero(grid_domain):
    matrix = identity_matrix(grid_domain)
    assert quality_loss_at(grid_domain.location(0), matrix, grid_domain) == 0.0


def test_quality_loss_two_point_example(pair):
    dom, pls = pair
    partition = PlsPartition(plss=[pls], reporting_ranges=[(0, 1)])
    matrix = build_matrix(partition, dom)
    assert quality_loss_at(dom.location(0), matrix, dom) == pytest.approx(0.2689, abs=1e-4)


def test_quality_loss_uniform_row():
    dom = make_domain([(0.0, 0.0), (1.0, 0.0)])
    pls = pair_pls(epsilon=1e-12)
    partition = PlsPartition(plss=[pls], reporting_ranges=[(0, 1)])
    matrix = build_matrix(partition, dom)
    assert quality_loss_at(dom.location(0), matrix, dom) == pytest.approx(0.5, abs=1e-9)


# -- DP verification ----------------------------------------------------------------


def test_dp_uniform_rows_ratio_one(pair):
    dom, _ = pair
    pls = pair_pls(epsilon=1e-12)
    partition = PlsPartition(plss=[pls], reporting_ranges=[(0, 1)])
    matrix = build_matrix(partition, dom)
    report = verify_dp_within_pls(matrix, partition, epsilon0=1.0)
    assert report.passed
    assert report.max_ratio == pytest.approx(1.0, abs=1e-9)


def test_dp_two_point_ratio_is_e(pair):
    dom, pls = pair
    partition = PlsPartition(plss=[pls], reporting_ranges=[(0, 1)])
    matrix = build_matrix(partition, dom)
    report = verify_dp_within_pls(matrix, partition, epsilon0=2.0)
    assert report.passed
    assert report.max_ratio == pytest.approx(math.e, rel=1e-9)


def test_dp_bench_partition_passes_and_matches_oracle(bench_matrix_setup):
    domain, cfg, partition, matrix = bench_matrix_setup
    report = verify_dp_within_pls(matrix, partition)
    assert report.passed
    assert report.bound == pytest.approx(math.exp(cfg.epsilon0) * (1 + 1e-9))
    coords, _ = domain_dicts(domain)
    oracle = brute_dp_ratio(coords, matrix_rows(matrix), [p.member_ids for p in partition.plss])
    assert report.max_ratio == pytest.approx(oracle, rel=1e-9)


def test_dp_random_partitions_pass():
    rng = np.random.default_rng(55)
    cfg = PrivacyConfig(n0=20, min_report_locations=30)
    for trial in range(5):
        dom = random_domain(rng, 100, side=7.0)
        tree = binary_partition(dom, cfg.n0)
        partition = ret_c(tree, dom, cfg, np.random.default_rng(trial))
        build_reporting_ranges(partition, dom, cfg)
        matrix = build_matrix(partition, dom)
        assert verify_dp_within_pls(matrix, partition).passed


def test_cross_pls_disjoint_is_not_applicable():
    dom = make_domain([(0, 0), (0.5, 0), (10, 0), (10.5, 0)])
    plss = [
        Pls((0, 1), 0.5, 0.25, 1.0, 0),
        Pls((2, 3), 0.5, 0.25, 1.0, 1),
    ]
    partition = PlsPartition(plss=plss, reporting_ranges=[(0, 1), (2, 3)])
    matrix = build_matrix(partition, dom)
    report = verify_cross_pls(matrix, partition, 0, 1)
    assert not report.applicable


def _range_diameter(domain, ids):
    idx = [domain.index_of(i) for i in ids]
    return float(domain.distance_matrix[np.ix_(idx, idx)].max())


def test_cross_pls_identical_ranges_prefactor_one(bench_matrix_setup):
    domain, cfg, partition, matrix = bench_matrix_setup
    pairs = [
        (i, j)
        for i in range(len(partition.plss))
        for j in range(len(partition.plss))
        if i != j and partition.reporting_ranges[i] == partition.reporting_ranges[j]
    ]
    assert pairs, "benchmark partition should contain sets sharing a range"
    i, j = pairs[0]
    report = verify_cross_pls(matrix, partition, i, j)
    assert report.applicable
    pi, pj = partition.plss[i], partition.plss[j]
    dy = _range_diameter(domain, partition.reporting_ranges[i])
    # prefactor |Y_j| / |Y_i| collapses to 1 for identical ranges
    expected = math.exp((cfg.epsilon0 / 2.0) * (dy / pj.diameter + dy / pi.diameter))
    assert report.bound == pytest.approx(expected, rel=1e-12)
    assert report.passed


def test_cross_pls_all_overlapping_pairs_pass(bench_matrix_setup):
    domain, _, partition, matrix = bench_matrix_setup
    checked = 0
    for i in range(len(partition.plss)):
        for j in range(len(partition.plss)):
            if i == j:
                continue
            report = verify_cross_pls(matrix, partition, i, j)
            if report.applicable:
                checked += 1
                assert report.passed
                assert report.observed <= report.bound * (1 + 1e-9)
    assert checked > 0
