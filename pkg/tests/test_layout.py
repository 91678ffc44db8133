import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from commlab.layout import (
    PANEL_TO_STACK, STACK_TO_PANEL, LayoutError, RowPartition, build_redistribution_plan,
    make_layout, matching_stack, redistribution_volume, uniform_row_partition,
)
from oracles import owner_map, redistribution_entries


@pytest.mark.parametrize("D, N_p, bounds", [
    (8, 4, (0, 2, 4, 6, 8)),
    (10, 4, (0, 3, 6, 8, 10)),
    (5, 5, (0, 1, 2, 3, 4, 5)),
])
def test_uniform_partition_examples(D, N_p, bounds):
    assert uniform_row_partition(D, N_p).bounds == bounds


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10_000), st.integers(1, 64))
def test_uniform_partition_properties(D, N_p):
    if N_p > D:
        with pytest.raises(LayoutError):
            uniform_row_partition(D, N_p)
        return
    part = uniform_row_partition(D, N_p)
    sizes = part.sizes
    assert part.D == D and part.N_p == N_p
    assert sizes.max() - sizes.min() <= 1
    assert np.all(np.diff(sizes) <= 0)
    rows = np.arange(D)
    own = part.owner(rows)
    for p in range(N_p):
        lo, hi = part.slice(p)
        assert np.all(own[lo:hi] == p)


def test_partition_validation():
    with pytest.raises(LayoutError):
        RowPartition((0, 3, 2))
    with pytest.raises(LayoutError):
        RowPartition((1, 3))


def test_make_layout_panel_example():
    L = make_layout(6, 2, 600, 12)
    assert (L.N_row, L.N_col) == (3, 2)
    assert L.row_bounds == (0, 200, 400, 600)
    assert L.col_bounds == (0, 6, 12)
    assert L.kind == "panel"
    assert make_layout(6, 1, 600, 12).kind == "stack"
    assert make_layout(6, 6, 600, 12).kind == "pillar"


def test_rank_order_column_major():
    L = make_layout(6, 2, 600, 12)
    assert [L.cell(r) for r in range(6)] == [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
    assert L.column_ranks(1) == [3, 4, 5]
    assert L.tile(4) == (200, 400, 6, 12)


@pytest.mark.parametrize("args", [(6, 4, 600, 12), (4, 8, 100, 8), (4, 2, 100, 1), (0, 1, 10, 1)])
def test_make_layout_errors(args):
    with pytest.raises(LayoutError):
        make_layout(*args)


def test_matching_stack_examples():
    assert matching_stack(make_layout(6, 2, 600, 12)).row_bounds == tuple(range(0, 601, 100))
    assert matching_stack(make_layout(4, 2, 8, 4)).row_bounds == (0, 2, 4, 6, 8)
    pillar = make_layout(5, 5, 103, 10)
    assert matching_stack(pillar).row_bounds == uniform_row_partition(103, 5).bounds


def test_matching_stack_rank_placement():
    panel = make_layout(6, 2, 600, 12)
    stack = matching_stack(panel)
    for k in range(6):
        i, j = divmod(k, panel.N_col)
        assert stack.ranks[k][0] == panel.ranks[i][j]
    assert sorted(r[0] for r in stack.ranks) == list(range(6))


def test_plan_same_panel_row():
    panel = make_layout(6, 2, 600, 12)
    plan = build_redistribution_plan(matching_stack(panel), panel)
    assert plan.entries_total == 3600
    for t in plan.transfers:
        assert panel.cell(t.src)[0] == panel.cell(t.dst)[0]


def test_plan_stack_only_is_empty():
    panel = make_layout(4, 1, 100, 8)
    plan = build_redistribution_plan(matching_stack(panel), panel)
    assert plan.transfers == () and plan.entries_total == 0
    assert redistribution_volume(panel).entries_total == 0


def test_plan_small_hand_case():
    # D = 4 rows over four stack ranks leaves one row per rank, so each
    # rank ships the half of its row that belongs to the other panel column.
    panel = make_layout(4, 2, 4, 4)
    plan = build_redistribution_plan(matching_stack(panel), panel)
    assert plan.entries_total == 8
    assert len(plan.transfers) == 4
    assert all(t.entries == 2 for t in plan.transfers)
    assert sorted((t.src, t.dst) for t in plan.transfers) == [(0, 2), (1, 3), (2, 0), (3, 1)]


def test_plan_reversed_and_json():
    panel = make_layout(6, 3, 61, 9)
    stack = matching_stack(panel)
    fwd = build_redistribution_plan(stack, panel)
    back = build_redistribution_plan(stack, panel, PANEL_TO_STACK)
    assert back.direction == PANEL_TO_STACK and fwd.direction == STACK_TO_PANEL
    np.testing.assert_array_equal(back.pair_entries(), fwd.pair_entries().T)
    doc = json.loads(fwd.to_json())
    assert doc["entries_total"] == fwd.entries_total
    assert len(doc["transfers"]) == len(fwd.transfers)


def test_plan_rejects_mismatch():
    with pytest.raises(LayoutError):
        build_redistribution_plan(make_layout(4, 1, 100, 8), make_layout(4, 2, 101, 8))
    with pytest.raises(LayoutError):
        build_redistribution_plan(make_layout(4, 2, 100, 8), make_layout(4, 2, 100, 8))


@pytest.mark.parametrize("P, D, N_s", [(2, 10, 3), (4, 100, 8), (7, 99, 7)])
def test_pillar_volume(P, D, N_s):
    panel = make_layout(P, P, D, N_s)
    plan = build_redistribution_plan(matching_stack(panel), panel)
    assert redistribution_volume(panel).entries_total == pytest.approx(N_s * D * (1 - 1 / P))
    if N_s % P == 0:
        assert plan.entries_total == N_s * D * (1 - 1 / P)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 16), st.data())
def test_plan_matches_formula_and_oracle(P, data):
    divisors = [c for c in range(1, P + 1) if P % c == 0]
    N_col = data.draw(st.sampled_from(divisors))
    N_s = N_col * data.draw(st.integers(1, 4))
    D = data.draw(st.integers(P, 300))
    panel = make_layout(P, N_col, D, N_s)
    stack = matching_stack(panel)
    plan = build_redistribution_plan(stack, panel)
    vol = redistribution_volume(panel, S_d=16)
    assert plan.entries_total == redistribution_entries(stack, panel)
    assert plan.entries_total == round(vol.entries_total)
    assert vol.bytes_total == 16 * vol.entries_total
    # every entry is covered exactly once by transfers plus overlaps
    cover = np.zeros((D, N_s), dtype=int)
    for t in plan.transfers + plan.overlaps:
        cover[t.rows[0]:t.rows[1], t.cols[0]:t.cols[1]] += 1
    assert np.all(cover == 1)
    own_s = owner_map(D, N_s, stack.row_bounds, stack.col_bounds, stack.ranks)
    own_p = owner_map(D, N_s, panel.row_bounds, panel.col_bounds, panel.ranks)
    for t in plan.transfers:
        assert np.all(own_s[t.rows[0]:t.rows[1], t.cols[0]:t.cols[1]] == t.src)
        assert np.all(own_p[t.rows[0]:t.rows[1], t.cols[0]:t.cols[1]] == t.dst)
