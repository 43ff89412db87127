"""Neuron accounting: the width ladder, usage fractions, MAC closed forms."""

from fractions import Fraction

import numpy as np
import pytest

from treeff import (
    FFFConfig,
    cmm_descend,
    dense_mac_count,
    fff_forward_traced,
    fff_mac_count,
    mac_ratio,
    neuron_usage,
    node_coverage,
    random_input,
    random_weights,
    usage_percent_string,
)
from treeff.errors import BoundsError

# the classic ladder of tree layouts holding roughly 4k neurons total:
# (trees, depth, total neurons, advertised usage percent)
WIDTH_LADDER = [
    (3072, 0, 3072, 100.0),
    (1536, 1, 4608, 66.6),
    (512, 2, 3584, 42.9),
    (256, 3, 3840, 26.7),
    (128, 4, 3968, 16.1),
    (64, 5, 4032, 9.5),
    (32, 6, 4064, 5.5),
    (16, 7, 4080, 3.1),
    (8, 8, 4088, 1.8),
    (4, 9, 4092, 1.0),
    (2, 10, 4094, 0.5),
    (1, 11, 4095, 0.3),
]


def _one_decimal_renderings(path_len):
    # exact percent as a fraction, rendered to one decimal both ways:
    # truncated and round-half-up; an advertised value must be one of them
    tenths = Fraction(1000 * path_len, 2 ** path_len - 1)
    floor = tenths.numerator // tenths.denominator
    trunc = floor / 10.0
    half_up = (floor + (1 if tenths - floor >= Fraction(1, 2) else 0)) / 10.0
    return trunc, half_up


@pytest.mark.parametrize("trees,depth,total,pct", WIDTH_LADDER)
def test_width_ladder_totals_and_usage(trees, depth, total, pct):
    cfg = FFFConfig(hidden_dim=768, num_trees=trees, depth_param=depth)
    usage = neuron_usage(cfg)
    path_len = depth + 1
    assert usage.total_neurons == total
    assert usage.neurons_per_token == trees * path_len
    assert Fraction(usage.usage_fraction).limit_denominator(10 ** 9) == Fraction(
        path_len, 2 ** path_len - 1
    )
    # the advertised ladder mixes display conventions (2/3 appears truncated
    # as 66.6, the rest round to nearest), so it must match one of the two
    # faithful renderings; our formatter always rounds half up
    trunc, half_up = _one_decimal_renderings(path_len)
    assert pct in (trunc, half_up)
    formatted = float(usage_percent_string(usage.usage_fraction).rstrip("%"))
    assert formatted == half_up


def test_usage_fraction_independent_of_tree_count():
    for depth in (0, 3, 7, 11):
        values = {
            neuron_usage(FFFConfig(16, trees, depth)).usage_fraction
            for trees in (1, 3, 64)
        }
        assert len(values) == 1


def test_percent_formatting_rounds_half_up():
    assert usage_percent_string(1.0) == "100.0%"
    assert usage_percent_string(2.0 / 3.0) == "66.7%"
    assert usage_percent_string(0.005) == "0.5%"
    assert usage_percent_string(0.0605) == "6.1%"
    assert usage_percent_string(12.0 / 4095.0) == "0.3%"


def test_mac_counts_closed_form():
    batch, hidden = 16384, 768
    dense = dense_mac_count(batch, hidden, 4095)
    routed = fff_mac_count(batch, hidden, 1, 12)
    assert dense.multiply_accumulates == 2 * batch * 4095 * hidden
    assert dense.weight_row_loads == 2 * batch * 4095
    assert routed.multiply_accumulates == 2 * batch * 1 * 12 * hidden
    assert routed.weight_row_loads == 2 * batch * 12


def test_flagship_mac_ratio_is_exact():
    dense = dense_mac_count(16384, 768, 4095)
    routed = fff_mac_count(16384, 768, 1, 12)
    # 4095 / 12 is exactly representable, so demand equality
    assert mac_ratio(dense, routed) == 341.25


def test_dense_width_ratio():
    wide = dense_mac_count(16384, 768, 4095)
    narrow = dense_mac_count(16384, 768, 3072)
    ratio = mac_ratio(wide, narrow)
    assert ratio == pytest.approx(1.3330, abs=5e-4)
    assert ratio == 4095 / 3072  # = 1365/1024, exact in binary


def test_each_token_engages_exactly_path_len_nodes_per_tree():
    cfg = FFFConfig(hidden_dim=8, num_trees=4, depth_param=5)
    weights = random_weights(cfg, 71)
    inp = random_input(32, 8, 72)
    _, traces = fff_forward_traced(inp, weights)
    assert len(traces) == 4
    for trace in traces:
        for row in trace.node_index:
            assert len(set(row.tolist())) == cfg.path_len


def test_node_coverage_counts_visits():
    cfg = FFFConfig(hidden_dim=8, num_trees=1, depth_param=3, has_input_bias=False)
    weights = random_weights(cfg, 73)
    trace = cmm_descend(random_input(4096, 8, 74), weights)
    counts = node_coverage(trace, cfg)
    assert counts.shape == (15,)
    assert counts[0] == 4096  # every row passes the root
    assert counts.sum() == 4096 * cfg.path_len
    assert (counts > 0).all()  # a wide batch reaches every node
    # depth levels partition the visits
    for d in range(cfg.path_len):
        lo, hi = 2 ** d - 1, 2 ** (d + 1) - 2
        assert counts[lo:hi + 1].sum() == 4096


def test_node_coverage_rejects_foreign_trace():
    cfg = FFFConfig(hidden_dim=8, num_trees=1, depth_param=1)
    big = FFFConfig(hidden_dim=8, num_trees=1, depth_param=5)
    weights = random_weights(big, 75)
    trace = cmm_descend(random_input(16, 8, 76), weights)
    with pytest.raises(BoundsError):
        node_coverage(trace, cfg)
