import math
from dataclasses import replace

import numpy as np
import pytest

from core.config import BilevelConfig
from core.nn.supernet import Architecture, SearchSpace, oracle_27
from core.selectors import FORWARD_COST
from core.services.search_service import (
    ALPHA,
    REFRESH,
    THETA,
    AdaptiveSearch,
    SearchError,
    adaptive_dpt,
    build_schedule,
    count_cost,
    darts_pt,
    darts_pt_config,
    train_final,
)
from core.utils.data_utils import BlobSpec, gen_blobs


@pytest.fixture(scope="module")
def wide_blobs():
    return gen_blobs(BlobSpec(classes=2, dim=4, n=400, n_test=400, separation=6.0), seed=0)


def test_schedule_matches_arithmetic_progressions():
    rng = np.random.default_rng(0)
    for _ in range(100):
        T = int(rng.integers(1, 200))
        T1 = int(rng.integers(1, 50))
        T2 = int(rng.integers(1, 20))
        events = build_schedule(T, T1, T2)
        assert [t for t, k in events if k == REFRESH] == list(range(0, T, T1))
        assert [t for t, k in events if k == ALPHA] == list(range(0, T, T2))
        assert [t for t, k in events if k == THETA] == list(range(T))


def test_schedule_orders_events_within_a_step():
    assert build_schedule(2, 1, 1) == [
        (0, REFRESH), (0, ALPHA), (0, THETA), (1, REFRESH), (1, ALPHA), (1, THETA),
    ]


def test_schedule_without_refresh_period_refreshes_once():
    events = build_schedule(50, None, 3)
    assert [t for t, k in events if k == REFRESH] == [0]


def test_schedule_ten_epoch_refresh_count():
    # 100 epochs of one step each, refresh every 10 epochs
    assert sum(1 for _, k in build_schedule(100, 10, 1) if k == REFRESH) == 10


def test_schedule_rejects_bad_periods():
    with pytest.raises(SearchError):
        build_schedule(10, 0, 1)
    with pytest.raises(SearchError):
        build_schedule(10, 1, 0)


def test_empty_subset_is_rejected(small_blobs, fast_bilevel):
    cfg = replace(fast_bilevel, fraction=0.01)
    with pytest.raises(SearchError, match="empty subset"):
        adaptive_dpt(oracle_27(), small_blobs, cfg, seed=0)


def test_search_trace_bookkeeping(small_blobs, fast_bilevel):
    cfg = replace(fast_bilevel, selector="random")
    arch, trace = adaptive_dpt(oracle_27(), small_blobs, cfg, seed=0)
    k = int(math.floor(0.25 * len(small_blobs.y_train)))
    assert trace.subset_size == k
    assert trace.steps_per_epoch == math.ceil(k / cfg.batch_size)
    assert trace.refresh_steps == list(range(0, trace.total_steps, trace.steps_per_epoch))
    assert all(len(s) == k for _, s in trace.subsets)
    assert all(b >= a for a, b in zip(trace.counter, trace.counter[1:]))
    assert trace.theta_examples == cfg.epochs * k
    assert trace.architecture == arch
    assert isinstance(arch, Architecture)


def test_subset_size_is_ten_percent_of_ground_set():
    ds = gen_blobs(BlobSpec(n=1000, n_test=10), seed=1)
    cfg = BilevelConfig(epochs=1, fraction=0.10, selector="random", projection_epochs=0,
                        discretization="argmax")
    _, trace = adaptive_dpt(oracle_27(), ds, cfg, seed=0)
    assert len(ds.y_train) == 500
    assert all(len(s) == 50 for _, s in trace.subsets)


def test_full_data_cost_identity(small_blobs, fast_bilevel):
    cfg = replace(fast_bilevel, projection_epochs=0)
    _, trace = darts_pt(oracle_27(), small_blobs, cfg, seed=0)
    cost = count_cost(trace)
    assert cost.theta_examples == cfg.epochs * len(small_blobs.y_train)
    assert cost.selector_overhead == 0.0
    assert cost.total == cost.theta_examples


def test_ten_percent_run_uses_ten_times_fewer_theta_examples(small_blobs, fast_bilevel):
    base = replace(fast_bilevel, projection_epochs=0, selector="random")
    _, full = darts_pt(oracle_27(), small_blobs, base, seed=0)
    _, tenth = adaptive_dpt(oracle_27(), small_blobs, replace(base, fraction=0.1), seed=0)
    assert full.theta_examples == 10 * tenth.theta_examples


def test_glister_overhead_matches_independent_recount(small_blobs, fast_bilevel):
    cfg = replace(fast_bilevel, selector="glister", fraction=0.1)
    _, trace = adaptive_dpt(oracle_27(), small_blobs, cfg, seed=1)
    refreshes = sum(1 for _, kind in trace.events if kind == REFRESH)
    per_refresh = FORWARD_COST * (len(small_blobs.y_train) + len(small_blobs.y_val))
    assert refreshes == cfg.epochs // cfg.refresh_epochs
    assert trace.selector_overhead == pytest.approx(refreshes * per_refresh)
    assert count_cost(trace).total == pytest.approx(
        trace.theta_examples + trace.projection_examples + refreshes * per_refresh
    )


def test_cost_is_monotone_in_fraction(small_blobs, fast_bilevel):
    cfg = replace(fast_bilevel, selector="random")
    _, small = adaptive_dpt(oracle_27(), small_blobs, replace(cfg, fraction=0.25), seed=0)
    _, large = adaptive_dpt(oracle_27(), small_blobs, replace(cfg, fraction=0.5), seed=0)
    assert count_cost(small).total < count_cost(large).total


def test_subset_persists_between_refreshes(small_blobs, fast_bilevel):
    cfg = replace(fast_bilevel, selector="random", refresh_epochs=2)
    search = AdaptiveSearch(oracle_27(), small_blobs, cfg, seed=0)
    _, trace = search.run()
    assert len(trace.subsets) == 1
    assert trace.subsets[0][1] is search.selection


def test_degenerate_run_is_bit_identical_to_baseline(small_blobs, fast_bilevel):
    cfg = replace(fast_bilevel, fraction=1.0, refresh_epochs=None, selector="glister")
    arch_a, trace_a = adaptive_dpt(oracle_27(), small_blobs, cfg, seed=4, record_digests=True)
    arch_b, trace_b = darts_pt(oracle_27(), small_blobs, cfg, seed=4, record_digests=True)
    assert trace_a.step_digests == trace_b.step_digests
    assert trace_a.alpha_final == trace_b.alpha_final
    assert arch_a == arch_b


def test_darts_pt_config_is_full_data():
    cfg = darts_pt_config(BilevelConfig())
    assert (cfg.fraction, cfg.refresh_epochs, cfg.selector, cfg.projection_data) == (
        1.0, None, "full", "full")


def test_search_is_deterministic_per_seed(small_blobs, fast_bilevel):
    a = adaptive_dpt(oracle_27(), small_blobs, fast_bilevel, seed=2, record_digests=True)[1]
    b = adaptive_dpt(oracle_27(), small_blobs, fast_bilevel, seed=2, record_digests=True)[1]
    assert a.step_digests == b.step_digests
    assert a.architecture == b.architecture


def test_trace_record_embeds_subsets(small_blobs, fast_bilevel):
    _, trace = adaptive_dpt(oracle_27(), small_blobs, replace(fast_bilevel, selector="gradmatch"), seed=0)
    record = trace.to_record()
    assert record["refresh_steps"] == trace.refresh_steps
    assert len(record["subsets"]) == len(trace.subsets)
    assert record["subsets"][0]["weights"] is not None
    assert record["cost"] == count_cost(trace).total


def test_train_final_zero_epochs_is_chance(wide_blobs):
    arch = Architecture(oracle_27(), (2, 2, 2))
    acc = train_final(arch, wide_blobs.X_train, wide_blobs.y_train,
                      wide_blobs.X_test, wide_blobs.y_test, epochs=0, seed=0)
    assert abs(acc - 0.5) <= 0.1


def test_train_final_linear_arch_separates_blobs(wide_blobs):
    space = SearchSpace("linear", 2, ((0, 1),), (("Linear",),))
    arch = Architecture(space, (0,))
    acc = train_final(arch, wide_blobs.X_train, wide_blobs.y_train,
                      wide_blobs.X_test, wide_blobs.y_test, epochs=50, seed=0)
    assert acc >= 0.98


def test_train_final_is_deterministic(small_blobs):
    arch = Architecture(oracle_27(), (2, 1, 2))
    args = (small_blobs.X_train, small_blobs.y_train, small_blobs.X_test, small_blobs.y_test)
    assert train_final(arch, *args, epochs=3, seed=5) == train_final(arch, *args, epochs=3, seed=5)


def test_train_final_rejects_negative_epochs(small_blobs):
    arch = Architecture(oracle_27(), (0, 0, 0))
    with pytest.raises(SearchError):
        train_final(arch, small_blobs.X_train, small_blobs.y_train,
                    small_blobs.X_test, small_blobs.y_test, epochs=-1, seed=0)
