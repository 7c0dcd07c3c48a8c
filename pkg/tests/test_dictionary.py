import numpy as np
import pytest

from oracles import batch_basis_ridge, kron_dense
from tadell.dictionary import (
    Accumulator,
    CoupledDictionary,
    TaskRecord,
    accumulate,
    encounter_task,
    init_dictionary,
    recompute_basis,
    surrogate_objective,
)
from tadell.exceptions import DimensionMismatch
from tadell.sparse import weighted_lasso


def random_psd(rng, p):
    X = rng.standard_normal((p + 3, p))
    return X.T @ X / (p + 3)


class TestInit:
    def test_shapes(self):
        dic = init_dictionary(2, 3, 4, seed=7)
        assert dic.L.shape == (2, 4) and dic.D.shape == (3, 4)

    def test_deterministic(self):
        a, b = init_dictionary(2, 3, 4, 7), init_dictionary(2, 3, 4, 7)
        np.testing.assert_array_equal(a.L, b.L)
        np.testing.assert_array_equal(a.D, b.D)

    def test_degenerate(self):
        dic = init_dictionary(1, 1, 1, 0)
        assert np.isfinite(dic.L).all() and dic.L.shape == (1, 1) and dic.D.shape == (1, 1)

    def test_json_round_trip(self):
        dic = init_dictionary(3, 2, 4, 1)
        back = CoupledDictionary.from_json(dic.to_json({"mu": 0.1}, T=5))
        np.testing.assert_array_equal(back.L, dic.L)
        np.testing.assert_array_equal(back.D, dic.D)


class TestAccumulate:
    def test_scalar(self):
        acc = accumulate(Accumulator(1, 1), [2.0], [3.0], [[1.0]])
        assert acc.A.tolist() == [[4.0]] and acc.b.tolist() == [6.0]

    def test_add_then_remove(self, rng):
        s, y, W = rng.standard_normal(3), rng.standard_normal(2), random_psd(rng, 2)
        acc = accumulate(Accumulator(2, 3), s, y, W)
        acc = accumulate(acc, s, y, W, sign=-1)
        assert np.abs(acc.A).max() <= 1e-12 and np.abs(acc.b).max() <= 1e-12

    def test_against_dense_kronecker(self, rng):
        s, y, W = rng.standard_normal(2), rng.standard_normal(2), random_psd(rng, 2)
        acc = accumulate(Accumulator(2, 2), s, y, W)
        np.testing.assert_allclose(acc.A, kron_dense(np.outer(s, s), W), atol=1e-14)
        # b = vec(s' kron (y' W)) stacked as k blocks of length p
        expected_b = np.concatenate([sj * (y @ W) for sj in s])
        np.testing.assert_allclose(acc.b, expected_b, atol=1e-14)

    def test_does_not_mutate(self, rng):
        acc = Accumulator(2, 2)
        accumulate(acc, [1.0, 2.0], [1.0, 1.0], np.eye(2))
        assert not acc.A.any()

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            accumulate(Accumulator(2, 2), [1.0], [1.0, 2.0], np.eye(2))

    def test_order_insensitive_and_symmetric(self, rng):
        triples = [(rng.standard_normal(3), rng.standard_normal(4), random_psd(rng, 4)) for _ in range(6)]
        forward, backward = Accumulator(4, 3), Accumulator(4, 3)
        for t in triples:
            forward = accumulate(forward, *t)
        for t in reversed(triples):
            backward = accumulate(backward, *t)
        np.testing.assert_allclose(forward.A, backward.A, atol=1e-10)
        np.testing.assert_allclose(forward.b, backward.b, atol=1e-10)
        assert np.linalg.norm(forward.A - forward.A.T) <= 1e-10 * np.linalg.norm(forward.A)


class TestRecomputeBasis:
    def test_scalar_limit(self):
        acc = accumulate(Accumulator(1, 1), [2.0], [3.0], [[1.0]])
        assert recompute_basis(acc, 1, 1e-12)[0, 0] == pytest.approx(1.5, abs=1e-9)

    def test_zero_accumulator(self):
        assert not recompute_basis(Accumulator(3, 2), 1, 0.1).any()

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_batch_ridge(self, seed):
        rng = np.random.default_rng(seed)
        codes = [rng.standard_normal(2) for _ in range(3)]
        targets = [rng.standard_normal(4) for _ in range(3)]
        weights = [random_psd(rng, 4) for _ in range(3)]
        acc = Accumulator(4, 2)
        for s, y, W in zip(codes, targets, weights):
            acc = accumulate(acc, s, y, W)
        got = recompute_basis(acc, 3, 0.05)
        want = batch_basis_ridge(codes, targets, weights, 0.05)
        assert np.linalg.norm(got - want) <= 1e-8 * np.linalg.norm(want)


def make_record(rng, task_id, d, d_m, k, rho=1.0):
    return TaskRecord(task_id, rng.standard_normal(k), rng.standard_normal(d), random_psd(rng, d),
                      rng.standard_normal(d_m), rho * np.eye(d_m))


class TestEncounter:
    def test_first_encounter(self, rng):
        dic = init_dictionary(3, 2, 2, 0)
        rec = make_record(rng, "a", 3, 2, 2)
        dic2, accL, accD, T = encounter_task(dic, Accumulator(3, 2), Accumulator(2, 2), rec, None, 0, 0.1)
        assert T == 1
        np.testing.assert_allclose(accL.A, np.kron(np.outer(rec.s, rec.s), rec.gamma), atol=1e-14)

    def test_identical_revisit_is_noop(self, rng):
        dic = init_dictionary(3, 2, 2, 0)
        accL, accD, T = Accumulator(3, 2), Accumulator(2, 2), 0
        recs = [make_record(rng, i, 3, 2, 2) for i in range(3)]
        for r in recs:
            dic, accL, accD, T = encounter_task(dic, accL, accD, r, None, T, 0.1)
        again, _, _, T2 = encounter_task(dic, accL, accD, recs[1], recs[1], T, 0.1)
        assert T2 == T == 3
        np.testing.assert_allclose(again.L, dic.L, atol=1e-10)
        np.testing.assert_allclose(again.D, dic.D, atol=1e-10)

    def test_revisit_matches_rebuild(self, rng):
        dic = init_dictionary(4, 3, 2, 0)
        accL, accD, T = Accumulator(4, 2), Accumulator(3, 2), 0
        first = make_record(rng, 1, 4, 3, 2)
        second = make_record(rng, 2, 4, 3, 2)
        for r in (first, second):
            dic, accL, accD, T = encounter_task(dic, accL, accD, r, None, T, 0.2)
        newer = TaskRecord(1, rng.standard_normal(2), first.alpha, first.gamma, first.phi_m, first.rho_weight)
        dic, accL, accD, T = encounter_task(dic, accL, accD, newer, first, T, 0.2)
        latest = [newer, second]
        want_L = batch_basis_ridge([r.s for r in latest], [r.alpha for r in latest],
                                   [r.gamma for r in latest], 0.2)
        want_D = batch_basis_ridge([r.s for r in latest], [r.phi_m for r in latest],
                                   [r.rho_weight for r in latest], 0.2)
        assert T == 2
        np.testing.assert_allclose(dic.L, want_L, atol=1e-10)
        np.testing.assert_allclose(dic.D, want_D, atol=1e-10)

    def test_model_only(self, rng):
        dic = init_dictionary(3, 2, 2, 0)
        rec = make_record(rng, 0, 3, 2, 2)
        new, _, accD, _ = encounter_task(dic, Accumulator(3, 2), None, rec, None, 0, 0.1)
        assert accD is None
        np.testing.assert_array_equal(new.D, dic.D)


def planted_stream(seed, n_tasks, d=8, k=4, mu=0.05, lam=0.05):
    """Online model-basis updates over a stream of planted tasks."""
    rng = np.random.default_rng(seed)
    true_L = rng.standard_normal((d, k))
    dic = init_dictionary(d, 1, k, seed)
    acc, T = Accumulator(d, k), 0
    records, history, g_gap = [], [dic.L.copy()], []
    for t in range(n_tasks):
        s_true = np.zeros(k)
        s_true[rng.choice(k, 2, replace=False)] = rng.standard_normal(2)
        X = rng.standard_normal((30, d))
        gamma = X.T @ X / 30
        alpha = true_L @ s_true + 0.05 * rng.standard_normal(d)
        s = weighted_lasso(dic.L, alpha, gamma, mu)
        rec = TaskRecord(t, s, alpha, gamma)
        records.append(rec)
        dic, acc, _, T = encounter_task(dic, acc, None, rec, None, T, lam)
        if T >= 2:
            g_gap.append(abs(surrogate_objective(dic.L, records, mu, lam)
                             - surrogate_objective(history[-1], records, mu, lam)))
        history.append(dic.L.copy())
    return history, np.array(g_gap)


def test_basis_stabilizes_at_rate_one_over_T():
    slopes = []
    for seed in range(7):
        history, _ = planted_stream(seed, 100)
        steps = [np.linalg.norm(history[t] - history[t - 1]) for t in range(2, len(history))]
        Ts = np.arange(2, len(history))
        slopes.append(np.polyfit(np.log(Ts), np.log(steps), 1)[0])
    # single streams are noisy; the rate is a statement about the typical run
    assert -1.5 <= np.median(slopes) <= -0.5


def test_surrogate_gap_shrinks():
    _, gap = planted_stream(4, 100)
    q = len(gap) // 4
    assert gap[-q:].mean() < gap[:q].mean()
