"""Prototype classifier and the high-confidence pre-filter."""

from __future__ import annotations

import numpy as np
import pytest

from loft import (
    DegenerateInputError,
    ParameterError,
    PrototypeBank,
    class_mean_prototypes,
    read_prototypes,
    stage1_filter,
    synth_dataset,
    write_prototypes,
    zero_shot_predict,
)

from oracles import softmax_direct


class TestZeroShotPredict:
    def test_parallel_prototype_saturates_at_high_temperature(self):
        bank = PrototypeBank(prototypes=np.eye(4), temperature=1000.0)
        probs = zero_shot_predict(np.array([2.0, 0, 0, 0]), bank)
        assert probs[0] > 0.999999
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_identical_prototypes_give_uniform(self):
        bank = PrototypeBank(prototypes=np.ones((5, 3)), temperature=7.0)
        probs = zero_shot_predict(np.array([0.3, -0.2, 1.0]), bank)
        assert np.allclose(probs, 0.2, atol=1e-12)

    def test_two_class_reference_value(self):
        # cosine scores [1, 0] at unit temperature
        bank = PrototypeBank(
            prototypes=np.array([[1.0, 0.0], [0.0, 1.0]]), temperature=1.0
        )
        probs = zero_shot_predict(np.array([3.0, 0.0]), bank)
        expected = softmax_direct([1.0, 0.0])  # frozen: [0.7311, 0.2689]
        assert probs[0] == pytest.approx(0.7311, abs=1e-4)
        assert probs[1] == pytest.approx(0.2689, abs=1e-4)
        assert np.allclose(probs, expected, atol=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        bank = PrototypeBank(prototypes=rng.standard_normal((6, 9)), temperature=30.0)
        for _ in range(50):
            z = rng.standard_normal(9)
            c = float(rng.uniform(0.01, 100))
            assert np.allclose(
                zero_shot_predict(z, bank), zero_shot_predict(c * z, bank), atol=1e-12
            )

    def test_prototype_permutation_permutes_probs(self):
        rng = np.random.default_rng(1)
        protos = rng.standard_normal((5, 4))
        z = rng.standard_normal(4)
        perm = rng.permutation(5)
        base = zero_shot_predict(z, PrototypeBank(protos, temperature=12.0))
        permuted = zero_shot_predict(z, PrototypeBank(protos[perm], temperature=12.0))
        assert np.allclose(permuted, base[perm], atol=1e-12)

    def test_zero_norm_input_rejected(self):
        bank = PrototypeBank(prototypes=np.eye(3))
        with pytest.raises(DegenerateInputError):
            zero_shot_predict(np.zeros(3), bank)

    def test_zero_norm_prototype_rejected(self):
        with pytest.raises(ParameterError):
            PrototypeBank(prototypes=np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        bank = PrototypeBank(prototypes=rng.standard_normal((3, 5)), temperature=9.0)
        batch = rng.standard_normal((7, 5))
        stacked = zero_shot_predict(batch, bank)
        for i in range(7):
            assert np.allclose(stacked[i], zero_shot_predict(batch[i], bank), atol=1e-12)


class TestStage1Filter:
    def _setup(self):
        bundle = synth_dataset(K=3, d=16, per_class=300, separation=6, seed=21)
        probe = synth_dataset(K=3, d=16, per_class=200, separation=6, seed=21)
        bank = class_mean_prototypes(probe, probe.ids)
        return bundle, bank

    def test_threshold_near_one_empties_output(self):
        bundle, bank = self._setup()
        result = stage1_filter(bundle, bundle.ids, bank, t_hc=1 - 1e-12)
        assert len(result.kept) == 0
        assert result.n_input == len(bundle)

    def test_monotone_in_threshold(self):
        bundle, bank = self._setup()
        previous = None
        for t in (0.3, 0.5, 0.7, 0.9, 0.95, 0.99):
            kept = set(map(int, stage1_filter(bundle, bundle.ids, bank, t).kept))
            if previous is not None:
                assert kept <= previous
            previous = kept

    def test_filtered_accuracy_beats_unfiltered(self):
        # with true class means as prototypes, keeping only confident samples
        # must raise provisional-label accuracy; low dimension keeps some
        # genuine class overlap so the filter has work to do
        bundle = synth_dataset(K=3, d=3, per_class=400, separation=6, seed=3)
        means = np.stack(
            [bundle.weak[bundle.labels == k].astype(np.float64).mean(axis=0) for k in range(3)]
        )
        bank = PrototypeBank(prototypes=means, temperature=16.0)
        probs = zero_shot_predict(bundle.weak.astype(np.float64), bank)
        unfiltered_acc = float((probs.argmax(axis=1) == bundle.labels).mean())

        result = stage1_filter(bundle, bundle.ids, bank, t_hc=0.95)
        rows = bundle.rows_for(result.kept)
        filtered_acc = float((result.provisional == bundle.labels[rows]).mean())
        assert 0 < len(result.kept) < len(bundle)
        assert filtered_acc > unfiltered_acc

    def test_keeps_input_order(self):
        bundle, bank = self._setup()
        result = stage1_filter(bundle, bundle.ids, bank, t_hc=0.5)
        rows = bundle.rows_for(result.kept)
        assert (np.diff(rows) > 0).all()

    def test_threshold_validation(self):
        bundle, bank = self._setup()
        for bad in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ParameterError):
                stage1_filter(bundle, bundle.ids, bank, bad)

    def test_empty_input_is_legal(self):
        bundle, bank = self._setup()
        result = stage1_filter(bundle, np.array([], dtype=np.uint64), bank, 0.95)
        assert len(result.kept) == 0 and result.n_input == 0


class TestPrototypeIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        bank = PrototypeBank(prototypes=rng.standard_normal((4, 6)), temperature=33.0)
        path = tmp_path / "protos.lftb"
        write_prototypes(bank, path, class_names=["a", "b", "c", "d"])
        loaded = read_prototypes(path)
        assert loaded.temperature == 33.0
        assert np.allclose(
            loaded.prototypes, bank.prototypes.astype(np.float32), atol=0
        )

    def test_mean_prototypes_require_labels(self):
        bundle = synth_dataset(K=2, d=4, per_class=10, separation=1, seed=0)
        bank = class_mean_prototypes(bundle, bundle.ids)
        assert bank.K == 2 and bank.d == 4
