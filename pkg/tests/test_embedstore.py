"""Dataset model: synthesis, profiles, splits, OOD mixing, file round trips."""

from __future__ import annotations

import json

import numpy as np
import pytest

from loft import (
    OOD_TRUTH,
    UNLABELED,
    CapacityError,
    ClassPrior,
    ContractError,
    DatasetBundle,
    FormatError,
    ParameterError,
    SplitSpec,
    class_prior,
    longtail_profile,
    make_longtail_split,
    mix_ood,
    read_bundle,
    read_split,
    synth_dataset,
    write_bundle,
    write_split,
)
from loft.zeroshot import class_mean_prototypes, zero_shot_predict

from oracles import lstsq_one_vs_rest_accuracy


class TestSynthDataset:
    def test_zero_separation_means_coincide_and_chance_accuracy(self):
        # class means collapse to the origin, so fresh-noise prototypes
        # classify at chance; averaged over many draws
        hits = 0
        total = 0
        for s in range(60):
            bundle = synth_dataset(K=2, d=2, per_class=10, separation=0, seed=s)
            probe = synth_dataset(K=2, d=2, per_class=10, separation=0, seed=10_000 + s)
            bank = class_mean_prototypes(probe, probe.ids)
            preds = zero_shot_predict(bundle.weak.astype(np.float64), bank).argmax(axis=1)
            hits += int((preds == bundle.labels).sum())
            total += len(bundle)
        assert abs(hits / total - 0.5) < 0.07

    def test_separated_classes_are_linearly_separable(self):
        bundle = synth_dataset(K=3, d=8, per_class=100, separation=6, seed=7)
        acc = lstsq_one_vs_rest_accuracy(bundle.weak, bundle.labels, bundle.K)
        assert acc > 0.99

    def test_deterministic_and_byte_identical(self, tmp_path):
        a = synth_dataset(K=4, d=6, per_class=20, separation=3, seed=11)
        b = synth_dataset(K=4, d=6, per_class=20, separation=3, seed=11)
        assert a == b
        write_bundle(a, tmp_path / "a.lftb")
        write_bundle(b, tmp_path / "b.lftb")
        assert (tmp_path / "a.lftb").read_bytes() == (tmp_path / "b.lftb").read_bytes()

    def test_different_seed_differs(self):
        a = synth_dataset(K=4, d=6, per_class=20, separation=3, seed=11)
        b = synth_dataset(K=4, d=6, per_class=20, separation=3, seed=12)
        assert a != b

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(K=1, d=4, per_class=5, separation=1, seed=0),
            dict(K=3, d=1, per_class=5, separation=1, seed=0),
            dict(K=3, d=4, per_class=0, separation=1, seed=0),
            dict(K=3, d=4, per_class=5, separation=-1, seed=0),
        ],
    )
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ParameterError):
            synth_dataset(**kwargs)

    def test_strong_view_is_noisier_copy_of_weak(self):
        bundle = synth_dataset(K=2, d=16, per_class=500, separation=4, seed=5)
        diff = bundle.strong.astype(np.float64) - bundle.weak.astype(np.float64)
        # extra noise has std 0.5 per component
        assert abs(diff.std() - 0.5) < 0.02


class TestLongtailProfile:
    def test_reference_profile(self):
        counts = longtail_profile(50, 10, 100)
        assert counts[0] == 50
        assert counts[-1] == 5
        assert (np.diff(counts) <= 0).all()

    def test_no_imbalance(self):
        assert (longtail_profile(50, 1, 100) == 50).all()

    def test_ratio_law(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = int(rng.integers(2, 40))
            gamma = float(rng.uniform(1, 30))
            n1 = int(rng.integers(int(np.ceil(gamma)), 200))
            counts = longtail_profile(n1, gamma, k)
            assert counts.max() == n1
            assert counts.min() == max(1, int(np.floor(n1 / gamma + 0.5)))

    def test_floor_of_one(self):
        counts = longtail_profile(3, 100, 10)
        assert counts.min() == 1


def _bundle_and_spec(**overrides):
    bundle = synth_dataset(K=5, d=4, per_class=120, separation=2, seed=1)
    kwargs = dict(n1=20, gamma_l=10, m1=40, gamma_u="consistent", seed=9)
    kwargs.update(overrides)
    return bundle, SplitSpec(**kwargs)


class TestMakeLongtailSplit:
    def test_counts_follow_profiles(self):
        bundle, spec = _bundle_and_spec()
        split = make_longtail_split(bundle, spec)
        labels = bundle.labels[bundle.rows_for(split.labeled)]
        got = np.bincount(labels, minlength=5)
        assert np.array_equal(got, longtail_profile(20, 10, 5))
        pool_truth = split.truth.lookup(split.unlabeled)
        got_u = np.bincount(pool_truth, minlength=5)
        assert np.array_equal(got_u, longtail_profile(40, 10, 5))

    def test_uniform_regime(self):
        bundle, spec = _bundle_and_spec(gamma_u="uniform", m1=30)
        split = make_longtail_split(bundle, spec)
        counts = np.bincount(split.truth.lookup(split.unlabeled), minlength=5)
        assert (counts == 30).all()

    def test_reversed_regime(self):
        bundle, spec = _bundle_and_spec(gamma_u="reversed", m1=40)
        split = make_longtail_split(bundle, spec)
        counts = np.bincount(split.truth.lookup(split.unlabeled), minlength=5)
        assert (np.diff(counts) >= 0).all()
        assert counts[-1] == 40
        assert counts[0] == max(1, int(np.floor(40 / 10 + 0.5)))

    def test_numeric_gamma_u(self):
        bundle, spec = _bundle_and_spec(gamma_u=4.0)
        split = make_longtail_split(bundle, spec)
        counts = np.bincount(split.truth.lookup(split.unlabeled), minlength=5)
        assert counts[0] == 40 and counts[-1] == 10
        # a ratio below one means the tail class holds the cap
        bundle, spec = _bundle_and_spec(gamma_u=0.25)
        counts = np.bincount(
            make_longtail_split(bundle, spec).truth.lookup(
                make_longtail_split(bundle, spec).unlabeled
            ),
            minlength=5,
        )
        assert counts[-1] == 40 and counts[0] == 10

    def test_disjoint_and_deterministic(self):
        bundle, spec = _bundle_and_spec()
        a = make_longtail_split(bundle, spec)
        b = make_longtail_split(bundle, spec)
        assert np.array_equal(a.labeled, b.labeled)
        assert np.array_equal(a.unlabeled, b.unlabeled)
        assert np.array_equal(a.test, b.test)
        assert not set(map(int, a.labeled)) & set(map(int, a.unlabeled))
        assert not set(map(int, a.labeled)) & set(map(int, a.test))
        assert not set(map(int, a.unlabeled)) & set(map(int, a.test))

    def test_monotone_profiles_property(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            k = int(rng.integers(2, 8))
            bundle = synth_dataset(K=k, d=4, per_class=150, separation=1, seed=int(rng.integers(1000)))
            spec = SplitSpec(
                n1=int(rng.integers(5, 30)),
                gamma_l=float(rng.uniform(1, 12)),
                m1=int(rng.integers(5, 40)),
                gamma_u="consistent",
                seed=int(rng.integers(1000)),
            )
            split = make_longtail_split(bundle, spec)
            counts_l = np.bincount(bundle.labels[bundle.rows_for(split.labeled)], minlength=k)
            counts_u = np.bincount(split.truth.lookup(split.unlabeled), minlength=k)
            assert (np.diff(counts_l) <= 0).all()
            assert (np.diff(counts_u) <= 0).all()

    def test_capacity_error_names_class(self):
        bundle = synth_dataset(K=3, d=4, per_class=10, separation=1, seed=0)
        spec = SplitSpec(n1=8, gamma_l=1, m1=8, gamma_u="uniform", seed=0)
        with pytest.raises(CapacityError) as excinfo:
            make_longtail_split(bundle, spec)
        assert excinfo.value.class_index == 0
        assert "class 0" in str(excinfo.value)

    def test_test_split_is_balanced(self):
        bundle, spec = _bundle_and_spec()
        split = make_longtail_split(bundle, spec)
        counts = np.bincount(bundle.labels[bundle.rows_for(split.test)], minlength=5)
        assert len(set(counts.tolist())) == 1

    def test_spec_validation(self):
        with pytest.raises(ParameterError):
            SplitSpec(n1=0, gamma_l=10)
        with pytest.raises(ParameterError):
            SplitSpec(n1=5, gamma_l=0.5)
        with pytest.raises(ParameterError):
            SplitSpec(n1=5, gamma_l=2, gamma_u="sideways")


class TestMixOod:
    def _inputs(self):
        bundle = synth_dataset(K=4, d=6, per_class=100, separation=3, seed=2)
        split = make_longtail_split(bundle, SplitSpec(n1=10, gamma_l=5, m1=30, seed=4))
        pool = synth_dataset(K=4, d=6, per_class=100, separation=3, seed=99)
        return bundle, split, pool

    def test_ratio_zero_is_identity(self):
        bundle, split, pool = self._inputs()
        merged, mixed = mix_ood(bundle, split, pool, 0.0, seed=1)
        assert merged is bundle and mixed is split

    def test_half_ratio_doubles_pool(self):
        bundle, split, pool = self._inputs()
        n_u = len(split.unlabeled)
        merged, mixed = mix_ood(bundle, split, pool, 0.5, seed=1)
        assert len(mixed.unlabeled) == 2 * n_u
        ood_flags = merged.labels[merged.rows_for(mixed.unlabeled)] == OOD_TRUTH
        assert ood_flags.sum() == n_u

    def test_inlier_labels_are_stripped_in_merged_bundle(self):
        bundle, split, pool = self._inputs()
        merged, mixed = mix_ood(bundle, split, pool, 0.25, seed=1)
        labels = merged.labels[merged.rows_for(mixed.unlabeled)]
        assert set(labels.tolist()) <= {UNLABELED, OOD_TRUTH}
        # labeled and test records keep their classes
        assert (merged.labels[merged.rows_for(mixed.labeled)] >= 0).all()
        assert (merged.labels[merged.rows_for(mixed.test)] >= 0).all()

    def test_truth_channel_covers_injected_records(self):
        bundle, split, pool = self._inputs()
        merged, mixed = mix_ood(bundle, split, pool, 0.4, seed=1)
        truth = mixed.truth.lookup(mixed.unlabeled)
        assert (truth == OOD_TRUTH).sum() == len(mixed.unlabeled) - len(split.unlabeled)

    def test_mixed_pool_rejected_by_class_prior(self):
        bundle, split, pool = self._inputs()
        merged, mixed = mix_ood(bundle, split, pool, 0.5, seed=1)
        with pytest.raises(ContractError):
            class_prior(merged, mixed.unlabeled)

    def test_dimension_mismatch(self):
        bundle, split, _ = self._inputs()
        other = synth_dataset(K=2, d=7, per_class=50, separation=1, seed=3)
        with pytest.raises(FormatError):
            mix_ood(bundle, split, other, 0.5, seed=1)

    def test_bad_ratio(self):
        bundle, split, pool = self._inputs()
        with pytest.raises(ParameterError):
            mix_ood(bundle, split, pool, 1.0, seed=1)


class TestClassPrior:
    def test_simple_counts(self):
        assert np.allclose(ClassPrior.from_counts([3, 1]).probs, [0.75, 0.25])

    def test_balanced_counts(self):
        assert np.allclose(ClassPrior.from_counts([7] * 4).probs, 0.25)

    def test_profile_prior_ratio(self):
        bundle = synth_dataset(K=100, d=4, per_class=60, separation=1, seed=0)
        split = make_longtail_split(bundle, SplitSpec(n1=50, gamma_l=10, m1=0, seed=0))
        prior = class_prior(bundle, split.labeled)
        assert abs(prior.probs[0] / prior.probs[99] - 10.0) < 1e-9

    def test_empty_set_rejected(self):
        bundle = synth_dataset(K=2, d=4, per_class=5, separation=1, seed=0)
        with pytest.raises(ContractError):
            class_prior(bundle, np.array([], dtype=np.uint64))

    def test_validation(self):
        with pytest.raises(ParameterError):
            ClassPrior(np.array([0.5, 0.4]))
        with pytest.raises(ParameterError):
            ClassPrior(np.array([1.5, -0.5]))


def _random_bundle(rng):
    k = int(rng.integers(2, 6))
    d = int(rng.integers(2, 10))
    n = int(rng.integers(1, 40))
    labels = rng.integers(-2, k, size=n).astype(np.int32)
    return DatasetBundle(
        ids=rng.permutation(np.arange(1000, dtype=np.uint64))[:n],
        labels=labels,
        weak=rng.standard_normal((n, d)).astype(np.float32),
        strong=rng.standard_normal((n, d)).astype(np.float32),
        K=k,
        class_names=[f"c{j}" for j in range(k)],
        manifest={"source": "test", "seed": 0},
    )


class TestBundleIO:
    def test_round_trip_property(self, tmp_path):
        rng = np.random.default_rng(42)
        for i in range(25):
            bundle = _random_bundle(rng)
            path = tmp_path / f"b{i}.lftb"
            write_bundle(bundle, path)
            assert read_bundle(path) == bundle

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.lftb"
        bundle = synth_dataset(K=2, d=3, per_class=4, separation=1, seed=0)
        write_bundle(bundle, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError) as excinfo:
            read_bundle(path)
        assert excinfo.value.offset == 0

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "bad.lftb"
        write_bundle(synth_dataset(K=2, d=3, per_class=4, separation=1, seed=0), path)
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_bundle(path)

    def test_truncated_records(self, tmp_path):
        path = tmp_path / "bad.lftb"
        write_bundle(synth_dataset(K=2, d=3, per_class=4, separation=1, seed=0), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError) as excinfo:
            read_bundle(path)
        assert "truncated" in str(excinfo.value)
        assert excinfo.value.offset is not None

    def test_header_count_larger_than_payload(self, tmp_path):
        path = tmp_path / "bad.lftb"
        write_bundle(synth_dataset(K=2, d=3, per_class=4, separation=1, seed=0), path)
        data = bytearray(path.read_bytes())
        # bump the record count field (u64 at offset 16)
        import struct

        struct.pack_into("<Q", data, 16, 10_000)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_bundle(path)

    def test_split_files_round_trip(self, tmp_path):
        bundle, spec = _bundle_and_spec()
        split = make_longtail_split(bundle, spec)
        write_split(split, tmp_path)
        loaded = read_split(tmp_path)
        assert np.array_equal(loaded.labeled, split.labeled)
        assert np.array_equal(loaded.unlabeled, split.unlabeled)
        assert np.array_equal(loaded.test, split.test)
        assert np.array_equal(
            loaded.truth.lookup(loaded.unlabeled), split.truth.lookup(split.unlabeled)
        )
        payload = json.loads((tmp_path / "labeled.json").read_text())
        assert payload == [int(v) for v in split.labeled]


class TestBundleInvariants:
    def test_arrays_are_read_only(self):
        bundle = synth_dataset(K=2, d=3, per_class=4, separation=1, seed=0)
        with pytest.raises(ValueError):
            bundle.labels[0] = 1

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ParameterError):
            DatasetBundle(
                ids=np.array([1, 1], dtype=np.uint64),
                labels=np.array([0, 1], dtype=np.int32),
                weak=np.zeros((2, 3), dtype=np.float32),
                strong=np.zeros((2, 3), dtype=np.float32),
                K=2,
                class_names=["a", "b"],
                manifest={},
            )

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ParameterError):
            DatasetBundle(
                ids=np.array([1, 2], dtype=np.uint64),
                labels=np.array([0, 5], dtype=np.int32),
                weak=np.zeros((2, 3), dtype=np.float32),
                strong=np.zeros((2, 3), dtype=np.float32),
                K=2,
                class_names=["a", "b"],
                manifest={},
            )

    def test_records_view(self):
        bundle = synth_dataset(K=2, d=3, per_class=2, separation=1, seed=0)
        records = bundle.records
        assert len(records) == 4
        assert records[0].is_labeled
        assert records[0].weak.shape == (3,)
