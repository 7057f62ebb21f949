"""Fusion strategies, feature layouts and dataset IO."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wayside import clf, datagen, fuse
from wayside.fuse import MASK_SENTINEL, STRATEGIES, Dataset, FeatureVector, layout_for, strategy
from wayside.peaks import SemanticFeatures

TABLE1 = {
    "S-WC": (True, ("Z",)), "S-WI": (True, ("X",)), "I-WI": (False, ("X",)),
    "I-WD": (False, ("Y",)), "S-WD": (True, ("Y",)),
}


def sem(z=10, load=15.0, speed=80.0):
    t = np.arange(z) * 0.1 + 0.05
    return SemanticFeatures(z, t, np.linspace(30, 40, z), load, speed)


def test_table1_matrix():
    assert len(STRATEGIES) == 10
    for name, s in STRATEGIES.items():
        emb, fields = TABLE1[s.code]
        assert s.uses_embedding == emb and s.semantic_fields == fields
        assert s.starred == name.endswith("*")


def test_layout_arithmetic():
    e = np.zeros(40)
    assert fuse.fuse("S-WC", e, sem()).values.size == 41
    v = fuse.fuse("I-WI", None, sem(10))
    assert v.values.size == 48 and int((~v.mask).sum()) == 38
    assert np.all(v.model_input()[10:] == MASK_SENTINEL)
    assert len(layout_for(strategy("S-WD*"))) - len(layout_for(strategy("S-WD"))) == 2
    iwd = fuse.fuse("I-WD", None, sem())
    assert not any(n.startswith("S") for n in iwd.layout)


def test_missing_blocks_raise():
    with pytest.raises(ValueError):
        fuse.fuse("S-WD", None, sem())
    with pytest.raises(ValueError):
        fuse.fuse("I-WD", np.zeros(40), sem())
    with pytest.raises(ValueError):
        fuse.fuse("I-WD*", None, sem(load=None))
    with pytest.raises(ValueError):
        strategy("X-YZ")


def test_truncation_beyond_max_wheels():
    v = fuse.fuse("I-WI", None, sem(60))
    assert v.values.size == 48 and v.mask.all()


vectors = st.builds(
    lambda name, z, seed, lab, soft: fuse.fuse(
        name, np.random.default_rng(seed).normal(size=40) if STRATEGIES[name].uses_embedding else None,
        sem(z, 7.5, 120.0), label=lab, soft_label=soft, domain_id=seed % 5),
    st.sampled_from(sorted(STRATEGIES)), st.integers(0, 48), st.integers(0, 1000),
    st.sampled_from([0, 1]), st.one_of(st.none(), st.floats(0, 1)))


@given(vectors)
def test_csv_roundtrip(v):
    ds = Dataset([v])
    back = fuse.parse_csv(ds.to_csv())
    assert back == [v]


@given(st.sampled_from(sorted(STRATEGIES)), st.integers(0, 2**31), st.floats(-1e3, 1e3))
def test_masked_slots_do_not_change_predictions(name, seed, junk):
    r = np.random.default_rng(seed % 1000)
    s = STRATEGIES[name]
    rows = [fuse.fuse(s, r.normal(size=40) if s.uses_embedding else None,
                      sem(int(r.integers(5, 15))), label=i % 2) for i in range(40)]
    ds = Dataset(rows)
    model = clf.train_gbdt(ds.X, ds.y, clf.GbdtConfig(n_estimators=50, seed=1))
    perturbed = [FeatureVector(np.where(v.mask, v.values, junk), v.layout, v.mask, v.label)
                 for v in rows]
    assert np.array_equal(clf.predict_proba(model, ds.X), clf.predict_proba(model, Dataset(perturbed).X))


def test_build_dataset_bookkeeping(tmp_path):
    specs = datagen.sample_specs(datagen.SamplingSpec(anomaly_rate=0.5), 40, 3)
    recs = datagen.synthesize_batch(specs)
    ds = fuse.build_dataset(recs, "I-WD*", "SD", 0.8)
    assert len(ds) == 40 and ds.class_balance == 0.5
    again = fuse.build_dataset(recs, "I-WD*", "SD", 0.8)
    assert ds.digest() == again.digest()
    path = tmp_path / "d.csv"
    ds.save(path)
    loaded = fuse.load_dataset(path)
    assert loaded.rows == ds.rows and loaded.meta["sha256"] == ds.digest()
    with pytest.raises(ValueError):
        fuse.build_dataset(recs, "S-WD", "SD", 0.8)


def test_detection_failures_are_excluded():
    specs = datagen.sample_specs(datagen.SamplingSpec(), 6, 1)
    recs = datagen.synthesize_batch(specs)
    sems = [None, *[fuse.passage_semantics(r, "SD", 0.8) for r in recs[1:]]]
    with pytest.warns(RuntimeWarning):
        ds = fuse.build_dataset(recs, "I-WD", "SD", 0.8, semantics=sems)
    assert len(ds) == 5 and ds.n_failed == 1 and list(ds.passage_index) == [1, 2, 3, 4, 5]
