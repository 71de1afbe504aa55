import numpy as np
import pytest

from advids import dataio as dio
from advids.errors import DataError
from synth import write_cic, write_nslkdd


@pytest.fixture
def nsl_raw(tmp_path):
    return dio.load_dataset(write_nslkdd(tmp_path / "KDDTrain+.txt", n=300, seed=1), "nslkdd")


def test_load_nslkdd(nsl_raw):
    assert len(nsl_raw) == 300
    assert list(nsl_raw.features.columns) == list(dio.NSL_KDD_FEATURES)
    assert len(nsl_raw.features.columns) == 41
    assert not nsl_raw.flagged.any()


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        dio.load_dataset(tmp_path / "absent.txt", "nslkdd")
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    with pytest.raises(DataError):
        dio.load_dataset(empty, "nslkdd")
    good = write_nslkdd(tmp_path / "x.txt", n=5).read_text().splitlines()
    good[3] = good[3] + ",extra"
    bad = tmp_path / "bad.txt"
    bad.write_text("\n".join(good) + "\n")
    with pytest.raises(DataError, match=":4:"):
        dio.load_dataset(bad, "nslkdd")
    rows = write_nslkdd(tmp_path / "y.txt", n=5).read_text().splitlines()
    rows[2] = "abc," + rows[2].split(",", 1)[1]
    nonnum = tmp_path / "nonnum.txt"
    nonnum.write_text("\n".join(rows) + "\n")
    with pytest.raises(DataError, match="duration"):
        dio.load_dataset(nonnum, "nslkdd")


def test_cic_infinity_flagged_and_dropped(tmp_path):
    raw = dio.load_dataset(write_cic(tmp_path / "Mon.csv", n=50, n_inf=3), "cicids2017")
    assert raw.flagged.sum() == 3
    assert "Destination Port" in raw.features.columns
    ds = dio.preprocess(raw)
    assert len(ds) == 47
    assert np.all(np.isfinite(ds.X))
    immutable = [c for c, m in zip(ds.schema.columns, ds.schema.mutable_mask) if not m]
    assert immutable == ["Destination Port", "Protocol"]


def test_cic_directory(tmp_path):
    d = tmp_path / "cic"
    d.mkdir()
    write_cic(d / "a.csv", n=30, seed=1)
    write_cic(d / "b.csv", n=20, seed=2)
    assert len(dio.load_dataset(d, "cicids2017")) == 50


def test_preprocess_nslkdd(nsl_raw):
    ds = dio.preprocess(nsl_raw)
    s = ds.schema
    assert np.all((ds.X >= 0) & (ds.X <= 1))
    assert ds.y.tolist() == (nsl_raw.labels != "normal").astype(int).tolist()
    groups = {g[0]: (g[1], g[2]) for g in s.onehot_groups}
    start, stop = groups["protocol_type"]
    assert stop - start == 3
    for name in dio.NSL_KDD_CATEGORICAL:
        a, b = groups[name]
        assert not s.mutable_mask[a:b].any()
        assert np.all(ds.X[:, a:b].sum(axis=1) == 1)
    numeric = [i for i, c in enumerate(s.columns) if "=" not in c]
    assert s.mutable_mask[numeric].all()
    assert len(s.mutable_mask) == ds.width
    # num_outbound_cmds is constant in the file
    assert np.all(ds.X[:, s.columns.index("num_outbound_cmds")] == 0)


def test_test_split_uses_train_statistics(tmp_path, nsl_raw):
    train = dio.preprocess(nsl_raw)
    test_raw = dio.load_dataset(write_nslkdd(tmp_path / "t.txt", n=50, seed=9), "nslkdd")
    test_raw.features.loc[0, "count"] = -5.0
    test_raw.features.loc[1, "count"] = 10_000.0
    test_raw.features.loc[2, "service"] = "never_seen"
    test = dio.preprocess(test_raw, train.schema)
    j = train.schema.columns.index("count")
    assert test.X[0, j] == 0.0 and test.X[1, j] == 1.0
    a, b = next((g[1], g[2]) for g in train.schema.onehot_groups if g[0] == "service")
    assert test.X[2, a:b].sum() == 0
    # a value inside the training range round-trips through min-max scaling
    lo, hi = train.schema.col_min[j], train.schema.col_max[j]
    v = test_raw.features.loc[3, "count"]
    if lo <= v <= hi:
        assert test.X[3, j] * (hi - lo) + lo == pytest.approx(v)


def test_preprocess_deterministic(tmp_path):
    p = write_nslkdd(tmp_path / "a.txt", n=80, seed=4)
    a = dio.preprocess(dio.load_dataset(p, "nslkdd"))
    b = dio.preprocess(dio.load_dataset(p, "nslkdd"))
    assert np.array_equal(a.X, b.X) and a.schema.to_dict() == b.schema.to_dict()


def test_preprocess_rejects_nonfinite_nslkdd(nsl_raw):
    nsl_raw.features.loc[0, "duration"] = np.inf
    nsl_raw.flagged[0] = True
    with pytest.raises(DataError, match="duration"):
        dio.preprocess(nsl_raw)


def clean_ds(n, width=6, seed=0):
    rng = np.random.default_rng(seed)
    return dio.LabeledDataset(rng.random((n, width)), rng.integers(0, 2, n))


def test_attack_specific():
    clean = clean_ds(100)
    adv = np.clip(clean.X + 0.05, 0, 1)
    ds = dio.build_attack_specific(clean, adv, "fgsm", seed=3)
    assert len(ds) == 200
    assert ds.y_adv.sum() == 100
    assert ds.provenance_counts() == {"none": 100, "fgsm": 100}
    with pytest.raises(DataError):
        dio.build_attack_specific(clean, adv[:50], "fgsm")
    with pytest.raises(DataError):
        dio.build_attack_specific(clean, np.zeros((0, 6)), "fgsm")


@pytest.mark.parametrize("n,sizes", [(400, [100] * 4), (402, [101, 101, 100, 100]), (7, [2, 2, 2, 1])])
def test_balanced_quarters(n, sizes):
    clean = clean_ds(n)
    pools = {a: np.full((n, 6), 0.1 * (i + 1)) for i, a in enumerate(dio.ATTACK_ORDER)}
    ds = dio.build_balanced(clean, pools, seed=1)
    counts = ds.provenance_counts()
    assert counts["none"] == n
    assert [counts[a] for a in dio.ATTACK_ORDER] == sizes
    assert ds.y_adv.sum() == n


def test_balanced_errors():
    clean = clean_ds(40)
    pools = {a: np.random.default_rng(0).random((40, 6)) for a in dio.ATTACK_ORDER}
    pools["cw"] = np.zeros((0, 6))
    with pytest.raises(DataError, match="cw"):
        dio.build_balanced(clean, pools)
    pools["cw"] = np.zeros((5, 6))
    with pytest.raises(DataError, match="cw"):
        dio.build_balanced(clean, pools)
    del pools["df"]
    with pytest.raises(DataError, match="df"):
        dio.build_balanced(clean, pools)


def test_adv_dataset_invariant():
    with pytest.raises(DataError):
        dio.AdvDataset(np.zeros((2, 2)), [0, 1], ["none", "none"])


def test_stratified_split(tmp_path):
    raw = dio.load_dataset(write_cic(tmp_path / "c.csv", n=400, n_inf=0), "cicids2017")
    tr, te = dio.stratified_split(raw, 200, 100, seed=0)
    y = dio.binarize_labels(raw.labels, "cicids2017")
    ytr = dio.binarize_labels(tr.labels, "cicids2017")
    assert abs(len(tr) - 200) <= 1 and abs(len(te) - 100) <= 1
    assert abs(ytr.mean() - y.mean()) < 0.01


def test_save_load_round_trip(tmp_path, nsl_raw):
    ds = dio.preprocess(nsl_raw)
    dio.save_dataset(ds, tmp_path / "train.csv")
    back = dio.load_saved(tmp_path / "train.csv")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert back.schema.to_dict() == ds.schema.to_dict()
    adv = dio.build_attack_specific(ds, np.clip(ds.X + 0.01, 0, 1), "pgd")
    dio.save_dataset(adv, tmp_path / "adv.csv")
    back = dio.load_saved(tmp_path / "adv.csv")
    assert np.array_equal(back.X, adv.X)
    assert back.provenance.tolist() == adv.provenance.tolist()
