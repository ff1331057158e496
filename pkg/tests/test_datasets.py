import csv
import dataclasses

import numpy as np
import pytest
from scipy.special import expit

from dorfl.datasets import (DEFAULT_MEANS, DEFAULT_THETA_STAR, AdultConfig, SyntheticConfig, draw_labels,
                            export_synthetic_csv, generate_synthetic, load_adult, prior_mean_estimate)
from dorfl.errors import DataFormatError, InvalidInputError


def test_published_sizes_and_contamination():
    data = generate_synthetic(SyntheticConfig())
    assert [c.size for c in data.clients] == [100, 200, 500]
    assert [int(f.sum()) for f in data.contaminated] == [10, 10, 50]
    assert data.clean_test.size == 3000
    assert [g.size for g in data.test_groups] == [1000] * 3


def test_perturbations_are_applied_as_described():
    cfg = SyntheticConfig(seed=5)
    raw = generate_synthetic(dataclasses.replace(cfg, contamination_factors=(1.0,) * 3,
                                                 shift_magnitudes=(0.0,) * 3))
    data = generate_synthetic(cfg)
    for i in range(3):
        bad = data.contaminated[i]
        np.testing.assert_array_equal(bad, raw.contaminated[i])
        x, x0 = data.clients[i].features, raw.clients[i].features
        np.testing.assert_allclose(x[bad], x0[bad] * cfg.contamination_factors[i])
        np.testing.assert_allclose(x[~bad, 0], x0[~bad, 0] + cfg.shift_magnitudes[i])
        np.testing.assert_array_equal(x[~bad, 1:], x0[~bad, 1:])
        np.testing.assert_array_equal(data.clients[i].labels, raw.clients[i].labels)
    np.testing.assert_array_equal(data.clean_test.features, raw.clean_test.features)


def test_unperturbed_config_is_iid():
    cfg = SyntheticConfig(contamination_rates=(0.0,) * 3, shift_magnitudes=(0.0,) * 3,
                          sizes=(4000, 4000, 4000), seed=1)
    data = generate_synthetic(cfg)
    for i in range(3):
        assert not data.contaminated[i].any()
        train_mean = data.clients[i].features.mean(axis=0)
        test_mean = data.group_test(i).features.mean(axis=0)
        np.testing.assert_allclose(train_mean, DEFAULT_MEANS[i], atol=0.1)
        np.testing.assert_allclose(test_mean, DEFAULT_MEANS[i], atol=0.15)
    np.testing.assert_allclose(data.nominal_mean, np.mean(DEFAULT_MEANS, axis=0))


def test_contaminated_draws_are_extreme():
    hits = total = 0
    for seed in range(10_000):
        data = generate_synthetic(SyntheticConfig(seed=seed, test_size_per_client=1))
        for i, (dist, bad) in enumerate(zip(data.clients, data.contaminated)):
            dev = np.linalg.norm(dist.features[bad] - np.asarray(DEFAULT_MEANS[i]), axis=1)
            hits += int(np.sum(dev > 5.0))
            total += int(bad.sum())
    assert hits / total >= 0.95


def test_label_model_calibration():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100_000, 5)) + np.asarray(DEFAULT_MEANS[1])
    y = draw_labels(rng, x, DEFAULT_THETA_STAR)
    p = expit(x @ np.asarray(DEFAULT_THETA_STAR))
    edges = np.quantile(p, np.linspace(0, 1, 11))
    bins = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, 9)
    for b in range(10):
        sel = bins == b
        assert abs(np.mean(y[sel] == 1) - np.mean(p[sel])) <= 0.02


def test_determinism_and_seed_sensitivity(tmp_path):
    a, b = generate_synthetic(SyntheticConfig(seed=3)), generate_synthetic(SyntheticConfig(seed=3))
    for ca, cb in zip(a.clients + [a.clean_test], b.clients + [b.clean_test]):
        assert ca.features.tobytes() == cb.features.tobytes()
        assert ca.labels.tobytes() == cb.labels.tobytes()
    export_synthetic_csv(a, tmp_path / "a.csv")
    export_synthetic_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c = generate_synthetic(SyntheticConfig(seed=4))
    assert c.clients[0].features.tobytes() != a.clients[0].features.tobytes()


def test_export_layout(tmp_path):
    data = generate_synthetic(SyntheticConfig(sizes=(3, 4, 5), test_size_per_client=2))
    export_synthetic_csv(data, tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["client_id", "contaminated", "x_1", "x_2", "x_3", "x_4", "x_5", "label"]
    assert len(rows) == 13
    assert float(rows[1][2]) == data.clients[0].features[0, 0]


def test_prior_mean_is_median():
    data = generate_synthetic(SyntheticConfig())
    np.testing.assert_array_equal(prior_mean_estimate(data), np.median(data.pooled_training_features(), axis=0))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        SyntheticConfig(sizes=(1, 2))
    with pytest.raises(InvalidInputError):
        SyntheticConfig(contamination_rates=(0.1, 1.5, 0.0))
    with pytest.raises(InvalidInputError):
        SyntheticConfig(theta_star=(1.0,))


# ---------------------------------------------------------------- Adult fixture

TRAIN = """\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K
38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Male, 20000, 0, 40, United-States, >50K
53, Private, 234721, 11th, 7, Married-civ-spouse, Handlers-cleaners, Husband, Black, Male, 0, 0, 40, United-States, <=50K
28, Private, 338409, Bachelors, 13, Married-civ-spouse, Prof-specialty, Wife, Black, Female, 0, 0, 40, Cuba, <=50K
37, Private, 284582, Masters, 14, Married-civ-spouse, Exec-managerial, Wife, Asian-Pac-Islander, Female, 14084, 0, 40, India, >50K
49, Private, 160187, 9th, 5, Married-spouse-absent, Other-service, Not-in-family, Amer-Indian-Eskimo, Female, 0, 0, 16, Jamaica, <=50K
52, ?, 209642, HS-grad, 9, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 45, United-States, >50K
31, Private, 45781, Masters, 14, Never-married, Prof-specialty, Not-in-family, Other, Female, 99999, 0, 50, United-States, >50K
42, Private, 159449, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 5178, 1902, 40, United-States, >50K

"""

TEST = """\
|1x3 Cross validator
25, Private, 226802, 11th, 7, Never-married, Machine-op-inspct, Own-child, Black, Male, 0, 0, 40, United-States, <=50K.
38, Private, 89814, HS-grad, 9, Married-civ-spouse, Farming-fishing, Husband, White, Male, 0, 0, 50, United-States, <=50K.
44, Private, 160323, Some-college, 10, Married-civ-spouse, Machine-op-inspct, Husband, Eskimo, Male, 7688, 0, 40, United-States, >50K.
"""


@pytest.fixture
def adult_dir(tmp_path):
    (tmp_path / "adult.data").write_text(TRAIN)
    (tmp_path / "adult.test").write_text(TEST)
    return tmp_path


def test_adult_loader(adult_dir, monkeypatch):
    monkeypatch.setenv("DORFL_ADULT_DIR", str(adult_dir))
    data = load_adult(AdultConfig.from_dir())
    assert [c.size for c in data.clients] == [4, 2, 3]  # the '?' row is dropped
    assert data.group_names == ["White", "Black", "Other"]
    assert data.clean_test.size == 3
    assert data.clean_test.labels.tolist() == [-1, -1, 1]
    assert [g.tolist() for g in data.test_groups] == [[1], [0], [2]]
    assert data.clients[0].labels.tolist() == [-1, -1, 1, 1]

    pooled = np.concatenate([c.features for c in data.clients])[:, :6]
    np.testing.assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(pooled.std(axis=0), 1.0, atol=1e-9)
    # the White client's third row has capital-gain exactly 20000
    assert data.clients[0].features[2, data.score_feature] == pytest.approx(data.threshold, abs=1e-15)
    assert len(data.checksum) == 64
    assert data.dim == pooled.shape[1] + sum(
        len(set(r.split(",")[k].strip() for r in TRAIN.strip().splitlines() if "?" not in r))
        for k in (1, 3, 5, 6, 7, 8, 9, 13)
    )


def test_adult_column_mismatch(adult_dir):
    bad = TRAIN.replace("Cuba, <=50K", "Cuba")
    (adult_dir / "adult.data").write_text(bad)
    with pytest.raises(DataFormatError, match=r"adult.data:5: expected 15 columns"):
        load_adult(AdultConfig.from_dir(str(adult_dir)))


def test_adult_malformed_value(adult_dir):
    (adult_dir / "adult.test").write_text(TEST.replace("226802", "lots"))
    with pytest.raises(DataFormatError, match=r"adult.test:2: non-numeric fnlwgt"):
        load_adult(AdultConfig.from_dir(str(adult_dir)))
    (adult_dir / "adult.test").write_text(TEST.replace(">50K.", "rich"))
    with pytest.raises(DataFormatError, match=r"adult.test:4: unrecognised income"):
        load_adult(AdultConfig.from_dir(str(adult_dir)))


def test_adult_missing_file(tmp_path):
    with pytest.raises(DataFormatError, match="cannot read"):
        load_adult(AdultConfig(str(tmp_path / "nope.data"), str(tmp_path / "nope.test")))
