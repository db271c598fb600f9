import math

import pytest

import branchdiff


def test_presets_listed():
    names = branchdiff.presets()
    assert "cosine-d5" in names
    assert "ou1d-burgers015" in names
    assert len(names) == 16


def test_cosine_estimate_near_reference():
    out = branchdiff.estimate("cosine-d5", scheme="a", n=2000, runs=5, seed=3)
    assert len(out["estimates"]) == 5
    assert abs(out["mean"] - branchdiff.exact_solution("cosine-d5")) <= 4 * out["stderr"]
    mean = sum(out["estimates"]) / 5
    assert out["mean"] == pytest.approx(mean, rel=1e-15)


def test_estimate_is_reproducible():
    a = branchdiff.estimate("ou1d-zsq008", scheme="d", n=200, runs=2, ensemble=20, seed=5)
    b = branchdiff.estimate("ou1d-zsq008", scheme="d", n=200, runs=2, ensemble=20, seed=5)
    assert a["estimates"] == b["estimates"]


def test_config_dict_roundtrip():
    out = branchdiff.estimate_config({"preset": "ou1d-poly", "scheme": "b", "n": 100, "runs": 2, "seed": 2})
    assert math.isfinite(out["mean"])


def test_check_report():
    report = branchdiff.check("ou1d-burgers015", q=3.0)
    assert report["condition_ii"]["applicable"]
    assert report["constants"]["source"] == "closed_form"


def test_tree_and_population():
    t = branchdiff.tree("ou1d-poly", seed=1, sample=11)
    assert t["particles"][0]["label"] == [1]
    assert branchdiff.expected_population(1.0, 2.0, 1.0, 1.0) == pytest.approx(1.5, abs=1e-10)
    assert branchdiff.gamma_survival(0.5, 2.5, 1.0) == pytest.approx(math.erfc(math.sqrt(0.4)), abs=1e-12)


def test_fd_reference_and_errors():
    assert branchdiff.fd_reference("ou1d-burgers015") == pytest.approx(0.14074, abs=1e-4)
    with pytest.raises(ValueError):
        branchdiff.estimate("no-such-preset")
