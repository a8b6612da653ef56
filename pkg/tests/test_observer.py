import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from froq.backend import load_model
from froq.exceptions import (CompatibilityError, ConfigParseError, FormatVersionError,
                             InvalidParameter, InvalidScore, UnknownTap)
from froq.observer import (ObserverConfig, ScoreFile, aggregate, bind, load_config,
                           normalize_score, save_config, score, score_batch)
from oracles import l2_bruteforce


class StubTapSession:
    """Fixed tap tensors, optionally scaled by ``c``."""

    def __init__(self, tensors, c=1.0, model_identity="stub"):
        self.tensors = tensors
        self.c = c
        self.model_identity = model_identity
        self.tap_ids = list(tensors)
        self.pass_counter = 0

    def run(self, x):
        self.pass_counter += 1
        return np.zeros(3), {k: self.c * np.asarray(v, float) for k, v in self.tensors.items()}


def _config(taps, identity="stub", **kw):
    return ObserverConfig(identity, taps, **kw)


def test_aggregate_examples(rng):
    assert aggregate([3, 4]) == 5.0
    assert aggregate(np.ones((2, 2))) == 2.0
    z = rng.standard_normal((4, 7, 3))
    assert aggregate(z) == pytest.approx(l2_bruteforce(z.ravel()), abs=1e-12)


def test_aggregate_errors():
    with pytest.raises(InvalidScore):
        aggregate([1.0, np.nan])
    with pytest.raises(InvalidScore):
        aggregate([])


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3)), st.floats(-50, 50))
def test_aggregate_is_absolutely_homogeneous(z, c):
    assert aggregate(c * z) == pytest.approx(abs(c) * aggregate(z), rel=1e-12, abs=1e-12)
    assert aggregate(z) == aggregate(z.reshape(-1, 1)) == aggregate(z.ravel())
    assert aggregate(z.T) == pytest.approx(aggregate(z), rel=1e-14)


def test_score_single_tap_is_its_aggregate():
    s = StubTapSession({"a": [[3.0, 4.0]]})
    assert score(s, _config(["a"]), None) == 5.0


def test_score_is_mean_of_taps():
    s = StubTapSession({"a": [6.0], "b": [2.0]})
    assert score(s, _config(["a", "b"]), None) == 4.0
    assert s.pass_counter == 1


def test_score_scales_with_input(rng):
    tensors = {"a": rng.random((2, 3)), "b": rng.random(4)}
    cfg = _config(["a", "b"])
    base = score(StubTapSession(tensors), cfg, None)
    assert score(StubTapSession(tensors, c=-2.5), cfg, None) == pytest.approx(2.5 * base, rel=1e-12)


def test_score_errors():
    s = StubTapSession({"a": [1.0]})
    with pytest.raises(CompatibilityError):
        score(s, _config(["a"], identity="other"), None)
    with pytest.raises(UnknownTap):
        score(s, _config(["a", "missing"]), None)


def test_score_normalized_taps():
    s = StubTapSession({"a": [6.0], "b": [2.0]})
    cfg = _config(["a", "b"], normalization={"a": (2, 10), "b": (0, 4)})
    assert score(s, cfg, None) == pytest.approx((0.5 + 0.5) / 2)


def test_tiny_model_repeat_scoring(tiny_model, rng):
    s = load_model(tiny_model)
    cfg = ObserverConfig(s.model_identity, ["relu1", "pool"])
    bound = bind(s, cfg)
    x = rng.standard_normal((1, 3, 112, 112)).astype(np.float32)
    before = bound.pass_counter
    a = score(bound, cfg, x)
    b = score(bound, cfg, x)
    assert a == b and a > 0
    assert bound.pass_counter - before == 2


def _images(directory, rng, n):
    paths = []
    for i in range(n):
        p = directory / f"{i:03d}.png"
        Image.fromarray((rng.random((112, 112, 3)) * 255).astype(np.uint8)).save(p)
        paths.append(str(p))
    return paths


def test_score_batch_unit_equivalence_and_passes(tiny_model, tmp_path, rng):
    s = load_model(tiny_model)
    cfg = ObserverConfig(s.model_identity, ["conv2"])
    paths = _images(tmp_path, rng, 3)
    before = s.pass_counter
    out = score_batch(s, cfg, paths, threads=2)
    assert s.pass_counter - before == 3
    bound = bind(s, cfg)
    from froq.imaging import load_image
    for p, q in out:
        assert q == score(bound, cfg, bound.preprocess(load_image(p, bound.input_size)))
    with pytest.raises(InvalidParameter):
        score_batch(s, cfg, [])


def test_score_batch_hundred_images(tiny_model, tmp_path, rng):
    s = load_model(tiny_model)
    cfg = ObserverConfig(s.model_identity, ["relu1", "relu2", "flat"])
    paths = _images(tmp_path, rng, 100)
    before = s.pass_counter
    out = score_batch(s, cfg, paths, threads=4)
    assert len(out) == 100 and s.pass_counter - before == 100
    raw = np.array([q for _, q in out])
    affine = 3.0 * raw + 7.0
    assert np.array_equal(np.argsort(raw, kind="stable"), np.argsort(affine, kind="stable"))


def test_normalize_score():
    cfg = _config(["a"], meta={"score_range": [2.0, 6.0]})
    assert normalize_score(4.0, cfg) == 0.5
    with pytest.raises(InvalidParameter):
        normalize_score(4.0, _config(["a"]))


def test_config_roundtrip(tmp_path):
    cfg = _config(["b", "a"], normalization={"a": (0.1234567891234, 2), "b": (1, 3)},
                  meta={"b": 10, "n_images": 30, "labels_sha256": "ab", "score_range": [1 / 3, 2]})
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg
    assert back.to_text() == cfg.to_text()
    assert cfg.normalization["a"][0] == 0.123456789
    assert list(json.loads(cfg.to_text())) == ["model_identity", "taps", "aggregation",
                                               "normalization", "meta"]


def test_config_version_and_fields(tmp_path):
    doc = json.loads(_config(["a"]).to_text())
    doc["meta"]["format_version"] = "v999"
    with pytest.raises(FormatVersionError):
        ObserverConfig.from_text(json.dumps(doc))
    doc["meta"]["format_version"] = "v1"
    doc["future_field"] = 1
    with pytest.raises(FormatVersionError):
        ObserverConfig.from_text(json.dumps(doc))
    with pytest.raises(ConfigParseError):
        ObserverConfig.from_text("{not json")
    with pytest.raises(ConfigParseError):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ConfigParseError):
        _config([])
    with pytest.raises(ConfigParseError):
        _config(["a"], normalization={"a": (2, 2)})


def test_missing_tap_surfaces_at_bind_time(tiny_model, tmp_path):
    s = load_model(tiny_model)
    doc = json.loads(ObserverConfig(s.model_identity, ["relu1"]).to_text())
    doc["taps"] = ["relu1", "no_such_tensor"]
    (tmp_path / "c.json").write_text(json.dumps(doc))
    cfg = load_config(tmp_path / "c.json")  # loads fine
    with pytest.raises(UnknownTap):
        bind(s, cfg)


def test_bind_rejects_other_model(tiny_model):
    with pytest.raises(CompatibilityError):
        bind(load_model(tiny_model), ObserverConfig("0" * 64, ["relu1"]))


def test_score_file_roundtrip(tmp_path):
    sf = ScoreFile([("a.png", 1.23456789012), ("b.png", 0.5)], observer="abc", normalized=True)
    sf.save(tmp_path / "s.tsv")
    text = (tmp_path / "s.tsv").read_text()
    assert text.splitlines()[0] == "# froq-scores v1 observer=abc normalize=minmax"
    back = ScoreFile.load(tmp_path / "s.tsv")
    assert back.to_text() == text and back.normalized


def test_score_file_third_party_and_errors():
    assert ScoreFile.from_text("a\t1\nb\t2\n").as_dict() == {"a": 1.0, "b": 2.0}
    with pytest.raises(FormatVersionError):
        ScoreFile.from_text("# froq-scores v2 observer=x\n")
    with pytest.raises(ConfigParseError):
        ScoreFile.from_text("a\tnot-a-number\n")
    with pytest.raises(ConfigParseError):
        ScoreFile.from_text("a\tinf\n")
