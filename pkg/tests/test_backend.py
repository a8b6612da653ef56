import shutil
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import onnx
import pytest
from onnx import TensorProto, helper, numpy_helper
from onnx.reference import ReferenceEvaluator

from froq.backend import ModelManifest, find_manifest, list_taps, load_model, run
from froq.exceptions import ConfigParseError, ModelFormatError, ShapeError, UnknownTap


@pytest.fixture
def x_fixed():
    return np.random.default_rng(7).standard_normal((1, 3, 112, 112)).astype(np.float32)


def test_no_tap_load_yields_embedding_only(session, x_fixed):
    emb, tapped = run(session, x_fixed)
    assert emb.shape == (64,)
    assert tapped == {}


def test_tap_count_matches_graph_dump(tiny_model, session):
    model = onnx.load(str(tiny_model))
    graph_outputs = {o.name for o in model.graph.output}
    computed = [o for node in model.graph.node for o in node.output if o not in graph_outputs]
    taps = list_taps(session)
    assert len(taps) == len(computed) == 6
    assert [t.tap_id for t in taps] == computed  # topological order


def test_tap_listing_is_deterministic_and_content_addressed(tiny_model, tmp_path):
    copy = tmp_path / "other_name.onnx"
    shutil.copy(tiny_model, copy)
    a = load_model(tiny_model)
    b = load_model(tiny_model)
    c = load_model(copy)
    assert list_taps(a) == list_taps(b) == list_taps(c)
    assert a.model_identity == c.model_identity


def test_initializers_are_not_taps(session):
    ids = {t.tap_id for t in list_taps(session)}
    assert "w1" not in ids and "b3" not in ids
    assert "embedding" not in ids and "input" not in ids


def test_constants_are_not_taps(tmp_path):
    nodes = [
        helper.make_node("Constant", [], ["two"], value=numpy_helper.from_array(np.float32(2.0))),
        helper.make_node("Mul", ["input", "two"], ["scaled"]),
        helper.make_node("GlobalAveragePool", ["scaled"], ["gap"]),
        helper.make_node("Flatten", ["gap"], ["emb"]),
    ]
    graph = helper.make_graph(
        nodes, "g",
        [helper.make_tensor_value_info("input", TensorProto.FLOAT, [1, 3, 112, 112])],
        [helper.make_tensor_value_info("emb", TensorProto.FLOAT, [1, 3])])
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 17)])
    model.ir_version = 8
    path = tmp_path / "const.onnx"
    onnx.save(model, str(path))
    s = load_model(path, manifest=ModelManifest())
    assert [t.tap_id for t in list_taps(s)] == ["scaled", "gap"]


def test_unknown_tap_lists_near_matches(tiny_model):
    with pytest.raises(UnknownTap) as err:
        load_model(tiny_model, taps=["does_not_exist"])
    assert err.value.tap_id == "does_not_exist"
    with pytest.raises(UnknownTap) as err:
        load_model(tiny_model, taps=["conv"])
    assert "conv1" in err.value.suggestions


def test_garbage_file_is_model_format_error(tmp_path):
    bad = tmp_path / "bad.onnx"
    bad.write_bytes(b"this is not a protobuf")
    with pytest.raises(ModelFormatError):
        load_model(bad)
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "missing.onnx")


def test_tapped_shapes_match_static_shapes(tiny_model, x_fixed):
    s = load_model(tiny_model, taps=["relu2"])
    _, tapped = s.run(x_fixed)
    assert tapped["relu2"].shape == s.active_taps[0].static_shape


def test_tapped_values_match_reference_runtime(tiny_model, session, x_fixed):
    """onnxruntime vs the pure-Python ONNX reference evaluator."""
    s = session.with_taps([t.tap_id for t in session.available_taps])
    emb, tapped = s.run(x_fixed)
    ref = ReferenceEvaluator(onnx.load(str(tiny_model))).run(None, {"input": x_fixed}, intermediate=True)
    for tap, value in tapped.items():
        np.testing.assert_allclose(value, ref[tap], rtol=1e-4, atol=1e-5 * np.abs(ref[tap]).max())
    np.testing.assert_allclose(emb, ref["embedding"].ravel(), rtol=1e-4, atol=1e-5)


def test_embedding_independent_of_taps(session, x_fixed):
    base, _ = session.run(x_fixed)
    for taps in (["conv1"], ["flat", "pool"], [t.tap_id for t in session.available_taps]):
        emb, _ = session.with_taps(taps).run(x_fixed)
        assert np.array_equal(emb, base)


def test_run_is_deterministic(session, x_fixed):
    a, _ = session.run(x_fixed)
    b, _ = session.run(x_fixed)
    assert np.array_equal(a, b)


def test_pass_counter_single_increment_per_run(tiny_model, x_fixed):
    s = load_model(tiny_model, taps=["conv1", "relu1", "pool", "flat"])
    before = s.pass_counter
    for i in range(3):
        _, tapped = s.run(x_fixed)
        assert len(tapped) == 4
        assert s.pass_counter == before + i + 1


def test_pass_counter_under_concurrency(tiny_model, x_fixed):
    s = load_model(tiny_model, taps=["conv2"])
    with ThreadPoolExecutor(8) as pool:
        list(pool.map(lambda _: s.run(x_fixed), range(40)))
    assert s.pass_counter == 40


def test_shape_mismatch(session):
    with pytest.raises(ShapeError):
        session.run(np.zeros((1, 3, 64, 64), dtype=np.float32))


def test_manifest_sidecar(tiny_model, tmp_path):
    assert find_manifest(tiny_model) == tiny_model.with_suffix(".manifest")
    m = ModelManifest.load(find_manifest(tiny_model))
    assert m.embedding_output_name == "embedding"
    copy = tmp_path / "m.onnx"
    shutil.copy(tiny_model, copy)
    assert find_manifest(copy) is None
    s = load_model(copy)  # falls back to defaults read from the graph input
    assert s.input_spec == (1, 3, 112, 112)


def test_manifest_roundtrip_and_validation(tmp_path):
    m = ModelManifest(channel_order="BGR", mean=(0.1, 0.2, 0.3), std=(1, 2, 3))
    m.save(tmp_path / "x.manifest")
    assert ModelManifest.load(tmp_path / "x.manifest") == m
    with pytest.raises(ConfigParseError):
        ModelManifest(channel_order="XYZ")
    (tmp_path / "y.manifest").write_text('{"input_height": 112, "bogus": 1}')
    with pytest.raises(ConfigParseError):
        ModelManifest.load(tmp_path / "y.manifest")
