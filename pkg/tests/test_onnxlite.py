import numpy as np
import pytest

from lodestone.onnxlite import Node, OnnxError, Session, load_model, save_model


def write_single_op(path, op, inputs, outputs, initializers, attrs=None, feed_names=None):
    feed_names = feed_names or []
    save_model(
        path,
        [Node(op, inputs, outputs, attrs=attrs or {})],
        initializers,
        inputs=[(n, np.float32, ("d",)) for n in feed_names],
        outputs=[(outputs[0], np.float32, ("d",))],
    )
    return Session(path)


class TestRoundtrip:
    def test_structure_survives(self, tmp_path, tiny_dense_model):
        graph = load_model(tiny_dense_model)
        assert graph.input_names == ["input_ids"]
        assert graph.output_names == ["states"]
        assert {n.op_type for n in graph.nodes} >= {"Gather", "MatMul", "Add", "Relu", "Tanh"}
        assert graph.initializers["emb"].dtype == np.float32
        assert graph.initializers["emb"].shape[0] == 10

    def test_attribute_roundtrip(self, tmp_path):
        path = tmp_path / "m.onnx"
        save_model(
            path,
            [Node("ReduceMean", ["x"], ["y"], attrs={"axes": [1], "keepdims": 0})],
            {},
            inputs=[("x", np.float32, (2, 3))],
            outputs=[("y", np.float32, (2,))],
        )
        graph = load_model(path)
        assert graph.nodes[0].attrs == {"axes": [1], "keepdims": 0}

    def test_negative_int_attr(self, tmp_path):
        path = tmp_path / "m.onnx"
        save_model(
            path,
            [Node("Softmax", ["x"], ["y"], attrs={"axis": -1})],
            {},
            inputs=[("x", np.float32, (2, 3))],
            outputs=[("y", np.float32, (2, 3))],
        )
        assert load_model(path).nodes[0].attrs["axis"] == -1

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.onnx"
        path.write_bytes(b"\xff" * 40)
        with pytest.raises(OnnxError):
            load_model(path)


class TestOps:
    def test_gather_matmul_add(self, tmp_path):
        emb = np.arange(12, dtype=np.float32).reshape(4, 3)
        path = tmp_path / "m.onnx"
        save_model(
            path,
            [Node("Gather", ["emb", "ids"], ["out"], attrs={"axis": 0})],
            {"emb": emb},
            inputs=[("ids", np.int64, ("n",))],
            outputs=[("out", np.float32, ("n", 3))],
        )
        out = Session(path).run({"ids": np.array([2, 0], dtype=np.int64)})[0]
        np.testing.assert_array_equal(out, emb[[2, 0]])

    def test_gemm(self, tmp_path):
        a = np.array([[1.0, 2.0]], dtype=np.float32)
        w = np.array([[3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
        c = np.array([1.0, 1.0], dtype=np.float32)
        path = tmp_path / "m.onnx"
        save_model(
            path,
            [Node("Gemm", ["a", "w", "c"], ["y"], attrs={"transB": 1})],
            {"w": w, "c": c},
            inputs=[("a", np.float32, (1, 2))],
            outputs=[("y", np.float32, (1, 2))],
        )
        out = Session(path).run({"a": a})[0]
        np.testing.assert_allclose(out, a @ w.T + c)

    def test_softmax_rows_sum_to_one(self, tmp_path):
        path = tmp_path / "m.onnx"
        save_model(
            path,
            [Node("Softmax", ["x"], ["y"], attrs={"axis": -1})],
            {},
            inputs=[("x", np.float32, (2, 5))],
            outputs=[("y", np.float32, (2, 5))],
        )
        x = np.random.default_rng(0).standard_normal((2, 5)).astype(np.float32)
        out = Session(path).run({"x": x})[0]
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_reduce_and_shape_ops(self, tmp_path):
        path = tmp_path / "m.onnx"
        nodes = [
            Node("ReduceMax", ["x"], ["m"], attrs={"axes": [0], "keepdims": 0}),
            Node("Unsqueeze", ["m", "ax"], ["u"]),
            Node("Transpose", ["u"], ["t"], attrs={"perm": [1, 0]}),
            Node("Squeeze", ["t", "ax1"], ["out"]),
        ]
        save_model(
            path,
            nodes,
            {"ax": np.array([0], dtype=np.int64), "ax1": np.array([1], dtype=np.int64)},
            inputs=[("x", np.float32, (3, 2))],
            outputs=[("out", np.float32, (2,))],
        )
        x = np.array([[1, 9], [5, 2], [3, 3]], dtype=np.float32)
        out = Session(path).run({"x": x})[0]
        np.testing.assert_array_equal(out, [5.0, 9.0])

    def test_reshape_cast_slice_concat(self, tmp_path):
        path = tmp_path / "m.onnx"
        nodes = [
            Node("Reshape", ["x", "shape"], ["r"]),
            Node("Cast", ["r"], ["c"], attrs={"to": 7}),
            Node("Slice", ["c", "starts", "ends"], ["s"]),
            Node("Concat", ["s", "s"], ["out"], attrs={"axis": 0}),
        ]
        save_model(
            path,
            nodes,
            {
                "shape": np.array([6], dtype=np.int64),
                "starts": np.array([1], dtype=np.int64),
                "ends": np.array([3], dtype=np.int64),
            },
            inputs=[("x", np.float32, (2, 3))],
            outputs=[("out", np.int64, (4,))],
        )
        x = np.arange(6, dtype=np.float32).reshape(2, 3)
        out = Session(path).run({"x": x})[0]
        np.testing.assert_array_equal(out, [1, 2, 1, 2])
        assert out.dtype == np.int64


class TestSession:
    def test_unsupported_op_rejected(self, tmp_path):
        path = tmp_path / "m.onnx"
        save_model(
            path,
            [Node("LayerNormalization", ["x"], ["y"])],
            {},
            inputs=[("x", np.float32, (2,))],
            outputs=[("y", np.float32, (2,))],
        )
        with pytest.raises(OnnxError, match="LayerNormalization"):
            Session(path)

    def test_missing_feed_rejected(self, tmp_path):
        path = tmp_path / "m.onnx"
        save_model(
            path,
            [Node("Identity", ["x"], ["y"])],
            {},
            inputs=[("x", np.float32, (2,))],
            outputs=[("y", np.float32, (2,))],
        )
        sess = Session(path)
        with pytest.raises(OnnxError, match="missing input"):
            sess.run({})

    def test_unknown_feed_rejected(self, tmp_path):
        path = tmp_path / "m.onnx"
        save_model(
            path,
            [Node("Identity", ["x"], ["y"])],
            {},
            inputs=[("x", np.float32, (2,))],
            outputs=[("y", np.float32, (2,))],
        )
        sess = Session(path)
        with pytest.raises(OnnxError, match="unknown input"):
            sess.run({"x": np.zeros(2, dtype=np.float32), "bogus": np.zeros(1)})

    def test_run_is_pure(self, tiny_dense_model):
        sess = Session(tiny_dense_model)
        feeds = {"input_ids": np.array([[0, 5, 6, 1]], dtype=np.int64)}
        a = sess.run(feeds)[0]
        b = sess.run(feeds)[0]
        np.testing.assert_array_equal(a, b)
