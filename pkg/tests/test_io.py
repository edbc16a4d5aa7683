import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from svcompress import backend, persist, tvm
from svcompress.errors import FormatError
from svcompress.io import (decode_matrix, encode_matrix, read_container, read_matrix, write_container,
                           write_matrix)
from svcompress.supervector import center_set, map_adapt_matrix
from svcompress.tvm import TvmConfig

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


class TestMatrixFormat:
    def test_layout(self):
        buf = encode_matrix(np.arange(6.0).reshape(2, 3))
        assert buf[:4] == b"SVMX"
        assert struct.unpack_from("<HBB", buf, 4) == (1, 1, 2)
        assert struct.unpack_from("<2Q", buf, 8) == (2, 3)
        assert np.frombuffer(buf, "<f8", offset=24).tolist() == [0, 1, 2, 3, 4, 5]

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=5), elements=finite))
    def test_round_trip(self, a):
        back, end = decode_matrix(encode_matrix(a))
        assert end == len(encode_matrix(a))
        assert back.shape == a.shape and np.array_equal(back, a)

    def test_file_round_trip(self, tmp_path, rng):
        a = rng.standard_normal((4, 7))
        write_matrix(tmp_path / "a.svmx", a)
        assert np.array_equal(read_matrix(tmp_path / "a.svmx"), a)

    def test_rejects_garbage(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(FormatError):
            read_matrix(tmp_path / "bad")

    def test_rejects_truncated(self):
        with pytest.raises(FormatError):
            decode_matrix(encode_matrix(np.ones((3, 3)))[:-8])

    def test_rejects_unknown_dtype(self):
        buf = bytearray(encode_matrix(np.ones(2)))
        buf[6] = 9
        with pytest.raises(FormatError):
            decode_matrix(bytes(buf))


class TestContainer:
    def test_round_trip_and_bytes_stable(self, tmp_path, rng):
        arrays = {"b": rng.standard_normal(3), "a": rng.standard_normal((2, 2))}
        meta = {"z": 1, "a": [1, 2], "nested": {"k": "v"}}
        write_container(tmp_path / "x.svmc", arrays, meta)
        write_container(tmp_path / "y.svmc", dict(arrays), dict(reversed(list(meta.items()))))
        assert (tmp_path / "x.svmc").read_bytes() == (tmp_path / "y.svmc").read_bytes()
        got, m = read_container(tmp_path / "x.svmc")
        assert m == meta and list(got) == ["b", "a"]
        assert all(np.array_equal(got[k], arrays[k]) for k in arrays)

    def test_trailing_bytes(self, tmp_path):
        write_container(tmp_path / "x.svmc", {"a": np.ones(2)})
        with open(tmp_path / "x.svmc", "ab") as fh:
            fh.write(b"\0")
        with pytest.raises(FormatError):
            read_container(tmp_path / "x.svmc")


class TestPersist:
    def test_corpus_and_truth(self, tiny_synth, tmp_path):
        _, train, _, truth = tiny_synth
        persist.save_corpus(tmp_path / "c.svmc", train)
        back = persist.load_corpus(tmp_path / "c.svmc")
        assert [u.utterance_id for u in back] == [u.utterance_id for u in train]
        assert all(np.array_equal(a.frames, b.frames) for a, b in zip(back, train))
        persist.save_truth(tmp_path / "t.svmc", truth)
        t2 = persist.load_truth(tmp_path / "t.svmc")
        assert np.array_equal(t2.V, truth.V) and t2.train_speakers == truth.train_speakers

    def test_kind_checked(self, tiny_stats, tmp_path):
        ubm, stats = tiny_stats
        persist.save_stats(tmp_path / "s.svmc", stats)
        with pytest.raises(FormatError):
            persist.load_gmm(tmp_path / "s.svmc")
        back = persist.load_stats(tmp_path / "s.svmc")
        assert np.array_equal(back.f, stats.f) and back.speaker_ids == stats.speaker_ids

    @pytest.mark.parametrize("method", ["fefa", "pca", "ppca", "fa", "ppls", "sppca"])
    def test_models(self, tiny_stats, tmp_path, method):
        ubm, stats = tiny_stats
        X = center_set(map_adapt_matrix(ubm, stats.n, stats.f, 1.0))
        targets = {"ppls": tvm.one_hot_targets(stats.speaker_ids),
                   "sppca": tvm.speaker_supervector_targets(ubm, stats, 1.0)}.get(method)
        model = tvm.train(TvmConfig(d=3, method=method, iterations=2), supervectors=X, stats=stats, ubm=ubm,
                          targets=targets)
        persist.save_model(tmp_path / "m.svmc", model)
        back = persist.load_model(tmp_path / "m.svmc")
        assert type(back) is type(model) and back.method == method
        assert np.array_equal(back.V, model.V)
        if method == "fefa":
            a, b = tvm.extract(model, stats=stats), tvm.extract(back, stats=stats)
        else:
            a, b = tvm.extract(model, X.matrix), tvm.extract(back, X.matrix)
        assert np.array_equal(a, b)
        _, meta = read_container(tmp_path / "m.svmc")
        assert meta["h"] == X.dim and meta["d"] == 3 and meta["method"] == method

    def test_backend(self, tmp_path, rng):
        X = rng.standard_normal((40, 4))
        labels = np.arange(40) % 8
        pp = backend.fit_postprocessor(X)
        plda = backend.plda_train(pp.transform(X), labels, q=2)
        persist.save_backend(tmp_path / "b.svmc", pp, plda)
        pp2, plda2 = persist.load_backend(tmp_path / "b.svmc")
        Z = pp.transform(X)
        assert np.array_equal(pp2.transform(X), Z)
        assert np.array_equal(backend.plda_score(plda2, Z[:5], Z[5:10]), backend.plda_score(plda, Z[:5], Z[5:10]))
