import math
import struct

import numpy as np
import pytest

from wavehdnn import data
from wavehdnn import diffcore as dc
from wavehdnn import model as M
from wavehdnn.hypergraph import build_views

TOY3 = [(0, 0), (1, 0), (1, 1), (2, 1)]


def _graph(ds, scale=1.0, lightgcn=False):
    u, i = build_views(ds)
    return M.build_graph(u, i, scale=scale, mode="exact", need_lightgcn=lightgcn)


@pytest.fixture
def toy3():
    return data.from_splits(3, 2, TOY3)


@pytest.fixture
def pair_ds():
    # two users sharing one item: the user-side Laplacian is the 2-node example
    return data.from_splits(2, 1, [(0, 0), (1, 0)])


class TestParams:
    def test_names_and_shapes(self):
        p = M.init_params(5, 4, dim=8, layers=2, seed=1)
        assert list(p) == M.param_names("wavehdnn", 2)
        assert p["user_embed"].shape == (5, 8)
        assert p["mlp_final.w1"].shape == (16, 8)
        assert p["wave.lambda_user.1"].shape == (5, 1)
        assert M.infer_shape(p) == (5, 4, 8, 2)

    def test_init_ranges(self):
        p = M.init_params(50, 40, dim=16, layers=1, seed=0)
        assert np.abs(p["user_embed"]).max() <= 0.1 / 4
        np.testing.assert_array_equal(p["wave.lambda_item.0"], 1.0)
        assert np.abs(p["wave.W.0"] - np.eye(16)).max() <= 0.01
        np.testing.assert_array_equal(p["mlp1.b1"], 0.0)

    def test_seeded(self):
        a = M.init_params(4, 4, dim=4, seed=3)
        b = M.init_params(4, 4, dim=4, seed=3)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_lightgcn_has_only_tables(self):
        assert list(M.init_params(3, 3, dim=4, kind="lightgcn")) == ["user_embed", "item_embed"]


def _mlp_np(p, prefix, x):
    h = np.maximum(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"], 0.0)
    return h @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def _ln_np(x, eps=1e-5):
    out = np.empty_like(x)
    for r in range(x.shape[0]):
        mu = sum(x[r]) / len(x[r])
        var = sum((v - mu) ** 2 for v in x[r]) / len(x[r])
        out[r] = (x[r] - mu) / math.sqrt(var + eps)
    return out


class TestHetEncoder:
    def test_single_layer_matches_hand_steps(self, toy3):
        p = M.init_params(3, 2, dim=4, layers=1, seed=0)
        out = M.het_encoder_forward(p, _graph(toy3), p["user_embed"], p["item_embed"], 1)
        Xu, Xi = p["user_embed"], p["item_embed"]
        members = {0: [0, 1], 1: [1, 2]}          # item -> users
        incident = {0: [0], 1: [0, 1], 2: [1]}    # user -> items
        m1 = _mlp_np(p, "mlp1", Xu)
        agg_i = np.array([sum(m1[u] for u in members[i]) / len(members[i]) for i in range(2)])
        Xi1 = _ln_np(agg_i) + Xi
        m2 = _mlp_np(p, "mlp2", Xi1)
        agg_u = np.array([sum(m2[i] for i in incident[u]) / len(incident[u]) for u in range(3)])
        Xu1 = _ln_np(agg_u) + Xu
        want_u = _mlp_np(p, "mlp_final", np.hstack([Xu1, Xu]))
        want_i = _mlp_np(p, "mlp_final", np.hstack([Xi1, Xi]))
        np.testing.assert_allclose(out.user_layers[1].value, want_u, atol=1e-12)
        np.testing.assert_allclose(out.item_layers[1].value, want_i, atol=1e-12)
        np.testing.assert_allclose(out.user_final.value, (Xu + want_u) / 2, atol=1e-12)

    def test_zero_layers_is_identity(self, toy3):
        p = M.init_params(3, 2, dim=4, layers=0)
        out = M.het_encoder_forward(p, _graph(toy3), p["user_embed"], p["item_embed"], 0)
        np.testing.assert_array_equal(out.user_final.value, p["user_embed"])
        assert len(out.user_layers) == 1

    def test_zero_mlps_pass_through(self, toy3):
        p = M.init_params(3, 2, dim=4, layers=3)
        for k in M.het_param_names():
            if not k.startswith("mlp_final"):
                p[k] = np.zeros_like(p[k])
        out = M.het_encoder_forward(p, _graph(toy3), p["user_embed"], p["item_embed"], 3)
        for layer in range(3):  # the last snapshot goes through mlp_final
            np.testing.assert_array_equal(out.user_layers[layer].value, p["user_embed"])
            np.testing.assert_array_equal(out.item_layers[layer].value, p["item_embed"])


class TestWaveEncoder:
    def test_hand_example(self, pair_ds):
        g = _graph(pair_ds, scale=math.log(2))
        x = M._wave_layer(g.wave_user, np.array([[2.0], [1.0]]), np.eye(2), dc.Variable(np.eye(2)))
        np.testing.assert_allclose(x.value, [[3.125, -0.375], [0.375, 1.875]], atol=1e-12)

    def test_zero_transform_is_residual(self, toy3):
        p = M.init_params(3, 2, dim=4, layers=2)
        for layer in range(2):
            p[f"wave.W.{layer}"] = np.zeros((4, 4))
        out = M.wave_encoder_forward(p, _graph(toy3), p["user_embed"], p["item_embed"], 2)
        for x in out.user_layers:
            np.testing.assert_allclose(x.value, p["user_embed"], atol=1e-15)

    def test_zero_scale_identity_transform_doubles(self, toy3):
        p = M.init_params(3, 2, dim=4, layers=2)
        for layer in range(2):
            p[f"wave.W.{layer}"] = np.eye(4)
        out = M.wave_encoder_forward(p, _graph(toy3, scale=0.0), p["user_embed"], p["item_embed"], 2)
        np.testing.assert_allclose(out.item_layers[2].value, 4 * p["item_embed"], atol=1e-14)

    def test_dropped_ids_pass_through(self):
        # user 2 has no train items, so it is outside the user-side Laplacian
        ds = data.from_splits(3, 2, [(0, 0), (1, 0), (1, 1)], test=[(2, 1)])
        g = _graph(ds)
        x = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(g.wave_user.apply("forward", x)[2], x[2])


class TestFuseAndScore:
    def test_fuse_sums(self, toy3):
        p = M.init_params(3, 2, dim=4, layers=1)
        res = M.wavehdnn_forward(p, _graph(toy3), 1)
        np.testing.assert_allclose(res.E_u.value,
                                   res.het.user_final.value + res.wave.user_final.value)

    @pytest.mark.parametrize("ablation,channel", [("no_wave", "het"), ("no_het", "wave")])
    def test_ablation_bypasses_fusion(self, toy3, ablation, channel):
        p = M.init_params(3, 2, dim=4, layers=1)
        res = M.wavehdnn_forward(p, _graph(toy3), 1, ablation)
        kept = getattr(res, channel)
        np.testing.assert_array_equal(res.E_i.value, kept.item_final.value)

    def test_score_all(self):
        assert M.score_all(np.array([[2.0]]), np.array([[1.0], [3.0]]), 0).tolist() == [2.0, 6.0]

    def test_score_all_bad_user(self):
        with pytest.raises(M.ShapeError):
            M.score_all(np.ones((2, 1)), np.ones((3, 1)), 2)


class TestLightGCN:
    def test_single_pair_swaps(self):
        ds = data.from_splits(1, 1, [(0, 0)])
        g = _graph(ds, lightgcn=True)
        np.testing.assert_allclose(g.lightgcn_adj.to_dense(), [[0, 1], [1, 0]])
        p = {"user_embed": np.array([[1.0, 2.0]]), "item_embed": np.array([[5.0, -1.0]])}
        res = M.lightgcn_forward(p, g, 1)
        np.testing.assert_allclose(res.E_u.value, [[3.0, 0.5]])

    def test_zero_layers(self, toy3):
        p = M.init_params(3, 2, dim=4, kind="lightgcn")
        res = M.lightgcn_forward(p, _graph(toy3, lightgcn=True), 0)
        np.testing.assert_array_equal(res.E_i.value, p["item_embed"])

    def test_matches_dense_oracle(self, toy3):
        p = M.init_params(3, 2, dim=3, kind="lightgcn", seed=2)
        R = np.zeros((3, 2))
        for u, i in TOY3:
            R[u, i] = 1
        A = np.block([[np.zeros((3, 3)), R], [R.T, np.zeros((2, 2))]])
        d = A.sum(1) ** -0.5
        Ahat = d[:, None] * A * d[None, :]
        E = np.vstack([p["user_embed"], p["item_embed"]])
        want = (E + Ahat @ E + Ahat @ Ahat @ E) / 3
        res = M.lightgcn_forward(p, _graph(toy3, lightgcn=True), 2)
        np.testing.assert_allclose(res.E_u.value, want[:3], atol=1e-14)


def test_user_permutation_consistency():
    ds = data.from_splits(4, 3, [(0, 0), (0, 1), (1, 1), (2, 2), (3, 0), (3, 2)])
    perm = np.array([2, 0, 3, 1])                   # new id of old user u is perm[u]
    ds2 = data.from_splits(4, 3, [(int(perm[u]), i) for u, i in ds.train])
    p = M.init_params(4, 3, dim=4, layers=2, seed=5)
    p2 = dict(p)
    inv = np.argsort(perm)
    for k in ("user_embed",) + tuple(f"wave.lambda_user.{layer}" for layer in range(2)):
        p2[k] = p[k][inv]
    a = M.wavehdnn_forward(p, _graph(ds), 2)
    b = M.wavehdnn_forward(p2, _graph(ds2), 2)
    np.testing.assert_allclose(b.E_u.value[perm], a.E_u.value, atol=1e-10)
    np.testing.assert_allclose(b.E_i.value, a.E_i.value, atol=1e-10)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = M.init_params(3, 2, dim=4, layers=2, seed=1)
        raw = M.save_checkpoint(tmp_path / "m.ckpt", p)
        ck = M.load_checkpoint(tmp_path / "m.ckpt")
        assert (ck.kind, ck.num_users, ck.num_items, ck.dim, ck.layers) == ("wavehdnn", 3, 2, 4, 2)
        assert all(np.array_equal(ck.params[k], p[k]) for k in p)
        assert M.checkpoint_bytes(ck.params) == raw

    def test_header_layout(self):
        raw = M.checkpoint_bytes(M.init_params(3, 2, dim=4, kind="lightgcn"), "lightgcn", layers=3)
        assert raw[:5] == b"WHDNN"
        assert struct.unpack_from("<I4QII", raw, 5) == (1, 3, 2, 4, 3, 1, 2)
        assert struct.unpack("<Q", raw[-8:])[0] == sum(raw[:-8])
        # header + two rank-2 tensors + checksum
        assert len(raw) == 5 + 4 + 32 + 8 + 2 * (4 + 16) + 8 * (3 * 4 + 2 * 4) + 8

    def test_corruption_detected(self):
        raw = bytearray(M.checkpoint_bytes(M.init_params(2, 2, dim=2, layers=1)))
        raw[60] ^= 0xFF
        with pytest.raises(M.CheckpointError, match="checksum"):
            M.parse_checkpoint(bytes(raw))

    def test_truncation_detected(self):
        raw = M.checkpoint_bytes(M.init_params(2, 2, dim=2, layers=1))
        with pytest.raises(M.CheckpointError):
            M.parse_checkpoint(raw[:20])

    def test_lightgcn_needs_layers(self):
        with pytest.raises(ValueError):
            M.checkpoint_bytes(M.init_params(2, 2, dim=2, kind="lightgcn"), "lightgcn")
