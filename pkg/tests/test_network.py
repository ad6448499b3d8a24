"""Message-passing networks: reference forwards, gradients, invariances."""

import numpy as np
import pytest

from gridmarl import ShapeError, StaleTrace
from gridmarl.graph import SubGraph, rbe
from gridmarl.nn.params import h_lin, h_rel, vertex_update
from gridmarl.nn.optim import adam_state
from gridmarl.nn import (
    MlpParams,
    NetParams,
    Trace,
    adam_step,
    backward,
    batch_subgraphs,
    critic_forward,
    critic_values,
    edge_update,
    min_relu_preactivation,
    mlp_logprobs,
    new_graph_net,
    new_mlp,
    policy_forward,
    policy_logprobs,
    zeros_like_params,
)


def toy_subgraph(rng, m: int, in_dim: int, n_max: int = 10, ring: bool = True) -> SubGraph:
    """A small sub-graph with random features and a ring (or empty) edge set."""
    if ring and m > 1:
        src = np.arange(m)
        dst = (src + 1) % m
        src = np.concatenate([src, dst])
        dst = np.concatenate([dst, np.arange(m)])
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
    dists = rng.uniform(0.0, 1.5, size=len(src))
    feats = np.stack([rbe(d, n_max=n_max) for d in dists]) if len(src) else np.zeros((0, n_max))
    return SubGraph(
        centre=0,
        members=np.arange(m),
        features=rng.normal(size=(m, in_dim)),
        edge_src=src.astype(np.int64),
        edge_dst=dst.astype(np.int64),
        edge_dist=dists,
        edge_feat=feats,
        depth=3,
    )


def reference_forward(sg: SubGraph, params: NetParams) -> np.ndarray:
    """Vertex-at-a-time forward using the single-vertex reference updates."""
    s = sg.features @ params.ebd.w.T + params.ebd.b
    z = sg.edge_feat.copy()
    for rp in params.rounds:
        z_new = np.stack(
            [
                edge_update(z[e], s[sg.edge_src[e]], s[sg.edge_dst[e]], rp.edge)
                for e in range(len(sg.edge_src))
            ]
        ) if len(sg.edge_src) else z
        s_new = np.stack(
            [
                vertex_update(
                    s[v], [z_new[e] for e in range(len(sg.edge_dst)) if sg.edge_dst[e] == v], rp
                )
                for v in range(sg.n_members())
            ]
        )
        z, s = z_new, s_new
    if params.pooled:
        s = s.sum(axis=0, keepdims=True)
    hid = np.maximum(s @ params.head_rel.w.T + params.head_rel.b, 0.0)
    return hid @ params.head_lin.w.T + params.head_lin.b


class TestForward:
    def test_policy_matches_reference(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            net = new_graph_net(rng, in_dim=6, hidden=5, edge_dim=10, out_dim=5, n_rounds=2)
            sg = toy_subgraph(rng, m=int(rng.integers(1, 5)), in_dim=6)
            raw = reference_forward(sg, net)
            shifted = raw - raw.max(axis=1, keepdims=True)
            want = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            logp, _ = policy_logprobs(batch_subgraphs([sg]), net)
            np.testing.assert_allclose(logp, want, atol=1e-10)

    def test_critic_matches_reference(self):
        rng = np.random.default_rng(1)
        net = new_graph_net(rng, in_dim=11, hidden=4, edge_dim=10, out_dim=1, pooled=True)
        sg = toy_subgraph(rng, m=3, in_dim=6)
        joint = np.array([2, 0, 4])
        onehot = np.zeros((3, 5))
        onehot[np.arange(3), joint] = 1.0
        wide = SubGraph(
            centre=sg.centre,
            members=sg.members,
            features=np.concatenate([sg.features, onehot], axis=1),
            edge_src=sg.edge_src,
            edge_dst=sg.edge_dst,
            edge_dist=sg.edge_dist,
            edge_feat=sg.edge_feat,
            depth=sg.depth,
        )
        want = reference_forward(wide, net)
        assert want.shape == (1, 1)
        got = critic_forward(sg, joint, net)
        np.testing.assert_allclose(got, want[0, 0], atol=1e-10)

    def test_batched_equals_per_graph(self):
        rng = np.random.default_rng(2)
        net = new_graph_net(rng, in_dim=7, hidden=6, edge_dim=10, out_dim=5)
        sgs = [toy_subgraph(rng, m=int(rng.integers(1, 6)), in_dim=7) for _ in range(6)]
        batched, _ = policy_logprobs(batch_subgraphs(sgs), net)
        row = 0
        for sg in sgs:
            single, _ = policy_logprobs(batch_subgraphs([sg]), net)
            np.testing.assert_allclose(batched[row : row + sg.n_members()], single, atol=1e-12)
            row += sg.n_members()
        assert row == batched.shape[0]

    def test_batched_critic_equals_per_graph(self):
        rng = np.random.default_rng(3)
        net = new_graph_net(rng, in_dim=12, hidden=4, edge_dim=10, out_dim=1, pooled=True)
        sgs = [toy_subgraph(rng, m=int(rng.integers(1, 5)), in_dim=7) for _ in range(5)]
        joints = [rng.integers(0, 5, size=sg.n_members()) for sg in sgs]
        batched, _ = critic_values(batch_subgraphs(sgs, joints=joints), net)
        assert batched.shape == (5,)
        for k, sg in enumerate(sgs):
            np.testing.assert_allclose(batched[k], critic_forward(sg, joints[k], net), atol=1e-12)

    def test_isolated_vertex_gets_a_distribution(self):
        rng = np.random.default_rng(4)
        net = new_graph_net(rng, in_dim=5, hidden=4, edge_dim=10, out_dim=5)
        sg = toy_subgraph(rng, m=1, in_dim=5, ring=False)
        probs = policy_forward(sg, net)
        assert probs.shape == (1, 5)
        np.testing.assert_allclose(probs.sum(), 1.0)

    def test_wrong_feature_width_rejected(self):
        rng = np.random.default_rng(5)
        net = new_graph_net(rng, in_dim=9, hidden=4, edge_dim=10, out_dim=5)
        sg = toy_subgraph(rng, m=2, in_dim=7)
        with pytest.raises(ShapeError):
            policy_logprobs(batch_subgraphs([sg]), net)

    def test_critic_rejects_wrong_joint_length(self):
        rng = np.random.default_rng(6)
        net = new_graph_net(rng, in_dim=12, hidden=4, edge_dim=10, out_dim=1, pooled=True)
        sg = toy_subgraph(rng, m=3, in_dim=7)
        with pytest.raises(ShapeError):
            critic_forward(sg, np.array([1, 2]), net)


class TestGradients:
    def fd_param_grads(self, run, params, seed, step=1e-6):
        """Central differences for every weight and bias in ``params``."""
        out = zeros_like_params(params)
        for (path, layer), (_, slot) in zip(params.layers(), out.layers()):
            for arr, g in ((layer.w, slot.w), (layer.b, slot.b)):
                flat, gf = arr.ravel(), g.ravel()
                for i in range(flat.size):
                    keep = flat[i]
                    flat[i] = keep + step
                    hi = float((seed * run()).sum())
                    flat[i] = keep - step
                    lo = float((seed * run()).sum())
                    flat[i] = keep
                    gf[i] = (hi - lo) / (2 * step)
        return out

    def assert_close(self, got, want, rel=1e-4):
        for (_, g), (_, w) in zip(got.layers(), want.layers()):
            for a, b in ((g.w, w.w), (g.b, w.b)):
                denom = np.maximum(np.abs(b), 1e-4)
                assert np.max(np.abs(a - b) / denom) < rel

    def randomize_biases(self, params, rng):
        # fresh nets have zero biases, which parks some ReLU pre-activations
        # exactly on the kink; jitter them so the finite-difference guard holds
        for _, layer in params.layers():
            layer.b[:] = rng.normal(scale=0.1, size=layer.b.shape)

    def test_policy_gradients(self):
        rng = np.random.default_rng(7)
        net = new_graph_net(rng, in_dim=4, hidden=3, edge_dim=5, out_dim=5, n_rounds=1)
        self.randomize_biases(net, rng)
        sg = toy_subgraph(rng, m=3, in_dim=4, n_max=5)
        batch = batch_subgraphs([sg])
        logp, trace = policy_logprobs(batch, net, record=True)
        assert min_relu_preactivation(trace.output) > 1e-6
        seed = rng.normal(size=logp.shape)
        grads = backward(trace, seed)
        want = self.fd_param_grads(
            lambda: policy_logprobs(batch, net)[0], net, seed
        )
        self.assert_close(grads, want)

    def test_critic_gradients(self):
        rng = np.random.default_rng(8)
        net = new_graph_net(rng, in_dim=9, hidden=3, edge_dim=5, out_dim=1, n_rounds=1, pooled=True)
        self.randomize_biases(net, rng)
        sg = toy_subgraph(rng, m=3, in_dim=4, n_max=5)
        joint = np.array([1, 4, 0])
        batch = batch_subgraphs([sg], joints=[joint])
        vals, trace = critic_values(batch, net, record=True)
        assert min_relu_preactivation(trace.output) > 1e-6
        seed = np.array([0.7])
        grads = backward(trace, seed)
        want = self.fd_param_grads(
            lambda: critic_values(batch, net)[0], net, np.array([0.7])
        )
        self.assert_close(grads, want)

    def test_mlp_gradients(self):
        rng = np.random.default_rng(9)
        mlp = new_mlp(rng, in_dim=6, hidden=4, out_dim=5)
        x = rng.normal(size=(3, 6))
        logp, trace = mlp_logprobs(x, mlp, record=True)
        seed = rng.normal(size=logp.shape)
        grads = backward(trace, seed)
        want = self.fd_param_grads(lambda: mlp_logprobs(x, mlp)[0], mlp, seed)
        self.assert_close(grads, want)

    def test_stale_trace_rejected(self):
        rng = np.random.default_rng(10)
        net = new_graph_net(rng, in_dim=4, hidden=3, edge_dim=5, out_dim=5, n_rounds=1)
        sg = toy_subgraph(rng, m=2, in_dim=4, n_max=5)
        _, trace = policy_logprobs(batch_subgraphs([sg]), net, record=True)
        grads = backward(trace, np.ones((2, 5)))
        adam = adam_state(net, lr=0.01)
        adam_step(net, grads, adam)
        with pytest.raises(StaleTrace):
            backward(trace, np.ones((2, 5)))

    def test_seed_size_mismatch(self):
        rng = np.random.default_rng(11)
        mlp = new_mlp(rng, in_dim=3, hidden=4, out_dim=5)
        _, trace = mlp_logprobs(rng.normal(size=(2, 3)), mlp, record=True)
        with pytest.raises(ShapeError):
            backward(trace, np.ones((3, 5)))


class TestInvariance:
    def permute_subgraph(self, sg: SubGraph, perm: np.ndarray) -> SubGraph:
        """Relabel member slots by ``perm`` (slot i moves to perm[i])."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        order = np.argsort(perm)
        return SubGraph(
            centre=sg.centre,
            members=sg.members[order],
            features=sg.features[order],
            edge_src=perm[sg.edge_src],
            edge_dst=perm[sg.edge_dst],
            edge_dist=sg.edge_dist,
            edge_feat=sg.edge_feat,
            depth=sg.depth,
        )

    def test_vertex_outputs_follow_relabelling(self):
        rng = np.random.default_rng(12)
        net = new_graph_net(rng, in_dim=6, hidden=5, edge_dim=10, out_dim=5)
        for _ in range(20):
            sg = toy_subgraph(rng, m=int(rng.integers(2, 6)), in_dim=6)
            perm = rng.permutation(sg.n_members())
            base = policy_forward(sg, net)
            moved = policy_forward(self.permute_subgraph(sg, perm), net)
            np.testing.assert_allclose(moved, base[np.argsort(perm)], atol=1e-9)

    def test_pooled_critic_is_order_free(self):
        rng = np.random.default_rng(13)
        net = new_graph_net(rng, in_dim=11, hidden=5, edge_dim=10, out_dim=1, pooled=True)
        for _ in range(20):
            sg = toy_subgraph(rng, m=int(rng.integers(2, 6)), in_dim=6)
            joint = rng.integers(0, 5, size=sg.n_members())
            perm = rng.permutation(sg.n_members())
            moved = self.permute_subgraph(sg, perm)
            moved_joint = np.empty_like(joint)
            moved_joint[perm] = joint
            a = critic_forward(sg, joint, net)
            b = critic_forward(moved, moved_joint, net)
            assert abs(a - b) < 1e-9

    def test_zero_head_gives_uniform_policy(self):
        rng = np.random.default_rng(14)
        net = new_graph_net(rng, in_dim=5, hidden=4, edge_dim=10, out_dim=5)
        net.head_lin.w[:] = 0.0
        net.head_lin.b[:] = 0.0
        sg = toy_subgraph(rng, m=3, in_dim=5)
        np.testing.assert_allclose(policy_forward(sg, net), 0.2)


class TestHelpers:
    def test_h_lin_h_rel(self):
        rng = np.random.default_rng(15)
        net = new_mlp(rng, in_dim=4, hidden=3, out_dim=2)
        x = rng.normal(size=4)
        np.testing.assert_allclose(h_lin(x, net.l1), net.l1.w @ x + net.l1.b)
        np.testing.assert_allclose(h_rel(x, net.l1), np.maximum(net.l1.w @ x + net.l1.b, 0))

    def test_onehot_block_layout(self):
        rng = np.random.default_rng(16)
        sg = toy_subgraph(rng, m=2, in_dim=3)
        batch = batch_subgraphs([sg], joints=[np.array([4, 1])])
        np.testing.assert_allclose(batch.x[:, :3], sg.features)
        np.testing.assert_allclose(batch.x[0, 3:], [0, 0, 0, 0, 1])
        np.testing.assert_allclose(batch.x[1, 3:], [0, 1, 0, 0, 0])
