import math

import numpy as np
import pytest

from matfuse import autodiff as ad
from matfuse.autodiff import Tensor, gradient_check
from matfuse.cif import expand_symmetry, parse_cif
from matfuse.errors import EmptyGraph, ShapeMismatch
from matfuse.graph import CrystalGraph, Edge, build_graph
from matfuse.model import (GraphConstants, cgcnn_conv,
                           config_from_dict, config_to_dict, forward, fuse,
                           fused_embedding, graph_encode, graph_pool,
                           init_params, predict, self_attention, text_encode)
from matfuse.text import build_vocab, tokenize

from conftest import MICRO_GRAPH_CFG, ROCKSALT, make_cif, micro_model_cfg


VOCAB = build_vocab(["formula cell cubic sites coordination na cl "
                     "crystal system lengths angstrom mean"])


def micro_params(cfg, seed=7, n_feat=None, vocab_size=None, max_len=16):
    from matfuse.elements import AtomFeatureSpec
    return init_params(cfg, n_feat or AtomFeatureSpec().length,
                       MICRO_GRAPH_CFG.n_edge_features,
                       vocab_size or len(VOCAB), max_len, seed=seed)


def rocksalt_graph():
    s = expand_symmetry(parse_cif(ROCKSALT))
    return build_graph(s, MICRO_GRAPH_CFG)


def seq_for(text, max_len=16):
    return tokenize(text, VOCAB, max_len)


# ---------------------------------------------------------------------------
# configuration / initialization

def test_config_validate_divisibility():
    with pytest.raises(ShapeMismatch):
        micro_model_cfg(d_t=6, n_heads=4).validate()
    with pytest.raises(ShapeMismatch):
        micro_model_cfg(d_m=6, n_fusion_heads=4).validate()


def test_config_single_head_when_multi_head_off():
    cfg = micro_model_cfg(multi_head=False)
    assert cfg.fusion_heads() == (1, cfg.d_m)


def test_config_bad_fusion_mode():
    with pytest.raises(ValueError):
        micro_model_cfg(fusion_mode="banana").validate()


def test_config_round_trip():
    cfg = micro_model_cfg(fusion_mode="token", sigmoid_output=True)
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_init_params_deterministic_and_config_gated():
    cfg = micro_model_cfg()
    p1 = micro_params(cfg, seed=3)
    p2 = micro_params(cfg, seed=3)
    assert p1.keys() == p2.keys()
    assert all(np.array_equal(p1[k].data, p2[k].data) for k in p1)
    assert "fuse.ln.g" in p1
    p_no_ln = micro_params(micro_model_cfg(layer_norm=False), seed=3)
    assert "fuse.ln.g" not in p_no_ln
    p_single = micro_params(micro_model_cfg(multi_head=False), seed=3)
    assert "fuse.head0.W_q" in p_single and "fuse.head1.W_q" not in p_single


def test_init_biases_zero_gains_one():
    params = micro_params(micro_model_cfg())
    assert np.all(params["graph.in.b"].data == 0.0)
    assert np.all(params["text.layer0.ln1.g"].data == 1.0)
    assert np.all(params["head.b_o"].data == 0.0)


# ---------------------------------------------------------------------------
# graph branch

def two_node_graph(d_edge=MICRO_GRAPH_CFG.n_edge_features):
    edges = (Edge(0, 1, (0, 0, 0), 2.0), Edge(1, 0, (0, 0, 0), 2.0),
             Edge(0, 1, (1, 0, 0), 3.0))
    efeat = np.linspace(0.1, 0.9, 3 * d_edge).reshape(3, d_edge)
    nodes = np.eye(2, 5)
    return CrystalGraph(nodes, edges, efeat, 2)


def test_cgcnn_conv_no_edges_is_identity():
    g = CrystalGraph(np.eye(2, 5), (), np.zeros((0, 5)), 2)
    consts = GraphConstants.from_graph(g)
    h = Tensor(np.arange(8.0).reshape(2, 4))
    out = cgcnn_conv(h, consts, {}, 0)
    assert out is h


def test_cgcnn_conv_zero_params_adds_half_log2_per_edge():
    cfg = micro_model_cfg()
    params = micro_params(cfg)
    for k in ("W_f", "b_f", "W_s", "b_s"):
        params[f"graph.conv0.{k}"].data[...] = 0.0
    g = two_node_graph()
    consts = GraphConstants.from_graph(g)
    h = Tensor(np.arange(8.0).reshape(2, 4))
    out = cgcnn_conv(h, consts, params, 0)
    # gate = sigmoid(0) = 1/2, filter = softplus(0) = log 2
    incr = 0.5 * math.log(2.0)
    want = h.data + np.array([[2 * incr] * 4, [1 * incr] * 4])
    assert np.allclose(out.data, want, atol=1e-12)


def test_cgcnn_conv_matches_loop_oracle():
    cfg = micro_model_cfg()
    params = micro_params(cfg, seed=11)
    g = two_node_graph()
    consts = GraphConstants.from_graph(g)
    rng = np.random.default_rng(0)
    h = rng.normal(size=(2, 4))
    out = cgcnn_conv(Tensor(h), consts, params, 0)

    wf = params["graph.conv0.W_f"].data
    bf = params["graph.conv0.b_f"].data
    ws = params["graph.conv0.W_s"].data
    bs = params["graph.conv0.b_s"].data
    want = h.copy()
    for e, edge in enumerate(g.edges):
        z = np.concatenate([h[edge.i], h[edge.j], g.edge_features[e]])
        gate = 1.0 / (1.0 + np.exp(-(z @ wf + bf)))
        filt = np.log1p(np.exp(z @ ws + bs))
        want[edge.i] += gate * filt
    assert np.allclose(out.data, want, atol=1e-12)


def test_graph_pool_mean_and_empty():
    h = Tensor(np.array([[1.0, 3.0], [3.0, 5.0]]))
    assert np.allclose(graph_pool(h).data, [[2.0, 4.0]])
    with pytest.raises(EmptyGraph):
        graph_pool(Tensor(np.zeros((0, 2))))


def test_graph_encode_shapes():
    cfg = micro_model_cfg()
    params = micro_params(cfg)
    pooled, nodes = graph_encode(rocksalt_graph(), params, cfg)
    assert pooled.shape == (1, cfg.d_g)
    assert nodes.shape == (8, cfg.d_g)


def test_graph_encode_node_permutation_invariance():
    cfg = micro_model_cfg()
    params = micro_params(cfg)
    s = expand_symmetry(parse_cif(ROCKSALT))
    from dataclasses import replace
    perm = [3, 1, 7, 0, 5, 2, 6, 4]
    s_perm = replace(s, sites=tuple(s.sites[i] for i in perm))
    p1, _ = graph_encode(build_graph(s, MICRO_GRAPH_CFG), params, cfg)
    p2, _ = graph_encode(build_graph(s_perm, MICRO_GRAPH_CFG), params, cfg)
    assert np.allclose(p1.data, p2.data, atol=1e-9)


# ---------------------------------------------------------------------------
# text branch

def attention_oracle(x, params, prefix, cfg):
    """Dense numpy re-implementation of one post-norm block."""
    def ln(v, g, b, eps=1e-5):
        mu = v.mean(axis=-1, keepdims=True)
        var = v.var(axis=-1, keepdims=True)
        return (v - mu) / np.sqrt(var + eps) * g + b

    d_k = cfg.d_t // cfg.n_heads
    heads = []
    for h in range(cfg.n_heads):
        hp = f"{prefix}.head{h}"
        q = x @ params[hp + ".W_q"].data
        k = x @ params[hp + ".W_k"].data
        v = x @ params[hp + ".W_v"].data
        s = q @ k.T / math.sqrt(d_k)
        e = np.exp(s - s.max(axis=-1, keepdims=True))
        heads.append((e / e.sum(axis=-1, keepdims=True)) @ v)
    attn = np.concatenate(heads, axis=-1) @ params[prefix + ".W_O"].data
    x = ln(x + attn, params[prefix + ".ln1.g"].data,
           params[prefix + ".ln1.b"].data)
    ffn = (np.maximum(x @ params[prefix + ".W_1"].data
                      + params[prefix + ".b_1"].data, 0.0)
           @ params[prefix + ".W_2"].data + params[prefix + ".b_2"].data)
    return ln(x + ffn, params[prefix + ".ln2.g"].data,
              params[prefix + ".ln2.b"].data)


def test_self_attention_matches_dense_oracle():
    cfg = micro_model_cfg()
    params = micro_params(cfg, seed=5)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, cfg.d_t))
    out = self_attention(Tensor(x), ad.constant(np.zeros((6, 6))), params,
                         "text.layer0", cfg)
    assert np.allclose(out.data, attention_oracle(x, params, "text.layer0",
                                                  cfg), atol=1e-12)


def test_self_attention_identical_values_pass_through():
    # if all rows of x are equal, attention output rows are equal too
    cfg = micro_model_cfg()
    params = micro_params(cfg, seed=5)
    x = np.tile(np.linspace(0.1, 0.4, cfg.d_t), (4, 1))
    out = self_attention(Tensor(x), ad.constant(np.zeros((4, 4))), params,
                         "text.layer0", cfg).data
    assert np.allclose(out, out[0], atol=1e-12)


def test_text_encode_shape_and_padding_invariance():
    cfg = micro_model_cfg()
    params = micro_params(cfg, max_len=32)
    short = text_encode(seq_for("cubic cell", max_len=8), params, cfg)
    long = text_encode(seq_for("cubic cell", max_len=32), params, cfg)
    assert short.shape == (1, cfg.d_t)
    assert np.array_equal(short.data, long.data)


def test_text_encode_masked_mean_oracle():
    cfg = micro_model_cfg()
    params = micro_params(cfg, seed=9)
    seq = seq_for("na cl cubic")
    n = int(seq.mask.sum())
    x = (params["text.tok_emb"].data[seq.ids[:n]]
         + params["text.pos_emb"].data[:n])
    for l in range(cfg.n_text_layers):
        x = attention_oracle(x, params, f"text.layer{l}", cfg)
    want = x.mean(axis=0, keepdims=True)
    got = text_encode(seq, params, cfg)
    assert np.allclose(got.data, want, atol=1e-12)


# ---------------------------------------------------------------------------
# fusion and prediction

def test_fuse_vector_mode_single_key_attends_fully():
    # one key/value row: softmax weight is exactly 1, so the attended
    # value equals the projected graph vector passed through out_proj
    cfg = micro_model_cfg(residual=False, layer_norm=False)
    params = micro_params(cfg, seed=13)
    rng = np.random.default_rng(1)
    h_t = Tensor(rng.normal(size=(1, cfg.d_t)))
    h_s = Tensor(rng.normal(size=(1, cfg.d_g)))
    out = fuse(h_t, h_s, None, params, cfg)
    hs_p = (h_s.data @ params["fuse.graph_proj.W"].data
            + params["fuse.graph_proj.b"].data)
    vals = [hs_p @ params[f"fuse.head{h}.W_v"].data for h in range(2)]
    want = np.concatenate(vals, axis=-1) @ params["fuse.out_proj.W"].data
    assert np.allclose(out.data, want, atol=1e-12)


def test_fuse_residual_adds_projected_text():
    cfg_no = micro_model_cfg(residual=False, layer_norm=False)
    cfg_yes = micro_model_cfg(residual=True, layer_norm=False)
    params = micro_params(cfg_yes, seed=13)
    rng = np.random.default_rng(4)
    h_t = Tensor(rng.normal(size=(1, cfg_yes.d_t)))
    h_s = Tensor(rng.normal(size=(1, cfg_yes.d_g)))
    base = fuse(h_t, h_s, None, params, cfg_no).data
    with_res = fuse(h_t, h_s, None, params, cfg_yes).data
    ht_p = (h_t.data @ params["fuse.text_proj.W"].data
            + params["fuse.text_proj.b"].data)
    assert np.allclose(with_res, base + ht_p, atol=1e-12)


def test_fuse_token_mode_matches_oracle():
    cfg = micro_model_cfg(fusion_mode="token", residual=False,
                          layer_norm=False)
    params = micro_params(cfg, seed=13)
    rng = np.random.default_rng(6)
    h_t = Tensor(rng.normal(size=(1, cfg.d_t)))
    node_h = Tensor(rng.normal(size=(5, cfg.d_g)))
    out = fuse(h_t, None, node_h, params, cfg)

    ht_p = (h_t.data @ params["fuse.text_proj.W"].data
            + params["fuse.text_proj.b"].data)
    hs_p = (node_h.data @ params["fuse.graph_proj.W"].data
            + params["fuse.graph_proj.b"].data)
    heads = []
    for h in range(2):
        hp = f"fuse.head{h}"
        q = ht_p @ params[hp + ".W_q"].data
        k = hs_p @ params[hp + ".W_k"].data
        v = hs_p @ params[hp + ".W_v"].data
        s = q @ k.T / math.sqrt(2)
        e = np.exp(s - s.max())
        heads.append((e / e.sum()) @ v)
    want = np.concatenate(heads, axis=-1) @ params["fuse.out_proj.W"].data
    assert np.allclose(out.data, want, atol=1e-12)


def test_fuse_dropout_requires_rng():
    cfg = micro_model_cfg(dropout=True)
    params = micro_params(cfg)
    h = Tensor(np.ones((1, 4)))
    with pytest.raises(ValueError):
        fuse(h, h, None, params, cfg, training=True, rng=None)


def test_fuse_dropout_off_at_inference():
    cfg = micro_model_cfg(dropout=True)
    params = micro_params(cfg)
    rng = np.random.default_rng(0)
    h_t = Tensor(rng.normal(size=(1, cfg.d_t)))
    h_s = Tensor(rng.normal(size=(1, cfg.d_g)))
    a = fuse(h_t, h_s, None, params, cfg, training=False).data
    b = fuse(h_t, h_s, None, params, cfg, training=False).data
    assert np.array_equal(a, b)


def test_predict_linear_and_sigmoid():
    cfg = micro_model_cfg()
    params = micro_params(cfg)
    c = Tensor(np.ones((1, cfg.d_m)))
    lin = predict(c, params, cfg)
    want = c.data @ params["head.W_o"].data + params["head.b_o"].data
    assert np.allclose(lin.data, want, atol=1e-15)
    sig = predict(c, params, micro_model_cfg(sigmoid_output=True))
    assert np.allclose(sig.data, 1.0 / (1.0 + np.exp(-want)), atol=1e-15)


# ---------------------------------------------------------------------------
# end to end

def test_forward_shape_and_finite():
    cfg = micro_model_cfg()
    params = micro_params(cfg)
    out = forward(rocksalt_graph(), seq_for("na cl cubic"), params, cfg)
    assert out.shape == (1, 1)
    assert np.isfinite(out.item())


def test_forward_zero_text_ignores_description():
    cfg = micro_model_cfg(zero_text=True, residual=False)
    params = micro_params(cfg)
    g = rocksalt_graph()
    a = forward(g, seq_for("na cl cubic"), params, cfg).item()
    b = forward(g, seq_for("formula lengths angstrom"), params, cfg).item()
    assert a == b


def test_forward_zero_graph_ignores_structure():
    cfg = micro_model_cfg(zero_graph=True)
    params = micro_params(cfg)
    seq = seq_for("na cl cubic")
    g1 = rocksalt_graph()
    g2 = build_graph(parse_cif(make_cif(a=3.0)), MICRO_GRAPH_CFG)
    assert (forward(g1, seq, params, cfg).item()
            == forward(g2, seq, params, cfg).item())


def test_forward_full_gradient_check():
    cfg = micro_model_cfg()
    params = micro_params(cfg)
    # widen the embedding spread so attention-score gradients sit well
    # above the finite-difference noise floor
    params["text.tok_emb"].data *= 30.0
    params["text.pos_emb"].data *= 30.0
    g = rocksalt_graph()
    seq = seq_for("na cl cubic cell")
    report = gradient_check(
        lambda: ad.mse(forward(g, seq, params, cfg), [[0.7]]),
        params, h=1e-6, tol=1e-4)
    assert report.passed, sorted(report.errors.items(),
                                 key=lambda kv: -kv[1])[:5]


def test_fused_embedding_width():
    cfg = micro_model_cfg()
    params = micro_params(cfg)
    emb = fused_embedding(rocksalt_graph(), seq_for("na cl"), params, cfg)
    assert emb.shape == (cfg.d_m,)
    assert np.all(np.isfinite(emb))
