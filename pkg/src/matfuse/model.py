"""The fusion model: graph encoder, text encoder, multi-head
cross-attention combination, and the scalar prediction head.

All learnable parameters live in a flat name -> Tensor dict so the
optimizer, checkpointing and gradient checks can treat them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyGraph, ShapeMismatch
from .graph import CrystalGraph
from .text import TokenSequence

MASK_BIAS = -1e9


@dataclass
class ModelConfig:
    # graph encoder
    d_g: int = 64
    n_conv: int = 3
    # text encoder
    d_t: int = 64
    n_text_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    # fusion
    d_m: int = 64
    n_fusion_heads: int = 4
    multi_head: bool = True
    layer_norm: bool = True
    dropout: bool = True
    residual: bool = True
    dropout_rate: float = 0.1
    fusion_mode: str = "vector"   # "vector" | "token"
    sigmoid_output: bool = False
    # modality ablations
    zero_text: bool = False
    zero_graph: bool = False

    def fusion_heads(self):
        h = self.n_fusion_heads if self.multi_head else 1
        if self.d_m % h:
            raise ShapeMismatch(f"d_m {self.d_m} not divisible by {h} heads")
        return h, self.d_m // h

    def validate(self):
        if self.d_t % self.n_heads:
            raise ShapeMismatch(
                f"d_t {self.d_t} not divisible by n_heads {self.n_heads}")
        if self.fusion_mode not in ("vector", "token"):
            raise ValueError(f"unknown fusion_mode {self.fusion_mode!r}")
        self.fusion_heads()


def init_params(cfg: ModelConfig, n_atom_features: int,
                n_edge_features: int, vocab_size: int, max_len: int,
                seed: int = 0, dtype=np.float64) -> dict:
    """Seed-controlled initialization: uniform(+-1/sqrt(fan_in)) for
    weight matrices, normal(0, 0.02) for embeddings, zeros for biases,
    ones/zeros for layer-norm gain/bias."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def w(name, fan_in, fan_out):
        lim = 1.0 / math.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-lim, lim, (fan_in, fan_out)),
                              requires_grad=True, name=name, dtype=dtype)

    def b(name, width):
        params[name] = Tensor(np.zeros(width), requires_grad=True,
                              name=name, dtype=dtype)

    def ln(prefix, width):
        params[prefix + ".g"] = Tensor(np.ones(width), requires_grad=True,
                                       name=prefix + ".g", dtype=dtype)
        params[prefix + ".b"] = Tensor(np.zeros(width), requires_grad=True,
                                       name=prefix + ".b", dtype=dtype)

    # graph encoder
    w("graph.in.W", n_atom_features, cfg.d_g)
    b("graph.in.b", cfg.d_g)
    z_dim = 2 * cfg.d_g + n_edge_features
    for l in range(cfg.n_conv):
        w(f"graph.conv{l}.W_f", z_dim, cfg.d_g)
        b(f"graph.conv{l}.b_f", cfg.d_g)
        w(f"graph.conv{l}.W_s", z_dim, cfg.d_g)
        b(f"graph.conv{l}.b_s", cfg.d_g)

    # text encoder
    params["text.tok_emb"] = Tensor(
        rng.normal(0.0, 0.02, (vocab_size, cfg.d_t)), requires_grad=True,
        name="text.tok_emb", dtype=dtype)
    params["text.pos_emb"] = Tensor(
        rng.normal(0.0, 0.02, (max_len, cfg.d_t)), requires_grad=True,
        name="text.pos_emb", dtype=dtype)
    d_k = cfg.d_t // cfg.n_heads
    for l in range(cfg.n_text_layers):
        for h in range(cfg.n_heads):
            for m in ("W_q", "W_k", "W_v"):
                w(f"text.layer{l}.head{h}.{m}", cfg.d_t, d_k)
        w(f"text.layer{l}.W_O", cfg.d_t, cfg.d_t)
        ln(f"text.layer{l}.ln1", cfg.d_t)
        w(f"text.layer{l}.W_1", cfg.d_t, cfg.d_ff)
        b(f"text.layer{l}.b_1", cfg.d_ff)
        w(f"text.layer{l}.W_2", cfg.d_ff, cfg.d_t)
        b(f"text.layer{l}.b_2", cfg.d_t)
        ln(f"text.layer{l}.ln2", cfg.d_t)

    # fusion + head
    w("fuse.text_proj.W", cfg.d_t, cfg.d_m)
    b("fuse.text_proj.b", cfg.d_m)
    w("fuse.graph_proj.W", cfg.d_g, cfg.d_m)
    b("fuse.graph_proj.b", cfg.d_m)
    n_fh, d_fh = cfg.fusion_heads()
    for h in range(n_fh):
        for m in ("W_q", "W_k", "W_v"):
            w(f"fuse.head{h}.{m}", cfg.d_m, d_fh)
    w("fuse.out_proj.W", cfg.d_m, cfg.d_m)
    if cfg.layer_norm:
        ln("fuse.ln", cfg.d_m)
    w("head.W_o", cfg.d_m, 1)
    b("head.b_o", 1)
    return params


# ---------------------------------------------------------------------------
# graph branch

@dataclass
class GraphConstants:
    """Per-graph constant tensors reused across conv layers."""
    src: np.ndarray
    dst: np.ndarray
    edge_features: Tensor
    incidence: Tensor  # N x E aggregation matrix
    num_nodes: int

    @classmethod
    def from_graph(cls, graph: CrystalGraph, dtype=np.float64):
        n, e = graph.num_nodes, len(graph.edges)
        src = np.array([edge.i for edge in graph.edges], dtype=np.int64)
        dst = np.array([edge.j for edge in graph.edges], dtype=np.int64)
        inc = np.zeros((n, e))
        inc[src, np.arange(e)] = 1.0
        return cls(src, dst, ad.constant(graph.edge_features, dtype=dtype),
                   ad.constant(inc, dtype=dtype), n)


def cgcnn_conv(h: Tensor, consts: GraphConstants, params: dict,
               layer: int) -> Tensor:
    """Gated edge-message update: h_i += sum_j sigmoid(z W_f + b_f) *
    softplus(z W_s + b_s) with z = concat(h_i, h_j, e_ij)."""
    if len(consts.src) == 0:
        return h
    p = f"graph.conv{layer}"
    hi = ad.embedding_lookup(h, consts.src)
    hj = ad.embedding_lookup(h, consts.dst)
    z = ad.concat([hi, hj, consts.edge_features], axis=-1)
    gate = ad.sigmoid(ad.add(ad.matmul(z, params[p + ".W_f"]),
                             params[p + ".b_f"]))
    filt = ad.softplus(ad.add(ad.matmul(z, params[p + ".W_s"]),
                              params[p + ".b_s"]))
    return ad.add(h, ad.matmul(consts.incidence, ad.mul(gate, filt)))


def graph_pool(h: Tensor) -> Tensor:
    """Mean over nodes -> row vector (1, d_g)."""
    if h.shape[0] == 0:
        raise EmptyGraph("cannot pool a graph with zero nodes")
    return ad.reshape(ad.mean(h, axis=0), (1, h.shape[1]))


def graph_encode(graph: CrystalGraph, params: dict, cfg: ModelConfig,
                 dtype=np.float64):
    """Returns (pooled (1, d_g), per-node features (N, d_g))."""
    consts = GraphConstants.from_graph(graph, dtype)
    x = ad.constant(graph.node_features, dtype=dtype)
    h = ad.add(ad.matmul(x, params["graph.in.W"]), params["graph.in.b"])
    for l in range(cfg.n_conv):
        h = cgcnn_conv(h, consts, params, l)
    return graph_pool(h), h


# ---------------------------------------------------------------------------
# text branch

def self_attention(x: Tensor, key_bias: Tensor, params: dict, prefix: str,
                   cfg: ModelConfig) -> Tensor:
    """Post-norm transformer block: multi-head self attention with masked
    keys, then the ReLU feed-forward, each with residual + layer norm."""
    d_k = cfg.d_t // cfg.n_heads
    heads = []
    for h in range(cfg.n_heads):
        hp = f"{prefix}.head{h}"
        q = ad.matmul(x, params[hp + ".W_q"])
        k = ad.matmul(x, params[hp + ".W_k"])
        v = ad.matmul(x, params[hp + ".W_v"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_k))
        weights = ad.softmax(ad.add(scores, key_bias))
        heads.append(ad.matmul(weights, v))
    attn = ad.matmul(ad.concat(heads, axis=-1), params[prefix + ".W_O"])
    x = ad.layer_norm(ad.add(x, attn), params[prefix + ".ln1.g"],
                      params[prefix + ".ln1.b"])
    ffn = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(x, params[prefix + ".W_1"]),
                                          params[prefix + ".b_1"])),
                           params[prefix + ".W_2"]),
                 params[prefix + ".b_2"])
    return ad.layer_norm(ad.add(x, ffn), params[prefix + ".ln2.g"],
                         params[prefix + ".ln2.b"])


def text_encode(seq: TokenSequence, params: dict, cfg: ModelConfig,
                dtype=np.float64) -> Tensor:
    """Embed + positional, n transformer layers, masked mean -> (1, d_t).

    Trailing padding cannot influence the result: padded positions are
    dropped up front (they are masked as keys and excluded from the mean,
    so the truncation is exact)."""
    n = max(int(seq.mask.sum()), 1)
    ids = seq.ids[:n]
    x = ad.add(ad.embedding_lookup(params["text.tok_emb"], ids),
               ad.embedding_lookup(params["text.pos_emb"], np.arange(n)))
    key_bias = ad.constant(np.zeros((n, n)), dtype=dtype)
    for l in range(cfg.n_text_layers):
        x = self_attention(x, key_bias, params, f"text.layer{l}", cfg)
    pool = ad.constant(np.full((1, n), 1.0 / n), dtype=dtype)
    return ad.matmul(pool, x)


# ---------------------------------------------------------------------------
# fusion and prediction

def fuse(h_t: Tensor, h_s: Tensor, node_h, params: dict, cfg: ModelConfig,
         training: bool = False, rng=None) -> Tensor:
    """Cross attention: queries from the text embedding, keys/values from
    the structure embedding (per-node features in token mode)."""
    ht_p = ad.add(ad.matmul(h_t, params["fuse.text_proj.W"]),
                  params["fuse.text_proj.b"])
    if cfg.zero_text:
        ht_p = ad.scale(ht_p, 0.0)
    source = node_h if cfg.fusion_mode == "token" else h_s
    hs_p = ad.add(ad.matmul(source, params["fuse.graph_proj.W"]),
                  params["fuse.graph_proj.b"])
    if cfg.zero_graph:
        hs_p = ad.scale(hs_p, 0.0)

    n_fh, d_fh = cfg.fusion_heads()
    heads = []
    for h in range(n_fh):
        hp = f"fuse.head{h}"
        q = ad.matmul(ht_p, params[hp + ".W_q"])
        k = ad.matmul(hs_p, params[hp + ".W_k"])
        v = ad.matmul(hs_p, params[hp + ".W_v"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)),
                          1.0 / math.sqrt(d_fh))
        heads.append(ad.matmul(ad.softmax(scores), v))
    combined = ad.matmul(ad.concat(heads, axis=-1), params["fuse.out_proj.W"])
    if cfg.residual:
        combined = ad.add(combined, ht_p)
    if cfg.layer_norm:
        combined = ad.layer_norm(combined, params["fuse.ln.g"],
                                 params["fuse.ln.b"])
    if cfg.dropout and training:
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        keep = 1.0 - cfg.dropout_rate
        mask = (rng.random(combined.shape) < keep) / keep
        combined = ad.mul(combined, ad.constant(mask,
                                                dtype=combined.data.dtype))
    return combined


def predict(combined: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    y = ad.add(ad.matmul(combined, params["head.W_o"]), params["head.b_o"])
    return ad.sigmoid(y) if cfg.sigmoid_output else y


def forward(graph: CrystalGraph, seq: TokenSequence, params: dict,
            cfg: ModelConfig, training: bool = False, rng=None,
            dtype=np.float64) -> Tensor:
    """End-to-end prediction for one crystal: shape (1, 1)."""
    h_s, node_h = graph_encode(graph, params, cfg, dtype)
    h_t = text_encode(seq, params, cfg, dtype)
    combined = fuse(h_t, h_s, node_h, params, cfg, training, rng)
    return predict(combined, params, cfg)


def fused_embedding(graph: CrystalGraph, seq: TokenSequence, params: dict,
                    cfg: ModelConfig, dtype=np.float64) -> np.ndarray:
    """Pre-prediction fused embedding (for export / t-SNE style analysis)."""
    h_s, node_h = graph_encode(graph, params, cfg, dtype)
    h_t = text_encode(seq, params, cfg, dtype)
    return fuse(h_t, h_s, node_h, params, cfg).data.reshape(-1)


def config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**d)
