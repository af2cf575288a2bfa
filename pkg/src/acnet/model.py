"""Two-branch grounding model with caption guided attention.

The visual map and the query are projected twice, once for the regression
branch and once for the contrastive branch.  In the regression branch the
auxiliary captions attend to the query, the resulting relation vectors are
spread over the map through each caption's IoU map, and a feed-forward block
fuses them into the visual features.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .errors import ConfigError, DimensionError
from .scoring import score_contrastive, score_regression
from .temporal import ConvLayer, TemporalMap2D, conv_map, valid_cells, valid_mask


@dataclass
class Linear:
    weight: ad.Variable
    bias: ad.Variable

    def __call__(self, x: ad.Variable) -> ad.Variable:
        if x.shape[1] != self.weight.shape[0]:
            raise DimensionError(f"linear layer expects {self.weight.shape[0]} inputs, got {x.shape[1]}")
        return x @ self.weight + self.bias


@dataclass
class AttentionParams:
    wq: list[ad.Variable]
    wk: list[ad.Variable]
    wv: list[ad.Variable]
    wo: ad.Variable

    @property
    def heads(self) -> int:
        return len(self.wq)

    @property
    def dim(self) -> int:
        return self.wo.shape[0]


@dataclass
class FusionParams:
    mlp: list[Linear]
    w_f: ad.Variable
    b_f: ad.Variable
    w_ff: ad.Variable
    b_ff: ad.Variable


@dataclass
class BranchFeatures:
    v_r: TemporalMap2D
    q_r: ad.Variable
    v_c: TemporalMap2D
    q_c: ad.Variable
    q_r_aux: ad.Variable | None
    q_c_aux: ad.Variable | None

    @property
    def n_aux(self) -> int:
        return 0 if self.q_r_aux is None else self.q_r_aux.shape[0]


def _mask_column(n_clips: int) -> np.ndarray:
    return valid_mask(n_clips).reshape(-1, 1).astype(np.float64)


def project_features(visual_map: TemporalMap2D, query_emb, aux_embs, proj: dict[str, Linear]) -> BranchFeatures:
    """Project the visual map and the sentences into the regression and contrastive spaces.

    ``proj`` has keys ``v_r, q_r, v_c, q_c``.  Auxiliary sentences share the
    query projections.  ``aux_embs`` may have zero rows.
    """
    n = visual_map.n_clips
    fv = visual_map.values if isinstance(visual_map.values, ad.Variable) else ad.Variable(visual_map.values)
    q = ad.as_variable(np.atleast_2d(query_emb) if not isinstance(query_emb, ad.Variable) else query_emb)
    mask = _mask_column(n)
    v_r = TemporalMap2D(n, ad.mul(proj["v_r"](fv), mask))
    v_c = TemporalMap2D(n, ad.mul(proj["v_c"](fv), mask))
    q_r_aux = q_c_aux = None
    if aux_embs is not None and len(aux_embs):
        a = ad.as_variable(np.atleast_2d(aux_embs) if not isinstance(aux_embs, ad.Variable) else aux_embs)
        q_r_aux, q_c_aux = proj["q_r"](a), proj["q_c"](a)
    return BranchFeatures(v_r, proj["q_r"](q), v_c, proj["q_c"](q), q_r_aux, q_c_aux)


def mha(x: ad.Variable, y: ad.Variable, params: AttentionParams,
        hook: Callable[[int, np.ndarray], None] | None = None) -> ad.Variable:
    """Multi-head scaled dot-product attention of rows of ``x`` over rows of ``y``.

    ``hook(head, weights)`` is called with each head's attention matrix.
    """
    d = params.dim
    if d % params.heads:
        raise ConfigError(f"model dim {d} is not divisible by {params.heads} heads")
    if x.shape[1] != d or y.shape[1] != d:
        raise DimensionError(f"attention inputs must have {d} columns")
    d_m = d // params.heads
    heads = []
    for h in range(params.heads):
        logits = (x @ params.wq[h]) @ ad.transpose(y @ params.wk[h])
        attn = ad.softmax_rows(ad.scale(logits, 1.0 / math.sqrt(d_m)))
        if hook is not None:
            hook(h, attn.value)
        heads.append(attn @ (y @ params.wv[h]))
    return ad.concat_cols(heads) @ params.wo


def cga_relations(q_aux: ad.Variable | None, q: ad.Variable, params: AttentionParams) -> ad.Variable | None:
    """Relations of each auxiliary sentence to the query; None when there are no captions."""
    if q_aux is None or q_aux.shape[0] == 0:
        return None
    return mha(q_aux, q, params)


def cga_project(f_mu: ad.Variable, f_t: np.ndarray, mlp: list[Linear], n_clips: int) -> ad.Variable:
    """Spread relation vectors over the map, weighted by each caption's IoU map.

    ``f_t`` is (l, N*N).  Cell ``c`` first receives ``sum_k f_t[k, c] * f_mu[k]``,
    then passes through the MLP; invalid cells are zeroed.
    """
    f_t = np.asarray(f_t, dtype=np.float64)
    if f_t.ndim != 2 or f_t.shape[0] != f_mu.shape[0]:
        raise DimensionError(f"{f_mu.shape[0]} relation rows but IoU maps of shape {f_t.shape}")
    if f_t.shape[1] != n_clips * n_clips:
        raise DimensionError("IoU maps do not match the map size")
    x = ad.Variable(f_t.T) @ f_mu
    for layer in mlp[:-1]:
        x = ad.relu(layer(x))
    x = mlp[-1](x)
    return ad.mul(x, _mask_column(n_clips))


def cga_fuse(v_r: ad.Variable, v_mu: ad.Variable | None, fusion: FusionParams, n_clips: int) -> ad.Variable:
    x = v_r if v_mu is None else v_r + v_mu
    hidden = ad.relu(x @ fusion.w_f + fusion.b_f)
    return ad.mul(hidden @ fusion.w_ff + fusion.b_ff, _mask_column(n_clips))


# ---------------------------------------------------------------------------


@dataclass
class SampleOutputs:
    """Per-sample forward results restricted to the valid cells."""

    s_r: ad.Variable
    s_c: ad.Variable
    gt_moment: ad.Variable
    q_c: ad.Variable
    q_c_aux: ad.Variable | None
    aux_moments: ad.Variable | None


class ACNet:
    def __init__(self, config: TrainConfig, d_v: int, d_s: int, params: "OrderedDict[str, ad.Variable] | None" = None):
        self.config = config
        self.d_v = d_v
        self.d_s = d_s
        self.params = params if params is not None else init_params(config, d_v, d_s)
        self._bind()

    def _bind(self) -> None:
        p, cfg = self.params, self.config
        self.convs = [ConvLayer(p[f"conv{k}.weight"], p[f"conv{k}.bias"], cfg.kernel)
                      for k in range(cfg.conv_layers)]
        self.proj = {name: Linear(p[f"proj.{name}.weight"], p[f"proj.{name}.bias"])
                     for name in ("v_r", "q_r", "v_c", "q_c")}
        self.attention = AttentionParams(
            [p[f"mha.head{h}.wq"] for h in range(cfg.heads)],
            [p[f"mha.head{h}.wk"] for h in range(cfg.heads)],
            [p[f"mha.head{h}.wv"] for h in range(cfg.heads)],
            p["mha.wo"],
        )
        self.fusion = FusionParams(
            [Linear(p[f"cga.mlp{k}.weight"], p[f"cga.mlp{k}.bias"]) for k in range(cfg.mlp_depth + 1)],
            p["ffn.w_f"], p["ffn.b_f"], p["ffn.w_ff"], p["ffn.b_ff"],
        )

    def forward(self, sample, use_cga: bool | None = None) -> SampleOutputs:
        """``sample`` is a :class:`acnet.data.PreparedSample`."""
        cfg = self.config
        use_cga = cfg.use_cga if use_cga is None else use_cga
        n = sample.n_clips
        if n != cfg.n_clips:
            raise DimensionError(f"sample has {n} clips, model expects {cfg.n_clips}")
        x = ad.Variable(sample.pooled)
        for layer in self.convs:
            x = conv_map(x, layer, n)
        feats = project_features(TemporalMap2D(n, x), sample.query, sample.aux_embs, self.proj)
        v_mu = None
        if use_cga:
            f_mu = cga_relations(feats.q_r_aux, feats.q_r, self.attention)
            if f_mu is not None:
                v_mu = cga_project(f_mu, sample.aux_maps, self.fusion.mlp, n)
        v_r_prime = cga_fuse(feats.v_r.values, v_mu, self.fusion, n)
        cells = valid_cells(n)
        v_c = feats.v_c.values
        aux_moments = None
        if feats.n_aux:
            aux_moments = ad.gather_rows(v_c, sample.aux_cells)
        return SampleOutputs(
            s_r=score_regression(feats.q_r, ad.gather_rows(v_r_prime, cells)),
            s_c=score_contrastive(feats.q_c, ad.gather_rows(v_c, cells)),
            gt_moment=ad.gather_rows(v_c, [sample.gt_cell]),
            q_c=feats.q_c,
            q_c_aux=feats.q_c_aux,
            aux_moments=aux_moments,
        )


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: TrainConfig, d_v: int, d_s: int) -> "OrderedDict[str, ad.Variable]":
    """Uniform(+-sqrt(1/fan_in)) initialisation, deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    d_n, heads, k = config.d_n, config.heads, config.kernel
    if d_n % heads:
        raise ConfigError(f"d_n={d_n} is not divisible by heads={heads}")
    d_m = d_n // heads
    shapes: list[tuple[str, int, tuple[int, int]]] = []
    for layer in range(config.conv_layers):
        fan = k * k * d_v
        shapes += [(f"conv{layer}.weight", fan, (fan, d_v)), (f"conv{layer}.bias", fan, (1, d_v))]
    for name, d_in in (("v_r", d_v), ("q_r", d_s), ("v_c", d_v), ("q_c", d_s)):
        shapes += [(f"proj.{name}.weight", d_in, (d_in, d_n)), (f"proj.{name}.bias", d_in, (1, d_n))]
    for h in range(heads):
        for w in ("wq", "wk", "wv"):
            shapes.append((f"mha.head{h}.{w}", d_n, (d_n, d_m)))
    shapes.append(("mha.wo", d_n, (d_n, d_n)))
    for layer in range(config.mlp_depth + 1):
        shapes += [(f"cga.mlp{layer}.weight", d_n, (d_n, d_n)), (f"cga.mlp{layer}.bias", d_n, (1, d_n))]
    shapes += [("ffn.w_f", d_n, (d_n, d_n)), ("ffn.b_f", d_n, (1, d_n)),
               ("ffn.w_ff", d_n, (d_n, d_n)), ("ffn.b_ff", d_n, (1, d_n))]
    return OrderedDict(
        (name, ad.Variable(_uniform(rng, fan, shape), requires_grad=True, name=name))
        for name, fan, shape in shapes
    )
