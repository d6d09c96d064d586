from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from core.errors import NonFiniteError
from core.numerics import (
    LEAKY_SLOPE,
    ParameterSet,
    Tensor,
    add,
    elu,
    glorot,
    leaky_relu,
    matmul,
    mean,
    mul,
    reshape,
    softmax_masked,
    stack,
)
from core.streams_fusion import Sample, SampleBatch, collate, fuse

# --- CONFIGURATIONS ---
# Node order inside every snippet graph: query original/fused, exemplar original/fused
NODE_LABELS = ("qo", "qf", "eo", "ef")
QUERY_FUSED_NODE = 1
EXEMPLAR_FUSED_NODE = 3


# --- DATA STRUCTURES ---
@dataclass
class GatLayerParams:
    theta: Tensor  # D x D propagation weight (W' on the second layer)
    theta_source: Tensor  # D x H
    theta_target: Tensor  # D x H
    attn: Tensor  # H

    @property
    def attention_dim(self) -> int:
        return self.attn.shape[0]


@dataclass
class GatParams:
    layer1: GatLayerParams
    layer2: GatLayerParams
    residual_lambda: Tensor  # scalar


@dataclass
class DeconfoundedFeatures:
    query: Tensor  # (..., T, D)
    exemplar: Tensor  # (..., T, D)
    attention_summary: Tensor  # (..., 4, 4), layer-1 attention averaged over snippets
    snippet_attention: Tensor  # (..., T, 4, 4)


def init_gat_params(
    store: ParameterSet,
    rng: np.random.Generator,
    dim: int,
    attention_dim: int = 8,
    lambda_init: float = 0.5,
    prefix: str = "gat",
) -> GatParams:
    def layer(name: str, theta_name: str) -> GatLayerParams:
        return GatLayerParams(
            theta=store.add(f"{prefix}.{name}.{theta_name}", glorot(rng, (dim, dim))),
            theta_source=store.add(f"{prefix}.{name}.theta_s", glorot(rng, (dim, attention_dim))),
            theta_target=store.add(f"{prefix}.{name}.theta_t", glorot(rng, (dim, attention_dim))),
            attn=store.add(f"{prefix}.{name}.a", glorot(rng, (attention_dim,)).reshape(attention_dim)),
        )

    return GatParams(
        layer1=layer("layer1", "theta"),
        layer2=layer("layer2", "w_prime"),
        residual_lambda=store.add(f"{prefix}.lambda", np.array(lambda_init)),
    )


# --- OPERATIONS ---
def attention_coeffs(nodes: Tensor, params: GatLayerParams, slope: float = LEAKY_SLOPE) -> Tensor:
    """
    alpha[i, j] = softmax_j( a . LeakyReLU(Theta_s x_i + Theta_t x_j) ) over the fully
    connected snippet graph (self-loops included). ``nodes`` is (..., 4, D).
    """
    if not np.all(np.isfinite(nodes.data)):
        raise NonFiniteError("GAT node features contain non-finite values")
    n_nodes, hidden = nodes.shape[-2], params.attention_dim
    lead = nodes.shape[:-2]
    source = reshape(matmul(nodes, params.theta_source), lead + (n_nodes, 1, hidden))
    target = reshape(matmul(nodes, params.theta_target), lead + (1, n_nodes, hidden))
    pair = leaky_relu(add(source, target), slope)
    logits = reshape(matmul(pair, reshape(params.attn, (hidden, 1))), lead + (n_nodes, n_nodes))
    return softmax_masked(logits)


def gat_layer_with_attention(nodes: Tensor, params: GatLayerParams) -> Tuple[Tensor, Tensor]:
    alpha = attention_coeffs(nodes, params)
    return elu(matmul(alpha, matmul(nodes, params.theta))), alpha


def gat_layer(nodes: Tensor, params: GatLayerParams) -> Tensor:
    """out_i = ELU( sum_j alpha_ij Theta x_j )."""
    return gat_layer_with_attention(nodes, params)[0]


def snippet_nodes(query_original: Tensor, query_fused: Tensor, exemplar_original: Tensor, exemplar_fused: Tensor) -> Tensor:
    """Stacks the four (..., T, D) streams into per-snippet graphs of shape (..., T, 4, D)."""
    return stack([query_original, query_fused, exemplar_original, exemplar_fused], axis=-2)


def deconfound_nodes(nodes: Tensor, params: GatParams) -> DeconfoundedFeatures:
    first, alpha = gat_layer_with_attention(nodes, params.layer1)
    alpha_second = attention_coeffs(first, params.layer2)
    refined = elu(matmul(alpha_second, matmul(first, params.layer2.theta)))
    second = add(refined, mul(params.residual_lambda, first))
    return DeconfoundedFeatures(
        query=second[..., QUERY_FUSED_NODE, :],
        exemplar=second[..., EXEMPLAR_FUSED_NODE, :],
        attention_summary=mean(alpha, axis=-3),
        snippet_attention=alpha,
    )


def deconfound(sample: Union[Sample, SampleBatch], params: GatParams) -> DeconfoundedFeatures:
    """Two-layer GAT intervention; a single Sample is treated as a batch of one."""
    batch = collate([sample]) if isinstance(sample, Sample) else sample
    nodes = snippet_nodes(
        batch.query_original,
        fuse(batch.query_original, batch.query_mask),
        batch.exemplar_original,
        fuse(batch.exemplar_original, batch.exemplar_mask),
    )
    return deconfound_nodes(nodes, params)
