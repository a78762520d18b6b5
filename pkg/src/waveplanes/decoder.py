"""
Learned color-basis decoder

A small ReLU network maps the unit view direction to three basis vectors
(R, G, B) of the fused-feature length; color is the sigmoid of each basis dot
product with the feature. Density is the softplus of the feature's dot product
with one direction-independent basis vector.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .autodiff import GradientTape

logger = logging.getLogger(__name__)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class ColorBasisDecoder:
    """Direction-to-basis network plus density basis"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    density_basis: np.ndarray

    def __post_init__(self):
        if not self.weights:
            raise ValueError("Decoder needs at least one weight matrix")
        if len(self.weights) != len(self.biases):
            raise ValueError("Decoder needs one bias per weight matrix")
        if self.weights[0].shape[0] != 3:
            raise ValueError(f"First layer must take a 3-D direction, got {self.weights[0].shape}")
        if self.weights[-1].shape[1] != 3 * self.feature_dim:
            raise ValueError(
                f"Last layer width {self.weights[-1].shape[1]} does not match 3 x feature length {self.feature_dim}"
            )

    @property
    def feature_dim(self) -> int:
        return self.density_basis.shape[0]

    @property
    def layers(self) -> int:
        return len(self.weights)

    @classmethod
    def initialize(
        cls,
        feature_dim: int,
        layers: int = 3,
        width: int = 64,
        seed: int = 0,
        dtype=np.float32,
    ) -> "ColorBasisDecoder":
        """Glorot-uniform weights, zero biases, small normal density basis"""
        if layers < 2:
            raise ValueError(f"Decoder needs at least 2 layers, got {layers}")
        rng = np.random.default_rng(seed)
        dims = [3] + [width] * (layers - 1) + [3 * feature_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        density_basis = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=feature_dim).astype(dtype)
        return cls(weights=weights, biases=biases, density_basis=density_basis)

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"decoder.w{i}", w
            yield f"decoder.b{i}", b
        yield "decoder.density_basis", self.density_basis

    def parameter_names(self) -> List[str]:
        return [name for name, _ in self.named_parameters()]

    def copy(self) -> "ColorBasisDecoder":
        return ColorBasisDecoder(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            density_basis=self.density_basis.copy(),
        )

    def astype(self, dtype) -> "ColorBasisDecoder":
        return ColorBasisDecoder(
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
            density_basis=self.density_basis.astype(dtype),
        )

    def basis(self, directions: np.ndarray):
        """
        Color basis vectors per direction

        Args:
            directions: (R, 3) unit directions

        Returns:
            (basis (R, 3, F), vjp) where vjp maps a basis cotangent to
            (weight grads, bias grads)
        """
        activations = [np.asarray(directions, dtype=np.float64)]
        pre_activations = []
        h = activations[0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre_activations.append(z)
            if i < self.layers - 1:
                h = np.maximum(z, 0.0)
                activations.append(h)
            else:
                h = z
        basis = h.reshape(h.shape[0], 3, self.feature_dim)

        def vjp(g_basis: np.ndarray):
            g = g_basis.reshape(g_basis.shape[0], -1)
            grad_w: List[np.ndarray] = [None] * self.layers
            grad_b: List[np.ndarray] = [None] * self.layers
            for i in range(self.layers - 1, -1, -1):
                grad_w[i] = activations[i].T @ g
                grad_b[i] = g.sum(axis=0)
                if i > 0:
                    g = (g @ self.weights[i].T) * (pre_activations[i - 1] > 0)
            return grad_w, grad_b

        return basis, vjp

    def forward(
        self,
        features: np.ndarray,
        directions: np.ndarray,
        tape: Optional[GradientTape] = None,
        prefix: str = "",
    ) -> np.ndarray:
        """
        Decode per-sample features of R rays

        Args:
            features: (R, n, F) fused features
            directions: (R, 3) unit view directions
            tape: Optional tape; records '<prefix>radiance' from '<prefix>features'
                  (flattened to (R*n, F)) and the decoder parameters

        Returns:
            (R, n, 4) radiance: rgb in [0, 1] then density >= 0
        """
        count, samples, _ = features.shape
        basis, basis_vjp = self.basis(directions)
        color_logits = np.einsum("rnf,rcf->rnc", features, basis)
        density_logits = features @ self.density_basis.astype(np.float64)
        rgb = expit(color_logits)
        sigma = softplus(density_logits)
        radiance = np.concatenate([rgb, sigma[..., None]], axis=-1)

        if tape is not None:
            names = self.parameter_names()

            def vjp(g: np.ndarray):
                g_logits = g[..., :3] * rgb * (1.0 - rgb)
                g_density = g[..., 3] * expit(density_logits)
                g_features = np.einsum("rnc,rcf->rnf", g_logits, basis) + g_density[..., None] * self.density_basis
                g_basis = np.einsum("rnc,rnf->rcf", g_logits, features)
                grad_w, grad_b = basis_vjp(g_basis)
                g_density_basis = np.einsum("rn,rnf->f", g_density, features)
                params = [grad for pair in zip(grad_w, grad_b) for grad in pair] + [g_density_basis]
                return (g_features.reshape(count * samples, -1),) + tuple(params)

            tape.record(f"{prefix}radiance", [f"{prefix}features"] + names, vjp)

        return radiance


def decode(decoder: ColorBasisDecoder, features: Sequence[float], direction: Sequence[float]) -> Tuple[np.ndarray, float]:
    """
    Decode one fused feature seen from one direction

    Returns:
        (rgb in [0, 1]^3, density >= 0)
    """
    f = np.asarray(features, dtype=np.float64)[None, None, :]
    d = np.asarray(direction, dtype=np.float64)[None, :]
    radiance = decoder.forward(f, d)[0, 0]
    return radiance[:3], float(radiance[3])
