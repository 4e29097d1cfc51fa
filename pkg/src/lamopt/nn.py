"""Dense surrogate networks with hand-rolled reverse-mode gradients.

Five architectures share three dense blocks: an encoder compressing a
cell-density vector to a latent code, a feed-forward block mapping the
two load parameters to a latent code, and a decoder lifting a code back
to cell densities.

    ae      encoder -> decoder                 (reconstruction baseline)
    ffd     ff -> decoder                      (monolithic)
    effd    encoder and ff -> shared decoder   (monolithic, code matching)
    saeffd  stage I trains ae, stage II trains ff through the frozen decoder
    saeff   stage I trains ae, stage II fits ff to the encoder's codes

Hidden activations are rectifiers (latent codes included); layers that
emit densities end in a sigmoid so predictions stay inside (0, 1).
Reference layer widths are tied to the 160 x 80 grid (12,800 cells) and
shrink proportionally on smaller grids, with the latent width fixed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

ARCHITECTURES = ("ffd", "effd", "saeffd", "saeff", "ae")
PREDICTIVE_ARCHITECTURES = ("ffd", "saeffd", "saeff")
STAGED_ARCHITECTURES = ("saeffd", "saeff")

REFERENCE_CELLS = 12_800
LATENT_DIM = 25
ENCODER_HIDDEN = (200, 100)
DECODER_HIDDEN = (100, 200)
FF_HIDDEN = (50,)
MIN_HIDDEN = 8

# Parameter ranges of the load family, used to normalise inputs.
ETA_LOW = (0.0, 0.0)
ETA_SPAN = (2.3, 59.0)

MODEL_MAGIC = b"LAMOPTNN"
MODEL_VERSION = 1

_ACTIVATION_CODES = {"relu": 0, "sigmoid": 1, "identity": 2}
_ACTIVATION_NAMES = {code: name for name, code in _ACTIVATION_CODES.items()}
_BLOCK_ORDER = ("encoder", "ff", "decoder")


class ModelFormatError(ValueError):
    """Raised on bad magic, truncation, or version mismatch."""


@dataclass
class DenseLayer:
    """One affine map plus elementwise activation."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str

    def __post_init__(self):
        if self.activation not in _ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[1],):
            raise ValueError("weights must be (in, out) with matching biases")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def parameter_count(self) -> int:
        return self.weights.size + self.biases.size


def init_kaiming_uniform(in_dim: int, out_dim: int, activation: str, rng) -> DenseLayer:
    """Rectifier fan-in initialisation, bound sqrt(6 / in_dim)."""
    bound = np.sqrt(6.0 / in_dim)
    weights = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    bias_bound = 1.0 / np.sqrt(in_dim)
    biases = rng.uniform(-bias_bound, bias_bound, size=out_dim)
    return DenseLayer(weights, biases, activation)


def scaled_dim(reference_dim: int, n_cells: int) -> int:
    """Shrink a reference layer width to a smaller grid, floor 8."""
    return max(MIN_HIDDEN, (reference_dim * n_cells) // REFERENCE_CELLS)


def _make_block(dims, activations, rng) -> list[DenseLayer]:
    return [
        init_kaiming_uniform(d_in, d_out, act, rng)
        for d_in, d_out, act in zip(dims[:-1], dims[1:], activations)
    ]


@dataclass
class NetworkModel:
    """An architecture tag plus its instantiated blocks."""

    architecture: str
    n_cells: int
    latent_dim: int = LATENT_DIM
    encoder: list[DenseLayer] | None = None
    ff: list[DenseLayer] | None = None
    decoder: list[DenseLayer] | None = None
    eta_low: np.ndarray = field(default_factory=lambda: np.array(ETA_LOW))
    eta_span: np.ndarray = field(default_factory=lambda: np.array(ETA_SPAN))

    def blocks(self) -> dict[str, list[DenseLayer]]:
        present = {}
        for name in _BLOCK_ORDER:
            block = getattr(self, name)
            if block is not None:
                present[name] = block
        return present

    def normalise_eta(self, eta: np.ndarray) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        if eta.shape[1] != 2:
            raise ValueError(f"parameters must be (n, 2), got {eta.shape}")
        return (eta - self.eta_low) / self.eta_span


def build_model(architecture: str, n_cells: int, seed: int = 0) -> NetworkModel:
    """Instantiate an architecture's blocks for a given grid size.

    Blocks are initialised in a fixed order (encoder, ff, decoder) from
    a single seeded stream, so equal seeds give equal parameters.
    """
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}")
    if n_cells < 1:
        raise ValueError("n_cells must be positive")
    rng = np.random.default_rng(seed)
    enc_dims = [n_cells] + [scaled_dim(d, n_cells) for d in ENCODER_HIDDEN] + [LATENT_DIM]
    dec_dims = [LATENT_DIM] + [scaled_dim(d, n_cells) for d in DECODER_HIDDEN] + [n_cells]
    ff_dims = [2] + [scaled_dim(d, n_cells) for d in FF_HIDDEN] + [LATENT_DIM]

    model = NetworkModel(architecture=architecture, n_cells=n_cells)
    if architecture in ("ae", "effd", "saeffd", "saeff"):
        model.encoder = _make_block(enc_dims, ["relu"] * 3, rng)
    if architecture in ("ffd", "effd", "saeffd", "saeff"):
        model.ff = _make_block(ff_dims, ["relu"] * 2, rng)
    # every architecture carries a decoder; the code-fitting variant
    # predicts through its stage-I decoder even though stage II never
    # updates it
    model.decoder = _make_block(dec_dims, ["relu", "relu", "sigmoid"], rng)
    return model


def parameter_count(model: NetworkModel, blocks=None) -> int:
    """Total in*out + out over the selected (default all) blocks."""
    names = blocks if blocks is not None else model.blocks().keys()
    return sum(
        layer.parameter_count for name in names for layer in model.blocks()[name]
    )


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return expit(z)
    return z


def _activation_grad(z: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(float)
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(z)


def _forward_block(layers, x):
    """Run a block, returning the output and per-layer caches."""
    caches = []
    for layer in layers:
        z = x @ layer.weights + layer.biases
        out = _activate(z, layer.activation)
        caches.append((x, z, out))
        x = out
    return x, caches


def _backward_block(layers, caches, grad_out, grads=None):
    """Accumulate parameter gradients; returns the input gradient.

    ``grads`` maps id(layer) -> [grad_w, grad_b]; pass None to discard
    parameter gradients (frozen block) while still chaining upstream.
    """
    g = grad_out
    for layer, (x, z, out) in zip(reversed(layers), reversed(caches)):
        g = g * _activation_grad(z, out, layer.activation)
        if grads is not None:
            slot = grads[id(layer)]
            slot[0] += x.T @ g
            slot[1] += g.sum(axis=0)
        g = g @ layer.weights.T
    return g


def forward(model: NetworkModel, eta=None, theta_in=None) -> dict[str, np.ndarray]:
    """Inference pass producing whatever the architecture defines.

    Returns a dict with keys among alpha_ae, theta_ae, alpha_eta,
    theta_eta.  The encoder path needs ``theta_in``; the parametric
    path needs ``eta``.
    """
    out: dict[str, np.ndarray] = {}
    arch = model.architecture
    if arch in ("ae", "effd", "saeffd", "saeff") and theta_in is not None:
        theta_in = np.atleast_2d(np.asarray(theta_in, dtype=float))
        if theta_in.shape[1] != model.n_cells:
            raise ValueError(
                f"densities must be (n, {model.n_cells}), got {theta_in.shape}"
            )
        alpha_ae, _ = _forward_block(model.encoder, theta_in)
        out["alpha_ae"] = alpha_ae
        out["theta_ae"], _ = _forward_block(model.decoder, alpha_ae)
    if arch != "ae" and eta is not None:
        alpha_eta, _ = _forward_block(model.ff, model.normalise_eta(eta))
        out["alpha_eta"] = alpha_eta
        out["theta_eta"], _ = _forward_block(model.decoder, alpha_eta)
    if not out:
        raise ValueError(f"architecture {arch!r} received no usable inputs")
    return out


def predict_theta(model: NetworkModel, eta) -> np.ndarray:
    """Cell densities from load parameters alone.

    Only the parametric architectures support this; the encoder-input
    ones need ground-truth densities and are rejected.
    """
    if model.architecture not in PREDICTIVE_ARCHITECTURES:
        raise ValueError(
            f"architecture {model.architecture!r} cannot predict from parameters"
        )
    eta = np.asarray(eta, dtype=float)
    single = eta.ndim == 1
    theta = forward(model, eta=eta)["theta_eta"]
    return theta[0] if single else theta


def count_active_latent(model: NetworkModel, eta=None, theta_in=None) -> int:
    """Latent coordinates whose magnitude ever exceeds 1e-3.

    Codes come from the parametric branch when ``eta`` is given,
    otherwise from the encoder on ``theta_in``.
    """
    result = forward(model, eta=eta, theta_in=theta_in)
    codes = result.get("alpha_eta", result.get("alpha_ae"))
    return int(np.sum(np.abs(codes).max(axis=0) > 1e-3))


@dataclass(frozen=True)
class LossSettings:
    """Weights of the code-matching and sparsity terms."""

    omega_alpha: float = 1e-3
    omega_r: float = 1e-4
    omega_r_stage1: float = 1e-4
    omega_r_stage2: float | None = None

    def stage2_weight(self, architecture: str) -> float:
        if self.omega_r_stage2 is not None:
            return self.omega_r_stage2
        return 10.0 if architecture == "saeff" else 1e-4


def trainable_blocks(model: NetworkModel, stage: int | None) -> tuple[str, ...]:
    """Block names whose parameters the given stage updates."""
    arch = model.architecture
    if arch in STAGED_ARCHITECTURES:
        if stage == 1:
            return ("encoder", "decoder")
        if stage == 2:
            return ("ff",)
        raise ValueError(f"{arch!r} trains in stages 1 or 2, got {stage}")
    if stage is not None:
        raise ValueError(f"{arch!r} trains monolithically")
    if arch == "ae":
        return ("encoder", "decoder")
    if arch == "ffd":
        return ("ff", "decoder")
    return ("encoder", "ff", "decoder")


def _zero_grads(model, block_names):
    grads = {}
    for name in block_names:
        for layer in model.blocks()[name]:
            grads[id(layer)] = [np.zeros_like(layer.weights), np.zeros_like(layer.biases)]
    return grads


def _add_lasso(model, block_names, weight, grads, collect):
    """Add weight * sum|param| over the blocks; subgradient 0 at 0."""
    total = 0.0
    for name in block_names:
        for layer in model.blocks()[name]:
            total += np.abs(layer.weights).sum() + np.abs(layer.biases).sum()
            if grads is not None:
                slot = grads[id(layer)]
                slot[0] += weight * np.sign(layer.weights)
                slot[1] += weight * np.sign(layer.biases)
    collect["lasso"] = weight * total
    return collect["lasso"]


def loss_and_gradient(
    model: NetworkModel,
    eta_batch,
    theta_batch,
    settings: LossSettings = LossSettings(),
    stage: int | None = None,
    alpha_targets=None,
    compute_grads: bool = True,
):
    """Total loss, per-term breakdown, and parameter gradients.

    ``alpha_targets`` replaces the encoder pass in the code-fitting
    stage of the encoder-free parametric architecture (saeff stage 2),
    where the targets are precomputed from the frozen encoder.  The
    returned gradients map id(layer) -> [grad_w, grad_b] for exactly
    the stage's trainable blocks.
    """
    arch = model.architecture
    blocks = trainable_blocks(model, stage)
    n_cells = model.n_cells
    n_alpha = model.latent_dim
    grads = _zero_grads(model, blocks) if compute_grads else None
    terms: dict[str, float] = {}
    total = 0.0

    theta_batch = (
        None if theta_batch is None else np.atleast_2d(np.asarray(theta_batch, float))
    )
    batch = None

    def _discard_if_frozen(name):
        return grads if (compute_grads and name in blocks) else None

    # Reconstruction path: encoder -> decoder on ground-truth densities.
    need_ae = (arch in ("ae", "effd")) or (arch in STAGED_ARCHITECTURES and stage == 1)
    # Parametric path: ff (-> decoder) against densities or codes.
    need_eta = arch in ("ffd", "effd") or (arch in STAGED_ARCHITECTURES and stage == 2)

    alpha_ae = cache_enc = None
    if need_ae or (arch == "effd") or (arch == "saeff" and stage == 2 and alpha_targets is None):
        if theta_batch is None:
            raise ValueError("this loss needs ground-truth densities")
        batch = theta_batch.shape[0]
        alpha_ae, cache_enc = _forward_block(model.encoder, theta_batch)

    if need_ae:
        theta_ae, cache_dec = _forward_block(model.decoder, alpha_ae)
        residual = theta_ae - theta_batch
        terms["ae"] = float((residual**2).sum() / (batch * n_cells))
        total += terms["ae"]
        if compute_grads:
            g = 2.0 * residual / (batch * n_cells)
            g_alpha = _backward_block(
                model.decoder, cache_dec, g, _discard_if_frozen("decoder")
            )
            _backward_block(
                model.encoder, cache_enc, g_alpha, _discard_if_frozen("encoder")
            )

    if need_eta:
        if eta_batch is None:
            raise ValueError("this loss needs load parameters")
        eta_norm = model.normalise_eta(eta_batch)
        batch = eta_norm.shape[0]
        alpha_eta, cache_ff = _forward_block(model.ff, eta_norm)
        g_alpha_eta = np.zeros_like(alpha_eta) if compute_grads else None
        g_alpha_ae = None

        fit_codes = arch == "saeff" and stage == 2
        if fit_codes:
            targets = alpha_targets
            if targets is None:
                targets = alpha_ae
            targets = np.atleast_2d(np.asarray(targets, float))
            residual = alpha_eta - targets
            terms["alpha"] = float((residual**2).sum() / (batch * n_alpha))
            total += terms["alpha"]
            if compute_grads:
                g_alpha_eta += 2.0 * residual / (batch * n_alpha)
        else:
            if theta_batch is None:
                raise ValueError("this loss needs ground-truth densities")
            theta_eta, cache_dec_eta = _forward_block(model.decoder, alpha_eta)
            residual = theta_eta - theta_batch
            terms["eta"] = float((residual**2).sum() / (batch * n_cells))
            total += terms["eta"]
            if compute_grads:
                g = 2.0 * residual / (batch * n_cells)
                g_alpha_eta += _backward_block(
                    model.decoder, cache_dec_eta, g, _discard_if_frozen("decoder")
                )

        if arch == "effd":
            # code-matching term pulls both latent representations together
            scale = settings.omega_alpha * n_cells / n_alpha
            residual = alpha_eta - alpha_ae
            terms["alpha"] = float(scale * (residual**2).sum() / (batch * n_alpha))
            total += terms["alpha"]
            if compute_grads:
                g = 2.0 * scale * residual / (batch * n_alpha)
                g_alpha_eta += g
                g_alpha_ae = -g

        if compute_grads:
            _backward_block(model.ff, cache_ff, g_alpha_eta, _discard_if_frozen("ff"))
            if g_alpha_ae is not None:
                _backward_block(
                    model.encoder, cache_enc, g_alpha_ae, _discard_if_frozen("encoder")
                )

    # Sparsity over the stage's trainable parameters, scaled by the
    # input-to-parameter ratio.
    n_params = parameter_count(model, blocks)
    if arch in STAGED_ARCHITECTURES and stage == 2:
        lasso_scale = settings.stage2_weight(arch) * n_alpha / n_params
    elif arch in STAGED_ARCHITECTURES:
        lasso_scale = settings.omega_r_stage1 * n_cells / n_params
    else:
        lasso_scale = settings.omega_r * n_cells / n_params
    total += _add_lasso(model, blocks, lasso_scale, grads, terms)

    return total, terms, grads


def encode_dataset(model: NetworkModel, thetas) -> np.ndarray:
    """Latent codes of ground-truth densities under the current encoder."""
    codes, _ = _forward_block(model.encoder, np.atleast_2d(np.asarray(thetas, float)))
    return codes


def write_model(path, model: NetworkModel) -> None:
    blob = bytearray()
    blob += struct.pack(
        "<8sI8sII",
        MODEL_MAGIC,
        MODEL_VERSION,
        model.architecture.encode().ljust(8, b"\0"),
        model.n_cells,
        model.latent_dim,
    )
    blob += np.asarray(model.eta_low, dtype="<f8").tobytes()
    blob += np.asarray(model.eta_span, dtype="<f8").tobytes()
    present = model.blocks()
    blob += struct.pack("<B", len(present))
    for code, name in enumerate(_BLOCK_ORDER):
        if name not in present:
            continue
        layers = present[name]
        blob += struct.pack("<BI", code, len(layers))
        for layer in layers:
            blob += struct.pack(
                "<IIB", layer.in_dim, layer.out_dim, _ACTIVATION_CODES[layer.activation]
            )
            blob += layer.weights.astype("<f8").tobytes()
            blob += layer.biases.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def read_model(path) -> NetworkModel:
    blob = Path(path).read_bytes()
    head = struct.Struct("<8sI8sII")
    if len(blob) < head.size:
        raise ModelFormatError(f"{path}: truncated header")
    magic, version, arch_raw, n_cells, latent = head.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: version {version}, supported {MODEL_VERSION}")
    arch = arch_raw.rstrip(b"\0").decode()
    if arch not in ARCHITECTURES:
        raise ModelFormatError(f"{path}: unknown architecture {arch!r}")
    offset = head.size

    def take(count):
        nonlocal offset
        if offset + 8 * count > len(blob):
            raise ModelFormatError(f"{path}: truncated payload")
        out = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy()
        offset += 8 * count
        return out

    eta_low = take(2)
    eta_span = take(2)
    (n_blocks,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    model = NetworkModel(
        architecture=arch,
        n_cells=n_cells,
        latent_dim=latent,
        eta_low=eta_low,
        eta_span=eta_span,
    )
    for _ in range(n_blocks):
        if offset + 5 > len(blob):
            raise ModelFormatError(f"{path}: truncated block table")
        code, n_layers = struct.unpack_from("<BI", blob, offset)
        offset += 5
        if code >= len(_BLOCK_ORDER):
            raise ModelFormatError(f"{path}: unknown block code {code}")
        layers = []
        for _ in range(n_layers):
            if offset + 9 > len(blob):
                raise ModelFormatError(f"{path}: truncated layer header")
            d_in, d_out, act = struct.unpack_from("<IIB", blob, offset)
            offset += 9
            if act not in _ACTIVATION_NAMES:
                raise ModelFormatError(f"{path}: unknown activation code {act}")
            weights = take(d_in * d_out).reshape(d_in, d_out)
            biases = take(d_out)
            layers.append(DenseLayer(weights, biases, _ACTIVATION_NAMES[act]))
        setattr(model, _BLOCK_ORDER[code], layers)
    return model
