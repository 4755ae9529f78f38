"""Twin-tower siamese model over paired audio/geophone spectrograms.

Each modality gets its own encoder; a record's joint embedding is the
concatenation [audio_embedding, geophone_embedding]. The two records of
a training pair run through the *same* encoders (the same parameter
tensors, so weight sharing falls out of ordinary gradient accumulation):
at inference as one stacked batch split by a row slice, during training
as twin passes that replay the rng so dropout masks match across sides.

Two encoder families are provided with matched interfaces:

  cnn   4x (conv -> relu -> batchnorm -> maxpool -> dropout), dense head
  lstm  3 stacked recurrent layers with dropout/batchnorm between them,
        last hidden state, two linear maps

Both consume (999, 50) log-mel spectrograms and emit a fixed-width
embedding (64 per modality for cnn, 40 for lstm).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

INPUT_FRAMES = 999
INPUT_BANDS = 50
VARIANTS = ("cnn", "lstm")

CNN_EMBEDDING = 64
LSTM_EMBEDDING = 40


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Conv2dLayer:
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator):
        fan_in = in_ch * kernel * kernel
        limit = np.sqrt(6.0 / fan_in)
        self.w = ad.Tensor(
            rng.uniform(-limit, limit, (out_ch, in_ch, kernel, kernel)).astype(np.float32),
            requires_grad=True,
        )
        self.b = ad.Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)

    def forward(self, x, mode, rng):
        return ad.conv2d(x, self.w, self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


class DenseLayer:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, scale: float = 1.0):
        limit = scale * np.sqrt(6.0 / (in_dim + out_dim))
        self.w = ad.Tensor(
            rng.uniform(-limit, limit, (in_dim, out_dim)).astype(np.float32),
            requires_grad=True,
        )
        self.b = ad.Tensor(np.zeros(out_dim, dtype=np.float32), requires_grad=True)

    def forward(self, x, mode, rng):
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


class BatchNormLayer:
    def __init__(self, n_features: int, channel_axis: int = 1):
        self.gamma = ad.Tensor(np.ones(n_features, dtype=np.float32), requires_grad=True)
        self.beta = ad.Tensor(np.zeros(n_features, dtype=np.float32), requires_grad=True)
        self.state = ad.BatchNormState.create(n_features)
        self.channel_axis = channel_axis

    def forward(self, x, mode, rng):
        return ad.batchnorm(x, self.gamma, self.beta, self.state, mode, self.channel_axis)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}


class DropoutLayer:
    def __init__(self, rate: float):
        self.rate = rate

    def forward(self, x, mode, rng):
        return ad.dropout(x, self.rate, mode, rng)

    def params(self):
        return {}


class ReluLayer:
    def forward(self, x, mode, rng):
        return ad.relu(x)

    def params(self):
        return {}


class MaxPoolLayer:
    def forward(self, x, mode, rng):
        return ad.maxpool2d(x)

    def params(self):
        return {}


class FlattenLayer:
    def forward(self, x, mode, rng):
        b = x.shape[0]
        n = int(np.prod(x.shape[1:]))
        return ad.reshape(x, (b, n))

    def params(self):
        return {}


class LstmLayer:
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        k = 1.0 / np.sqrt(hidden)
        self.wx = ad.Tensor(
            rng.uniform(-k, k, (in_dim, 4 * hidden)).astype(np.float32), requires_grad=True
        )
        self.wh = ad.Tensor(
            rng.uniform(-k, k, (hidden, 4 * hidden)).astype(np.float32), requires_grad=True
        )
        bias = np.zeros(4 * hidden, dtype=np.float32)
        bias[hidden : 2 * hidden] = 1.0  # open the forget gate at the start
        self.b = ad.Tensor(bias, requires_grad=True)
        self.hidden = hidden

    def forward(self, x, mode, rng):
        return ad.lstm_layer(x, self.wx, self.wh, self.b)

    def params(self):
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


class LastStepLayer:
    """Take the final timestep of a (B, T, H) sequence -> (B, H)."""

    def forward(self, x, mode, rng):
        b, t, h = x.shape
        return ad.reshape(ad.slice_axis(x, 1, t - 1, t), (b, h))

    def params(self):
        return {}


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------


class Encoder:
    """An ordered stack of named layers mapping a spectrogram batch to an
    embedding batch."""

    def __init__(self, layers: list[tuple[str, object]], embedding_dim: int):
        self.layers = layers
        self.embedding_dim = embedding_dim

    def forward(self, x: ad.Tensor, mode: str, rng: np.random.Generator | None) -> ad.Tensor:
        for _, layer in self.layers:
            x = layer.forward(x, mode, rng)
        return x

    def params(self) -> dict[str, ad.Tensor]:
        out = {}
        for name, layer in self.layers:
            for pname, p in layer.params().items():
                out[f"{name}.{pname}"] = p
        return out

    def bn_states(self) -> dict[str, ad.BatchNormState]:
        return {
            name: layer.state
            for name, layer in self.layers
            if isinstance(layer, BatchNormLayer)
        }


CNN_DROPOUT = 0.25
LSTM_DROPOUT = 0.2

# The embedding heads start 20x smaller than plain Xavier so initial pair
# distances land near the margin instead of an order of magnitude above it;
# otherwise early optimizer steps go into deflating the embedding norm
# rather than separating the classes.
HEAD_INIT_SCALE = 0.05

# (out_channels, kernel) per conv block
CNN_BLOCK_PLAN = ((8, 5), (16, 3), (32, 3), (32, 3))
LSTM_WIDTH_PLAN = (400, 200, 100)


def cnn_spatial_plan(frames: int = INPUT_FRAMES, bands: int = INPUT_BANDS):
    """Spatial size after each conv block (same conv, then 2x2 floor pool)."""
    h, w = frames, bands
    sizes = []
    for _ in CNN_BLOCK_PLAN:
        h, w = h // 2, w // 2
        sizes.append((h, w))
    return sizes


def build_cnn_encoder(
    rng: np.random.Generator,
    frames: int = INPUT_FRAMES,
    bands: int = INPUT_BANDS,
    embedding_dim: int = CNN_EMBEDDING,
) -> Encoder:
    layers: list[tuple[str, object]] = []
    in_ch = 1
    for k, (out_ch, kernel) in enumerate(CNN_BLOCK_PLAN, start=1):
        layers.append((f"block{k}.conv", Conv2dLayer(in_ch, out_ch, kernel, rng)))
        layers.append((f"block{k}.relu", ReluLayer()))
        layers.append((f"block{k}.bn", BatchNormLayer(out_ch, channel_axis=1)))
        layers.append((f"block{k}.pool", MaxPoolLayer()))
        layers.append((f"block{k}.drop", DropoutLayer(CNN_DROPOUT)))
        in_ch = out_ch
    h, w = cnn_spatial_plan(frames, bands)[-1]
    flat = in_ch * h * w
    if flat <= 0:
        raise ConfigError(f"input {frames}x{bands} collapses to nothing after pooling")
    layers.append(("head.flatten", FlattenLayer()))
    layers.append(("head.dense", DenseLayer(flat, embedding_dim, rng, scale=HEAD_INIT_SCALE)))
    return Encoder(layers, embedding_dim)


def build_lstm_encoder(
    rng: np.random.Generator,
    frames: int = INPUT_FRAMES,
    bands: int = INPUT_BANDS,
    embedding_dim: int = LSTM_EMBEDDING,
) -> Encoder:
    layers: list[tuple[str, object]] = []
    in_dim = bands
    for k, width in enumerate(LSTM_WIDTH_PLAN, start=1):
        layers.append((f"rec{k}.lstm", LstmLayer(in_dim, width, rng)))
        if k < len(LSTM_WIDTH_PLAN):
            layers.append((f"rec{k}.drop", DropoutLayer(LSTM_DROPOUT)))
            layers.append((f"rec{k}.bn", BatchNormLayer(width, channel_axis=2)))
        in_dim = width
    layers.append(("head.last", LastStepLayer()))
    layers.append(("head.dense1", DenseLayer(in_dim, 50, rng)))
    layers.append(("head.dense2", DenseLayer(50, embedding_dim, rng, scale=HEAD_INIT_SCALE)))
    return Encoder(layers, embedding_dim)


# ---------------------------------------------------------------------------
# siamese wrapper
# ---------------------------------------------------------------------------


class SiameseModel:
    def __init__(
        self,
        variant: str,
        audio_encoder: Encoder,
        geo_encoder: Encoder,
        margin: float = 1.0,
        frames: int = INPUT_FRAMES,
        bands: int = INPUT_BANDS,
    ):
        if variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if margin <= 0:
            raise ConfigError(f"margin must be positive, got {margin}")
        self.variant = variant
        self.audio_encoder = audio_encoder
        self.geo_encoder = geo_encoder
        self.margin = margin
        self.frames = frames
        self.bands = bands

    @classmethod
    def build(
        cls,
        variant: str = "cnn",
        seed: int = 0,
        margin: float = 1.0,
        frames: int = INPUT_FRAMES,
        bands: int = INPUT_BANDS,
    ) -> "SiameseModel":
        if variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
        rng = np.random.default_rng(seed)
        if variant == "cnn":
            audio = build_cnn_encoder(rng, frames, bands)
            geo = build_cnn_encoder(rng, frames, bands)
        else:
            audio = build_lstm_encoder(rng, frames, bands)
            geo = build_lstm_encoder(rng, frames, bands)
        return cls(variant, audio, geo, margin, frames, bands)

    @property
    def embedding_dim(self) -> int:
        """Width of the joint embedding (audio block first, then geophone)."""
        return self.audio_encoder.embedding_dim + self.geo_encoder.embedding_dim

    def params(self) -> dict[str, ad.Tensor]:
        out = {}
        for pname, p in self.audio_encoder.params().items():
            out[f"audio.{pname}"] = p
        for pname, p in self.geo_encoder.params().items():
            out[f"geo.{pname}"] = p
        return out

    def bn_states(self) -> dict[str, ad.BatchNormState]:
        out = {}
        for name, s in self.audio_encoder.bn_states().items():
            out[f"audio.{name}"] = s
        for name, s in self.geo_encoder.bn_states().items():
            out[f"geo.{name}"] = s
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def cast(self, dtype) -> "SiameseModel":
        """In-place dtype change of every parameter and running statistic.
        Mainly for float64 gradient checking."""
        for p in self.params().values():
            p.data = p.data.astype(dtype)
        for s in self.bn_states().values():
            s.running_mean = s.running_mean.astype(dtype)
            s.running_var = s.running_var.astype(dtype)
        return self

    def _param_dtype(self):
        return next(iter(self.params().values())).dtype

    def _check_features(self, arr: np.ndarray, what: str) -> np.ndarray:
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[1:] != (self.frames, self.bands):
            raise ShapeError(
                f"{what} batch must be (B, {self.frames}, {self.bands}), got {arr.shape}"
            )
        if arr.shape[0] == 0:
            raise ShapeError(f"{what} batch is empty")
        return arr.astype(self._param_dtype(), copy=False)

    def embed(
        self,
        audio: np.ndarray,
        geo: np.ndarray,
        mode: str = "infer",
        rng: np.random.Generator | None = None,
    ) -> ad.Tensor:
        """Joint embeddings for a batch of records -> (B, embedding_dim)."""
        audio = self._check_features(audio, "audio")
        geo = self._check_features(geo, "geophone")
        if audio.shape[0] != geo.shape[0]:
            raise ShapeError(
                f"modalities disagree on batch size: {audio.shape[0]} vs {geo.shape[0]}"
            )
        if mode == "train" and rng is None:
            raise ConfigError("train mode needs an rng for dropout")
        xa = ad.Tensor(audio)
        xg = ad.Tensor(geo)
        if self.variant == "cnn":
            b = audio.shape[0]
            xa = ad.reshape(xa, (b, 1, self.frames, self.bands))
            xg = ad.reshape(xg, (b, 1, self.frames, self.bands))
        fa = self.audio_encoder.forward(xa, mode, rng)
        fg = self.geo_encoder.forward(xg, mode, rng)
        return ad.concat([fa, fg], axis=1)

    def pair_distances(
        self,
        audio1: np.ndarray,
        geo1: np.ndarray,
        audio2: np.ndarray,
        geo2: np.ndarray,
        mode: str = "infer",
        rng: np.random.Generator | None = None,
    ) -> ad.Tensor:
        """Distances for B pairs through the shared encoders.

        In train mode the two sides run as twin forward passes with the rng
        state replayed, so both draw identical dropout masks. Untied masks
        put noise into every distance (an input paired with itself would sit
        at D > 0, off the loss's zero point) and at small step budgets that
        noise drowns the class signal. Inference has no dropout, so both
        sides go through one stacked pass and a row slice splits them.
        """
        b = np.asarray(audio1).shape[0]
        if mode == "train":
            if rng is None:
                raise ConfigError("train mode needs an rng for dropout")
            mark = rng.bit_generator.state
            f1 = self.embed(audio1, geo1, mode, rng)
            rng.bit_generator.state = mark
            f2 = self.embed(audio2, geo2, mode, rng)
        else:
            audio = np.concatenate([audio1, audio2], axis=0)
            geo = np.concatenate([geo1, geo2], axis=0)
            both = self.embed(audio, geo, mode, rng)
            f1 = ad.slice_axis(both, 0, 0, b)
            f2 = ad.slice_axis(both, 0, b, 2 * b)
        return ad.euclidean_distance(f1, f2)

    def pair_loss(
        self,
        audio1: np.ndarray,
        geo1: np.ndarray,
        audio2: np.ndarray,
        geo2: np.ndarray,
        indicator: np.ndarray,
        mode: str = "train",
        rng: np.random.Generator | None = None,
    ) -> tuple[ad.Tensor, np.ndarray]:
        """Contrastive loss over a combo batch; also returns the distances."""
        d = self.pair_distances(audio1, geo1, audio2, geo2, mode, rng)
        loss = ad.contrastive_loss(d, indicator, self.margin)
        return loss, d.data.copy()

    def descriptor(self) -> dict:
        return {
            "kind": "siamese-pair-embedding",
            "variant": self.variant,
            "margin": self.margin,
            "frames": self.frames,
            "bands": self.bands,
            "embedding_dim": self.embedding_dim,
        }


def classify_distance(d, threshold: float):
    """Similar iff distance is strictly below the threshold; the boundary
    counts as dissimilar. Works on scalars and arrays."""
    return np.asarray(d) < threshold
