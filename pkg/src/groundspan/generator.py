"""Encoder-decoder generator with hand-written reverse-mode gradients.

Prior draws ``theta0`` pass through an SELU encoder into a Gaussian latent
layer (mean and log-variance heads), a reparameterized sample
``z = mu + exp(logvar / 2) * eps`` is taken, and an SELU decoder maps ``z`` to
circuit angles. Both output layers are affine.
"""
import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .exceptions import ContractError, MissingCacheError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def selu(x):
    x = np.asarray(x, dtype=float)
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_grad(x):
    x = np.asarray(x, dtype=float)
    return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


@dataclass(frozen=True)
class NetworkShape:
    n_params: int
    encoder: tuple
    latent_dim: int
    decoder: tuple

    def __post_init__(self):
        object.__setattr__(self, "encoder", tuple(int(w) for w in self.encoder))
        object.__setattr__(self, "decoder", tuple(int(w) for w in self.decoder))
        for name in ("n_params", "latent_dim"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if any(w <= 0 for w in self.encoder + self.decoder):
            raise ValueError("hidden widths must be positive")

    @property
    def encoder_dims(self):
        return (self.n_params,) + self.encoder + (2 * self.latent_dim,)

    @property
    def decoder_dims(self):
        return (self.latent_dim,) + self.decoder + (self.n_params,)

    def to_dict(self):
        return {
            "n_params": self.n_params,
            "encoder": list(self.encoder),
            "latent_dim": self.latent_dim,
            "decoder": list(self.decoder),
        }


@dataclass
class GeneratorParams:
    """Weights ``W`` of shape (fan_in, fan_out) and biases, encoder layers first."""

    shape: NetworkShape
    weights: list
    biases: list

    @property
    def n_encoder(self):
        return len(self.shape.encoder_dims) - 1

    def arrays(self):
        return self.weights + self.biases

    def copy(self):
        return GeneratorParams(self.shape, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return GeneratorParams(
            self.shape, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def n_weights(self):
        return sum(a.size for a in self.arrays())


def _layer_dims(shape):
    enc, dec = shape.encoder_dims, shape.decoder_dims
    return list(zip(enc[:-1], enc[1:])) + list(zip(dec[:-1], dec[1:]))


def init_params(shape, seed, output_scale=1.0):
    """Gaussian weights with variance 1/fan_in, zero biases.

    ``output_scale`` multiplies the decoder's last layer, so the initial
    angles have standard deviation of about ``output_scale``.
    """
    rng = substream(seed, "generator-init")
    weights, biases = [], []
    for fan_in, fan_out in _layer_dims(shape):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    weights[-1] *= output_scale
    return GeneratorParams(shape, weights, biases)


def _mlp(x, weights, biases):
    """SELU hidden layers, affine last layer; returns output and per-layer (input, preactivation)."""
    cache = []
    h = x
    for k, (w, b) in enumerate(zip(weights, biases)):
        a = h @ w + b
        cache.append((h, a))
        h = selu(a) if k < len(weights) - 1 else a
    return h, cache


def _mlp_backward(dout, weights, cache):
    dws, dbs = [], []
    g = dout
    for k in range(len(weights) - 1, -1, -1):
        h, a = cache[k]
        if k < len(weights) - 1:
            g = g * selu_grad(a)
        dws.append(h.T @ g)
        dbs.append(g.sum(axis=0))
        g = g @ weights[k].T
    return dws[::-1], dbs[::-1], g


@dataclass
class LatentSample:
    mu: np.ndarray
    logvar: np.ndarray
    eps: np.ndarray

    @property
    def z(self):
        return self.mu + np.exp(0.5 * self.logvar) * self.eps


@dataclass
class ForwardCache:
    latent: LatentSample
    encoder: list = field(repr=False)
    decoder: list = field(repr=False)


def _as_batch(x, width, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{name} must have {width} columns, got shape {x.shape}")
    return x


def _encode(params, theta0, eps):
    shape = params.shape
    theta0 = _as_batch(theta0, shape.n_params, "theta0")
    eps = _as_batch(eps, shape.latent_dim, "eps")
    if eps.shape[0] != theta0.shape[0]:
        raise ValueError("theta0 and eps must have the same number of rows")
    k = params.n_encoder
    out, cache = _mlp(theta0, params.weights[:k], params.biases[:k])
    d = shape.latent_dim
    return LatentSample(out[:, :d], out[:, d:], eps), cache


def _decode(params, z):
    z = _as_batch(z, params.shape.latent_dim, "z")
    k = params.n_encoder
    return _mlp(z, params.weights[k:], params.biases[k:])


def encode(params, theta0, eps):
    """Latent sample for each row of ``theta0``, using the given standard-normal ``eps``."""
    return _encode(params, theta0, eps)[0]


def decode(params, z):
    """Circuit angles for latent vectors ``z``; the last layer is affine."""
    return _decode(params, z)[0]


def forward(params, theta0, eps):
    """Circuit angles of shape (batch, n_params) plus the cache needed by ``backward``."""
    latent, enc_cache = _encode(params, theta0, eps)
    theta, dec_cache = _decode(params, latent.z)
    return theta, ForwardCache(latent, enc_cache, dec_cache)


def backward(params, cache, dtheta, dmu=None, dlogvar=None):
    """Gradient of the loss w.r.t. every weight and bias, given dL/dtheta.

    ``dmu`` and ``dlogvar`` add direct loss terms on the latent heads; the
    training objective has none, so they default to zero.
    """
    if cache is None:
        raise MissingCacheError("backward needs the cache of a forward pass")
    lat = cache.latent
    dtheta = np.asarray(dtheta, dtype=float)
    if dtheta.shape != (lat.mu.shape[0], params.shape.n_params):
        raise ValueError(f"dtheta has shape {dtheta.shape}, expected {(lat.mu.shape[0], params.shape.n_params)}")
    k = params.n_encoder
    dw_dec, db_dec, dz = _mlp_backward(dtheta, params.weights[k:], cache.decoder)
    z = lat.z
    gmu = dz + (0.0 if dmu is None else dmu)
    glogvar = dz * 0.5 * (z - lat.mu) + (0.0 if dlogvar is None else dlogvar)
    dw_enc, db_enc, _ = _mlp_backward(np.concatenate([gmu, glogvar], axis=1), params.weights[:k], cache.encoder)
    return GeneratorParams(params.shape, dw_enc + dw_dec, db_enc + db_dec)


def sample_inputs(shape, batch, rng):
    """Prior draws theta0 ~ N(0, I) and latent noise eps ~ N(0, I)."""
    theta0 = rng.standard_normal((batch, shape.n_params))
    eps = rng.standard_normal((batch, shape.latent_dim))
    return theta0, eps


def generate(params, count, seed, label="generate"):
    """Deterministic batch of ``count`` circuit-parameter vectors."""
    rng = substream(seed, label)
    theta0, eps = sample_inputs(params.shape, int(count), rng)
    if count == 0:
        return np.zeros((0, params.shape.n_params))
    theta, _ = forward(params, theta0, eps)
    return theta


# ---------------------------------------------------------------------------
# checkpoints

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def write_npz(path, arrays):
    """``np.savez`` equivalent with fixed zip timestamps, so equal content gives equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, value in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(value), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def save_checkpoint(path, params, seed, extra=None, meta=None):
    """Write all weight tensors, the network shape header, the seed and optional extra arrays."""
    header = {"shape": params.shape.to_dict(), "seed": int(seed), "meta": meta or {}}
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    for name, value in (extra or {}).items():
        arrays[f"x_{name}"] = value
    write_npz(path, arrays)


def load_checkpoint(path):
    """Return (params, seed, extra arrays, meta dict)."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        sd = header["shape"]
        shape = NetworkShape(sd["n_params"], sd["encoder"], sd["latent_dim"], sd["decoder"])
        n_layers = len(_layer_dims(shape))
        weights = [data[f"W{i}"].copy() for i in range(n_layers)]
        biases = [data[f"b{i}"].copy() for i in range(n_layers)]
        extra = {k[2:]: data[k].copy() for k in data.files if k.startswith("x_")}
    for w, (fan_in, fan_out) in zip(weights, _layer_dims(shape)):
        if w.shape != (fan_in, fan_out):
            raise ContractError(f"checkpoint weight of shape {w.shape} does not match ({fan_in}, {fan_out})")
    return GeneratorParams(shape, weights, biases), header["seed"], extra, header.get("meta", {})
