"""Noise predictors: the analytic mixture denoiser and a loadable tiny MLP.

Both expose predict_eps(x_t, t, schedule) -> eps_hat with x_t an (H, W, C)
float array and t a 1-based timestep.  The mixture denoiser is exact
(Bayes-optimal for its prior), which is what makes sampler behaviour
verifiable against closed-form moments; the MLP exists so externally
trained weights can be dropped in through a small binary format.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import decode_image, to_diffusion_domain
from .schedule import NoiseSchedule, ScheduleError

__all__ = [
    "GaussianMixturePrior",
    "MixtureComponent",
    "gmm_predict_eps",
    "gmm_posterior_x0",
    "GmmDenoiser",
    "load_prior",
    "prior_from_dict",
    "LoadedNet",
    "NetLayer",
    "net_predict_eps",
    "NetDenoiser",
    "load_net",
    "save_net",
]

_SIGMA_FLOOR = 1e-12
_NET_MAGIC = b"BDNET1\n"
_ACTIVATIONS = ("relu", "tanh", "identity")


# ----- Gaussian mixture prior -----


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray  # (H, W, C), diffusion domain
    sigma: float      # isotropic std dev of the component


@dataclass(frozen=True)
class GaussianMixturePrior:
    """Isotropic Gaussian mixture over images of one fixed shape."""

    components: tuple[MixtureComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        shape = self.components[0].mean.shape
        total = 0.0
        for comp in self.components:
            if comp.mean.shape != shape:
                raise ValueError("all component means must share one shape")
            if comp.sigma < 0.0:
                raise ValueError(f"sigma must be >= 0, got {comp.sigma}")
            if comp.weight <= 0.0:
                raise ValueError(f"weights must be positive, got {comp.weight}")
            total += comp.weight
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.components[0].mean.shape

    def mean_image(self) -> np.ndarray:
        """Analytic mixture mean, sum_i w_i mu_i."""
        return sum(c.weight * c.mean for c in self.components)

    def marginal_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel mean and variance of the mixture."""
        mean = self.mean_image()
        second = sum(
            c.weight * (c.mean**2 + max(c.sigma, _SIGMA_FLOOR) ** 2)
            for c in self.components
        )
        return mean, second - mean**2


def _posterior_terms(prior: GaussianMixturePrior, x_t: np.ndarray, ab: float):
    """Log responsibilities and per-component posterior means for x0 | x_t.

    Under the forward process x_t | x0 ~ N(sqrt(ab) x0, (1-ab) I) and
    component i ~ N(mu_i, s_i^2 I), the marginal of x_t under i is
    N(sqrt(ab) mu_i, (ab s_i^2 + 1 - ab) I); responsibilities use its
    log density summed over pixels, max-subtracted before exponentiation.
    """
    n = x_t.size
    root_ab = math.sqrt(ab)
    noise_var = 1.0 - ab

    def post_mean(comp: MixtureComponent, s2: float) -> np.ndarray:
        # conjugate posterior: precision 1/s2 + ab/(1-ab)
        post_var = 1.0 / (1.0 / s2 + ab / noise_var)
        return post_var * (comp.mean / s2 + root_ab * x_t / noise_var)

    if len(prior.components) == 1:
        comp = prior.components[0]
        s2 = max(comp.sigma, _SIGMA_FLOOR) ** 2
        return np.ones(1), [post_mean(comp, s2)]

    log_r = np.empty(len(prior.components))
    post_means = []
    for i, comp in enumerate(prior.components):
        s2 = max(comp.sigma, _SIGMA_FLOOR) ** 2
        marg_var = ab * s2 + noise_var
        resid = x_t - root_ab * comp.mean
        log_r[i] = (
            math.log(comp.weight)
            - 0.5 * n * math.log(2.0 * math.pi * marg_var)
            - 0.5 * float(np.vdot(resid, resid)) / marg_var
        )
        post_means.append(post_mean(comp, s2))
    log_r -= log_r.max()
    resp = np.exp(log_r)
    resp /= resp.sum()
    return resp, post_means


def gmm_posterior_x0(prior: GaussianMixturePrior, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """E[x0 | x_t] under the mixture prior (responsibility-weighted means)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != prior.shape:
        raise ValueError(f"x_t shape {x_t.shape} != prior shape {prior.shape}")
    ab = schedule.alpha_bar(t)
    if t < 1:
        raise ScheduleError("posterior needs t >= 1")
    if 1.0 - ab <= 0.0:
        raise ScheduleError(f"alpha_bar({t}) == 1: noiseless step is degenerate")
    resp, post_means = _posterior_terms(prior, x_t, ab)
    out = np.zeros_like(x_t)
    for r, m in zip(resp, post_means):
        out += r * m
    return out


def gmm_predict_eps(prior: GaussianMixturePrior, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Bayes-optimal noise estimate E[eps | x_t] for the mixture prior.

    eps_hat = (x_t - sqrt(abar_t) E[x0 | x_t]) / sqrt(1 - abar_t).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    ab = schedule.alpha_bar(t)
    x0 = gmm_posterior_x0(prior, x_t, t, schedule)
    return (x_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)


# ----- prior files -----


def _mean_array(value, shape: tuple[int, int, int], base: Path | None) -> np.ndarray:
    h, w, c = shape
    if isinstance(value, (int, float)):
        return np.full(shape, float(value), dtype=np.float64)
    if isinstance(value, (list, tuple)):
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != (c,):
            raise ValueError(
                f"per-channel mean needs {c} entries, got shape {arr.shape}"
            )
        return np.broadcast_to(arr, shape).astype(np.float64)
    if isinstance(value, str):
        path = Path(value)
        if base is not None and not path.is_absolute():
            path = base / path
        fmt = path.suffix.lstrip(".").lower()
        raster = decode_image(path.read_bytes(), fmt)
        img = to_diffusion_domain(raster)
        if img.shape != shape:
            raise ValueError(
                f"mean image {path} has shape {img.shape}, prior needs {shape}"
            )
        return img
    raise ValueError(f"cannot interpret mixture mean {value!r}")


@dataclass(frozen=True)
class _PriorSpec:
    """Shape-agnostic prior description from a JSON file."""

    components: tuple[dict, ...]
    base_dir: Path | None = None

    def materialize(self, shape: tuple[int, int, int]) -> GaussianMixturePrior:
        comps = tuple(
            MixtureComponent(
                weight=float(c["weight"]),
                mean=_mean_array(c["mean_path_or_const"], shape, self.base_dir),
                sigma=float(c["sigma"]),
            )
            for c in self.components
        )
        return GaussianMixturePrior(comps)


def prior_from_dict(doc: dict, base_dir: Path | None = None) -> _PriorSpec:
    comps = doc.get("components")
    if not comps:
        raise ValueError("prior file needs a non-empty 'components' list")
    for c in comps:
        for key in ("weight", "mean_path_or_const", "sigma"):
            if key not in c:
                raise ValueError(f"prior component missing {key!r}")
    return _PriorSpec(components=tuple(comps), base_dir=base_dir)


def load_prior(path) -> _PriorSpec:
    path = Path(path)
    return prior_from_dict(json.loads(path.read_text()), base_dir=path.parent)


class GmmDenoiser:
    """predict_eps adapter; materializes a shape-agnostic prior per image shape."""

    def __init__(self, prior):
        if isinstance(prior, GaussianMixturePrior):
            self._fixed = prior
            self._spec = None
        else:
            self._fixed = None
            self._spec = prior
        self._cache: dict[tuple[int, int, int], GaussianMixturePrior] = {}

    def prior_for(self, shape: tuple[int, int, int]) -> GaussianMixturePrior:
        if self._fixed is not None:
            return self._fixed
        if shape not in self._cache:
            self._cache[shape] = self._spec.materialize(shape)
        return self._cache[shape]

    def predict_eps(self, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        return gmm_predict_eps(self.prior_for(x_t.shape), x_t, t, schedule)


# ----- loadable MLP -----


@dataclass(frozen=True)
class NetLayer:
    weight: np.ndarray  # (rows, cols)
    bias: np.ndarray    # (rows,)
    activation: str

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("layer weight must be (rows, cols) with bias (rows,)")


@dataclass(frozen=True)
class LoadedNet:
    """Inference-only MLP over [flattened x_t, t/T]."""

    layers: tuple[NetLayer, ...]
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]

    def __post_init__(self):
        size = int(np.prod(self.input_shape))
        for i, layer in enumerate(self.layers):
            if layer.weight.shape[1] != size:
                raise ValueError(
                    f"layer {i} expects input {layer.weight.shape[1]}, chain gives {size}"
                )
            size = layer.weight.shape[0]
        if size != int(np.prod(self.output_shape)):
            raise ValueError(
                f"last layer emits {size}, output_shape needs {int(np.prod(self.output_shape))}"
            )

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def forward(self, z: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            z = layer.weight @ z + layer.bias
            if layer.activation == "relu":
                z = np.maximum(z, 0.0)
            elif layer.activation == "tanh":
                z = np.tanh(z)
        return z


def net_predict_eps(net: LoadedNet, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Run the net on [x_t.flatten(), t / T] and reshape to x_t's shape."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.size + 1 != net.input_size:
        raise ValueError(
            f"net takes input size {net.input_size}; image has {x_t.size} + 1 values"
        )
    schedule._check_t(t)
    z = np.concatenate([x_t.reshape(-1), [t / schedule.T]])
    out = net.forward(z)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"net produced non-finite outputs at t={t}")
    return out.reshape(x_t.shape)


class NetDenoiser:
    def __init__(self, net: LoadedNet):
        self.net = net

    def predict_eps(self, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
        return net_predict_eps(self.net, x_t, t, schedule)


def save_net(net: LoadedNet, path) -> None:
    """Write the net as magic + one-line JSON header + raw LE float32 data.

    Data layout per layer: row-major weights then bias.
    """
    header = {
        "layers": [
            {
                "rows": layer.weight.shape[0],
                "cols": layer.weight.shape[1],
                "activation": layer.activation,
            }
            for layer in net.layers
        ],
        "input_shape": list(net.input_shape),
        "output_shape": list(net.output_shape),
    }
    blob = bytearray()
    blob += _NET_MAGIC
    blob += json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"
    for layer in net.layers:
        blob += layer.weight.astype("<f4").tobytes(order="C")
        blob += layer.bias.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(blob))


def load_net(path) -> LoadedNet:
    data = Path(path).read_bytes()
    if not data.startswith(_NET_MAGIC):
        raise ValueError(f"{path}: not a net weights file (bad magic)")
    nl = data.find(b"\n", len(_NET_MAGIC))
    if nl < 0:
        raise ValueError(f"{path}: missing header line")
    try:
        header = json.loads(data[len(_NET_MAGIC) : nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: bad header JSON: {exc}") from exc
    pos = nl + 1
    layers = []
    for spec in header["layers"]:
        rows, cols = int(spec["rows"]), int(spec["cols"])
        need = (rows * cols + rows) * 4
        if pos + need > len(data):
            raise ValueError(f"{path}: truncated weights at byte {pos}")
        w = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=pos)
        pos += rows * cols * 4
        b = np.frombuffer(data, dtype="<f4", count=rows, offset=pos)
        pos += rows * 4
        layers.append(
            NetLayer(
                weight=w.reshape(rows, cols).astype(np.float64),
                bias=b.astype(np.float64),
                activation=spec["activation"],
            )
        )
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes after weights")
    return LoadedNet(
        layers=tuple(layers),
        input_shape=tuple(header["input_shape"]),
        output_shape=tuple(header["output_shape"]),
    )
