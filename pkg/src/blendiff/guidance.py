"""Text guidance over a fixed statistics embedding, plus background losses.

The guidance model is deliberately analytic: an image maps to eight global
statistics (channel means, luminance spread, edge statistics, bright-pixel
fraction, coarse luminance), L2-normalized into an embedding, and prompts
are named target vectors in the same space loaded from a lexicon file.
Every statistic is differentiable almost everywhere, so the pixel gradient
of the cosine distance is available in closed form and can be checked
against finite differences.

Losses:
- clip_distance: cosine distance between the embedded masked image and a
  prompt vector (range [0, 2]).
- bg_distance: 0.5 * (MSE + filter-bank proxy) over the unmasked region.
- guidance_gradient: descent direction for
  clip_distance averaged over extending augmentations + lam * bg_distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import (
    ProjectiveTransform,
    random_projective,
    resize,
    resize_adjoint,
    warp_adjoint,
    warp_mask,
    warp_projective,
)

__all__ = [
    "STAT_DIM",
    "LexiconEmbedder",
    "UnknownPromptError",
    "load_lexicon",
    "lexicon_from_dict",
    "image_statistics",
    "clip_distance",
    "clip_distance_grad",
    "perceptual_proxy",
    "bg_distance",
    "bg_distance_grad",
    "extending_augmentations",
    "guidance_gradient",
]

STAT_DIM = 8

_LUMA = np.array([0.299, 0.587, 0.114])
_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T
_PROXY_SEED = 0x5EED
_PROXY_SCALES = (1, 2, 4)
_EPS = 1e-12


class UnknownPromptError(KeyError):
    """Prompt not present in the lexicon; carries the known prompt names."""

    def __init__(self, prompt: str, known):
        self.prompt = prompt
        self.known = sorted(known)
        super().__init__(f"unknown prompt {prompt!r}; lexicon has {self.known}")


# ----- small conv helpers with exact adjoints -----

_PAD_IDX: dict[tuple[int, int], np.ndarray] = {}
_FRAME: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _pad_index(h: int, w: int) -> np.ndarray:
    """Flat source index for each cell of the 1-px padded plane (reflect)."""
    key = (h, w)
    if key not in _PAD_IDX:
        idx = np.arange(h * w).reshape(h, w)
        mode_h = "reflect" if h > 1 else "edge"
        mode_w = "reflect" if w > 1 else "edge"
        idx = np.pad(idx, ((1, 1), (0, 0)), mode=mode_h)
        idx = np.pad(idx, ((0, 0), (1, 1)), mode=mode_w)
        idx.setflags(write=False)
        _PAD_IDX[key] = idx
    return _PAD_IDX[key]


def _frame_index(h: int, w: int):
    """Padded-plane frame cells (flat positions) and their source pixels."""
    key = (h, w)
    if key not in _FRAME:
        pidx = _pad_index(h, w)
        ph, pw = h + 2, w + 2
        on_frame = np.zeros((ph, pw), dtype=bool)
        on_frame[0, :] = on_frame[-1, :] = True
        on_frame[:, 0] = on_frame[:, -1] = True
        pos = np.flatnonzero(on_frame)
        src = pidx.reshape(-1)[pos]
        pos.setflags(write=False)
        src.setflags(write=False)
        _FRAME[key] = (pos, src)
    return _FRAME[key]


def _corr3(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation with a reflect border."""
    h, w = x.shape
    xp = x.reshape(-1)[_pad_index(h, w)]
    out = np.zeros_like(x)
    for a in range(3):
        for b in range(3):
            out += kernel[a, b] * xp[a : a + h, b : b + w]
    return out


def _corr3_adjoint(g: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Exact adjoint of _corr3 (verified by <Ax, g> == <x, A*g>)."""
    h, w = g.shape
    gp = np.zeros((h + 2, w + 2))
    for a in range(3):
        for b in range(3):
            gp[a : a + h, b : b + w] += kernel[a, b] * g
    out = gp[1:-1, 1:-1].copy()
    pos, src = _frame_index(h, w)
    fold = np.bincount(src, weights=gp.reshape(-1)[pos], minlength=h * w)
    return out + fold.reshape(h, w)


# ----- image statistics -----


def image_statistics(image: np.ndarray) -> np.ndarray:
    """The eight raw statistics of an (H, W, 3) image (H, W >= 4).

    [mean R, mean G, mean B, luminance std, mean Sobel gradient magnitude,
     horizontal/vertical edge-energy ratio, bright-pixel fraction
     (luminance > 0), mean 4x-downsampled luminance]
    """
    stats, _ = _stats_forward(_as_rgb(np.asarray(image, dtype=np.float64))[0])
    return stats


def _as_rgb(image: np.ndarray):
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) with C in {{1,3}}, got {image.shape}")
    if image.shape[0] < 4 or image.shape[1] < 4:
        raise ValueError(f"statistics need at least 4x4 pixels, got {image.shape}")
    if image.shape[2] == 1:
        return np.repeat(image, 3, axis=2), True
    return image, False


def _stats_forward(y: np.ndarray):
    h, w, _ = y.shape
    n = h * w
    lum = y @ _LUMA
    mu = lum.mean()
    var = ((lum - mu) ** 2).mean()
    gx = _corr3(lum, _SOBEL_X)
    gy = _corr3(lum, _SOBEL_Y)
    mag = np.sqrt(gx * gx + gy * gy + _EPS**2)
    eh = (gx * gx).mean()
    ev = (gy * gy).mean()
    fh, fw = h // 4, w // 4
    lum4 = lum[: 4 * fh, : 4 * fw].reshape(fh, 4, fw, 4).mean(axis=(1, 3))
    stats = np.array(
        [
            y[:, :, 0].mean(),
            y[:, :, 1].mean(),
            y[:, :, 2].mean(),
            math.sqrt(var + _EPS**2),
            mag.mean(),
            eh / (ev + _EPS),
            float((lum > 0).mean()),
            lum4.mean(),
        ]
    )
    aux = (lum, mu, var, gx, gy, mag, eh, ev, fh, fw)
    return stats, aux


def _stats_backward(y: np.ndarray, aux, ds: np.ndarray) -> np.ndarray:
    """Pixel gradient of sum_k ds[k] * stat_k, evaluated at y."""
    h, w, _ = y.shape
    n = h * w
    lum, mu, var, gx, gy, mag, eh, ev, fh, fw = aux
    g_y = np.zeros_like(y)
    g_y[:, :, 0] += ds[0] / n
    g_y[:, :, 1] += ds[1] / n
    g_y[:, :, 2] += ds[2] / n
    g_lum = np.zeros_like(lum)
    if ds[3] != 0.0:
        g_lum += ds[3] * (lum - mu) / (n * math.sqrt(var + _EPS**2))
    if ds[4] != 0.0:
        g_lum += (ds[4] / n) * (
            _corr3_adjoint(gx / mag, _SOBEL_X) + _corr3_adjoint(gy / mag, _SOBEL_Y)
        )
    if ds[5] != 0.0:
        denom = ev + _EPS
        g_lum += _corr3_adjoint(ds[5] * (2.0 / (n * denom)) * gx, _SOBEL_X)
        g_lum += _corr3_adjoint(
            ds[5] * (-2.0 * eh / (n * denom * denom)) * gy, _SOBEL_Y
        )
    # ds[6]: bright-pixel fraction is flat almost everywhere
    if ds[7] != 0.0 and fh > 0 and fw > 0:
        g_lum[: 4 * fh, : 4 * fw] += ds[7] / (16.0 * fh * fw)
    g_y += g_lum[:, :, None] * _LUMA
    return g_y


# ----- the lexicon embedder -----


@dataclass(frozen=True)
class LexiconEmbedder:
    """Statistics embedder with a fixed prompt lexicon.

    lexicon maps prompt -> unit target vector (STAT_DIM,); input_size is
    the square size images are resized to before statistics are taken.
    """

    lexicon: dict[str, np.ndarray]
    input_size: int = 64

    def __post_init__(self):
        if self.input_size < 4:
            raise ValueError("input_size must be >= 4")

    def prompts(self) -> list[str]:
        return sorted(self.lexicon)

    def embed_text(self, prompt: str) -> np.ndarray:
        if prompt not in self.lexicon:
            raise UnknownPromptError(prompt, self.lexicon)
        return self.lexicon[prompt]

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        y = resize(image, self.input_size, self.input_size)
        y3, _ = _as_rgb(y)
        stats, _ = _stats_forward(y3)
        r = float(np.linalg.norm(stats))
        if r < _EPS:
            raise ValueError("image statistics are degenerate (zero vector)")
        return stats / r


def lexicon_from_dict(doc: dict, input_size: int = 64) -> LexiconEmbedder:
    prompts = doc.get("prompts")
    if not isinstance(prompts, dict) or not prompts:
        raise ValueError("lexicon needs a non-empty 'prompts' object")
    table = {}
    for name, vec in prompts.items():
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (STAT_DIM,):
            raise ValueError(
                f"prompt {name!r} has {arr.shape} entries, need ({STAT_DIM},)"
            )
        r = float(np.linalg.norm(arr))
        if r < _EPS:
            raise ValueError(f"prompt {name!r} has a zero target vector")
        arr = arr / r
        arr.setflags(write=False)
        table[name] = arr
    return LexiconEmbedder(lexicon=table, input_size=input_size)


def load_lexicon(path, input_size: int = 64) -> LexiconEmbedder:
    return lexicon_from_dict(json.loads(Path(path).read_text()), input_size)


# ----- masked embedding distance -----


def _check_pair(image: np.ndarray, mask: np.ndarray):
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != image plane {image.shape[:2]}")


def clip_distance(model: LexiconEmbedder, image, mask, prompt: str) -> float:
    """1 - <embed(image * mask), embed_text(prompt)>; lies in [0, 2]."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_pair(image, mask)
    e = model.embed_image(image * mask[:, :, None])
    return float(1.0 - np.dot(e, model.embed_text(prompt)))


def clip_distance_grad(model: LexiconEmbedder, image, mask, prompt: str) -> np.ndarray:
    """Analytic pixel gradient of clip_distance w.r.t. the image."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_pair(image, mask)
    target = model.embed_text(prompt)
    h, w, c = image.shape
    masked = image * mask[:, :, None]
    y = resize(masked, model.input_size, model.input_size)
    y3, was_gray = _as_rgb(y)
    stats, aux = _stats_forward(y3)
    r = math.sqrt(float(np.dot(stats, stats)))
    if r < _EPS:
        raise ValueError("image statistics are degenerate (zero vector)")
    e = stats / r
    # d(1 - e.target)/d stats = -(target - e <e, target>) / r
    ds = -(target - e * float(np.dot(e, target))) / r
    g_y3 = _stats_backward(y3, aux, ds)
    g_y = g_y3.sum(axis=2, keepdims=True) if was_gray else g_y3
    g_masked = resize_adjoint(g_y, h, w)
    return g_masked * mask[:, :, None]


# ----- perceptual proxy and background distance -----


def _proxy_filters() -> np.ndarray:
    rng = np.random.default_rng(_PROXY_SEED)
    f = rng.standard_normal((8, 3, 3))
    f -= f.mean(axis=(1, 2), keepdims=True)
    f /= np.sqrt((f * f).sum(axis=(1, 2), keepdims=True))
    f.setflags(write=False)
    return f


_FILTERS = _proxy_filters()


def _pool(x: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return x
    h, w, c = x.shape
    ph, pw = h // f, w // f
    return x[: ph * f, : pw * f].reshape(ph, f, pw, f, c).mean(axis=(1, 3))


def _pool_adjoint(g: np.ndarray, f: int, h: int, w: int) -> np.ndarray:
    if f == 1:
        return g
    ph, pw, c = g.shape
    out = np.zeros((h, w, c))
    out[: ph * f, : pw * f] = np.repeat(np.repeat(g, f, axis=0), f, axis=1) / (f * f)
    return out


def _proxy_value_grad(x1: np.ndarray, x2: np.ndarray, need_grad: bool):
    if x1.shape != x2.shape:
        raise ValueError(f"shape mismatch {x1.shape} vs {x2.shape}")
    h, w, c = x1.shape
    if h < 4 or w < 4:
        raise ValueError(f"perceptual proxy needs at least 4x4 pixels, got {h}x{w}")
    total = 0.0
    grad = np.zeros_like(x2) if need_grad else None
    for f in _PROXY_SCALES:
        p1 = _pool(x1, f)
        p2 = _pool(x2, f)
        ph, pw, _ = p1.shape
        count = len(_FILTERS) * c * ph * pw
        scale_loss = 0.0
        g_p2 = np.zeros_like(p2) if need_grad else None
        for ch in range(c):
            for k in range(len(_FILTERS)):
                kern = _FILTERS[k]
                f1 = _corr3(p1[:, :, ch], kern)
                f2 = _corr3(p2[:, :, ch], kern)
                a1 = np.abs(f1)
                a2 = np.abs(f2)
                r1 = math.sqrt(float(np.vdot(a1, a1)))
                r2 = math.sqrt(float(np.vdot(a2, a2)))
                n1 = a1 / r1 if r1 > _EPS else np.zeros_like(a1)
                n2 = a2 / r2 if r2 > _EPS else np.zeros_like(a2)
                d = n2 - n1
                scale_loss += float(np.vdot(d, d))
                if need_grad:
                    g_n2 = (2.0 / count) * d
                    if r2 > _EPS:
                        g_a2 = (g_n2 - n2 * float(np.vdot(n2, g_n2))) / r2
                    else:
                        g_a2 = np.zeros_like(g_n2)
                    g_f2 = np.sign(f2) * g_a2
                    g_p2[:, :, ch] += _corr3_adjoint(g_f2, kern)
        total += scale_loss / count
        if need_grad:
            grad += _pool_adjoint(g_p2, f, h, w)
    total /= len(_PROXY_SCALES)
    if need_grad:
        grad /= len(_PROXY_SCALES)
    return total, grad


def perceptual_proxy(x1, x2) -> float:
    """Multi-scale filter-bank feature distance (deterministic, symmetric).

    Pools at scales {1, 1/2, 1/4}, applies a fixed seeded zero-mean 3x3
    filter bank per channel, takes |response| L2-normalized per map, and
    averages squared feature differences over the scales.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    value, _ = _proxy_value_grad(x1, x2, need_grad=False)
    return value


def bg_distance(x1, x2, mask) -> float:
    """0.5 * (MSE + perceptual proxy) computed on x * (1 - mask)."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_pair(x1, mask)
    keep = (1.0 - mask)[:, :, None]
    a = x1 * keep
    b = x2 * keep
    mse = float(((a - b) ** 2).mean())
    proxy, _ = _proxy_value_grad(a, b, need_grad=False)
    return 0.5 * (mse + proxy)


def bg_distance_grad(x1, x2, mask) -> np.ndarray:
    """Analytic gradient of bg_distance w.r.t. x2."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_pair(x1, mask)
    keep = (1.0 - mask)[:, :, None]
    a = x1 * keep
    b = x2 * keep
    g_mse = 2.0 * (b - a) / a.size
    _, g_proxy = _proxy_value_grad(a, b, need_grad=True)
    return 0.5 * (g_mse + g_proxy) * keep


# ----- extending augmentations and the combined gradient -----


def extending_augmentations(
    image,
    mask,
    n: int,
    rng: np.random.Generator,
    jitter: float = 0.1,
) -> list[tuple[np.ndarray, np.ndarray, ProjectiveTransform]]:
    """n warped copies of (image, mask); the first is always the identity.

    The remaining n-1 use corner-jitter homographies (bilinear, reflect
    border); warped masks are re-thresholded at 0.5.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_pair(image, mask)
    if n < 1:
        raise ValueError(f"need n >= 1 augmentations, got {n}")
    out = [(image, mask, ProjectiveTransform.identity())]
    h, w = mask.shape
    for _ in range(n - 1):
        t = random_projective(h, w, rng, jitter=jitter)
        out.append((warp_projective(image, t), warp_mask(mask, t), t))
    return out


def guidance_gradient(
    model: LexiconEmbedder,
    x0_hat,
    x_source,
    mask,
    prompt: str,
    n_aug: int,
    lam: float,
    rng: np.random.Generator,
    transforms: list[ProjectiveTransform] | None = None,
    augment_bg: bool = False,
) -> np.ndarray:
    """Descent direction for the combined edit loss at x0_hat.

    Loss = mean over augmentations of clip_distance(warp(x0_hat), warp(mask))
    + lam * bg_distance(x_source, x0_hat, mask); each augmented gradient is
    carried back through the warp's exact adjoint.  The return value is the
    NEGATIVE loss gradient, ready to be added to a reverse-step mean.
    Summation over augmentations is pairwise (stable to reduction order).
    """
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x_source = np.asarray(x_source, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if transforms is not None:
        augs = [
            (
                x0_hat if t.is_identity() else warp_projective(x0_hat, t),
                mask if t.is_identity() else warp_mask(mask, t),
                t,
            )
            for t in transforms
        ]
    else:
        augs = extending_augmentations(x0_hat, mask, n_aug, rng)
    parts = np.empty((len(augs),) + x0_hat.shape)
    for i, (img_w, mask_w, t) in enumerate(augs):
        g = clip_distance_grad(model, img_w, mask_w, prompt)
        if augment_bg and lam != 0.0:
            src_w = x_source if t.is_identity() else warp_projective(x_source, t)
            g = g + lam * bg_distance_grad(src_w, img_w, mask_w)
        parts[i] = g if t.is_identity() else warp_adjoint(g, t)
    grad = parts.sum(axis=0) / len(augs)
    if not augment_bg and lam != 0.0:
        grad = grad + lam * bg_distance_grad(x_source, x0_hat, mask)
    return -grad
