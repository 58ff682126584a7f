"""Conditional noise-prediction network with hand-written backward pass.

A small two-resolution U-shaped convnet. Conditioning must be able to make
localized demands (a finding lives in a fixed anatomical area) while plain
convolutions are translation-equivariant, so the input carries two coordinate
channels plus a learned low-resolution spatial map per condition row,
upsampled to full resolution. Timestep and condition embeddings additionally
enter as channel biases at both resolutions. Activations are SiLU (smooth, so
finite-difference gradient checks are meaningful).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kernels import conv2d_backward, conv2d_forward

COND_MAP_CELLS = 8  # learned condition map resolution (upsampled to image size)


@dataclass(frozen=True)
class NetConfig:
    image_size: int = 64
    base_channels: int = 12
    mid_channels: int = 24
    t_rows: int = 201  # diffusion steps + 1; row index = timestep
    cond_rows: int = 6  # vocabulary size + trailing "none" row
    dtype: str = "float32"

    def __post_init__(self):
        if self.image_size % COND_MAP_CELLS:
            raise ValueError(f"image_size must be a multiple of {COND_MAP_CELLS}")
        if self.image_size % 2:
            raise ValueError("image_size must be even (one pooling stage)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def _silu(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _silu_grad(z: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (1.0 + z * (1.0 - s))


def _avgpool2(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _avgpool2_grad(g: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25


def _upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample2_grad(g: np.ndarray) -> np.ndarray:
    b, c, h, w = g.shape
    return g.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def cond_input(active: np.ndarray, cond_rows: int) -> np.ndarray:
    """Multi-hot condition rows from (B, F) finding flags; last row is "none".

    The "none" row fires only for the empty finding set, matching the prompt
    grammar where the token appears only in otherwise-empty prompts.
    """
    active = np.atleast_2d(np.asarray(active, dtype=np.float64))
    b, f = active.shape
    if f != cond_rows - 1:
        raise ValueError(f"expected {cond_rows - 1} findings, got {f}")
    out = np.zeros((b, cond_rows), dtype=np.float64)
    out[:, :f] = active
    out[active.sum(axis=1) == 0, f] = 1.0
    return out


class Denoiser:
    """eps-prediction model: predict(x_t, t, cond) with explicit gradients."""

    def __init__(self, cfg: NetConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        s = cfg.image_size
        grid = (np.arange(s, dtype=np.float64) + 0.5) / s
        self._coords = np.stack(
            [np.broadcast_to(grid[None, :], (s, s)), np.broadcast_to(grid[:, None], (s, s))]
        ).astype(cfg.np_dtype)  # (2, S, S)

    @classmethod
    def create(cls, cfg: NetConfig, rng: np.random.Generator) -> "Denoiser":
        """Seeded init: uniform fan-in scaling for convs, small uniform embeddings."""
        dt = cfg.np_dtype
        c1, c2 = cfg.base_channels, cfg.mid_channels
        shapes = {
            "in": (c1, 4),  # x_t, coord_x, coord_y, condition map
            "e1": (c1, c1),
            "d1": (c2, c1),
            "d2": (c2, c2),
            "d3": (c2, c2),
            "u0": (c1, c2),
            "u1": (c1, c1),
            "out": (1, c1),
        }
        params: dict[str, np.ndarray] = {}
        for name, (cout, cin) in shapes.items():
            bound = 1.0 / np.sqrt(cin * 9)
            params[f"w_{name}"] = rng.uniform(-bound, bound, (cout, cin, 3, 3)).astype(dt)
            params[f"b_{name}"] = np.zeros(cout, dtype=dt)
        for name, rows, cols in (
            ("t_emb1", cfg.t_rows, c1),
            ("t_emb2", cfg.t_rows, c2),
            ("c_emb1", cfg.cond_rows, c1),
            ("c_emb2", cfg.cond_rows, c2),
        ):
            params[name] = rng.uniform(-0.1, 0.1, (rows, cols)).astype(dt)
        params["c_map"] = rng.uniform(
            -0.1, 0.1, (cfg.cond_rows, COND_MAP_CELLS, COND_MAP_CELLS)
        ).astype(dt)
        return cls(cfg, params)

    def _cond_map(self, cond: np.ndarray) -> np.ndarray:
        """(B, cond_rows) -> (B, 1, S, S) learned spatial conditioning."""
        coarse = np.einsum("br,rij->bij", cond, self.params["c_map"])
        scale = self.cfg.image_size // COND_MAP_CELLS
        return np.repeat(np.repeat(coarse, scale, axis=1), scale, axis=2)[:, None]

    def forward(self, x: np.ndarray, t: np.ndarray, cond: np.ndarray):
        """x (B,1,S,S) in net dtype, t (B,) int, cond (B, cond_rows).

        Returns (eps_pred, cache) with cache holding what backward needs.
        """
        p = self.params
        dt = self.cfg.np_dtype
        cond = cond.astype(dt)
        t = np.asarray(t, dtype=np.int64)
        b = x.shape[0]
        emb1 = (p["t_emb1"][t] + cond @ p["c_emb1"])[:, :, None, None]
        emb2 = (p["t_emb2"][t] + cond @ p["c_emb2"])[:, :, None, None]

        coords = np.broadcast_to(self._coords[None], (b, 2, x.shape[2], x.shape[3]))
        xin = np.concatenate([x, coords, self._cond_map(cond)], axis=1).astype(dt)
        h_in = conv2d_forward(xin, p["w_in"], p["b_in"]) + emb1
        a0, s0 = _silu(h_in)
        h_e1 = conv2d_forward(a0, p["w_e1"], p["b_e1"])
        a1, s1 = _silu(h_e1)
        pool = _avgpool2(a1)
        h_d1 = conv2d_forward(pool, p["w_d1"], p["b_d1"]) + emb2
        a2, s2 = _silu(h_d1)
        h_d2 = conv2d_forward(a2, p["w_d2"], p["b_d2"])
        a3, s3 = _silu(h_d2)
        h_d3 = conv2d_forward(a3, p["w_d3"], p["b_d3"])
        a4, s4 = _silu(h_d3)
        h_u0 = conv2d_forward(a4, p["w_u0"], p["b_u0"])
        a5, s5 = _silu(h_u0)
        u = _upsample2(a5) + a1
        h_u1 = conv2d_forward(u, p["w_u1"], p["b_u1"])
        a6, s6 = _silu(h_u1)
        out = conv2d_forward(a6, p["w_out"], p["b_out"])
        cache = {
            "xin": xin, "t": t, "cond": cond,
            "h_in": h_in, "s0": s0, "a0": a0,
            "h_e1": h_e1, "s1": s1, "a1": a1, "pool": pool,
            "h_d1": h_d1, "s2": s2, "a2": a2,
            "h_d2": h_d2, "s3": s3, "a3": a3,
            "h_d3": h_d3, "s4": s4, "a4": a4,
            "h_u0": h_u0, "s5": s5, "a5": a5, "u": u,
            "h_u1": h_u1, "s6": s6, "a6": a6,
        }
        return out, cache

    def backward(self, cache: dict, g_out: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        grads: dict[str, np.ndarray] = {}

        g_a6, grads["w_out"], grads["b_out"] = conv2d_backward(cache["a6"], p["w_out"], g_out)
        g_hu1 = g_a6 * _silu_grad(cache["h_u1"], cache["s6"])
        g_u, grads["w_u1"], grads["b_u1"] = conv2d_backward(cache["u"], p["w_u1"], g_hu1)
        g_a5 = _upsample2_grad(g_u)
        g_hu0 = g_a5 * _silu_grad(cache["h_u0"], cache["s5"])
        g_a4, grads["w_u0"], grads["b_u0"] = conv2d_backward(cache["a4"], p["w_u0"], g_hu0)
        g_hd3 = g_a4 * _silu_grad(cache["h_d3"], cache["s4"])
        g_a3, grads["w_d3"], grads["b_d3"] = conv2d_backward(cache["a3"], p["w_d3"], g_hd3)
        g_hd2 = g_a3 * _silu_grad(cache["h_d2"], cache["s3"])
        g_a2, grads["w_d2"], grads["b_d2"] = conv2d_backward(cache["a2"], p["w_d2"], g_hd2)
        g_hd1 = g_a2 * _silu_grad(cache["h_d1"], cache["s2"])
        g_pool, grads["w_d1"], grads["b_d1"] = conv2d_backward(cache["pool"], p["w_d1"], g_hd1)
        g_emb2 = g_hd1.sum(axis=(2, 3))
        g_a1 = _avgpool2_grad(g_pool) + g_u  # pooled path + additive skip
        g_he1 = g_a1 * _silu_grad(cache["h_e1"], cache["s1"])
        g_a0, grads["w_e1"], grads["b_e1"] = conv2d_backward(cache["a0"], p["w_e1"], g_he1)
        g_hin = g_a0 * _silu_grad(cache["h_in"], cache["s0"])
        g_xin, grads["w_in"], grads["b_in"] = conv2d_backward(cache["xin"], p["w_in"], g_hin)
        g_emb1 = g_hin.sum(axis=(2, 3))

        # condition-map gradient: block-sum to the coarse grid, weight by cond
        g_map = g_xin[:, 3]
        scale = self.cfg.image_size // COND_MAP_CELLS
        b = g_map.shape[0]
        g_coarse = g_map.reshape(b, COND_MAP_CELLS, scale, COND_MAP_CELLS, scale).sum(axis=(2, 4))
        grads["c_map"] = np.einsum("br,bij->rij", cache["cond"], g_coarse).astype(p["c_map"].dtype)

        t, cond = cache["t"], cache["cond"]
        for name, g_emb in (("1", g_emb1), ("2", g_emb2)):
            gt = np.zeros_like(p[f"t_emb{name}"])
            np.add.at(gt, t, g_emb)
            grads[f"t_emb{name}"] = gt
            grads[f"c_emb{name}"] = cond.T @ g_emb
        return grads

    def predict(self, x: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray:
        """Float64 (B,H,W) -> eps prediction (B,H,W) at a shared timestep."""
        b = x.shape[0]
        xin = x[:, None, :, :].astype(self.cfg.np_dtype)
        tvec = np.full(b, t, dtype=np.int64)
        cond = np.atleast_2d(cond)
        if cond.shape[0] == 1 and b > 1:
            cond = np.repeat(cond, b, axis=0)
        out, _ = self.forward(xin, tvec, cond)
        return out[:, 0].astype(np.float64)

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))
