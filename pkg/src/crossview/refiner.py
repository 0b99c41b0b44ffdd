"""Similarity-matrix construction and dual-branch residual refinement.

The patch similarity matrix gets corrected by two residual branches (a 3D
convolution over the similarity cube for local structure, a per-row affine
stack for global structure), modulated by a per-row gate, extended with a
dustbin row/column for unmatched patches, and normalized by the elementwise
product of its row-wise and column-wise softmax.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .solver import CorrespondenceSet
from .surface import BevFeatureMap
from .tensorio import load_tensor, save_tensor

PARAMS_MANIFEST = "manifest.json"
_PARAMS_FORMAT = "refiner-params-v1"


@dataclass
class SimilarityMatrix:
    """N^2 x N^2 patch similarities; row i holds ground patch i against all aerial patches."""

    s: np.ndarray
    tau: float = 0.1

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if self.s.ndim != 2 or self.s.shape[0] != self.s.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.all(np.isfinite(self.s)):
            raise ValueError("similarity matrix contains non-finite entries")
        if not self.tau > 0:
            raise ValueError("temperature must be positive")

    @property
    def num_patches(self) -> int:
        return self.s.shape[0]


@dataclass
class MatchProbabilities:
    """Match probabilities in (0, 1) from the doubly-stochastic normalization."""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.ndim != 2 or self.p.shape[0] != self.p.shape[1]:
            raise ValueError("probability matrix must be square")
        if not (self.p.min() > 0.0 and self.p.max() < 1.0):
            raise ValueError("match probabilities must lie strictly inside (0, 1)")


def _as_f32(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a), dtype=np.float32)


@dataclass(eq=False)
class RefinerParams:
    """Learnable refinement parameters, kept in float32 for lossless storage.

    ``conv_*`` hold the three 3D-convolution layers (kernels shaped
    (out_c, in_c, 3, 3, 3)), ``global_*`` the per-row affine stack,
    ``gate_*`` the gating stack whose sigmoid output scales the residual,
    and ``dustbin_*`` the learnable bin row/column/corner.
    """

    conv_kernels: tuple
    conv_biases: tuple
    global_weights: tuple
    global_biases: tuple
    gate_weights: tuple
    gate_biases: tuple
    dustbin_row: np.ndarray
    dustbin_col: np.ndarray
    dustbin_theta: np.ndarray  # scalar

    def __post_init__(self):
        self.conv_kernels = tuple(_as_f32(k) for k in self.conv_kernels)
        self.conv_biases = tuple(_as_f32(b) for b in self.conv_biases)
        self.global_weights = tuple(_as_f32(w) for w in self.global_weights)
        self.global_biases = tuple(_as_f32(b) for b in self.global_biases)
        self.gate_weights = tuple(_as_f32(w) for w in self.gate_weights)
        self.gate_biases = tuple(_as_f32(b) for b in self.gate_biases)
        self.dustbin_row = _as_f32(self.dustbin_row)
        self.dustbin_col = _as_f32(self.dustbin_col)
        self.dustbin_theta = _as_f32(self.dustbin_theta).reshape(())
        self._validate()

    def _validate(self):
        if len(self.conv_kernels) != 3 or len(self.conv_biases) != 3:
            raise ValueError("expected exactly three convolution layers")
        in_c = 1
        for k, b in zip(self.conv_kernels, self.conv_biases):
            if k.ndim != 5 or k.shape[2:] != (3, 3, 3):
                raise ValueError("convolution kernels must be (out_c, in_c, 3, 3, 3)")
            if k.shape[1] != in_c or b.shape != (k.shape[0],):
                raise ValueError("convolution channel chain is inconsistent")
            in_c = k.shape[0]
        if in_c != 1:
            raise ValueError("final convolution layer must emit one channel")
        n2 = self.num_patches
        for stack_w, stack_b, last_out in (
                (self.global_weights, self.global_biases, n2),
                (self.gate_weights, self.gate_biases, 1)):
            if len(stack_w) != len(stack_b) or not stack_w:
                raise ValueError("affine stacks need matching weights and biases")
            width = n2
            for w, b in zip(stack_w, stack_b):
                if w.ndim != 2 or w.shape[0] != width or b.shape != (w.shape[1],):
                    raise ValueError("affine stack shapes are inconsistent")
                width = w.shape[1]
            if width != last_out:
                raise ValueError("affine stack output width is wrong")
        if self.dustbin_row.shape != (n2,) or self.dustbin_col.shape != (n2,):
            raise ValueError("dustbin vectors must have length N^2")

    @property
    def num_patches(self) -> int:
        return self.dustbin_row.shape[0]

    @classmethod
    def random(cls, n2: int, conv_channels=(1, 8, 8, 1), global_hidden: int = 256,
               gate_hidden: int = 64, scale: float = 0.1, seed: int = 0) -> "RefinerParams":
        rng = np.random.default_rng(seed)

        def draw(*shape):
            return scale * rng.standard_normal(shape)

        kernels, biases = [], []
        for cin, cout in zip(conv_channels[:-1], conv_channels[1:]):
            kernels.append(draw(cout, cin, 3, 3, 3))
            biases.append(draw(cout))
        return cls(
            conv_kernels=tuple(kernels),
            conv_biases=tuple(biases),
            global_weights=(draw(n2, global_hidden), draw(global_hidden, n2)),
            global_biases=(draw(global_hidden), draw(n2)),
            gate_weights=(draw(n2, gate_hidden), draw(gate_hidden, 1)),
            gate_biases=(draw(gate_hidden), draw(1)),
            dustbin_row=draw(n2),
            dustbin_col=draw(n2),
            dustbin_theta=draw(),
        )

    def _named_tensors(self) -> dict:
        named = {}
        for i, (k, b) in enumerate(zip(self.conv_kernels, self.conv_biases)):
            named[f"conv{i}_kernel"] = k
            named[f"conv{i}_bias"] = b
        for prefix, ws, bs in (("global", self.global_weights, self.global_biases),
                               ("gate", self.gate_weights, self.gate_biases)):
            for i, (w, b) in enumerate(zip(ws, bs)):
                named[f"{prefix}{i}_weight"] = w
                named[f"{prefix}{i}_bias"] = b
        named["dustbin_row"] = self.dustbin_row
        named["dustbin_col"] = self.dustbin_col
        named["dustbin_theta"] = self.dustbin_theta
        return named

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        named = self._named_tensors()
        manifest = {
            "format": _PARAMS_FORMAT,
            "num_conv_layers": len(self.conv_kernels),
            "num_global_layers": len(self.global_weights),
            "num_gate_layers": len(self.gate_weights),
            "tensors": {name: list(t.shape) for name, t in named.items()},
        }
        for name, tensor in named.items():
            save_tensor(directory / f"{name}.cvt", tensor)
        with open(directory / PARAMS_MANIFEST, "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "RefinerParams":
        directory = Path(directory)
        with open(directory / PARAMS_MANIFEST) as fh:
            manifest = json.load(fh)
        if manifest.get("format") != _PARAMS_FORMAT:
            raise ValueError(f"{directory}: unknown parameter format")

        def grab(name):
            tensor = load_tensor(directory / f"{name}.cvt")
            if list(tensor.shape) != manifest["tensors"][name]:
                raise ValueError(f"{name}: tensor shape disagrees with the manifest")
            return tensor

        n_conv = manifest["num_conv_layers"]
        n_glob = manifest["num_global_layers"]
        n_gate = manifest["num_gate_layers"]
        return cls(
            conv_kernels=tuple(grab(f"conv{i}_kernel") for i in range(n_conv)),
            conv_biases=tuple(grab(f"conv{i}_bias") for i in range(n_conv)),
            global_weights=tuple(grab(f"global{i}_weight") for i in range(n_glob)),
            global_biases=tuple(grab(f"global{i}_bias") for i in range(n_glob)),
            gate_weights=tuple(grab(f"gate{i}_weight") for i in range(n_gate)),
            gate_biases=tuple(grab(f"gate{i}_bias") for i in range(n_gate)),
            dustbin_row=grab("dustbin_row"),
            dustbin_col=grab("dustbin_col"),
            dustbin_theta=grab("dustbin_theta"),
        )


def initial_similarity(f_grd: BevFeatureMap, f_sat: BevFeatureMap,
                       tau: float = 0.1) -> SimilarityMatrix:
    """Scaled cosine similarity between flattened ground and aerial patches."""
    if f_grd.data.shape != f_sat.data.shape:
        raise ValueError("ground and aerial feature maps must share a shape")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    n2 = f_grd.data.shape[0] * f_grd.data.shape[1]
    fg = f_grd.data.reshape(n2, -1)
    fs = f_sat.data.reshape(n2, -1)
    ng = np.linalg.norm(fg, axis=1)
    ns = np.linalg.norm(fs, axis=1)
    if np.any(ng == 0) or np.any(ns == 0):
        raise ValueError("zero-norm feature row cannot be cosine-normalized")
    s = (fg / ng[:, None]) @ (fs / ns[:, None]).T
    s /= tau
    return SimilarityMatrix(s, tau)


def conv3d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3x3 cross-correlation with zero padding 1 (shape-preserving).

    ``x`` is (in_c, D, H, W), ``kernel`` is (out_c, in_c, 3, 3, 3).
    """
    in_c, d, h, w = x.shape
    out_c = kernel.shape[0]
    if kernel.shape[1] != in_c:
        raise ValueError("kernel input channels disagree with the volume")
    padded = np.zeros((in_c, d + 2, h + 2, w + 2))
    padded[:, 1:-1, 1:-1, 1:-1] = x
    out = np.empty((out_c, d, h, w))
    for oc in range(out_c):
        acc = np.zeros((d, h, w))
        for ic in range(in_c):
            for dz in range(3):
                for dy in range(3):
                    for dx in range(3):
                        tap = float(kernel[oc, ic, dz, dy, dx])
                        if tap != 0.0:
                            acc += tap * padded[ic, dz:dz + d, dy:dy + h, dx:dx + w]
        out[oc] = acc + float(bias[oc])
    return out


def _cube_side(n2: int) -> int:
    n = math.isqrt(n2)
    if n * n != n2:
        raise ValueError(f"patch count {n2} is not a perfect square")
    return n


def local_residual(s: SimilarityMatrix, params: RefinerParams) -> np.ndarray:
    """Residual from three 3D convolutions over the (N, N, N^2) similarity cube."""
    n2 = s.num_patches
    if params.num_patches != n2:
        raise ValueError("parameters sized for a different patch count")
    n = _cube_side(n2)
    x = s.s.reshape(n, n, n2)[None].astype(float)
    last = len(params.conv_kernels) - 1
    for i, (kernel, bias) in enumerate(zip(params.conv_kernels, params.conv_biases)):
        x = conv3d(x, kernel.astype(float), bias.astype(float))
        if i < last:
            x = np.maximum(x, 0.0)
    return x[0].reshape(n2, n2)


def _affine_stack(x: np.ndarray, weights, biases) -> np.ndarray:
    out = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        out = out @ w.astype(float) + b.astype(float)
        if i < last:
            out = np.maximum(out, 0.0)
    return out


def global_residual(s: SimilarityMatrix, params: RefinerParams) -> np.ndarray:
    """Residual from the per-row affine stack, applied independently to every row."""
    if params.num_patches != s.num_patches:
        raise ValueError("parameters sized for a different patch count")
    return _affine_stack(s.s, params.global_weights, params.global_biases)


def gate_values(s: SimilarityMatrix, params: RefinerParams) -> np.ndarray:
    """Per-ground-patch gate in [0, 1], computed from each row of the matrix."""
    logits = _affine_stack(s.s, params.gate_weights, params.gate_biases)[:, 0]
    return 1.0 / (1.0 + np.exp(-logits))


def refine(s: SimilarityMatrix, params: RefinerParams) -> SimilarityMatrix:
    """Gated residual correction: S + alpha * (local + global), alpha broadcast per row."""
    alpha = gate_values(s, params)
    delta = local_residual(s, params) + global_residual(s, params)
    return SimilarityMatrix(s.s + alpha[:, None] * delta, s.tau)


def dustbin_extend(s: SimilarityMatrix, params: RefinerParams | None) -> np.ndarray:
    """Append the dustbin column/row/corner; ``params=None`` uses zero bins."""
    n2 = s.num_patches
    out = np.empty((n2 + 1, n2 + 1))
    out[:n2, :n2] = s.s
    if params is None:
        out[:n2, n2] = 0.0
        out[n2, :n2] = 0.0
        out[n2, n2] = 0.0
        return out
    if params.num_patches != n2:
        raise ValueError("dustbin parameters sized for a different patch count")
    out[:n2, n2] = params.dustbin_col.astype(float)
    out[n2, :n2] = params.dustbin_row.astype(float)
    out[n2, n2] = float(params.dustbin_theta)
    return out


def _softmax(m: np.ndarray, axis: int) -> np.ndarray:
    # max-subtraction guards the exp against overflow; in-place ops keep
    # the large temporaries down to a single allocation
    e = m - m.max(axis=axis, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def row_softmax(m: np.ndarray) -> np.ndarray:
    return _softmax(np.asarray(m, dtype=float), axis=1)


def col_softmax(m: np.ndarray) -> np.ndarray:
    return _softmax(np.asarray(m, dtype=float), axis=0)


# entry ranges below this bound allow the single-exp product path without underflow
_SINGLE_EXP_RANGE = 300.0


def normalize_doubly_stochastic(s_dustbin: np.ndarray) -> MatchProbabilities:
    """Elementwise product of row- and column-softmax, cropped to drop the dustbin."""
    m = np.asarray(s_dustbin, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
        raise ValueError("expected a square dustbin-extended matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    lo, hi = m.min(), m.max()
    if hi - lo <= _SINGLE_EXP_RANGE:
        # a global shift cancels inside each softmax, so one exp serves both:
        # p = e^2(m-g) / (rowsum * colsum)
        e = m - hi
        np.exp(e, out=e)
        rows = e.sum(axis=1, keepdims=True)
        cols = e.sum(axis=0, keepdims=True)
        np.multiply(e, e, out=e)
        e /= rows
        e /= cols
        p = e
    else:
        p = row_softmax(m)
        p *= col_softmax(m)
    # saturated inputs can round the product onto 0 or 1; nudge back inside
    # the open interval (at most one ulp of distortion)
    np.clip(p, np.finfo(float).tiny, np.nextafter(1.0, 0.0), out=p)
    return MatchProbabilities(p[:-1, :-1].copy())


def extract_matches(probs: MatchProbabilities, k: int) -> CorrespondenceSet:
    """Top-k matches: mutual row/column argmaxes first, padded from the global top-k.

    A pair survives the mutual filter only when it is the argmax of both
    its row and its column. Ordering ties break toward the lowest (row,
    col) index. Coordinates come back in grid-cell units (row index ->
    (ix, iy) ground cell, column index -> aerial cell); weights are the
    probability values.
    """
    p = probs.p
    n2 = p.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > p.size:
        raise ValueError("k exceeds the number of matrix entries")
    n = _cube_side(n2)

    row_arg = p.argmax(axis=1)   # first occurrence = lowest column on ties
    col_arg = p.argmax(axis=0)   # first occurrence = lowest row on ties
    mutual_rows = np.nonzero(col_arg[row_arg] == np.arange(n2))[0]
    mutual = [(int(i), int(row_arg[i])) for i in mutual_rows]
    mutual.sort(key=lambda ij: (-p[ij[0], ij[1]], ij[0], ij[1]))
    selected = mutual[:k]

    if len(selected) < k:
        flat = p.ravel()
        kth = np.partition(flat, flat.size - k)[flat.size - k]
        cand = np.nonzero(flat >= kth)[0]
        cand = cand[np.lexsort((cand, -flat[cand]))]
        chosen = set(selected)
        for f in cand:
            pair = (int(f) // n2, int(f) % n2)
            if pair in chosen:
                continue
            selected.append(pair)
            chosen.add(pair)
            if len(selected) == k:
                break
    selected.sort(key=lambda ij: (-p[ij[0], ij[1]], ij[0], ij[1]))

    rows = np.array([ij[0] for ij in selected])
    cols = np.array([ij[1] for ij in selected])
    ground = np.stack([rows // n, rows % n], axis=1).astype(float)
    aerial = np.stack([cols // n, cols % n], axis=1).astype(float)
    return CorrespondenceSet(ground, aerial, p[rows, cols])
