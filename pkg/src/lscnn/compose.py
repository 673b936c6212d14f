"""Fixed 3x3 patch grid and composition of nine PatchNets into one lsCNN.

Patches are numbered row-major from the top-left: p1 p2 p3 on the top
row, p9 bottom-right. PatchNet k owns the k-th consecutive block of
output channels in every conv layer of the composed network. From Conv2
on, block k only reads input block k; all cross-block kernels start at
exactly zero. Conv1 reads the shared image planes, so every block keeps
its full input kernel there.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arch
from .errors import CompositionError, DataError
from .tensor import fill_normal

N_PATCHES = 9


@dataclass(frozen=True)
class PatchGrid:
    image_size: int
    remainder: str = "drop"  # "drop": leftover rows/cols at bottom/right; "center": split evenly

    def __post_init__(self):
        if self.image_size < 3:
            raise DataError(f"image of {self.image_size} pixels cannot hold a 3x3 grid")
        if self.remainder not in ("drop", "center"):
            raise DataError(f"unknown remainder policy {self.remainder!r}")

    @property
    def patch_size(self) -> int:
        return self.image_size // 3

    @property
    def offset(self) -> int:
        if self.remainder == "center":
            return (self.image_size - 3 * self.patch_size) // 2
        return 0

    def bounds(self, k: int):
        """``(row0, row1, col0, col1)`` of patch ``k`` (1-based)."""
        if not 1 <= k <= N_PATCHES:
            raise IndexError(f"patch index must be in 1..9, got {k}")
        p, off = self.patch_size, self.offset
        r, c = divmod(k - 1, 3)
        return off + p * r, off + p * (r + 1), off + p * c, off + p * (c + 1)


def extract_patch(images, grid: PatchGrid, k: int):
    """Patch ``k`` of an image (C x H x W) or a batch (N x C x H x W)."""
    h, w = images.shape[-2:]
    if h != grid.image_size or w != grid.image_size:
        raise DataError(f"expected {grid.image_size}x{grid.image_size} images, got {h}x{w}")
    r0, r1, c0, c1 = grid.bounds(k)
    return images[..., r0:r1, c0:c1]


def split_patches(face, grid: PatchGrid | None = None):
    """Nine patches p1..p9 of one face (C x H x W), as copies."""
    if face.ndim != 3:
        raise DataError(f"expected a C x H x W face, got shape {face.shape}")
    if face.shape[1] < 3 or face.shape[2] < 3:
        raise DataError(f"face {face.shape[1]}x{face.shape[2]} is smaller than 3x3 pixels")
    grid = grid or PatchGrid(face.shape[1])
    return [extract_patch(face, grid, k).copy() for k in range(1, N_PATCHES + 1)]


def assemble_patches(patches, grid: PatchGrid):
    """Inverse of :func:`split_patches`; pixels outside the grid are zero."""
    c = patches[0].shape[0]
    img = np.zeros((c, grid.image_size, grid.image_size), dtype=patches[0].dtype)
    for k, patch in enumerate(patches, start=1):
        r0, r1, c0, c1 = grid.bounds(k)
        img[:, r0:r1, c0:c1] = patch
    return img


def block_ranges(width: int):
    """The nine consecutive ``(lo, hi)`` channel ranges of a composed layer."""
    if width % N_PATCHES:
        raise CompositionError(f"width {width} is not divisible into 9 blocks")
    w = width // N_PATCHES
    return [(w * k, w * (k + 1)) for k in range(N_PATCHES)]


def compose(patchnets, lscnn_spec, fc_std=0.01, rng=None):
    """Build lsCNN parameters from nine trained PatchNet parameter dicts.

    Conv kernels, conv biases and the per-channel batchnorm parameters and
    running statistics are copied into block positions; cross-block
    kernels are zero. FC1 and Softmax weights are drawn from
    Normal(0, fc_std) with zero biases; FC1's batchnorm starts at identity.
    """
    if len(patchnets) != N_PATCHES:
        raise CompositionError(f"need 9 PatchNets, got {len(patchnets)}")
    if rng is None:
        raise CompositionError("compose needs an rng for the fully connected layers")
    target = arch.param_shapes(lscnn_spec)
    convs = lscnn_spec.conv_layers()
    out = {}
    prev_width = None
    for layer in convs:
        wname, bname = f"{layer.name}.weight", f"{layer.name}.bias"
        bn = arch.bn_name(layer)
        cout, cin, k, _ = target[wname]
        src_shapes = {tuple(p[wname].shape) for p in patchnets}
        if len(src_shapes) != 1:
            raise CompositionError(f"{wname}: PatchNets disagree on shape: {sorted(src_shapes)}")
        pout, pin, pk, _ = src_shapes.pop()
        if pout * N_PATCHES != cout or pk != k:
            raise CompositionError(
                f"{layer.name}: lsCNN width {cout} is not 9 x PatchNet width {pout} (kernel {k} vs {pk})"
            )
        first = prev_width is None
        if first and pin != cin:
            raise CompositionError(f"{layer.name}: input channels differ ({cin} vs {pin})")
        if not first and pin * N_PATCHES != cin:
            raise CompositionError(f"{layer.name}: lsCNN input width {cin} is not 9 x {pin}")
        dtype = patchnets[0][wname].dtype
        weight = np.zeros((cout, cin, k, k), dtype=dtype)
        vecs = {name: np.zeros(cout, dtype=dtype) for name in
                (bname, f"{bn}.mean", f"{bn}.var", f"{bn}.gamma", f"{bn}.beta")}
        for blk, (lo, hi) in enumerate(block_ranges(cout)):
            src = patchnets[blk]
            if first:
                weight[lo:hi] = src[wname]
            else:
                weight[lo:hi, pin * blk:pin * (blk + 1)] = src[wname]
            for name, vec in vecs.items():
                vec[lo:hi] = src[name]
        out[wname] = weight
        out.update(vecs)
        prev_width = cout
    for name, shape in target.items():
        if name in out:
            continue
        suffix = name.rsplit(".", 1)[1]
        dtype = patchnets[0][f"{convs[0].name}.weight"].dtype
        if suffix == "weight":
            out[name] = fill_normal(shape, 0.0, fc_std, rng, dtype)
        elif suffix in ("var", "gamma"):
            out[name] = np.ones(shape, dtype=dtype)
        else:
            out[name] = np.zeros(shape, dtype=dtype)
    return {name: out[name] for name in target}


def cross_block_max(params, spec):
    """Largest |weight| connecting different blocks, over Conv2 onwards."""
    worst = 0.0
    for layer in spec.conv_layers()[1:]:
        w = params[f"{layer.name}.weight"]
        outs, ins = block_ranges(w.shape[0]), block_ranges(w.shape[1])
        for i, (olo, ohi) in enumerate(outs):
            for j, (ilo, ihi) in enumerate(ins):
                if i != j:
                    worst = max(worst, float(np.abs(w[olo:ohi, ilo:ihi]).max()))
    return worst


@dataclass
class IndependenceReport:
    ok: bool
    max_diff: list = field(default_factory=list)  # per block, over the last pool output
    violations: list = field(default_factory=list)

    def __str__(self):
        if self.ok:
            return "block independence holds for all 9 blocks"
        return "block independence violated:\n  " + "\n  ".join(self.violations)


def _perturb_blocks(params, spec, keep, rng):
    """Copy of ``params`` with every conv-stage parameter of blocks != keep perturbed."""
    p = {k: v.copy() for k, v in params.items()}
    for layer in spec.conv_layers():
        bn = arch.bn_name(layer)
        ranges = block_ranges(layer.out)
        for blk, (lo, hi) in enumerate(ranges):
            if blk == keep:
                continue
            for name in (f"{layer.name}.weight", f"{layer.name}.bias", f"{bn}.gamma",
                         f"{bn}.beta", f"{bn}.mean"):
                p[name][lo:hi] += rng.standard_normal(p[name][lo:hi].shape).astype(p[name].dtype)
            v = f"{bn}.var"
            p[v][lo:hi] += np.abs(rng.standard_normal(hi - lo)).astype(p[v].dtype)
    return p


def verify_block_independence(params, spec, rng, n_inputs=2):
    """Perturb all other blocks and check block k's last-pool features are unchanged bitwise."""
    last_pool = [l.name for l in spec.layers if l.kind == "pool"][-1]
    x = rng.standard_normal((n_inputs,) + spec.input_shape).astype(params["Conv1.weight"].dtype)
    base, _, _ = arch.forward(spec, params, x, "infer", stop_at=last_pool)
    report = IndependenceReport(ok=True)
    for blk, (lo, hi) in enumerate(block_ranges(base.shape[1])):
        perturbed = _perturb_blocks(params, spec, blk, rng)
        feats, _, _ = arch.forward(spec, perturbed, x, "infer", stop_at=last_pool)
        diff = float(np.abs(feats[:, lo:hi].astype(np.float64) - base[:, lo:hi]).max())
        report.max_diff.append(diff)
        if not np.array_equal(feats[:, lo:hi], base[:, lo:hi]):
            report.ok = False
            report.violations.append(
                f"block p{blk + 1}: {last_pool} channels [{lo}, {hi}) changed, max |diff| = {diff:.3e}"
            )
    return report
