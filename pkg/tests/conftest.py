"""Shared fixtures and independent oracle implementations.

The oracles here are deliberately naive (nested loops, brute-force window
scans, np.rot90/np.flip compositions) so that the production code and the
test expectations are computed by two unrelated routes.
"""

import json
import struct

import numpy as np
import pytest

from voxelpaint.autodiff import Tensor
from voxelpaint.masks import MaskGenParams, make_training_sample, sample_healthy_mask
from voxelpaint.nifti import write_nifti, write_nifti_mask
from voxelpaint.trainer import prepare_sample
from voxelpaint.volume import MaskVolume, Volume


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def gradcheck(build_loss, tensors, rng, n_samples=20, h=1e-3, floor=1e-3):
    """Worst relative error between autodiff and central finite differences.

    ``build_loss`` must rebuild the graph from the current ``tensors`` data on
    every call and return a scalar Tensor.  Gradients are taken once; the FD
    probes then re-evaluate the loss with single elements nudged by ±h.
    """
    for t in tensors:
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    grads = [np.array(t.grad, dtype=np.float64, copy=True) for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, grads):
        count = min(n_samples, t.size)
        idxs = rng.choice(t.size, size=count, replace=False)
        for idx in idxs:
            orig = t.data.flat[idx]
            t.data.flat[idx] = orig + h
            lp = build_loss().item()
            t.data.flat[idx] = orig - h
            lm = build_loss().item()
            t.data.flat[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            ad = g.flat[idx]
            rel = abs(ad - fd) / max(abs(ad), abs(fd), floor)
            worst = max(worst, rel)
    return worst


def gradcheck_global(build_loss, tensors, rng, n_samples=20, h=1e-3, floor=1e-3):
    """Like gradcheck, but samples n_samples positions across ALL tensors.

    Suited to whole-model checks, where probing 20 entries of every one of
    dozens of parameter tensors would cost thousands of forward passes.
    """
    for t in tensors:
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    grads = [np.array(t.grad, dtype=np.float64, copy=True) for t in tensors]
    sizes = np.array([t.size for t in tensors])
    bounds = np.cumsum(sizes)
    total = int(bounds[-1])
    flat_picks = rng.choice(total, size=min(n_samples, total), replace=False)
    worst = 0.0
    for pick in flat_picks:
        ti = int(np.searchsorted(bounds, pick, side="right"))
        idx = int(pick - (bounds[ti - 1] if ti else 0))
        t, g = tensors[ti], grads[ti]
        orig = t.data.flat[idx]
        t.data.flat[idx] = orig + h
        lp = build_loss().item()
        t.data.flat[idx] = orig - h
        lm = build_loss().item()
        t.data.flat[idx] = orig
        fd = (lp - lm) / (2.0 * h)
        ad = g.flat[idx]
        rel = abs(ad - fd) / max(abs(ad), abs(fd), floor)
        worst = max(worst, rel)
    return worst


def leaf(rng, shape, scale=1.0, dtype=np.float64, offset=0.0):
    data = (rng.standard_normal(shape) * scale + offset).astype(dtype)
    return Tensor(data, requires_grad=True)


def away_from_zero(rng, shape, low=0.1, high=1.0):
    """Leaf whose entries keep |x| >= low, so kinked ops see no sign flips."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(mag * sign, requires_grad=True)


def separated_pool_input(rng, n, c, d, h, w):
    """Random values whose in-window gaps are >= 0.2: FD can't flip the argmax."""
    blocks = (n, c, d // 2, h // 2, w // 2)
    ranks = np.stack([rng.permutation(8) for _ in range(int(np.prod(blocks)))])
    vals = ranks * 0.25 + rng.uniform(0.0, 0.05, size=ranks.shape)
    win = vals.reshape(*blocks, 2, 2, 2)
    data = win.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(n, c, d, h, w)
    return Tensor(np.ascontiguousarray(data), requires_grad=True)


# ---------------------------------------------------------------------------
# Naive convolution oracle
# ---------------------------------------------------------------------------

def conv3d_oracle(x, weight, bias=None, padding=0):
    """Direct nested-loop 3-D cross-correlation in float64."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    n, ci, d, hh, ww = x.shape
    co, ci2, k, _, _ = weight.shape
    assert ci == ci2
    p = padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    od, oh, ow = d + 2 * p - k + 1, hh + 2 * p - k + 1, ww + 2 * p - k + 1
    out = np.zeros((n, co, od, oh, ow), dtype=np.float64)
    for nn in range(n):
        for oc in range(co):
            for z in range(od):
                for y in range(oh):
                    for xx in range(ow):
                        acc = 0.0
                        for ic in range(ci):
                            for dz in range(k):
                                for dy in range(k):
                                    for dx in range(k):
                                        acc += (xp[nn, ic, z + dz, y + dy, xx + dx]
                                                * weight[oc, ic, dz, dy, dx])
                        if bias is not None:
                            acc += float(bias[oc])
                        out[nn, oc, z, y, xx] = acc
    return out


# ---------------------------------------------------------------------------
# Brute-force SSIM oracle
# ---------------------------------------------------------------------------

def ssim3d_oracle(a, b, window, c1, c2):
    """Mean SSIM over all valid window positions, one window at a time."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = np.asarray(window, dtype=np.float64)
    k = w.shape[0]
    d, hh, ww = a.shape
    vals = []
    for z in range(d - k + 1):
        for y in range(hh - k + 1):
            for x in range(ww - k + 1):
                wa = a[z:z + k, y:y + k, x:x + k]
                wb = b[z:z + k, y:y + k, x:x + k]
                mx = float((w * wa).sum())
                my = float((w * wb).sum())
                vx = float((w * wa * wa).sum()) - mx * mx
                vy = float((w * wb * wb).sum()) - my * my
                cxy = float((w * wa * wb).sum()) - mx * my
                num = (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                den = (mx * mx + my * my + c1) * (vx + vy + c2)
                vals.append(num / den)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Morphology oracles (Chebyshev ball = cube structuring element)
# ---------------------------------------------------------------------------

def dilate_oracle(bits, radius):
    bits = np.asarray(bits, dtype=bool)
    out = np.zeros_like(bits)
    n0, n1, n2 = bits.shape
    for x, y, z in np.argwhere(bits):
        out[max(0, x - radius):x + radius + 1,
            max(0, y - radius):y + radius + 1,
            max(0, z - radius):z + radius + 1] = True
    return out


def erode_oracle(bits, radius):
    bits = np.asarray(bits, dtype=bool)
    padded = np.pad(bits, radius, constant_values=False)
    out = np.zeros_like(bits)
    for x in range(bits.shape[0]):
        for y in range(bits.shape[1]):
            for z in range(bits.shape[2]):
                block = padded[x:x + 2 * radius + 1,
                               y:y + 2 * radius + 1,
                               z:z + 2 * radius + 1]
                out[x, y, z] = bool(block.all())
    return out


# ---------------------------------------------------------------------------
# Synthetic data builders
# ---------------------------------------------------------------------------

def smooth_volume(rng, n=16, peak=1000.0, cells=2):
    """Smooth positive intensities in [0.2*peak, peak], shape (n, n, n)."""
    base = rng.random((cells,) * 3)
    up = base
    for axis in range(3):
        up = up.repeat(n // cells, axis)
    for _ in range(2):
        for axis in range(3):
            up = (up + np.roll(up, 1, axis) + np.roll(up, -1, axis)) / 3.0
    up = (up - up.min()) / (up.max() - up.min() + 1e-9)
    return ((0.2 + 0.8 * up) * peak).astype(np.float32)


def ball(n, center, r):
    grids = np.indices((n, n, n)).astype(float)
    d2 = sum((grids[i] - center[i]) ** 2 for i in range(3))
    return d2 <= r * r


def build_case(seed, n=16, margin=1):
    """One synthetic case: scan, brain, tumor, and a sampled healthy mask."""
    rng = np.random.default_rng(seed)
    brain_bits = ball(n, ((n - 1) / 2,) * 3, n * 0.41)
    vox = smooth_volume(rng, n)
    vox[~brain_bits] = 0.0
    t1n = Volume(vox)
    center = rng.integers(n // 2 - 2, n // 2 + 2, size=3)
    tumor_bits = ball(n, tuple(center), 1.4) & brain_bits
    tumor = MaskVolume(tumor_bits, role="unhealthy")
    brain = MaskVolume(brain_bits, role="brain")
    params = MaskGenParams(margin=margin, max_attempts=100)
    healthy = sample_healthy_mask(brain, tumor, params, rng)
    return t1n, brain, tumor, healthy


def build_prepared_samples(count=10, n=16, seed=123):
    """Prepared (case_id, sample) pairs for trainer tests."""
    out = []
    for i in range(count):
        t1n, _, tumor, healthy = build_case(seed + i, n=n)
        sample = make_training_sample(f"case{i:02d}", t1n, tumor, healthy)
        out.append((f"case{i:02d}", prepare_sample(sample, (n, n, n))))
    return out


@pytest.fixture(scope="session")
def tiny_case():
    return build_case(2026, n=16)


def make_input_dir(root, n_cases=2, n=16, seed=400):
    """A raw-scan folder: {case}-t1n.nii.gz plus {case}-mask-unhealthy.nii.gz."""
    input_dir = root / "scans"
    input_dir.mkdir()
    for i in range(n_cases):
        t1n, _brain, tumor, _healthy = build_case(seed + i, n=n)
        case_id = f"case{i:02d}"
        write_nifti(t1n, input_dir / f"{case_id}-t1n.nii.gz")
        write_nifti_mask(tumor, input_dir / f"{case_id}-mask-unhealthy.nii.gz")
    return input_dir


def write_config(path, payload):
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


# ---------------------------------------------------------------------------
# NIfTI fixtures built byte by byte
# ---------------------------------------------------------------------------

NIFTI_HDR = 348


def make_nifti_bytes(shape=(3, 4, 5), datatype=16, data=None, dim0=3,
                     magic=b"n+1\x00", sizeof_hdr=NIFTI_HDR, slope=1.0, inter=0.0,
                     vox_offset=352.0, trailing=(1, 1, 1, 1)):
    dx, dy, dz = shape
    header = bytearray(NIFTI_HDR)
    struct.pack_into("<i", header, 0, sizeof_hdr)
    dims = (dim0, dx, dy, dz) + trailing
    struct.pack_into("<8h", header, 40, *dims)
    struct.pack_into("<h", header, 70, datatype)
    struct.pack_into("<f", header, 108, vox_offset)
    struct.pack_into("<2f", header, 112, slope, inter)
    header[344:348] = magic
    if data is None:
        data = np.zeros((dz, dy, dx), dtype=np.float32)
    pad = b"\x00" * max(0, int(vox_offset) - NIFTI_HDR)
    return bytes(header) + pad + np.ascontiguousarray(data).tobytes()
