"""Shared numeric helpers and reproducibility plumbing."""

import hashlib
import json

import numpy as np


def softplus(z):
    """Overflow-safe log(1 + e^z); linear for large z, ~e^z for very negative z."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def derive_seed(master_seed, *tags):
    """Map (master_seed, tags...) to a 64-bit seed via SHA-256.

    Every random stream in the pipeline draws from a seed produced here, so
    reruns with the same master seed are bit-identical regardless of
    scheduling or stage order.
    """
    key = "|".join(str(t) for t in (master_seed,) + tags)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master_seed, *tags):
    return np.random.default_rng(derive_seed(master_seed, *tags))


def floor_spectrum(mat, floor):
    """Symmetrize and clip eigenvalues from below; returns a PSD matrix."""
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def config_hash(mapping):
    """Short stable hash of a flat configuration mapping, for provenance."""
    canon = json.dumps(mapping, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
