"""Chunked stochastic code and the iterative list-and-check decoder.

A codeword is a concatenation of ``K`` chunks of ``theta`` coordinates.  For
every message and chunk the code stores ``2**beta`` candidate sequences drawn
uniformly from the ball of radius ``sqrt(Phi_T)``; the encoder picks one
candidate per chunk independently and uniformly at random.

The decoder walks the division point ``mu`` upwards from ``mu0``.  A message
enters the pre-list if some prefix of it lies within ``F_{mu+1}`` (squared
distance) of the received prefix, and survives into the post-list if some
suffix of it lies within ``nN - F_mu`` of the received suffix.  Because the
chunks occupy disjoint coordinates, the best concatenation is found chunk by
chunk: the minimum squared distance over concatenations is the sum over
chunks of the per-chunk minima.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import BlockConfig, ChannelParams, ChunkedAllocation, within_budget

__all__ = [
    "ERROR",
    "LIST_RTOL",
    "ConfigurationError",
    "CodebookTooLarge",
    "Codebook",
    "BudgetReference",
    "DecoderOutput",
    "repetition_pair",
    "sample_uniform_ball",
    "generate_codebook",
    "encode",
    "encode_indices",
    "budget_reference",
    "chunk_distances",
    "pre_list",
    "post_list",
    "decode",
    "accumulated_power",
    "critical_point",
    "chunk_sum_bounds",
    "check_chunk_sums",
    "save_codebook",
    "load_codebook",
]

log = logging.getLogger(__name__)

#: Decoder output when no message passes both lists.
ERROR = -1

#: Relative slack (times ``nN``) on list thresholds and crossing tests.
LIST_RTOL = 1e-9

#: Default cap on the number of stored floats in a generated codebook.
MAX_CODEBOOK_FLOATS = 50_000_000

_MAGIC = b"CJCB"
_VERSION = 1


class ConfigurationError(ValueError):
    """Parameters for which the decoder's reference sequence does not exist."""


class CodebookTooLarge(ValueError):
    """The requested codebook exceeds the configured memory cap."""


@dataclass(frozen=True, eq=False)
class Codebook:
    """Finite chunked stochastic code.

    Attributes
    ----------
    entries : ndarray, shape (num_messages, K, 2**beta, theta)
        Candidate chunk sequences.
    block : BlockConfig
    phi : ChunkedAllocation
        Per-chunk energy caps ``Phi_T``; every stored chunk satisfies
        ``||x||^2 <= Phi_T``.
    beta : int
        ``log2`` of the number of candidates per (message, chunk).
    seed : int or None
        Seed used by :func:`generate_codebook`, if any.
    """

    entries: np.ndarray
    block: BlockConfig
    phi: ChunkedAllocation
    beta: int
    seed: Optional[int] = None

    def __post_init__(self):
        e = np.ascontiguousarray(self.entries, dtype=float)
        if e.ndim != 4:
            raise ValueError("entries must have shape (messages, K, 2**beta, theta)")
        W, K, E, theta = e.shape
        if (K, theta) != (self.block.K, self.block.theta):
            raise ValueError("entries shape does not match the block configuration")
        if E != 2 ** self.beta:
            raise ValueError(f"expected {2 ** self.beta} entries per chunk, got {E}")
        if self.phi.K != K:
            raise ValueError("phi must have one value per chunk")
        norms = np.einsum("wkei,wkei->wke", e, e)
        if np.any(norms > self.phi.values[None, :, None] * (1 + 1e-12) + 1e-300):
            raise ValueError("a stored chunk exceeds its energy cap")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def num_messages(self) -> int:
        return self.entries.shape[0]

    @property
    def entries_per_chunk(self) -> int:
        return self.entries.shape[2]

    @property
    def n(self) -> int:
        return self.block.n

    @property
    def radii(self) -> np.ndarray:
        return np.sqrt(self.phi.values)

    @property
    def rate(self) -> float:
        return math.log2(self.num_messages) / self.n

    def average_powers(self) -> np.ndarray:
        """Expected ``X_t**2`` per coordinate under a uniform message and encoder."""
        sq = np.mean(self.entries ** 2, axis=(0, 2))  # (K, theta)
        return sq.reshape(-1)

    def prefix_entries(self, m: int) -> List[np.ndarray]:
        """Per chunk touched by the first ``m`` coordinates, the entries restricted to them."""
        theta = self.block.theta
        out = []
        for T in range(math.ceil(m / theta)):
            width = min(theta, m - T * theta)
            out.append(self.entries[:, T, :, :width])
        return out

    @classmethod
    def from_entries(cls, entries, phi=None, seed=None) -> "Codebook":
        """Wrap explicit candidates; ``phi`` defaults to the largest chunk energy."""
        e = np.asarray(entries, dtype=float)
        W, K, E, theta = e.shape
        beta = int(round(math.log2(E)))
        if phi is None:
            phi = np.einsum("wkei,wkei->wke", e, e).max(axis=(0, 2))
            phi = np.maximum(phi, 1e-12)
        return cls(e, BlockConfig(K * theta, theta, K), ChunkedAllocation(phi), beta, seed)


def repetition_pair(n: int, signal_power: float) -> Codebook:
    """Two-message code ``x(w) = (-1)**w sqrt(P) (1, ..., 1)`` with one chunk per coordinate."""
    a = math.sqrt(signal_power)
    entries = np.empty((2, n, 1, 1))
    entries[0] = a
    entries[1] = -a
    return Codebook.from_entries(entries, phi=np.full(n, signal_power))


def sample_uniform_ball(theta: int, radius: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform draw(s) from the ``theta``-dimensional ball of the given radius.

    The direction is a normalized standard Gaussian vector and the radius is
    ``radius * U**(1/theta)`` with ``U`` uniform on ``(0, 1]``, so
    ``E||X||^2 = radius**2 * theta / (theta + 2)``.
    """
    if theta < 1 or not radius > 0:
        raise ValueError("theta must be >= 1 and radius > 0")
    shape = (theta,) if size is None else tuple(np.atleast_1d(size)) + (theta,)
    g = rng.standard_normal(shape)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    norm = np.where(norm > 0, norm, 1.0)
    u = 1.0 - rng.random(shape[:-1] + (1,))
    x = g / norm * (radius * u ** (1.0 / theta))
    # guard against rounding pushing a point a hair outside the ball
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(nrm > radius, x * (radius / nrm), x)


def generate_codebook(params: ChannelParams, block: BlockConfig, phi: ChunkedAllocation, beta: int,
                      num_messages: int, seed: int, max_floats: int = MAX_CODEBOOK_FLOATS) -> Codebook:
    """Draw every candidate independently and uniformly from its chunk's ball."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if num_messages < 1:
        raise ValueError("num_messages must be >= 1")
    phi = phi if isinstance(phi, ChunkedAllocation) else ChunkedAllocation(phi)
    if phi.K != block.K:
        raise ValueError("phi must have K entries")
    if not within_budget(phi.total, block.n * params.signal_power):
        raise ValueError("sum of chunk energies exceeds nP")
    E = 2 ** beta
    size = num_messages * block.K * E * block.theta
    if size > max_floats:
        raise CodebookTooLarge(f"codebook needs {size} floats, cap is {max_floats}")
    rng = np.random.default_rng(seed)
    entries = np.empty((num_messages, block.K, E, block.theta))
    for T in range(block.K):
        entries[:, T] = sample_uniform_ball(block.theta, math.sqrt(phi.values[T]), rng,
                                            size=(num_messages, E))
    return Codebook(entries, block, phi, beta, seed)


def encode_indices(codebook: Codebook, rng: np.random.Generator) -> np.ndarray:
    """Uniform candidate index for every chunk."""
    return rng.integers(codebook.entries_per_chunk, size=codebook.block.K)


def encode(codebook: Codebook, w: int, rng: np.random.Generator, indices=None) -> np.ndarray:
    """Codeword for message ``w``: one uniformly chosen candidate per chunk."""
    if not 0 <= w < codebook.num_messages:
        raise ValueError(f"message {w} out of range")
    if indices is None:
        indices = encode_indices(codebook, rng)
    K = codebook.block.K
    return codebook.entries[w, np.arange(K), indices].reshape(-1).copy()


@dataclass(frozen=True)
class BudgetReference:
    """Decoder's reference sequence ``F_1..F_K`` and starting point ``mu0``.

    ``F_mu = nN - sum_{T = mu + k_delta + 1}^{K} Phi_T / 2`` with
    ``k_delta = round(K delta) >= 1``.  ``mu0`` satisfies
    ``F_{mu0} <= 0 < F_{mu0 + 1}``.
    """

    F: np.ndarray
    delta: float
    k_delta: int
    mu0: int
    noise_total: float

    @property
    def K(self) -> int:
        return self.F.size

    def at(self, mu: int) -> float:
        """``F_mu`` for ``1 <= mu <= K + 1``, with ``F_{K+1}`` taken as ``nN``."""
        if mu == self.K + 1:
            return self.noise_total
        if not 1 <= mu <= self.K:
            raise IndexError(mu)
        return float(self.F[mu - 1])

    @property
    def tol(self) -> float:
        return LIST_RTOL * self.noise_total


def _k_delta(K: int, delta: float) -> int:
    return max(1, int(math.floor(K * delta + 0.5)))


def _reference_F(phi: np.ndarray, noise_total: float, kd: int) -> np.ndarray:
    K = phi.size
    # tail[j] = sum_{T > j} Phi_T / 2 over 1-based T, for j = 0..K
    tail = np.concatenate((np.cumsum(phi[::-1])[::-1], [0.0])) / 2.0
    F = np.empty(K)
    for mu in range(1, K + 1):
        start = mu + kd + 1
        F[mu - 1] = noise_total - (tail[start - 1] if start <= K else 0.0)
    return F


def budget_reference(phi, params: ChannelParams, block: BlockConfig, delta: float = 0.1) -> BudgetReference:
    """Reference sequence with automatic halving of ``delta`` until ``F_1 <= 0``.

    Raises
    ------
    ConfigurationError
        If ``P <= 2N`` or no ``delta`` with ``k_delta >= 1`` gives ``F_1 <= 0``.
    """
    if params.plotkin_regime:
        raise ConfigurationError("the reference sequence requires P > 2N")
    if not 0 < delta < 1:
        raise ConfigurationError("delta must lie in (0, 1)")
    phi_v = np.asarray(getattr(phi, "values", phi), dtype=float)
    if phi_v.size != block.K:
        raise ConfigurationError("phi must have K entries")
    nN = block.n * params.noise_power
    d = delta
    while True:
        kd = _k_delta(block.K, d)
        F = _reference_F(phi_v, nN, kd)
        if F[0] <= 0:
            break
        if kd == 1:
            raise ConfigurationError(
                f"no starting point: F_1 = {F[0]:.6g} > 0 even with k_delta = 1"
            )
        d /= 2.0
    if d != delta:
        warnings.warn(f"delta reduced from {delta} to {d} so that F_1 <= 0", stacklevel=2)
    mu0 = int(np.count_nonzero(F <= 0))
    if not 1 <= mu0 <= block.K - kd - 1:
        raise ConfigurationError(f"starting point {mu0} outside [1, {block.K - kd - 1}]")
    F.setflags(write=False)
    return BudgetReference(F, d, kd, mu0, nN)


def chunk_sum_bounds(phi, theta: int) -> Tuple[float, float]:
    """Constants ``(c1, c2)`` with ``c1 theta <= Phi_T <= c2 theta`` for every chunk."""
    v = np.asarray(getattr(phi, "values", phi), dtype=float)
    return float(v.min() / theta), float(v.max() / theta)


def check_chunk_sums(phi, ref: BudgetReference, theta: int, c1: float, c2: float) -> None:
    """Assert that every window of ``k_delta`` chunk energies is ``Theta(k_delta theta)``."""
    v = np.asarray(getattr(phi, "values", phi), dtype=float)
    kd, K = ref.k_delta, v.size
    lo, hi = c1 * kd * theta, c2 * kd * theta
    for mu in range(1, K - kd):
        s = float(v[mu: mu + kd].sum())
        if not (lo * (1 - 1e-12) <= s <= hi * (1 + 1e-12)):
            raise AssertionError(f"chunk sum {s:.6g} at mu={mu} outside [{lo:.6g}, {hi:.6g}]")


def chunk_distances(codebook: Codebook, y) -> np.ndarray:
    """``D[w, T]``: smallest squared distance from ``y`` to a candidate of ``w`` in chunk ``T``."""
    y = np.asarray(y, dtype=float)
    if y.size != codebook.n:
        raise ValueError("received word has the wrong length")
    yc = y.reshape(codebook.block.K, codebook.block.theta)
    diff = codebook.entries - yc[None, :, None, :]
    return np.einsum("wkei,wkei->wke", diff, diff).min(axis=2)


def pre_list(codebook: Codebook, y_prefix, mu: int, ref: BudgetReference,
             distances: Optional[np.ndarray] = None) -> np.ndarray:
    """Messages with a prefix within ``F_{mu+1}`` of the received prefix (sorted ids)."""
    D = _prefix_distances(codebook, y_prefix, mu, distances)
    return np.flatnonzero(D <= ref.at(mu + 1) + ref.tol)


def post_list(codebook: Codebook, pre: Sequence[int], y_suffix, mu: int, ref: BudgetReference,
              distances: Optional[np.ndarray] = None) -> np.ndarray:
    """Members of ``pre`` with a suffix within ``nN - F_mu`` of the received suffix."""
    pre = np.asarray(pre, dtype=int)
    if pre.size == 0:
        return pre
    K, theta = codebook.block.K, codebook.block.theta
    if distances is None:
        ys = np.asarray(y_suffix, dtype=float)
        if ys.size != (K - mu) * theta:
            raise ValueError("suffix has the wrong length")
        full = np.concatenate((np.zeros(mu * theta), ys))
        distances = chunk_distances(codebook, full)
    D = distances[pre, mu:].sum(axis=1)
    return pre[D <= ref.noise_total - ref.at(mu) + ref.tol]


def _prefix_distances(codebook, y_prefix, mu, distances):
    if distances is None:
        theta = codebook.block.theta
        yp = np.asarray(y_prefix, dtype=float)
        if yp.size != mu * theta:
            raise ValueError("prefix has the wrong length")
        full = np.concatenate((yp, np.zeros(codebook.n - yp.size)))
        distances = chunk_distances(codebook, full)
    return distances[:, :mu].sum(axis=1)


@dataclass(frozen=True)
class DecoderOutput:
    """Decoded message (or :data:`ERROR`), the chunk where decoding stopped
    and the ``(mu, pre-list size, post-list size)`` trace."""

    estimate: int
    stop_chunk: int
    list_trace: Tuple[Tuple[int, int, int], ...] = field(default=())

    @property
    def is_error(self) -> bool:
        return self.estimate == ERROR


def decode(codebook: Codebook, ref: BudgetReference, y, rng: Optional[np.random.Generator] = None,
           randomize: bool = False) -> DecoderOutput:
    """List-and-check decoding starting at ``mu0``.

    Returns the lowest surviving message id, or a uniformly random survivor
    when ``randomize`` is set (``rng`` required).  At ``mu = K`` the pre-list
    threshold ``F_{K+1}`` is taken as ``nN``.
    """
    D = chunk_distances(codebook, y)
    pref = np.cumsum(D, axis=1)
    total = pref[:, -1]
    trace = []
    K = codebook.block.K
    for mu in range(ref.mu0, K + 1):
        if mu == K:
            log.debug("pre-list at mu=K uses nN as its threshold")
        pre = np.flatnonzero(pref[:, mu - 1] <= ref.at(mu + 1) + ref.tol)
        suffix = total[pre] - pref[pre, mu - 1]
        post = pre[suffix <= ref.noise_total - ref.at(mu) + ref.tol]
        trace.append((mu, int(pre.size), int(post.size)))
        if post.size:
            if randomize:
                if rng is None:
                    raise ValueError("randomize=True needs an rng")
                est = int(post[rng.integers(post.size)])
            else:
                est = int(post[0])
            return DecoderOutput(est, mu, tuple(trace))
    return DecoderOutput(ERROR, K, tuple(trace))


def accumulated_power(s, theta: int) -> ChunkedAllocation:
    """Per-chunk noise energies ``Psi_T``."""
    s = np.asarray(s, dtype=float).ravel()
    if theta < 1 or s.size % theta:
        raise ValueError("length must be a positive multiple of theta")
    return ChunkedAllocation((s.reshape(-1, theta) ** 2).sum(axis=1), nonnegative=True)


def critical_point(psi, ref: BudgetReference) -> Optional[int]:
    """Chunk ``mu1`` in ``[mu0, K - k_delta]`` where the noise crosses the reference.

    Returns the smallest ``mu1 >= mu0`` with ``S(mu1) >= F_{mu1}`` and
    ``S(mu1 + 1) < F_{mu1 + 1}``, where ``S`` is the cumulative noise
    energy, or None if there is none in range (the noise then exceeds
    ``nN``).  Both comparisons allow a slack of ``LIST_RTOL * nN`` so that
    noise spending exactly ``nN`` is handled consistently with the lists.
    """
    v = np.asarray(getattr(psi, "values", psi), dtype=float)
    S = np.cumsum(v)
    tol = ref.tol

    def F(mu):
        return ref.at(mu)

    for mu in range(ref.mu0, ref.K - ref.k_delta + 1):
        if S[mu - 1] >= F(mu) - tol and S[mu] < F(mu + 1) + tol:
            return mu
    return None


# ---------------------------------------------------------------------------
# serialization


def save_codebook(codebook: Codebook, path, fmt: Optional[str] = None) -> None:
    """Write the codebook as a versioned binary (``.cjcb``) or CSV dump.

    Both forms are chunk-major: all candidates of chunk 1 (message by
    message), then chunk 2, and so on.  The binary form stores
    little-endian 64-bit floats.
    """
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "binary")
    W, K, E, theta = codebook.entries.shape
    seed = -1 if codebook.seed is None else int(codebook.seed)
    if fmt == "binary":
        header = _MAGIC + struct.pack("<HIIIIq", _VERSION, W, K, E, theta, seed)
        body = codebook.phi.values.astype("<f8").tobytes()
        body += np.ascontiguousarray(codebook.entries.transpose(1, 0, 2, 3)).astype("<f8").tobytes()
        path.write_bytes(header + body)
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["#causaljam-codebook", f"version={_VERSION}", f"num_messages={W}",
                         f"num_chunks={K}", f"entries={E}", f"theta={theta}", f"seed={seed}"])
            wr.writerow(["#phi"] + [repr(float(v)) for v in codebook.phi.values])
            wr.writerow(["chunk", "message", "entry"] + [f"x{i}" for i in range(theta)])
            for T in range(K):
                for w in range(W):
                    for e in range(E):
                        wr.writerow([T, w, e] + [repr(float(v)) for v in codebook.entries[w, T, e]])
    else:
        raise ValueError("fmt must be 'binary' or 'csv'")


def load_codebook(path) -> Codebook:
    """Read a dump written by :func:`save_codebook` (format detected from content)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == _MAGIC:
        hsize = 4 + struct.calcsize("<HIIIIq")
        version, W, K, E, theta, seed = struct.unpack("<HIIIIq", raw[4:hsize])
        if version != _VERSION:
            raise ValueError(f"unsupported codebook version {version}")
        data = np.frombuffer(raw, dtype="<f8", offset=hsize).astype(float)
        if data.size != K + K * W * E * theta:
            raise ValueError("truncated codebook file")
        phi = data[:K]
        entries = data[K:].reshape(K, W, E, theta).transpose(1, 0, 2, 3)
    else:
        try:
            rows = list(csv.reader(io.StringIO(raw.decode())))
            meta = dict(item.split("=", 1) for item in rows[0][1:])
            if int(meta["version"]) != _VERSION:
                raise ValueError(f"unsupported codebook version {meta['version']}")
            W, K, E, theta = (int(meta[k]) for k in ("num_messages", "num_chunks", "entries", "theta"))
            seed = int(meta["seed"])
            phi = np.array([float(v) for v in rows[1][1:]])
            entries = np.empty((W, K, E, theta))
            for r in rows[3:]:
                T, w, e = int(r[0]), int(r[1]), int(r[2])
                entries[w, T, e] = [float(v) for v in r[3:]]
        except (UnicodeDecodeError, csv.Error, KeyError, IndexError) as exc:
            raise ValueError(f"not a codebook dump: {exc}") from exc
    beta = int(round(math.log2(E)))
    block = BlockConfig(K * theta, theta, K)
    return Codebook(np.ascontiguousarray(entries), block, ChunkedAllocation(phi), beta,
                    None if seed < 0 else seed)
