"""
Scenario configuration, channel/error sampling and filter containers.

Array conventions used throughout the package:

* channels are stored as one array of shape ``(..., K, K, N, M)`` where
  ``H[..., k, j]`` is the N x M channel from transmitter ``j`` to
  receiver ``k``;
* precoders ``V`` have shape ``(..., K, M, Dmax)`` and receive filters
  ``U`` have shape ``(..., K, N, Dmax)``, where ``Dmax = max(D)``. Columns
  beyond ``D[j]`` of user ``j`` are zero padding and never updated.

Leading ``...`` dimensions are batch dimensions; every numerical routine
broadcasts over them so that many Monte Carlo trials can be solved at once.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .exceptions import InvalidArgument

__all__ = [
    "NetworkConfig",
    "ChannelSet",
    "FilterSet",
    "RngStream",
    "as_generator",
    "sample_gaussian_matrix",
    "sample_network",
    "resample_errors",
    "init_filters",
    "normalize_columns",
    "reciprocal_channels",
    "reciprocal_view",
    "hermitian",
]


def hermitian(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Configuration xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
@dataclass(frozen=True)
class NetworkConfig:
    """
    Parameters of a K-user M x N MIMO interference channel.

    Parameters
    ----------
    K : int
        Number of transmitter/receiver pairs.
    M : int
        Antennas at every transmitter.
    N : int
        Antennas at every receiver.
    D : tuple of int
        Streams per user. An int is broadcast to all K users.
    P : float
        Per-stream symbol power (linear).
    N0 : float
        Noise power (linear).
    sigma2 : float
        Variance of each complex entry of the CSI error matrices.
    """

    K: int
    M: int
    N: int
    D: tuple = 1
    P: float = 1.0
    N0: float = 1.0
    sigma2: float = 0.0

    def __post_init__(self):
        D = self.D
        if isinstance(D, (int, np.integer)):
            D = (int(D),) * int(self.K)
        object.__setattr__(self, "D", tuple(int(d) for d in D))
        if self.K < 1:
            raise InvalidArgument(f"K must be >= 1, got {self.K}")
        if self.M < 1 or self.N < 1:
            raise InvalidArgument(f"M and N must be >= 1, got M={self.M}, N={self.N}")
        if len(self.D) != self.K:
            raise InvalidArgument(f"D has {len(self.D)} entries, expected K={self.K}")
        dmax = min(self.M, self.N)
        for j, d in enumerate(self.D):
            if not 1 <= d <= dmax:
                raise InvalidArgument(
                    f"D[{j}]={d} infeasible: need 1 <= D <= min(M, N) = {dmax}")
        if not self.P > 0:
            raise InvalidArgument(f"P must be > 0, got {self.P}")
        if not self.N0 > 0:
            raise InvalidArgument(f"N0 must be > 0, got {self.N0}")
        if not self.sigma2 >= 0:
            raise InvalidArgument(f"sigma2 must be >= 0, got {self.sigma2}")

    @property
    def total_streams(self) -> int:
        return sum(self.D)

    @property
    def dmax(self) -> int:
        return max(self.D)

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(self.P / self.N0)

    @property
    def label(self) -> str:
        """Label in the usual ``(MxN,d)^K`` notation."""
        d = self.D[0] if len(set(self.D)) == 1 else ",".join(map(str, self.D))
        return f"({self.M}x{self.N},{d})^{self.K}"

    def stream_mask(self) -> np.ndarray:
        """Boolean ``(K, Dmax)`` array marking the active columns."""
        return np.arange(self.dmax)[None, :] < np.array(self.D)[:, None]

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)

    def with_snr_db(self, snr_db: float) -> "NetworkConfig":
        """Set ``P = N0 * 10**(snr_db/10)`` keeping N0."""
        return self.replace(P=self.N0 * 10.0 ** (snr_db / 10.0))

    def reciprocal(self) -> "NetworkConfig":
        """Config of the reverse link (M and N swap roles)."""
        return self.replace(M=self.N, N=self.M)


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Random streams xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
@dataclass(frozen=True)
class RngStream:
    """
    Deterministic random stream keyed by a master seed and an index path.

    The generator is a PCG64 seeded through ``numpy.random.SeedSequence``
    with ``spawn_key=index``, so ``(seed, index)`` fully determines the
    sample sequence independently of platform and of the order in which
    other streams are consumed.
    """

    seed: int
    index: tuple = ()

    def __post_init__(self):
        idx = self.index
        if isinstance(idx, (int, np.integer)):
            idx = (int(idx),)
        object.__setattr__(self, "index", tuple(int(i) for i in idx))
        if self.seed < 0 or any(i < 0 for i in self.index):
            raise InvalidArgument("seed and stream indices must be non-negative")

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.index + tuple(keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.index)
        return np.random.Generator(np.random.PCG64(ss))


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidArgument(f"expected RngStream or numpy Generator, got {type(rng)!r}")


def sample_gaussian_matrix(rows: int, cols: int, variance: float, rng: RngLike,
                           batch: Sequence[int] = ()) -> np.ndarray:
    """
    Draw a matrix with i.i.d. CN(0, variance) entries.

    Real and imaginary parts are independent N(0, variance/2).

    Parameters
    ----------
    rows, cols : int
        Matrix shape.
    variance : float
        Per-entry variance, must be non-negative.
    rng : RngStream or numpy.random.Generator
        Source of randomness.
    batch : sequence of int, optional
        Leading batch shape; the result has shape ``(*batch, rows, cols)``.
    """
    if variance < 0:
        raise InvalidArgument(f"variance must be >= 0, got {variance}")
    gen = as_generator(rng)
    shape = tuple(batch) + (rows, cols)
    if variance == 0:
        return np.zeros(shape, dtype=complex)
    z = gen.standard_normal(shape + (2,))
    return np.sqrt(variance / 2.0) * (z[..., 0] + 1j * z[..., 1])


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Channels xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
@dataclass(frozen=True)
class ChannelSet:
    """Estimated (H), error (E) and true (G) channels, all ``(..., K, K, N, M)``."""

    H: np.ndarray
    E: np.ndarray
    G: np.ndarray

    @property
    def K(self) -> int:
        return self.H.shape[-3]

    @property
    def shape(self):
        return self.H.shape[-2:]


CONVENTIONS = ("true", "independent")


def sample_network(config: NetworkConfig, rng: RngLike, convention: str = "true",
                   batch: Sequence[int] = ()) -> ChannelSet:
    """
    Sample one (or a batch of) interference-channel realizations.

    With ``convention="true"`` the true channel is drawn with unit-variance
    entries and the estimate is ``H = G - E``. With ``"independent"`` the
    estimate is drawn with unit variance and ``G = H + E``, so that E is
    independent of H.
    """
    gen = as_generator(rng)
    K, M, N = config.K, config.M, config.N
    shape = tuple(batch) + (K, K)
    first = sample_gaussian_matrix(N, M, 1.0, gen, batch=shape)
    E = sample_gaussian_matrix(N, M, config.sigma2, gen, batch=shape)
    if convention == "true":
        return ChannelSet(H=first - E, E=E, G=first)
    if convention == "independent":
        return ChannelSet(H=first, E=E, G=first + E)
    raise InvalidArgument(f"unknown convention {convention!r}; use one of {CONVENTIONS}")


def resample_errors(channels: ChannelSet, config: NetworkConfig, rng: RngLike,
                    convention: str = "true") -> ChannelSet:
    """
    Fresh error realization on the same channel.

    Under ``"true"`` the true channel G is kept and ``H = G - E``; under
    ``"independent"`` the estimate H is kept and ``G = H + E``.
    """
    gen = as_generator(rng)
    E = sample_gaussian_matrix(config.N, config.M, config.sigma2, gen,
                               batch=channels.H.shape[:-2])
    if convention == "true":
        return ChannelSet(H=channels.G - E, E=E, G=channels.G)
    if convention == "independent":
        return ChannelSet(H=channels.H, E=E, G=channels.H + E)
    raise InvalidArgument(f"unknown convention {convention!r}; use one of {CONVENTIONS}")


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Filters xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
@dataclass(frozen=True)
class FilterSet:
    """
    Precoders ``V (..., K, M, Dmax)`` and receive filters ``U (..., K, N, Dmax)``.

    Active columns have unit Euclidean norm; padding columns are zero.
    """

    V: np.ndarray
    U: np.ndarray
    D: tuple = field(default=())

    def __post_init__(self):
        if not self.D:
            object.__setattr__(self, "D", (self.V.shape[-1],) * self.V.shape[-3])

    def column(self, side: str, k: int, d: int) -> np.ndarray:
        mat = self.V if side == "V" else self.U
        return mat[..., k, :, d]


def normalize_columns(X: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Scale every column of ``X`` (over axis -2) to unit norm; masked columns become 0."""
    norms = np.linalg.norm(X, axis=-2, keepdims=True)
    out = X / np.where(norms > 0, norms, 1.0)
    if mask is not None:
        out = np.where(mask[..., None, :], out, 0.0)
    return out


def init_filters(config: NetworkConfig, rng: RngLike,
                 batch: Sequence[int] = ()) -> FilterSet:
    """Random starting filters: CN(0, 1) columns normalized to unit norm."""
    gen = as_generator(rng)
    shape = tuple(batch) + (config.K,)
    mask = config.stream_mask()
    V = sample_gaussian_matrix(config.M, config.dmax, 1.0, gen, batch=shape)
    U = sample_gaussian_matrix(config.N, config.dmax, 1.0, gen, batch=shape)
    return FilterSet(V=normalize_columns(V, mask), U=normalize_columns(U, mask), D=config.D)


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Reciprocity xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def reciprocal_channels(H: np.ndarray) -> np.ndarray:
    """Reverse-link channels: ``Hr[..., j, k] = H[..., k, j]^H``."""
    return hermitian(np.swapaxes(H, -4, -3))


def reciprocal_view(channels: ChannelSet, filters: FilterSet) -> tuple[ChannelSet, FilterSet]:
    """
    Map a network to its reciprocal (reverse-link) counterpart.

    Channels are swapped pairwise and conjugate-transposed; the receive
    filters become the precoders and vice versa. Applying the map twice
    returns the original network.
    """
    rec = ChannelSet(H=reciprocal_channels(channels.H),
                     E=reciprocal_channels(channels.E),
                     G=reciprocal_channels(channels.G))
    return rec, FilterSet(V=filters.U, U=filters.V, D=filters.D)
