"""Edge masks that define the augmented views.

HD keeps an edge when the user-service great-circle distance, relative to the
largest distance among observed edges, is at most ``kappa``. ED drops an
exact ``floor(rho * m)`` edges at random; ND drops ``floor(rho * N)`` nodes
together with their incident edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import GeoRecord, as_edges
from .errors import ConfigError

EARTH_RADIUS_KM = 6371.0

OPERATORS = ("HD", "ED", "ND")


def haversine(a1, b1, a2, b2):
    """Great-circle distance in km between (lat, lon) points given in degrees.

    Works elementwise on numpy arrays as well as on scalars.
    """
    a1, b1, a2, b2 = (np.radians(np.asarray(x, dtype=np.float64)) for x in (a1, b1, a2, b2))
    h = np.sin((a2 - a1) / 2.0) ** 2 + np.cos(a1) * np.cos(a2) * np.sin((b2 - b1) / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class AugmentationMask:
    kept: np.ndarray
    operator: str
    parameter: float
    seed: Optional[int] = None

    @property
    def num_kept(self) -> int:
        return int(self.kept.sum())

    def __len__(self) -> int:
        return len(self.kept)


def _floor_count(ratio: float, n: int) -> int:
    # tolerate representation error such as 0.29 * 100 = 28.999999999999996
    return int(math.floor(ratio * n + 1e-9))


def edge_distances(edges, geo_users: list[GeoRecord], geo_services: list[GeoRecord]):
    """Per-edge distance in km and a validity flag (both endpoints geolocated)."""
    e = as_edges(edges)
    ulat = np.array([r.latitude for r in geo_users], dtype=np.float64)
    ulon = np.array([r.longitude for r in geo_users], dtype=np.float64)
    uval = np.array([r.valid for r in geo_users], dtype=bool)
    slat = np.array([r.latitude for r in geo_services], dtype=np.float64)
    slon = np.array([r.longitude for r in geo_services], dtype=np.float64)
    sval = np.array([r.valid for r in geo_services], dtype=bool)
    u, s = e[:, 0], e[:, 1]
    valid = uval[u] & sval[s]
    d = np.full(len(e), np.nan)
    if valid.any():
        d[valid] = haversine(ulat[u[valid]], ulon[u[valid]], slat[s[valid]], slon[s[valid]])
    return d, valid


def hd_mask(edges, geo_users: list[GeoRecord], geo_services: list[GeoRecord], kappa: float) -> AugmentationMask:
    if not 0.0 <= kappa <= 1.0:
        raise ConfigError(f"kappa must lie in [0, 1], got {kappa}")
    d, valid = edge_distances(edges, geo_users, geo_services)
    if not valid.any():
        raise ConfigError("no edge has geolocated endpoints; HD masking is undefined")
    max_d = d[valid].max()
    kept = np.ones(len(d), dtype=bool)
    if max_d > 0:
        kept[valid] = d[valid] / max_d <= kappa
    return AugmentationMask(kept, "HD", float(kappa), None)


def ed_mask(edges, rho: float, seed: int) -> AugmentationMask:
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"rho must lie in [0, 1), got {rho}")
    m = len(as_edges(edges))
    rng = np.random.default_rng(seed)
    kept = np.ones(m, dtype=bool)
    kept[rng.choice(m, size=_floor_count(rho, m), replace=False)] = False
    return AugmentationMask(kept, "ED", float(rho), int(seed))


def nd_mask(edges, num_users: int, num_services: int, rho: float, seed: int) -> AugmentationMask:
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"rho must lie in [0, 1), got {rho}")
    e = as_edges(edges)
    n = num_users + num_services
    rng = np.random.default_rng(seed)
    alive = np.ones(n, dtype=bool)
    alive[rng.choice(n, size=_floor_count(rho, n), replace=False)] = False
    kept = alive[e[:, 0]] & alive[e[:, 1] + num_users]
    return AugmentationMask(kept, "ND", float(rho), int(seed))


def apply_mask(edges, mask: AugmentationMask) -> np.ndarray:
    """The subset of ``edges`` retained by ``mask``."""
    e = as_edges(edges)
    if len(mask.kept) != len(e):
        raise ValueError(f"mask covers {len(mask.kept)} edges but {len(e)} were given")
    return e[mask.kept]


def make_mask(operator: str, edges, *, num_users: int, num_services: int,
              geo_users=None, geo_services=None, kappa: float = 0.3, rho: float = 0.2,
              seed: int = 0) -> AugmentationMask:
    """Dispatch on the operator name (``HD``, ``ED`` or ``ND``)."""
    op = operator.upper()
    if op == "HD":
        return hd_mask(edges, geo_users, geo_services, kappa)
    if op == "ED":
        return ed_mask(edges, rho, seed)
    if op == "ND":
        return nd_mask(edges, num_users, num_services, rho, seed)
    raise ConfigError(f"unknown augmentation operator {operator!r}; expected one of {OPERATORS}")


def write_mask(path, edges, mask: AugmentationMask) -> None:
    """Text manifest: a ``#`` header with provenance, then ``u<TAB>s<TAB>kept`` rows."""
    e = as_edges(edges)
    if len(e) != len(mask):
        raise ValueError("mask/edge length mismatch")
    seed = "none" if mask.seed is None else str(mask.seed)
    with open(path, "w") as fh:
        fh.write(f"# operator={mask.operator} parameter={mask.parameter!r} seed={seed} "
                 f"edges={len(e)} kept={mask.num_kept}\n")
        for (u, s), k in zip(e, mask.kept):
            fh.write(f"{u}\t{s}\t{int(k)}\n")


def read_mask(path) -> tuple[np.ndarray, AugmentationMask]:
    with open(path) as fh:
        header = fh.readline()
        meta = dict(tok.split("=", 1) for tok in header.lstrip("#").split())
        rows = [line.split() for line in fh if line.strip()]
    edges = np.array([(int(u), int(s)) for u, s, _ in rows], dtype=np.int64).reshape(-1, 2)
    kept = np.array([k == "1" for _, _, k in rows], dtype=bool)
    seed = None if meta["seed"] == "none" else int(meta["seed"])
    return edges, AugmentationMask(kept, meta["operator"], float(meta["parameter"]), seed)
