"""WSDream loading, QoS binarization, core filtering and train/test splitting.

Edge sets are carried around as ``(m, 2)`` int64 arrays of ``(user, service)``
rows, sorted lexicographically and free of duplicates. ``as_edges`` converts
any iterable of pairs into that canonical form.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import DatasetFormatError, EmptyDatasetError

MISSING = -1.0

# WSDream dataset#1 column layout (0-based, tab separated)
USERLIST_LAT_COL, USERLIST_LON_COL = 5, 6
WSLIST_LAT_COL, WSLIST_LON_COL = 7, 8


@dataclass(frozen=True)
class GeoRecord:
    entity_id: int
    latitude: float
    longitude: float
    valid: bool


@dataclass(frozen=True)
class QoSMatrix:
    values: np.ndarray

    @property
    def num_users(self) -> int:
        return self.values.shape[0]

    @property
    def num_services(self) -> int:
        return self.values.shape[1]


@dataclass
class InteractionDataset:
    """A binarized, filtered and split interaction graph.

    ``user_ids``/``service_ids`` hold the original (raw file) index of each
    dense id, so ``user_ids[new] == old``. ``qos`` is the response-time
    submatrix restricted to the surviving users and services (sentinel
    ``-1`` for missing), kept for the mean-based baselines.
    """

    num_users: int
    num_services: int
    train_edges: np.ndarray
    test_edges: np.ndarray
    geo_users: list[GeoRecord]
    geo_services: list[GeoRecord]
    gamma: float
    core: int
    seed: int
    test_ratio: float = 0.2
    user_ids: Optional[np.ndarray] = None
    service_ids: Optional[np.ndarray] = None
    qos: Optional[np.ndarray] = None
    _train_pos: Optional[list] = field(default=None, repr=False)
    _test_pos: Optional[list] = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_services

    @property
    def num_interactions(self) -> int:
        return len(self.train_edges) + len(self.test_edges)

    @property
    def density(self) -> float:
        return self.num_interactions / (self.num_users * self.num_services)

    def train_positives(self) -> list[set[int]]:
        if self._train_pos is None:
            self._train_pos = _group(self.train_edges, self.num_users)
        return self._train_pos

    def test_positives(self) -> list[set[int]]:
        if self._test_pos is None:
            self._test_pos = _group(self.test_edges, self.num_users)
        return self._test_pos

    def summary(self) -> dict:
        return {
            "users": self.num_users,
            "services": self.num_services,
            "interactions": self.num_interactions,
            "train_interactions": len(self.train_edges),
            "test_interactions": len(self.test_edges),
            "density": self.density,
            "gamma": self.gamma,
            "core": self.core,
            "test_ratio": self.test_ratio,
            "seed": self.seed,
        }


def _group(edges: np.ndarray, num_users: int) -> list[set[int]]:
    out: list[set[int]] = [set() for _ in range(num_users)]
    for u, s in edges:
        out[int(u)].add(int(s))
    return out


def as_edges(edges: Iterable) -> np.ndarray:
    """Canonical sorted, de-duplicated ``(m, 2)`` int64 edge array."""
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    return np.unique(arr, axis=0)


def edge_set(edges: np.ndarray) -> set[tuple[int, int]]:
    return {(int(u), int(s)) for u, s in edges}


# ---------------------------------------------------------------- parsing

def parse_qos_matrix(path: str | os.PathLike) -> QoSMatrix:
    """Read a whitespace-separated response-time matrix (``rtMatrix.txt``)."""
    rows: list[list[float]] = []
    width = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            row = []
            for col, tok in enumerate(tokens):
                try:
                    row.append(float(tok))
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}: non-numeric token {tok!r} at line {lineno}, column {col}"
                    ) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetFormatError(
                    f"{path}: row {len(rows)} (line {lineno}) has {len(row)} values, expected {width}"
                )
            rows.append(row)
    if not rows:
        raise DatasetFormatError(f"{path}: empty QoS matrix")
    values = np.asarray(rows, dtype=np.float64)
    bad = (values < 0) & (values != MISSING)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DatasetFormatError(f"{path}: negative response time {values[r, c]} at row {r}, column {c}")
    return QoSMatrix(values)


def _parse_coord(token: str, bound: float) -> Optional[float]:
    try:
        x = float(token)
    except ValueError:
        return None
    if not math.isfinite(x) or abs(x) > bound:
        return None
    return x


def parse_geo_list(path: str | os.PathLike, lat_col: int, lon_col: int) -> list[GeoRecord]:
    """Parse a tab-separated WSDream ``userlist``/``wslist`` file.

    The first line is a header; separator lines made only of ``=``/``-`` are
    skipped. Unparsable coordinates produce ``valid=False`` records.
    """
    records: list[GeoRecord] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    for line in lines[1:]:
        stripped = line.strip()
        if not stripped or set(stripped) <= {"=", "-"}:
            continue
        fields = line.split("\t")
        lat = _parse_coord(fields[lat_col].strip(), 90.0) if len(fields) > lat_col else None
        lon = _parse_coord(fields[lon_col].strip(), 180.0) if len(fields) > lon_col else None
        idx = len(records)
        if lat is None or lon is None:
            records.append(GeoRecord(idx, float("nan"), float("nan"), False))
        else:
            records.append(GeoRecord(idx, lat, lon, True))
    return records


# ---------------------------------------------------------- construction

def binarize(q: QoSMatrix, gamma: float) -> np.ndarray:
    """Edges ``(u, s)`` whose observed response time is strictly below ``gamma``."""
    if not gamma > 0:
        return np.zeros((0, 2), dtype=np.int64)
    v = q.values
    mask = (v >= 0) & (v < gamma)
    return np.argwhere(mask).astype(np.int64)


def core_filter(edges, core: int) -> tuple[np.ndarray, dict[int, int], dict[int, int]]:
    """Drop users with fewer than ``core`` edges, prune empty services, reindex.

    Iterates to a fixpoint. Returns the reindexed edges together with the
    old-to-new user and service id maps.
    """
    if core < 1:
        raise ValueError("core must be >= 1")
    e = as_edges(edges)
    while len(e):
        users, counts = np.unique(e[:, 0], return_counts=True)
        weak = users[counts < core]
        if len(weak) == 0:
            break
        e = e[~np.isin(e[:, 0], weak)]
    if len(e) == 0:
        raise EmptyDatasetError("core filtering removed every interaction")
    old_users = np.unique(e[:, 0])
    old_services = np.unique(e[:, 1])
    user_map = {int(o): i for i, o in enumerate(old_users)}
    service_map = {int(o): i for i, o in enumerate(old_services)}
    out = np.column_stack([
        np.searchsorted(old_users, e[:, 0]),
        np.searchsorted(old_services, e[:, 1]),
    ]).astype(np.int64)
    return as_edges(out), user_map, service_map


def split(edges, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-user random split; each user keeps at least one training edge."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    e = as_edges(edges)
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    if len(e) == 0:
        return e, e.copy()
    users, starts = np.unique(e[:, 0], return_index=True)
    bounds = list(starts[1:]) + [len(e)]
    for start, stop in zip(starts, bounds):
        block = e[start:stop]
        deg = len(block)
        n_test = min(math.ceil(ratio * deg), deg - 1)
        perm = rng.permutation(deg)
        test_parts.append(block[perm[:n_test]])
        train_parts.append(block[perm[n_test:]])
    return as_edges(np.concatenate(train_parts)), as_edges(np.concatenate(test_parts))


def prepare_dataset(
    q: QoSMatrix,
    geo_users: list[GeoRecord],
    geo_services: list[GeoRecord],
    gamma: float,
    core: int,
    test_ratio: float = 0.2,
    seed: int = 0,
) -> InteractionDataset:
    """Binarize, core-filter, reindex and split a raw QoS matrix."""
    edges = binarize(q, gamma)
    if len(edges) == 0:
        raise EmptyDatasetError(f"no response time below gamma={gamma}")
    edges, user_map, service_map = core_filter(edges, core)
    user_ids = np.array(sorted(user_map, key=user_map.get), dtype=np.int64)
    service_ids = np.array(sorted(service_map, key=service_map.get), dtype=np.int64)
    train, test = split(edges, test_ratio, seed)
    return InteractionDataset(
        num_users=len(user_ids),
        num_services=len(service_ids),
        train_edges=train,
        test_edges=test,
        geo_users=_remap_geo(geo_users, user_ids),
        geo_services=_remap_geo(geo_services, service_ids),
        gamma=gamma,
        core=core,
        seed=seed,
        test_ratio=test_ratio,
        user_ids=user_ids,
        service_ids=service_ids,
        qos=q.values[np.ix_(user_ids, service_ids)].copy(),
    )


def _remap_geo(records: list[GeoRecord], old_ids: np.ndarray) -> list[GeoRecord]:
    out = []
    for new, old in enumerate(old_ids):
        if old < len(records):
            r = records[old]
            out.append(GeoRecord(new, r.latitude, r.longitude, r.valid))
        else:
            out.append(GeoRecord(new, float("nan"), float("nan"), False))
    return out


def load_raw(raw_dir: str | os.PathLike, user_cols=(USERLIST_LAT_COL, USERLIST_LON_COL),
             service_cols=(WSLIST_LAT_COL, WSLIST_LON_COL)):
    """Load ``rtMatrix.txt``, ``userlist.txt`` and ``wslist.txt`` from a directory."""
    q = parse_qos_matrix(os.path.join(raw_dir, "rtMatrix.txt"))
    gu = parse_geo_list(os.path.join(raw_dir, "userlist.txt"), *user_cols)
    gs = parse_geo_list(os.path.join(raw_dir, "wslist.txt"), *service_cols)
    return q, gu, gs


# ------------------------------------------------------ prepared artifacts

SPLIT_FILE = "split.tsv"
USERS_FILE = "users.tsv"
SERVICES_FILE = "services.tsv"
QOS_FILE = "qos.npy"
SUMMARY_FILE = "summary.json"


def split_manifest(ds: InteractionDataset) -> str:
    rows = [(int(u), int(s), "train") for u, s in ds.train_edges]
    rows += [(int(u), int(s), "test") for u, s in ds.test_edges]
    rows.sort()
    return "".join(f"{u}\t{s}\t{tag}\n" for u, s, tag in rows)


def split_hash(ds: InteractionDataset) -> str:
    return hashlib.sha256(split_manifest(ds).encode()).hexdigest()[:16]


def _geo_table(records: list[GeoRecord], old_ids: Optional[np.ndarray]) -> str:
    lines = ["id\toriginal_id\tlatitude\tlongitude\tvalid\n"]
    for r in records:
        old = int(old_ids[r.entity_id]) if old_ids is not None else r.entity_id
        lat = repr(r.latitude) if r.valid else "nan"
        lon = repr(r.longitude) if r.valid else "nan"
        lines.append(f"{r.entity_id}\t{old}\t{lat}\t{lon}\t{int(r.valid)}\n")
    return "".join(lines)


def _read_geo_table(path: str) -> tuple[list[GeoRecord], np.ndarray]:
    records, old = [], []
    with open(path) as fh:
        next(fh)
        for line in fh:
            i, o, lat, lon, valid = line.rstrip("\n").split("\t")
            records.append(GeoRecord(int(i), float(lat), float(lon), valid == "1"))
            old.append(int(o))
    return records, np.asarray(old, dtype=np.int64)


def save_prepared(ds: InteractionDataset, out_dir: str | os.PathLike) -> dict:
    """Write split manifest, id maps, QoS submatrix and summary to ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, SPLIT_FILE), "w") as fh:
        fh.write(split_manifest(ds))
    with open(os.path.join(out_dir, USERS_FILE), "w") as fh:
        fh.write(_geo_table(ds.geo_users, ds.user_ids))
    with open(os.path.join(out_dir, SERVICES_FILE), "w") as fh:
        fh.write(_geo_table(ds.geo_services, ds.service_ids))
    if ds.qos is not None:
        np.save(os.path.join(out_dir, QOS_FILE), ds.qos)
    summary = ds.summary()
    summary["split_hash"] = split_hash(ds)
    with open(os.path.join(out_dir, SUMMARY_FILE), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def load_prepared(prepared_dir: str | os.PathLike) -> InteractionDataset:
    with open(os.path.join(prepared_dir, SUMMARY_FILE)) as fh:
        summary = json.load(fh)
    train, test = [], []
    with open(os.path.join(prepared_dir, SPLIT_FILE)) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) != 3 or parts[2] not in ("train", "test"):
                raise DatasetFormatError(f"{SPLIT_FILE}: malformed line {lineno}: {line!r}")
            (train if parts[2] == "train" else test).append((int(parts[0]), int(parts[1])))
    geo_u, user_ids = _read_geo_table(os.path.join(prepared_dir, USERS_FILE))
    geo_s, service_ids = _read_geo_table(os.path.join(prepared_dir, SERVICES_FILE))
    qos_path = os.path.join(prepared_dir, QOS_FILE)
    ds = InteractionDataset(
        num_users=summary["users"],
        num_services=summary["services"],
        train_edges=as_edges(train),
        test_edges=as_edges(test),
        geo_users=geo_u,
        geo_services=geo_s,
        gamma=summary["gamma"],
        core=summary["core"],
        seed=summary["seed"],
        test_ratio=summary["test_ratio"],
        user_ids=user_ids,
        service_ids=service_ids,
        qos=np.load(qos_path) if os.path.exists(qos_path) else None,
    )
    if split_hash(ds) != summary["split_hash"]:
        raise DatasetFormatError(f"{prepared_dir}: split manifest does not match summary hash")
    return ds
