"""Synthetic inputs: a planted block dataset and WSDream-format raw files.

Neither reproduces WSDream statistics. They exist so the pipeline can be
exercised end to end when the public dataset is not at hand.
"""
from __future__ import annotations

import os

import numpy as np

from .dataset import GeoRecord, InteractionDataset, as_edges

# (lat, lon) anchors used to scatter synthetic entities
REGIONS = [(37.5, 127.0), (48.8, 2.3), (40.7, -74.0), (-33.9, 151.2), (35.7, 139.7), (52.5, 13.4)]


def planted_blocks(num_blocks: int = 2, users_per_block: int = 4, services_per_block: int = 4,
                   holdout: int = 1, seed: int = 0) -> InteractionDataset:
    """Users interact only with the services of their own block.

    Each user keeps ``holdout`` in-block services out of training; those are
    the test positives.
    """
    rng = np.random.default_rng(seed)
    train, test = [], []
    for b in range(num_blocks):
        services = [b * services_per_block + j for j in range(services_per_block)]
        for i in range(users_per_block):
            u = b * users_per_block + i
            held = set(rng.choice(services, size=holdout, replace=False).tolist())
            for s in services:
                (test if s in held else train).append((u, s))
    nu, ns = num_blocks * users_per_block, num_blocks * services_per_block

    def geo(n, per_block):
        out = []
        for i in range(n):
            lat, lon = REGIONS[(i // per_block) % len(REGIONS)]
            out.append(GeoRecord(i, lat + rng.normal(0, 0.5), lon + rng.normal(0, 0.5), True))
        return out

    qos = np.full((nu, ns), 1.0)
    for u, s in train + test:
        qos[u, s] = 0.01
    return InteractionDataset(
        num_users=nu, num_services=ns,
        train_edges=as_edges(train), test_edges=as_edges(test),
        geo_users=geo(nu, users_per_block), geo_services=geo(ns, services_per_block),
        gamma=0.05, core=1, seed=seed,
        user_ids=np.arange(nu), service_ids=np.arange(ns), qos=qos,
    )


def synthetic_qos(num_users: int, num_services: int, seed: int = 0, missing: float = 0.1,
                  rank: int = 4):
    """Response times driven by distance plus a low-rank user/service affinity.

    Returns ``(values, user_coords, service_coords)``.
    """
    rng = np.random.default_rng(seed)

    def coords(n):
        anchors = np.array(REGIONS)[rng.integers(len(REGIONS), size=n)]
        return anchors + rng.normal(0, 3.0, size=(n, 2))

    uc, sc = coords(num_users), coords(num_services)
    from .augment import haversine

    d = haversine(uc[:, None, 0], uc[:, None, 1], sc[None, :, 0], sc[None, :, 1])
    pu = rng.normal(0, 0.6, size=(num_users, rank))
    ps = rng.normal(0, 0.6, size=(num_services, rank))
    log_rt = -3.3 + 1.4 * d / 20000.0 - pu @ ps.T + rng.normal(0, 0.35, size=d.shape)
    values = np.round(np.exp(log_rt), 3)
    values[rng.random(values.shape) < missing] = -1.0
    return values, uc, sc


def write_wsdream_like(out_dir: str, num_users: int = 60, num_services: int = 120, seed: int = 0,
                       invalid_geo: int = 2) -> str:
    """Write ``rtMatrix.txt``, ``userlist.txt`` and ``wslist.txt`` in WSDream layout."""
    os.makedirs(out_dir, exist_ok=True)
    values, uc, sc = synthetic_qos(num_users, num_services, seed)
    with open(os.path.join(out_dir, "rtMatrix.txt"), "w") as fh:
        for row in values:
            fh.write("\t".join(f"{v:g}" for v in row) + "\n")
    with open(os.path.join(out_dir, "userlist.txt"), "w") as fh:
        fh.write("[User ID]\t[IP Address]\t[Country]\t[IP No.]\t[AS]\t[Latitude]\t[Longitude]\n")
        for i, (lat, lon) in enumerate(uc):
            lat_s, lon_s = (("null", "null") if i < invalid_geo else (f"{lat:.4f}", f"{lon:.4f}"))
            fh.write(f"{i}\t10.0.0.{i % 250}\tNowhere\t{i}\tAS0\t{lat_s}\t{lon_s}\n")
    with open(os.path.join(out_dir, "wslist.txt"), "w") as fh:
        fh.write("[Service ID]\t[WSDL Address]\t[Service Provider]\t[IP Address]\t[Country]"
                 "\t[IP No.]\t[AS]\t[Latitude]\t[Longitude]\n")
        for i, (lat, lon) in enumerate(sc):
            lat_s, lon_s = (("null", "null") if i < invalid_geo else (f"{lat:.4f}", f"{lon:.4f}"))
            fh.write(f"{i}\thttp://ws{i}.example/?wsdl\tprov{i}\t10.1.0.{i % 250}\tNowhere\t{i}\tAS0"
                     f"\t{lat_s}\t{lon_s}\n")
    return out_dir
