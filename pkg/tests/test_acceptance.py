"""Acceptance criteria, one test each.

Every test records a PASS, FAIL or SKIP line that is printed in the
terminal summary. Criteria 5 to 9 need the public WSDream response-time
files (rtMatrix.txt, userlist.txt, wslist.txt) in the directory named by
the ``WSDREAM_DIR`` environment variable and are skipped without it.
"""
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_bipartite
from oracles import (brute_force_metrics, dense_normalized, dense_readout, finite_difference,
                     joint_loss_scalar)
from qagcl.augment import haversine
from qagcl.cli import main as cli_main
from qagcl.config import load_config_file
from qagcl.dataset import InteractionDataset, as_edges, load_raw, prepare_dataset
from qagcl.encoder import EmbeddingState, forward
from qagcl.evaluation import evaluate, evaluate_scores
from qagcl.experiments import ExperimentPlan, mean_by_run, run_ablation, run_layer_sweep, run_models
from qagcl.graph import build_normalized
from qagcl.synthetic import planted_blocks
from qagcl.training import (TrainConfig, TripletBatch, ViewGraphs, bpr_loss, cl_node_sets,
                            final_embeddings, gradient, infonce_loss, train)

CONFIG_PATH = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "wsdream.conf")
WSDREAM_DIR = os.environ.get("WSDREAM_DIR")


def record(number, title, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append(f"[{status}] {number:>2}. {title}" + (f" ({detail})" if detail else ""))
    print(ACCEPTANCE_LINES[-1])
    assert ok, f"criterion {number} failed: {detail}"


def needs_wsdream(number, title):
    if not WSDREAM_DIR or not os.path.isfile(os.path.join(WSDREAM_DIR, "rtMatrix.txt")):
        ACCEPTANCE_LINES.append(f"[SKIP] {number:>2}. {title} (set WSDREAM_DIR to the WSDream dataset #1 files)")
        pytest.skip("WSDream files not available; set WSDREAM_DIR")


# ------------------------------------------------------------ 1. gradients

def _gradient_instance(rng):
    nu = int(rng.integers(2, 6))
    ns = int(rng.integers(2, 11 - nu))
    main = random_bipartite(rng, nu, ns, 0.5)
    v1, v2 = (main[rng.random(len(main)) < 0.7] for _ in range(2))
    D, L = int(rng.integers(1, 9)), int(rng.integers(0, 4))
    state = EmbeddingState(rng.normal(0, 0.5, size=(nu + ns, D)), L)
    pos = {(int(u), int(s)) for u, s in main}
    triples = []
    for _ in range(int(rng.integers(1, 6))):
        u, i = (int(x) for x in main[rng.integers(len(main))])
        negs = [s for s in range(ns) if (u, s) not in pos]
        triples.append((u, i, int(rng.choice(negs))))
    cfg = TrainConfig(layers=L, dim=D, tau=float(rng.uniform(0.2, 1.0)),
                      lambda1=float(rng.uniform(0.1, 1.0)), lambda2=float(rng.uniform(1e-3, 0.1)))
    return nu, ns, main, v1, v2, state, triples, cfg


def test_criterion_01_gradient_matches_finite_differences():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        nu, ns, main, v1, v2, state, triples, cfg = _gradient_instance(rng)
        graphs = ViewGraphs(*(build_normalized(nu, ns, e) for e in (main, v1, v2)))
        batch = TripletBatch(*(np.array(c) for c in zip(*triples)))
        g = gradient(state, graphs, batch, cfg)

        def f(E):
            return joint_loss_scalar(E, nu, main, v1, v2, state.layer_weights, triples,
                                     cfg.tau, cfg.lambda1, cfg.lambda2, ns)

        fd = finite_difference(f, state.E0.copy(), h=1e-4)
        worst = max(worst, np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12))
    secs = time.perf_counter() - t0
    record(1, "gradient vs central differences", worst < 1e-4 and secs < 10,
           f"max rel err {worst:.2e} < 1e-4, {secs:.1f}s < 10s")


# ---------------------------------------------------------- 2. propagation

def test_criterion_02_sparse_propagation_matches_dense():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        nu = int(rng.integers(1, 25))
        ns = int(rng.integers(1, 51 - nu))
        edges = as_edges([(u, s) for u in range(nu) for s in range(ns) if rng.random() < 0.3]
                         or [(0, 0)])
        state = EmbeddingState(rng.normal(size=(nu + ns, int(rng.integers(1, 9)))),
                               int(rng.integers(0, 5)))
        got = forward(state, build_normalized(nu, ns, edges)).main_final
        want = dense_readout(dense_normalized(nu, ns, edges), state.E0, state.layer_weights)
        worst = max(worst, float(np.abs(got - want).max()))
    secs = time.perf_counter() - t0
    record(2, "sparse propagation vs dense oracle", worst <= 1e-10 and secs < 5,
           f"max abs diff {worst:.1e} <= 1e-10, {secs:.2f}s < 5s")


# --------------------------------------------------------------- 3. metrics

def test_criterion_03_metrics_match_brute_force():
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    worst, zero_hit_users, tied, done = 0.0, 0, 0, 0
    while done < 20:
        nu, ns = int(rng.integers(2, 8)), int(rng.integers(4, 30))
        train, test = [], []
        for u in range(nu):
            for s in range(ns):
                r = rng.random()
                (train if r < 0.2 else test if r < 0.35 else []).append((u, s))
        if not test:
            continue
        scores = rng.normal(size=(nu, ns))
        if done % 2 == 0:
            scores = np.round(scores)
            tied += 1
        ds = InteractionDataset(nu, ns, as_edges(train), as_edges(test), [], [], 0.05, 1, 0)
        for k in (1, 3, 10):
            rep = evaluate_scores(scores, ds, [k])
            want = brute_force_metrics(scores, ds.train_positives(), ds.test_positives(), k)
            zero_hit_users += sum(1 for r, _ in want.values() if r == 0)
            worst = max(worst, abs(rep.recall(k) - np.mean([v[0] for v in want.values()])),
                        abs(rep.ndcg(k) - np.mean([v[1] for v in want.values()])))
        done += 1
    secs = time.perf_counter() - t0
    ok = worst <= 1e-12 and secs < 5 and zero_hit_users > 0 and tied > 0
    record(3, "Recall/NDCG vs brute-force evaluator", ok,
           f"max diff {worst:.1e} <= 1e-12, {tied} tied instances, {zero_hit_users} zero-hit cases, {secs:.2f}s")


# ---------------------------------------------------------- 4. closed forms

def test_criterion_04_closed_forms():
    rng = np.random.default_rng(3)
    nu, ns = 5, 7
    train_edges = random_bipartite(rng, nu, ns, 0.5)
    pos = {(int(u), int(s)) for u, s in train_edges}
    triples = [(int(u), int(s), next(j for j in range(ns) if (int(u), j) not in pos))
               for u, s in train_edges[:6]]
    batch = TripletBatch(*(np.array(c) for c in zip(*triples)))
    same = np.tile(rng.normal(size=(1, 4)), (nu + ns, 1))
    cl = infonce_loss(same, same, batch, 0.2, nu)
    want_cl = sum(len(s) * math.log(len(s)) for s in cl_node_sets(batch, nu))
    bpr = bpr_loss(np.zeros((nu + ns, 4)), batch, nu)
    antipodal = float(haversine(0.0, 0.0, 0.0, 180.0))
    errs = (abs(cl - want_cl), abs(bpr - len(batch) * math.log(2)), abs(antipodal - math.pi * 6371))
    record(4, "closed forms (InfoNCE, BPR, Haversine)",
           errs[0] <= 1e-9 and errs[1] <= 1e-9 and errs[2] <= 1e-6,
           f"InfoNCE err {errs[0]:.1e}, BPR err {errs[1]:.1e}, antipodal err {errs[2]:.1e} km")


# ------------------------------------------------------ 5-9. WSDream runs

@pytest.fixture(scope="module")
def wsdream_plans():
    base, plans = load_config_file(CONFIG_PATH)
    return {name: ExperimentPlan.from_stanza(name, base, st) for name, st in plans.items()}


_RAW = {}


def _prepared(plan):
    if "raw" not in _RAW:
        _RAW["raw"] = load_raw(WSDREAM_DIR)
    q, gu, gs = _RAW["raw"]
    cfg = plan.config()
    return prepare_dataset(q, gu, gs, plan.gamma, plan.core, cfg.test_ratio, seed=0)


@pytest.mark.wsdream
def test_criterion_05_dataset_reconstruction(wsdream_plans):
    title = "cold-start dataset counts and density"
    needs_wsdream(5, title)
    targets = {"cold-start": (275, 575, 8490, 0.0536), "cold-start-ex": (172, 219, 1036, 0.0275)}
    ok, details = True, []
    for name, (u, s, i, dens) in targets.items():
        got = _prepared(wsdream_plans[name]).summary()
        within = all(abs(g - w) <= 0.1 * w for g, w in
                     ((got["users"], u), (got["services"], s), (got["interactions"], i)))
        dens_ok = abs(got["density"] - dens) <= 0.005
        ok &= within and dens_ok
        details.append(f"{name}: {got['users']}/{got['services']}/{got['interactions']} "
                       f"density {100 * got['density']:.2f}%")
    record(5, title, ok, "; ".join(details))


def _means(rows, k=20):
    return {run: per_k[k] for run, per_k in mean_by_run(rows).items()}


@pytest.mark.wsdream
def test_criterion_06_warm_start_ordering(wsdream_plans):
    title = "warm-start ordering QAGCL > LightGCN > BPR-MF > UMEAN, IMEAN"
    needs_wsdream(6, title)
    plan = wsdream_plans["warm-start"]
    ds = _prepared(plan)
    rows = run_models(ds, ["qagcl", "lightgcn", "bprmf", "umean", "imean"], plan.config(),
                      plan.seeds, [20], plan.name)
    m = _means(rows)
    ok = len(plan.seeds) >= 3
    for idx in (0, 1):
        floor = max(m["umean"][idx], m["imean"][idx])
        ok &= m["qagcl"][idx] > m["lightgcn"][idx] > m["bprmf"][idx] > floor
    detail = ", ".join(f"{k} R@20 {v[0]:.4f} N@20 {v[1]:.4f}" for k, v in m.items())
    record(6, title, ok, detail)


@pytest.mark.wsdream
def test_criterion_07_cold_start_ndcg_gain(wsdream_plans):
    title = "cold-start-ex NDCG@20 QAGCL > LightGCN"
    needs_wsdream(7, title)
    plan = wsdream_plans["cold-start-ex"]
    m = _means(run_models(_prepared(plan), ["qagcl", "lightgcn"], plan.config(), plan.seeds, [20]))
    record(7, title, len(plan.seeds) >= 3 and m["qagcl"][1] > m["lightgcn"][1],
           f"QAGCL {m['qagcl'][1]:.4f} vs LightGCN {m['lightgcn'][1]:.4f}")


@pytest.mark.wsdream
def test_criterion_08_ablation_direction(wsdream_plans):
    title = "cold-start Recall@20 HD&ED >= HD&ND, ED&ED"
    needs_wsdream(8, title)
    plan = wsdream_plans["cold-start"]
    rows = run_ablation(_prepared(plan), [("HD", "ED"), ("HD", "ND"), ("ED", "ED")], plan.config(),
                        plan.seeds, [20])
    m = _means(rows)
    best = m["HD & ED"][0]
    record(8, title, len(plan.seeds) >= 3 and best >= m["HD & ND"][0] and best >= m["ED & ED"][0],
           ", ".join(f"{k} {v[0]:.4f}" for k, v in m.items()))


@pytest.mark.wsdream
def test_criterion_09_layer_sweep_trend(wsdream_plans):
    title = "cold-start Recall@40 at L=2,3 above L=1"
    needs_wsdream(9, title)
    plan = wsdream_plans["cold-start"]
    m = _means(run_layer_sweep(_prepared(plan), [1, 2, 3], plan.config(), plan.seeds, [40]), k=40)
    record(9, title, m["L=2"][0] > m["L=1"][0] and m["L=3"][0] > m["L=1"][0],
           ", ".join(f"{k} {v[0]:.4f}" for k, v in m.items()))


# ------------------------------------------------------ 10. planted blocks

def test_criterion_10_planted_recovery():
    t0 = time.perf_counter()
    ds = planted_blocks(num_blocks=2, users_per_block=4, services_per_block=4, holdout=1, seed=0)
    cfg = TrainConfig(epochs=200, dim=8, layers=2, lr=0.01, batch_size=32, lambda1=0.1,
                      lambda2=1e-4, kappa=0.5, rho=0.2, early_stop_tol=0)
    final = final_embeddings(train(ds, cfg).state, ds)
    report = evaluate(final, ds, ks=[1])
    top1 = [int(np.argmax(final[ds.num_users:] @ final[u])) for u in range(ds.num_users)]
    in_block = sum(s // 4 == u // 4 for u, s in enumerate(top1))
    secs = time.perf_counter() - t0
    ok = in_block == ds.num_users and report.recall(1) == 1.0 and secs < 30
    record(10, "planted 8x8 block recovery", ok,
           f"{in_block}/{ds.num_users} top-1 in block, unseen top-1 hit rate {report.recall(1):.2f}, {secs:.1f}s")


# ---------------------------------------------------------- 11. determinism

def _tree(root):
    return {os.path.relpath(os.path.join(d, f), root): open(os.path.join(d, f), "rb").read()
            for d, _, files in os.walk(root) for f in files}


def test_criterion_11_deterministic_reruns(synthetic_raw, tmp_path):
    fast = ["--epochs", "3", "--dim", "8", "--batch-size", "256", "--deterministic"]

    def pipeline(out):
        prep, run = str(out / "prep"), str(out / "run")
        codes = [
            cli_main(["prepare", synthetic_raw, "--out", prep, "--core", "2", *fast]),
            cli_main(["train", prep, "--out", run, *fast]),
            cli_main(["evaluate", prep, "--checkpoint", os.path.join(run, "checkpoint.bin"), "--out", run,
                      "--deterministic"]),
            cli_main(["evaluate", prep, "--baseline", "umean", "--out", str(out / "base"), "--deterministic"]),
            cli_main(["recommend", prep, "--checkpoint", os.path.join(run, "checkpoint.bin"), "--user", "0"]),
            cli_main(["ablate", prep, "--out", str(out / "abl"), "--pairs", "HD:ED,ED:ED", *fast]),
            cli_main(["sweep-layers", prep, "--out", str(out / "sweep"), "--layers-list", "1,2", *fast]),
        ]
        assert codes == [0] * len(codes)
        return _tree(out)

    a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    diff = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    record(11, "byte-identical artifacts on deterministic re-runs", not diff and len(a) > 10,
           f"{len(a)} files compared, {len(diff)} differ")
