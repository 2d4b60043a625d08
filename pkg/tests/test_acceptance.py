"""Acceptance suite: one test per criterion, one printed line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the
per-criterion pass lines as they complete.
"""

import json
import math
import time

import numpy as np
import pytest

from geomgcl import rbf
from geomgcl.cli import main as cli_main
from geomgcl.geommpnn import EncoderConfig, encode_view, featurize, init_encoder_params
from geomgcl.molio import parse_dataset, serialize_dataset, split_dataset
from geomgcl.objectives import contrastive_loss, project, spatial_regularizer
from geomgcl.tensorad import ParameterStore, Tensor, concat
from geomgcl.trainer import (
    CheckpointError,
    TrainConfig,
    config_fingerprint,
    evaluate_metric,
    finetune,
    gradient_self_test,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)

from helpers import (
    permute_molecule,
    random_dataset_file,
    random_molecule,
    random_rotation,
    rigid_motion_molecule,
    safe_random_molecule,
)

GEOM_CFG = EncoderConfig(hidden=16, layers=1, readout_steps=1, angle_domains=4,
                         dist_domains=4, rbf_dim=8, cutoff=4.0)


def report(criterion, text):
    print(f"PASS criterion {criterion}: {text}")


def _encode_all(view, inputs, params, cfg):
    rows = [encode_view(view, i, params, cfg).reshape((1, cfg.hidden)) for i in inputs]
    return concat(rows, axis=0).data


def test_criterion_01_geometry_invariance():
    started = time.time()
    rng = np.random.default_rng(101)
    params = init_encoder_params(GEOM_CFG, (5, 3), rng)
    n_mols, n_motions = 100, 20
    for m in range(n_mols):
        mol = safe_random_molecule(rng, GEOM_CFG.cutoff, GEOM_CFG.angle_domains,
                                   GEOM_CFG.dist_domains)
        base_inputs = featurize(mol, GEOM_CFG)
        g0 = base_inputs.graph3d
        h0 = encode_view("3d", base_inputs, params, GEOM_CFG).data
        for _ in range(n_motions):
            moved = rigid_motion_molecule(mol, random_rotation(rng), rng.normal(size=3))
            inputs = featurize(moved, GEOM_CFG)
            g1 = inputs.graph3d
            assert (g0.src == g1.src).all() and (g0.dst == g1.dst).all()
            assert (g0.dist_domain == g1.dist_domain).all()
            assert (g0.pair_target == g1.pair_target).all()
            assert (g0.pair_neighbor == g1.pair_neighbor).all()
            assert (g0.pair_angle_domain == g1.pair_angle_domain).all()
            np.testing.assert_allclose(g1.edge_distance, g0.edge_distance, atol=1e-9)
            np.testing.assert_allclose(g1.pair_angle, g0.pair_angle, atol=1e-9)
            h1 = encode_view("3d", inputs, params, GEOM_CFG).data
            np.testing.assert_allclose(h1, h0, atol=1e-9)
    elapsed = time.time() - started
    assert elapsed < 60.0, f"geometry invariance took {elapsed:.1f}s"
    report(1, f"{n_mols} molecules x {n_motions} rigid motions invariant "
              f"(edge sets, domains, 1e-9 scalars, 1e-9 h3d) in {elapsed:.1f}s")


def test_criterion_02_permutation_invariance():
    rng = np.random.default_rng(102)
    params = init_encoder_params(GEOM_CFG, (5, 3), rng)
    n_mols, n_perms = 100, 10
    for m in range(n_mols):
        mol = random_molecule(rng)
        inputs = featurize(mol, GEOM_CFG)
        base = {v: encode_view(v, inputs, params, GEOM_CFG).data for v in ("2d", "3d")}
        for _ in range(n_perms):
            perm = rng.permutation(mol.n_atoms)
            pinputs = featurize(permute_molecule(mol, perm), GEOM_CFG)
            for view in ("2d", "3d"):
                h = encode_view(view, pinputs, params, GEOM_CFG).data
                np.testing.assert_allclose(h, base[view], atol=1e-9)
    report(2, f"{n_mols} molecules x {n_perms} relabelings: h2d and h3d within 1e-9")


def test_criterion_03_gradient_correctness(tmp_path):
    started = time.time()
    cfg = EncoderConfig(hidden=8, layers=2, readout_steps=2, angle_domains=2,
                        dist_domains=2, rbf_dim=8, cutoff=4.0)
    rng = np.random.default_rng(103)
    path = tmp_path / "grad.jsonl"
    random_dataset_file(path, rng, 3, n_atoms=5)
    dataset = parse_dataset(path, "regression")
    worst = gradient_self_test(dataset, cfg, TrainConfig(), n_molecules=3,
                               n_samples=200, fd_step=1e-5, seed=103)
    assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"
    elapsed = time.time() - started
    assert elapsed < 120.0, f"gradient check took {elapsed:.1f}s"
    report(3, f"200 sampled entries of the full pretraining loss: worst "
              f"relative error {worst:.2e} < 1e-4 in {elapsed:.1f}s")


def test_criterion_04_analytic_loss_fixtures():
    z = np.array([[0.3, -1.2, 4.0]])
    assert float(contrastive_loss(Tensor(z), Tensor(2 * z), tau=0.5).data) == 0.0

    n = 4
    same = np.tile(np.array([[1.0, 2.0, 3.0]]), (n, 1))
    total = float(contrastive_loss(Tensor(same), Tensor(same), tau=0.5).data)
    assert abs(total / n - 2 * math.log(n)) < 1e-9

    eye = np.eye(2)
    total = float(contrastive_loss(Tensor(eye), Tensor(eye), tau=0.5).data)
    assert abs(total / 2 - 2 * math.log(1 + math.exp(-2))) < 1e-9

    params = ParameterStore()
    params.add("3d/e2e/0/W_theta/0", np.zeros((2, 2)))
    params.add("3d/e2e/0/W_theta/1", np.eye(2))
    assert abs(float(spatial_regularizer(params, 1, 2).data) - 2.0) < 1e-12
    same_mats = ParameterStore()
    for i in range(3):
        same_mats.add(f"3d/e2e/0/W_theta/{i}", np.full((3, 3), 0.7))
    assert float(spatial_regularizer(same_mats, 1, 3).data) == 0.0
    report(4, "contrastive fixtures (0, 2 ln N, 2 ln(1+e^-2)) within 1e-9; "
              "regularizer fixtures within 1e-12")


def test_criterion_05_rbf_fixtures():
    angle_spec = rbf.make_spec(rbf.ANGLE, 8)
    for j, mu in enumerate(angle_spec.centers):
        assert rbf.expand(angle_spec, float(mu))[j] == 1.0
    dist_spec = rbf.make_spec(rbf.DISTANCE, 8, d_max=5.0)
    from geomgcl import kernels
    for j, mu in enumerate(dist_spec.centers):
        hit = kernels.gaussian_expand(np.array([mu]), dist_spec.centers, dist_spec.beta)
        assert hit[0, j] == 1.0

    rng = np.random.default_rng(105)
    for spec, hi in ((dist_spec, 6.0), (angle_spec, math.pi)):
        xs = rng.uniform(0.0, hi, size=1000)
        got = rbf.expand(spec, xs)
        t = np.exp(-xs) if spec.kind == rbf.DISTANCE else xs
        for i in range(1000):
            oracle = np.array([math.exp(-spec.beta * (t[i] - mu) ** 2)
                               for mu in spec.centers])
            np.testing.assert_allclose(got[i], oracle, rtol=0, atol=1e-12)
    report(5, "center hits exactly 1.0; scalar-oracle agreement 1e-12 on "
              "1000 random inputs per kind")


def test_criterion_06_pretrain_sanity(tmp_path):
    started = time.time()
    cfg = EncoderConfig(hidden=24, layers=1, readout_steps=1, angle_domains=4,
                        dist_domains=4, rbf_dim=8, cutoff=4.0)
    rng = np.random.default_rng(42)
    path = tmp_path / "pre.jsonl"
    random_dataset_file(path, rng, 32)
    dataset = parse_dataset(path, "regression")
    tcfg = TrainConfig(max_epochs=300, batch_pretrain=32, seed=0, lr=2e-3)
    result = pretrain(dataset, cfg, tcfg)

    inputs = [featurize(m, cfg) for m in dataset.molecules]
    z2d = project(Tensor(_encode_all("2d", inputs, result.params, cfg)),
                  result.params, "2d").data
    z3d = project(Tensor(_encode_all("3d", inputs, result.params, cfg)),
                  result.params, "3d").data
    sims = z2d @ z3d.T
    top1 = float((sims.argmax(axis=1) == np.arange(32)).mean())
    mean_loss = result.history[-1]["contrastive_mean"]
    bound = 2 * math.log(32)
    assert top1 >= 0.9, f"cross-view retrieval top-1 {top1:.3f} < 0.9"
    assert mean_loss < bound, f"mean loss {mean_loss:.3f} >= 2 ln 32"
    elapsed = time.time() - started
    assert elapsed < 600.0
    report(6, f"32 molecules, {tcfg.max_epochs} epochs: top-1 retrieval {top1:.3f} "
              f">= 0.9, mean loss {mean_loss:.3f} < {bound:.3f}, {elapsed:.0f}s")


def test_criterion_07_finetune_memorization(tmp_path):
    cfg = EncoderConfig(hidden=8, layers=1, readout_steps=1, angle_domains=2,
                        dist_domains=2, rbf_dim=4, cutoff=4.0)
    train = list(range(8))

    rng = np.random.default_rng(107)
    reg_path = tmp_path / "reg.jsonl"
    random_dataset_file(reg_path, rng, 8, task="regression", n_atoms=5)
    reg_ds = parse_dataset(reg_path, "regression")
    tcfg = TrainConfig(max_epochs=500, batch_finetune=8, seed=0, lr=1e-2,
                       patience=500, lambda_reg=0.0)
    res = finetune(reg_ds, None, cfg, tcfg, splits=(train, train, train))
    inputs = [featurize(m, cfg) for m in reg_ds.molecules]
    train_rmse = evaluate_metric(reg_ds, train, inputs, res.params, cfg)
    assert train_rmse < 0.05, f"training RMSE {train_rmse:.4f} >= 0.05"

    cls_path = tmp_path / "cls.jsonl"
    mols = random_dataset_file(cls_path, rng, 8, task="classification", n_atoms=5)
    labels = [m.labels[0] for m in mols]
    assert 0.0 in labels and 1.0 in labels
    cls_ds = parse_dataset(cls_path, "classification")
    ccfg = TrainConfig(max_epochs=500, batch_finetune=8, seed=0, lr=1e-2,
                       patience=500, lambda_reg=0.0)
    cres = finetune(cls_ds, None, cfg, ccfg, splits=(train, train, train))
    cinputs = [featurize(m, cfg) for m in cls_ds.molecules]
    train_auc = evaluate_metric(cls_ds, train, cinputs, cres.params, cfg)
    assert train_auc == 1.0, f"training ROC-AUC {train_auc} != 1.0"
    report(7, f"8-molecule memorization: regression RMSE {train_rmse:.4f} < 0.05, "
              f"classification ROC-AUC {train_auc:.1f} = 1.0")


def test_criterion_08_lambda_effect(tmp_path):
    cfg = EncoderConfig(hidden=8, layers=1, readout_steps=1, angle_domains=4,
                        dist_domains=2, rbf_dim=4, cutoff=4.0)
    rng = np.random.default_rng(108)
    path = tmp_path / "lam.jsonl"
    random_dataset_file(path, rng, 8, n_atoms=5)
    dataset = parse_dataset(path, "regression")
    wins = 0
    for seed in range(10):
        regs = {}
        for lam in (0.0, 0.01):
            tcfg = TrainConfig(max_epochs=25, batch_pretrain=8, seed=seed,
                               lambda_reg=lam)
            result = pretrain(dataset, cfg, tcfg)
            regs[lam] = float(spatial_regularizer(result.params, cfg.layers,
                                                  cfg.angle_domains).data)
        if regs[0.01] < regs[0.0]:
            wins += 1
    assert wins >= 8, f"regularized pretraining shrank the domain gap in only {wins}/10 seeds"
    report(8, f"spatial regularizer smaller with lambda=0.01 than lambda=0 "
              f"in {wins}/10 seeds (need >= 8)")


SMALL_RUN_CONFIG = {
    "hidden": 8, "layers": 1, "readout_steps": 1, "angle_domains": 2,
    "dist_domains": 2, "rbf_dim": 4, "cutoff": 4.0,
    "max_epochs": 4, "batch_pretrain": 8, "batch_finetune": 8, "patience": 4,
}


def test_criterion_09_determinism(tmp_path):
    rng = np.random.default_rng(109)
    data = tmp_path / "data.jsonl"
    random_dataset_file(data, rng, 10, task="regression", n_atoms=5)
    config = tmp_path / "config.json"
    config.write_text(json.dumps(SMALL_RUN_CONFIG))

    outputs = []
    for run in ("a", "b"):
        pre = tmp_path / f"pre_{run}"
        fin = tmp_path / f"fin_{run}"
        assert cli_main(["pretrain", "--data", str(data), "--config", str(config),
                         "--out", str(pre), "--seed", "3"]) == 0
        assert cli_main(["finetune", "--data", str(data), "--task", "reg",
                         "--checkpoint", str(pre / "checkpoint.ggcl"),
                         "--config", str(config), "--out", str(fin),
                         "--seed", "3"]) == 0
        outputs.append({
            "ckpt": (pre / "checkpoint.ggcl").read_bytes(),
            "pre_csv": (pre / "pretrain_loss.csv").read_text(),
            "model": (fin / "model.ggcl").read_bytes(),
            "fin_csv": (fin / "finetune_loss.csv").read_text(),
        })
    a, b = outputs
    assert a["ckpt"] == b["ckpt"], "pretrain checkpoints differ"
    assert a["model"] == b["model"], "finetuned models differ"
    assert a["pre_csv"] == b["pre_csv"] and a["fin_csv"] == b["fin_csv"]
    report(9, "two identical-seed pretrain+finetune runs: bit-identical "
              "checkpoints and loss logs")


def test_criterion_10_format_round_trips(tmp_path):
    rng = np.random.default_rng(110)
    data = tmp_path / "rt.jsonl"
    random_dataset_file(data, rng, 6, task="regression", n_atoms=5)
    ds1 = parse_dataset(data, "regression")
    out = tmp_path / "rt2.jsonl"
    serialize_dataset(ds1, out)
    ds2 = parse_dataset(out, "regression")
    assert len(ds1) == len(ds2)
    for m1, m2 in zip(ds1.molecules, ds2.molecules):
        assert m1.id == m2.id and m1.bond_list == m2.bond_list
        assert m1.labels == m2.labels
        assert (m1.atom_features == m2.atom_features).all()
        assert (m1.pos2d == m2.pos2d).all()
        assert all((c1 == c2).all() for c1, c2 in zip(m1.conformers, m2.conformers))

    cfg = EncoderConfig(hidden=8, rbf_dim=4, angle_domains=2, dist_domains=2)
    params = init_encoder_params(cfg, ds1.feature_dims, np.random.default_rng(0))
    path = tmp_path / "ck.ggcl"
    save_checkpoint(params, cfg, ds1.feature_dims, path)
    loaded = load_checkpoint(path, config_fingerprint(cfg, ds1.feature_dims))
    assert sorted(loaded.tensors) == params.names()
    for name, t in params.items():
        assert loaded.tensors[name].shape == t.data.shape
        np.testing.assert_array_equal(loaded.tensors[name],
                                      t.data.astype(np.float32))

    corrupt = tmp_path / "corrupt.ggcl"
    corrupt.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(corrupt)
    truncated = tmp_path / "trunc.ggcl"
    truncated.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(CheckpointError, match="expected .* found"):
        load_checkpoint(truncated)
    with pytest.raises(CheckpointError, match="fingerprint mismatch"):
        load_checkpoint(path, expected_fingerprint=config_fingerprint(cfg, (9, 9)))
    report(10, "dataset and checkpoint round-trips lossless (float32 rounding); "
               "bad-magic, truncation, and fingerprint errors raised")
