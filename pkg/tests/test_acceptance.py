"""Acceptance gate: one test per top-level claim the package makes.

Each test is self-contained and prints a single pass/fail line through
the terminal-summary hook in conftest.py.
"""

import json
import time

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from conftest import rel_err
from ttsnn import datasets, metrics
from ttsnn.accelsim import compare_designs
from ttsnn.cli import run
from ttsnn.models import resnet18, resnet34, tiny6
from ttsnn.tensor import (TTConvCores, conv2d, merge_ptt, permute_out_first,
                          tt_reconstruct, tt_svd)
from ttsnn.ttlayers import TTConv2d, ptt_forward, stt_forward, tt_conv_backward
from ttsnn.train import evaluate, finalize_merge, init_ttsnn, train, TrainConfig
from ttsnn.vbmf import RESNET18_RANKS, RESNET34_RANKS, evbmf_rank


def random_cores(rng, i, o, k, ranks):
    r1, r2, r3 = ranks
    scale = 1.0 / np.sqrt(max(r1, r2, r3) * k)
    return TTConvCores(
        rng.normal(0, scale, (i, r1)).astype(np.float32),
        rng.normal(0, scale, (r1, k, r2)).astype(np.float32),
        rng.normal(0, scale, (r2, k, r3)).astype(np.float32),
        rng.normal(0, scale, (r3, o)).astype(np.float32),
    )


def test_criterion_01_merge_equivalence():
    rng = np.random.default_rng(1)
    start = time.monotonic()
    for _ in range(120):
        i = int(rng.integers(1, 13))
        o = int(rng.integers(1, 13))
        r = int(rng.integers(1, 7))
        k = int(rng.choice([3, 5]))
        s = int(rng.choice([1, 2]))
        hw = int(rng.integers(k, k + 8))
        cores = random_cores(rng, i, o, k, (r, r, r))
        x = rng.normal(0, 1, (i, hw, hw)).astype(np.float32)
        dense = conv2d(x, merge_ptt(cores), stride=s, pad_h=k // 2, pad_w=k // 2)
        parallel = ptt_forward(x, cores, stride=s)
        assert rel_err(parallel, dense) < 1e-5
    assert time.monotonic() - start < 30


def test_criterion_02_stt_dense_equivalence():
    rng = np.random.default_rng(2)
    for _ in range(120):
        i = int(rng.integers(1, 13))
        o = int(rng.integers(1, 13))
        ranks = tuple(int(rng.integers(1, 7)) for _ in range(3))
        k = int(rng.choice([3, 5]))
        s = int(rng.choice([1, 2]))
        hw = int(rng.integers(k, k + 8))
        cores = random_cores(rng, i, o, k, ranks)
        x = rng.normal(0, 1, (i, hw, hw)).astype(np.float32)
        kernel = permute_out_first(tt_reconstruct(cores))
        dense = conv2d(x, kernel, stride=s, pad_h=k // 2, pad_w=k // 2)
        chained = stt_forward(x, cores, stride=s)
        assert rel_err(chained, dense) < 1e-5


def _fd_check(loss_fn, param, index, analytic, eps=1e-5):
    with torch.no_grad():
        orig = param.view(-1)[index].item()
        param.view(-1)[index] = orig + eps
        up = loss_fn().item()
        param.view(-1)[index] = orig - eps
        down = loss_fn().item()
        param.view(-1)[index] = orig
    fd = (up - down) / (2 * eps)
    scale = max(abs(fd), abs(analytic), 1e-6)
    assert abs(fd - analytic) / scale < 1e-4, (
        f"finite difference {fd} vs analytic {analytic}"
    )


def test_criterion_03_gradient_oracle():
    start = time.monotonic()
    torch.manual_seed(3)
    checked = 0

    # layer-level: the explicit per-kernel backward of one TT conv
    layer = TTConv2d(3, 4, 3, ranks=3, stride=1, mode="ptt").double()
    x = torch.randn(2, 3, 6, 6, dtype=torch.float64)
    upstream = torch.randn(2, 4, 6, 6, dtype=torch.float64)
    grads, x_grad = tt_conv_backward(layer, x, upstream)
    weights = {"w1": layer.conv_in.weight, "w2": layer.conv_v.weight,
               "w3": layer.conv_h.weight, "w4": layer.conv_out.weight}
    rng = np.random.default_rng(3)
    for name, w in weights.items():
        def layer_loss(w=w):
            return (layer(x) * upstream).sum()
        take = rng.choice(w.numel(), size=min(20, w.numel()), replace=False)
        for index in take:
            _fd_check(layer_loss, w, int(index), grads[name].view(-1)[int(index)].item())
            checked += 1

    # network-level: unrolled BPTT through the smoothed spike gate
    spec = tiny6(input_hw=8, t_steps=2, mode="ptt")
    model, _ = init_ttsnn(spec, "fixed-list", rank_list=[2, 2, 2, 2],
                          seed=0, smooth_temp=0.5)
    model.double().eval()
    images = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    labels = torch.tensor([1, 3])

    def net_loss():
        return F.cross_entropy(model(images).sum(dim=0), labels)

    net_loss().backward()
    params = [p for p in model.parameters() if p.grad is not None
              and p.grad.abs().max() > 0]
    for p in params:
        flat = p.grad.view(-1)
        live = torch.nonzero(flat.abs() > 1e-8).view(-1)
        take = live[rng.choice(len(live), size=min(4, len(live)), replace=False)]
        for index in take:
            _fd_check(net_loss, p, int(index), flat[int(index)].item())
            checked += 1

    assert checked >= 100
    assert time.monotonic() - start < 120


def test_criterion_04_count_reproduction():
    start = time.monotonic()
    dense = resnet18(t_steps=4)
    assert metrics.count_params(dense).total_params == pytest.approx(11.20e6, rel=0.02)
    assert metrics.count_flops(dense).total_flops == pytest.approx(2.221e9, rel=0.02)

    stt = resnet18(mode="stt")
    ptt = resnet18(mode="ptt")
    tt_flops = metrics.count_flops(stt, RESNET18_RANKS).total_flops
    assert tt_flops == pytest.approx(0.372e9, rel=0.05)
    assert tt_flops == metrics.count_flops(ptt, RESNET18_RANKS).total_flops

    r34 = metrics.count_params(resnet34(mode="stt"), RESNET34_RANKS).total_params
    assert r34 == pytest.approx(2.67e6, rel=0.05)
    assert time.monotonic() - start < 5

    # the same convention that reproduces every figure above lands the
    # compressed ResNet18 at 1.657M parameters, outside this band; kept
    # as an honest check rather than adjusted to fit
    tt_params = metrics.count_params(stt, RESNET18_RANKS).total_params
    assert tt_params == pytest.approx(1.83e6, rel=0.05), (
        f"compressed ResNet18 has {tt_params} parameters "
        f"({tt_params / 1e6:.3f}M), outside 1.83M +/- 5%"
    )


def test_criterion_05_htt_accounting():
    ptt = resnet18(mode="ptt", t_steps=4)
    htt = resnet18(mode="htt", t_steps=4)  # schedule F,F,HV,HV
    flops_ptt = metrics.count_flops(ptt, RESNET18_RANKS).total_flops
    flops_htt = metrics.count_flops(htt, RESNET18_RANKS).total_flops
    assert flops_htt < flops_ptt


def test_criterion_06_tt_svd_bound():
    rng = np.random.default_rng(6)
    for _ in range(60):
        i, k, o = (int(rng.integers(2, 10)), int(rng.choice([3, 5])),
                   int(rng.integers(2, 10)))
        a = rng.normal(0, 1, (i, k, k, o)).astype(np.float32)
        ranks = tuple(int(rng.integers(1, 7)) for _ in range(3))
        cores, discarded = tt_svd(a, ranks, return_discarded=True)
        err2 = float(np.sum((tt_reconstruct(cores) - a) ** 2))
        assert err2 <= discarded * (1 + 1e-4) + 1e-6

        full = tt_svd(a, (i, i * k, k * o))
        assert rel_err(tt_reconstruct(full), a) < 1e-5


def test_criterion_07_vbmf_recovery():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        u = rng.standard_normal((60, 5))
        v = rng.standard_normal((5, 80))
        m = u @ v + 0.01 * rng.standard_normal((60, 80))
        hits += evbmf_rank(m).rank == 5
    assert hits >= 19
    assert evbmf_rank(np.zeros((40, 50))).rank == 0


def test_criterion_08_desk_scale_training():
    found = datasets.find_mnist()
    if found is None:
        pytest.skip("MNIST IDX files not present (set TTSNN_DATA_DIR); "
                    "the synthetic twin below covers the same pipeline")
    start = time.monotonic()
    train_ds = datasets.load_mnist_idx(found[0], found[1]).subset(5000)
    test_ds = datasets.load_mnist_idx(found[2], found[3])
    spec = tiny6(in_channels=1, input_hw=train_ds.images.shape[2],
                 t_steps=4, mode="ptt")
    model, _ = init_ttsnn(spec, "energy-threshold", seed=0)
    cfg = TrainConfig(epochs=5, batch_size=100, seed=0)
    images = torch.from_numpy(train_ds.images)
    labels = torch.from_numpy(train_ds.labels)
    train(model, (images, labels), cfg)

    probe = torch.from_numpy(test_ds.images[:512])
    model.eval()
    with torch.no_grad():
        before = model(probe).sum(dim=0).argmax(dim=1)
    finalize_merge(model)
    with torch.no_grad():
        after = model(probe).sum(dim=0).argmax(dim=1)
    assert torch.equal(before, after)

    acc = evaluate(model, (torch.from_numpy(test_ds.images),
                           torch.from_numpy(test_ds.labels)))
    assert acc >= 0.95
    assert time.monotonic() - start < 15 * 60


def test_desk_scale_training_synthetic_twin():
    ds = datasets.synthetic_blobs(600, num_classes=10, hw=16, seed=0)
    spec = tiny6(in_channels=1, input_hw=16, t_steps=4, mode="ptt")
    model, _ = init_ttsnn(spec, "energy-threshold", seed=0)
    images = torch.from_numpy(ds.images)
    labels = torch.from_numpy(ds.labels)
    train(model, (images, labels), TrainConfig(epochs=5, batch_size=100, seed=0))

    model.eval()
    with torch.no_grad():
        before = model(images[:128]).sum(dim=0).argmax(dim=1)
    finalize_merge(model)
    with torch.no_grad():
        after = model(images[:128]).sum(dim=0).argmax(dim=1)
    assert torch.equal(before, after)
    assert evaluate(model, (images, labels)) >= 0.95


def test_criterion_09_simulator_trends():
    start = time.monotonic()
    rel = compare_designs(resnet18(), RESNET18_RANKS)["relative"]
    assert rel["single_stt_vs_baseline"] <= 0.45
    assert rel["single_ptt_vs_stt"] > 1.0
    assert rel["multi_ptt_vs_stt_sequential"] <= 0.85
    assert rel["multi_htt_vs_ptt"] < 1.0
    assert time.monotonic() - start < 60


def test_criterion_10_determinism(tmp_path):
    pairs = {}
    for kind, argv in {
        "count": ["count", "--arch", "resnet18", "--mode", "stt",
                  "--ranks", "paper-resnet18"],
        "simulate": ["simulate", "--arch", "resnet18", "--mode", "ptt",
                     "--ranks", "paper-resnet18"],
    }.items():
        blobs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{kind}-{rep}"
            assert run(argv + ["--out", str(out), "--no-timestamp",
                               "--seed", "0"]) == 0
            blobs.append((out / f"{kind}.json").read_bytes())
        pairs[kind] = blobs
    for kind, (first, second) in pairs.items():
        assert first == second, f"{kind} reports differ between runs"

    trains = []
    for rep in ("a", "b"):
        out = tmp_path / f"train-{rep}"
        assert run(["train", "--arch", "tiny6", "--mode", "ptt",
                    "--dataset", "synthetic", "--limit", "64",
                    "--epochs", "1", "--batch-size", "32", "--seed", "5",
                    "--out-dir", str(out), "--no-timestamp"]) == 0
        trains.append((out / "train.json").read_bytes())
    assert trains[0] == trains[1]
    record = json.loads(trains[0])
    assert record["epochs"][0]["loss"] > 0
