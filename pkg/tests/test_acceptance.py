"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line through the
``report`` fixture (repeated in the terminal summary) before asserting.
"""

import time

import numpy as np
import pytest

from bidense import modelfile
from bidense.binarize import Dab, PlainSign, binarize_activations, channel_entropy, optimal_alpha
from bidense.cfb import DOWN, IDENTITY, UP, plan_fusion
from bidense.network import FULL_SCALE, BiDenseModel, Context, ModelConfig, count_costs
from bidense.tensor import binary_conv2d, pack_signs, real_conv2d, unpack_signs
from bidense.train import TrainConfig, gradcheck_model, train_loop

from oracles import grid_l2_minimiser
from test_cfb import check_invariants

LN2 = float(np.log(2.0))


def test_criterion_1_binary_conv_matches_real_conv(report):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    mismatches = 0
    for _ in range(200):
        groups = int(rng.choice([1, 1, 2, 4]))
        c_in = groups * int(rng.integers(1, 5))
        c_out = groups * int(rng.integers(1, 5))
        k = int(rng.integers(1, 6))
        stride = int(rng.integers(1, 4))
        padding = int(rng.integers(0, 3))
        h = int(rng.integers(max(1, k - 2 * padding), 14))
        w = int(rng.integers(max(1, k - 2 * padding), 14))
        n = int(rng.integers(1, 4))
        x = rng.normal(size=(n, c_in, h, w))
        wt = rng.normal(size=(c_out, c_in // groups, k, k))
        xb, wb = pack_signs(x), pack_signs(wt, "weight")
        got = binary_conv2d(xb, wb, stride=stride, padding=padding, groups=groups)
        want = real_conv2d(unpack_signs(xb), unpack_signs(wb), stride, padding, groups,
                           pad_value=-1.0)
        mismatches += not np.array_equal(got, want)
    ok = report(1, mismatches == 0, f"{200 - mismatches}/200 geometries exact", start)
    assert ok


def test_criterion_2_fusion_partition(report):
    start = time.perf_counter()
    for c_in in range(1, 65):
        for c_out in range(1, 65):
            check_invariants(plan_fusion(c_in, c_out))
    for c in range(1, 33):
        doubled, halved, same = plan_fusion(c, 2 * c), plan_fusion(2 * c, c), plan_fusion(c, c)
        assert doubled.direction == UP and doubled.n_r == 2 and doubled.groups == ()
        assert halved.direction == DOWN and halved.n_r == 0
        assert halved.groups == tuple((2 * i, 2 * i + 2) for i in range(c))
        assert same.direction == IDENTITY
        np.testing.assert_array_equal(same.matrix(), np.eye(c))
    remainder = plan_fusion(8, 3)
    assert remainder.groups == ((0, 2), (2, 4), (4, 8))
    ok = report(2, True, "4096 plans satisfy the partition invariants", start)
    assert ok


def test_criterion_3_mad_scale_is_l2_optimal(report):
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    beaten = 0
    for _ in range(100):
        x = rng.normal(rng.normal(), rng.uniform(0.2, 3.0), size=int(rng.integers(2, 200)))
        alpha = optimal_alpha(x)
        grid = np.linspace(0.01, 4 * alpha, 400)
        _, errs = grid_l2_minimiser(x, grid)
        signs = np.where(x >= 0, 1.0, -1.0)
        err_star = float(np.sum((x - alpha * signs) ** 2))
        beaten += err_star > min(errs) + 1e-12 * max(1.0, err_star)
    ok = report(3, beaten == 0, f"MAD optimal on {100 - beaten}/100 vectors", start)
    assert ok


def random_mini_config(rng) -> ModelConfig:
    stages = int(rng.integers(1, 3))
    return ModelConfig(
        depths=[1] * stages,
        widths=[int(w) for w in rng.choice([4, 6, 8], stages)],
        decoder_width=int(rng.choice([4, 6])),
        out_channels=int(rng.integers(2, 4)),
        binarizer=str(rng.choice(["dab", "dab_learned_scale", "learned_threshold",
                                  "plain_sign", "dab_no_scale"])),
        bypass=bool(rng.integers(2)),
    )


def test_criterion_4_gradient_check(report):
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    errors = [gradcheck_model(random_mini_config(rng), seed=i, max_entries=2)
              for i in range(20)]
    worst = max(errors)
    elapsed = time.perf_counter() - start
    ok = report(4, worst <= 1e-4 and elapsed < 120,
                f"max relative error {worst:.2e} over 20 networks", start)
    assert ok


def test_criterion_5_entropy_adaptivity(report):
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    dab, plain = Dab(k=1.0, b=0.0), PlainSign()
    never_below, strictly, in_bounds = True, 0, True
    for _ in range(100):
        shift = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 3.0)
        x = rng.normal(size=(2, 16, 16, 16)) + shift
        e_dab = channel_entropy(binarize_activations(x, dab)[0])
        e_plain = channel_entropy(binarize_activations(x, plain)[0])
        for per_channel, _ in (e_dab, e_plain):
            in_bounds &= bool(np.all((per_channel >= 0) & (per_channel <= LN2)))
        never_below &= e_dab[1] >= e_plain[1]
        strictly += e_dab[1] > e_plain[1]
    ok = report(5, never_below and strictly >= 80 and in_bounds,
                f"DAB >= PlainSign in all trials, strictly in {strictly}/100", start)
    assert ok


def test_criterion_6_cost_accounting(report):
    start = time.perf_counter()
    shape = (1, 3, 480, 480)
    binary = count_costs(BiDenseModel(ModelConfig(**FULL_SCALE)), shape)
    full = count_costs(BiDenseModel(ModelConfig(**FULL_SCALE, full_precision=True)), shape)
    params_dev = binary.effective_params / 1_626_000 - 1
    ops_dev = binary.effective_ops / 5.37e9 - 1
    ratio = full.effective_params / binary.effective_params
    ok = abs(params_dev) <= 0.20 and abs(ops_dev) <= 0.20 and abs(ratio / 24.6 - 1) <= 0.25
    report(6, ok, f"params {binary.effective_params / 1e3:,.0f}K ({params_dev:+.1%}), "
                  f"OPs {binary.effective_ops / 1e9:.2f}G ({ops_dev:+.1%}), "
                  f"FP/binary ratio {ratio:.1f}", start)
    assert ok


ABLATION = {
    "Full": dict(binarizer="dab", bypass=True),
    "w/o-DAB": dict(binarizer="learned_threshold", bypass=True),
    "w/o-CFB": dict(binarizer="dab", bypass=False),
    "PlainSign": dict(binarizer="plain_sign", bypass=False),
}


@pytest.mark.slow
def test_criterion_7_toy_ablation(report):
    start = time.perf_counter()
    scores = {name: [] for name in ABLATION}
    for seed in (0, 1, 2):
        for name, variant in ABLATION.items():
            config = TrainConfig(model=ModelConfig(**variant), epochs=12, train_samples=500,
                                 val_samples=100, seed=seed)
            _, history = train_loop(config)
            scores[name].append(100 * history[-1]["mIoU"])
    mean = {name: float(np.mean(v)) for name, v in scores.items()}
    ok = (mean["Full"] >= mean["w/o-DAB"] >= mean["w/o-CFB"]
          and mean["Full"] - mean["w/o-CFB"] >= 3
          and mean["Full"] - mean["PlainSign"] >= 3)
    detail = ", ".join(f"{name} {value:.2f}" for name, value in mean.items())
    report(7, ok, f"mean mIoU over 3 seeds: {detail}", start)
    assert ok


def test_criterion_8_determinism_and_serialization(report):
    start = time.perf_counter()
    config = TrainConfig(model=ModelConfig(depths=[1], widths=[8], decoder_width=8),
                         epochs=2, train_samples=16, val_samples=8, seed=7)
    first = modelfile.dumps(train_loop(config)[0])
    model = train_loop(config)[0]
    second = modelfile.dumps(model)
    reloaded = modelfile.loads(second)
    x = np.random.default_rng(808).normal(size=(3, 3, 32, 32))
    same_outputs = all(
        np.array_equal(model(x, ctx).data, reloaded(x, ctx).data)
        for ctx in (Context(), Context(packed=True)))
    ok = first == second and same_outputs and modelfile.dumps(reloaded) == second
    report(8, ok, f"identical {len(first)}-byte files, reload forward bit-exact", start)
    assert ok
