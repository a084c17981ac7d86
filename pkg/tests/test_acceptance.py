"""End-to-end acceptance gate.

Each test is one shipping criterion and prints a single
``[ACCEPTANCE] <name>: PASS/FAIL`` line (run with ``-s`` to see them
live). The two training runs sit at the end; everything above them
finishes in seconds.
"""

import functools
import json
import statistics
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from ferkit import ops
from ferkit.augment import AugmentPolicy
from ferkit.data import Dataset, class_weights, load_class_directories, stratified_split
from ferkit.evaluate import ensemble_predict, predict_tta, soft_vote
from ferkit.interpret import _positions, occlusion_map, saliency_map
from ferkit.layers import Dense, Flatten
from ferkit.model import Model, build_model
from ferkit.server import create_app
from ferkit.train import TrainConfig, TrainState, fit, lr_schedule_step

from oracles import conv2d_naive, numeric_gradient, rel_error

FER_CLASS_TOTALS = (4953, 547, 5121, 8989, 6077, 4002, 6198)


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException:
                print(f"\n[ACCEPTANCE] {name}: FAIL")
                raise
            suffix = f" ({detail})" if isinstance(detail, str) else ""
            print(f"\n[ACCEPTANCE] {name}: PASS{suffix}")
        return wrapper
    return deco


def take_per_class(dataset, per_class, seed):
    rng = np.random.default_rng(seed)
    picked = []
    for label, want in enumerate(per_class):
        idx = [i for i, s in enumerate(dataset.samples) if s.label == label]
        rng.shuffle(idx)
        picked.extend(idx[:want])
    return Dataset([dataset.samples[i] for i in sorted(picked)], dataset.split)


@criterion("gradient-correctness")
def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0

    def check(analytic, f, x):
        nonlocal worst
        err = rel_error(analytic, numeric_gradient(f, x))
        worst = max(worst, err)
        assert err < 1e-4

    for _ in range(20):
        n, c, oc = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 4)
        h = int(rng.integers(3, 7))
        k = int(rng.integers(1, min(h, 3) + 1))
        stride = int(rng.integers(1, 3))
        padding = rng.choice(["same", "valid"])
        x = rng.standard_normal((n, c, h, h))
        w = rng.standard_normal((oc, c, k, k))
        b = rng.standard_normal(oc)
        y, cache = ops.conv2d_forward(x, w, b, padding, stride)
        dy = rng.standard_normal(y.shape)
        dx, dw, db = ops.conv2d_backward(dy, cache)
        check(dx, lambda v: np.sum(ops.conv2d_forward(v, w, b, padding, stride)[0] * dy), x)
        check(dw, lambda v: np.sum(ops.conv2d_forward(x, v, b, padding, stride)[0] * dy), w)
        check(db, lambda v: np.sum(ops.conv2d_forward(x, w, v, padding, stride)[0] * dy), b)

    for _ in range(20):
        n, c = rng.integers(1, 3), rng.integers(1, 3)
        h = int(rng.integers(4, 8))
        k = int(rng.integers(2, 4))
        stride = int(rng.integers(1, 3))
        ceil = bool(rng.integers(0, 2))
        x = rng.standard_normal((n, c, h, h))
        y, cache = ops.maxpool2d_forward(x, k, stride, ceil)
        dy = rng.standard_normal(y.shape)
        dx = ops.maxpool2d_backward(dy, cache)
        check(dx, lambda v: np.sum(ops.maxpool2d_forward(v, k, stride, ceil)[0] * dy), x)

    for _ in range(20):
        n, di, do = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
        x = rng.standard_normal((n, di))
        w = rng.standard_normal((di, do))
        b = rng.standard_normal(do)
        y, cache = ops.dense_forward(x, w, b)
        dy = rng.standard_normal(y.shape)
        dx, dw, db = ops.dense_backward(dy, cache)
        check(dx, lambda v: np.sum(ops.dense_forward(v, w, b)[0] * dy), x)
        check(dw, lambda v: np.sum(ops.dense_forward(x, v, b)[0] * dy), w)
        check(db, lambda v: np.sum(ops.dense_forward(x, w, v)[0] * dy), b)

    for _ in range(20):
        ch = int(rng.integers(1, 4))
        if rng.integers(0, 2):
            x = rng.standard_normal((int(rng.integers(2, 5)), ch))
        else:
            x = rng.standard_normal((2, ch, int(rng.integers(2, 4)), int(rng.integers(2, 4))))
        gamma = rng.standard_normal(ch) + 1.5
        beta = rng.standard_normal(ch)
        rm, rv = np.zeros(ch), np.ones(ch)

        def bn(xx, gg, bb):
            return ops.batchnorm_forward(xx, gg, bb, "train", rm, rv)[0]

        y, cache, _ = ops.batchnorm_forward(x, gamma, beta, "train", rm, rv)
        dy = rng.standard_normal(y.shape)
        dx, dgamma, dbeta = ops.batchnorm_backward(dy, cache)
        check(dx, lambda v: np.sum(bn(v, gamma, beta) * dy), x)
        check(dgamma, lambda v: np.sum(bn(x, v, beta) * dy), gamma)
        check(dbeta, lambda v: np.sum(bn(x, gamma, v) * dy), beta)

    for _ in range(20):
        x = rng.standard_normal((3, 5)) + 0.05  # keep clear of the kink
        x[np.abs(x) < 0.01] = 0.1
        y, mask = ops.relu_forward(x)
        dy = rng.standard_normal(y.shape)
        check(ops.relu_backward(dy, mask),
              lambda v: np.sum(ops.relu_forward(v)[0] * dy), x)

    for i in range(20):
        x = rng.standard_normal((3, 6))
        y, cache = ops.dropout_forward(x, 0.4, "train", rng=i)
        dy = rng.standard_normal(y.shape)
        check(ops.dropout_backward(dy, cache),
              lambda v: np.sum(ops.dropout_forward(v, 0.4, "train", rng=i)[0] * dy), x)

    for _ in range(20):
        n, k = int(rng.integers(2, 6)), 7
        logits = rng.standard_normal((n, k))
        labels = rng.integers(0, k, n)
        weights = rng.random(k) + 0.5
        _, _, grad = ops.softmax_cross_entropy(logits, labels, weights)
        check(grad,
              lambda v: ops.softmax_cross_entropy(v, labels, weights)[0], logits)

    return f"worst relative error {worst:.2e}"


@criterion("conv-oracle-equivalence")
def test_conv_matches_naive_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        n, c, oc = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5)
        h, w = int(rng.integers(3, 10)), int(rng.integers(3, 10))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 4))
        padding = str(rng.choice(["same", "valid"]))
        if padding == "valid" and (k > h or k > w):
            k = min(h, w)
        x = rng.standard_normal((n, c, h, w)).astype(np.float64)
        wt = rng.standard_normal((oc, c, k, k)).astype(np.float64)
        b = rng.standard_normal(oc).astype(np.float64)
        got, _ = ops.conv2d_forward(x, wt, b, padding, stride)
        want = conv2d_naive(x, wt, b, padding, stride)
        err = rel_error(got, want)
        worst = max(worst, err)
        assert err < 1e-5
    return f"worst relative error {worst:.2e}"


@criterion("architecture-fidelity")
def test_architecture_parameter_counts():
    # closed forms re-derived here, independent of the model module
    five = ((5 * 5 * 1 + 1) * 32 + 2 * 32
            + (4 * 4 * 32 + 1) * 32 + 2 * 32
            + (5 * 5 * 32 + 1) * 64 + 2 * 64
            + (2304 + 1) * 1024 + 2 * 1024
            + (1024 + 1) * 7)
    base = ((3 * 3 * 1 + 1) * 32 + 2 * 32
            + 3 * ((3 * 3 * 32 + 1) * 32 + 2 * 32)
            + (4608 + 1) * 8192 + 2 * 8192
            + (8192 + 1) * 7)

    model = build_model("five-layer")
    assert model.param_count() == five == 2_438_311
    assert model.param_count() // 100_000 == 24  # 2.4m
    dense = next(l for l in model.layers if isinstance(l, Dense))
    assert dense.w.shape == (2304, 1024)
    x = np.zeros((1, 1, 48, 48), dtype=np.float32)
    probs = model.forward_probs(x, mode="infer")
    assert probs.shape == (1, 7)

    baseline = build_model("baseline")
    assert baseline.param_count() == base == 37_858_983
    assert baseline.param_count() // 100_000 == 378  # 37.8m
    assert abs(baseline.param_count() - 37_800_000) < 100_000
    return f"five-layer {five:,}; baseline {base:,}"


@criterion("schedule-behavior")
def test_plateau_schedule_behavior():
    config = TrainConfig(lr0=0.1)
    state = TrainState(current_lr=0.1)
    lrs = [lr_schedule_step(state, 0.30, config)]  # first epoch improves
    for _ in range(10):
        lrs.append(lr_schedule_step(state, 0.30, config))  # 10-epoch plateau
    assert lrs[:10] == [0.1] * 10
    assert lrs[10] == 0.05
    halvings = sum(1 for a, b in zip(lrs, lrs[1:]) if b < a)
    assert halvings == 1

    state = TrainState(current_lr=0.1)
    lr_schedule_step(state, 0.30, config)
    for _ in range(8):
        lr_schedule_step(state, 0.30, config)
    assert lr_schedule_step(state, 0.40, config) == 0.1  # reset at epoch 9
    for _ in range(9):
        assert lr_schedule_step(state, 0.40, config) == 0.1
    assert lr_schedule_step(state, 0.40, config) == 0.05
    return "exactly one halving 0.1->0.05"


@criterion("weighting-identity")
def test_class_weighting_identity_and_ratio():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((32, 7))
    labels = rng.integers(0, 7, 32)
    loss_plain, _, grad_plain = ops.softmax_cross_entropy(logits, labels)
    loss_ones, _, grad_ones = ops.softmax_cross_entropy(logits, labels, np.ones(7))
    assert loss_plain == loss_ones
    assert np.array_equal(grad_plain, grad_ones)

    w = class_weights(np.array(FER_CLASS_TOTALS))
    ratio = w[1] / w[3]
    assert abs(ratio - 8989 / 547) / (8989 / 547) <= 1e-9
    return f"w_Disgust/w_Happy = {ratio:.6f}"


@criterion("ensemble-tta-algebra")
def test_ensemble_and_tta_algebra():
    rng = np.random.default_rng(3)
    dense = Dense("d", 2304, 7, dtype=np.float64)
    dense.w[...] = rng.normal(scale=0.1, size=(2304, 7))
    dense.b[...] = rng.normal(size=7)
    model = Model("custom", [Flatten("f"), dense], input_shape=(1, 48, 48))
    image = rng.random((48, 48))

    single = ensemble_predict([(model, False)], image)
    for n in (2, 5):
        assert np.array_equal(ensemble_predict([(model, False)] * n, image), single)

    identity = AugmentPolicy.identity()
    runs = [predict_tta(model, image, identity, seed=123) for _ in range(3)]
    assert np.array_equal(runs[0], runs[1]) and np.array_equal(runs[1], runs[2])

    rows = rng.random((6, 7))
    rows /= rows.sum(axis=1, keepdims=True)
    base = soft_vote(rows)
    for _ in range(10):
        assert np.array_equal(soft_vote(rows[rng.permutation(6)]), base)
    return "bit-exact"


@criterion("interpretability-sanity")
def test_interpretability_sanity():
    h = w = 12
    zero = Dense("d", h * w, 7, dtype=np.float64)
    zero.w[...] = 0.0
    zero.b[...] = np.arange(7, dtype=np.float64)
    const_model = Model("custom", [Flatten("f"), zero], input_shape=(1, h, w))
    image = np.random.default_rng(4).random((h, w))
    occ = occlusion_map(const_model, image, patch=4, stride=2)
    sal = saliency_map(const_model, image, 0)
    assert np.all(occ.values == 0.0)
    assert np.all(sal.values == 0.0)

    patch, stride, fill = 5, 2, 0.5
    r0, c0 = 6, 3
    pixel = Dense("d", h * w, 7, dtype=np.float64)
    pixel.w[...] = 0.0
    pixel.b[...] = 0.0
    pixel.w[r0 * w + c0, 0] = 1.0
    pixel_model = Model("custom", [Flatten("f"), pixel], input_shape=(1, h, w))

    def softmax0(v):
        z = np.array([v, 0, 0, 0, 0, 0, 0])
        e = np.exp(z - z.max())
        return (e / e.sum())[0]

    p0 = softmax0(image[r0, c0])
    p_occ = softmax0(fill)
    want = np.zeros((h, w))
    coverage = np.zeros((h, w))
    for i in _positions(h, patch, stride):
        for j in _positions(w, patch, stride):
            covers = i <= r0 < i + patch and j <= c0 < j + patch
            want[i : i + patch, j : j + patch] += (p0 - p_occ) if covers else 0.0
            coverage[i : i + patch, j : j + patch] += 1
    want /= coverage
    got = occlusion_map(pixel_model, image, patch=patch, stride=stride, fill=fill)
    assert np.allclose(got.values, want, rtol=0, atol=1e-12)
    return "constant-zero and closed-form oracle"


@criterion("latency-satisficing")
def test_service_latency_median():
    import io
    from PIL import Image

    model = build_model("five-layer", seed=5)
    app = create_app(model=model)
    arr = np.random.default_rng(6).integers(0, 256, (48, 48), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    body = buf.getvalue()

    latencies = []
    with TestClient(app) as client:
        for _ in range(100):
            resp = client.post("/predict", content=body,
                               headers={"Content-Type": "image/png"})
            assert resp.status_code == 200
            latencies.append(resp.json()["latency_ms"])
    median = statistics.median(latencies)
    assert median < 100.0
    return f"median {median:.2f}ms over 100 runs (stretch 40ms: "\
           f"{'met' if median < 40 else 'missed'})"


@criterion("data-round-trip")
def test_data_round_trip(fer_splits, tmp_path):
    import base64
    import io
    from PIL import Image

    model = build_model("five-layer", seed=7)
    root = tmp_path / "collected"
    app = create_app(model=model, data_root=str(root))
    submitted = {}
    with TestClient(app) as client:
        for label, idx in (("Disgust", 1), ("Surprise", 5)):
            arr = np.random.default_rng(idx).integers(0, 256, (48, 48),
                                                      dtype=np.uint8)
            buf = io.BytesIO()
            Image.fromarray(arr, mode="L").save(buf, format="PNG")
            payload = {"label": label,
                       "image_base64": base64.b64encode(buf.getvalue()).decode()}
            resp = client.post("/samples", json=payload)
            assert resp.status_code == 201
            submitted[idx] = arr
    reloaded = load_class_directories(root)
    assert len(reloaded) == 2
    for sample in reloaded.samples:
        assert sample.label in submitted
        assert np.array_equal(sample.pixels,
                              submitted[sample.label].astype(np.float32) / 255.0)

    train, val, test = fer_splits
    counts = train.class_counts + val.class_counts + test.class_counts
    assert tuple(int(c) for c in counts) == FER_CLASS_TOTALS
    assert int(counts.sum()) == 35_887
    return "storage round trip + corpus counts 35,887"


@criterion("memorization")
def test_memorization_small_subset(fer_splits):
    train, _, _ = fer_splits
    subset = take_per_class(train, (19, 19, 18, 18, 18, 18, 18), seed=8)
    assert len(subset) == 128

    config = TrainConfig(lr0=0.01, batch_size=32, momentum=0.9,
                         weight_decay=0.0, max_epochs=200, seed=8,
                         augment_policy=AugmentPolicy.identity())
    model = build_model("five-layer", seed=8)
    start = time.perf_counter()
    model, state = fit(model, subset, subset, config,
                       stop_at_val_accuracy=0.99)
    elapsed = time.perf_counter() - start
    assert state.best_val_accuracy >= 0.99
    assert state.epoch <= 200
    assert elapsed < 600.0
    return (f"{state.best_val_accuracy:.1%} at epoch {state.epoch}, "
            f"{elapsed:.0f}s")


@criterion("desk-scale-learning")
def test_desk_scale_learning_signal(fer_splits):
    train, val, _ = fer_splits
    small_train, _ = stratified_split(train, 2000 / len(train), seed=9)
    small_val, _ = stratified_split(val, 500 / len(val), seed=9)
    assert abs(len(small_train) - 2000) <= 5
    assert abs(len(small_val) - 500) <= 5

    config = TrainConfig(lr0=0.01, batch_size=128, momentum=0.9,
                         weight_decay=0.0001, max_epochs=30,
                         use_class_weights=True, seed=9)
    model = build_model("five-layer", seed=9)
    start = time.perf_counter()
    model, state = fit(model, small_train, small_val, config,
                       stop_at_val_accuracy=0.60)
    elapsed = time.perf_counter() - start
    assert state.best_val_accuracy >= 0.35
    assert elapsed < 1800.0
    return (f"val {state.best_val_accuracy:.1%} after {state.epoch} epochs, "
            f"{elapsed:.0f}s")
