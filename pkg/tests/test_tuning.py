from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _util import fd_grad, random_dataset, rel_err
from past.data import Dataset
from past.nn import ModelSpec, OptimConfig, ParameterStore, Segment, cross_entropy, forward, init_model
from past.tuning import (
    PastConfig,
    gap_gradient,
    loss_gap,
    lossgap_reg_tune,
    mean_loss_and_grad,
    member_sample,
    module_mean_sensitivity,
    normalize_gamma,
    past_penalty,
    past_tune,
    privacy_sensitivity,
    proximal_shrink,
    sensitivity_concentration,
    sensitivity_map,
    standard_train,
    uniform_reg_tune,
)

OPT = OptimConfig(lr0=0.05, batch_size=16)


def _segs(lengths):
    out, off = [], 0
    for i, n in enumerate(lengths):
        out.append(Segment(f"m{i}", off, n))
        off += n
    return tuple(out)


def _store(v):
    v = np.asarray(v, dtype=float)
    return ParameterStore(v, _segs([len(v)]))


# ---------------------------------------------------------------- gap and sensitivity


def test_loss_gap_recompute(small_spec, rng):
    p = init_model(small_spec, 0)
    m, n = random_dataset(rng, 13, 5, 3), random_dataset(rng, 8, 5, 3)
    per_m = cross_entropy(forward(p, small_spec, m.features)[0], m.labels)[1]
    per_n = cross_entropy(forward(p, small_spec, n.features)[0], n.labels)[1]
    assert loss_gap(p, small_spec, m, n) == pytest.approx(abs(per_m.mean() - per_n.mean()), abs=1e-15)
    assert loss_gap(p, small_spec, m, m) == 0.0


def test_loss_gap_empty(small_spec, rng):
    empty = Dataset(np.zeros((0, 5)), np.zeros(0, dtype=int), 3)
    with pytest.raises(ValueError):
        loss_gap(init_model(small_spec, 0), small_spec, empty, random_dataset(rng, 3, 5, 3))


@pytest.mark.parametrize("seed", range(4))
def test_sensitivity_vs_finite_differences(seed):
    spec = ModelSpec(4, (10, 8), 3, "tanh")
    rng = np.random.default_rng(seed)
    p = init_model(spec, seed).with_values(rng.normal(0, 0.7, spec.num_params))
    m, n = random_dataset(rng, 20, 4, 3), random_dataset(rng, 20, 4, 3)
    assert spec.num_params <= 500
    assert loss_gap(p, spec, m, n) > 1e-3
    raw = privacy_sensitivity(p, spec, m, n)
    fd = np.abs(fd_grad(lambda th: loss_gap(p.with_values(th), spec, m, n), p.values.copy()))
    assert rel_err(raw, fd) < 1e-4


def test_sensitivity_identical_sets_zero(small_spec, rng):
    d = random_dataset(rng, 10, 5, 3)
    assert np.all(privacy_sensitivity(init_model(small_spec, 1), small_spec, d, d) == 0)


def test_sensitivity_duplicate_invariance(small_spec, rng):
    p = init_model(small_spec, 2)
    m, n = random_dataset(rng, 10, 5, 3), random_dataset(rng, 7, 5, 3)
    a = privacy_sensitivity(p, small_spec, m, n)
    b = privacy_sensitivity(p, small_spec, m.repeat(2), n)
    assert np.allclose(a, b, rtol=0, atol=1e-15)


def test_sensitivity_batch_cap(small_spec, rng):
    p = init_model(small_spec, 3)
    m, n = random_dataset(rng, 40, 5, 3), random_dataset(rng, 40, 5, 3)
    capped = privacy_sensitivity(p, small_spec, m, n, gap_batch_limit=2, batch_size=8)
    direct = privacy_sensitivity(p, small_spec, m.subset(np.arange(16)), n.subset(np.arange(16)))
    assert np.array_equal(capped, direct)


def test_gap_gradient_sign(small_spec, rng):
    p = init_model(small_spec, 4)
    m, n = random_dataset(rng, 10, 5, 3), random_dataset(rng, 10, 5, 3)
    g = gap_gradient(p, small_spec, m, n)
    assert np.allclose(np.abs(g), privacy_sensitivity(p, small_spec, m, n))


# ---------------------------------------------------------------- gamma


def test_gamma_examples():
    assert np.array_equal(normalize_gamma(np.ones(4), _segs([4])), np.ones(4))
    assert np.array_equal(normalize_gamma(np.array([2.0, 0, 0, 0]), _segs([4])), [4, 0, 0, 0])
    assert np.allclose(normalize_gamma(np.array([3.0, 1.0]), _segs([2])), [1.5, 0.5])
    assert np.array_equal(normalize_gamma(np.zeros(3), _segs([3])), np.ones(3))
    with pytest.raises(ValueError):
        normalize_gamma(np.array([1.0, -1.0]), _segs([2]))


@st.composite
def raw_and_segments(draw):
    lengths = draw(st.lists(st.integers(1, 12), min_size=1, max_size=6))
    vals = []
    for n in lengths:
        kind = draw(st.sampled_from(["rand", "zero", "tiny", "sparse"]))
        seed = draw(st.integers(0, 2**31))
        r = np.random.default_rng(seed)
        if kind == "zero":
            v = np.zeros(n)
        elif kind == "tiny":
            v = r.uniform(0, 1e-14, n)
        elif kind == "sparse":
            v = np.where(r.random(n) < 0.3, r.exponential(1.0, n), 0.0)
        else:
            v = r.exponential(1.0, n) * 10.0 ** r.integers(-8, 8)
        vals.append(v)
    return np.concatenate(vals), _segs(lengths)


@settings(max_examples=1000, deadline=None)
@given(raw_and_segments())
def test_gamma_segment_mean_is_one(case):
    raw, segs = case
    g = normalize_gamma(raw, segs)
    assert np.all(g >= 0)
    for s in segs:
        assert abs(g[s.slice].mean() - 1.0) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(raw_and_segments(), st.floats(1e-6, 1e6))
def test_gamma_scale_invariant(case, c):
    raw, segs = case
    if any(raw[s.slice].sum() < 1e-12 or c * raw[s.slice].sum() < 1e-12 for s in segs):
        return
    assert np.allclose(normalize_gamma(c * raw, segs), normalize_gamma(raw, segs), rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- penalty and prox


def test_penalty_examples():
    theta = np.array([0.5, -2.0, 3.0])
    val, strength = past_penalty(_store(theta), np.array([4.0, 0.0, 2.0]), 0.0, 0.1)
    assert val == 0.1 * np.abs(theta).sum()
    assert np.array_equal(strength, np.full(3, 0.1))
    val, _ = past_penalty(_store([0.5, -2.0]), np.array([4.0, 0.0]), 1.0, 0.1)
    assert val == pytest.approx(0.2)
    val, _ = past_penalty(_store([1.0, 1.0]), np.array([1.5, 0.5]), 2.0, 1.0)
    assert val == pytest.approx(2.5)


@settings(max_examples=200)
@given(st.integers(0, 2**31))
def test_penalty_focusing_monotone(seed):
    r = np.random.default_rng(seed)
    n = 8
    gamma = np.where(r.random(n) < 0.3, 0.0, r.uniform(1.0, 5.0, n))
    gamma[0] = gamma.max() + 0.5
    theta = r.normal(size=n)
    theta[0] = theta[0] or 1.0
    shares = []
    for a in np.linspace(0, 6, 13):
        _, s = past_penalty(_store(theta), gamma, a, 1.0)
        shares.append(s[0] * abs(theta[0]) / np.sum(s * np.abs(theta)))
    assert all(b >= a - 1e-12 for a, b in zip(shares, shares[1:]))


def test_prox_examples():
    p = _store([0.5, -0.5, 0.001])
    assert np.array_equal(proximal_shrink(p, np.zeros(3), 0.1).values, p.values)
    out = proximal_shrink(p, np.array([1.0, 3.0, 0.1]), 0.1).values
    assert np.allclose(out[:2], [0.4, -0.2], atol=1e-15)
    assert out[2] == 0.0


@given(st.floats(-1e6, 1e6), st.floats(0, 1e3), st.floats(1e-6, 1.0))
def test_prox_nonexpansive_no_flip(x, s, lr):
    y = proximal_shrink(np.array([x]), np.array([s]), lr)[0]
    assert abs(y) <= abs(x) and y * x >= 0


def test_concentration_examples():
    below, share = sensitivity_concentration(np.ones(10))
    assert share(0.2) == pytest.approx(0.2)
    e = np.zeros(10)
    e[3] = 5
    assert sensitivity_concentration(e)[1](0.2) == 1.0
    below, share = sensitivity_concentration(np.array([4.0, 3.0, 2.0, 1.0]))
    assert share(0.5) == pytest.approx(0.7)
    assert share(1.0) == 1.0
    assert below(2.5) == 0.5
    with pytest.raises(ValueError):
        sensitivity_concentration(np.zeros(4))


@settings(max_examples=200)
@given(st.integers(0, 2**31), st.integers(1, 300))
def test_concentration_share_properties(seed, n):
    raw = np.random.default_rng(seed).exponential(size=n)
    _, share = sensitivity_concentration(raw)
    qs = np.linspace(0, 1, 21)
    vals = [share(q) for q in qs]
    assert vals[-1] == 1.0
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert all(v >= q - 1e-12 for v, q in zip(vals, qs))  # top-q share is at least q


# ---------------------------------------------------------------- loops


def test_member_sample(tiny_split):
    s = member_sample(tiny_split.target_train, 7, 3)
    assert len(s) == 7
    assert np.array_equal(s.features, member_sample(tiny_split.target_train, 7, 3).features)


def test_zero_lr_standard_train(tiny_split, tiny_spec):
    p0 = init_model(tiny_spec, 0)
    # lr0 must be positive, so a vanishing rate stands in for zero
    opt = OptimConfig(lr0=1e-300, momentum=0.0, weight_decay=0.0, batch_size=8)
    p1, tr = standard_train(p0, tiny_spec, tiny_split.target_train, tiny_split.target_test, 3, opt)
    assert np.allclose(p0.values, p1.values, rtol=0, atol=1e-290)
    assert len(set(tr.column("train_acc"))) == 1


def test_standard_train_deterministic(tiny_split, tiny_spec):
    p0 = init_model(tiny_spec, 0)
    a = standard_train(p0, tiny_spec, tiny_split.target_train, tiny_split.target_test, 4, OPT, seed=2)
    b = standard_train(p0, tiny_spec, tiny_split.target_train, tiny_split.target_test, 4, OPT, seed=2)
    assert np.array_equal(a[0].values, b[0].values)
    assert a[1].records == b[1].records
    assert [r.epoch for r in a[1].records] == [0, 1, 2, 3]


def test_overfit_small_train_set():
    from past.data import SyntheticSpec, gen_synthetic, six_split
    data = gen_synthetic(SyntheticSpec(num_classes=4, dim=8, per_class_count=60, cluster_spread=0.6), 0)
    split = six_split(data, 0)
    spec = ModelSpec(8, (64,), 4)
    _, tr = standard_train(init_model(spec, 0), spec, split.target_train, split.target_test, 150,
                           OptimConfig(lr0=0.1, batch_size=16), seed=0)
    assert tr[-1].train_acc > tr[-1].test_acc
    assert tr[-1].loss_gap > tr[0].loss_gap


def _base(tiny_split, tiny_spec):
    p0 = init_model(tiny_spec, 1)
    p, _ = standard_train(p0, tiny_spec, tiny_split.target_train, tiny_split.target_test, 10, OPT, seed=0)
    return p


def test_alpha_zero_equals_uniform_l1(tiny_split, tiny_spec):
    p = _base(tiny_split, tiny_spec)
    a, _ = past_tune(p, tiny_spec, tiny_split, PastConfig(lam=0.05, alpha=0.0, tuning_epochs=4), OPT, seed=3)
    b, _ = uniform_reg_tune(p, tiny_spec, tiny_split, 0.05, 1, 4, OPT, seed=3)
    assert np.max(np.abs(a.values - b.values)) <= 1e-12


@pytest.mark.parametrize("which", ["past", "l1", "l2", "lossgap"])
def test_zero_strength_equals_continued_training(tiny_split, tiny_spec, which):
    p = _base(tiny_split, tiny_spec)
    ref, _ = standard_train(p, tiny_spec, tiny_split.target_train, tiny_split.target_test, 3, OPT, seed=4)
    if which == "past":
        out, _ = past_tune(p, tiny_spec, tiny_split, PastConfig(lam=0.0, tuning_epochs=3), OPT, seed=4)
    elif which == "lossgap":
        out, _ = lossgap_reg_tune(p, tiny_spec, tiny_split, 0.0, 3, OPT, seed=4)
    else:
        out, _ = uniform_reg_tune(p, tiny_spec, tiny_split, 0.0, int(which[1]), 3, OPT, seed=4)
    assert np.max(np.abs(out.values - ref.values)) <= 1e-12


def test_l1_large_lambda_sparsifies(tiny_split, tiny_spec):
    p = _base(tiny_split, tiny_spec)
    out, tr = uniform_reg_tune(p, tiny_spec, tiny_split, 0.5, 1, 3, OPT)
    from past.metrics import near_zero_fraction
    assert near_zero_fraction(out.values) > near_zero_fraction(p.values)
    assert np.count_nonzero(out.values == 0) > 0


def test_l2_step_never_zeroes(tiny_split, tiny_spec):
    p = _base(tiny_split, tiny_spec)
    one = replace(OPT, batch_size=10_000)  # one step per epoch
    out, _ = uniform_reg_tune(p, tiny_spec, tiny_split, 0.1, 2, 1, one)
    nz = p.values != 0
    assert np.all(out.values[nz] != 0)


def test_lossgap_step_composition(tiny_split, tiny_spec):
    # with one full-batch step, no momentum and no decay the update is lr * (grad CE + mu grad G)
    p = _base(tiny_split, tiny_spec)
    opt = OptimConfig(lr0=0.1, momentum=0.0, weight_decay=0.0, batch_size=10_000)
    mu = 2.0
    out, _ = lossgap_reg_tune(p, tiny_spec, tiny_split, mu, 1, opt, seed=5)
    train, _, infer = tiny_split.side("target")
    _, g_ce = mean_loss_and_grad(p, tiny_spec, train)
    members = member_sample(train, len(infer), 5)
    expect = p.values - 0.1 * (g_ce + mu * gap_gradient(p, tiny_spec, members, infer))
    assert np.allclose(out.values, expect, rtol=0, atol=1e-13)


def test_past_trace_contents(tiny_split, tiny_spec):
    p = _base(tiny_split, tiny_spec)
    _, tr = past_tune(p, tiny_spec, tiny_split, PastConfig(lam=0.01, alpha=2.5, tuning_epochs=3), OPT, seed=0)
    assert len(tr) == 3 and all(r.phase == "past" for r in tr)
    assert set(tr[0].module_sensitivity) == {s.name for s in p.segments}
    assert all(r.infer_gap is not None for r in tr)
    assert tr[0].lr == OPT.lr0


def test_past_deterministic(tiny_split, tiny_spec):
    p = _base(tiny_split, tiny_spec)
    cfg = PastConfig(lam=0.02, alpha=1.5, tuning_epochs=2)
    a = past_tune(p, tiny_spec, tiny_split, cfg, OPT, seed=9)
    b = past_tune(p, tiny_spec, tiny_split, cfg, OPT, seed=9)
    assert np.array_equal(a[0].values, b[0].values) and a[1].records == b[1].records


def test_sensitivity_map_and_modules(tiny_split, tiny_spec):
    p = _base(tiny_split, tiny_spec)
    smap = sensitivity_map(p, tiny_spec, tiny_split.target_train, tiny_split.target_inference, epoch=4)
    assert smap.computed_at_epoch == 4 and np.all(smap.raw >= 0)
    mods = module_mean_sensitivity(smap.raw, p.segments)
    assert mods["layer0.bias"] == pytest.approx(smap.raw[p.segments[1].slice].mean())


def test_past_config_validation():
    for kw in (dict(lam=-1), dict(alpha=-0.5), dict(tuning_epochs=0), dict(norm_order=3), dict(gap_batch_limit=0)):
        with pytest.raises(ValueError):
            PastConfig(**kw)
