import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from floorcount.head import (
    HTTC,
    N_CLASSES,
    HeadConfig,
    HeadOutputs,
    SubsetPartition,
    ce_loss,
    combine,
    expectation,
    head_forward,
    head_loss,
    head_predict,
    httc_loss,
    partition_of,
    predict,
    reg_loss,
    roof_aux_loss,
    softmax,
    total_loss,
)


def test_partition_sets():
    assert [partition_of(c) for c in (0, 4, 5, 10, 11, 17)] == ["H", "H", "T1", "T1", "T2", "T2"]
    assert HTTC.bounds == [(0, 5), (5, 11), (11, 18)]


@pytest.mark.parametrize("cuts", [(0,), (5, 5), (11, 5), (18,), (3, 19)])
def test_partition_invalid(cuts):
    with pytest.raises(ValueError):
        SubsetPartition(cuts)


def test_httc_loss_examples():
    assert httc_loss([1, 0, 0], 2) == 0.0
    assert httc_loss([0.25, 0.5, 0.25], 7) == pytest.approx(math.log(2), abs=1e-4)
    assert httc_loss([0.1, 0.1, 0.8], 12) == pytest.approx(0.2231, abs=1e-4)


def test_httc_loss_clamped():
    assert httc_loss([1, 0, 0], 12) == pytest.approx(-math.log(1e-12))


def uniform_within():
    return [np.full(5, 0.2), np.full(6, 1 / 6), np.full(7, 1 / 7)]


def test_combine_examples():
    p = combine(HeadOutputs(np.array([1.0, 0, 0]), uniform_within()))
    assert np.allclose(p, [0.2] * 5 + [0] * 13)
    w = [np.eye(5)[0], np.eye(6)[0], np.full(7, 1 / 7)]
    p = combine(HeadOutputs(np.array([0.5, 0.5, 0.0]), w))
    assert p[0] == 0.5 and p[5] == 0.5 and p.sum() == pytest.approx(1.0)


def random_outputs(rng, part=HTTC):
    gate = rng.dirichlet(np.ones(part.k))
    within = [rng.dirichlet(np.ones(hi - lo)) for lo, hi in part.bounds]
    return HeadOutputs(gate, within)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.integers(0, 17))
def test_ce_decomposes(seed, c):
    rng = np.random.default_rng(seed)
    o = random_outputs(rng)
    pmf = combine(o)
    assert abs(pmf.sum() - 1.0) < 1e-9
    t = HTTC.subset_index(c)
    lo = HTTC.bounds[t][0]
    if pmf[c] > 1e-12:
        assert ce_loss(pmf, c) == pytest.approx(httc_loss(o.gate, c) - math.log(o.within[t][c - lo]), abs=1e-9)
    assert ce_loss(pmf, c) >= httc_loss(o.gate, c) - 1e-12


def test_ce_examples():
    assert ce_loss(np.eye(18)[3], 3) == 0.0
    p = np.full(18, 0.75 / 17)
    p[4] = 0.25
    assert ce_loss(p, 4) == pytest.approx(1.3863, abs=1e-4)


def test_expectation_examples():
    assert expectation(np.eye(18)[4]) == 4.0
    assert expectation(np.full(18, 1 / 18)) == pytest.approx(8.5)
    p = np.zeros(18)
    p[3] = p[5] = 0.5
    assert expectation(p) == 4.0


def test_reg_loss_examples():
    assert reg_loss(4.0, 4) == 0.0
    assert reg_loss(3.2, 4) == pytest.approx(0.8)
    assert reg_loss(8.5, 0) == 8.5


def test_predict_floor_and_clamp():
    assert predict(4.0) == 4 and predict(4.99) == 4 and predict(17.6) == 17 and predict(-0.3) == 0


@given(st.floats(-5, 25), st.floats(-5, 25))
def test_predict_monotone(a, b):
    lo, hi = sorted((a, b))
    assert predict(lo) <= predict(hi)


def test_roof_loss():
    assert roof_aux_loss(1.0, "flat") == 0.0
    assert roof_aux_loss(0.5, "flat") == pytest.approx(math.log(2))
    assert roof_aux_loss(0.5, "nonflat") == pytest.approx(math.log(2))
    assert roof_aux_loss(0.6, "flat") < roof_aux_loss(0.5, "flat")


def test_total_loss_perfect_and_additive():
    gate = np.array([1.0, 0, 0])
    pmf = np.eye(18)[2]
    assert total_loss(gate, pmf, 2.0, 2) == 0.0
    gate = np.array([0.25, 0.5, 0.25])
    pmf = np.zeros(18)
    pmf[7], pmf[5] = 0.25, 0.25
    pmf[0] = 0.5
    F = expectation(pmf)
    want = httc_loss(gate, 7) + ce_loss(pmf, 7) + reg_loss(F, 7)
    assert total_loss(gate, pmf, F, 7) == pytest.approx(want)
    assert total_loss(gate, pmf, F, 7, use_gate=False, use_reg=False) == pytest.approx(ce_loss(pmf, 7))
    assert total_loss(gate, pmf, F, 7, roof_prob=0.5, roof_label="flat") == pytest.approx(want + math.log(2))


def test_variants_layout():
    assert HeadConfig("plain").n_scores == 18
    assert HeadConfig("htc").n_scores == 20 and HeadConfig("htc").cuts == (6,)
    assert HeadConfig("HYB+HTTC", mtl_roof=True).n_scores == 22
    with pytest.raises(ValueError):
        HeadConfig("nope")
    with pytest.raises(ValueError):
        HeadConfig("plain", cuts=(5,))


@pytest.mark.parametrize("variant", ["plain", "htc", "httc", "hyb", "hyb+httc"])
def test_forward_matches_scalar_helpers(variant):
    cfg = HeadConfig(variant, mtl_roof=True)
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(6, cfg.n_scores))
    labels = rng.integers(0, 18, 6)
    roof = rng.integers(0, 2, 6)
    out = head_forward(scores, cfg)
    total, terms, _ = head_loss(scores, labels, cfg, roof)
    ref = []
    for i in range(6):
        ref.append(total_loss(out["gate"][i], out["pmf"][i], out["F"][i], labels[i], cfg.partition,
                              use_gate=cfg.n_gate > 0, use_reg=cfg.hybrid,
                              roof_prob=out["roof"][i], roof_label=int(roof[i])))
    assert total == pytest.approx(np.mean(ref), abs=1e-12)
    assert np.allclose(out["pmf"].sum(1), 1.0, atol=1e-12)
    assert set(terms) == {"ce", "roof"} | ({"htt"} if cfg.n_gate else set()) | ({"reg"} if cfg.hybrid else set())


def test_predict_modes():
    cfg = HeadConfig("hyb+httc")
    out = {"F": np.array([3.2, 3.9, 17.5]), "pmf": np.eye(18)[[0, 0, 0]]}
    assert list(head_predict(out, cfg)) == [3, 3, 17]
    assert list(head_predict(out, HeadConfig("hyb+httc", readout="nearest"))) == [3, 4, 17]
    assert list(head_predict(out, HeadConfig("httc"))) == [0, 0, 0]


@pytest.mark.parametrize("variant", ["plain", "htc", "httc", "hyb", "hyb+httc"])
def test_shift_invariance(variant):
    cfg = HeadConfig(variant)
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(4, cfg.n_scores))
    labels = rng.integers(0, 18, 4)
    shifted = scores.copy()
    shifted[:, :cfg.n_gate] += 3.7
    for lo, hi in cfg.partition.bounds:
        shifted[:, cfg.n_gate + lo:cfg.n_gate + hi] -= rng.normal()
    assert head_loss(scores, labels, cfg)[0] == pytest.approx(head_loss(shifted, labels, cfg)[0], abs=1e-10)


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


@pytest.mark.parametrize("variant", ["plain", "htc", "httc", "hyb", "hyb+httc"])
@pytest.mark.parametrize("mtl", [False, True])
def test_gradient_finite_difference(variant, mtl):
    cfg = HeadConfig(variant, mtl_roof=mtl)
    rng = np.random.default_rng(2)
    scores = rng.normal(scale=0.5, size=(3, cfg.n_scores))
    labels = rng.integers(0, 18, 3)
    roof = rng.integers(0, 2, 3) if mtl else None
    _, _, g = head_loss(scores, labels, cfg, roof)
    num = fd_grad(lambda s: head_loss(s, labels, cfg, roof)[0], scores)
    assert np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-12) < 1e-6


def test_softmax_stable():
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    assert np.allclose(p, [0.5, 0.5, 0.0])
    assert N_CLASSES == 18
