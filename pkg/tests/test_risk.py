"""Risk metrics: sample selection, recovery complexity, and the gap bounds."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merkit import dataio, extraction, linalg, nn, ntk, risk
from merkit.errors import DimensionError, ParameterError


def small_model(widths=(4,), d=2, k=2, seed=0) -> nn.NeuralModel:
    return nn.build_model(nn.ModelSpec(input_dim=d, layer_widths=tuple(widths),
                                       num_classes=k, init_seed=seed))


def trained_victim(seed=0, widths=(8,), n=60, epochs=80):
    data = dataio.make_blobs(n=n, d=2, k=2, spread=0.4, seed=seed)
    model = small_model(widths=widths, seed=seed + 1)
    nn.train(model, data, nn.TrainConfig(optimizer="sgd", learning_rate=0.05,
                                         epochs=epochs, batch_size=20, seed=seed))
    return model, data


def selection_oracle(victim, pool, l_count, eta):
    """Stable-sorted margin partition, written independently of the library."""
    margins = nn.margins_batch(victim, pool.features, space="probabilities")
    order = sorted(range(len(pool)), key=lambda i: (margins[i], i))
    l_difficult = int(math.floor(eta * l_count + 0.5))
    easy = order[len(order) - l_difficult:] if l_difficult else []
    hard = order[: l_count - l_difficult]
    return hard, easy


# ----------------------------------------------------------------- selection


def test_select_samples_matches_sort_oracle():
    victim, data = trained_victim(seed=1)
    idx = risk.select_samples(victim, data, l_count=10, eta=0.5)
    hard, easy = selection_oracle(victim, data, 10, 0.5)
    assert list(idx) == hard + easy


def test_select_samples_eta_extremes():
    victim, data = trained_victim(seed=2)
    margins = nn.margins_batch(victim, data.features, space="probabilities")
    low = risk.select_samples(victim, data, l_count=5, eta=0.0)
    assert sorted(margins[low]) == sorted(sorted(margins)[:5])
    high = risk.select_samples(victim, data, l_count=5, eta=1.0)
    assert sorted(margins[high]) == sorted(sorted(margins)[-5:])


def test_select_samples_full_pool_is_permutation():
    victim, data = trained_victim(seed=3, n=30)
    idx = risk.select_samples(victim, data, l_count=30, eta=0.5)
    assert sorted(idx) == list(range(30))


@settings(max_examples=25, deadline=None)
@given(
    l_count=st.integers(min_value=1, max_value=20),
    eta=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
)
def test_select_samples_partition_property(l_count, eta):
    victim, data = trained_victim(seed=4, n=20, epochs=5)
    idx = risk.select_samples(victim, data, l_count=l_count, eta=eta)
    assert len(idx) == l_count
    assert len(set(idx.tolist())) == l_count


def test_select_samples_validation():
    victim, data = trained_victim(seed=5, n=10, epochs=5)
    with pytest.raises(ParameterError):
        risk.select_samples(victim, data, l_count=11, eta=0.5)
    with pytest.raises(ParameterError):
        risk.select_samples(victim, data, l_count=0, eta=0.5)
    with pytest.raises(ParameterError):
        risk.select_samples(victim, data, l_count=5, eta=1.5)


# ----------------------------------------------------------------- recovery complexity


def test_mrc_matches_explicit_pipeline():
    victim, data = trained_victim(seed=6, n=16)
    cfg = risk.MrcConfig(L=8, eta=0.5, q=0.5)
    hard, easy = selection_oracle(victim, data, 8, 0.5)
    selected = data.features[hard + easy]
    ntkm = ntk.assemble(victim, selected, at="trained")
    clipped = linalg.clip_eigenvalues(ntkm.theta, 0.5)
    delta = extraction.output_change(victim, selected, space="probabilities")
    oracle = float(delta @ np.linalg.solve(clipped, delta))
    assert risk.mrc(victim, data, cfg) == pytest.approx(oracle, rel=1e-8)


def test_mrc_of_untrained_victim_is_zero():
    victim = small_model(seed=7)
    data = dataio.make_blobs(n=12, d=2, k=2, spread=0.5, seed=7)
    assert risk.mrc(victim, data) == pytest.approx(0.0, abs=1e-15)


def test_mrc_scales_quadratically_in_weight_change():
    # A pure linear map has a parameter-independent kernel and logits that
    # are linear in the weights, so doubling the weight change from the
    # initialization must exactly quadruple the logit-space score.
    data = dataio.make_blobs(n=10, d=2, k=2, spread=0.5, seed=8)
    model = small_model(widths=(), seed=8)
    rng = np.random.default_rng(8)
    step = 0.3 * rng.normal(size=model.params.size)
    cfg = risk.MrcConfig(L=10, eta=0.5, q=0.5, output_space="logits")
    model.params[:] = model.init_params + step
    single = risk.mrc(model, data, cfg)
    model.params[:] = model.init_params + 2.0 * step
    double = risk.mrc(model, data, cfg)
    assert double == pytest.approx(4.0 * single, rel=1e-8)


def test_mrc_non_increasing_in_eigenvalue_floor():
    victim, data = trained_victim(seed=9, n=12)
    values = [
        risk.mrc(victim, data, risk.MrcConfig(L=12, eta=0.5, q=q))
        for q in (0.1, 0.5, 2.0, 10.0)
    ]
    for lo, hi in zip(values, values[1:]):
        assert hi <= lo + 1e-12


def test_mrc_clamps_l_to_pool():
    victim, data = trained_victim(seed=10, n=9)
    full = risk.mrc(victim, data, risk.MrcConfig(L=400))
    explicit = risk.mrc(victim, data, risk.MrcConfig(L=9))
    assert full == pytest.approx(explicit, rel=1e-12)


def test_mrc_config_validation():
    with pytest.raises(ParameterError):
        risk.MrcConfig(L=0)
    with pytest.raises(ParameterError):
        risk.MrcConfig(eta=1.2)
    with pytest.raises(ParameterError):
        risk.MrcConfig(q=0.0)
    with pytest.raises(ParameterError):
        risk.MrcConfig(output_space="margins")
    with pytest.raises(ParameterError):
        risk.MrcConfig(eval_point="midway")


def test_difficult_count_rounds_half_up():
    cfg = risk.MrcConfig(eta=0.5)
    assert cfg.difficult_count(5) == 3
    assert cfg.difficult_count(4) == 2
    assert risk.MrcConfig(eta=0.0).difficult_count(7) == 0
    assert risk.MrcConfig(eta=1.0).difficult_count(7) == 7


def test_fixture_example_row_mrc_grows_with_l():
    rows = dataio.load_fixtures()
    row = next(r for r in rows if r.dataset == "cifar10" and r.model == "ResNet20")
    assert row.mrc[100] < row.mrc[200] < row.mrc[400]


def test_risk_vector_validation():
    risk.RiskVector(vma=0.9, mrc=0.1)
    with pytest.raises(ParameterError):
        risk.RiskVector(vma=90.0, mrc=0.1)
    with pytest.raises(ParameterError):
        risk.RiskVector(vma=0.9, mrc=-0.1)
    with pytest.raises(ParameterError):
        risk.RiskVector(vma=float("nan"), mrc=0.1)


# ----------------------------------------------------------------- gap bound


def test_bound_on_identical_surrogate_has_zero_gap():
    victim, data = trained_victim(seed=11)
    samples = data.features[:20]
    ntkm = ntk.assemble(victim, samples, at="init", clip_q=1e-6)
    report = risk.fidelity_gap_bound(victim, victim, samples, gamma=1e-9,
                                     delta=0.05, ntkm=ntkm)
    assert report.empirical_gap == 0.0
    # The victim agrees with itself, so every margin is strictly positive
    # and a tiny margin level leaves the empirical term at zero.
    assert report.empirical_margin_term == 0.0
    assert report.total >= 0.0


def test_bound_margin_term_dominates_gap():
    victim, _ = trained_victim(seed=12)
    surrogate, _ = trained_victim(seed=13)
    samples = dataio.make_blobs(n=24, d=2, k=2, spread=0.6, seed=14).features
    ntkm = ntk.assemble(victim, samples, at="init", clip_q=1e-6)
    for gamma in (0.01, 0.1, 1.0, 10.0):
        report = risk.fidelity_gap_bound(victim, surrogate, samples, gamma=gamma,
                                         delta=0.05, ntkm=ntkm)
        assert report.empirical_margin_term >= report.empirical_gap
        assert report.total >= report.empirical_gap
        assert report.complexity_term >= 0.0
        assert report.sample_term >= 0.0
        assert report.total == pytest.approx(
            report.empirical_margin_term + report.complexity_term + report.sample_term
        )


def test_bound_margins_use_masked_runner_up():
    victim, _ = trained_victim(seed=15)
    surrogate, _ = trained_victim(seed=16)
    samples = dataio.make_blobs(n=10, d=2, k=2, spread=0.5, seed=17).features
    ntkm = ntk.assemble(victim, samples, at="init", clip_q=1e-6)
    labels = nn.predict_labels(victim, samples)
    logits = nn.forward_batch(surrogate, samples)
    margins = []
    for row, label in zip(logits, labels):
        others = np.delete(row, label)
        margins.append(row[label] - others.max())
    margins = np.array(margins)
    for gamma in (0.05, 0.5):
        report = risk.fidelity_gap_bound(victim, surrogate, samples, gamma=gamma,
                                         delta=0.05, ntkm=ntkm)
        assert report.empirical_margin_term == pytest.approx(np.mean(margins <= gamma))
        assert report.empirical_gap == pytest.approx(np.mean(margins <= 0.0))


def test_bound_m0_and_sample_term_formula():
    victim = small_model(seed=18)
    n, k = 16, 2
    fake = ntk.NtkMatrix(
        theta=np.eye(n * k), n=n, num_classes=k, eval_point="init", clip_q=None,
        sample_ids=list(range(n)), trace_raw=float(n * k), kappa_raw=4.0,
    )
    samples = np.zeros((n, 2))
    samples[:, 0] = np.linspace(-1, 1, n)
    report = risk.fidelity_gap_bound(victim, victim, samples, gamma=64.0,
                                     delta=0.05, ntkm=fake)
    assert report.m0 == math.ceil(64.0 * 4.0 / (4.0 * 2.0 * 2.0))
    expected = 3.0 * math.sqrt(math.log(2.0 * report.m0 / 0.05) / (2.0 * n))
    assert report.sample_term == pytest.approx(expected, rel=1e-12)
    assert report.kappa == 4.0


def test_bound_accepts_callable_surrogate():
    victim, _ = trained_victim(seed=19)
    surrogate, _ = trained_victim(seed=20)
    samples = dataio.make_blobs(n=12, d=2, k=2, spread=0.5, seed=21).features
    ntkm = ntk.assemble(victim, samples, at="init", clip_q=1e-6)
    as_model = risk.fidelity_gap_bound(victim, surrogate, samples, gamma=0.3,
                                       delta=0.05, ntkm=ntkm)
    as_callable = risk.fidelity_gap_bound(
        victim, lambda x: nn.forward_batch(surrogate, x), samples, gamma=0.3,
        delta=0.05, ntkm=ntkm,
    )
    assert as_callable.total == pytest.approx(as_model.total, rel=1e-12)


def test_bound_validation():
    victim, data = trained_victim(seed=22, n=10, epochs=5)
    samples = data.features[:4]
    ntkm = ntk.assemble(victim, samples, at="init", clip_q=1e-6)
    with pytest.raises(ParameterError):
        risk.fidelity_gap_bound(victim, victim, samples, gamma=0.0, delta=0.05,
                                ntkm=ntkm)
    with pytest.raises(ParameterError):
        risk.fidelity_gap_bound(victim, victim, samples, gamma=0.1, delta=1.0,
                                ntkm=ntkm)
    with pytest.raises(DimensionError):
        risk.fidelity_gap_bound(victim, victim, data.features[:5], gamma=0.1,
                                delta=0.05, ntkm=ntkm)
    with pytest.raises(DimensionError):
        risk.fidelity_gap_bound(victim, lambda x: np.zeros((4, 3)), samples,
                                gamma=0.1, delta=0.05, ntkm=ntkm)


def test_bound_grid_reports_minimizer():
    victim, _ = trained_victim(seed=23)
    surrogate, _ = trained_victim(seed=24)
    samples = dataio.make_blobs(n=16, d=2, k=2, spread=0.5, seed=25).features
    ntkm = ntk.assemble(victim, samples, at="init", clip_q=1e-6)
    gammas = [0.01, 0.05, 0.2, 1.0, 5.0]
    reports, best = risk.bound_grid(victim, surrogate, samples, gammas,
                                    delta=0.05, ntkm=ntkm)
    assert len(reports) == 5
    assert [r.gamma for r in reports] == gammas
    totals = [r.total for r in reports]
    assert totals[best] == min(totals)
    with pytest.raises(ParameterError):
        risk.bound_grid(victim, surrogate, samples, [], delta=0.05, ntkm=ntkm)


# ----------------------------------------------------------------- error bound


def test_generalization_bound_arithmetic_and_clamp():
    assert risk.generalization_bound(0.2, 0.3) == pytest.approx(0.5)
    assert risk.generalization_bound(0.9, 0.8) == 1.0
    with pytest.raises(ParameterError):
        risk.generalization_bound(-0.1, 0.5)
    with pytest.raises(ParameterError):
        risk.generalization_bound(0.5, 1.1)


def test_error_decomposition_is_pointwise_consistent():
    eval_set = dataio.make_blobs(n=60, d=2, k=2, spread=0.6, seed=26)
    for seed in (27, 28, 29):
        victim, _ = trained_victim(seed=seed)
        surrogate, _ = trained_victim(seed=seed + 10, epochs=20)
        err_s, gap, err_v = risk.error_decomposition(victim, surrogate, eval_set)
        assert err_s <= gap + err_v + 1e-12
        assert err_s == pytest.approx(1.0 - nn.accuracy(surrogate, eval_set))
        assert err_v == pytest.approx(1.0 - nn.accuracy(victim, eval_set))
        assert gap == pytest.approx(
            1.0 - extraction.fidelity(victim, surrogate, eval_set)
        )


def test_vma_is_plain_accuracy():
    victim, data = trained_victim(seed=30)
    assert risk.vma(victim, data) == pytest.approx(nn.accuracy(victim, data))
