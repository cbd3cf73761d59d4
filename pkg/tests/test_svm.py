import math

import numpy as np
import pytest
from scipy.optimize import minimize

from oracles import qp_dual_oracle
from vsdetect import svm
from vsdetect.core import FeatureChannel
from vsdetect.errors import DegenerateDataError, DegenerateFitError, FormatError, InvalidArgumentError


def blobs(rng, n=60, dim=2, shift=2.0):
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    x = rng.normal(size=(n, dim)) + shift * y[:, None] / 2
    return x, y


def test_kernel_values():
    x, z = np.array([1.0, 2.0]), np.array([3.0, 0.0])
    assert svm.kernel_eval(svm.KernelSpec.linear(), x, z) == 3.0
    assert svm.kernel_eval(svm.KernelSpec.rbf(0.5), x, z) == pytest.approx(math.exp(-0.5 * 8))
    # [DERIVED] chi-square distance: (1-3)^2/4 + (2-0)^2/2 = 1 + 2 = 3
    assert svm.kernel_eval(svm.KernelSpec.chi_square(0.1), x, z) == pytest.approx(math.exp(-0.3))


def test_kernel_matrix_matches_pointwise(rng):
    a, b = rng.random((7, 5)), rng.random((4, 5))
    for spec in (svm.KernelSpec.linear(), svm.KernelSpec.rbf(0.3), svm.KernelSpec.chi_square(0.7)):
        k = svm.kernel_matrix(spec, a, b)
        ref = np.array([[svm.kernel_eval(spec, u, v) for v in b] for u in a])
        np.testing.assert_allclose(k, ref, rtol=1e-12, atol=1e-12)


def test_chi_square_needs_nonnegative_inputs():
    with pytest.raises(InvalidArgumentError):
        svm.kernel_matrix(svm.KernelSpec.chi_square(1.0), np.array([[-1.0]]), np.array([[1.0]]))


def test_kernel_spec_validation():
    with pytest.raises(InvalidArgumentError):
        svm.KernelSpec.rbf(0.0)
    assert svm.KernelSpec.from_json(svm.KernelSpec.rbf(0.25).to_json()) == svm.KernelSpec.rbf(0.25)


@pytest.mark.parametrize("C", [0.1, 1.0, 10.0])
def test_solver_matches_oracle_across_C(rng, C):
    x, y = blobs(rng, n=30, shift=1.0)
    kmat = svm.kernel_matrix(svm.KernelSpec.rbf(1.0), x, x)
    sol = svm.solve_dual(kmat, y, C, tolerance=1e-4)
    _, ref = qp_dual_oracle(kmat, y, C)
    assert sol.objective == pytest.approx(ref, abs=1e-4 * max(1.0, C))


def test_separable_problem_classified(rng):
    x, y = blobs(rng, shift=6.0)
    clf = svm.train(x, y, svm.KernelSpec.linear())
    assert np.all(np.sign(clf.decision_function(x)) == y)
    assert clf.meta["kkt_gap"] < 1e-3


def test_scaling_is_stored_and_applied(rng):
    x, y = blobs(rng, dim=3)
    x = x * np.array([1.0, 100.0, 0.01]) + 5
    clf = svm.train(x, y, svm.KernelSpec.chi_square(1.0), scale=True)
    assert clf.scale_min is not None
    z = clf.transform(x)
    assert z.min() >= 0.0 and z.max() <= 1.0
    # out-of-range inputs are clipped so chi-square stays defined
    assert np.all(np.isfinite(clf.decision_function(x - 1000)))


def test_train_rejects_bad_labels(rng):
    x = rng.normal(size=(4, 2))
    with pytest.raises(InvalidArgumentError):
        svm.train(x, [0, 1, 0, 1], svm.KernelSpec.linear())
    with pytest.raises(DegenerateDataError):
        svm.train(x, [1, 1, 1, 1], svm.KernelSpec.linear())


def _platt_oracle(f, pos):
    n_pos, n_neg = pos.sum(), (~pos).sum()
    t = np.where(pos, (n_pos + 1) / (n_pos + 2), 1 / (n_neg + 2))

    def nll(params):
        a, b = params
        p = 1 / (1 + np.exp(a * f + b))
        return -np.sum(t * np.log(p) + (1 - t) * np.log(1 - p))

    return minimize(nll, [0.0, 0.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000}).x


def test_platt_matches_generic_optimizer(rng):
    f = np.r_[rng.normal(1, 1, 80), rng.normal(-1, 1, 120)]
    pos = np.r_[np.ones(80, bool), np.zeros(120, bool)]
    a, b = svm.platt_fit(f, pos)
    ra, rb = _platt_oracle(f, pos)
    assert a == pytest.approx(ra, abs=1e-4)
    assert b == pytest.approx(rb, abs=1e-4)
    assert a < 0  # larger decision values give higher probability


def test_platt_degenerate_inputs():
    with pytest.raises(DegenerateDataError):
        svm.platt_fit([0.1, 0.2], [True, True])
    with pytest.raises(DegenerateFitError):
        svm.platt_fit([0.3, 0.3], [True, False])


def test_platt_probability_extremes():
    p = svm.platt_probability(np.array([-1e6, 0.0, 1e6]), -1.0, 0.0)
    assert p[0] == np.finfo(float).tiny
    assert p[1] == 0.5
    assert p[2] < 1.0


def test_classifier_json_round_trip(tmp_path, rng):
    x, y = blobs(rng, dim=4)
    clf = svm.train(x, y, svm.KernelSpec.rbf(0.25), svm.TrainConfig(C=10.0), channel=FeatureChannel.MOTION, scale=True)
    clf = clf.with_platt(-2.0, 0.1)
    svm.save_classifier(clf, tmp_path / "c.json")
    back = svm.load_classifier(tmp_path / "c.json")
    assert back.channel is FeatureChannel.MOTION
    assert back.C == 10.0
    np.testing.assert_array_equal(back.predict_proba(x), clf.predict_proba(x))
    assert svm.predict_proba(back, x[0]) == pytest.approx(float(clf.predict_proba(x[:1])[0]))


def test_classifier_file_errors(tmp_path):
    (tmp_path / "c.json").write_text('{"format_version": 99}')
    with pytest.raises(FormatError):
        svm.load_classifier(tmp_path / "c.json")
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(FormatError):
        svm.load_classifier(tmp_path / "c.json")


def test_grid_search_picks_lowest_validation_eer(rng):
    x, y = blobs(rng, n=80, shift=1.5)
    xv, yv = blobs(rng, n=80, shift=1.5)
    grid = svm.default_grid(2, allow_chi_square=False, c_values=(0.1, 1.0))
    clf, cells = svm.kernel_grid_search((x, y), (xv, yv), grid)
    assert len(cells) == len(grid) == 8
    best = min(c.eer for c in cells)
    first = next(c for c in cells if c.eer == best)
    assert (clf.kernel, clf.C) == (first.kernel, first.C)
    assert clf.platt_a < 0


def test_grid_search_is_worker_independent(rng):
    x, y = blobs(rng, n=40)
    xv, yv = blobs(rng, n=40)
    grid = svm.default_grid(2, c_values=(1.0,))
    x, xv = np.abs(x), np.abs(xv)
    one, _ = svm.kernel_grid_search((x, y), (xv, yv), grid, workers=1)
    many, _ = svm.kernel_grid_search((x, y), (xv, yv), grid, workers=4)
    np.testing.assert_array_equal(one.predict_proba(xv), many.predict_proba(xv))


def test_default_grid_contents():
    grid = svm.default_grid(22, allow_chi_square=False)
    kinds = {k.kind for k, _ in grid}
    assert kinds == {svm.KernelKind.LINEAR, svm.KernelKind.RBF}
    assert len(svm.default_grid(22)) == 7 * len(svm.DEFAULT_C_VALUES)
