import numpy as np
import pytest

from app.confounder_score import (
    build_design,
    confounder_scores,
    expand_basis,
    fit_confounder_score,
    ridge_fit,
    standardize_covariates,
)
from app.errors import BasisMismatch, NonPositiveV, RaggedCovariates
from app.models import BasisKind, BasisSpec

QUADRATIC = BasisSpec(kind=BasisKind.POLYNOMIAL, degree=2)


@pytest.fixture
def design_data():
    rng = np.random.default_rng(31)
    covariates = rng.normal(size=(50, 2))
    r = rng.uniform(-1.0, 1.0, size=50)
    y = 0.5 + covariates @ np.array([1.5, -2.0]) + 0.8 * (r >= 0) + 0.01 * rng.normal(size=50)
    return covariates, r, y


class TestBasis:
    def test_linear(self):
        assert expand_basis([[1.0, 2.0]], BasisSpec()).tolist() == [[1.0, 2.0]]

    def test_quadratic(self):
        assert expand_basis([[1.0, 2.0]], QUADRATIC).tolist() == [[1.0, 2.0, 1.0, 4.0]]

    def test_design_rows(self):
        B = build_design([[2.0], [3.0]], [-1.0, 0.0], 0.0, BasisSpec())
        assert B.tolist() == [[1.0, 2.0, 0.0], [1.0, 3.0, 1.0]]

    def test_ragged(self):
        with pytest.raises(RaggedCovariates):
            expand_basis([[1.0], [1.0, 2.0]], BasisSpec())


class TestRidgeFit:
    def test_matches_normal_equations(self, design_data):
        covariates, r, y = design_data
        B = build_design(covariates, r, 0.0, BasisSpec())
        fit = ridge_fit(B, y, v=2.0)
        expected = np.linalg.solve(np.eye(B.shape[1]) / 2.0 + B.T @ B, B.T @ y)
        np.testing.assert_allclose(fit.coefficients, expected, atol=1e-10)

    def test_large_v_approaches_least_squares(self, design_data):
        covariates, r, y = design_data
        B = build_design(covariates, r, 0.0, BasisSpec())
        fit = ridge_fit(B, y, v=1e8)
        ols, *_ = np.linalg.lstsq(B, y, rcond=None)
        np.testing.assert_allclose(fit.coefficients, ols, atol=1e-4)
        assert fit.treatment_coefficient == pytest.approx(0.8, abs=0.02)

    @pytest.mark.parametrize("v", [0.0, -1.0])
    def test_v_must_be_positive(self, v):
        with pytest.raises(NonPositiveV):
            ridge_fit(np.ones((3, 2)), np.ones(3), v)


class TestScores:
    def test_scores_drop_treatment_term(self, design_data):
        covariates, r, y = design_data
        B = build_design(covariates, r, 0.0, BasisSpec())
        fit = ridge_fit(B, y, v=1000.0, basis=BasisSpec())
        scores = confounder_scores(fit, covariates, BasisSpec())
        np.testing.assert_allclose(scores, B[:, :-1] @ fit.coefficients[:-1], atol=1e-12)

    def test_basis_mismatch(self, design_data):
        covariates, r, y = design_data
        fit = ridge_fit(build_design(covariates, r, 0.0, BasisSpec()), y, 1000.0, basis=BasisSpec())
        with pytest.raises(BasisMismatch):
            confounder_scores(fit, covariates, QUADRATIC)

    def test_coefficient_count_mismatch(self, design_data):
        covariates, r, y = design_data
        fit = ridge_fit(build_design(covariates, r, 0.0, BasisSpec()), y, 1000.0)
        with pytest.raises(BasisMismatch):
            confounder_scores(fit, covariates[:, :1], BasisSpec())


class TestPipelineFit:
    def test_constant_columns_dropped(self):
        matrix = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        z, kept, dropped = standardize_covariates(matrix, ["a", "b"])
        assert kept == ["a"] and dropped == ["b"]
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0)

    def test_fit_confounder_score(self, design_data):
        covariates, r, y = design_data
        with_constant = np.column_stack([covariates, np.ones(50)])
        result = fit_confounder_score(with_constant, ["a", "b", "c"], r, 0.0, y, v=1000.0, basis=QUADRATIC)
        assert result.kept_columns == ("a", "b")
        assert result.dropped_columns == ("c",)
        assert result.scores.shape == (50,)
        assert result.fit.q == 1 + 4 + 1

    def test_all_constant(self):
        with pytest.raises(RaggedCovariates):
            fit_confounder_score(np.ones((4, 1)), ["a"], [-1.0, -0.5, 0.5, 1.0], 0.0, [1.0, 2.0, 3.0, 4.0])
