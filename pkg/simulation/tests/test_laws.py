import numpy as np
from django.test import SimpleTestCase
from scipy.special import expit

from simulation import laws


class CovariateLawTests(SimpleTestCase):
    def test_shapes_and_support(self):
        cov = laws.draw_covariates(np.random.default_rng(0), 500, laws.Coefficients())
        self.assertEqual(cov.n, 500)
        self.assertTrue(np.all(cov.x1 > 0))
        self.assertTrue(set(np.unique(cov.x3)) <= {0.0, 1.0})
        x, z = laws.regression_design(cov)
        self.assertEqual(x.shape, (500, len(laws.REGRESSION_X_NAMES)))
        self.assertEqual(z.shape, (500, len(laws.REGRESSION_Z_NAMES)))

    def test_truth_reproduces_mean_function(self):
        coef = laws.Coefficients()
        cov = laws.draw_covariates(np.random.default_rng(1), 50, coef)
        x, z = laws.regression_design(cov)
        np.testing.assert_allclose(np.hstack([x, z]) @ laws.regression_truth(coef), laws.mean_function(cov, coef))

    def test_offset_shifts_every_x_term(self):
        coef = laws.Coefficients()
        cov = laws.draw_covariates(np.random.default_rng(2), 50, coef)
        shift = laws.mean_function(cov, coef, 0.1) - laws.mean_function(cov, coef)
        expected = 0.1 * (cov.x1 + cov.x2 + cov.x3 + cov.x4 + cov.x5 + cov.x1 * cov.x3)
        np.testing.assert_allclose(shift, expected)


class CateLawTests(SimpleTestCase):
    def test_truth_matches_effect(self):
        coef, cate = laws.Coefficients(), laws.CateCoefficients()
        cov = laws.draw_covariates(np.random.default_rng(3), 40, coef)
        x, z = laws.cate_design(cov)
        design = np.hstack([x, z[:, list(laws.CATE_EFFECT_Z)]])
        np.testing.assert_allclose(design @ laws.cate_truth(cate), laws.cate_effect(cov, cate))

    def test_marginal_assignment_without_z_dependence(self):
        cate = laws.CateCoefficients(assign=(0.1, 0.3, 0.0))
        cov = laws.draw_covariates(np.random.default_rng(4), 30, laws.Coefficients())
        np.testing.assert_allclose(
            laws.marginal_assignment_probability(cov, cate), expit(0.1 + 0.3 * cov.x1), atol=1e-12,
        )

    def test_marginal_assignment_integrates_z(self):
        cate = laws.CateCoefficients()
        cov = laws.draw_covariates(np.random.default_rng(5), 5, laws.Coefficients())
        z1 = np.random.default_rng(6).standard_normal(200000)
        a0, a1, a2 = cate.assign
        monte_carlo = np.array([expit(a0 + a1 * x1 + a2 * z1).mean() for x1 in cov.x1])
        np.testing.assert_allclose(laws.marginal_assignment_probability(cov, cate), monte_carlo, atol=3e-3)


class CorrelatedErrorTests(SimpleTestCase):
    def test_paired_streams(self):
        e1_a, e2_a = laws.correlated_errors(np.random.default_rng(7), 100, 0.7, 2.0, 2.0)
        e1_b, e2_b = laws.correlated_errors(np.random.default_rng(7), 100, 0.9, 2.0, 2.0)
        np.testing.assert_array_equal(e1_a, e1_b)
        self.assertFalse(np.array_equal(e2_a, e2_b))

    def test_full_correlation(self):
        e1, e2 = laws.correlated_errors(np.random.default_rng(8), 100, 1.0, 2.0, 1.0)
        np.testing.assert_allclose(e2, e1 / 2.0)

    def test_correlation_level(self):
        e1, e2 = laws.correlated_errors(np.random.default_rng(9), 100000, 0.8, 1.0, 3.0)
        self.assertAlmostEqual(np.corrcoef(e1, e2)[0, 1], 0.8, delta=0.01)
        self.assertAlmostEqual(e2.std(), 3.0, delta=0.05)
