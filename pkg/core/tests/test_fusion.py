import numpy as np
from django.test import SimpleTestCase, tag

from core.equations import (
    GLM_LOGISTIC, GLM_POISSON, LINEAR, LOG_RELATIVE_RISK, WCLS_CATE, Dataset, EquationFamily, FeatureMap,
)
from core.exceptions import SchemaError
from core.fusion import ExternalSummary, conditional_estimate, secondary_endpoint_closed_form, summarize
from core.pipeline import fit_joint, fit_model
from core.transform import RATIO, SUBSET, Transformation

from .factories import cate_data, count_data, linear_data, logistic_data, spd_matrix


def external_summary(theta, cov, family_id=LINEAR, transformation=None):
    return ExternalSummary(theta, cov, 1000, family_id, transformation or Transformation.identity())


class ConditionalEstimateTests(SimpleTestCase):
    def setUp(self):
        self.data = linear_data()
        self.psi = EquationFamily(LINEAR, FeatureMap.all_x(self.data))
        self.phi = EquationFamily(LINEAR, FeatureMap.x_and_z(self.data))

    def test_zero_difference_leaves_internal_estimate(self):
        joint = fit_joint(self.psi, self.phi, self.data)
        ext = external_summary(joint.theta_block.params, joint.theta_cov)
        cond = conditional_estimate(joint, ext)
        np.testing.assert_allclose(cond.gamma_cond, cond.gamma_internal, atol=1e-14)
        np.testing.assert_allclose(cond.correction, 0.0, atol=1e-14)

    def test_precision_weighted_average(self):
        joint = fit_joint(self.psi, self.psi, self.data)
        sigma_i = joint.theta_cov
        sigma_e = spd_matrix(3, seed=5) * 1e-3
        theta_e = joint.theta_block.params + np.array([0.2, -0.1, 0.05])
        cond = conditional_estimate(joint, external_summary(theta_e, sigma_e))

        prec_i, prec_e = np.linalg.inv(sigma_i), np.linalg.inv(sigma_e)
        pooled = np.linalg.inv(prec_i + prec_e)
        expected = pooled @ (prec_i @ joint.theta_block.params + prec_e @ theta_e)
        np.testing.assert_allclose(cond.gamma_cond, expected, atol=1e-8)
        np.testing.assert_allclose(cond.cov_cond, pooled, atol=1e-10)

    def test_equal_covariances_average_the_estimates(self):
        joint = fit_joint(self.psi, self.psi, self.data)
        theta_e = joint.theta_block.params + 0.3
        cond = conditional_estimate(joint, external_summary(theta_e, joint.theta_cov))
        np.testing.assert_allclose(cond.gamma_cond, (joint.theta_block.params + theta_e) / 2, atol=1e-8)

    def test_efficiency_gain_is_psd(self):
        joint = fit_joint(self.psi, self.phi, self.data)
        ext = external_summary(joint.theta_block.params + 0.1, joint.theta_cov / 50)
        cond = conditional_estimate(joint, ext)
        self.assertGreater(np.linalg.eigvalsh(cond.efficiency_gain)[0], -1e-12)
        np.testing.assert_allclose(cond.efficiency_gain, cond.correction_gain @ cond.sigma_h_cross, atol=1e-12)

    def test_subset_transformation(self):
        joint = fit_joint(self.psi, self.phi, self.data)
        t = Transformation.drop_intercept(3)
        ext = external_summary(joint.theta_block.params + 0.1, joint.theta_cov / 10, transformation=t)
        cond = conditional_estimate(joint, ext)
        self.assertEqual(cond.h_diff.shape, (2,))
        self.assertEqual(cond.correction_gain.shape, (5, 2))
        np.testing.assert_allclose(cond.h_diff, [-0.1, -0.1], atol=1e-12)

    def test_transformation_mismatch(self):
        joint = fit_joint(self.psi, self.phi, self.data)
        ext = external_summary(joint.theta_block.params, joint.theta_cov)
        with self.assertRaises(SchemaError):
            conditional_estimate(joint, ext, Transformation.drop_intercept(3))

    def test_family_mismatch(self):
        joint = fit_joint(self.psi, self.phi, self.data)
        ext = external_summary(joint.theta_block.params, joint.theta_cov, family_id=GLM_LOGISTIC)
        with self.assertRaises(SchemaError):
            conditional_estimate(joint, ext)

    def test_dimension_mismatch(self):
        joint = fit_joint(self.psi, self.phi, self.data)
        with self.assertRaises(SchemaError):
            conditional_estimate(joint, external_summary(np.zeros(2), np.eye(2)))


class ExternalSummaryTests(SimpleTestCase):
    def test_rejects_indefinite_covariance(self):
        with self.assertRaises(SchemaError) as ctx:
            external_summary(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
        self.assertEqual(ctx.exception.column, 'COV')

    def test_rejects_empty_study(self):
        with self.assertRaises(SchemaError):
            ExternalSummary(np.zeros(1), np.eye(1), 0, LINEAR)

    def test_summarize_fitted_model(self):
        data = linear_data(with_z=False)
        fitted = fit_model(EquationFamily(LINEAR, FeatureMap.all_x(data)), data)
        summary = summarize(fitted, x_columns=data.x_names)
        self.assertEqual(summary.n_external, data.n)
        self.assertEqual(summary.x_columns, ('intercept', 'x1', 'x2'))
        np.testing.assert_array_equal(summary.cov_theta_hat, fitted.sigma_estimate)


class SecondaryEndpointTests(SimpleTestCase):
    def test_no_correlation(self):
        np.testing.assert_array_equal(
            secondary_endpoint_closed_form(0.0, 1.0, 2.0, 100, 400, [0.3], [1.5]), [1.5],
        )

    def test_perfect_correlation_equal_sizes(self):
        out = secondary_endpoint_closed_form(1.0, 2.0, 2.0, 100, 100, [0.4, -0.2], [1.0, 1.0])
        np.testing.assert_allclose(out, [1.2, 0.9])

    def test_invalid_rho(self):
        with self.assertRaises(ValueError):
            secondary_endpoint_closed_form(1.5, 1.0, 1.0, 10, 10, [0.0], [0.0])

    def test_matches_conditional_estimate(self):
        rng = np.random.default_rng(31)
        n, rho = 20000, 0.6
        u1, u2 = rng.standard_normal((2, n))
        ones = np.ones((n, 1))
        internal = Dataset(y=u1, y2=rho * u1 + np.sqrt(1 - rho ** 2) * u2, x=ones)
        external = Dataset(y=rng.standard_normal(n), y2=0.05 + rng.standard_normal(n), x=ones)

        psi = EquationFamily(LINEAR, FeatureMap((0,)), outcome='y2')
        phi = EquationFamily(LINEAR, FeatureMap((0,)))
        joint = fit_joint(psi, phi, internal)
        cond = conditional_estimate(joint, summarize(fit_model(psi, external)))
        closed = secondary_endpoint_closed_form(
            rho, 1.0, 1.0, n, n, cond.theta_external - cond.theta_internal, cond.gamma_internal,
        )
        self.assertLess(abs(cond.gamma_cond[0] - closed[0]), 1e-3)

    def test_positive_discrepancy_moves_toward_external(self):
        out = secondary_endpoint_closed_form(0.5, 2.0, 1.0, 300, 900, [0.2], [1.0])
        self.assertAlmostEqual(out[0], 1.0 + 0.75 * 0.5 * 2.0 * 0.2)
        self.assertGreater(out[0], 1.0)


def fitted_instances():
    """(label, joint, external summary) over every family and transformation kind"""
    for seed in range(4):
        data = linear_data(n=300, seed=40 + seed)
        psi = EquationFamily(LINEAR, FeatureMap.all_x(data))
        joint = fit_joint(psi, EquationFamily(LINEAR, FeatureMap.x_and_z(data)), data)
        theta = joint.theta_block.params
        for t in (Transformation.identity(), Transformation.drop_intercept(3), Transformation(RATIO, (1,))):
            yield f'linear/{t.kind}/{seed}', joint, external_summary(theta + 0.1, joint.theta_cov / 20, transformation=t)

        data = logistic_data(n=600, seed=50 + seed)
        joint = fit_joint(EquationFamily(GLM_LOGISTIC, FeatureMap.all_x(data)),
                          EquationFamily(GLM_LOGISTIC, FeatureMap.x_and_z(data)), data)
        theta = joint.theta_block.params
        yield f'logistic/{seed}', joint, external_summary(theta - 0.1, joint.theta_cov / 20, GLM_LOGISTIC)

        data = cate_data(n=500, seed=60 + seed)
        x_map, full = FeatureMap.all_x(data), FeatureMap.x_and_z(data)
        psi = EquationFamily(WCLS_CATE, x_map, x_map, propensity='propensity_x')
        joint = fit_joint(psi, EquationFamily(WCLS_CATE, full, full), data)
        _, effect = psi.cate_partition
        t = Transformation(SUBSET, effect)
        theta = joint.theta_block.params
        yield f'cate/{seed}', joint, external_summary(theta + 0.05, joint.theta_cov / 20, WCLS_CATE, t)

        data = count_data(n=400, seed=70 + seed)
        x_map = FeatureMap.all_x(data)
        joint = fit_joint(EquationFamily(GLM_POISSON, x_map), EquationFamily(LOG_RELATIVE_RISK, x_map, x_map), data)
        theta = joint.theta_block.params
        yield f'count/{seed}', joint, external_summary(theta + 0.05, joint.theta_cov / 20, GLM_POISSON)


class EfficiencyOrderingTests(SimpleTestCase):
    def test_conditional_covariance_never_exceeds_internal(self):
        checked = 0
        for label, joint, ext in fitted_instances():
            cond = conditional_estimate(joint, ext)
            scale = max(1.0, np.abs(cond.cov_internal).max())
            self.assertGreaterEqual(np.linalg.eigvalsh(cond.efficiency_gain)[0], -1e-9 * scale, label)
            checked += 1
        self.assertEqual(checked, 24)


@tag('slow')
class OrthogonalAuxiliaryTests(SimpleTestCase):
    """Auxiliary covariates residualized on x in sample at n = 100000"""

    def setUp(self):
        rng = np.random.default_rng(77)
        n = 100000
        x = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
        raw = rng.standard_normal((n, 2)) + 0.5 * x[:, 1:2]
        z = raw - x @ np.linalg.lstsq(x, raw, rcond=None)[0]
        y = x @ np.array([0.5, 1.0, -0.5]) + z @ np.array([0.05, -0.05]) + rng.standard_normal(n)
        data = Dataset(y=y, x=x, z=z)
        self.joint = fit_joint(EquationFamily(LINEAR, FeatureMap.all_x(data)),
                               EquationFamily(LINEAR, FeatureMap.x_and_z(data)), data)
        theta = self.joint.theta_block.params
        self.sigma_e = self.joint.theta_cov / 2
        self.theta_e = theta + 2.0 * self.joint.theta_block.standard_errors
        self.cond = conditional_estimate(self.joint, external_summary(self.theta_e, self.sigma_e))

    def test_x_block_equals_external_model_fit(self):
        np.testing.assert_allclose(self.joint.gamma_block.params[:3], self.joint.theta_block.params, rtol=0, atol=1e-9)

    def test_cross_block_with_z_vanishes(self):
        se_theta = self.joint.theta_block.standard_errors
        se_gamma = self.joint.gamma_block.standard_errors
        standardized = self.joint.cross_cov[:, 3:] / np.outer(se_theta, se_gamma[3:])
        self.assertLess(np.abs(standardized).max(), 0.02)

    def test_z_block_is_left_alone(self):
        se_z = self.joint.gamma_block.standard_errors[3:]
        self.assertLess(np.abs(self.cond.correction[3:] / se_z).max(), 0.1)

    def test_x_block_is_the_precision_weighted_average(self):
        prec_i, prec_e = np.linalg.inv(self.joint.theta_cov), np.linalg.inv(self.sigma_e)
        pooled = np.linalg.solve(prec_i + prec_e, prec_i @ self.joint.theta_block.params + prec_e @ self.theta_e)
        se_x = self.joint.gamma_block.standard_errors[:3]
        self.assertLess(np.abs((self.cond.gamma_cond[:3] - pooled) / se_x).max(), 0.2)
