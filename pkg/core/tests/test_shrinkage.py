from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase

from core.equations import LINEAR, WCLS_CATE, Dataset, EquationFamily, FeatureMap
from core.exceptions import SchemaError
from core.fusion import ConditionalResult, ExternalSummary
from core.pipeline import fit_joint, fuse
from core.shrinkage import (
    A_IDENTITY, A_INVERSE_COVARIANCE, A_PREDICTIVE, A_PREDICTIVE_SUBSET, FALLBACK_D_LE_2, FALLBACK_NONE,
    FALLBACK_ZERO_DENOMINATOR, WeightMatrixSpec, build_A, james_stein, shrinkage_weight, weight_from_h_diff,
    weight_from_theta_diff,
)
from core.transform import Transformation

from .factories import cate_data, linear_data, spd_matrix


def conditional(gamma_internal, theta_internal, theta_external, cross, sigma_h=None, transformation=None):
    """ConditionalResult built by hand from the h-scale blocks"""
    theta_internal = np.asarray(theta_internal, dtype=np.float64)
    theta_external = np.asarray(theta_external, dtype=np.float64)
    cross = np.asarray(cross, dtype=np.float64)
    sigma_h = np.eye(cross.shape[0]) if sigma_h is None else sigma_h
    h_diff = theta_internal - theta_external
    gain = cross.T @ np.linalg.inv(sigma_h)
    gamma_internal = np.asarray(gamma_internal, dtype=np.float64)
    q = gamma_internal.shape[0]
    return ConditionalResult(
        gamma_internal=gamma_internal,
        gamma_cond=gamma_internal - gain @ h_diff,
        correction_gain=gain,
        h_diff=h_diff,
        cov_cond=np.eye(q),
        cov_internal=np.eye(q),
        sigma_h_theta=sigma_h,
        sigma_h_cross=cross,
        theta_internal=theta_internal,
        theta_external=theta_external,
        transformation=transformation or Transformation.identity(),
    )


def joint_with_q(q):
    return SimpleNamespace(gamma_block=SimpleNamespace(params=np.zeros(q)))


class ShrinkageWeightTests(SimpleTestCase):
    def test_positive_part(self):
        self.assertEqual(shrinkage_weight(1.0, 3.0, 4.0), (0.25, FALLBACK_NONE))
        self.assertEqual(shrinkage_weight(5.0, 3.0, 4.0), (1.0, FALLBACK_NONE))

    def test_zero_denominator_comes_first(self):
        self.assertEqual(shrinkage_weight(-1.0, 1.0, 0.0), (0.0, FALLBACK_ZERO_DENOMINATOR))

    def test_small_d(self):
        self.assertEqual(shrinkage_weight(1.0, 2.0, 4.0), (0.0, FALLBACK_D_LE_2))
        self.assertEqual(shrinkage_weight(-0.5, 3.0, 4.0), (0.0, FALLBACK_D_LE_2))


class JamesSteinTests(SimpleTestCase):
    def test_weight_from_known_j(self):
        cond = conditional(np.zeros(3), np.zeros(3), [2.0, 0.0, 0.0], np.eye(3))
        js = james_stein(cond, joint_with_q(3), np.eye(3))
        self.assertAlmostEqual(js.trace_j, 3.0)
        self.assertAlmostEqual(js.norm_j, 1.0)
        self.assertAlmostEqual(js.tau_star, 1.0)
        self.assertAlmostEqual(js.d_ratio, 3.0)
        self.assertAlmostEqual(js.denominator, 4.0)
        self.assertAlmostEqual(js.weight, 0.25)
        self.assertEqual(js.fallback, FALLBACK_NONE)
        np.testing.assert_allclose(js.gamma_js, [0.5, 0.0, 0.0])

    def test_zero_denominator(self):
        cond = conditional(np.ones(3), np.zeros(3), np.zeros(3), np.eye(3))
        js = james_stein(cond, joint_with_q(3), np.eye(3))
        self.assertEqual(js.fallback, FALLBACK_ZERO_DENOMINATOR)
        self.assertEqual(js.weight, 0.0)
        np.testing.assert_array_equal(js.gamma_js, cond.gamma_internal)

    def test_rank_one_j(self):
        cond = conditional(np.zeros(3), np.zeros(3), [2.0, 1.0, 0.0], np.diag([1.0, 0.0, 0.0]))
        js = james_stein(cond, joint_with_q(3), np.eye(3))
        self.assertAlmostEqual(js.d_ratio, 1.0)
        self.assertEqual(js.fallback, FALLBACK_D_LE_2)
        np.testing.assert_array_equal(js.gamma_js, cond.gamma_internal)

    def test_large_discrepancy_falls_back_to_internal(self):
        cond = conditional(np.zeros(3), np.zeros(3), [1.0, 1.0, 1.0], np.eye(3))
        base = james_stein(cond, joint_with_q(3), np.eye(3))
        self.assertLessEqual(weight_from_h_diff(1e3 * cond.h_diff, base), 1e-3)

    def test_h_diff_weight_reproduces_base(self):
        cond = conditional(np.zeros(3), np.zeros(3), [1.0, -2.0, 0.5], np.eye(3), sigma_h=np.diag([1.0, 2.0, 4.0]))
        base = james_stein(cond, joint_with_q(3), np.diag([1.0, 2.0, 3.0]))
        self.assertAlmostEqual(weight_from_h_diff(cond.h_diff, base), base.weight, places=12)

    def test_theta_difference_form(self):
        cond = conditional(np.zeros(3), np.zeros(3), [2.0, 0.0, 0.0], np.eye(3))
        self.assertAlmostEqual(weight_from_theta_diff(cond, np.eye(3)), 0.25)

    def test_theta_difference_form_needs_identity(self):
        cond = conditional(np.zeros(2), np.zeros(2), np.ones(2), np.eye(2), transformation=Transformation.drop_intercept(3))
        with self.assertRaises(SchemaError):
            weight_from_theta_diff(cond, np.eye(2))

    def test_a_dimension_mismatch(self):
        cond = conditional(np.zeros(3), np.zeros(3), np.ones(3), np.eye(3))
        with self.assertRaises(SchemaError):
            james_stein(cond, joint_with_q(3), np.eye(2))


class FittedShrinkageTests(SimpleTestCase):
    def setUp(self):
        self.data = linear_data(n=400)
        self.psi = EquationFamily(LINEAR, FeatureMap.all_x(self.data))
        self.phi = EquationFamily(LINEAR, FeatureMap.x_and_z(self.data))
        self.joint = fit_joint(self.psi, self.phi, self.data)
        theta = self.joint.theta_block.params
        self.ext = ExternalSummary(theta + np.array([0.1, 0.05, -0.08]), self.joint.theta_cov / 20, 8000, LINEAR)

    def test_js_lies_on_segment(self):
        result = fuse(self.data, self.ext, self.psi, self.phi, a_spec=WeightMatrixSpec(A_PREDICTIVE), joint=self.joint)
        self.assertGreaterEqual(result.weight, 0.0)
        self.assertLessEqual(result.weight, 1.0)
        expected = result.gamma_internal + result.weight * (result.gamma_cond - result.gamma_internal)
        np.testing.assert_allclose(result.gamma_js, expected, atol=1e-14)

    def test_theta_difference_form_matches(self):
        for kind in (A_IDENTITY, A_PREDICTIVE, A_INVERSE_COVARIANCE):
            result = fuse(self.data, self.ext, self.psi, self.phi, a_spec=WeightMatrixSpec(kind), joint=self.joint)
            self.assertAlmostEqual(
                weight_from_theta_diff(result.conditional, result.a_matrix), result.weight, places=10,
            )

    def test_equal_estimates_give_zero_weight(self):
        ext = ExternalSummary(self.joint.theta_block.params, self.joint.theta_cov, 8000, LINEAR)
        result = fuse(self.data, ext, self.psi, self.phi, joint=self.joint)
        self.assertEqual(result.weight, 0.0)
        self.assertEqual(weight_from_theta_diff(result.conditional, result.a_matrix), 0.0)


class BuildATests(SimpleTestCase):
    def test_identity(self):
        data = linear_data()
        joint = fit_joint(EquationFamily(LINEAR, FeatureMap.all_x(data)), EquationFamily(LINEAR, FeatureMap.all_x(data)), data)
        np.testing.assert_array_equal(build_A(WeightMatrixSpec(A_IDENTITY), joint, data), np.eye(3))

    def test_predictive_on_orthonormal_design(self):
        rng = np.random.default_rng(8)
        n = 300
        q, _ = np.linalg.qr(rng.standard_normal((n, 3)))
        x = q * np.sqrt(n)
        data = Dataset(y=x @ [1.0, 0.5, -0.5] + rng.standard_normal(n), x=x)
        fam = EquationFamily(LINEAR, FeatureMap.all_x(data))
        A = build_A(WeightMatrixSpec('pmse'), fit_joint(fam, fam, data), data)
        np.testing.assert_allclose(A, np.eye(3), atol=1e-12)

    def test_predictive_subset_on_effect_block(self):
        data = cate_data()
        psi = EquationFamily(WCLS_CATE, FeatureMap.all_x(data), FeatureMap.all_x(data))
        phi = EquationFamily(WCLS_CATE, FeatureMap.x_and_z(data), FeatureMap.x_and_z(data))
        joint = fit_joint(psi, phi, data)
        _, effect = phi.cate_partition
        A = build_A(WeightMatrixSpec(A_PREDICTIVE_SUBSET, effect), joint, data)

        f = np.hstack([data.x, data.z])
        oracle = np.zeros((6, 6))
        for row in f:
            for a, i in enumerate(effect):
                for b, j in enumerate(effect):
                    oracle[i, j] += row[a] * row[b]
        oracle /= data.n
        np.testing.assert_allclose(A, oracle, atol=1e-12)

    def test_inverse_covariance(self):
        data = linear_data()
        joint = fit_joint(EquationFamily(LINEAR, FeatureMap.all_x(data)), EquationFamily(LINEAR, FeatureMap.x_and_z(data)), data)
        A = build_A(WeightMatrixSpec('inv_cov'), joint, data)
        np.testing.assert_allclose(A @ joint.gamma_block.sigma_per_obs, np.eye(5), atol=1e-8)

    def test_subset_out_of_range(self):
        data = linear_data()
        fam = EquationFamily(LINEAR, FeatureMap.all_x(data))
        with self.assertRaises(SchemaError):
            build_A(WeightMatrixSpec(A_PREDICTIVE_SUBSET, (4,)), fit_joint(fam, fam, data), data)

    def test_unknown_loss(self):
        with self.assertRaises(SchemaError):
            WeightMatrixSpec('absolute')


class WeightScalingTests(SimpleTestCase):
    def test_weight_falls_as_the_denominator_grows(self):
        denominators = np.linspace(0.1, 50.0, 200)
        weights = [shrinkage_weight(2.0, 3.0, d)[0] for d in denominators]
        self.assertTrue(np.all(np.diff(weights) <= 0.0))
        self.assertEqual(weights[0], 1.0)
        self.assertLess(weights[-1], 0.05)
        shrink = [1.0 - w for w in weights]
        np.testing.assert_allclose(shrink, np.maximum(0.0, 1.0 - 2.0 / denominators), atol=1e-15)

    def test_per_observation_rescaling(self):
        base = james_stein(conditional(np.zeros(4), np.zeros(4), [-2.0, 0.0, 0.0, 0.0], np.eye(4)),
                           joint_with_q(4), np.eye(4))
        self.assertAlmostEqual(base.weight, 0.5)
        for n in (9.0, 250.0):
            scaled = conditional(np.zeros(4), np.zeros(4), [-2.0 * np.sqrt(n), 0.0, 0.0, 0.0],
                                 n * np.eye(4), sigma_h=n * np.eye(4))
            self.assertAlmostEqual(james_stein(scaled, joint_with_q(4), np.eye(4)).weight, 0.5, places=10)

    def test_rescaling_general_blocks(self):
        sigma_h = spd_matrix(4, seed=2)
        cross = 0.6 * sigma_h + 0.1 * np.ones((4, 4))
        theta_external = np.array([1.0, -0.5, 2.0, 0.3])
        A = spd_matrix(4, seed=3)
        base = james_stein(conditional(np.zeros(4), np.zeros(4), theta_external, cross, sigma_h), joint_with_q(4), A)
        for n in (4.0, 1000.0):
            scaled = conditional(np.zeros(4), np.zeros(4), np.sqrt(n) * theta_external, n * cross, n * sigma_h)
            self.assertAlmostEqual(james_stein(scaled, joint_with_q(4), A).weight, base.weight, places=10)

    def test_constant_observation_weights(self):
        data = linear_data(n=300, seed=6)
        psi = EquationFamily(LINEAR, FeatureMap.all_x(data))
        phi = EquationFamily(LINEAR, FeatureMap.x_and_z(data))
        joint = fit_joint(psi, phi, data)
        ext = ExternalSummary(joint.theta_block.params + np.array([0.2, -0.1, 0.15]), joint.theta_cov / 40, 12000, LINEAR)
        a_spec = WeightMatrixSpec(A_PREDICTIVE)
        plain = fuse(data, ext, psi, phi, a_spec=a_spec)
        tripled = fuse(data.with_weights(np.full(data.n, 3.0)), ext, psi, phi, a_spec=a_spec)
        self.assertAlmostEqual(tripled.weight, plain.weight, places=10)
        np.testing.assert_allclose(tripled.gamma_js, plain.gamma_js, atol=1e-10)
