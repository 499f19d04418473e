import math

import numpy as np
from django.test import SimpleTestCase

from synchronization.services.errors import DomainBreach, InvalidParameter, TimeBeforeStart
from synchronization.services.shape import (
    Classical,
    Constant,
    ExpToEta,
    LocallyLinear,
    Log,
    NearSignum,
    Scaled,
    coupling_from_dict,
    funnel_from_dict,
    mu_eval,
    mu_inv,
    psi_eval,
    validate_coupling,
    validate_funnel_set,
)

ALL_COUPLINGS = (Classical(1.0), Classical(2.5), Log(), LocallyLinear(2.0), NearSignum(0.2, 0.05))


class FunnelTests(SimpleTestCase):
    def test_exp_to_eta_values(self):
        f = ExpToEta(psi0=2.0, eta=0.5, lam=1.0)
        self.assertEqual(psi_eval(f, 0.0), (2.0, -1.5))
        self.assertAlmostEqual(f.value(math.log(2.0)), 1.25, places=14)
        self.assertEqual(f.asymptote(), (0.5, 0.0))
        self.assertEqual(ExpToEta(1.0, 0.0, 3.0).asymptote(), (0.0, 3.0))

    def test_time_before_start(self):
        with self.assertRaises(TimeBeforeStart):
            ExpToEta(1.0, 0.0, 1.0, t0=1.0).value(0.5)
        self.assertEqual(Constant(0.7).value(-1e6), 0.7)

    def test_scaled(self):
        f = Scaled(ExpToEta(2.0, 0.0, 1.0), 0.1)
        self.assertAlmostEqual(f.value(0.0), 0.2, places=15)
        self.assertAlmostEqual(f.derivative(0.0), -0.2, places=15)

    def test_invalid_parameters(self):
        with self.assertRaises(InvalidParameter):
            ExpToEta(psi0=0.5, eta=1.0, lam=1.0)
        with self.assertRaises(InvalidParameter):
            Constant(0.0)
        with self.assertRaises(InvalidParameter):
            funnel_from_dict({"family": "sigmoid", "psi0": 1.0})

    def test_from_dict_uses_default_t0(self):
        f = funnel_from_dict({"family": "exp_to_eta", "psi0": 1.0, "lambda": 2.0}, default_t0=3.0)
        self.assertEqual(f, ExpToEta(psi0=1.0, eta=0.0, lam=2.0, t0=3.0))


class CouplingTests(SimpleTestCase):
    def test_classical(self):
        c = Classical(2.0)
        self.assertAlmostEqual(mu_eval(c, 0.5), 2.0, places=14)
        self.assertAlmostEqual(mu_inv(c, 2.0), 0.5, places=14)
        self.assertEqual(c.mu_prime(0.0), 2.0)
        self.assertEqual(c.gamma(0.0), c.gamma_zero)

    def test_log(self):
        c = Log()
        self.assertAlmostEqual(c.mu(0.5), math.log(2.0), places=14)
        self.assertAlmostEqual(c.mu_inv(math.log(2.0)), 0.5, places=14)

    def test_near_signum_hits_one_minus_eps_at_eta(self):
        c = NearSignum(eps=0.2, eta=0.05)
        self.assertAlmostEqual(c.mu_inv(0.05), 0.8, places=12)
        self.assertGreater(c.mu_inv(0.1), 0.8)

    def test_locally_linear_pieces(self):
        c = LocallyLinear(2.0)
        self.assertAlmostEqual(c.mu(0.25), 2.0, places=14)
        self.assertAlmostEqual(c.mu(0.75), 8.0, places=12)
        self.assertAlmostEqual(c.mu(0.5), 4.0, places=12)
        self.assertAlmostEqual(c.mu_inv(2.0), 0.25, places=14)
        self.assertAlmostEqual(c.mu_inv(-8.0), -0.75, places=14)
        self.assertIsInstance(c.mu(0.25), float)

    def test_domain_breach(self):
        with self.assertRaises(DomainBreach):
            Classical().mu(1.0)
        with self.assertRaises(DomainBreach):
            Log().mu(np.array([0.5, -1.2]))

    def test_vectorized(self):
        v = np.array([-0.9, -0.1, 0.0, 0.3, 0.99])
        for c in ALL_COUPLINGS:
            np.testing.assert_allclose(c.mu_inv(c.mu(v)), v, rtol=1e-10, atol=1e-12)

    def test_inverse_derivative_matches_central_differences(self):
        spans = {Classical(1.0): 50.0, Classical(2.5): 50.0, Log(): 8.0, LocallyLinear(2.0): 20.0}
        spans[NearSignum(0.2, 0.05)] = 0.15
        rng = np.random.default_rng(3)
        for c in ALL_COUPLINGS:
            span = spans[c]
            s = rng.uniform(0.01, span, 200) * rng.choice([-1.0, 1.0], 200)
            step = 1e-6 * (1.0 + np.abs(s))
            numeric = (c.mu_inv(s + step) - c.mu_inv(s - step)) / (2.0 * step)
            np.testing.assert_allclose(c.mu_inv_prime(s), numeric, rtol=1e-5, err_msg=c.family)

    def test_from_dict(self):
        self.assertEqual(coupling_from_dict({"family": "classical"}), Classical(1.0))
        self.assertEqual(coupling_from_dict({"family": "near_signum", "eps": 0.1, "eta": 1.0}), NearSignum(0.1, 1.0))
        with self.assertRaises(InvalidParameter):
            coupling_from_dict({"family": "linear"})


class ValidatorTests(SimpleTestCase):
    def test_coupling_families_satisfy_assumptions(self):
        for c in ALL_COUPLINGS:
            report = validate_coupling(c)
            self.assertTrue(report.clauses["strictly_increasing"], c)
            self.assertTrue(report.clauses["gamma_nondecreasing"], c)
            self.assertTrue(report.clauses["gamma_unbounded"], c)
            self.assertTrue(report.clauses["gamma_zero_positive"], c)
            self.assertLess(report.round_trip_error, 1e-8, c)
        self.assertTrue(validate_coupling(Classical()).passed)
        self.assertTrue(validate_coupling(Log()).passed)

    def test_common_shape_funnels(self):
        report = validate_funnel_set([ExpToEta(1.0, 0.1, 1.0), ExpToEta(2.0, 0.2, 0.5)], (0.0, 10.0), 41)
        self.assertTrue(report.passed)
        self.assertFalse(report.r_psi_unbounded)
        self.assertAlmostEqual(report.psi_bar, 2.0)

    def test_mixed_limits_flag_unbounded_ratio(self):
        report = validate_funnel_set([ExpToEta(1.0, 0.0, 1.0), ExpToEta(1.0, 0.1, 1.0)], (0.0, 10.0), 41)
        self.assertTrue(report.r_psi_unbounded)
        self.assertFalse(report.clauses["psi_ratio_bounded"])
        self.assertTrue(report.warnings)

    def test_late_start_reported(self):
        report = validate_funnel_set([ExpToEta(1.0, 0.1, 1.0, t0=2.0)], (0.0, 5.0), 11)
        self.assertFalse(report.clauses["defined_on_horizon"])
