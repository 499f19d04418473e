import math
from dataclasses import dataclass

import numpy as np
from django.test import SimpleTestCase

from synchronization.services.emergent import (
    HProblem,
    compare,
    counting_network,
    emergent_contraction_rate,
    emergent_rhs,
    epsilon_sweep,
    h_partials,
    initial_median_experiment,
    leader_gaps,
    locally_linear_bound,
    simulate_emergent,
    solve_h,
    solve_h_bisection,
    solve_h_classical,
    solve_h_log,
    solve_h_specialized,
)
from synchronization.services.errors import (
    BracketFailure,
    GridMismatch,
    InvalidScenario,
    NonFinite,
    NotClassical,
    NotLog,
    SolverError,
    StaleSolution,
)
from synchronization.services.graph import build_graph, named_graph
from synchronization.services.netsim import Agent, build_scenario, integrate
from synchronization.services.shape import (
    Classical,
    Constant,
    ExpToEta,
    LocallyLinear,
    Log,
    NearSignum,
    Scaled,
)
from synchronization.services.vfield import evaluate, parse


@dataclass(frozen=True)
class SteppedInverse(Classical):
    """Inverse that jumps across zero, so no double brings H close to zero."""

    def mu_inv(self, s):
        return 0.5 * np.sign(s) + 1e-30 * s

    def mu_inv_prime(self, s):
        return 1e-30 + 0.0 * np.asarray(s)


def make_agents(sources, funnels=None, couplings=None):
    n = len(sources)
    funnels = funnels or [Constant(1.0)] * n
    couplings = couplings or [Classical(1.0)] * n
    return [Agent(parse(src), fn, c) for src, fn, c in zip(sources, funnels, couplings)]


class SolveHTests(SimpleTestCase):
    def test_equal_drives(self):
        self.assertEqual(solve_h([2.0, 2.0, 2.0], [1.0, 3.0, 0.5], [Classical()] * 3), 2.0)

    def test_symmetric_drives(self):
        self.assertAlmostEqual(solve_h([0.0, 2.0], [1.0, 1.0], [Classical(2.0)] * 2), 1.0, places=11)
        self.assertAlmostEqual(solve_h([0.0, 2.0], [1.0, 1.0], [Log()] * 2), 1.0, places=11)

    def test_classical_three_agents(self):
        h = solve_h([0.0, 1.0, 3.0], [1.0, 1.0, 1.0], [Classical()] * 3)
        self.assertAlmostEqual(h, 1.135, delta=1e-3)
        terms = [(h - f) / (1.0 + abs(h - f)) for f in (0.0, 1.0, 3.0)]
        self.assertAlmostEqual(sum(terms), 0.0, places=10)

    def test_root_stays_in_drive_range(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            f = rng.normal(size=6)
            h = solve_h(f, rng.uniform(0.1, 2.0, 6), [NearSignum(0.2, 0.5)] * 6)
            self.assertGreaterEqual(h, f.min())
            self.assertLessEqual(h, f.max())

    def test_specialized_solvers_agree_with_bisection(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(2, 8))
            f = rng.uniform(-3.0, 3.0, n)
            psi = rng.uniform(0.05, 2.0, n)
            kappa = float(rng.uniform(0.5, 3.0))
            reference = solve_h(f, psi, [Classical(kappa)] * n)
            self.assertAlmostEqual(solve_h_classical(0.0, f, psi, kappa=kappa), reference, delta=1e-9)
            reference = solve_h(f, psi, [Log()] * n)
            self.assertAlmostEqual(solve_h_log(0.0, f, psi), reference, delta=1e-9)

    def test_translation_and_scale_invariance(self):
        f = np.array([0.3, -1.2, 2.5, 0.9])
        psi = np.array([1.0, 0.4, 2.0, 0.7])
        couplings = [Classical(), Log(), LocallyLinear(1.0), NearSignum(0.1, 1.0)]
        h = solve_h(f, psi, couplings)
        self.assertAlmostEqual(solve_h(f + 4.0, psi, couplings), h + 4.0, delta=1e-9)
        self.assertAlmostEqual(solve_h(f, 7.5 * psi, couplings), h, delta=1e-9)

    def test_monotone_in_each_drive(self):
        f = np.array([0.0, 1.0, 3.0])
        h = solve_h(f, [1.0, 1.0, 1.0], [Classical()] * 3)
        for i in range(3):
            bumped = f.copy()
            bumped[i] += 0.5
            self.assertGreater(solve_h(bumped, [1.0, 1.0, 1.0], [Classical()] * 3), h)

    def test_locally_linear_gives_weighted_mean(self):
        h = solve_h([0.0, 1.0, 5.0], [1.0, 1.0, 1.0], [LocallyLinear(5.0)] * 3)
        self.assertAlmostEqual(h, 2.0, places=10)
        h = solve_h([0.0, 4.0], [3.0, 1.0], [LocallyLinear(5.0)] * 2)
        self.assertAlmostEqual(h, 1.0, places=10)

    def test_unresolvable_root_is_an_error(self):
        with self.assertRaises(SolverError):
            solve_h([0.0, 1.0], [1.0, 2.0], [SteppedInverse()] * 2)

    def test_log_solver_reports_exponent_range_failure(self):
        self.assertAlmostEqual(solve_h([0.0, 2000.0], [1.0, 1.0], [Log()] * 2), 1000.0, delta=1e-9)
        with self.assertRaises(BracketFailure):
            solve_h_log(0.0, [0.0, 2000.0], [1.0, 1.0])

    def test_specialized_dispatch(self):
        p = HProblem(t=0.0, f=(0.0, 1.0, 3.0), funnels=(Constant(1.0),) * 3, couplings=(Classical(),) * 3)
        self.assertAlmostEqual(solve_h_specialized(p), solve_h_bisection(p), delta=1e-10)
        mixed = HProblem(t=0.0, f=(0.0, 1.0), funnels=(Constant(1.0),) * 2, couplings=(Classical(), Log()))
        with self.assertRaises(NotClassical):
            solve_h_specialized(mixed)
        with self.assertRaises(NotClassical):
            solve_h_classical(0.0, [0.0, 1.0], [1.0, 1.0], couplings=[Classical(1.0), Classical(2.0)])
        with self.assertRaises(NotLog):
            solve_h_log(0.0, [0.0, 1.0], [1.0, 1.0], couplings=[Log(), Classical()])


class PartialsTests(SimpleTestCase):
    funnels = (ExpToEta(1.0, 0.2, 1.0), ExpToEta(2.0, 0.1, 3.0), Constant(0.5))
    couplings = (Classical(), NearSignum(0.5, 1.0), Log())

    def problem(self, t=0.4, f=(0.2, 1.1, -0.5)):
        return HProblem(t=t, f=tuple(f), funnels=self.funnels, couplings=self.couplings)

    def test_drive_partials_sum_to_one_and_match_differences(self):
        p = self.problem()
        partials = h_partials(p, solve_h_bisection(p))
        self.assertAlmostEqual(float(partials.dh_df.sum()), 1.0, places=12)
        self.assertTrue(np.all(partials.dh_df > 0.0))
        step = 1e-4
        for i in range(3):
            up, down = list(p.f), list(p.f)
            up[i] += step
            down[i] -= step
            numeric = (solve_h_bisection(self.problem(f=up)) - solve_h_bisection(self.problem(f=down))) / (2 * step)
            np.testing.assert_allclose(partials.dh_df[i], numeric, rtol=1e-6, atol=1e-8)

    def test_time_partial_matches_differences(self):
        p = self.problem()
        partials = h_partials(p, solve_h_bisection(p))
        step = 1e-4
        numeric = (
            solve_h_bisection(self.problem(t=p.t + step)) - solve_h_bisection(self.problem(t=p.t - step))
        ) / (2 * step)
        np.testing.assert_allclose(partials.dh_dt, numeric, rtol=1e-6, atol=1e-8)

    def test_time_partial_vanishes_for_common_shape(self):
        base = ExpToEta(1.0, 0.0, 2.0)
        p = HProblem(
            t=0.3,
            f=(0.0, 1.0, 2.5),
            funnels=(Scaled(base, 1.0), Scaled(base, 0.5), Scaled(base, 3.0)),
            couplings=(Classical(),) * 3,
        )
        self.assertEqual(h_partials(p, solve_h_bisection(p)).dh_dt, 0.0)

    def test_stale_solution(self):
        p = self.problem()
        with self.assertRaises(StaleSolution):
            h_partials(p, solve_h_bisection(p) + 0.5)


class EmergentSimulationTests(SimpleTestCase):
    def test_affine_drives_shift_the_root(self):
        agents = make_agents(["1 - x", "2 - x", "-0.5 - x"])
        h_a = solve_h([1.0, 2.0, -0.5], [1.0, 1.0, 1.0], [Classical()] * 3)
        for xi in (-1.0, 0.0, 2.5):
            self.assertAlmostEqual(emergent_rhs(0.0, xi, agents), h_a - xi, delta=1e-9)

    def test_homogeneous_agents_in_every_mode(self):
        agents = make_agents(["-x", "-x", "-x"])
        for mode in ("direct", "two_dim", "blended"):
            em = simulate_emergent(3.0, 0.0, 2.0, 0.01, mode, agents)
            self.assertAlmostEqual(float(em.xi[-1]), 3.0 * math.exp(-2.0), places=8, msg=mode)

    def test_two_dim_tracks_direct(self):
        agents = make_agents(
            ["1 - x", "-x + sin(t)", "0.5 - 2*x"],
            funnels=[ExpToEta(1.0, 0.2, 1.0), ExpToEta(2.0, 0.1, 3.0), Constant(0.5)],
            couplings=[NearSignum(0.5, 1.0)] * 3,
        )
        direct = simulate_emergent(0.0, 0.0, 3.0, 0.01, "direct", agents)
        two_dim = simulate_emergent(0.0, 0.0, 3.0, 0.01, "two_dim", agents)
        np.testing.assert_allclose(two_dim.xi, direct.xi, atol=1e-5)
        self.assertLess(two_dim.max_drift, 1e-5)
        self.assertEqual(list(two_dim.columns()), ["t", "xi", "chi"])

    def test_two_dim_rejects_vanishing_slopes(self):
        agents = make_agents(["0", "2"], couplings=[NearSignum(0.2, 1e-3)] * 2)
        self.assertEqual(emergent_rhs(0.0, 0.0, agents), 1.0)
        with self.assertRaises(NonFinite):
            simulate_emergent(0.0, 0.0, 1.0, 0.1, "two_dim", agents)

    def test_blended_constant_drives(self):
        agents = make_agents(["0", "2"])
        em = simulate_emergent(0.0, 0.0, 1.0, 0.1, "blended", agents)
        self.assertAlmostEqual(float(em.xi[-1]), 1.0, places=12)

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            simulate_emergent(0.0, 0.0, 1.0, 0.1, "implicit", make_agents(["0", "1"]))

    def test_counting_network_equilibrium(self):
        for n in (4, 6):
            fields = counting_network(n)
            blended = simulate_emergent(0.0, 0.0, 60.0, 0.1, "blended", make_agents([str(f) for f in fields]))
            self.assertAlmostEqual(float(blended.xi[-1]), float(n), delta=1e-2)

            mf_bar = locally_linear_bound(fields, (0.0, float(n)), (0.0, 60.0), samples=11)
            agents = [Agent(f, Constant(1.0), LocallyLinear(mf_bar)) for f in fields]
            direct = simulate_emergent(0.0, 0.0, 60.0, 0.1, "direct", agents)
            self.assertAlmostEqual(float(direct.xi[-1]), float(n), delta=1e-2)
            np.testing.assert_allclose(direct.xi, blended.xi, atol=1e-8)

    def test_counting_network_fields(self):
        fields = counting_network(3)
        self.assertEqual(len(fields), 3)
        self.assertEqual(evaluate(fields[0], 0.0, 2.0), -1.0)
        self.assertEqual(evaluate(fields[2], 0.0, 2.0), 1.0)

    def test_contraction_rate(self):
        agents = make_agents(["1 - x", "2 - x"])
        rate = emergent_contraction_rate(agents, [0.0, 1.0], [-1.0, 0.0, 1.0])
        self.assertAlmostEqual(rate, -1.0, places=10)


class ComparisonTests(SimpleTestCase):
    def ring(self, funnels=None, t_end=5.0):
        sources = [f"{a!r} - x" for a in (1.0, 1.5, 2.0, 2.5, 3.0)]
        return build_scenario(named_graph("ring", 5), make_agents(sources, funnels), [2.0] * 5, 0.0, t_end, 0.01)

    def test_homogeneous_network_matches_emergent(self):
        s = build_scenario(named_graph("path", 3), make_agents(["-x"] * 3), [1.0] * 3, 0.0, 2.0, 0.01)
        rec = integrate(s)
        em = simulate_emergent(1.0, 0.0, 2.0, 0.01, "direct", s.agents)
        report = compare(rec, em, 0.0, s)
        self.assertLess(report.sup_state_err, 1e-12)
        self.assertLess(report.sup_ratio_err, 1e-12)

    def test_compare_rejects_bad_inputs(self):
        s = self.ring(t_end=1.0)
        rec = integrate(s)
        with self.assertRaises(GridMismatch):
            compare(rec, simulate_emergent(2.0, 0.0, 1.0, 0.05, "direct", s.agents), 0.0, s)
        em = simulate_emergent(2.0, 0.0, 1.0, 0.01, "direct", s.agents)
        with self.assertRaises(InvalidScenario):
            compare(rec, em, 2.0, s)

    def test_sweep_errors_shrink_with_the_funnels(self):
        sources = [f"{a!r} - x" for a in (1.0, 2.0, 3.0, 10.0, 20.0)]
        agents = make_agents(sources, [Constant(0.5)] * 5)
        s = build_scenario(named_graph("ring", 5), agents, [2.0] * 5, 0.0, 2.0, 0.01)
        rows = epsilon_sweep(s, s.funnels, [0.5, 0.25, 0.125], tau=1.0)
        self.assertEqual([r.eps for r in rows], [0.5, 0.25, 0.125])
        self.assertFalse(any(r.breach for r in rows))
        errors = [r.sup_state_err for r in rows]
        self.assertTrue(errors[0] > errors[1] > errors[2], errors)
        self.assertLess(errors[-1], 0.1)
        ratio_errors = [r.sup_ratio_err for r in rows]
        self.assertTrue(ratio_errors[0] > ratio_errors[1] > ratio_errors[2], ratio_errors)
        self.assertEqual(
            sorted(rows[0].to_dict()), ["breach", "eps", "max_input", "sup_ratio_err", "sup_state_err"]
        )

    def test_sweep_needs_synchronized_start(self):
        s = build_scenario(named_graph("path", 2), make_agents(["0", "0"]), [0.0, 0.5], 0.0, 1.0, 0.1)
        with self.assertRaises(InvalidScenario):
            epsilon_sweep(s, s.funnels, [0.5], tau=0.0)


class ExperimentTests(SimpleTestCase):
    def test_leader_gap_closes_as_its_funnel_grows(self):
        f = [0.0, 1.0, 2.0, 3.0, 4.0]
        gaps = leader_gaps(f, [1.0] * 5, [Classical()] * 5, leader=0, scales=[1.0, 10.0, 100.0, 1000.0])
        self.assertTrue(all(a > b for a, b in zip(gaps, gaps[1:])), gaps)
        self.assertLess(gaps[-1], 0.01)

    def test_leader_gap_on_random_drives(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            n = int(rng.integers(3, 9))
            f = rng.uniform(-5.0, 5.0, n)
            leader = int(rng.integers(n))
            gaps = leader_gaps(f, [1.0] * n, [Classical()] * n, leader=leader, scales=[10.0, 100.0, 1000.0])
            self.assertTrue(gaps[0] > gaps[1] > gaps[2], (f, leader, gaps))
            self.assertLess(gaps[-1], 0.01)

    def test_network_follows_a_dominant_leader(self):
        funnels = [Scaled(Constant(0.1), 100.0)] + [Constant(0.1)] * 4
        s = build_scenario(
            named_graph("star", 5), make_agents(["5 - x"] + ["-x"] * 4, funnels), [0.0] * 5, 0.0, 5.0, 0.01
        )
        rec = integrate(s)
        self.assertFalse(rec.breach)
        em = simulate_emergent(0.0, s.t0, s.t_end, s.dt, "direct", s.agents)
        self.assertLess(float(np.max(np.abs(em.chi - (5.0 - em.xi)))), 0.05)

        target = 5.0 * (1.0 - np.exp(-rec.times))
        self.assertLess(float(np.max(np.abs(rec.x[:, 0] - target))), 0.05)
        self.assertLess(float(np.max(np.abs(rec.x - target[:, None]))), 0.15)
        self.assertLess(float(np.max(np.abs(rec.x[:, 0] - em.xi))), 0.02)

    def test_initial_median_rows(self):
        s = build_scenario(
            build_graph(3, [(0, 1, 1.0), (1, 2, 1.0)]),
            make_agents(["0", "0", "0"], funnels=[Constant(10.0)] * 3),
            [0.0, 1.0, 5.0],
            0.0,
            1.0,
            0.01,
        )
        rows = initial_median_experiment(s, [0.1], horizon=0.5)
        self.assertEqual(len(rows), 1)
        row = rows[0]
        self.assertEqual((row.median_lower, row.median_upper), (1.0, 1.0))
        self.assertTrue(math.isfinite(row.x_s))
        self.assertAlmostEqual(row.distance, abs(row.x_s - 1.0), places=12)
