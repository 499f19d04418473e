import numpy as np
from django.test import SimpleTestCase

from synchronization.services.errors import NonFinite, ParseError, UnknownIdentifier
from synchronization.services.vfield import eval_with_partials, evaluate, is_affine, lipschitz_in_x, parse


def random_source(rng, depth):
    """Any expression the grammar accepts, built from random pieces."""
    if depth == 0 or rng.random() < 0.3:
        return ("x", "t", f"{rng.uniform(0.0, 10.0):.4g}", f"{rng.uniform(0.0, 1e-4):.3g}")[int(rng.integers(4))]
    kind = int(rng.integers(5))
    a = random_source(rng, depth - 1)
    if kind == 0:
        return f"{('sin', 'cos', 'exp', 'tanh', 'abs')[int(rng.integers(5))]}({a})"
    if kind == 1:
        return f"-{a}"
    if kind == 2:
        return f"({a})^{int(rng.integers(0, 4))}"
    op = "+-*/"[int(rng.integers(4))]
    b = random_source(rng, depth - 1)
    return f"({a} {op} {b})" if kind == 3 else f"{a} {op} {b}"


def smooth_source(rng, depth):
    """Bounded, differentiable expressions for x and t in [-1, 1]."""
    leaf = ("x", "t", f"{rng.uniform(0.5, 1.0):.3f}")[int(rng.integers(3))]
    if depth == 0 or rng.random() < 0.25:
        return leaf
    kind = int(rng.integers(6))
    a = smooth_source(rng, depth - 1)
    if kind == 0:
        return f"{('sin', 'cos', 'tanh')[int(rng.integers(3))]}({a})"
    if kind == 1:
        return f"({leaf})^{int(rng.integers(2, 4))}"
    if kind == 2:
        return f"exp({leaf})"
    if kind == 3:
        return f"({a}) / (2 + cos({smooth_source(rng, depth - 1)}))"
    if kind == 4:
        return f"-({a})"
    return f"({a} {'+-*'[int(rng.integers(3))]} {smooth_source(rng, depth - 1)})"


class ParseTests(SimpleTestCase):
    def test_example_field(self):
        vf = parse("(-1+0.1)*x + 10*sin(t)")
        self.assertAlmostEqual(evaluate(vf, 0.0, 2.0), -1.8, places=14)

    def test_canonical_printer(self):
        self.assertEqual(str(parse("1 - x")), "(1.0 - x)")
        self.assertEqual(str(parse("-x^2")), "(-(x^2))")
        self.assertEqual(str(parse("sin(t)*2")), "(sin(t) * 2.0)")

    def test_precedence_and_associativity(self):
        self.assertEqual(evaluate(parse("-x^2"), 0.0, 3.0), -9.0)
        self.assertEqual(evaluate(parse("2*3+4"), 0.0, 0.0), 10.0)
        self.assertEqual(evaluate(parse("8/2/2"), 0.0, 0.0), 2.0)
        self.assertEqual(evaluate(parse("2-3-4"), 0.0, 0.0), -5.0)
        self.assertEqual(evaluate(parse("2*-x"), 0.0, 1.5), -3.0)

    def test_equality_ignores_whitespace(self):
        self.assertEqual(parse("1-x"), parse(" 1 -   x "))

    def test_chained_power_rejected(self):
        with self.assertRaises(ParseError):
            parse("x^2^3")

    def test_unknown_identifier_offsets(self):
        with self.assertRaises(UnknownIdentifier) as ctx:
            parse("y + 1")
        self.assertEqual((ctx.exception.name, ctx.exception.offset), ("y", 0))
        with self.assertRaises(UnknownIdentifier) as ctx:
            parse("x + foo(t)")
        self.assertEqual((ctx.exception.name, ctx.exception.offset), ("foo", 4))

    def test_function_without_argument(self):
        with self.assertRaises(ParseError) as ctx:
            parse("sin + 1")
        self.assertEqual(ctx.exception.offset, 0)

    def test_incomplete_expression(self):
        with self.assertRaises(ParseError):
            parse("1 +")
        with self.assertRaises(ParseError):
            parse("")

    def test_overflowing_literal_rejected(self):
        with self.assertRaises(ParseError) as ctx:
            parse("1e999 * x")
        self.assertEqual(ctx.exception.offset, 0)
        with self.assertRaises(ParseError) as ctx:
            parse("x + 1e400")
        self.assertEqual(ctx.exception.offset, 4)
        self.assertEqual(evaluate(parse("1e300 * x"), 0.0, 1.0), 1e300)

    def test_printed_form_reparses_to_the_same_tree(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            source = random_source(rng, 4)
            vf = parse(source)
            self.assertEqual(parse(str(vf)), vf, source)
            self.assertEqual(str(parse(str(vf))), str(vf), source)


class EvaluationTests(SimpleTestCase):
    def test_division_by_zero_names_the_node(self):
        with self.assertRaises(NonFinite) as ctx:
            evaluate(parse("1/x"), 0.0, 0.0)
        self.assertEqual(ctx.exception.node, "(1.0 / x)")

    def test_overflow(self):
        with self.assertRaises(NonFinite):
            evaluate(parse("exp(1000)"), 0.0, 0.0)

    def test_partials(self):
        value, df_dt, df_dx = eval_with_partials(parse("x^3 + t*x"), 2.0, 1.5)
        self.assertAlmostEqual(value, 6.375, places=13)
        self.assertAlmostEqual(df_dt, 1.5, places=13)
        self.assertAlmostEqual(df_dx, 8.75, places=13)

    def test_partials_of_quotient_and_functions(self):
        _, df_dt, df_dx = eval_with_partials(parse("exp(t)/x + cos(x)"), 0.0, 2.0)
        self.assertAlmostEqual(df_dt, 0.5, places=13)
        self.assertAlmostEqual(df_dx, -0.25 - 0.9092974268256817, places=13)

    def test_abs_derivative_at_zero(self):
        self.assertEqual(eval_with_partials(parse("abs(x)"), 0.0, 0.0), (0.0, 0.0, 0.0))

    def test_affine_detection(self):
        self.assertTrue(is_affine(parse("3*x + sin(t)")))
        self.assertTrue(is_affine(parse("x/2 - 1")))
        self.assertTrue(is_affine(parse("5")))
        self.assertFalse(is_affine(parse("x*x")))
        self.assertFalse(is_affine(parse("sin(x)")))
        self.assertFalse(is_affine(parse("2/x")))

    def test_partials_match_central_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            vf = parse(smooth_source(rng, 3))
            t, x = rng.uniform(-1.0, 1.0, 2)
            _, df_dt, df_dx = eval_with_partials(vf, t, x)
            step_t, step_x = 1e-6 * (1.0 + abs(t)), 1e-6 * (1.0 + abs(x))
            numeric_t = (evaluate(vf, t + step_t, x) - evaluate(vf, t - step_t, x)) / (2.0 * step_t)
            numeric_x = (evaluate(vf, t, x + step_x) - evaluate(vf, t, x - step_x)) / (2.0 * step_x)
            self.assertLessEqual(abs(df_dt - numeric_t), 1e-5 * max(1.0, abs(df_dt)), vf.source)
            self.assertLessEqual(abs(df_dx - numeric_x), 1e-5 * max(1.0, abs(df_dx)), vf.source)

    def test_global_lipschitz_needs_a_bounded_slope(self):
        self.assertTrue(lipschitz_in_x(parse("-2*x + sin(t)")))
        self.assertTrue(lipschitz_in_x(parse("sin(t)*x + t")))
        self.assertTrue(lipschitz_in_x(parse("x/2 - exp(t)")))
        self.assertTrue(is_affine(parse("t*x")))
        self.assertFalse(lipschitz_in_x(parse("t*x")))
        self.assertFalse(lipschitz_in_x(parse("exp(t)*x - 1")))
        self.assertFalse(lipschitz_in_x(parse("x^2")))
