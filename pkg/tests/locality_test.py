import unittest
import math
import numpy as np
from fractions import Fraction

# add folder to path to make relative imports work
import sys,os
BASE = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, BASE)
from oplab.lattice_geometry import Direction, Interval, complement_cone, norm2, parse_arc
from oplab.locality import (DecayProfile, WindowExhaustedError, annulus_confine, block_norm, compactness_profile,
                            cone_split, finite_support_approx, locality_scan)
from oplab.operator_core import Operator, OperatorError, TruncationWindow, random_local_unitary

class TestLocality(unittest.TestCase):

    def setUp(self):
        self.window = TruncationWindow('Z2', 5)
        self.I = parse_arc('(1,0)..(1,1)')
        self.J = parse_arc('(-1,1)..(-1,0)')
        self.U = random_local_unitary(self.window, np.random.default_rng(11), layers=2, strength=0.4)

    def test_decay_profile(self):
        profile = DecayProfile((Fraction(0), Fraction(2), Fraction(4)), (1.0, 0.5, 0.0), 'demo')
        self.assertTrue(profile.is_nonincreasing())
        self.assertEqual(profile.value_at(1), 0.5)
        self.assertEqual(profile.value_at(9), 0.0)
        self.assertEqual(profile.to_rows()[1], ('2', 0.5))
        with self.assertRaises(OperatorError):
            DecayProfile((Fraction(0),), (1.0, 2.0))
        with self.assertRaises(OperatorError):
            DecayProfile((Fraction(2), Fraction(1)), (1.0, 2.0))

    def test_compactness_profile(self):
        identity = Operator.identity(self.window)
        self.assertEqual(block_norm(identity, self.I, self.J), 0.0)
        flat = compactness_profile(identity, self.I, self.J, [0, 1, 2])
        self.assertEqual(flat.values, (0.0, 0.0, 0.0))

        profile = compactness_profile(self.U, self.I, self.J, range(0, 7))
        self.assertTrue(profile.is_nonincreasing())
        self.assertAlmostEqual(profile.values[0], block_norm(self.U, self.I, self.J))
        # nothing of the window lies beyond its radius
        self.assertEqual(profile.values[-1], 0.0)
        self.assertEqual(len(locality_scan(self.U, [(self.I, self.J), (self.J, self.I)], [0, 3])), 2)

        with self.assertRaises(OperatorError):
            compactness_profile(self.U, self.I, self.I, [0])
        with self.assertRaises(OperatorError):
            block_norm(Operator.identity(TruncationWindow('Z', 3)), self.I, self.J)

    def test_finite_support_approx(self):
        w = TruncationWindow('Z', 4)
        K = Operator(w, np.diag([2.0 ** -abs(x[0]) for x in w.sites]))
        self.assertEqual(finite_support_approx(K, Interval(1, None), 0.2), ((1,), (2,)))
        self.assertEqual(finite_support_approx(K, Interval(1, None), 0.6), ())
        self.assertEqual(finite_support_approx(Operator.zero(w), Interval(1, None), 0.1), ())
        with self.assertRaises(OperatorError):
            finite_support_approx(K, Interval(1, None), 0.0)

    def test_cone_split(self):
        outside = set(x for x in self.window.sites if complement_cone(self.I).contains(x))

        split = cone_split(Operator.identity(self.window), self.I, 0.25)
        self.assertEqual(split.good, ())
        self.assertEqual(set(split.bad), outside)
        self.assertEqual(split.achieved_bound, 0.0)

        split = cone_split(self.U, self.I, 0.25)
        self.assertLessEqual(split.achieved_bound, 0.25 + 1e-12)
        self.assertEqual(set(split.good) | set(split.bad), outside)
        self.assertFalse(set(split.good) & set(split.bad))
        self.assertEqual(len(split.to_rows()), len(outside))

    def test_annulus_confine(self):
        identity = Operator.identity(TruncationWindow('Z2', 8))
        plan = annulus_confine(identity, [Direction(1, 0), Direction(0, 1)], [0.1, 0.1])
        self.assertEqual(plan.centers, ((1, 0), (0, 2)))
        self.assertEqual(plan.radii[0], Fraction(5, 4))
        self.assertAlmostEqual(plan.t_radii[1], math.sqrt(2))
        self.assertEqual(plan.bounds, (0.0, 0.0))
        for k, x in enumerate(plan.centers):
            self.assertLessEqual(plan.inner_radius(k) ** 2, norm2(x))
            self.assertLess(norm2(x), plan.radii[k] ** 2)
        self.assertEqual(plan.to_json()['centers'], [[1, 0], [0, 2]])

        U = random_local_unitary(TruncationWindow('Z2', 8), np.random.default_rng(11), layers=2, strength=0.4)
        plan = annulus_confine(U, [Direction(1, 0), Direction(0, 1)], [0.3, 0.3])
        self.assertTrue(all(b <= 0.3 + 1e-12 for b in plan.bounds))
        self.assertLess(plan.radii[0], plan.radii[1])

    def test_annulus_confine_errors(self):
        small = Operator.identity(TruncationWindow('Z2', 2))
        thetas = [Direction(1, 0), Direction(0, 1), Direction(-1, 0)]
        with self.assertRaises(WindowExhaustedError) as ctx:
            annulus_confine(small, thetas, [0.1] * 3)
        self.assertEqual(ctx.exception.index, 2)
        with self.assertRaises(OperatorError):
            annulus_confine(small, [], [])
        with self.assertRaises(OperatorError):
            annulus_confine(small, thetas, [0.1])


### RUN
if __name__ == '__main__':
    unittest.main()
