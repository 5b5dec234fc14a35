import unittest
import numpy as np
from dataclasses import replace
from itertools import islice

# add folder to path to make relative imports work
import sys,os
BASE = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, BASE)
from oplab.lattice_geometry import Ball, Cone, arc_contains, direction_of, enumerate_directions, parse_arc
from oplab.operator_core import (Operator, Projection, TruncationWindow, diagonal_projection, random_local_unitary,
                                 shift_operator, spectral_norm, unitarity_defect)
from oplab.locality import CentersPlan
from oplab.surgery import (PreconditionError, PremiseError, ProjectionPair, SurgeryError, check_mixing,
                           corrective_unitary, cross_cone_mixing, deletion_series, greedy_isometry,
                           localized_centers, random_admissible_pairs, series_bound, series_slack)

class TestSurgery(unittest.TestCase):

    def test_deletion_series_diagonal(self):
        window = TruncationWindow('Z2', 3)
        A, pairs = random_admissible_pairs(window, 6, 0.5, np.random.default_rng(5))
        B = deletion_series(A, pairs, 0.5)
        for pair in pairs:
            block = B.entries[np.ix_(pair.P.diagonal_mask(), pair.Q.diagonal_mask())]
            self.assertFalse(block.any())
        self.assertLessEqual(spectral_norm(A.entries - B.entries), 0.5 + 1e-12)
        self.assertEqual(B.lineage[-1], 'deletion_series')

    def test_deletion_series_general(self):
        w = TruncationWindow('Z', 3)
        A = 0.1 * shift_operator(w, 1)
        v = np.zeros(w.dimension, dtype=np.complex128)
        v[w.index[(0,)]] = v[w.index[(1,)]] = 1 / np.sqrt(2)
        P = Projection(w, np.outer(v, v.conj()), 'P')
        Q = diagonal_projection([(0,)], w, 'Q')
        pair = ProjectionPair.measure(A, P, Q)
        self.assertAlmostEqual(pair.bound, 0.1 / np.sqrt(2))

        B = deletion_series(A, [pair], 0.2)
        self.assertLess(spectral_norm(P.entries @ B.entries @ Q.entries), 1e-12)
        self.assertLessEqual(spectral_norm(A.entries - B.entries), 0.2)

    def test_deletion_series_precondition(self):
        w = TruncationWindow('Z', 2)
        P = diagonal_projection([(0,)], w)
        with self.assertRaises(PreconditionError) as ctx:
            deletion_series(Operator.identity(w), [ProjectionPair(P, P)], 0.5)
        self.assertEqual(ctx.exception.k, 1)
        self.assertEqual(ctx.exception.norm, 1.0)
        self.assertEqual(deletion_series(Operator.identity(w), [], 0.5).entries.tolist(), np.eye(5).tolist())

    def test_series_bound(self):
        w = TruncationWindow('Z', 1)
        P = diagonal_projection([(0,)], w)
        self.assertAlmostEqual(series_bound([ProjectionPair(P, P, 0.1), ProjectionPair(P, P, 0.1)]), 0.3)

    def test_deletion_series_two_pairs(self):
        window = TruncationWindow('Z2', 3)
        for seed in range(4):
            A, pairs = random_admissible_pairs(window, 2, 0.5, np.random.default_rng(seed))
            eps1, eps2 = pairs[0].bound, pairs[1].bound
            B = deletion_series(A, pairs, 0.5)
            self.assertLessEqual(spectral_norm(A.entries - B.entries), eps1 + 2 * eps2 + 1e-12)
            self.assertAlmostEqual(series_bound(pairs), eps1 + 2 * eps2)
            self.assertGreaterEqual(series_slack(A, B, pairs), -1e-12)

    def test_localized_centers(self):
        window = TruncationWindow('Z2', 10)
        U = random_local_unitary(window, np.random.default_rng(2), layers=2, strength=0.4)
        thetas = list(islice(enumerate_directions(), 2))
        arc_pairs = [(parse_arc('(1,0)..(1,1)'), parse_arc('(-1,1)..(-1,0)'))]
        B, plan = localized_centers(U, thetas, 0.25, arc_pairs)

        self.assertLessEqual(spectral_norm(U.entries - B.entries), 0.25 + 1e-12)
        self.assertEqual(len(plan.centers), 2)
        for theta, x in zip(plan.thetas, plan.centers):
            self.assertEqual(direction_of(x), theta)
        self.assertFalse(set(plan.ranges[0]) & set(plan.ranges[1]))
        for x, Y in zip(plan.centers, plan.ranges):
            self.assertIn(x, Y)
            outside = np.delete(B.column(x), window.indices(Y))
            self.assertFalse(outside.any())
        self.assertTrue(set(cross_cone_mixing(plan, *arc_pairs[0])) <= {0, 1})

        V = corrective_unitary(B, plan)
        self.assertLess(unitarity_defect(V.entries), 1e-10)
        for x in plan.centers:
            column = (V @ B).column(x)
            i = window.index[x]
            self.assertAlmostEqual(column[i].real, np.linalg.norm(B.column(x)))
            self.assertLess(np.linalg.norm(np.delete(column, i)), 1e-10)

        with self.assertRaises(SurgeryError):
            localized_centers(Operator.identity(TruncationWindow('Z', 4)), thetas, 0.25)

    def test_greedy_isometry(self):
        window = TruncationWindow('Z2', 4)
        S = ~Ball(2)
        matching = greedy_isometry(S, 1, window)
        T = matching.operator.entries
        domain = T.conj().T @ T
        np.testing.assert_allclose(domain @ domain, domain)
        self.assertEqual(matching.window.copies, 2)

        targets = [x for _, x in matching.matches]
        self.assertEqual(len(targets), len(set(targets)))
        self.assertTrue(all(S.contains(x) for x in targets))
        self.assertEqual(len(matching.matches) + len(matching.unmatched), len(matching.intervals))
        # the origin is not in S, its amplified copy goes first with the full circle
        self.assertEqual(matching.matches[0][0], ((0, 0), 1))
        self.assertTrue(matching.intervals[0].full)
        (y, l), x = matching.matches[1]
        self.assertTrue(arc_contains(matching.intervals[1], direction_of(x)))
        self.assertEqual(len(matching.to_json()['matches']), len(matching.matches))

    def test_greedy_isometry_projections(self):
        window = TruncationWindow('Z2', 4)
        S = ~Ball(2)
        in_s = [x for x in window.sites if S.contains(x)]
        for n in (1, 2):
            matching = greedy_isometry(S, n, window)
            amplified = matching.window
            T = matching.operator.entries
            domain = np.zeros(amplified.dimension)
            targets = np.zeros(amplified.dimension)
            for y, x in matching.matches:
                domain[amplified.index[y]] = 1
                targets[amplified.index[(x, 0)]] = 1
            np.testing.assert_array_equal(T.conj().T @ T, np.diag(domain))
            np.testing.assert_array_equal(T @ T.conj().T, np.diag(targets))

            # matched and unmatched together enumerate Lambda_S (+) 1_n
            enumerated = [y for y, _ in matching.matches] + list(matching.unmatched)
            expected = [(x, 0) for x in in_s] + [(x, l) for l in range(1, n + 1) for x in window.sites]
            self.assertEqual(sorted(enumerated), sorted(expected))
            self.assertTrue(all(S.contains(x) for _, x in matching.matches))

            again = greedy_isometry(S, n, window)
            self.assertEqual(again.matches, matching.matches)
            self.assertEqual(again.unmatched, matching.unmatched)
            np.testing.assert_array_equal(again.operator.entries, T)

    def test_check_mixing(self):
        I, J = parse_arc('(1,0)..(1,1)'), parse_arc('(-1,1)..(-1,0)')
        ranges = (((1, 0),), ((2, 0), (-2, 1)), ((3, 0),), ((4, 0), (-4, 1)))
        plan = CentersPlan((), (), (), (), (), (), ranges)
        self.assertEqual(cross_cone_mixing(plan, I, J), (1, 3))
        with self.assertRaises(SurgeryError) as ctx:
            check_mixing(plan, [(I, J)])
        self.assertIn('[3]', str(ctx.exception))
        self.assertEqual(check_mixing(plan, [(I, J)], inner=4), {(I, J): (1, 3)})
        self.assertEqual(check_mixing(replace(plan, ranges=ranges[:2]), [(I, J)]), {(I, J): (1,)})
        self.assertEqual(check_mixing(plan, []), {})

    def test_greedy_isometry_premise(self):
        window = TruncationWindow('Z2', 3)
        quadrant = Cone(parse_arc('(1,0)..(0,1)'))
        with self.assertRaises(PremiseError) as ctx:
            greedy_isometry(quadrant, 1, window)
        self.assertIn(direction_of((-1, 0)), ctx.exception.uncovered)
        matching = greedy_isometry(quadrant, 1, window, check_premise=False)
        self.assertTrue(matching.matches)
        with self.assertRaises(SurgeryError):
            greedy_isometry(quadrant, -1, window, check_premise=False)


### RUN
if __name__ == '__main__':
    unittest.main()
