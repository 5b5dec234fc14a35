import unittest
import math
import numpy as np

# add folder to path to make relative imports work
import sys,os
BASE = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, BASE)
from oplab.config import Tolerances
from oplab.experiments import local_conjugate
from oplab.index import (ContaminatedSpectrumError, IndexEstimator, compressed_operator, cut_locus,
                         default_probes, fredholm_index, index_k_projection, index_sweep, nontriviality_probe,
                         projection_index, translation_invariance_check)
from oplab.lattice_geometry import Cone, parse_arc
from oplab.operator_core import (CircleFunction, Operator, OperatorError, TruncationWindow, laughlin_operator,
                                 projection_from_region)

class TestIndex(unittest.TestCase):

    def setUp(self):
        self.window = TruncationWindow('Z', 16)


    def test_default_values(self):
        e = IndexEstimator()
        self.assertEqual(e.method, 'auto')
        self.assertEqual(e.sv_threshold, 1e-6)
        self.assertEqual(e.trace_power, 4)


    def test_setter(self):
        e = IndexEstimator('trace_formula', 1e-4, 2, 3, 0.1)
        self.assertEqual(e.method, 'trace_formula')
        self.assertEqual(e.trace_power, 2)

        with self.assertLogs('oplab.index', level='WARNING') as cm:
            e.set_method('???')
            e.set_trace_power(0)
            e.set_buffer(1.5)
        self.assertEqual(e.method, 'auto')
        self.assertEqual(e.trace_power, 4)
        self.assertEqual(e.buffer, 0.25)
        self.assertIn('Invalid method entered.', cm.output[0])
        self.assertEqual(len(cm.output), 6)


    def test_index_k_projection(self):
        base, P = index_k_projection(2, self.window)
        self.assertEqual(cut_locus(P), ((0,), (1,)))
        T = compressed_operator(P, base)
        self.assertTrue(IndexEstimator().is_partial_permutation(T))
        with self.assertRaises(OperatorError):
            index_k_projection(5, self.window)
        with self.assertRaises(OperatorError):
            index_k_projection(1, TruncationWindow('Z2', 8))
        with self.assertRaises(OperatorError):
            index_k_projection(1, self.window, 'periodic')

        for k in range(-4, 5):
            base, P = index_k_projection(k, self.window)
            report = nontriviality_probe(P, base, [CircleFunction.monomial(1)], default_probes(self.window))
            self.assertFalse(report.flagged())
            self.assertEqual(report.minima['z^1'], {'P': 1.0, 'P_perp': 1.0})


    def test_sweep(self):
        sweep = index_sweep(range(-3, 4), self.window)
        self.assertTrue(sweep.exact())
        self.assertEqual(sweep.values, (-3, -2, -1, 0, 1, 2, 3))
        self.assertEqual(set(sweep.methods), {'partial_permutation'})
        self.assertEqual(sweep.to_rows()[0], ('k', 'index', 'method'))
        self.assertEqual(sweep.to_json()['radius'], '16')


    def test_methods_agree(self):
        base, P = index_k_projection(2, self.window)
        for method in ['kernel_count', 'trace_formula', 'partial_permutation']:
            result = projection_index(P, base, method=method)
            self.assertEqual(result.value, 2)
            self.assertEqual(result.method, method)
        result = projection_index(P, base)
        self.assertEqual(result.diagnostics['cross_check']['value'], 2)
        # the window edge adds two cokernel sites that are not counted
        self.assertEqual(result.diagnostics['discarded_edge_vectors'], 2)


    def test_complement_flips_sign(self):
        base, P = index_k_projection(2, self.window)
        self.assertEqual(projection_index(P.complement(), base).value, -2)


    def test_conjugated_projection(self):
        base, P = index_k_projection(-1, self.window)
        Q = local_conjugate(P, np.random.default_rng(4))
        result = projection_index(Q, base)
        self.assertEqual(result.value, -1)
        self.assertIn(result.method, ['kernel_count', 'trace_formula'])


    def test_contaminated_spectrum(self):
        w = TruncationWindow('Z', 8)
        a = np.eye(w.dimension, dtype=np.complex128)
        i, j = w.index[(0,)], w.index[(1,)]
        c = 1 / np.sqrt(2)
        a[np.ix_([i, j], [i, j])] = [[c, -c * 1e-4], [c, c * 1e-4]]
        T = Operator(w, a)
        with self.assertRaises(ContaminatedSpectrumError):
            fredholm_index(T, 'kernel_count')
        result = fredholm_index(T)
        self.assertEqual(result.value, 0)
        self.assertEqual(result.method, 'trace_formula')
        self.assertIn('fallback', result.diagnostics)


    def test_nontriviality_probe(self):
        base, P = index_k_projection(1, self.window)
        probes = default_probes(self.window)
        self.assertEqual(probes, ((8,), (-8,)))
        report = nontriviality_probe(P, base, [CircleFunction.monomial(1), CircleFunction.monomial(-1)], probes)
        self.assertFalse(report.flagged())
        self.assertEqual(report.minima['z^1'], {'P': 1.0, 'P_perp': 1.0})

        report = nontriviality_probe(P, base, [CircleFunction.constant(0, 'zero')], probes)
        self.assertEqual(report.flags['zero'], ['degenerate', 'trivial-suspect'])
        self.assertEqual(report.to_json()['compact_floor'], Tolerances().compact_floor)

        with self.assertRaises(OperatorError):
            nontriviality_probe(P, base, [CircleFunction.monomial(1)], [(16,)])
        with self.assertRaises(OperatorError):
            nontriviality_probe(P, base, [], probes)


    def test_nontriviality_cone_projection(self):
        window = TruncationWindow('Z2', 8)
        J = parse_arc('(1,0)..(1,1)')
        P = projection_from_region(Cone(J), window)
        L = laughlin_operator(window)
        probes = default_probes(window)
        self.assertEqual(probes, ((4, 0), (0, 4), (-4, 0), (0, -4)))

        bump = CircleFunction.cosine_bump(math.pi, 4)
        report = nontriviality_probe(P, L, [bump], probes)
        self.assertEqual(report.flags[bump.label], ['trivial-suspect'])
        self.assertLess(report.minima[bump.label]['P'], Tolerances().compact_floor)
        self.assertAlmostEqual(report.minima[bump.label]['P_perp'], 1 / 16)
        self.assertEqual([r['side'] for r in report.records], ['P', 'P_perp', 'P_perp', 'P_perp'])

        inside = CircleFunction.cosine_bump(math.pi / 8, 4)
        report = nontriviality_probe(P, L, [inside], probes)
        self.assertGreater(report.minima[inside.label]['P'], 0.5)

        runs = [nontriviality_probe(P, L, [CircleFunction.random(3, np.random.default_rng(11))], probes)
                for _ in range(2)]
        self.assertEqual(runs[0].to_json(), runs[1].to_json())


    def test_translation_invariance(self):
        self.assertAlmostEqual(translation_invariance_check(CircleFunction.monomial(3), self.window), 0.0)



### RUN
if __name__ == '__main__':
    unittest.main()
