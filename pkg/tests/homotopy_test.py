import unittest
import json
import tempfile
import numpy as np
from pathlib import Path

# add folder to path to make relative imports work
import sys,os
BASE = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, BASE)
from oplab.experiments import local_conjugate
from oplab.homotopy import (MANIFEST, HomotopyError, PathCertifier, PathDiscontinuityError, StageError,
                            Theorem1Pipeline, block_peel, block_unitary_homotopy, certify_path, conjugation_path, load_path, log_path,
                            polar_path, run_stage, save_path, straight_line, theorem1_pipeline,
                            theorem2_pipeline, unitary_equivalence)
from oplab.index import index_k_projection
from oplab.lattice_geometry import Explicit
from oplab.surgery import greedy_isometry
from oplab.operator_core import (NotUnitaryError, Operator, SingularOperatorError, TruncationWindow, amplify, crandn,
                                 diagonal_projection, random_local_unitary, random_unitary, shift_operator,
                                 spectral_norm, unitarity_defect)

class TestHomotopy(unittest.TestCase):

    def setUp(self):
        self.window = TruncationWindow('Z', 2)
        self.rng = np.random.default_rng(9)


    def test_straight_line(self):
        I = Operator.identity(self.window)
        R = shift_operator(self.window, 1, 'periodic')
        path = straight_line(I, R)
        self.assertEqual(path.kinds, ['straight_line'])
        np.testing.assert_allclose(path.sample_matrix(0.5), (I.entries + R.entries) / 2)
        np.testing.assert_allclose(path.reversed().start, R.entries)
        self.assertEqual(path.locate(1.0), (0, 1.0))

        joined = path + straight_line(R, I)
        self.assertEqual(joined.locate(0.75), (1, 0.5))
        np.testing.assert_allclose(joined.end, I.entries)
        with self.assertRaises(PathDiscontinuityError):
            path + straight_line(I, R)
        with self.assertRaises(HomotopyError):
            path.locate(1.5)


    def test_polar_path(self):
        G = Operator(self.window, np.eye(5) + 0.3 * crandn((5, 5), self.rng), 'G')
        path = polar_path(G)
        np.testing.assert_allclose(path.start, G.entries, atol=1e-12)
        self.assertLess(unitarity_defect(path.end), 1e-12)
        report = certify_path(path, samples=5)
        self.assertGreater(report.min_singular_value, 0)
        with self.assertRaises(SingularOperatorError):
            polar_path(Operator.zero(self.window))


    def test_block_peel(self):
        P = diagonal_projection([(0,), (1,)], self.window, 'P')
        p = P.entries
        perp = np.eye(5) - p
        m = p + p @ crandn((5, 5), self.rng) @ perp + perp @ (np.eye(5) + 0.2 * crandn((5, 5), self.rng)) @ perp
        M = Operator(self.window, m, 'M')
        (F1, F2), path = block_peel(M, P)
        np.testing.assert_allclose((F1 @ F2).entries, m, atol=1e-12)
        np.testing.assert_allclose(path.start, F1.entries)
        np.testing.assert_allclose(path.end, m)

        with self.assertRaises(HomotopyError):
            block_peel(Operator(self.window, m + perp @ np.ones((5, 5)) @ p), P)


    def test_log_path(self):
        U = random_unitary(self.window, self.rng)
        path = log_path(U)
        np.testing.assert_allclose(path.sample_matrix(0.0), U.entries, atol=1e-10)
        np.testing.assert_allclose(path.sample_matrix(1.0), np.eye(5), atol=1e-12)
        self.assertLess(certify_path(path, samples=7).max_unitarity_defect, 1e-10)

        local = np.eye(5, dtype=np.complex128)
        c, s = np.cos(0.7), np.sin(0.7)
        local[np.ix_([0, 1], [0, 1])] = [[c, -s], [s, c]]
        path = log_path(Operator(self.window, local), [[0, 1]])
        self.assertEqual(path.sample_matrix(0.3)[4, 4], 1)

        with self.assertRaises(HomotopyError):
            log_path(Operator(self.window, local), [[2, 3]])
        with self.assertRaises(HomotopyError):
            log_path(Operator(self.window, local), [[0, 1], [1, 2]])
        with self.assertRaises(NotUnitaryError):
            log_path(2 * U)


    def test_unitary_equivalence(self):
        window = TruncationWindow('Z', 8)
        _, P = index_k_projection(1, window)
        Q = local_conjugate(P, self.rng)
        U = unitary_equivalence(P, Q)
        self.assertLess(unitarity_defect(U.entries), 1e-10)
        self.assertLess(spectral_norm(U.entries.conj().T @ Q.entries @ U.entries - P.entries), 1e-8)

        # disjoint ranges leave a kernel in QP + Q'P'
        P = diagonal_projection([(1,)], self.window)
        Q = diagonal_projection([(2,)], self.window)
        U = unitary_equivalence(P, Q)
        self.assertLess(spectral_norm(U.entries.conj().T @ Q.entries @ U.entries - P.entries), 1e-8)
        with self.assertRaises(HomotopyError):
            unitary_equivalence(P, diagonal_projection([(1,), (2,)], self.window))


    def test_conjugation_path(self):
        U = random_unitary(self.window, self.rng)
        Q = diagonal_projection([(0,), (1,)], self.window, 'Q')
        path = conjugation_path(Q, log_path(U).reversed())
        self.assertTrue(path.projection)
        np.testing.assert_allclose(path.end, U.entries.conj().T @ Q.entries @ U.entries, atol=1e-10)
        report = certify_path(path, samples=5)
        self.assertLess(report.max_idempotency_defect, 1e-10)
        self.assertLess(report.max_unitarity_defect, 1e-10)
        with self.assertRaises(HomotopyError):
            conjugation_path(Q, log_path(U))


    def __block_setup(self, n):
        window = TruncationWindow('Z2', 3)
        d = window.dimension
        inside = [x for x in window.sites if x[1] > 0]
        P = diagonal_projection(inside, window, 'P')
        perp = np.eye(d) - P.entries
        out = [window.index[x] for x in window.sites if x not in inside]
        q, _ = np.linalg.qr(crandn((len(out), len(out)), self.rng))
        u = np.eye(d, dtype=np.complex128)
        u[np.ix_(out, out)] = q
        U = Operator(window, u, 'U')
        matching = greedy_isometry(Explicit(frozenset(inside)), n, window, check_premise=False)
        v = matching.operator.entries.copy()
        v[:d, :d] += perp
        return U, P, Operator(matching.window, v, 'V'), matching


    def test_block_unitary_homotopy(self):
        for n in (1, 2):
            U, P, V, _ = self.__block_setup(n)
            d = U.dimension
            path = block_unitary_homotopy(U, P, V, log_path(amplify(U, n)).reversed())
            self.assertEqual(path.kinds, ['block_unitary'])
            self.assertEqual(path.segments[0].inner.window.dimension, (n + 1) * d)
            np.testing.assert_allclose(path.sample_matrix(0.0), np.eye(d), atol=1e-8)
            np.testing.assert_allclose(path.sample_matrix(1.0), U.entries, atol=1e-8)
            defects = [unitarity_defect(path.sample_matrix(t)) for t in np.linspace(0, 1, 50)]
            self.assertLess(max(defects), 1e-9)


    def test_block_unitary_preconditions(self):
        U, P, V, matching = self.__block_setup(1)
        d = U.dimension
        v = V.entries
        inner = log_path(amplify(U, 1)).reversed()
        y, x = matching.matches[0]
        col = matching.window.index[y]
        free = [j for j in range(d, v.shape[1]) if not v[:, j].any()][0]
        s = U.window.index[[z for z in U.window.sites if z[1] <= 0][0]]

        def broken(label, **kw):
            args = {'U': U, 'P': P, 'V_iso': V, 'inner': inner, **kw}
            with self.assertRaises(HomotopyError) as ctx:
                block_unitary_homotopy(args['U'], args['P'], args['V_iso'], args['inner'])
            self.assertIn(label, str(ctx.exception))

        other = random_unitary(U.window, self.rng)
        broken('U = P + P\'UP\'', U=other, inner=log_path(amplify(other, 1)).reversed())
        v2 = v.copy()
        v2[d, free] = 1
        broken('range of V in the first copy', V_iso=Operator(V.window, v2))
        v2 = v.copy()
        v2[:, s] *= -1
        broken('V = 1 on P\'', V_iso=Operator(V.window, v2))
        v2 = v.copy()
        v2[:, col] = 0
        v2[s, col] = 1
        broken('P\'T = 0', V_iso=Operator(V.window, v2))
        v2 = v.copy()
        v2[:, free] = v[:, col]
        broken('V partial isometry', V_iso=Operator(V.window, v2))
        broken('W_0 = 1', inner=log_path(amplify(U, 1)))
        I = Operator.identity(V.window)
        broken('W_1 = U (+) 1', inner=straight_line(I, I))
        broken('W_t on the window of V', inner=log_path(U).reversed())


    def test_theorem1_block_unitary_stage(self):
        window = TruncationWindow('Z2', 10)
        U = random_local_unitary(window, np.random.default_rng(2), layers=2, strength=0.4)
        closings = []
        for n in (1, 2):
            pipeline = Theorem1Pipeline(epsilon=0.25, n_centers=2, n_copies=n, samples=3)
            pipeline.run(U)
            closing = pipeline.invertible.segments[-1].segment
            self.assertEqual(closing.KIND, 'block_unitary')
            self.assertEqual(closing.v_iso.window.copies, n + 1)
            self.assertEqual(closing.inner.window.dimension, (n + 1) * window.dimension)
            np.testing.assert_allclose(closing.sample(0.0), np.eye(window.dimension), atol=1e-8)
            self.assertLess(unitarity_defect(closing.sample(0.5)), 1e-8)
            closings.append(closing)
        # W (+) 1_n commutes with V*V and T lands where W is the identity, so Z_t only sees W
        W = Operator(window, closings[0].sample(1.0), 'W')
        for closing in closings:
            np.testing.assert_allclose(closing.sample(0.5), log_path(W).reversed().sample_matrix(0.5), atol=1e-6)


    def test_certifier_setter(self):
        c = PathCertifier()
        self.assertEqual(c.samples, 100)
        with self.assertLogs('oplab.homotopy', level='WARNING') as cm:
            c.set_samples(1)
            c.set_allowance(-1)
        self.assertEqual(c.samples, 100)
        self.assertEqual(c.allowance, 3)
        self.assertIn('Invalid sample count entered.', cm.output[0])


    def test_certificate_report(self):
        I = Operator.identity(self.window)
        report = certify_path(straight_line(I, I), samples=3)
        self.assertEqual(report.ts, (0.0, 0.5, 1.0))
        self.assertLess(report.max_unitarity_defect, 1e-12)
        self.assertEqual(report.endpoint_errors, (0.0, 0.0))
        self.assertEqual(report.to_rows()[0], ('t', *report.METRICS, 'index', 'nontriviality'))
        np.testing.assert_allclose(report.series('min_singular_value'), [1.0, 1.0, 1.0])
        self.assertEqual(report.to_json()['segments'][0]['kind'], 'straight_line')


    def test_run_stage(self):
        with self.assertRaises(StageError) as ctx:
            run_stage('demo', int, 'x')
        self.assertEqual(ctx.exception.stage, 'demo')
        self.assertIsInstance(ctx.exception.cause, ValueError)


    def test_theorem1_identity(self):
        I = Operator.identity(TruncationWindow('Z2', 4))
        path, report = theorem1_pipeline(I, samples=3)
        self.assertLess(report.max_unitarity_defect, 1e-10)
        self.assertLess(max(report.endpoint_errors), 1e-10)
        self.assertEqual(path.kinds[0], 'unitarized')


    def test_theorem1_local_unitary(self):
        window = TruncationWindow('Z2', 10)
        U = random_local_unitary(window, np.random.default_rng(2), layers=2, strength=0.4)
        pipeline = Theorem1Pipeline(epsilon=0.25, n_centers=2, n_copies=1, samples=4)
        path, report = pipeline.run(U)
        self.assertLess(report.max_unitarity_defect, 1e-8)
        self.assertLess(max(report.endpoint_errors), 1e-8)
        self.assertGreater(report.pre_polar.min_singular_value, 0)
        self.assertEqual(len(pipeline.plan.centers), 2)
        self.assertEqual(len(path.segments), 6)


    def test_theorem1_rejects(self):
        with self.assertRaises(StageError) as ctx:
            theorem1_pipeline(Operator.identity(TruncationWindow('Z', 4)))
        self.assertEqual(ctx.exception.stage, 'check')
        with self.assertRaises(StageError):
            theorem1_pipeline(2 * Operator.identity(TruncationWindow('Z2', 4)))


    def test_theorem2(self):
        window = TruncationWindow('Z', 16)
        base, P = index_k_projection(-1, window)
        Q = local_conjugate(P, self.rng)
        path, report = theorem2_pipeline(P, Q, base, samples=5)
        self.assertEqual(report.index_trace, (-1,) * 5)
        self.assertLess(max(report.endpoint_errors), 1e-8)
        self.assertLess(report.max_idempotency_defect, 1e-8)
        self.assertTrue(all(m is not None and m > 0.5 for m in report.nontriviality_minima))

        with self.assertRaises(StageError) as ctx:
            theorem2_pipeline(P, P.complement(), base, samples=3)
        self.assertEqual(ctx.exception.stage, 'index')


    def test_save_and_load(self):
        U = random_unitary(self.window, self.rng)
        Q = diagonal_projection([(0,)], self.window, 'Q')
        path = conjugation_path(Q, log_path(U).reversed())
        with tempfile.TemporaryDirectory() as tmp:
            manifest = save_path(path, Path(tmp) / 'path')
            doc = json.loads(manifest.read_text())
            self.assertEqual(manifest.name, MANIFEST)
            self.assertEqual(doc['segments'][0]['kind'], 'conjugation')

            loaded = load_path(Path(tmp) / 'path')
            self.assertTrue(loaded.projection)
            self.assertEqual(loaded.kinds, path.kinds)
            np.testing.assert_allclose(loaded.sample_matrix(0.4), path.sample_matrix(0.4), atol=1e-12)

            manifest.write_text(json.dumps({**doc, 'version': 99}))
            with self.assertRaises(HomotopyError):
                load_path(Path(tmp) / 'path')
            with self.assertRaises(HomotopyError):
                load_path(Path(tmp) / 'missing')



### RUN
if __name__ == '__main__':
    unittest.main()
