import unittest
import hashlib
import tempfile
import numpy as np
from pathlib import Path
from PIL import Image

# add folder to path to make relative imports work
import sys,os
BASE = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, BASE)
from oplab.operator_core import AmplifiedWindow, Operator, TruncationWindow, crandn
from oplab.opmat import (MAGIC, DimensionMismatchError, MalformedHeaderError, OpmatError, TruncatedPayloadError,
                         decode_operator, encode_operator, export_heatmap, export_operator, header_of,
                         import_operator)

class TestOpmat(unittest.TestCase):

    def setUp(self):
        self.window = TruncationWindow('Z', 2)
        rng = np.random.default_rng(7)
        self.A = Operator(self.window, crandn((5, 5), rng), 'A', ('random',))

    def test_header(self):
        header = header_of(self.A)
        self.assertEqual(header['format'], 'opmat')
        self.assertEqual(header['version'], 1)
        self.assertEqual(header['dimension'], 5)
        self.assertEqual(header['basis_order'], 'radius-angle-lex')
        self.assertTrue(encode_operator(self.A).startswith(MAGIC))

    def test_identity_is_exact(self):
        I = Operator.identity(TruncationWindow('Z2', 3))
        for encoding in ['binary', 'base64']:
            B = decode_operator(encode_operator(I, encoding))
            np.testing.assert_array_equal(B.entries, I.entries)
            self.assertEqual(B.window, I.window)

    def test_random_operator_is_bit_exact(self):
        data = encode_operator(self.A)
        B = decode_operator(data)
        self.assertEqual(B.entries.tobytes(), self.A.entries.tobytes())
        self.assertEqual(B.name, 'A')
        self.assertEqual(B.lineage, ('random',))
        self.assertEqual(hashlib.sha256(encode_operator(B)).hexdigest(), hashlib.sha256(data).hexdigest())

    def test_amplified_window(self):
        window = AmplifiedWindow(self.window, 2)
        A = Operator.identity(window)
        B = decode_operator(encode_operator(A, 'base64'))
        self.assertEqual(B.window, window)

    def test_errors(self):
        data = encode_operator(self.A)
        with self.assertRaises(MalformedHeaderError):
            decode_operator(b'XPMAT1\n' + data[len(MAGIC):])
        with self.assertRaises(MalformedHeaderError):
            decode_operator(MAGIC + b'{"format": "opmat"\n')
        with self.assertRaises(TruncatedPayloadError):
            decode_operator(data[:-16])
        with self.assertRaises(DimensionMismatchError):
            decode_operator(data + bytes(16))
        with self.assertRaises(DimensionMismatchError):
            decode_operator(data.replace(b'"dimension": 5', b'"dimension": 6'))
        with self.assertRaises(OpmatError):
            encode_operator(self.A, 'hex')
        # distinct failures stay distinguishable
        self.assertFalse(issubclass(TruncatedPayloadError, MalformedHeaderError))

    def test_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = export_operator(self.A, Path(tmp) / 'a.opmat')
            B = import_operator(path)
            np.testing.assert_array_equal(B.entries, self.A.entries)

            png = export_heatmap(self.A, Path(tmp) / 'a.png')
            img = np.array(Image.open(png))
            self.assertEqual(img.shape, (5, 5))
            self.assertEqual(img.max(), 255)

            with self.assertRaises(OpmatError):
                import_operator(Path(tmp) / 'missing.opmat')


### RUN
if __name__ == '__main__':
    unittest.main()
