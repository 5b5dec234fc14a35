import base64
import json
import logging
from fractions import Fraction
from pathlib import Path

import numpy as np

from PIL import Image

from oplab.operator_core import Operator, make_window

LOGGER = logging.getLogger(__name__)

# constants
MAGIC = b'OPMAT1\n'
FORMAT = 'opmat'
VERSION = 1
BASIS_ORDER = 'radius-angle-lex'
ENCODINGS = ['binary', 'base64']
DTYPE = np.dtype('<c16')


class OpmatError(ValueError):
    pass


class MalformedHeaderError(OpmatError):
    pass


class DimensionMismatchError(OpmatError):
    pass


class TruncatedPayloadError(OpmatError):
    pass


def header_of(A:Operator, encoding:str='binary') -> dict:
    window = A.window
    return {
        'format': FORMAT,
        'version': VERSION,
        'representation': window.representation,
        'radius': str(window.radius),
        'copies': window.copies,
        'basis_order': BASIS_ORDER,
        'name': A.name,
        'lineage': list(A.lineage),
        'dimension': window.dimension,
        'encoding': encoding,
    }


def encode_operator(A:Operator, encoding:str='binary') -> bytes:
    '''
    Magic line, one sorted JSON header line, then the row-major little-endian
    complex128 payload (interleaved re, im float64).
    '''
    if encoding not in ENCODINGS:
        raise OpmatError(f'unknown encoding {encoding!r}')
    header = json.dumps(header_of(A, encoding), sort_keys=True).encode('utf-8') + b'\n'
    payload = np.ascontiguousarray(A.entries, dtype=DTYPE).tobytes()
    if encoding == 'base64':
        payload = base64.b64encode(payload) + b'\n'
    return MAGIC + header + payload


def _read_header(data:bytes) -> tuple[dict, bytes]:
    if not data.startswith(MAGIC):
        raise MalformedHeaderError('malformed header: missing opmat magic')
    end = data.find(b'\n', len(MAGIC))
    if end < 0:
        raise MalformedHeaderError('malformed header: unterminated header line')
    try:
        header = json.loads(data[len(MAGIC):end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedHeaderError(f'malformed header: {e}') from e
    if not isinstance(header, dict) or header.get('format') != FORMAT or header.get('version') != VERSION:
        raise MalformedHeaderError('malformed header: not an opmat v1 document')
    for key in ['representation', 'radius', 'dimension', 'encoding']:
        if key not in header:
            raise MalformedHeaderError(f'malformed header: missing {key!r}')
    if header['encoding'] not in ENCODINGS:
        raise MalformedHeaderError(f'malformed header: unknown encoding {header["encoding"]!r}')
    if header.get('basis_order', BASIS_ORDER) != BASIS_ORDER:
        raise MalformedHeaderError(f'malformed header: unsupported basis order {header["basis_order"]!r}')
    return header, data[end + 1:]


def decode_operator(data:bytes) -> Operator:
    header, payload = _read_header(data)
    try:
        window = make_window(header['representation'], Fraction(header['radius']), int(header.get('copies', 1)))
    except (ValueError, ZeroDivisionError) as e:
        raise MalformedHeaderError(f'malformed header: {e}') from e
    d = window.dimension
    if int(header['dimension']) != d:
        raise DimensionMismatchError(f'dimension mismatch: header says {header["dimension"]}, '
                                     f'window {window} has {d} sites')
    if header['encoding'] == 'base64':
        try:
            payload = base64.b64decode(payload.strip(), validate=True)
        except ValueError as e:
            raise TruncatedPayloadError(f'truncated payload: {e}') from e
    expected = d * d * DTYPE.itemsize
    if len(payload) < expected:
        raise TruncatedPayloadError(f'truncated payload: {len(payload)} of {expected} bytes')
    if len(payload) > expected:
        raise DimensionMismatchError(f'dimension mismatch: {len(payload) - expected} bytes beyond a {d}x{d} payload')
    entries = np.frombuffer(payload, dtype=DTYPE).reshape(d, d)
    return Operator(window, entries, header.get('name', ''), header.get('lineage', ()))


def export_operator(A:Operator, path, encoding:str='binary') -> Path:
    path = Path(path)
    path.write_bytes(encode_operator(A, encoding))
    LOGGER.debug(f'wrote {A.name or "operator"} to {path}')
    return path


def import_operator(path) -> Operator:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise OpmatError(f'cannot read {path}: {e.strerror}') from e
    return decode_operator(data)


def export_heatmap(A:Operator, path) -> Path:
    '''Greyscale PNG of |entries|, brightest at the largest modulus.'''
    modulus = np.abs(A.entries)
    peak = modulus.max() if modulus.size else 0.0
    scaled = modulus / peak if peak > 0 else modulus
    img = Image.fromarray(np.uint8(np.round(255 * scaled)))
    path = Path(path)
    img.save(path)
    return path
