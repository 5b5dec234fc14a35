import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from oplab import __version__
from oplab.homotopy import PATH_FORMAT, PATH_VERSION, CertificateReport
from oplab.index import IndexSweep
from oplab.locality import DecayProfile
from oplab.opmat import FORMAT as OPMAT_FORMAT, VERSION as OPMAT_VERSION

LOGGER = logging.getLogger(__name__)

# constants
REPORT_VERSION = 1
MANIFEST = 'manifest.json'
# fixed svg ids and text glyphs keep plots byte-identical across runs
SVG_RC = {'svg.hashsalt': 'oplab', 'svg.fonttype': 'none'}


class ReportError(OSError):
    pass


def ensure_dir(out_dir) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f'cannot create output directory {out_dir}: {e.strerror}') from e
    return out_dir


def write_json(doc, path) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + '\n')
    return path


def write_csv(rows:Sequence[Sequence], path) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, 'w', newline='') as f:
        csv.writer(f).writerows(rows)
    return path


def read_csv(path) -> list[list[str]]:
    with open(path, newline='') as f:
        return list(csv.reader(f))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _save_svg(fig, path:Path) -> Path:
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


def _line_plot(xs, ys, xlabel:str, ylabel:str, title:str, path:Path) -> Path:
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(xs, ys, marker='.', linewidth=1)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(alpha=0.3)
        return _save_svg(fig, path)


def _bar_plot(xs, ys, xlabel:str, ylabel:str, title:str, path:Path) -> Path:
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar([str(x) for x in xs], ys)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        return _save_svg(fig, path)


def emit_plots(report, out_dir, name:str) -> list[Path]:
    '''
    Companion CSV plus SVG plots of a certificate (one per metric against t), a decay profile
    (norm against radius) or an index sweep (bar chart of the index against k).
    Empty data gives a header-only CSV and no plot.
    '''
    out_dir = ensure_dir(out_dir)
    files = []
    if isinstance(report, CertificateReport):
        files.append(write_csv(report.to_rows(), out_dir / f'{name}.csv'))
        for metric in CertificateReport.METRICS:
            files.append(_line_plot(report.ts, report.series(metric), 't', metric, f'{name}: {metric}',
                                    out_dir / f'{name}-{metric}.svg'))
    elif isinstance(report, DecayProfile):
        files.append(write_csv([('radius', 'norm')] + report.to_rows(), out_dir / f'{name}.csv'))
        if report.radii:
            files.append(_line_plot([float(r) for r in report.radii], report.values, 'cutoff radius',
                                    'norm outside the ball', report.label, out_dir / f'{name}.svg'))
    elif isinstance(report, IndexSweep):
        files.append(write_csv(report.to_rows(), out_dir / f'{name}.csv'))
        if report.ks:
            files.append(_bar_plot(report.ks, report.values, 'k', 'computed index',
                                   f'index sweep at radius {report.radius}', out_dir / f'{name}.svg'))
    else:
        raise TypeError(f'no plots for {type(report).__name__}')
    LOGGER.debug(f'emitted {[f.name for f in files]}')
    return files


@dataclass(frozen=True)
class RunManifest:
    '''
    Configuration snapshot, format versions and the sha256 of every emitted file.
    Stage timings are kept for logging only and never written.
    '''
    config: dict
    files: tuple
    versions: dict = field(default_factory=lambda: {
        'oplab': __version__,
        'report': REPORT_VERSION,
        OPMAT_FORMAT: OPMAT_VERSION,
        PATH_FORMAT: PATH_VERSION,
    })
    timings: dict = field(default_factory=dict, compare=False)

    @classmethod
    def collect(cls, config:dict, out_dir, files:Sequence, timings:dict|None=None) -> 'RunManifest':
        out_dir = Path(out_dir)
        entries = sorted((Path(f).relative_to(out_dir).as_posix(), file_sha256(f)) for f in files)
        return cls(config, tuple(entries), timings=dict(timings or {}))

    def to_json(self) -> dict:
        return {
            'config': self.config,
            'versions': self.versions,
            'files': [{'path': p, 'sha256': h} for p, h in self.files],
        }

    def write(self, out_dir) -> Path:
        path = write_json(self.to_json(), Path(out_dir) / MANIFEST)
        for stage, seconds in self.timings.items():
            LOGGER.info(f'stage {stage}: {seconds:.2f}s')
        return path
