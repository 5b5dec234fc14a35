import logging
import time
from itertools import islice

import numpy as np

from oplab.config import EXPERIMENTS, ConfigError, ExperimentConfig
from oplab.homotopy import StageError, Theorem1Pipeline, run_stage, save_path, theorem2_pipeline
from oplab.index import FredholmError, index_k_projection, index_sweep, projection_index
from oplab.lattice_geometry import Ball, enumerate_directions, parse_arc
from oplab.locality import locality_scan
from oplab.operator_core import (OperatorError, Projection, TruncationWindow, random_local_unitary,
                                 random_unitary, spectral_norm, unitarity_defect)
from oplab.report import RunManifest, emit_plots, ensure_dir, write_json
from oplab.surgery import (corrective_unitary, cross_cone_mixing, deletion_series, greedy_isometry,
                           localized_centers, random_admissible_pairs, series_bound, series_slack)

LOGGER = logging.getLogger(__name__)

# constants
DEFAULT_ARC_PAIRS = [('(1,0)..(1,1)', '(-1,1)..(-1,0)')]


def local_conjugate(P:Projection, rng:np.random.Generator, width:int=2) -> Projection:
    '''U P U* for a Haar unitary U on the sites |x| <= width of a Z window, identity elsewhere.'''
    window = P.window
    if window.representation != 'Z' or not 0 < width <= window.height:
        raise OperatorError(f'cannot conjugate on |x| <= {width} in {window}')
    idx = np.array([i for i, x in enumerate(window.sites) if abs(x[0]) <= width])
    u = np.eye(window.dimension, dtype=np.complex128)
    u[np.ix_(idx, idx)] = random_unitary(TruncationWindow('Z', width), rng).entries
    return Projection(window, u @ P.entries @ u.conj().T, 'Q', ('local_conjugate',), tol_idem=1e-9)


class Experiment():
    '''
    Class to run one configured experiment and write its reports under config.out_dir.

    params:
        config: validated ExperimentConfig.
    '''
    def __init__(self, config:ExperimentConfig) -> None:
        # constants
        self.METHODS = list(EXPERIMENTS)

        self.set_config(config)
        self.timings = {}
        self.files = []


    def __repr__(self) -> str:
        return f'Running {self.config.experiment} on {self.config.window()} into {self.config.out_dir}.'


    def set_config(self, config:ExperimentConfig) -> None:
        if not isinstance(config, ExperimentConfig) or config.experiment not in self.METHODS:
            raise ConfigError([f'not a runnable experiment configuration: {config!r}'])
        self.config = config


    def __timed(self, stage:str, fn, *args):
        start = time.perf_counter()
        result = run_stage(stage, fn, *args)
        self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - start
        return result


    def __unitary(self, rng:np.random.Generator):
        c = self.config
        return random_local_unitary(c.window(), rng, c.param('layers', 2), c.param('strength', 0.4),
                                    c.param('winding', 0))


    def __arc_pairs(self) -> tuple:
        if self.config.arc_pairs:
            return self.config.arc_pairs
        return tuple((parse_arc(I), parse_arc(J)) for I, J in DEFAULT_ARC_PAIRS)


    def __index_sweep(self, out) -> None:
        c = self.config
        window = c.window()
        ks = c.param('ks', list(range(-3, 4)))
        sweep = self.__timed('sweep', index_sweep, ks, window, c.tolerances)

        def complements():
            values = []
            for k in ks:
                base, P = index_k_projection(k, window, c.boundary)
                values.append(projection_index(P.complement(), base, c.tolerances).value)
            return values

        flipped = self.__timed('complement', complements)
        self.files.append(write_json({'sweep': sweep.to_json(), 'complement_values': flipped},
                                     out / 'index_sweep.json'))
        self.files += emit_plots(sweep, out, 'index_sweep')
        if not sweep.exact() or any(v != -k for k, v in zip(ks, flipped)):
            raise StageError('sweep', FredholmError(f'index sweep {list(sweep.values)} (complements {flipped}) '
                                                    f'does not reproduce {list(ks)}'))


    def __theorem1(self, out) -> None:
        c = self.config
        rng = c.rng()
        pipeline = Theorem1Pipeline(c.param('epsilon', 0.25), c.param('n_centers', 2), c.param('n_copies', 1),
                                    c.samples, c.arc_pairs, c.tolerances)
        for j in range(c.param('n_unitaries', 1)):
            U = self.__unitary(rng)
            start = time.perf_counter()
            path, report = pipeline.run(U)
            self.timings[f'pipeline[{j}]'] = time.perf_counter() - start
            run_dir = ensure_dir(out / f'theorem1-{j}')
            save_path(path, run_dir / 'path')
            self.files += sorted((run_dir / 'path').iterdir())
            doc = {
                'certificate': report.to_json(),
                'plan': pipeline.plan.to_json(),
                'mixing': {f'{I}|{J}': list(cross_cone_mixing(pipeline.plan, I, J)) for I, J in c.arc_pairs},
                'segments': path.kinds,
            }
            self.files.append(write_json(doc, run_dir / 'certificate.json'))
            self.files += emit_plots(report, run_dir, 'certificate')
            self.files += emit_plots(report.pre_polar, run_dir, 'pre_polar')


    def __theorem2(self, out) -> None:
        c = self.config
        rng = c.rng()
        window = c.window()
        base, P = index_k_projection(c.param('k', -1), window, c.boundary)
        Q = self.__timed('conjugate', local_conjugate, P, rng, c.param('width', 2))
        start = time.perf_counter()
        path, report = theorem2_pipeline(P, Q, base, c.tolerances, c.samples)
        self.timings['pipeline'] = time.perf_counter() - start
        save_path(path, out / 'path')
        self.files += sorted((out / 'path').iterdir())
        self.files.append(write_json({'certificate': report.to_json(), 'k': c.param('k', -1)},
                                     out / 'certificate.json'))
        self.files += emit_plots(report, out, 'certificate')


    def __surgery(self, out) -> None:
        c = self.config
        rng = c.rng()
        window = c.window()
        epsilon = c.param('epsilon', 0.5)

        A, pairs = self.__timed('pairs', random_admissible_pairs, window, c.param('n_pairs', 10), epsilon, rng)
        B = self.__timed('deletion', deletion_series, A, pairs, epsilon)
        distance = spectral_norm(A.entries - B.entries)
        deletion = {
            'pairs': len(pairs),
            'epsilon': epsilon,
            'distance': distance,
            'series_bound': series_bound(pairs),
            'slack': series_slack(A, B, pairs),
            'max_residual': max(spectral_norm(p.P.entries @ B.entries @ p.Q.entries) for p in pairs),
        }

        U = self.__unitary(rng)
        thetas = list(islice(enumerate_directions(), c.param('n_centers', 2)))
        arc_pairs = self.__arc_pairs()
        G, plan = self.__timed('centers', localized_centers, U, thetas, epsilon, arc_pairs)
        V = self.__timed('corrective', corrective_unitary, G, plan)
        idx = window.indices(plan.centers)
        corrected = (V @ G).entries[np.ix_(idx, idx)]
        norms = np.array([np.linalg.norm(G.column(x)) for x in plan.centers])
        centers = {
            'plan': plan.to_json(),
            'distance': spectral_norm(U.entries - G.entries),
            'corrective_unitarity_defect': unitarity_defect(V.entries),
            'corrective_diagonal_error': spectral_norm(corrected - np.diag(norms)),
            'mixing': {f'{I}|{J}': list(cross_cone_mixing(plan, I, J)) for I, J in arc_pairs},
        }

        matching = self.__timed('greedy', greedy_isometry, ~Ball(c.param('hole', 2)), c.param('n_copies', 1), window)
        T = matching.operator.entries
        greedy = {
            **matching.to_json(),
            'domain_projection_error': spectral_norm(T.conj().T @ T @ T.conj().T @ T - T.conj().T @ T),
        }
        self.files.append(write_json({'deletion': deletion, 'centers': centers, 'greedy': greedy},
                                     out / 'surgery.json'))


    def __locality_scan(self, out) -> None:
        c = self.config
        U = self.__unitary(c.rng())
        cutoffs = c.param('cutoffs', list(range(0, U.window.height + 1)))
        profiles = self.__timed('scan', locality_scan, U, self.__arc_pairs(), cutoffs)
        doc = []
        for i, profile in enumerate(profiles):
            self.files += emit_plots(profile, out, f'decay-{i}')
            doc.append({'label': profile.label, 'rows': profile.to_rows(),
                        'nonincreasing': profile.is_nonincreasing()})
        self.files.append(write_json({'profiles': doc}, out / 'locality_scan.json'))


    def run(self) -> RunManifest:
        '''
        Returns the RunManifest of the emitted files after running the configured experiment.
        '''
        out = ensure_dir(self.config.out_dir)
        LOGGER.info(f'running {self.config.experiment} into {out}')
        self.files, self.timings = [], {}
        if self.config.experiment == 'index-sweep':
            self.__index_sweep(out)
        elif self.config.experiment == 'theorem1':
            self.__theorem1(out)
        elif self.config.experiment == 'theorem2':
            self.__theorem2(out)
        elif self.config.experiment == 'surgery':
            self.__surgery(out)
        elif self.config.experiment == 'locality-scan':
            self.__locality_scan(out)
        manifest = RunManifest.collect(self.config.to_json(), out, self.files, self.timings)
        manifest.write(out)
        return manifest


def run(config:ExperimentConfig) -> RunManifest:
    return Experiment(config).run()
