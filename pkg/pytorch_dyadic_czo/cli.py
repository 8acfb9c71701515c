import argparse
import csv
import dataclasses
import datetime
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from dataclasses import field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy
import torch

import pytorch_dyadic_czo
from pytorch_dyadic_czo.config import ExperimentConfig
from pytorch_dyadic_czo.config import as_record
from pytorch_dyadic_czo.config import config_hash
from pytorch_dyadic_czo.config import load_config
from pytorch_dyadic_czo.config import merge
from pytorch_dyadic_czo.estimation import DUALITY_ENVELOPE
from pytorch_dyadic_czo.estimation import duality_check
from pytorch_dyadic_czo.estimation import haar_multiplier_envelope
from pytorch_dyadic_czo.estimation import haar_multiplier_family
from pytorch_dyadic_czo.estimation import hardy_mapping_suite
from pytorch_dyadic_czo.estimation import linearity_probe
from pytorch_dyadic_czo.estimation import martingale_envelope
from pytorch_dyadic_czo.estimation import martingale_family
from pytorch_dyadic_czo.estimation import op_norm
from pytorch_dyadic_czo.estimation import paraproduct_envelope
from pytorch_dyadic_czo.estimation import paraproduct_growth
from pytorch_dyadic_czo.estimation import ratio_suite
from pytorch_dyadic_czo.field import cond_expect
from pytorch_dyadic_czo.field import haar_analyze
from pytorch_dyadic_czo.field import haar_synthesize
from pytorch_dyadic_czo.field import l2_norm
from pytorch_dyadic_czo.field import pairing
from pytorch_dyadic_czo.grid import DyadicCube
from pytorch_dyadic_czo.grid import GoodBadParams
from pytorch_dyadic_czo.grid import compatibility_audit
from pytorch_dyadic_czo.grid import compatibility_partition
from pytorch_dyadic_czo.grid import estimate_pi_good
from pytorch_dyadic_czo.grid import exact_pi_good
from pytorch_dyadic_czo.grid import is_bad
from pytorch_dyadic_czo.grid import level_constant
from pytorch_dyadic_czo.grid import verify_good_decoupling
from pytorch_dyadic_czo.grid import window_indicator
from pytorch_dyadic_czo.kernels import SampledFunction
from pytorch_dyadic_czo.kernels import decay_fit
from pytorch_dyadic_czo.kernels import haar_coeff_closed_form
from pytorch_dyadic_czo.kernels import haar_coeff_kernel
from pytorch_dyadic_czo.kernels import hilbert_kernel
from pytorch_dyadic_czo.kernels import hilbert_transform
from pytorch_dyadic_czo.kernels import shift_average_hilbert
from pytorch_dyadic_czo.kernels import wbp_audit
from pytorch_dyadic_czo.norms import hardy_col_norm
from pytorch_dyadic_czo.norms import lp_norm
from pytorch_dyadic_czo.operators import MartingaleTransform
from pytorch_dyadic_czo.operators import commutator
from pytorch_dyadic_czo.operators import commutator_audit
from pytorch_dyadic_czo.operators import haar_multiplier
from pytorch_dyadic_czo.operators import summation_identity
from pytorch_dyadic_czo.samplers import random_adapted_sequence
from pytorch_dyadic_czo.samplers import random_banded_tensor
from pytorch_dyadic_czo.samplers import random_field
from pytorch_dyadic_czo.samplers import random_perfect_czo
from pytorch_dyadic_czo.samplers import random_shift
from pytorch_dyadic_czo.tensor import HaarTensorOperator
from pytorch_dyadic_czo.tensor import figiel_terms
from pytorch_dyadic_czo.utils import ConfigInvalid
from pytorch_dyadic_czo.utils import DyadicError
from pytorch_dyadic_czo.utils import substream
from pytorch_dyadic_czo.utils import torch_generator

logger = logging.getLogger(__name__)

INEQUALITY_SLACK = 1e-8
POWER_DENSE_AGREEMENT = 1e-6
DECAY_EXPONENT_RANGE = (-2.3, -1.7)
DECAY_MIN_R_SQUARED = 0.98
CLOSED_FORM_TOLERANCE = 1e-8
SHIFT_AVERAGE_TOLERANCE = 0.10
DECOUPLING_R = 4
DECOUPLING_K_MAX = 6
DECOUPLING_SIGMAS = 3.0
PARTITION_TRANSLATIONS = (0, 1, 5, 33)
PARTITION_CUBE_BITS = 12
COMPATIBILITY_PAIRS = 1000


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool


@dataclass
class RunRecord:
    """Outcome of one subcommand; deterministic fields depend only on the config hash."""
    experiment: str
    config_hash: str
    config: Dict[str, Any]
    checks: List[Check] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    wall_clock: float = 0.0
    timestamp: str = ""
    versions: Dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def check(self, name: str, measured: float, tolerance: float, passed: Optional[bool] = None) -> Check:
        if passed is None:
            passed = measured <= tolerance
        result = Check(name, float(measured), float(tolerance), bool(passed))
        self.checks.append(result)
        logger.info("%-28s %-4s measured %.3e tolerance %.3e", name, "ok" if passed else "FAIL", measured, tolerance)
        return result


def versions() -> Dict[str, str]:
    return {"pytorch_dyadic_czo": pytorch_dyadic_czo.__version__, "torch": torch.__version__,
            "numpy": np.__version__, "scipy": scipy.__version__}


def child_seed(seed: int, name: str) -> int:
    return int(substream(seed, name).generate_state(1, dtype=np.uint64)[0])


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return "{:.6e}".format(value)
    return str(value)


def write_outputs(record: RunRecord, columns: Sequence[str], rows: Sequence[Sequence[Any]], out: str) -> None:
    """``<out>/<experiment>.csv`` (commented header, then a header row) and ``<out>/<experiment>.json``."""
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, record.experiment)
    with open(stem + ".csv", "w", encoding="utf-8", newline="") as handle:
        handle.write("# config_hash={}\n".format(record.config_hash))
        handle.write("# version={}\n".format(pytorch_dyadic_czo.__version__))
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(value) for value in row])
    with open(stem + ".json", "w", encoding="utf-8") as handle:
        json.dump(dataclasses.asdict(record), handle, indent=2, sort_keys=True, default=str)


def _new_record(config: ExperimentConfig) -> RunRecord:
    return RunRecord(config.experiment, config_hash(config), as_record(config), versions=versions())


def _finish(record: RunRecord, started: float, columns, rows, config: ExperimentConfig) -> RunRecord:
    record.wall_clock = time.perf_counter() - started
    record.timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    write_outputs(record, columns, rows, config.out)
    return record


def _check_rows(record: RunRecord) -> List[List[Any]]:
    return [[c.name, c.measured, c.tolerance, c.passed] for c in record.checks]


CHECK_COLUMNS = ("check", "measured", "tolerance", "passed")


def cmd_verify(config: ExperimentConfig) -> RunRecord:
    """Exact identities at the configured sizes; each check records its worst instance."""
    started = time.perf_counter()
    record = _new_record(config)
    generator = torch_generator(substream(config.seed, "symbols"))
    n, L, d, tol = config.n, config.L, config.d, config.tolerance

    round_trip, parseval = 0.0, 0.0
    for _ in range(config.trials):
        f = random_field(n, L, d, generator)
        coefficients = haar_analyze(f)
        round_trip = max(round_trip, (haar_synthesize(coefficients) - f).max_abs())
        energy = l2_norm(f) ** 2
        parseval = max(parseval, abs(float((coefficients.flat().abs() ** 2).sum()) - energy) / energy)
    record.check("haar_round_trip", round_trip, tol)
    record.check("parseval", parseval, tol)

    lemma, adjoint = 0.0, 0.0
    for _ in range(config.trials):
        T = random_perfect_czo(n, L, d, generator)
        f, g = random_field(n, L, d, generator), random_field(n, L, d, generator)
        terms = T.lemma_terms(f, g)
        parts = terms.martingale + terms.adjoint_paraproduct + terms.paraproduct
        scale = max(1.0, abs(terms.martingale) + abs(terms.adjoint_paraproduct) + abs(terms.paraproduct))
        lemma = max(lemma, abs(terms.total - parts) / scale)
        adjoint = max(adjoint, abs(pairing(g, T(f)) - pairing(T.H(g), f)) / max(1.0, abs(terms.total)))
    record.check("perfect_representation", lemma, tol)
    record.check("perfect_adjoint", adjoint, tol)

    if n == 1:
        decomposition = 0.0
        for _ in range(config.trials):
            T = random_perfect_czo(n, L, d, generator, symmetric=True)
            f = random_field(n, L, d, generator)
            image = T(f)
            split = MartingaleTransform(T.symbol())(f) + haar_multiplier(T.t1(), f)
            decomposition = max(decomposition, (image - split).max_abs() / max(1.0, image.max_abs()))
        record.check("symmetric_decomposition", decomposition, tol)

    summation = 0.0
    for trial in range(config.trials):
        f, g = random_field(n, L, d, generator), random_field(n, L, d, generator)
        lhs, rhs, _ = summation_identity(f, g, 1 + trial % L)
        summation = max(summation, (lhs - rhs).max_abs() / max(1.0, lhs.max_abs()))
    record.check("summation_identity", summation, tol)

    excess, unitary_gap = -math.inf, 0.0
    for _ in range(config.trials):
        f = random_field(n, L, d, generator)
        transform = MartingaleTransform(random_adapted_sequence(n, L, d, generator))
        excess = max(excess, l2_norm(transform(f)) - transform.sup_norm() * l2_norm(f - cond_expect(f, 0)))
        isometry = MartingaleTransform(random_adapted_sequence(n, L, d, generator, unitary=True))
        unitary_gap = max(unitary_gap, abs(l2_norm(isometry(f)) - l2_norm(f - cond_expect(f, 0))))
    record.check("martingale_bound", excess, INEQUALITY_SLACK)
    record.check("martingale_unitary_equality", unitary_gap, tol)

    audit_error = 0.0
    for _ in range(config.trials):
        S = random_shift(n, L, d, generator)
        b, f = random_field(n, L, d, generator), random_field(n, L, d, generator)
        audit = commutator_audit(S, b, f)
        audit_error = max(audit_error, audit.error / max(1.0, commutator(S, b, f).max_abs()))
    record.check("commutator_formula", audit_error, tol)

    figiel, perfect_offdiagonal = 0.0, 0.0
    for _ in range(max(1, config.trials // 2)):
        T = random_banded_tensor(n, L, d, config.band, generator)
        f, g = random_field(n, L, d, generator), random_field(n, L, d, generator)
        terms = figiel_terms(T, f, g)
        exact = pairing(g, T(f))
        figiel = max(figiel, abs(terms.total() - exact) / max(1.0, abs(exact)))
    for _ in range(max(1, config.trials // 10)):
        P = random_perfect_czo(n, L, d, generator)
        T = HaarTensorOperator.from_perfect(P)
        f, g = random_field(n, L, d, generator), random_field(n, L, d, generator)
        terms = figiel_terms(T, f, g)
        stray = abs(terms.B0) + abs(terms.C0)
        stray += sum(abs(a) for m, (a, _, _) in terms.by_shift.items() if any(m))
        perfect_offdiagonal = max(perfect_offdiagonal, stray / max(1.0, abs(terms.total())))
    record.check("figiel_total", figiel, tol)
    record.check("figiel_perfect_offdiagonal", perfect_offdiagonal, tol)

    return _finish(record, started, CHECK_COLUMNS, _check_rows(record), config)


def cmd_pi_good(config: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    record = _new_record(config)
    params = GoodBadParams(config.r, config.gamma, config.k_max)
    estimate, stderr = estimate_pi_good(config.n, params, config.samples, child_seed(config.seed, "grid"), config.jobs)
    record.summary.update(pi_good=estimate, stderr=stderr)
    record.check("pi_good_positive", -estimate, 0.0, passed=estimate > 0)
    rows = [["monte_carlo", estimate, stderr]]
    if config.n == 1 and config.k_max <= 24:
        exact = exact_pi_good(params)
        rows.append(["exact", exact, 0.0])
        record.summary["exact"] = exact
        record.check("pi_good_oracle", abs(estimate - exact), DECOUPLING_SIGMAS * stderr)

    small = GoodBadParams(DECOUPLING_R, config.gamma, DECOUPLING_K_MAX)
    level = DECOUPLING_K_MAX + 1
    functionals = {
        "decoupling_window": window_indicator(level, [0.25] * config.n, [0.75] * config.n),
        "decoupling_constant": level_constant(level),
    }
    samples = max(100, config.samples // 10)
    for name, phi in functionals.items():
        lhs, rhs, sigma = verify_good_decoupling(phi, small, samples, child_seed(config.seed, name),
                                                 config.n, config.jobs)
        rows.append([name, lhs, rhs])
        record.check(name, abs(lhs - rhs), DECOUPLING_SIGMAS * sigma)

    # same-class level gaps stay inside the badness window r..k_max
    top = min(PARTITION_CUBE_BITS // config.n, config.k_max + 1)
    cubes = [DyadicCube(config.n, level, index)
             for level in range(top + 1)
             for index in np.ndindex(*(1 << level,) * config.n)]
    good = sum(1 for cube in cubes if not is_bad(cube, params))
    worst, failures = 0, 0
    for step in PARTITION_TRANSLATIONS:
        m = (step,) + (0,) * (config.n - 1)
        classes = compatibility_partition(m, params, cubes)
        expected = 2 * (1 + params.compatibility_depth(m))
        covered = sum(len(members) for members in classes.values())
        worst = max(worst, abs(len(classes) - expected) + abs(covered - good))
        rows.append(["partition_classes_m{}".format(step), len(classes), expected])
        checked, failed = compatibility_audit(m, classes, COMPATIBILITY_PAIRS,
                                              child_seed(config.seed, "partition_m{}".format(step)))
        failures += len(failed)
        rows.append(["partition_audit_m{}".format(step), checked, len(failed)])
    record.check("compatibility_partition", worst, 0)
    record.check("compatibility_audit", failures, 0)
    return _finish(record, started, ("quantity", "value", "error"), rows, config)


def cmd_decay(config: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    record = _new_record(config)
    K = hilbert_kernel()
    fit = decay_fit(K, range(config.m_min, config.m_max + 1), (0.0, 1.0), config.quadrature_level)
    low, high = DECAY_EXPONENT_RANGE
    record.summary.update(exponent=fit.exponent, r_squared=fit.r_squared)
    record.check("decay_exponent", fit.exponent, high, passed=low <= fit.exponent <= high)
    record.check("decay_r_squared", fit.r_squared, DECAY_MIN_R_SQUARED, passed=fit.r_squared >= DECAY_MIN_R_SQUARED)
    oracle = 0.0
    for eta in (0, 1):
        quadrature = haar_coeff_kernel(K, (0.0, 1.0), 4, config.quadrature_level, eta=eta)
        oracle = max(oracle, abs(complex(quadrature.value[0, 0]) - haar_coeff_closed_form((0.0, 1.0), 4, eta=eta)))
    record.check("closed_form_m4", oracle, CLOSED_FORM_TOLERANCE)
    audit = wbp_audit(K, [(0.0, 1.0), (0.0, 0.5), (0.25, 0.25)], config.quadrature_level)
    record.check("wbp_hilbert", abs(audit.value), CLOSED_FORM_TOLERANCE)
    rows = [[m, norm, error] for m, norm, error in zip(fit.ms, fit.norms, fit.errors)]
    return _finish(record, started, ("m", "coeff_norm", "error_estimate"), rows, config)


def odd_bump(x: np.ndarray) -> np.ndarray:
    """x (1 − 16x²)³ on |x| < 1/4, a smooth mean-zero bump."""
    inside = np.abs(x) < 0.25
    return np.where(inside, x * (1.0 - 16.0 * x * x) ** 3, 0.0)


def cmd_shift_avg(config: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    record = _new_record(config)
    f = SampledFunction.from_function(odd_bump, -1.0, 1.0, config.points)
    result = shift_average_hilbert(f, config.grids, child_seed(config.seed, "grid"))
    record.summary.update(fitted_scale=result.fitted_scale, rel_error=result.rel_error)
    record.check("shift_average_error", result.rel_error, SHIFT_AVERAGE_TOLERANCE)
    target = hilbert_transform(f).values
    rows = [[float(x), float(np.real(v)), float(np.real(result.fitted_scale * h)), float(np.real(a))]
            for x, v, h, a in zip(f.points, f.values, target, result.approx.values)]
    return _finish(record, started, ("x", "f", "scaled_hilbert", "shift_average"), rows, config)


def cmd_growth(config: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    record = _new_record(config)
    table = paraproduct_growth(config.d_list, config.search_budget, child_seed(config.seed, "symbols"),
                               dim=config.n, level=config.growth_level)
    ratios = [row.ratio for row in table]
    drops = [earlier - later for earlier, later in zip(ratios, ratios[1:])]
    record.check("growth_nondecreasing", max(drops, default=0.0), 1e-9)
    if table[0].d == 1:
        record.check("growth_scalar_envelope", ratios[0], paraproduct_envelope(config.growth_level))
    record.summary["log_d"] = {row.d: math.log(row.d) for row in table}
    rows = [[row.d, row.ratio, row.seed, row.iterations, row.residual] for row in table]
    return _finish(record, started, ("d", "ratio", "seed", "iterations", "residual"), rows, config)


def cmd_norms(config: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    record = _new_record(config)
    n, L, d = config.n, config.L, config.d
    generator = torch_generator(substream(config.seed, "symbols"))
    T = random_perfect_czo(n, L, d, generator)
    probe_seed = child_seed(config.seed, "probes")
    record.check("linearity", linearity_probe(T, probe_seed), config.tolerance)
    power = op_norm(T, "power", config.power_tol, config.max_iter, probe_seed)
    dense = op_norm(T, "dense")
    record.summary.update(power=power.norm, dense=dense.norm, iterations=power.iterations)
    record.check("power_vs_dense", abs(power.norm - dense.norm) / max(dense.norm, 1e-300), POWER_DENSE_AGREEMENT)

    rows = []
    trials = config.trials
    martingale = ratio_suite(martingale_family(n, L, d), lambda f: lp_norm(f, 2), lambda g: lp_norm(g, 2),
                             trials, child_seed(config.seed, "martingale"))
    record.check("martingale_l2_ratio", martingale.max, 1.0 + INEQUALITY_SLACK)
    rows.append(["martingale_l2", 2.0, martingale.max, martingale.mean, martingale.count])
    for p in config.exponents:
        stats = ratio_suite(haar_multiplier_family(n, L, d), lambda f, p=p: lp_norm(f, p),
                            lambda g, p=p: hardy_col_norm(g, p), trials, child_seed(config.seed, "multiplier"))
        record.check("haar_multiplier_p{:g}".format(p), stats.max, haar_multiplier_envelope(p, L))
        rows.append(["haar_multiplier", p, stats.max, stats.mean, stats.count])
    for p, stats in hardy_mapping_suite(martingale_family(n, L, d), config.exponents, trials,
                                        child_seed(config.seed, "hardy")).items():
        record.check("martingale_hardy_p{:g}".format(p), stats.max, martingale_envelope(p, L))
        rows.append(["martingale_hardy", p, stats.max, stats.mean, stats.count])

    duality = 0.0
    for _ in range(trials):
        b, f = random_field(n, L, d, generator), random_field(n, L, d, generator)
        duality = max(duality, duality_check(b, f).ratio)
    record.check("h1_bmo_duality", duality, DUALITY_ENVELOPE)
    rows.append(["duality", 1.0, duality, duality, trials])
    return _finish(record, started, ("suite", "p", "max", "mean", "count"), rows, config)


COMMANDS: Dict[str, Callable[[ExperimentConfig], RunRecord]] = {
    "verify": cmd_verify,
    "pi-good": cmd_pi_good,
    "decay": cmd_decay,
    "shift-avg": cmd_shift_avg,
    "growth": cmd_growth,
    "norms": cmd_norms,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of ExperimentConfig keys")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes for Monte-Carlo blocks")
    common.add_argument("--deterministic", action="store_true", help="fixed summation order, single thread")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="dyadic-czo", description="Operator-valued dyadic harmonic analysis lab")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=command.__doc__)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig(experiment=args.command)
    if args.config:
        config = load_config(args.config, config)
    flags = {"experiment": args.command, "seed": args.seed, "out": args.out, "jobs": args.jobs,
             "deterministic": True if args.deterministic else None}
    return merge(config, flags)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = resolve_config(args)
    except (ConfigInvalid, OSError) as error:
        logger.error("invalid configuration: %s", error)
        return 2
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    try:
        record = COMMANDS[config.experiment](config)
    except DyadicError as error:
        logger.error("%s failed: %s", config.experiment, error)
        return 2
    logger.info("%s: %d/%d checks passed in %.2fs", config.experiment,
                sum(c.passed for c in record.checks), len(record.checks), record.wall_clock)
    return 0 if record.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
