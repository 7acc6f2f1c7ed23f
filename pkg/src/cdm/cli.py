"""Command-line experiment runner.

Subcommands::

    cdm analytic KIND X... X'...
    cdm quadratic-codebook --k 6 [--out FILE]
    cdm quantize --env robot-arm --m 20 --n-samples 200 --seed 0 --out DIR
    cdm train-cdm --M 100 --N 100 --seed 0 --out DIR
    cdm robot-arm --M 100 --N 100 --m 20 --seed 0 --out DIR

Every subcommand that takes ``--config FILE`` reads ``key = value`` lines whose
keys are the long option names (dashes or underscores); options given on the
command line override the file.

All randomness comes from ``--seed``. Each pipeline stage draws from its own
stream, seeded by ``SeedSequence([seed, crc32(stage_name)])``, so adding or
skipping a stage never changes the draws of another.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import sys
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import approx, distortion, estimator, neural, quantizer
from . import environment as envmod

logger = logging.getLogger(__name__)

ANALYTIC_KINDS = {
    "sqeuclid": lambda dim, a: distortion.squared_euclidean(dim),
    "hamming": lambda dim, a: distortion.hamming(dim),
    "linear": lambda dim, a: distortion.linear_cdm(dim, distortion.linear_cdm_constant(a.alpha)),
    "angle": lambda dim, a: distortion.angle_cdm(dim),
    "quadratic": lambda dim, a: distortion.quadratic_cdm(a.scale),
    "robot-arm": lambda dim, a: distortion.robot_arm_cdm(),
}
FIXED_DIM = {"quadratic": 1, "robot-arm": 2}

ENV_NAMES = {
    "quadratic": "quadratic",
    "robot-arm": "robot_arm",
    "linear": "linear",
    "thresholded-linear": "thresholded_linear",
}

TABLE_FIELDS = ("M", "N", "m", "seed", "E_hat", "E_grid", "E_F", "E_hat_true", "E_grid_true",
                "E_F_true", "label_agreement", "E_direct")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def stage_seed(root: int, stage: str) -> int:
    """Seed for one named stage derived from the root seed."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(stage.encode("ascii"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@contextlib.contextmanager
def thread_limit(n: int | None):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Outputs:
    """Tracks files written by a run so a failure can remove them."""

    def __init__(self, directory, config: dict):
        self.dir = Path(directory)
        self.config = config
        self.files: list[Path] = []
        self._made_dir = not self.dir.exists()

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.files.append(p)
        return p

    def write_manifest(self) -> Path:
        lines = []
        for p in self.files:
            lines.append(json.dumps({"file": p.name, "sha256": sha256_file(p),
                                     "config": self.config}, sort_keys=True))
        manifest = self.dir / "manifest.jsonl"
        manifest.write_text("\n".join(lines) + "\n")
        return manifest

    def discard(self) -> None:
        for p in self.files + [self.dir / "manifest.jsonl"]:
            p.unlink(missing_ok=True)
        if self._made_dir and self.dir.exists() and not any(self.dir.iterdir()):
            self.dir.rmdir()


@contextlib.contextmanager
def stage(name: str):
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one robot-arm run.

    ``m`` may list several codebook sizes; they share one trained network and
    give one table row each. ``baseline`` selects the direct-network stage.
    """

    M: int = 100
    N: int = 100
    m: tuple[int, ...] = (20,)
    seed: int = 0
    grid: int = 250
    test_functions: int = 100
    out: str = "robot_arm_out"
    max_iters: int = neural.TrainConfig.max_iters
    val_interval: int = neural.TrainConfig.val_interval
    lloyd_iters: int = 100
    baseline: bool = True
    threads: int | None = None

    def __post_init__(self):
        ms = (self.m,) if np.isscalar(self.m) else self.m
        object.__setattr__(self, "m", tuple(int(v) for v in ms))
        if not self.m or min(self.m) < 1:
            raise ValueError("m must be positive")
        for name in ("M", "N", "grid", "test_functions", "max_iters", "val_interval",
                     "lloyd_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if max(self.m) > self.N:
            raise ValueError("m cannot exceed N")
        if self.grid < 2:
            raise ValueError("grid must be at least 2")


def _fmt(v: float) -> str:
    return repr(float(v))


def run_robot_arm(cfg: ExperimentConfig) -> list[dict]:
    """Full robot-arm pipeline. Returns one table row (a dict) per codebook size.

    Stages: training and validation triples, network training, Lloyd under the
    learned measure, the same Lloyd run (same initial points) under the true
    CDM, evaluation on the grid and on fresh functions, and optionally the
    direct-network baseline on those functions with ``m`` samples each.
    """
    env = envmod.robot_arm()
    conf = {k: v for k, v in asdict(cfg).items() if k not in ("out", "threads")}
    out = Outputs(cfg.out, conf)
    try:
        with thread_limit(cfg.threads):
            row = _robot_arm_stages(cfg, env, out)
        out.write_manifest()
    except BaseException:
        out.discard()
        raise
    return row


def _robot_arm_stages(cfg: ExperimentConfig, env, out: Outputs) -> dict:
    with stage("triples"):
        tr = estimator.build_triple_set(env, cfg.M, cfg.N, stage_seed(cfg.seed, "triples"))
        va = estimator.build_triple_set(env, cfg.M, cfg.N, stage_seed(cfg.seed, "validation"))
    with stage("train"):
        res = []
        tcfg = neural.TrainConfig(max_iters=cfg.max_iters, val_interval=cfg.val_interval,
                                  seed=stage_seed(cfg.seed, "init"))
        model = neural.train(tr, va, tcfg, result=res)
        neural.save_model(model, out.path("model.txt"))
        _write_history(res[0], out.path("training.csv"), tcfg.val_interval)
    learned = distortion.learned(model)
    true = distortion.robot_arm_cdm()
    with stage("evaluate"):
        grid = quantizer.grid_points(env.input_domain, cfg.grid)
        funcs = envmod.sample_functions(env, np.random.default_rng(
            stage_seed(cfg.seed, "test_functions")), cfg.test_functions)
    rows, results = [], []
    for m in cfg.m:
        tag = f"_m{m}" if len(cfg.m) > 1 else ""
        with stage("quantize"):
            # the learned and true runs start from the same sample indices
            init = np.random.default_rng(stage_seed(cfg.seed, f"lloyd/{m}")).choice(
                cfg.N, size=m, replace=False)
            cb = quantizer.lloyd_medoid(learned, tr.inputs, m, 0, cfg.lloyd_iters, init=init)
            cb_true = quantizer.lloyd_medoid(true, tr.inputs, m, 0, cfg.lloyd_iters, init=init)
            quantizer.write_codebook_csv(cb, out.path(f"codebook_learned{tag}.csv"))
            quantizer.write_codebook_csv(cb_true, out.path(f"codebook_true{tag}.csv"))
        with stage("evaluate"):
            ef = approx.generalization_errors(cb, env, funcs, cfg.grid)
            ef_true = approx.generalization_errors(cb_true, env, funcs, cfg.grid)
            r_learned = quantizer.voronoi_raster(cb, (cfg.grid, cfg.grid), env.input_domain)
            r_true = quantizer.voronoi_raster(cb_true, (cfg.grid, cfg.grid), env.input_domain)
            quantizer.write_pgm(r_learned, out.path(f"voronoi_learned{tag}.pgm"))
            quantizer.write_pgm(r_true, out.path(f"voronoi_true{tag}.pgm"))
            quantizer.write_points_csv(r_learned, out.path(f"voronoi_learned{tag}_points.csv"))
            quantizer.write_points_csv(r_true, out.path(f"voronoi_true{tag}_points.csv"))
            row = {
                "M": cfg.M, "N": cfg.N, "m": m, "seed": cfg.seed,
                "E_hat": quantizer.reconstruction_error_input(cb, tr.inputs),
                "E_grid": quantizer.reconstruction_error_input(cb, grid),
                "E_F": float(ef.mean()),
                "E_hat_true": quantizer.reconstruction_error_input(cb_true, tr.inputs),
                "E_grid_true": quantizer.reconstruction_error_input(cb_true, grid),
                "E_F_true": float(ef_true.mean()),
                "label_agreement": quantizer.label_agreement(r_learned.labels, r_true.labels),
                "E_direct": float("nan"),
            }
        results += [("cdm", m, cfg.seed, e) for e in ef]
        results += [("true_cdm", m, cfg.seed, e) for e in ef_true]
        if cfg.baseline:
            with stage("baseline"):
                base = stage_seed(cfg.seed, f"baseline/{m}")
                direct = [approx.train_direct_baseline(funcs[k], env, m, base + k,
                                                       grid_per_axis=cfg.grid)[1]
                          for k in range(len(funcs))]
                row["E_direct"] = float(np.mean(direct))
                results += [("direct", m, cfg.seed, e) for e in direct]
        rows.append(row)
    with stage("write"):
        approx.write_results_csv(results, out.path("generalization.csv"))
        with open(out.path("table.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_FIELDS)
            for row in rows:
                w.writerow([row[k] if k in ("M", "N", "m", "seed") else _fmt(row[k])
                            for k in TABLE_FIELDS])
    return rows


def _write_history(res: neural.TrainResult, path, interval: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "train_loss", "val_loss"])
        for k, v in enumerate(res.val_history):
            it = min(k * interval, res.iterations)
            w.writerow([it, _fmt(res.train_history[it]), _fmt(v)])


def _read_config(path) -> dict:
    conf = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        conf[key.replace("-", "_")] = value
    return conf


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, tuple):
        return text
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; command-line options win")
    p.add_argument("--seed", type=int, required=False, default=None,
                   help="root seed (mandatory, here or in the config file)")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads; 1 gives bit-reproducible runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdm", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="evaluate a closed-form distortion measure")
    p.add_argument("kind", choices=sorted(ANALYTIC_KINDS))
    p.add_argument("coords", nargs="+", type=float,
                   help="coordinates of x followed by those of x'")
    p.add_argument("--alpha", type=float, default=1.0, help="linear environment range")
    p.add_argument("--scale", type=float, default=1.0, help="quadratic measure scale")

    p = sub.add_parser("quadratic-codebook", help="solve the quadratic-environment codebook")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--grid", type=int, default=250, help="points in the error check grid")
    p.add_argument("--out", help="CSV file (default: stdout)")

    p = sub.add_parser("quantize", help="Lloyd quantization of sampled inputs")
    _add_common(p)
    p.add_argument("--env", choices=sorted(ENV_NAMES), default="robot-arm")
    p.add_argument("--dim", type=int, default=2, help="dimension of linear environments")
    p.add_argument("--measure", default="true",
                   help="'true', 'sqeuclid', or the path of a trained model file")
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--n-samples", type=int, default=100)
    p.add_argument("--grid", type=int, default=250)
    p.add_argument("--lloyd-iters", type=int, default=100)
    p.add_argument("--out", default="quantize_out")

    p = sub.add_parser("train-cdm", help="learn the robot-arm distortion measure")
    _add_common(p)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--max-iters", type=int, default=neural.TrainConfig.max_iters)
    p.add_argument("--val-interval", type=int, default=neural.TrainConfig.val_interval)
    p.add_argument("--out", default="train_out")

    p = sub.add_parser("robot-arm", help="full robot-arm experiment")
    _add_common(p)
    p.add_argument("--M", type=int, default=ExperimentConfig.M)
    p.add_argument("--N", type=int, default=ExperimentConfig.N)
    p.add_argument("--m", type=_int_list, default=ExperimentConfig.m,
                   help="codebook size, or several separated by commas")
    p.add_argument("--grid", type=int, default=ExperimentConfig.grid)
    p.add_argument("--test-functions", type=int, default=ExperimentConfig.test_functions)
    p.add_argument("--max-iters", type=int, default=ExperimentConfig.max_iters)
    p.add_argument("--val-interval", type=int, default=ExperimentConfig.val_interval)
    p.add_argument("--lloyd-iters", type=int, default=ExperimentConfig.lloyd_iters)
    p.add_argument("--baseline", type=_bool, default=True,
                   help="also train the direct network on the test functions")
    p.add_argument("--out", default=ExperimentConfig.out)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        conf = _read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(conf) - known
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        sub.set_defaults(**conf)
        args = parser.parse_args(argv)
        # argparse only converts string defaults for options with a type
        for a in sub._actions:
            v = getattr(args, a.dest, None)
            if a.dest in conf and isinstance(v, str) and a.type is not None:
                setattr(args, a.dest, a.type(v))
    if hasattr(args, "seed") and args.seed is None:
        parser.error("--seed is required (on the command line or in --config)")
    return args


def cmd_analytic(args) -> int:
    kind = args.kind
    n = len(args.coords)
    if n % 2:
        raise SystemExit(f"analytic: need an even number of coordinates, got {n}")
    dim = n // 2
    want = FIXED_DIM.get(kind)
    if want is not None and dim != want:
        raise SystemExit(f"analytic: {kind} takes points of dimension {want}")
    measure = ANALYTIC_KINDS[kind](dim, args)
    x, xp = np.array(args.coords[:dim]), np.array(args.coords[dim:])
    print(f"{distortion.eval_distortion(measure, x, xp):.12g}")
    return 0


def cmd_quadratic_codebook(args) -> int:
    cb = quantizer.solve_quadratic_codebook(args.k)
    grid = quantizer.grid_points(([-1.0], [1.0]), args.grid)
    err = quantizer.reconstruction_error_input(cb, grid)
    rows = [["point", "grid_error"]] + [[_fmt(q), _fmt(err)] for q in cb.points.ravel()]
    text = "\n".join(",".join(r) for r in rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _measure_for(spec: str, env) -> distortion.DistortionMeasure:
    if spec == "true":
        return env.cdm()
    if spec == "sqeuclid":
        return distortion.squared_euclidean(env.dimension)
    model = neural.load_model(spec)
    if model.n_inputs != 2 * env.dimension:
        raise ValueError(f"model takes {model.n_inputs} inputs, environment needs "
                         f"{2 * env.dimension}")
    return distortion.learned(model)


def cmd_quantize(args) -> int:
    kind = ENV_NAMES[args.env]
    env = envmod.Environment(kind, args.dim)
    conf = {k: v for k, v in vars(args).items() if k not in ("config", "threads", "out")}
    out = Outputs(args.out, conf)
    try:
        with thread_limit(args.threads):
            with stage("sample"):
                xs = envmod.sample_inputs(env, np.random.default_rng(
                    stage_seed(args.seed, "inputs")), args.n_samples)
                measure = _measure_for(args.measure, env)
            with stage("quantize"):
                hist = []
                cb = quantizer.lloyd_medoid(measure, xs, args.m, stage_seed(args.seed, "lloyd"),
                                            args.lloyd_iters, history=hist)
                quantizer.write_codebook_csv(cb, out.path("codebook.csv"))
            with stage("write"):
                with open(out.path("lloyd.csv"), "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["iteration", "error"])
                    for i, e in enumerate(hist):
                        w.writerow([i, _fmt(e)])
                if env.dimension == 2:
                    r = quantizer.voronoi_raster(cb, (args.grid, args.grid), env.input_domain)
                    quantizer.write_pgm(r, out.path("voronoi.pgm"))
                    quantizer.write_points_csv(r, out.path("voronoi_points.csv"))
            out.write_manifest()
    except BaseException:
        out.discard()
        raise
    print(f"reconstruction error {hist[-1]:.6g} after {len(hist)} assignment steps")
    return 0


def cmd_train_cdm(args) -> int:
    env = envmod.robot_arm()
    conf = {k: v for k, v in vars(args).items() if k not in ("config", "threads", "out")}
    out = Outputs(args.out, conf)
    try:
        with thread_limit(args.threads):
            with stage("triples"):
                tr = estimator.build_triple_set(env, args.M, args.N,
                                                stage_seed(args.seed, "triples"))
                va = estimator.build_triple_set(env, args.M, args.N,
                                                stage_seed(args.seed, "validation"))
                estimator.write_triples_csv(tr, out.path("triples.csv"))
            with stage("train"):
                res = []
                tcfg = neural.TrainConfig(max_iters=args.max_iters,
                                          val_interval=args.val_interval,
                                          seed=stage_seed(args.seed, "init"))
                model = neural.train(tr, va, tcfg, result=res)
                neural.save_model(model, out.path("model.txt"))
                _write_history(res[0], out.path("training.csv"), tcfg.val_interval)
            out.write_manifest()
    except BaseException:
        out.discard()
        raise
    d = estimator.measure_distance(distortion.learned(model), distortion.robot_arm_cdm(), env,
                                   10_000, stage_seed(args.seed, "distance"))
    print(f"best validation loss {res[0].best_val:.6g} after {res[0].iterations} iterations; "
          f"mean squared distance to the true measure {d:.6g}")
    return 0


def cmd_robot_arm(args) -> int:
    cfg = ExperimentConfig(M=args.M, N=args.N, m=args.m, seed=args.seed, grid=args.grid,
                           test_functions=args.test_functions, out=args.out,
                           max_iters=args.max_iters, val_interval=args.val_interval,
                           lloyd_iters=args.lloyd_iters, baseline=args.baseline,
                           threads=args.threads)
    rows = run_robot_arm(cfg)
    print(",".join(TABLE_FIELDS))
    for row in rows:
        print(",".join(str(row[k]) if k in ("M", "N", "m", "seed") else f"{row[k]:.4g}"
                       for k in TABLE_FIELDS))
    return 0


COMMANDS = {
    "analytic": cmd_analytic,
    "quadratic-codebook": cmd_quadratic_codebook,
    "quantize": cmd_quantize,
    "train-cdm": cmd_train_cdm,
    "robot-arm": cmd_robot_arm,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
