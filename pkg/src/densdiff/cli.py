"""Command-line interface: ``densdiff {label,toy,bench,boundary,replay}``.

Every command that writes files also writes a manifest recording the
fully-resolved arguments, input digests and output digests; ``replay``
re-runs a manifest and checks that the outputs come out byte-identical.
Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .baselines import LsddModel
from .basis import GaussianBasis
from .cqp import QpSolverError
from .data import (DataError, LabeledDataset, load_csv, load_labels, sample_hinge_example, sample_mixture,
                   save_csv, save_labels, toy1_spec, toy2_spec)
from .dsdd import DsddModel, FitError, sign_labels
from .evaluate import METHODS, ExperimentConfig, MethodOptions, label_pair, run_benchmark

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
SEPARATOR = "---"
SCHEMA_VERSION = 1

BENCH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "methods", "prior_p", "prior_q", "n", "nq", "source"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "methods": {"type": "array", "minItems": 1, "items": {"enum": list(METHODS)}},
        "prior_p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "prior_q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n": {"type": "integer", "minimum": 1},
        "nq": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "folds": {"type": "integer", "minimum": 2},
        "max_centers": {"type": "integer", "minimum": 1},
        "sigma_multipliers": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "lambdas": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "source": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["toy"],
                 "properties": {"toy": {"enum": [1, 2]}}},
                {"type": "object", "additionalProperties": False, "required": ["features", "labels"],
                 "properties": {"features": {"type": "string"}, "labels": {"type": "string"},
                                "header": {"type": "boolean"}}},
            ]
        },
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(path: Path, command: str, argv: list[str], args: dict, inputs: list[str],
                    outputs: list[Path]) -> None:
    _write_json(path, {
        "tool": "densdiff",
        "version": __version__,
        "command": command,
        "argv": argv,
        "args": args,
        "seed": args.get("seed"),
        "inputs": {p: sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
    })


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


# -- label ------------------------------------------------------------------


def cmd_label(a) -> int:
    if a.method not in METHODS:
        raise UsageError(f"unknown method {a.method!r}; choose from {', '.join(METHODS)}")
    Xp = load_csv(a.xp, a.delimiter, a.header).samples
    Xq = load_csv(a.xq, a.delimiter, a.header).samples
    opts = MethodOptions(folds=a.folds, max_centers=a.max_centers, sigma=a.sigma, lam=a.lam, knn=a.knn)
    result, model = label_pair(a.method, Xp, Xq, opts, a.seed)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write("".join(f"{int(v):d}\n" for v in result.labels_p))
        fh.write(SEPARATOR + "\n")
        fh.write("".join(f"{int(v):d}\n" for v in result.labels_q))
    outputs = [out]
    diag_path = out.with_name(out.name + ".diagnostics.json")
    _write_json(diag_path, {"method": result.method, "hyperparams": result.hyperparams,
                            "diagnostics": result.diagnostics, "n": int(Xp.shape[0]), "nq": int(Xq.shape[0])})
    outputs.append(diag_path)
    if model is not None:
        model_path = out.with_name(out.name + ".model.json")
        model_path.write_text(model.to_json() + "\n", encoding="utf-8")
        outputs.append(model_path)
    args = {"xp": a.xp, "xq": a.xq, "method": a.method, "out": a.out, "seed": a.seed, "folds": a.folds,
            "max_centers": a.max_centers, "sigma": a.sigma, "lambda": a.lam, "knn": a.knn,
            "delimiter": a.delimiter, "header": a.header}
    argv = ["label", "--xp", a.xp, "--xq", a.xq, "--method", a.method, "--out", a.out,
            "--seed", str(a.seed), "--folds", str(a.folds), "--max-centers", str(a.max_centers),
            "--knn", str(a.knn), "--delimiter", a.delimiter]
    if a.sigma is not None:
        argv += ["--sigma", repr(a.sigma)]
    if a.lam is not None:
        argv += ["--lambda", repr(a.lam)]
    if a.header:
        argv.append("--header")
    _write_manifest(out.with_name(out.name + ".manifest.json"), "label", argv, args, [a.xp, a.xq], outputs)
    return EXIT_OK


# -- toy --------------------------------------------------------------------


def _check_prior(p: float, flag: str) -> None:
    if not 0 < p < 1:
        raise UsageError(f"{flag} must lie strictly between 0 and 1, got {p}")


def cmd_toy(a) -> int:
    _check_prior(a.prior_p, "--prior-p")
    _check_prior(a.prior_q, "--prior-q")
    if a.n < 1 or a.nq < 1:
        raise UsageError("--n and --nq must be positive")
    out = Path(a.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    sp, sq = np.random.SeedSequence(a.seed).spawn(2)
    pairs: dict[str, tuple[LabeledDataset, LabeledDataset]] = {}
    if a.problem in ("1", "2"):
        spec = toy1_spec() if a.problem == "1" else toy2_spec()
        pairs[""] = (sample_mixture(spec, a.n, a.prior_p, sp), sample_mixture(spec, a.nq, a.prior_q, sq))
    else:
        for overlapping, prefix in ((False, "separated_"), (True, "overlapping_")):
            pairs[prefix] = (sample_hinge_example(a.n, a.prior_p, sp, overlapping),
                             sample_hinge_example(a.nq, a.prior_q, sq, overlapping))
    outputs = []
    for prefix, (P, Q) in pairs.items():
        for name, D in (("xp", P), ("xq", Q)):
            save_csv(out / f"{prefix}{name}.csv", D.samples)
            save_labels(out / f"{prefix}y{name[1:]}.csv", D.labels)
            outputs += [out / f"{prefix}{name}.csv", out / f"{prefix}y{name[1:]}.csv"]
    args = {"problem": a.problem, "n": a.n, "nq": a.nq, "prior_p": a.prior_p, "prior_q": a.prior_q,
            "seed": a.seed, "out_dir": a.out_dir}
    argv = ["toy", "--problem", a.problem, "--n", str(a.n), "--nq", str(a.nq), "--prior-p", repr(a.prior_p),
            "--prior-q", repr(a.prior_q), "--seed", str(a.seed), "--out-dir", a.out_dir]
    _write_manifest(out / "manifest.json", "toy", argv, args, [], outputs)
    return EXIT_OK


# -- bench ------------------------------------------------------------------


def load_bench_config(doc: dict):
    """Validate a benchmark config document; returns ``(ExperimentConfig, source, input paths)``."""
    validator = jsonschema.Draft202012Validator(BENCH_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"  at /{'/'.join(map(str, e.absolute_path))}: {e.message}" for e in errors]
        raise UsageError("invalid benchmark config:\n" + "\n".join(lines))
    src = doc["source"]
    inputs = []
    if "toy" in src:
        source = toy1_spec() if src["toy"] == 1 else toy2_spec()
    else:
        header = src.get("header", False)
        source = LabeledDataset(load_csv(src["features"], header=header).samples, load_labels(src["labels"]))
        inputs = [src["features"], src["labels"]]
    fields = {k: v for k, v in doc.items() if k not in ("schema_version", "source")}
    for k in ("methods", "sigma_multipliers", "lambdas"):
        if k in fields:
            fields[k] = tuple(fields[k])
    return ExperimentConfig(**fields), source, inputs


def cmd_bench(a) -> int:
    if a.config:
        try:
            doc = json.loads(Path(a.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        inputs = [a.config]
    else:
        doc = {"schema_version": SCHEMA_VERSION, "methods": a.methods.split(","), "prior_p": a.prior_p,
               "prior_q": a.prior_q, "n": a.n, "nq": a.nq, "trials": a.trials, "seed": a.seed,
               "folds": a.folds, "source": {"toy": a.problem}}
        inputs = []
    config, source, data_inputs = load_bench_config(doc)
    table = run_benchmark(config, source)
    text = table.to_text()
    sys.stdout.write(text)
    if a.out:
        out = Path(a.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table.to_json() + "\n", encoding="utf-8")
        txt = out.with_name(out.name + ".txt")
        txt.write_text(text, encoding="utf-8")
        if a.config:
            argv = ["bench", "--config", a.config, "--out", a.out]
        else:
            argv = ["bench", "--methods", a.methods, "--problem", str(a.problem), "--prior-p", repr(a.prior_p),
                    "--prior-q", repr(a.prior_q), "--n", str(a.n), "--nq", str(a.nq), "--trials", str(a.trials),
                    "--seed", str(a.seed), "--folds", str(a.folds), "--out", a.out]
        args = dict(doc, out=a.out, seed=config.seed)
        _write_manifest(out.with_name(out.name + ".manifest.json"), "bench", argv, args,
                        inputs + data_inputs, [out, txt])
    return EXIT_OK


# -- boundary ---------------------------------------------------------------


def load_model(path: str | Path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = doc.get("kind", "dsdd")
    if kind == "dsdd":
        return DsddModel.from_json(json.dumps(doc))
    if kind == "lsdd":
        return LsddModel(GaussianBasis(np.array(doc["centers"]), doc["sigma"]), np.array(doc["theta"]),
                         doc["lambda"])
    raise DataError(f"unknown model kind {kind!r}")


def cmd_boundary(a) -> int:
    try:
        xmin, xmax, ymin, ymax, steps = _floats(a.grid)
    except ValueError:
        raise UsageError("--grid expects xmin,xmax,ymin,ymax,steps") from None
    if steps < 1 or steps != int(steps):
        raise UsageError("grid steps must be a positive integer")
    try:
        model = load_model(a.model)
    except (KeyError, json.JSONDecodeError, ValueError) as exc:
        raise DataError(f"cannot read model {a.model}: {exc}") from None
    if model.basis.d != 2:
        raise DataError(f"decision boundaries need a 2-D model, this one has d={model.basis.d}")
    xs, ys = np.linspace(xmin, xmax, int(steps)), np.linspace(ymin, ymax, int(steps))
    G = np.array([(x, y) for x in xs for y in ys])
    g = model.decision_function(G)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write("x1,x2,g,sign\n")
        for (x, y), v, s in zip(G, g, sign_labels(g)):
            fh.write(f"{float(x)!r},{float(y)!r},{float(v)!r},{int(s):d}\n")
    argv = ["boundary", "--model", a.model, f"--grid={a.grid}", "--out", a.out]
    _write_manifest(out.with_name(out.name + ".manifest.json"), "boundary", argv,
                    {"model": a.model, "grid": a.grid, "out": a.out, "seed": None}, [a.model], [out])
    return EXIT_OK


# -- replay -----------------------------------------------------------------


def cmd_replay(a) -> int:
    manifest = json.loads(Path(a.manifest).read_text(encoding="utf-8"))
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists() or sha256_file(path) != digest:
            raise DataError(f"input {path} is missing or differs from the manifest")
    code = main(manifest["argv"])
    if code != EXIT_OK:
        return code
    bad = [p for p, d in manifest["outputs"].items() if not Path(p).exists() or sha256_file(p) != d]
    if bad:
        print("replay produced different outputs: " + ", ".join(bad), file=sys.stderr)
        return EXIT_NUMERIC
    print(f"replayed {manifest['command']}: {len(manifest['outputs'])} outputs identical")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="densdiff", description="Label two datasets that differ only in class balance.")
    p.add_argument("--version", action="version", version=f"densdiff {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    lab = sub.add_parser("label", help="label a pair of CSV datasets")
    lab.add_argument("--xp", required=True, help="first dataset (CSV, one sample per row)")
    lab.add_argument("--xq", required=True, help="second dataset (CSV)")
    lab.add_argument("--method", required=True, help=f"one of {', '.join(METHODS)}")
    lab.add_argument("--sigma", type=float, help="kernel width in standardized units (skips the sigma grid)")
    lab.add_argument("--lambda", dest="lam", type=float, help="regularization (skips the lambda grid)")
    lab.add_argument("--out", default="labels.txt")
    lab.add_argument("--seed", type=int, default=0)
    lab.add_argument("--folds", type=int, default=5)
    lab.add_argument("--max-centers", type=int, default=200)
    lab.add_argument("--knn", type=int, default=7, help="neighbors for spectral clustering")
    lab.add_argument("--delimiter", default=",")
    lab.add_argument("--header", action="store_true", help="skip the first line of each CSV")
    lab.set_defaults(func=cmd_label)

    toy = sub.add_parser("toy", help="generate a synthetic dataset pair")
    toy.add_argument("--problem", required=True, choices=["1", "2", "hinge"])
    toy.add_argument("--n", type=int, required=True)
    toy.add_argument("--nq", type=int, required=True)
    toy.add_argument("--prior-p", type=float, required=True)
    toy.add_argument("--prior-q", type=float, required=True)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--out-dir", required=True)
    toy.set_defaults(func=cmd_toy)

    bench = sub.add_parser("bench", help="repeated-trial benchmark")
    bench.add_argument("--config", help="JSON experiment config; overrides the inline flags")
    bench.add_argument("--methods", default="dsdd,lsdd,kde,km,sc")
    bench.add_argument("--problem", type=int, choices=[1, 2], default=1)
    bench.add_argument("--prior-p", type=float, default=0.2)
    bench.add_argument("--prior-q", type=float, default=0.8)
    bench.add_argument("--n", type=int, default=40)
    bench.add_argument("--nq", type=int, default=40)
    bench.add_argument("--trials", type=int, default=5)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--folds", type=int, default=5)
    bench.add_argument("--out", help="write the JSON table here (text goes to stdout)")
    bench.set_defaults(func=cmd_bench)

    bd = sub.add_parser("boundary", help="evaluate a fitted 2-D model on a grid")
    bd.add_argument("--model", required=True)
    bd.add_argument("--grid", required=True, help="xmin,xmax,ymin,ymax,steps")
    bd.add_argument("--out", default="boundary.csv")
    bd.set_defaults(func=cmd_boundary)

    rp = sub.add_parser("replay", help="re-run a manifest and verify identical outputs")
    rp.add_argument("manifest")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_INPUT
    except (DataError, OSError, ValueError, jsonschema.ValidationError) as exc:
        if isinstance(exc, (np.linalg.LinAlgError,)):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError, QpSolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
