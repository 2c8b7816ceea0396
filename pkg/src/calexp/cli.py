"""Command-line interface.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import DataError, load_csv, train_cal_split
from .explainer import CalibratedExplainer, export_json, load_json
from .harness import make_trainer, run_comparison, time_explanations, timing_csv
from .models import ExternalScorer, ScorerError, model_from_dict
from .plots import KINDS as PLOT_KINDS, render

logger = logging.getLogger("calexp")

DISCRETIZERS = ("binary-entropy", "binary-median", "quartile", "decile", "entropy")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--label-col", default="label", help="name of the binary label column")
    p.add_argument("--categorical", default="", help="comma-separated columns to force categorical")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default="forest",
                   help="tree | forest | external:<command> | external:tcp:host:port")
    p.add_argument("--scorer", help="external scorer, shorthand for --model external:<spec>")
    p.add_argument("--model-file", help="model JSON written by `train` (skips training)")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--cal-fraction", type=float, default=1 / 3)
    p.add_argument("--discretizer", choices=DISCRETIZERS, default=None)
    p.add_argument("--entropy-depth", type=int, default=3)
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="calexp", description="Venn-Abers calibrated explanations")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a tree or forest and write it as JSON")
    p = sub.add_parser("calibrate", parents=[common], help="print Venn-Abers intervals as JSON")
    p.add_argument("--instances", default="", help="comma-separated row indices (default: all rows)")
    p = sub.add_parser("explain", parents=[common], help="factual explanation of one row")
    p.add_argument("--instance", type=int, required=True)
    p = sub.add_parser("counterfactual", parents=[common], help="counterfactual rules for one row")
    p.add_argument("--instance", type=int, required=True)
    p.add_argument("--max-rules", type=int, default=10)
    p = sub.add_parser("evaluate", parents=[common], help="UC / VA / cheating-VA comparison as CSV")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--repeats", type=int, default=10)
    p = sub.add_parser("bench", parents=[common], help="explanation timing as CSV")
    p.add_argument("--n-instances", type=int, default=10)
    p = sub.add_parser("render", parents=[common], help="render a ce/1 JSON explanation as SVG")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--kind", choices=PLOT_KINDS, required=True)
    p.add_argument("--max-rules", type=int, default=None)
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load(args):
    if not args.data:
        raise DataError("--data is required for this command")
    cats = [c for c in args.categorical.split(",") if c]
    return load_csv(args.data, args.label_col, categorical=cats)


def _model_spec(args) -> str:
    return f"external:{args.scorer}" if args.scorer else args.model


def _model_params(args) -> dict:
    params = {"max_depth": args.max_depth, "min_leaf": args.min_leaf}
    if args.model == "forest":
        params["n_trees"] = args.n_trees
    return params


def _obtain_model(args, train_data):
    if args.model_file:
        return model_from_dict(json.loads(Path(args.model_file).read_text(encoding="utf-8")))
    spec = _model_spec(args)
    if spec.startswith("external:"):
        return ExternalScorer(spec[len("external:"):], schema=train_data.schema)
    if spec not in ("tree", "forest"):
        raise ValueError(f"unknown model {spec!r}")
    return make_trainer(spec, **_model_params(args))(train_data, args.seed)


def _explainer(args, data):
    split = train_cal_split(data, args.cal_fraction, args.seed)
    model = _obtain_model(args, split.proper_training)
    return CalibratedExplainer(model, split.calibration, entropy_depth=args.entropy_depth, seed=args.seed)


def _row(data, index: int):
    if not 0 <= index < data.n:
        raise DataError(f"instance {index} out of range 0..{data.n - 1}")
    return data.X[index]


def _summary(expl) -> str:
    iv = expl.prediction
    lines = [f"P(y=1) = {iv.p:.3f}  [{iv.p0:.3f}, {iv.p1:.3f}]  ({expl.mode}, {len(expl.rules)} rules)"]
    for r in expl.rules:
        extra = "" if r.expected is None else f"  -> {r.expected.p:.3f} [{r.expected.p0:.3f}, {r.expected.p1:.3f}]"
        lines.append(f"  {r.condition:<40} w={r.weights.w:+.3f} [{r.weights.low:+.3f}, {r.weights.high:+.3f}]{extra}")
    return "\n".join(lines) + "\n"


def _run(args) -> int:
    cmd = args.command
    if cmd == "render":
        expl = load_json(Path(args.input).read_text(encoding="utf-8"))
        svg = render(expl, args.kind, args.max_rules)
        _emit(svg, args.out)
        if args.out:
            n_rules = svg.count('class="rule"')
            print(f"wrote {args.kind} plot with {n_rules} rules to {args.out}")
        return 0

    data = _load(args)
    if cmd == "train":
        if _model_spec(args).startswith("external:"):
            raise ValueError("external models are trained elsewhere")
        model = make_trainer(args.model, **_model_params(args))(data, args.seed)
        _emit(json.dumps(model.to_dict()) + "\n", args.out)
        if args.out:
            print(f"trained {model.kind} on {data.n} instances -> {args.out}")
        return 0

    if cmd == "calibrate":
        explainer = _explainer(args, data)
        idx = [int(i) for i in args.instances.split(",") if i] or list(range(data.n))
        for i in idx:
            _row(data, i)
        X = data.X[idx]
        rows = [{"index": i, "p0": iv.p0, "p1": iv.p1, "p": iv.p}
                for i, iv in zip(idx, explainer.predict_intervals(X))]
        text = json.dumps(rows) + "\n"
        print(text, end="")
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        return 0

    if cmd in ("explain", "counterfactual"):
        explainer = _explainer(args, data)
        x = _row(data, args.instance)
        if cmd == "explain":
            expl = explainer.explain_factual(x, (args.discretizer or "binary-entropy"))
        else:
            expl = explainer.explain_counterfactual(x, (args.discretizer or "entropy"), args.max_rules)
        _emit(export_json(expl), args.out)
        if args.out:
            print(_summary(expl), end="")
        return 0

    if cmd == "evaluate":
        if _model_spec(args) not in ("tree", "forest"):
            raise ValueError("evaluate needs a built-in model (tree or forest)")
        report = run_comparison(data, args.model, args.folds, args.repeats, args.seed,
                                cal_fraction=args.cal_fraction, model_params=_model_params(args))
        _emit(report.to_csv(), args.out)
        if args.out:
            for setup in ("UC", "VA", "VA_cheat"):
                print(f"{setup:<9} log loss {report.mean(setup, 'log_loss'):.4f}  ECE {report.mean(setup, 'ece'):.4f}")
        return 0

    if cmd == "bench":
        spec = _model_spec(args)
        model = None
        if args.model_file or spec.startswith("external:"):
            model = _obtain_model(args, train_cal_split(data, args.cal_fraction, args.seed).proper_training)
        rows = time_explanations(data, spec if model is None else model.kind, args.n_instances,
                                 seed=args.seed, cal_fraction=args.cal_fraction,
                                 model_params=None if model else _model_params(args), model=model)
        _emit(timing_csv(rows), args.out)
        if args.out:
            for r in rows:
                print(f"{r.mode:<15} {r.seconds:.3f}s for {r.n_instances} instances")
        return 0
    raise AssertionError(cmd)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (DataError, ScorerError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
