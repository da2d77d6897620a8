"""Command-line entry point.

Subcommands cover the whole pipeline: `gen` builds labeled datasets,
`train` runs seeded training sessions, `eval` aggregates metrics over
saved models, `predict`/`segment` run inference on a single program,
`slice`/`witness` drive the static slicer and the fuzzer directly, and
`viz` renders the AST with attention and segmentation overlays as DOT.
`debug` chains everything: classify, localize the culprit loop, slice
around it, and fuzz the slice for a concrete nonterminating input.

Exit codes: 0 success, 1 usage error, 2 data or model format error,
3 training divergence.  A TOML config file can supply defaults for any
flag (one table per subcommand); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from . import datagen, gnnmodels, graphenc, interp, lang, metrics, slicer, training

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_DIVERGED = 3


class CliDataError(Exception):
    """Bad input data or model files; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# DOT rendering


def _edge_color(score: float) -> str:
    """Interpolate blue (0) to red (1)."""
    s = min(max(score, 0.0), 1.0)
    return f"#{round(255 * s):02x}00{round(255 * (1.0 - s)):02x}"


def emit_dot(graph: graphenc.FeatureGraph, program: lang.Program, attention=None, seg_confidence=None) -> str:
    """Render the AST as an undirected DOT graph.

    Nodes are labeled with their token text and source line.  With
    attention, tree edges are colored from blue (low) to red (high) by
    the normalized display score; with segmentation confidences, nodes
    at or above 0.5 are filled red.
    """
    _, line_of = lang.render_with_lines(program)
    nodes = {n.node_id: n for n in lang.iter_nodes(program)}
    out = ["graph ast {", '  node [shape=box, fontname="Helvetica"];']
    for i in range(graph.n_nodes):
        ast_id = graph.node_origin[i]
        label = f"{lang.node_label(nodes[ast_id])}\\n(line {line_of[ast_id]})"
        attrs = [f'label="{label}"']
        if seg_confidence is not None:
            conf = float(seg_confidence[i])
            attrs.append(f'tooltip="confidence {conf:.3f}"')
            if conf >= 0.5:
                attrs.append('style=filled, fillcolor="#ff4040"')
        out.append(f"  n{i} [{', '.join(attrs)}];")
    for u, v in sorted(graph.tree_edges()):
        attrs = []
        if attention is not None:
            attrs = [f'color="{_edge_color(attention[(u, v)])}"', "penwidth=2"]
        suffix = f" [{', '.join(attrs)}]" if attrs else ""
        out.append(f"  n{u} -- n{v}{suffix};")
    out.append("}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Shared helpers


def _load_program(path) -> lang.Program:
    try:
        source = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliDataError(f"cannot read {path}: {exc}") from exc
    try:
        return lang.parse(source)
    except lang.LangError as exc:
        raise CliDataError(f"{path}: {exc}") from exc


def _load_model(path):
    try:
        model, header = gnnmodels.load_model(path)
    except (OSError, gnnmodels.ModelFormatError, KeyError) as exc:
        raise CliDataError(f"bad model file {path}: {exc}") from exc
    return model, header


def _model_vocab(path, header) -> graphenc.Vocabulary:
    """Vocabulary referenced by a model file, verified by content hash."""
    vocab_path = Path(path).parent / header["vocab"]["file"]
    try:
        vocab = graphenc.Vocabulary.load(vocab_path)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise CliDataError(f"cannot load vocabulary {vocab_path}: {exc}") from exc
    if vocab.sha256() != header["vocab"]["sha256"]:
        raise CliDataError(f"vocabulary {vocab_path} does not match the model's stored hash")
    return vocab


def _classify_program(program, model, vocab):
    if model.kind in training.RECURRENT_KINDS:
        seq = graphenc.lines_to_indices(program, vocab)
        return gnnmodels.recurrent_classify(seq, model)
    graph = graphenc.ast_to_graph(program, vocab)
    return gnnmodels.classify(graph, model)


def _print_json(payload, out=None):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(args) -> int:
    cfg = datagen.GeneratorConfig(seed=args.seed)
    if args.kind == "clf":
        records = datagen.build_classification_dataset(cfg, args.n, args.train_frac)
    else:
        records = datagen.build_segmentation_dataset(cfg, args.n, args.train_frac)
    datagen.write_dataset(args.out, records, cfg, args.kind)
    counts = {s: sum(1 for r in records if r.split == s) for s in ("train", "test")}
    print(f"wrote {len(records)} records to {args.out} (train {counts['train']}, test {counts['test']})")
    return EXIT_OK


def cmd_train(args) -> int:
    kwargs = {}
    if args.lr is not None:
        kwargs["learning_rate"] = args.lr
    if args.max_epochs is not None:
        kwargs["max_epochs"] = args.max_epochs
    if args.patience is not None:
        kwargs["patience"] = args.patience
    results = training.run_sessions(
        args.model, args.data, args.out, sessions=args.sessions, base_seed=args.seed, **kwargs
    )
    for k, r in enumerate(results):
        print(f"session {k} (seed {r.seed}): {len(r.history)} epochs, best test score {r.best_score:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        records, vocab, line_vocab, _meta = datagen.load_dataset(args.data)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliDataError(f"bad dataset directory {args.data}: {exc}") from exc
    test_records = [r for r in records if r.split == "test"] or records
    per_model = []
    for path in args.model:
        model, header = _load_model(path)
        used_vocab = _model_vocab(path, header)
        expected = line_vocab if model.kind in training.RECURRENT_KINDS else vocab
        if used_vocab.sha256() != expected.sha256():
            raise CliDataError(f"model {path} was trained with a different vocabulary than {args.data}")
        if model.kind in training.RECURRENT_KINDS:
            scores = training.eval_recurrent_records(model, test_records, used_vocab)
        elif model.kind.endswith("-seg"):
            scores = training.eval_segmenter_records(model, test_records, used_vocab)
        else:
            scores = training.eval_classifier_records(model, test_records, used_vocab)
        per_model.append({"model": str(path), "kind": model.kind, "metrics": scores})
    keys = sorted(per_model[0]["metrics"])
    report = {
        "n_models": len(per_model),
        "n_test_records": len(test_records),
        "per_model": per_model,
        "mean": {k: float(np.mean([m["metrics"][k] for m in per_model])) for k in keys},
        "std": {k: float(np.std([m["metrics"][k] for m in per_model])) for k in keys},
    }
    _print_json(report, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, header = _load_model(args.model)
    vocab = _model_vocab(args.model, header)
    if model.kind.endswith("-seg"):
        raise CliDataError(f"{args.model} is a segmentation model; use the segment command")
    program = _load_program(args.program)
    probs = _classify_program(program, model, vocab)
    _print_json(
        {
            "p_nonterminating": float(probs[0]),
            "p_terminating": float(probs[1]),
            "verdict": "terminating" if probs[1] >= probs[0] else "nonterminating",
        }
    )
    return EXIT_OK


def cmd_segment(args) -> int:
    model, header = _load_model(args.model)
    if not model.kind.endswith("-seg"):
        raise CliDataError(f"{args.model} is not a segmentation model")
    vocab = _model_vocab(args.model, header)
    program = _load_program(args.program)
    graph = graphenc.ast_to_graph(program, vocab)
    conf = gnnmodels.segment(graph, model)
    _, line_of = lang.render_with_lines(program)
    nodes = {n.node_id: n for n in lang.iter_nodes(program)}
    rows = [
        {
            "node_id": graph.node_origin[i],
            "line": line_of[graph.node_origin[i]],
            "token": lang.node_label(nodes[graph.node_origin[i]]),
            "confidence": float(conf[i]),
            "predicted": bool(conf[i] >= 0.5),
        }
        for i in range(graph.n_nodes)
    ]
    _print_json(rows)
    return EXIT_OK


def cmd_slice(args) -> int:
    program = _load_program(args.program)
    try:
        sliced = slicer.slice_for_loop(program, args.loop)
    except slicer.LoopNotFoundError as exc:
        raise CliDataError(str(exc)) from exc
    sys.stdout.write(lang.pretty_print(sliced))
    return EXIT_OK


def cmd_witness(args) -> int:
    program = _load_program(args.program)
    try:
        found = slicer.find_witness(
            program, args.loop, n_inputs=args.n_inputs, step_budget=args.budget, seed=args.seed
        )
    except slicer.LoopNotFoundError as exc:
        raise CliDataError(str(exc)) from exc
    _print_json({"witness": found})
    return EXIT_OK


def cmd_viz(args) -> int:
    model, header = _load_model(args.model)
    vocab = _model_vocab(args.model, header)
    if model.kind in training.RECURRENT_KINDS:
        raise CliDataError("recurrent models have no graph to visualize")
    program = _load_program(args.program)
    graph = graphenc.ast_to_graph(program, vocab)
    attention = None
    seg_conf = None
    if getattr(model, "attention", False):
        _, attention = gnnmodels.extract_attention(graph, model)
    if model.kind.endswith("-seg"):
        seg_conf = gnnmodels.segment(graph, model)
    dot = emit_dot(graph, program, attention=attention, seg_confidence=seg_conf)
    Path(args.out).write_text(dot, encoding="utf-8")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_debug(args) -> int:
    """Estimate, localize, slice, fuzz: the full nontermination workflow."""
    clf_model, clf_header = _load_model(args.clf)
    clf_vocab = _model_vocab(args.clf, clf_header)
    program = _load_program(args.program)
    probs = _classify_program(program, clf_model, clf_vocab)
    result = {
        "p_nonterminating": float(probs[0]),
        "p_terminating": float(probs[1]),
        "verdict": "terminating" if probs[1] >= probs[0] else "nonterminating",
    }
    if result["verdict"] == "nonterminating":
        seg_model, seg_header = _load_model(args.seg)
        if not seg_model.kind.endswith("-seg"):
            raise CliDataError(f"{args.seg} is not a segmentation model")
        seg_vocab = _model_vocab(args.seg, seg_header)
        graph = graphenc.ast_to_graph(program, seg_vocab)
        conf = gnnmodels.segment(graph, seg_model)
        whiles = [n.node_id for n in lang.iter_nodes(program) if isinstance(n, lang.While)]
        if whiles:
            culprit = max(whiles, key=lambda i: conf[i])
            _, line_of = lang.render_with_lines(program)
            sliced, loop_in_slice = slicer.slice_for_loop_with_target(program, culprit)
            witness = slicer.find_witness(
                sliced, loop_in_slice, n_inputs=args.n_inputs, step_budget=args.budget, seed=args.seed
            )
            result.update(
                {
                    "culprit_node_id": culprit,
                    "culprit_line": line_of[culprit],
                    "culprit_confidence": float(conf[culprit]),
                    "slice": lang.pretty_print(sliced),
                    "witness": witness,
                }
            )
        else:
            result["culprit_node_id"] = None
    _print_json(result)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _load_config(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    ns, _ = pre.parse_known_args(argv)
    if ns.config is None:
        return {}
    try:
        with open(ns.config, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise CliDataError(f"cannot read config {ns.config}: {exc}") from exc


def build_parser(config: dict) -> _Parser:
    parser = _Parser(prog="termgnn", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="TOML file supplying flag defaults per subcommand")
    sub = parser.add_subparsers(dest="command", required=True)

    def new_cmd(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        defaults = {k.replace("-", "_"): v for k, v in config.get(name, {}).items()}
        if defaults:
            p.set_defaults(**defaults)
        return p

    p = new_cmd("gen", cmd_gen, "generate a labeled dataset")
    p.add_argument("--kind", choices=("clf", "seg"), required=True)
    p.add_argument("--n", type=int, required=True, help="total number of records")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--out", required=True)

    p = new_cmd("train", cmd_train, "train seeded sessions on a dataset")
    p.add_argument("--model", choices=gnnmodels.MODEL_KINDS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sessions", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="base seed; session k uses seed+k")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)

    p = new_cmd("eval", cmd_eval, "evaluate saved models on a dataset's test split")
    p.add_argument("--model", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")

    p = new_cmd("predict", cmd_predict, "class probabilities for one program")
    p.add_argument("--model", required=True)
    p.add_argument("program")

    p = new_cmd("segment", cmd_segment, "per-node nontermination confidences")
    p.add_argument("--model", required=True)
    p.add_argument("program")

    p = new_cmd("slice", cmd_slice, "slice a program around a loop")
    p.add_argument("program")
    p.add_argument("--loop", type=int, required=True, help="node_id of the While to isolate")

    p = new_cmd("witness", cmd_witness, "search for an input that exhausts the budget in a loop")
    p.add_argument("program")
    p.add_argument("--loop", type=int, required=True)
    p.add_argument("--n-inputs", type=int, default=interp.DEFAULT_N_INPUTS)
    p.add_argument("--budget", type=int, default=interp.DEFAULT_STEP_BUDGET)
    p.add_argument("--seed", type=int, default=0)

    p = new_cmd("viz", cmd_viz, "render the AST with attention/segmentation as DOT")
    p.add_argument("--model", required=True)
    p.add_argument("program")
    p.add_argument("--out", required=True)

    p = new_cmd("debug", cmd_debug, "classify, localize, slice and fuzz one program")
    p.add_argument("program")
    p.add_argument("--clf", required=True, help="classifier model file")
    p.add_argument("--seg", required=True, help="segmentation model file")
    p.add_argument("--n-inputs", type=int, default=interp.DEFAULT_N_INPUTS)
    p.add_argument("--budget", type=int, default=interp.DEFAULT_STEP_BUDGET)
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = _load_config(argv)
        parser = build_parser(config)
        args = parser.parse_args(argv)
        return args.func(args)
    except CliDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except datagen.GenerationStallError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except training.TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
