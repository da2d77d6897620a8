"""Probabilistic program generation and labeled dataset construction.

Programs draw 2..max_params integer parameters and contain a sampled
number of loops (nested up to a configured depth), separated by
straight-line statements and occasional conditionals.  Every loop body
updates its guard variable; the update direction is sampled so that
some loops walk toward their bound and terminate while others walk
away, reset the variable past the bound, or couple two variables, so
both termination classes arise and are non-trivially entangled with
the syntax.

Datasets are labeled by the fuzzing oracle.  Classification datasets
are exactly class-balanced (graph label 0 = nonterminating, 1 =
terminating); segmentation datasets keep only nonterminating programs
and mark the culprit loop's node in a full per-node mask.  Identical
(config, seed) always reproduce byte-identical files.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, asdict
from pathlib import Path

from . import graphenc, interp, lang

PARAM_NAMES = ("a", "b", "c", "d", "e", "f")

# Shape tunables.  Each program decides up front how many of its loops
# get a divergent update pattern; the rest walk toward their bound.
# Extra statements, conditionals and resets between loops still flip
# individual outcomes both ways, so the fuzz label stays the ground
# truth and the syntax is only strongly, not perfectly, predictive.
N_DIVERGENT_WEIGHTS = ((0, 0.50), (1, 0.45), (2, 0.05))
TERMINATING_STYLE_WEIGHTS = (
    ("toward", 0.70),
    ("coupled_shrink", 0.14),
    ("reset_low", 0.10),
    ("mult_exit", 0.06),
)
DIVERGENT_STYLE_WEIGHTS = (
    ("away", 0.45),
    ("reset_high", 0.27),
    ("coupled_grow", 0.15),
    ("stride_miss", 0.13),
)
RELOP_WEIGHTS = ((">", 0.44), ("<", 0.44), (">=", 0.06), ("<=", 0.06))
P_CONST_BOUND = 0.45
P_NEST = 0.4
P_IF_IN_LOOP = 0.15
P_EXTRA_STMT = 0.5
P_EXTRA_HITS_GUARD = 0.15
P_TRAILING_IF = 0.1


class GenerationStallError(Exception):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    min_loops: int = 2
    max_loops: int = 5
    max_nesting: int = 3
    max_params: int = 4
    straight_line_stmt_range: tuple[int, int] = (0, 2)
    constant_range: tuple[int, int] = (-10, 10)
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.min_loops <= self.max_loops):
            raise ValueError("need 1 <= min_loops <= max_loops")
        if self.max_nesting < 1:
            raise ValueError("max_nesting must be >= 1")
        if self.max_params < 2:
            raise ValueError("max_params must be >= 2")


@dataclass
class DatasetRecord:
    source: str
    graph_label: int  # 0 = nonterminating, 1 = terminating
    seg_mask: dict[int, int] | None
    gen_seed: int
    split: str  # "train" or "test"

    def to_json_line(self) -> str:
        payload = {"source": self.source, "graph_label": self.graph_label}
        if self.seg_mask is not None:
            payload["seg_mask"] = {str(k): v for k, v in sorted(self.seg_mask.items())}
        payload["gen_seed"] = self.gen_seed
        payload["split"] = self.split
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "DatasetRecord":
        raw = json.loads(line)
        mask = raw.get("seg_mask")
        if mask is not None:
            mask = {int(k): int(v) for k, v in mask.items()}
        return cls(
            source=raw["source"],
            graph_label=int(raw["graph_label"]),
            seg_mask=mask,
            gen_seed=int(raw["gen_seed"]),
            split=raw["split"],
        )

    def program(self) -> lang.Program:
        return lang.parse(self.source)


def _weighted(rng: random.Random, table) -> str:
    roll = rng.random()
    acc = 0.0
    for name, w in table:
        acc += w
        if roll < acc:
            return name
    return table[-1][0]


def _const(rng: random.Random, cfg: GeneratorConfig) -> int:
    return rng.randint(*cfg.constant_range)


def _step_const(rng: random.Random) -> int:
    return rng.randint(1, 5)


class _Gen:
    def __init__(self, rng: random.Random, cfg: GeneratorConfig, names: list[str], divergent_slots: set[int]):
        self.rng = rng
        self.cfg = cfg
        self.names = names
        self.divergent_slots = divergent_slots
        self.loop_counter = 0

    def var(self, avoid: str | None = None) -> str:
        pool = [n for n in self.names if n != avoid] or self.names
        return self.rng.choice(pool)

    def straight_line(self, no_eq: str | None = None) -> lang.Assign:
        rng = self.rng
        target = self.var()
        style = rng.random()
        if style < 0.5 and target != no_eq:
            return lang.Assign(lang.Var(target), "=", lang.IntConst(_const(rng, self.cfg)))
        if style < 0.8 or target == no_eq:
            op = rng.choice(("+=", "-="))
            return lang.Assign(lang.Var(target), op, lang.IntConst(_step_const(rng)))
        other = self.var(avoid=target)
        rhs = lang.BinOp(rng.choice(("+", "-")), lang.Var(other), lang.IntConst(_step_const(rng)))
        return lang.Assign(lang.Var(target), "=", rhs)

    def terminating_update(self, guard_var: str, relop: str, bound) -> list[lang.Stmt]:
        """Updates that close the guard on their own (absent interference)."""
        rng = self.rng
        style = _weighted(rng, TERMINATING_STYLE_WEIGHTS)
        toward_op = "-=" if relop in (">", ">=") else "+="
        away_op = "+=" if toward_op == "-=" else "-="
        upper = relop in (">", ">=")
        if style == "coupled_shrink" and isinstance(bound, lang.Var):
            mine = rng.randint(2, 5)
            if rng.random() < 0.5:
                # bound walks to meet the variable
                return [
                    lang.Assign(lang.Var(guard_var), toward_op, lang.IntConst(mine)),
                    lang.Assign(lang.Var(bound.name), away_op, lang.IntConst(rng.randint(1, 5))),
                ]
            # bound flees, but slower than the variable closes in
            return [
                lang.Assign(lang.Var(guard_var), toward_op, lang.IntConst(mine)),
                lang.Assign(lang.Var(bound.name), toward_op, lang.IntConst(rng.randint(1, mine - 1))),
            ]
        if style == "reset_low" and isinstance(bound, lang.IntConst):
            # jump straight past the bound: exits after one iteration
            delta = rng.randint(0, 3)
            value = bound.value - delta if upper else bound.value + delta
            if (relop in (">", "<")) or delta > 0:
                return [lang.Assign(lang.Var(guard_var), "=", lang.IntConst(value))]
        if style == "mult_exit" and isinstance(bound, lang.IntConst) and (bound.value >= 0) == upper:
            # doubling wraps through zero and lands on the exit side
            return [lang.Assign(lang.Var(guard_var), "*=", lang.IntConst(2))]
        return [lang.Assign(lang.Var(guard_var), toward_op, lang.IntConst(_step_const(rng)))]

    def divergent_update(self, guard_var: str, relop: str, bound) -> tuple[str, list[lang.Stmt]]:
        """Updates with at least one input class that never reaches the bound.

        Returns (relop, statements): the stride_miss style rewrites the
        guard to an inequality test the stride can step over.
        """
        rng = self.rng
        style = _weighted(rng, DIVERGENT_STYLE_WEIGHTS)
        toward_op = "-=" if relop in (">", ">=") else "+="
        away_op = "+=" if toward_op == "-=" else "-="
        upper = relop in (">", ">=")
        if style == "stride_miss":
            op = rng.choice(("+=", "-="))
            return "!=", [lang.Assign(lang.Var(guard_var), op, lang.IntConst(rng.choice((1, 2, 2))))]
        if style == "reset_high":
            if isinstance(bound, lang.IntConst):
                delta = rng.randint(1, 4)
                value = bound.value + delta if upper else bound.value - delta
            else:
                value = _const(rng, self.cfg)
            return relop, [lang.Assign(lang.Var(guard_var), "=", lang.IntConst(value))]
        if style == "coupled_grow" and isinstance(bound, lang.Var):
            mine = rng.randint(1, 4)
            return relop, [
                lang.Assign(lang.Var(guard_var), toward_op, lang.IntConst(mine)),
                lang.Assign(lang.Var(bound.name), toward_op, lang.IntConst(rng.randint(mine + 1, 6))),
            ]
        return relop, [lang.Assign(lang.Var(guard_var), away_op, lang.IntConst(_step_const(rng)))]

    def if_stmt(self) -> lang.If:
        rng = self.rng
        guard = lang.BinOp(
            rng.choice((">", "<")), lang.Var(self.var()), lang.IntConst(_const(rng, self.cfg))
        )
        return lang.If(guard, [self.straight_line()], [self.straight_line()] if rng.random() < 0.7 else [])

    def loop(self, level: int, budget: int) -> tuple[lang.While, int]:
        """One loop subtree; returns it plus the number of loops consumed."""
        rng = self.rng
        slot = self.loop_counter
        self.loop_counter += 1
        used = 1
        guard_var = self.var()
        relop = _weighted(rng, RELOP_WEIGHTS)
        if rng.random() < P_CONST_BOUND:
            bound = lang.IntConst(_const(rng, self.cfg))
        else:
            bound = lang.Var(self.var(avoid=guard_var))

        body: list[lang.Stmt] = []
        if budget - used > 0 and level < self.cfg.max_nesting and rng.random() < P_NEST:
            inner, inner_used = self.loop(level + 1, budget - used)
            used += inner_used
            body.append(inner)
        if slot in self.divergent_slots:
            relop, updates = self.divergent_update(guard_var, relop, bound)
        else:
            updates = self.terminating_update(guard_var, relop, bound)
        body.extend(updates)
        if rng.random() < P_EXTRA_STMT:
            if rng.random() < P_IF_IN_LOOP:
                body.append(self.if_stmt())
            else:
                no_eq = None if rng.random() < P_EXTRA_HITS_GUARD else guard_var
                body.append(self.straight_line(no_eq=no_eq))
        rng.shuffle(body)
        guard = lang.BinOp(relop, lang.Var(guard_var), bound)
        return lang.While(guard, body), used

    def block(self, n_loops: int) -> list[lang.Stmt]:
        rng = self.rng
        lo, hi = self.cfg.straight_line_stmt_range
        stmts: list[lang.Stmt] = []
        remaining = n_loops
        while remaining > 0:
            for _ in range(rng.randint(lo, hi)):
                stmts.append(self.straight_line())
            loop, used = self.loop(1, remaining)
            stmts.append(loop)
            remaining -= used
        for _ in range(rng.randint(lo, hi)):
            stmts.append(self.straight_line())
        if rng.random() < P_TRAILING_IF:
            stmts.append(self.if_stmt())
        return stmts


def generate_program(cfg: GeneratorConfig, seed: int) -> lang.Program:
    """Sample one program; identical (cfg, seed) give identical sources."""
    rng = random.Random(seed)
    n_params = rng.randint(2, cfg.max_params)
    names = list(PARAM_NAMES[:n_params])
    n_loops = rng.randint(cfg.min_loops, cfg.max_loops)
    n_div = min(_weighted(rng, N_DIVERGENT_WEIGHTS), n_loops)
    divergent_slots = set(rng.sample(range(n_loops), n_div))
    gen = _Gen(rng, cfg, names, divergent_slots)
    body = gen.block(n_loops)
    program = lang.Program("main", [lang.Var(n) for n in names], body)
    return lang.assign_node_ids(program)


def count_loops(p: lang.Program) -> int:
    return sum(1 for n in lang.iter_nodes(p) if isinstance(n, lang.While))


def _mix(seed: int, salt: int) -> int:
    return (seed * 1_000_003 + salt) % (1 << 62)


def build_classification_dataset(
    cfg: GeneratorConfig,
    n_total: int,
    split_ratio: float = 0.8,
    n_inputs: int = interp.DEFAULT_N_INPUTS,
    step_budget: int = interp.DEFAULT_STEP_BUDGET,
    input_range=interp.DEFAULT_INPUT_RANGE,
) -> list[DatasetRecord]:
    """Generate and fuzz-label programs until both classes are filled.

    The result holds exactly n_total/2 records of each class; each class
    is split train/test by split_ratio, so both splits stay balanced.
    """
    if n_total % 2 != 0:
        raise ValueError("n_total must be even for a balanced dataset")
    per_class = n_total // 2
    train_per_class = round(split_ratio * per_class)
    buckets: dict[int, list[DatasetRecord]] = {0: [], 1: []}
    attempts = 0
    while len(buckets[0]) < per_class or len(buckets[1]) < per_class:
        if attempts >= 50 * n_total:
            raise GenerationStallError(
                f"could not balance {n_total} samples within {attempts} attempts "
                f"({len(buckets[0])} nonterminating / {len(buckets[1])} terminating so far)"
            )
        gen_seed = _mix(cfg.seed, attempts)
        attempts += 1
        program = generate_program(cfg, gen_seed)
        label = interp.fuzz_label(
            program, n_inputs=n_inputs, step_budget=step_budget, seed=_mix(gen_seed, 1), input_range=input_range
        )
        y = 1 if isinstance(label, interp.Terminating) else 0
        if len(buckets[y]) < per_class:
            buckets[y].append(
                DatasetRecord(
                    source=lang.pretty_print(program),
                    graph_label=y,
                    seg_mask=None,
                    gen_seed=gen_seed,
                    split="train" if len(buckets[y]) < train_per_class else "test",
                )
            )
    records = []
    for i in range(per_class):
        records.append(buckets[0][i])
        records.append(buckets[1][i])
    return records


def build_segmentation_dataset(
    cfg: GeneratorConfig,
    n_total: int,
    split_ratio: float = 0.8,
    n_inputs: int = interp.DEFAULT_N_INPUTS,
    step_budget: int = interp.DEFAULT_STEP_BUDGET,
    input_range=interp.DEFAULT_INPUT_RANGE,
) -> list[DatasetRecord]:
    """Nonterminating programs only; the culprit loop is the single 1 node."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    n_train = round(split_ratio * n_total)
    records: list[DatasetRecord] = []
    attempts = 0
    while len(records) < n_total:
        if attempts >= 50 * n_total:
            raise GenerationStallError(
                f"only {len(records)} nonterminating samples after {attempts} attempts"
            )
        gen_seed = _mix(cfg.seed, attempts)
        attempts += 1
        program = generate_program(cfg, gen_seed)
        label = interp.fuzz_label(
            program, n_inputs=n_inputs, step_budget=step_budget, seed=_mix(gen_seed, 1), input_range=input_range
        )
        if not isinstance(label, interp.Nonterminating):
            continue
        n_nodes = sum(1 for _ in lang.iter_nodes(program))
        mask = {i: 0 for i in range(n_nodes)}
        mask[label.culprit_loop] = 1
        records.append(
            DatasetRecord(
                source=lang.pretty_print(program),
                graph_label=0,
                seg_mask=mask,
                gen_seed=gen_seed,
                split="train" if len(records) < n_train else "test",
            )
        )
    return records


# ---------------------------------------------------------------------------
# On-disk layout: dataset.jsonl + vocab.json + line_vocab.json + meta.json

DATASET_FILE = "dataset.jsonl"
VOCAB_FILE = "vocab.json"
LINE_VOCAB_FILE = "line_vocab.json"
META_FILE = "meta.json"


def save_records(records: list[DatasetRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json_line())
            fh.write("\n")


def load_records(path) -> list[DatasetRecord]:
    with open(path, encoding="utf-8") as fh:
        return [DatasetRecord.from_json_line(line) for line in fh if line.strip()]


def write_dataset(outdir, records: list[DatasetRecord], cfg: GeneratorConfig, kind: str) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_records(records, outdir / DATASET_FILE)
    programs = [r.program() for r in records]
    vocab = graphenc.build_vocab(programs)
    vocab.save(outdir / VOCAB_FILE)
    line_vocab = graphenc.build_line_vocab(programs)
    line_vocab.save(outdir / LINE_VOCAB_FILE)
    counts = {
        "total": len(records),
        "train": sum(1 for r in records if r.split == "train"),
        "test": sum(1 for r in records if r.split == "test"),
        "terminating": sum(1 for r in records if r.graph_label == 1),
        "nonterminating": sum(1 for r in records if r.graph_label == 0),
    }
    meta = {
        "kind": kind,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "counts": counts,
        "dataset_file": DATASET_FILE,
        "vocab_file": VOCAB_FILE,
        "line_vocab_file": LINE_VOCAB_FILE,
    }
    with open(outdir / META_FILE, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_dataset(datadir):
    """Returns (records, vocab, line_vocab, meta)."""
    datadir = Path(datadir)
    with open(datadir / META_FILE, encoding="utf-8") as fh:
        meta = json.load(fh)
    records = load_records(datadir / meta["dataset_file"])
    vocab = graphenc.Vocabulary.load(datadir / meta["vocab_file"])
    line_vocab = graphenc.Vocabulary.load(datadir / meta["line_vocab_file"])
    return records, vocab, line_vocab, meta
