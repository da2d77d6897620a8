"""Deterministic MiniImp interpreter and the budget-based labeling oracle.

Arithmetic is two's-complement wrapping on 64 bits, so `a += 1` applied
forever eventually overflows instead of erroring.  Execution is metered:
one step per statement execution or guard evaluation.  A run either
terminates within the step budget or is cut off, in which case the
per-loop guard-visit counts tell us where the time went.

Labels come from fuzzing: sample input vectors until one exhausts the
budget (program is nonterminating, the dominating outermost loop is the
culprit) or all of them finish (terminating).  Budget exhaustion is an
approximation of nontermination and deliberately counts astronomically
slow loops (e.g. ones that only stop via 64-bit wrap-around) as
nonterminating: the labels it produces *define* the learning task.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import lang

DEFAULT_STEP_BUDGET = 100_000
DEFAULT_N_INPUTS = 100
DEFAULT_INPUT_RANGE = (-1000, 1000)

# A loop is implicated in an exhausted run when its guard was visited at
# least this often, or at least half of all steps.
VISIT_FLOOR = 10_000
VISIT_SHARE = 0.5

_MASK = (1 << 64) - 1
_SIGN = 1 << 63


def wrap64(v: int) -> int:
    """Reduce an unbounded int to signed 64-bit two's complement."""
    v &= _MASK
    return v - (1 << 64) if v & _SIGN else v


class MissingInputError(Exception):
    pass


class UnboundVariableError(Exception):
    pass


@dataclass(frozen=True)
class Terminated:
    steps: int


@dataclass(frozen=True)
class BudgetExhausted:
    loop_visits: dict[int, int]  # While node_id -> guard evaluations


Outcome = Terminated | BudgetExhausted


@dataclass(frozen=True)
class Terminating:
    pass


@dataclass(frozen=True)
class Nonterminating:
    culprit_loop: int
    witness: dict[str, int]


Label = Terminating | Nonterminating


class _OutOfBudget(Exception):
    pass


def _compile_expr(e):
    if isinstance(e, lang.IntConst):
        v = wrap64(e.value)
        return lambda env: v
    if isinstance(e, lang.Var):
        name = e.name
        def read(env):
            try:
                return env[name]
            except KeyError:
                raise UnboundVariableError(name) from None
        return read
    lhs = _compile_expr(e.lhs)
    rhs = _compile_expr(e.rhs)
    op = e.op
    if op == "+":
        return lambda env: wrap64(lhs(env) + rhs(env))
    if op == "-":
        return lambda env: wrap64(lhs(env) - rhs(env))
    if op == "*":
        return lambda env: wrap64(lhs(env) * rhs(env))
    if op == ">":
        return lambda env: lhs(env) > rhs(env)
    if op == "<":
        return lambda env: lhs(env) < rhs(env)
    if op == ">=":
        return lambda env: lhs(env) >= rhs(env)
    if op == "<=":
        return lambda env: lhs(env) <= rhs(env)
    if op == "==":
        return lambda env: lhs(env) == rhs(env)
    if op == "!=":
        return lambda env: lhs(env) != rhs(env)
    raise ValueError(f"unknown operator {op!r}")


def run(p: lang.Program, inputs: dict[str, int], step_budget: int = DEFAULT_STEP_BUDGET) -> Outcome:
    """Execute p on the given inputs under a step budget.

    Pure: the outcome depends only on (p, inputs, step_budget).
    """
    if step_budget < 1:
        raise ValueError("step_budget must be >= 1")
    env = {}
    for v in p.params:
        if v.name not in inputs:
            raise MissingInputError(f"no input for parameter {v.name!r}")
        env[v.name] = wrap64(int(inputs[v.name]))

    state = [0]  # steps used
    visits: dict[int, int] = {}

    def step():
        state[0] += 1
        if state[0] > step_budget:
            raise _OutOfBudget

    def compile_block(stmts):
        closures = [compile_stmt(s) for s in stmts]
        def do(env):
            for c in closures:
                c(env)
        return do

    def compile_stmt(s):
        if isinstance(s, lang.Assign):
            rhs = _compile_expr(s.rhs)
            name = s.target.name
            op = s.op
            if op == "=":
                def do(env):
                    step()
                    env[name] = rhs(env)
            elif op == "+=":
                def do(env):
                    step()
                    env[name] = wrap64(env[name] + rhs(env))
            elif op == "-=":
                def do(env):
                    step()
                    env[name] = wrap64(env[name] - rhs(env))
            else:  # *=
                def do(env):
                    step()
                    env[name] = wrap64(env[name] * rhs(env))
            return do
        if isinstance(s, lang.While):
            guard = _compile_expr(s.guard)
            body = compile_block(s.body)
            loop_id = s.node_id
            visits[loop_id] = 0
            def do(env):
                while True:
                    step()
                    visits[loop_id] += 1
                    if not guard(env):
                        return
                    body(env)
            return do
        if isinstance(s, lang.If):
            guard = _compile_expr(s.guard)
            then = compile_block(s.then)
            orelse = compile_block(s.orelse)
            def do(env):
                step()
                if guard(env):
                    then(env)
                else:
                    orelse(env)
            return do
        raise TypeError(f"not a statement: {s!r}")

    try:
        compile_block(p.body)(env)
    except _OutOfBudget:
        return BudgetExhausted(loop_visits=dict(visits))
    return Terminated(steps=state[0])


def loop_depths(p: lang.Program) -> dict[int, int]:
    """While node_id -> nesting depth (0 = not inside any loop)."""
    depths: dict[int, int] = {}

    def walk(stmts, depth):
        for s in stmts:
            if isinstance(s, lang.While):
                depths[s.node_id] = depth
                walk(s.body, depth + 1)
            elif isinstance(s, lang.If):
                walk(s.then, depth)
                walk(s.orelse, depth)

    walk(p.body, 0)
    return depths


def implicated_loops(outcome: BudgetExhausted, step_budget: int) -> list[int]:
    """Loops whose guard visits dominate an exhausted run."""
    return sorted(
        node_id
        for node_id, count in outcome.loop_visits.items()
        if count >= VISIT_SHARE * step_budget or count > VISIT_FLOOR
    )


def culprit_loop(p: lang.Program, outcome: BudgetExhausted, step_budget: int) -> int:
    """Outermost implicated loop; ties broken by smallest node_id.

    If no loop crosses the threshold (many moderately busy loops sharing
    the budget), fall back to the most-visited loop.
    """
    depths = loop_depths(p)
    pool = implicated_loops(outcome, step_budget)
    if not pool:
        top = max(outcome.loop_visits.values())
        pool = [i for i, c in outcome.loop_visits.items() if c == top]
    return min(pool, key=lambda i: (depths[i], i))


def sample_inputs(params: list[str], rng: random.Random, input_range=DEFAULT_INPUT_RANGE) -> dict[str, int]:
    lo, hi = input_range
    return {name: rng.randint(lo, hi) for name in params}


def fuzz_label(
    p: lang.Program,
    n_inputs: int = DEFAULT_N_INPUTS,
    step_budget: int = DEFAULT_STEP_BUDGET,
    seed: int = 0,
    input_range=DEFAULT_INPUT_RANGE,
) -> Label:
    """Fuzz p with uniform inputs; stop at the first exhausted run.

    The witness input and the culprit loop of that first run become the
    label.  All runs terminating within budget labels p Terminating.
    """
    if n_inputs < 1:
        raise ValueError("n_inputs must be >= 1")
    rng = random.Random(seed)
    names = [v.name for v in p.params]
    for _ in range(n_inputs):
        vec = sample_inputs(names, rng, input_range)
        outcome = run(p, vec, step_budget)
        if isinstance(outcome, BudgetExhausted):
            return Nonterminating(culprit_loop=culprit_loop(p, outcome, step_budget), witness=vec)
    return Terminating()
