"""Backward slicing of MiniImp programs around a misbehaving loop.

Given a loop to blame, the slice keeps exactly the statements that can
influence (a) whether control reaches the loop's entry and (b) the
values of the loop's guard variables, both at entry and across
iterations of the loop body.  Everything that can only execute after
the loop's last possible entry is discarded, as are computations on
unrelated variables.  Unused parameters are dropped from the signature.

The analysis is a def-use closure over the statement list with control
dependence on enclosing guards.  It is conservative: assignments to a
relevant variable are kept even when a later assignment would shadow
them, which can only make slices larger, never change their behavior.
"""

from __future__ import annotations

import random

from . import interp, lang


class LoopNotFoundError(Exception):
    pass


def _subtree_size(node) -> int:
    return 1 + sum(_subtree_size(c) for c in lang.children(node))


def _find_chain(stmts, loop_id, chain):
    """Container chain (outermost first) ending at the target While."""
    for s in stmts:
        if isinstance(s, lang.While):
            if s.node_id == loop_id:
                return chain + [s]
            found = _find_chain(s.body, loop_id, chain + [s])
            if found:
                return found
        elif isinstance(s, lang.If):
            found = _find_chain(s.then, loop_id, chain + [s])
            if found:
                return found
            found = _find_chain(s.orelse, loop_id, chain + [s])
            if found:
                return found
    return None


def _copy_expr(e):
    if isinstance(e, lang.Var):
        return lang.Var(e.name)
    if isinstance(e, lang.IntConst):
        return lang.IntConst(e.value)
    return lang.BinOp(e.op, _copy_expr(e.lhs), _copy_expr(e.rhs))


def slice_for_loop_with_target(p: lang.Program, loop_id: int) -> tuple[lang.Program, int]:
    """Slice p around the While with the given node_id.

    Returns the sliced program together with the target loop's node_id
    inside it (ids are renumbered).
    """
    chain = _find_chain(p.body, loop_id, [])
    if chain is None:
        raise LoopNotFoundError(f"node {loop_id} is not a While statement of this program")
    target = chain[-1]

    # A statement is a candidate if it can execute before some entry of the
    # target loop: anything earlier in pre-order, or anything inside the
    # outermost enclosing While (the back edge re-reaches the target).
    outer_whiles = [s for s in chain if isinstance(s, lang.While)]
    loop_root = outer_whiles[0]  # at least the target itself
    root_lo = loop_root.node_id
    root_hi = root_lo + _subtree_size(loop_root)

    def is_candidate(stmt):
        return stmt.node_id < target.node_id or root_lo <= stmt.node_id < root_hi

    # Relevant variables: the target's guard plus every guard controlling
    # reachability of the target.
    relevant = lang.expr_vars(target.guard)
    for c in chain:
        relevant |= lang.expr_vars(c.guard)
    kept = {s.node_id for s in chain}

    def all_stmts(stmts):
        for s in stmts:
            yield s
            if isinstance(s, lang.While):
                yield from all_stmts(s.body)
            elif isinstance(s, lang.If):
                yield from all_stmts(s.then)
                yield from all_stmts(s.orelse)

    def subtree_has_kept(stmt):
        return any(s.node_id in kept for s in all_stmts([stmt]))

    candidates = [s for s in all_stmts(p.body) if is_candidate(s)]
    changed = True
    while changed:
        changed = False
        for s in candidates:
            if s.node_id in kept:
                continue
            if isinstance(s, lang.Assign):
                if s.target.name in relevant:
                    kept.add(s.node_id)
                    new_vars = lang.expr_vars(s.rhs)
                    if not new_vars <= relevant:
                        relevant |= new_vars
                    changed = True
            elif subtree_has_kept(s):
                kept.add(s.node_id)
                new_vars = lang.expr_vars(s.guard)
                if not new_vars <= relevant:
                    relevant |= new_vars
                changed = True

    target_copy = [None]

    def rebuild(stmts):
        out = []
        for s in stmts:
            if s.node_id not in kept:
                continue
            if isinstance(s, lang.Assign):
                out.append(lang.Assign(lang.Var(s.target.name), s.op, _copy_expr(s.rhs)))
            elif isinstance(s, lang.While):
                copy = lang.While(_copy_expr(s.guard), rebuild(s.body))
                if s is target:
                    target_copy[0] = copy
                out.append(copy)
            else:
                out.append(lang.If(_copy_expr(s.guard), rebuild(s.then), rebuild(s.orelse)))
        return out

    body = rebuild(p.body)
    used = set()
    for s in all_stmts(body):
        if isinstance(s, lang.Assign):
            used.add(s.target.name)
            used |= lang.expr_vars(s.rhs)
        else:
            used |= lang.expr_vars(s.guard)
    params = [lang.Var(v.name) for v in p.params if v.name in used]
    sliced = lang.assign_node_ids(lang.Program(p.name, params, body))
    return sliced, target_copy[0].node_id


def slice_for_loop(p: lang.Program, loop_id: int) -> lang.Program:
    """Smaller program preserving the target loop's (non)termination behavior."""
    sliced, _ = slice_for_loop_with_target(p, loop_id)
    return sliced


def find_witness(
    p: lang.Program,
    loop_id: int,
    n_inputs: int = interp.DEFAULT_N_INPUTS,
    step_budget: int = interp.DEFAULT_STEP_BUDGET,
    seed: int = 0,
    input_range=interp.DEFAULT_INPUT_RANGE,
) -> dict[str, int] | None:
    """First sampled input that exhausts the budget with the loop implicated."""
    node = lang.node_by_id(p, loop_id)
    if not isinstance(node, lang.While):
        raise LoopNotFoundError(f"node {loop_id} is not a While statement of this program")
    rng = random.Random(seed)
    names = [v.name for v in p.params]
    for _ in range(n_inputs):
        vec = interp.sample_inputs(names, rng, input_range)
        outcome = interp.run(p, vec, step_budget)
        if isinstance(outcome, interp.BudgetExhausted) and loop_id in interp.implicated_loops(outcome, step_budget):
            return vec
    return None
