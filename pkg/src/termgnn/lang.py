"""MiniImp: a tiny imperative language over 64-bit integers.

The surface syntax is indentation based:

    def main(a, b):
        while a > b:
            a -= 2

Programs consist of a single `def` header followed by assignments,
`while` loops and `if`/`else` conditionals.  Guards are a single
comparison; everything else is integer arithmetic over variables and
constants.  There are no calls, arrays or floats.

Every AST node carries a `node_id` assigned in pre-order (root = 0,
then parameters, then statements and their expression subtrees), so a
program maps 1:1 onto a graph whose node indices equal the ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

ARITH_OPS = ("+", "-", "*")
CMP_OPS = (">", "<", ">=", "<=", "==", "!=")
ASSIGN_OPS = ("=", "+=", "-=", "*=")

INDENT_WIDTH = 4


class LangError(Exception):
    """Base class for lexing, parsing and validation failures."""


class MiniImpSyntaxError(LangError):
    def __init__(self, msg, line, col):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


class DuplicateParamError(LangError):
    pass


class UseBeforeAssignError(LangError):
    pass


# ---------------------------------------------------------------------------
# AST
#
# node_id is excluded from equality: two trees compare equal when they are
# structurally identical, regardless of how ids were assigned.


@dataclass(eq=True)
class Var:
    name: str
    node_id: int = field(default=-1, compare=False)


@dataclass(eq=True)
class IntConst:
    value: int
    node_id: int = field(default=-1, compare=False)


@dataclass(eq=True)
class BinOp:
    op: str
    lhs: "Expr"
    rhs: "Expr"
    node_id: int = field(default=-1, compare=False)


Expr = Var | IntConst | BinOp


@dataclass(eq=True)
class Assign:
    target: Var
    op: str  # one of ASSIGN_OPS
    rhs: Expr
    node_id: int = field(default=-1, compare=False)


@dataclass(eq=True)
class While:
    guard: BinOp
    body: list["Stmt"]
    node_id: int = field(default=-1, compare=False)


@dataclass(eq=True)
class If:
    guard: BinOp
    then: list["Stmt"]
    orelse: list["Stmt"]
    node_id: int = field(default=-1, compare=False)


Stmt = Assign | While | If


@dataclass(eq=True)
class Program:
    name: str
    params: list[Var]
    body: list[Stmt]
    node_id: int = field(default=0, compare=False)


def children(node) -> list:
    """AST children of a node, in syntactic order."""
    if isinstance(node, Program):
        return list(node.params) + list(node.body)
    if isinstance(node, While):
        return [node.guard] + list(node.body)
    if isinstance(node, If):
        return [node.guard] + list(node.then) + list(node.orelse)
    if isinstance(node, Assign):
        return [node.target, node.rhs]
    if isinstance(node, BinOp):
        return [node.lhs, node.rhs]
    return []


def iter_nodes(p: Program):
    """Pre-order iterator over every node of the program."""
    stack = [p]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def assign_node_ids(p: Program) -> Program:
    """(Re)number all nodes pre-order starting at 0.  Mutates and returns p."""
    for i, node in enumerate(iter_nodes(p)):
        node.node_id = i
    return p


def node_by_id(p: Program, node_id: int):
    for node in iter_nodes(p):
        if node.node_id == node_id:
            return node
    raise KeyError(f"no node with id {node_id}")


def parent_map(p: Program) -> dict[int, int]:
    """node_id -> parent node_id (root absent)."""
    parents = {}
    for node in iter_nodes(p):
        for child in children(node):
            parents[child.node_id] = node.node_id
    return parents


def token_key(node) -> tuple[str, str]:
    """(kind, lexeme) pair identifying a node for one-hot encoding.

    Identical tokens anywhere in a dataset share a key: every `d` is
    (Var, "d"), every `-=` assignment is (Assign, "-="), and so on.
    """
    if isinstance(node, Program):
        return ("Program", "")
    if isinstance(node, Var):
        return ("Var", node.name)
    if isinstance(node, IntConst):
        return ("IntConst", str(node.value))
    if isinstance(node, BinOp):
        return ("BinOp", node.op)
    if isinstance(node, Assign):
        return ("Assign", node.op)
    if isinstance(node, While):
        return ("While", "")
    if isinstance(node, If):
        return ("If", "")
    raise TypeError(f"not an AST node: {node!r}")


def node_label(node) -> str:
    """Short human-readable text for graph rendering."""
    if isinstance(node, Program):
        return f"def {node.name}"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, IntConst):
        return str(node.value)
    if isinstance(node, BinOp):
        return node.op
    if isinstance(node, Assign):
        return node.op
    if isinstance(node, While):
        return "while"
    if isinstance(node, If):
        return "if"
    raise TypeError(f"not an AST node: {node!r}")


def expr_vars(e: Expr) -> set[str]:
    out = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, BinOp):
            stack.append(n.lhs)
            stack.append(n.rhs)
    return out


# ---------------------------------------------------------------------------
# Lexer

_KEYWORDS = {"def", "while", "if", "else", "pass"}
_SYMBOLS = ("+=", "-=", "*=", ">=", "<=", "==", "!=", ">", "<", "=", "+", "-", "*", "(", ")", ",", ":")


@dataclass
class _Tok:
    kind: str  # NAME INT SYM NEWLINE INDENT DEDENT EOF or a keyword
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    indents = [0]
    lineno = 0
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue  # blank and comment-only lines carry no indentation
        stripped = line.lstrip(" ")
        if "\t" in raw[: len(raw) - len(raw.lstrip())]:
            raise MiniImpSyntaxError("tabs are not allowed in indentation", lineno, 1)
        width = len(line) - len(stripped)
        if width > indents[-1]:
            indents.append(width)
            toks.append(_Tok("INDENT", "", lineno, 1))
        else:
            while width < indents[-1]:
                indents.pop()
                toks.append(_Tok("DEDENT", "", lineno, 1))
            if width != indents[-1]:
                raise MiniImpSyntaxError("unindent does not match any outer level", lineno, width + 1)
        col = width
        i = 0
        text = stripped
        while i < len(text):
            c = text[i]
            if c == " ":
                i += 1
                continue
            start_col = col + i + 1
            if c.isalpha() or c == "_":
                j = i
                while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                word = text[i:j]
                toks.append(_Tok(word if word in _KEYWORDS else "NAME", word, lineno, start_col))
                i = j
                continue
            if c.isdigit():
                j = i
                while j < len(text) and text[j].isdigit():
                    j += 1
                toks.append(_Tok("INT", text[i:j], lineno, start_col))
                i = j
                continue
            for sym in _SYMBOLS:
                if text.startswith(sym, i):
                    toks.append(_Tok("SYM", sym, lineno, start_col))
                    i += len(sym)
                    break
            else:
                raise MiniImpSyntaxError(f"unexpected character {c!r}", lineno, start_col)
        toks.append(_Tok("NEWLINE", "", lineno, col + len(text) + 1))
    while len(indents) > 1:
        indents.pop()
        toks.append(_Tok("DEDENT", "", lineno if toks else 1, 1))
    last_line = toks[-1].line if toks else 1
    toks.append(_Tok("EOF", "", last_line + 1, 1))
    return toks


# ---------------------------------------------------------------------------
# Parser (recursive descent)


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.pos = 0

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def advance(self) -> _Tok:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def fail(self, msg):
        tok = self.peek()
        shown = tok.text or tok.kind
        raise MiniImpSyntaxError(f"{msg} (got {shown!r})", tok.line, tok.col)

    def expect(self, kind, text=None) -> _Tok:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            self.fail(f"expected {text or kind}")
        return self.advance()

    def accept_sym(self, text) -> bool:
        tok = self.peek()
        if tok.kind == "SYM" and tok.text == text:
            self.advance()
            return True
        return False

    def parse_program(self) -> Program:
        self.expect("def")
        name = self.expect("NAME").text
        self.expect("SYM", "(")
        params: list[Var] = []
        if not self.accept_sym(")"):
            params.append(Var(self.expect("NAME").text))
            while self.accept_sym(","):
                params.append(Var(self.expect("NAME").text))
            self.expect("SYM", ")")
        self.expect("SYM", ":")
        self.expect("NEWLINE")
        body: list[Stmt] = []
        if self.peek().kind == "INDENT":
            body = self.parse_suite()
        self.expect("EOF")
        return Program(name, params, body)

    def parse_suite(self) -> list[Stmt]:
        self.expect("INDENT")
        stmts: list[Stmt] = []
        while self.peek().kind != "DEDENT":
            stmt = self.parse_stmt()
            if stmt is not None:
                stmts.append(stmt)
        self.expect("DEDENT")
        return stmts

    def parse_stmt(self) -> Stmt | None:
        tok = self.peek()
        if tok.kind == "pass":
            self.advance()
            self.expect("NEWLINE")
            return None
        if tok.kind == "while":
            self.advance()
            guard = self.parse_guard()
            self.expect("SYM", ":")
            self.expect("NEWLINE")
            body = self.parse_suite() if self.peek().kind == "INDENT" else []
            return While(guard, body)
        if tok.kind == "if":
            self.advance()
            guard = self.parse_guard()
            self.expect("SYM", ":")
            self.expect("NEWLINE")
            then = self.parse_suite() if self.peek().kind == "INDENT" else []
            orelse: list[Stmt] = []
            if self.peek().kind == "else":
                self.advance()
                self.expect("SYM", ":")
                self.expect("NEWLINE")
                orelse = self.parse_suite() if self.peek().kind == "INDENT" else []
            return If(guard, then, orelse)
        if tok.kind == "NAME":
            target = Var(self.advance().text)
            op_tok = self.peek()
            if op_tok.kind != "SYM" or op_tok.text not in ASSIGN_OPS:
                self.fail("expected an assignment operator")
            self.advance()
            rhs = self.parse_arith()
            self.expect("NEWLINE")
            return Assign(target, op_tok.text, rhs)
        self.fail("expected a statement")

    def parse_guard(self) -> BinOp:
        lhs = self.parse_arith()
        tok = self.peek()
        if tok.kind != "SYM" or tok.text not in CMP_OPS:
            self.fail("expected a comparison operator")
        op = self.advance().text
        rhs = self.parse_arith()
        return BinOp(op, lhs, rhs)

    def parse_arith(self) -> Expr:
        node = self.parse_term()
        while True:
            tok = self.peek()
            if tok.kind == "SYM" and tok.text in ("+", "-"):
                self.advance()
                node = BinOp(tok.text, node, self.parse_term())
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_atom()
        while True:
            tok = self.peek()
            if tok.kind == "SYM" and tok.text == "*":
                self.advance()
                node = BinOp("*", node, self.parse_atom())
            else:
                return node

    def parse_atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "SYM" and tok.text == "-":
            # unary minus is only allowed on literals and folds into them
            self.advance()
            lit = self.expect("INT")
            return IntConst(-int(lit.text))
        if tok.kind == "INT":
            self.advance()
            return IntConst(int(tok.text))
        if tok.kind == "NAME":
            self.advance()
            return Var(tok.text)
        if tok.kind == "SYM" and tok.text == "(":
            self.advance()
            node = self.parse_arith()
            self.expect("SYM", ")")
            return node
        self.fail("expected an expression")


def validate(p: Program) -> Program:
    """Check the static invariants; returns p unchanged."""
    seen = set()
    for v in p.params:
        if v.name in seen:
            raise DuplicateParamError(f"duplicate parameter {v.name!r}")
        seen.add(v.name)
    assigned = set(seen)

    def check_read(name):
        if name not in assigned:
            raise UseBeforeAssignError(f"variable {name!r} read before any assignment")

    def walk(stmts):
        for s in stmts:
            if isinstance(s, Assign):
                for name in expr_vars(s.rhs):
                    check_read(name)
                if s.op != "=":
                    check_read(s.target.name)
                assigned.add(s.target.name)
            elif isinstance(s, While):
                for name in expr_vars(s.guard):
                    check_read(name)
                walk(s.body)
            elif isinstance(s, If):
                for name in expr_vars(s.guard):
                    check_read(name)
                walk(s.then)
                walk(s.orelse)

    walk(p.body)
    return p


def parse(source: str) -> Program:
    """Parse MiniImp source into a validated, pre-order-numbered Program."""
    program = _Parser(_tokenize(source)).parse_program()
    validate(program)
    return assign_node_ids(program)


# ---------------------------------------------------------------------------
# Pretty printer


def _render_expr(e: Expr, parent_prec=0) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, IntConst):
        return str(e.value)
    prec = {"+": 1, "-": 1, "*": 2}.get(e.op, 0)
    lhs = _render_expr(e.lhs, prec)
    # right operand of - binds tighter; same for equal-precedence nesting
    rhs = _render_expr(e.rhs, prec + 1)
    text = f"{lhs} {e.op} {rhs}"
    if prec and prec < parent_prec:
        return f"({text})"
    return text


def _render_stmts(stmts, depth, lines, line_of):
    pad = " " * (INDENT_WIDTH * depth)
    for s in stmts:
        if isinstance(s, Assign):
            lines.append(f"{pad}{s.target.name} {s.op} {_render_expr(s.rhs)}")
            _note(line_of, s, len(lines))
        elif isinstance(s, While):
            lines.append(f"{pad}while {_render_expr(s.guard)}:")
            _note(line_of, s, len(lines))
            _render_stmts(s.body, depth + 1, lines, line_of)
        elif isinstance(s, If):
            lines.append(f"{pad}if {_render_expr(s.guard)}:")
            _note(line_of, s, len(lines))
            _render_stmts(s.then, depth + 1, lines, line_of)
            if s.orelse:
                lines.append(f"{pad}else:")
                _render_stmts(s.orelse, depth + 1, lines, line_of)


def _note(line_of, stmt, lineno):
    if line_of is None:
        return
    line_of[stmt.node_id] = lineno
    # expression nodes inherit the line of their statement
    for node in iter_nodes_of_stmt_header(stmt):
        line_of[node.node_id] = lineno


def iter_nodes_of_stmt_header(stmt):
    """Expression nodes printed on the statement's own line."""
    if isinstance(stmt, Assign):
        roots = [stmt.target, stmt.rhs]
    else:
        roots = [stmt.guard]
    stack = list(roots)
    while stack:
        n = stack.pop()
        yield n
        stack.extend(children(n))


def render_with_lines(p: Program) -> tuple[str, dict[int, int]]:
    """Canonical source text plus a node_id -> 1-based line number map."""
    line_of: dict[int, int] = {}
    header = f"def {p.name}({', '.join(v.name for v in p.params)}):"
    lines = [header]
    line_of[p.node_id] = 1
    for v in p.params:
        line_of[v.node_id] = 1
    _render_stmts(p.body, 1, lines, line_of)
    return "\n".join(lines) + "\n", line_of


def pretty_print(p: Program) -> str:
    """Canonical rendering; parse(pretty_print(p)) is structurally equal to p."""
    text, _ = render_with_lines(p)
    return text
