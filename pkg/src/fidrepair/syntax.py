"""Error-tolerant recursive-descent parser for a C subset, and preorder linearization.

The node type names follow the tree-sitter C grammar where the subset overlaps,
so trees imported through :func:`read_sexpr` and trees built here mix freely.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterator

from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import SPECIAL_TOKENS
from .preprocess import NODE_ID, TokenSeq, Vocabulary, tokenize

ERROR = "ERROR"
SEPARATOR = " "

KEYWORDS = frozenset(
    """auto break case char const continue default do double else enum extern float for
    goto if inline int long register restrict return short signed sizeof static struct
    switch typedef union unsigned void volatile while bool _Bool size_t""".split()
)
PRIMITIVE_TYPES = frozenset("char int long short float double void signed unsigned bool _Bool size_t".split())
QUALIFIERS = frozenset("const volatile restrict".split())
STORAGE = frozenset("static extern auto register inline typedef".split())

ASSIGN_OPS = ("=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=")
# loosest first
BINARY_LEVELS = (
    ("||",),
    ("&&",),
    ("|",),
    ("^",),
    ("&",),
    ("==", "!="),
    ("<", ">", "<=", ">="),
    ("<<", ">>"),
    ("+", "-"),
    ("*", "/", "%"),
)
UNARY_OPS = ("-", "+", "!", "~", "*", "&", "++", "--")


@dataclass
class AstNode:
    node_type: str
    value: str = ""
    children: list["AstNode"] = field(default_factory=list)

    def __post_init__(self):
        if not self.node_type:
            raise ValueError("node_type must be nonempty")

    def iter_preorder(self) -> Iterator["AstNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def count(self) -> int:
        return sum(1 for _ in self.iter_preorder())


@dataclass(frozen=True)
class AstNodeSeq:
    entries: tuple[str, ...]

    def __len__(self):
        return len(self.entries)


# ---------------------------------------------------------------------------
# lexing

_LEX_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|/\*.*?(?:\*/|\Z))
  | (?P<preproc>\#[^\n]*)
  | (?P<special>"""
    + "|".join(re.escape(t) for t in SPECIAL_TOKENS)
    + r""")
  | (?P<string>"(?:\\.|[^"\\\n])*"?)
  | (?P<char>'(?:\\.|[^'\\\n])*'?)
  | (?P<number>(?:0[xX][0-9a-fA-F]+|\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)[uUlLfF]*)
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<op>>>=|<<=|\.\.\.|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||[-+*/%&|^]=|[-+*/%&|^!~<>=?:;,.(){}\[\]])
  | (?P<unknown>[^\s\w"'#(){}\[\];,]+|\w+)
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass(frozen=True)
class Tok:
    kind: str
    text: str


def lex(text: str) -> tuple[list[Tok], list[str]]:
    """Return (significant tokens, skipped comment texts)."""
    toks: list[Tok] = []
    comments: list[str] = []
    pos = 0
    while pos < len(text):
        m = _LEX_RE.match(text, pos)
        kind = m.lastgroup
        if kind == "comment":
            comments.append(m.group())
        elif kind == "ident":
            toks.append(Tok("keyword" if m.group() in KEYWORDS else "ident", m.group()))
        elif kind != "ws":
            toks.append(Tok(kind, m.group()))
        pos = m.end()
    return toks, comments


# ---------------------------------------------------------------------------
# parsing


class Parser:
    """One-shot parser; ``structural`` collects tokens absorbed without a node of their own."""

    def __init__(self, text: str):
        self.toks, comments = lex(text)
        self.pos = 0
        self.structural: list[str] = list(comments)

    # cursor helpers -------------------------------------------------------

    def peek(self, k: int = 0) -> Tok | None:
        i = self.pos + k
        return self.toks[i] if i < len(self.toks) else None

    def at(self, *texts: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t is not None and t.kind in ("op", "keyword") and t.text in texts

    def next(self) -> Tok:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def skip(self) -> None:
        self.structural.append(self.next().text)

    def expect(self, text: str) -> bool:
        # a missing token is tolerated; the tree just lacks it
        if self.at(text):
            self.skip()
            return True
        return False

    def error_leaf(self) -> AstNode:
        return AstNode(ERROR, self.next().text)

    # top level ------------------------------------------------------------

    def parse(self) -> AstNode:
        root = AstNode("translation_unit")
        while self.peek() is not None:
            start = self.pos
            root.children.append(self.external_item())
            if self.pos == start:
                root.children.append(self.error_leaf())
        return root

    def external_item(self) -> AstNode:
        t = self.peek()
        if t.kind == "preproc":
            return AstNode("preproc_directive", self.next().text)
        if self.starts_declaration():
            return self.declaration_or_function()
        return self.statement()

    # declarations ---------------------------------------------------------

    def starts_declaration(self) -> bool:
        t = self.peek()
        if t is None:
            return False
        if t.kind == "keyword":
            return t.text in PRIMITIVE_TYPES or t.text in QUALIFIERS or t.text in STORAGE or t.text in (
                "struct", "union", "enum")
        if t.kind == "ident":
            n1 = self.peek(1)
            if n1 is None:
                return False
            if n1.kind == "ident":
                return True
            if n1.kind == "op" and n1.text == "*":
                k = 1
                while self.at("*", k=k):
                    k += 1
                n2, n3 = self.peek(k), self.peek(k + 1)
                return (
                    n2 is not None and n2.kind == "ident"
                    and (n3 is None or (n3.kind == "op" and n3.text in (";", "=", ",", "[", ")")))
                )
        return False

    def type_specifiers(self) -> list[AstNode]:
        out: list[AstNode] = []
        while True:
            t = self.peek()
            if t is None:
                break
            if t.kind == "keyword" and t.text in STORAGE:
                out.append(AstNode("storage_class_specifier", self.next().text))
            elif t.kind == "keyword" and t.text in QUALIFIERS:
                out.append(AstNode("type_qualifier", self.next().text))
            elif t.kind == "keyword" and t.text in PRIMITIVE_TYPES:
                out.append(AstNode("primitive_type", self.next().text))
            elif t.kind == "keyword" and t.text in ("struct", "union", "enum"):
                node = AstNode(f"{t.text}_specifier", self.next().text)
                if self.peek() is not None and self.peek().kind == "ident":
                    node.children.append(AstNode("type_identifier", self.next().text))
                if self.at("{"):
                    node.children.append(self.field_list())
                out.append(node)
            elif t.kind == "ident" and not _has_type(out) and (
                not out or (self.peek(1) is not None and (self.peek(1).kind == "ident" or self.at("*", k=1)))
            ):
                out.append(AstNode("type_identifier", self.next().text))
            else:
                break
        return out

    def field_list(self) -> AstNode:
        node = AstNode("field_declaration_list")
        self.skip()  # {
        while self.peek() is not None and not self.at("}"):
            start = self.pos
            if self.starts_declaration():
                node.children.append(self.declaration_tail(AstNode("field_declaration"), self.type_specifiers()))
            else:
                node.children.append(self.error_leaf())
            if self.pos == start:
                node.children.append(self.error_leaf())
        self.expect("}")
        return node

    def declarator(self) -> AstNode:
        if self.at("*"):
            self.next()
            node = AstNode("pointer_declarator", "*")
            while self.at(*QUALIFIERS):
                node.children.append(AstNode("type_qualifier", self.next().text))
            node.children.append(self.declarator())
            return node
        t = self.peek()
        if t is not None and t.kind == "ident":
            node = AstNode("identifier", self.next().text)
        elif self.at("("):
            self.skip()
            node = AstNode("parenthesized_declarator", children=[self.declarator()])
            self.expect(")")
        else:
            return AstNode(ERROR, self.next().text) if t is not None and not self.at(";", ",", "=", "{") else AstNode(ERROR)
        while True:
            if self.at("["):
                self.skip()
                arr = AstNode("array_declarator", children=[node])
                if not self.at("]"):
                    arr.children.append(self.expression())
                self.expect("]")
                node = arr
            elif self.at("("):
                node = AstNode("function_declarator", children=[node, self.parameter_list()])
            else:
                return node

    def parameter_list(self) -> AstNode:
        node = AstNode("parameter_list")
        self.skip()  # (
        while self.peek() is not None and not self.at(")"):
            start = self.pos
            if self.at("..."):
                node.children.append(AstNode("variadic_parameter", self.next().text))
            elif self.starts_declaration() or (self.peek().kind == "ident"):
                param = AstNode("parameter_declaration", children=self.type_specifiers())
                if not self.at(",", ")"):
                    param.children.append(self.declarator())
                node.children.append(param)
            else:
                node.children.append(self.error_leaf())
            if not self.expect(","):
                if self.pos == start:
                    node.children.append(self.error_leaf())
                elif not self.at(")") and self.peek() is not None:
                    node.children.append(self.error_leaf())
        self.expect(")")
        return node

    def declaration_or_function(self) -> AstNode:
        specs = self.type_specifiers()
        if self.at(";"):
            self.skip()
            return AstNode("declaration", children=specs)
        decl = self.declarator()
        if self.at("{") and _is_function_declarator(decl):
            return AstNode("function_definition", children=[*specs, decl, self.compound_statement()])
        return self.declaration_tail(AstNode("declaration"), specs, first=decl)

    def declaration_tail(self, node: AstNode, specs: list[AstNode], first: AstNode | None = None) -> AstNode:
        node.children.extend(specs)
        decl = first if first is not None else self.declarator()
        while True:
            if self.at("="):
                self.next()
                init = self.initializer()
                node.children.append(AstNode("init_declarator", "=", [decl, init]))
            else:
                node.children.append(decl)
            if not self.expect(","):
                break
            decl = self.declarator()
        self.expect(";")
        return node

    def initializer(self) -> AstNode:
        if self.at("{"):
            self.skip()
            node = AstNode("initializer_list")
            while self.peek() is not None and not self.at("}"):
                start = self.pos
                node.children.append(self.initializer())
                if self.expect(","):
                    continue
                if self.pos == start:
                    node.children.append(self.error_leaf())
                elif not self.at("}"):
                    break
            self.expect("}")
            return node
        return self.assignment()

    # statements -----------------------------------------------------------

    def compound_statement(self) -> AstNode:
        node = AstNode("compound_statement")
        self.skip()  # {
        while self.peek() is not None and not self.at("}"):
            start = self.pos
            if self.peek().kind == "preproc":
                node.children.append(AstNode("preproc_directive", self.next().text))
            elif self.starts_declaration():
                node.children.append(self.declaration_or_function())
            else:
                node.children.append(self.statement())
            if self.pos == start:
                node.children.append(self.error_leaf())
        self.expect("}")
        return node

    def statement(self) -> AstNode:
        t = self.peek()
        if t.kind == "special":
            return AstNode("special_token", self.next().text)
        if self.at("{"):
            return self.compound_statement()
        if self.at(";"):
            self.skip()
            return AstNode("expression_statement")
        if t.kind == "keyword":
            handler = getattr(self, f"stmt_{t.text}", None)
            if handler is not None:
                return handler()
        if t.kind == "ident" and self.at(":", k=1):
            label = AstNode("labeled_statement", children=[AstNode("statement_identifier", self.next().text)])
            self.skip()  # :
            if self.peek() is not None and not self.at("}"):
                label.children.append(self.statement())
            return label
        if t.kind == "op" and t.text in ("}", ")", "]", ",", ":"):
            return self.error_leaf()
        node = AstNode("expression_statement", children=[self.expression()])
        self.expect(";")
        return node

    def condition(self) -> AstNode:
        node = AstNode("parenthesized_expression")
        if self.expect("("):
            if not self.at(")"):
                node.children.append(self.expression())
            self.expect(")")
        else:
            node.children.append(self.expression())
        return node

    def body(self) -> AstNode:
        if self.peek() is None:
            return AstNode(ERROR)
        return self.statement()

    def stmt_if(self) -> AstNode:
        self.skip()
        node = AstNode("if_statement", children=[self.condition(), self.body()])
        if self.at("else"):
            self.skip()
            node.children.append(AstNode("else_clause", children=[self.body()]))
        return node

    def stmt_while(self) -> AstNode:
        self.skip()
        return AstNode("while_statement", children=[self.condition(), self.body()])

    def stmt_do(self) -> AstNode:
        self.skip()
        node = AstNode("do_statement", children=[self.body()])
        if self.expect("while"):
            node.children.append(self.condition())
        self.expect(";")
        return node

    def stmt_for(self) -> AstNode:
        self.skip()
        node = AstNode("for_statement")
        self.expect("(")
        if self.starts_declaration():
            node.children.append(self.declaration_or_function())
        else:
            if not self.at(";"):
                node.children.append(self.expression())
            self.expect(";")
        for stop in (";", ")"):
            if not self.at(stop) and self.peek() is not None:
                node.children.append(self.expression())
            self.expect(stop)
        node.children.append(self.body())
        return node

    def stmt_switch(self) -> AstNode:
        self.skip()
        return AstNode("switch_statement", children=[self.condition(), self.body()])

    def stmt_case(self) -> AstNode:
        self.skip()
        node = AstNode("case_statement", children=[self.expression()])
        self.expect(":")
        return node

    def stmt_default(self) -> AstNode:
        node = AstNode("case_statement", self.next().text)
        self.expect(":")
        return node

    def stmt_return(self) -> AstNode:
        self.skip()
        node = AstNode("return_statement")
        if not self.at(";") and self.peek() is not None and not self.at("}"):
            node.children.append(self.expression())
        self.expect(";")
        return node

    def stmt_break(self) -> AstNode:
        self.skip()
        self.expect(";")
        return AstNode("break_statement")

    def stmt_continue(self) -> AstNode:
        self.skip()
        self.expect(";")
        return AstNode("continue_statement")

    def stmt_goto(self) -> AstNode:
        self.skip()
        node = AstNode("goto_statement")
        if self.peek() is not None and self.peek().kind == "ident":
            node.children.append(AstNode("statement_identifier", self.next().text))
        self.expect(";")
        return node

    # expressions ----------------------------------------------------------

    def expression(self) -> AstNode:
        node = self.assignment()
        if self.at(","):
            node = AstNode("comma_expression", children=[node])
            while self.at(","):
                self.skip()
                node.children.append(self.assignment())
        return node

    def assignment(self) -> AstNode:
        left = self.conditional()
        if self.at(*ASSIGN_OPS):
            op = self.next().text
            return AstNode("assignment_expression", op, [left, self.assignment()])
        return left

    def conditional(self) -> AstNode:
        cond = self.binary(0)
        if self.at("?"):
            self.skip()
            then = self.expression()
            self.expect(":")
            return AstNode("conditional_expression", children=[cond, then, self.conditional()])
        return cond

    def binary(self, level: int) -> AstNode:
        if level == len(BINARY_LEVELS):
            return self.unary()
        left = self.binary(level + 1)
        while self.at(*BINARY_LEVELS[level]):
            op = self.next().text
            left = AstNode("binary_expression", op, [left, self.binary(level + 1)])
        return left

    def is_cast(self) -> bool:
        if not self.at("("):
            return False
        t = self.peek(1)
        if t is None:
            return False
        if t.kind == "keyword" and (t.text in PRIMITIVE_TYPES or t.text in QUALIFIERS or t.text in ("struct", "union", "enum")):
            return True
        # (T *) x
        return t.kind == "ident" and self.at("*", k=2) and self.at(")", k=3)

    def unary(self) -> AstNode:
        if self.is_cast():
            self.skip()  # (
            tdesc = AstNode("type_descriptor", children=self.type_specifiers())
            while self.at("*"):
                self.next()
                tdesc.children.append(AstNode("abstract_pointer_declarator", "*"))
            self.expect(")")
            return AstNode("cast_expression", children=[tdesc, self.unary()])
        if self.at("sizeof"):
            node = AstNode("sizeof_expression", self.next().text)
            if self.is_cast():
                self.skip()
                tdesc = AstNode("type_descriptor", children=self.type_specifiers())
                while self.at("*"):
                    self.next()
                    tdesc.children.append(AstNode("abstract_pointer_declarator", "*"))
                self.expect(")")
                node.children.append(tdesc)
            else:
                node.children.append(self.unary())
            return node
        if self.at(*UNARY_OPS):
            op = self.next().text
            kind = {"*": "pointer_expression", "&": "pointer_expression"}.get(op)
            if op in ("++", "--"):
                kind = "update_expression"
            return AstNode(kind or "unary_expression", op, [self.unary()])
        return self.postfix(self.primary())

    def postfix(self, node: AstNode) -> AstNode:
        while True:
            if self.at("("):
                args = AstNode("argument_list")
                self.skip()
                while self.peek() is not None and not self.at(")"):
                    start = self.pos
                    args.children.append(self.assignment())
                    if not self.expect(","):
                        if self.pos == start or not self.at(")"):
                            break
                self.expect(")")
                node = AstNode("call_expression", children=[node, args])
            elif self.at("["):
                self.skip()
                idx = self.expression() if not self.at("]") else AstNode(ERROR)
                self.expect("]")
                node = AstNode("subscript_expression", children=[node, idx])
            elif self.at(".", "->"):
                op = self.next().text
                t = self.peek()
                fld = AstNode("field_identifier", self.next().text) if t is not None and t.kind == "ident" else AstNode(ERROR)
                node = AstNode("field_expression", op, [node, fld])
            elif self.at("++", "--"):
                node = AstNode("update_expression", self.next().text, [node])
            else:
                return node

    def primary(self) -> AstNode:
        t = self.peek()
        if t is None:
            return AstNode(ERROR)
        if t.kind == "ident":
            return AstNode("identifier", self.next().text)
        if t.kind == "number":
            return AstNode("number_literal", self.next().text)
        if t.kind == "string":
            node = AstNode("string_literal", self.next().text)
            while self.peek() is not None and self.peek().kind == "string":
                node = AstNode("concatenated_string", children=[node, AstNode("string_literal", self.next().text)])
            return node
        if t.kind == "char":
            return AstNode("char_literal", self.next().text)
        if self.at("("):
            self.skip()
            node = AstNode("parenthesized_expression")
            if not self.at(")"):
                node.children.append(self.expression())
            self.expect(")")
            return node
        if t.kind == "special":
            return AstNode("special_token", self.next().text)
        if t.kind == "op" and t.text in (";", "}", ")", "]", ",", "{"):
            # missing operand: leave the closing token for the caller
            return AstNode(ERROR)
        return self.error_leaf()


def _has_type(specs: list[AstNode]) -> bool:
    return any(n.node_type not in ("storage_class_specifier", "type_qualifier") for n in specs)


def _is_function_declarator(node: AstNode) -> bool:
    while node.node_type == "pointer_declarator":
        node = node.children[-1]
    return node.node_type == "function_declarator"


def parse_source(text: str) -> AstNode:
    """Parse ``text``; never raises. Unparseable spans become ERROR nodes."""
    return Parser(text).parse()


# ---------------------------------------------------------------------------
# linearization


def linearize_dfs(root: AstNode) -> AstNodeSeq:
    return AstNodeSeq(tuple(f"{n.value}{SEPARATOR}{n.node_type}" for n in root.iter_preorder()))


def ast_token_seq(root: AstNode, vocab: Vocabulary) -> TokenSeq:
    """Tokenize every linearized entry and join them with the node boundary token."""
    ids: list[int] = []
    for i, entry in enumerate(linearize_dfs(root).entries):
        if i:
            ids.append(NODE_ID)
        ids.extend(tokenize(entry, vocab).tokens)
    return TokenSeq(ids, "ast")


class AstLinearizer(TransformerMixin, BaseEstimator):
    """Stateless transformer from source texts to preorder node sequences."""

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> list[AstNodeSeq]:
        return [linearize_dfs(parse_source(text)) for text in X]


# ---------------------------------------------------------------------------
# S-expression interchange: (type "value" child*)


def to_sexpr(node: AstNode) -> str:
    parts = [node.node_type, json.dumps(node.value, ensure_ascii=False)]
    parts.extend(to_sexpr(c) for c in node.children)
    return "(" + " ".join(parts) + ")"


_SEXPR_TOKEN = re.compile(r'\s*(?:(\()|(\))|("(?:\\.|[^"\\])*")|([^\s()"]+))', re.DOTALL)


def read_sexpr(text: str) -> AstNode:
    """Read a tree written as nested ``(type "value" child*)`` forms; the value may be omitted."""
    pos = 0
    stack: list[AstNode] = []
    root: AstNode | None = None
    expect_type = False
    while True:
        m = _SEXPR_TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip():
                raise ValueError(f"unexpected character at offset {pos}")
            break
        pos = m.end()
        lpar, rpar, string, atom = m.groups()
        if lpar:
            if root is not None and not stack:
                raise ValueError(f"trailing form at offset {m.start()}")
            expect_type = True
        elif expect_type:
            if atom is None:
                raise ValueError(f"expected node type at offset {m.start()}")
            node = AstNode(atom)
            if stack:
                stack[-1].children.append(node)
            else:
                root = node
            stack.append(node)
            expect_type = False
        elif rpar:
            if not stack:
                raise ValueError(f"unbalanced ')' at offset {m.start()}")
            stack.pop()
        elif string is not None:
            if not stack or stack[-1].children or stack[-1].value:
                raise ValueError(f"misplaced value at offset {m.start()}")
            stack[-1].value = json.loads(string)
        else:
            raise ValueError(f"unexpected atom {atom!r} at offset {m.start()}")
    if stack or root is None or expect_type:
        raise ValueError("incomplete S-expression")
    return root
