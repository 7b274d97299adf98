//! Recursive-descent parser for a Python subset.
//!
//! Node conventions (these determine node counts and depths):
//!
//! * `FunctionDef`: decorators (as `ExprStmt`), parameters (`Name`), default
//!   values and annotations, return annotation, then body statements. The
//!   function name itself is not a node; neither is a class name.
//! * `If`: test, body, then either a nested `If` for `elif` or the `else`
//!   statements. Conditional expressions `a if c else b` are `If` nodes too.
//! * `For`/`While`/`With`/`Try`: header expressions then body statements,
//!   `else`/`finally` statements appended flat; `except` clauses become
//!   `ExceptHandler` children.
//! * Chained comparisons form a single `Compare`; `and`/`or` chains form a
//!   single `BoolOp`; every binary operator forms its own `BinOp`.
//! * Comprehensions: the display node (or a `Comprehension` node for a
//!   generator expression) holds the element, then one `Comprehension` per
//!   `for` clause (target, iterable) and per `if` clause (condition).
//! * Attribute names, keyword-argument names, operators and punctuation do
//!   not produce nodes. Starred expressions are their operand.

use thiserror::Error;

use super::token::{PyToken, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Module,
    FunctionDef,
    ClassDef,
    If,
    For,
    While,
    With,
    Try,
    ExceptHandler,
    Return,
    Assign,
    AugAssign,
    ExprStmt,
    SimpleStmt,
    Import,
    Call,
    Attribute,
    Subscript,
    BinOp,
    UnaryOp,
    BoolOp,
    Compare,
    Lambda,
    Comprehension,
    ListDisplay,
    TupleDisplay,
    DictDisplay,
    SetDisplay,
    Name,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub kind: NodeKind,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn new(kind: NodeKind, children: Vec<AstNode>) -> Self {
        AstNode { kind, children }
    }

    pub fn leaf(kind: NodeKind) -> Self {
        AstNode::new(kind, Vec::new())
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(AstNode::depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at line {line}, col {col} (token {index}): {message}")]
pub struct ParseError {
    pub index: usize,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

/// Parses a token stream produced by [`super::tokenize`].
pub fn parse(tokens: &[PyToken]) -> Result<AstNode, ParseError> {
    if tokens.last().map(|t| t.kind) != Some(TokenKind::EndMarker) {
        return Err(ParseError {
            index: tokens.len(),
            line: tokens.last().map_or(1, |t| t.line),
            col: 0,
            message: "token stream does not end with ENDMARKER".into(),
        });
    }
    let mut p = Parser { tokens, pos: 0 };
    let mut body = Vec::new();
    while !p.at_kind(TokenKind::EndMarker) {
        if p.at_kind(TokenKind::Newline) {
            p.pos += 1;
            continue;
        }
        p.statement(&mut body)?;
    }
    Ok(AstNode::new(NodeKind::Module, body))
}

type PResult<T> = Result<T, ParseError>;

const AUG_OPS: &[&str] = &[
    "+=", "-=", "*=", "/=", "//=", "%=", "@=", "&=", "|=", "^=", ">>=", "<<=", "**=",
];

struct Parser<'a> {
    tokens: &'a [PyToken],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &'a PyToken {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_at(&self, offset: usize) -> &'a PyToken {
        &self.tokens[(self.pos + offset).min(self.tokens.len() - 1)]
    }

    fn at_kind(&self, kind: TokenKind) -> bool {
        self.peek().kind == kind
    }

    fn at_op(&self, op: &str) -> bool {
        let t = self.peek();
        t.kind == TokenKind::Op && t.text == op
    }

    fn at_kw(&self, kw: &str) -> bool {
        let t = self.peek();
        t.kind == TokenKind::Keyword && t.text == kw
    }

    fn bump(&mut self) -> &'a PyToken {
        let t = self.peek();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        let t = self.peek();
        Err(ParseError {
            index: self.pos,
            line: t.line,
            col: t.col,
            message: message.into(),
        })
    }

    fn unexpected<T>(&self, expected: &str) -> PResult<T> {
        let t = self.peek();
        self.error(format!("expected {expected}, found {} {:?}", t.kind, t.text))
    }

    fn expect_op(&mut self, op: &str) -> PResult<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            self.unexpected(&format!("{op:?}"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.unexpected(kw)
        }
    }

    fn expect_kind(&mut self, kind: TokenKind) -> PResult<&'a PyToken> {
        if self.at_kind(kind) {
            Ok(self.bump())
        } else {
            self.unexpected(&kind.to_string())
        }
    }

    fn name(&mut self) -> PResult<AstNode> {
        self.expect_kind(TokenKind::Name)?;
        Ok(AstNode::leaf(NodeKind::Name))
    }

    // ---- statements ----

    fn statement(&mut self, out: &mut Vec<AstNode>) -> PResult<()> {
        let t = self.peek();
        if t.kind == TokenKind::Keyword {
            match t.text.as_str() {
                "if" => return self.if_stmt().map(|n| out.push(n)),
                "while" => return self.while_stmt().map(|n| out.push(n)),
                "for" => return self.for_stmt().map(|n| out.push(n)),
                "try" => return self.try_stmt().map(|n| out.push(n)),
                "with" => return self.with_stmt().map(|n| out.push(n)),
                "def" => return self.funcdef(Vec::new()).map(|n| out.push(n)),
                "class" => return self.classdef(Vec::new()).map(|n| out.push(n)),
                "async" => {
                    self.bump();
                    return match self.peek().text.as_str() {
                        "def" => self.funcdef(Vec::new()).map(|n| out.push(n)),
                        "for" => self.for_stmt().map(|n| out.push(n)),
                        "with" => self.with_stmt().map(|n| out.push(n)),
                        _ => self.unexpected("def, for or with after async"),
                    };
                }
                _ => {}
            }
        }
        if self.at_op("@") {
            return self.decorated().map(|n| out.push(n));
        }
        self.simple_stmts(out)
    }

    fn simple_stmts(&mut self, out: &mut Vec<AstNode>) -> PResult<()> {
        loop {
            out.push(self.small_stmt()?);
            if !self.eat_op(";") || self.at_kind(TokenKind::Newline) {
                break;
            }
        }
        self.expect_kind(TokenKind::Newline)?;
        Ok(())
    }

    /// Statements after a `:`, either an indented block or a one-line suite.
    fn block(&mut self) -> PResult<Vec<AstNode>> {
        self.expect_op(":")?;
        let mut body = Vec::new();
        if self.at_kind(TokenKind::Newline) {
            self.bump();
            self.expect_kind(TokenKind::Indent)?;
            while !self.at_kind(TokenKind::Dedent) && !self.at_kind(TokenKind::EndMarker) {
                self.statement(&mut body)?;
            }
            self.expect_kind(TokenKind::Dedent)?;
        } else {
            self.simple_stmts(&mut body)?;
        }
        Ok(body)
    }

    fn if_stmt(&mut self) -> PResult<AstNode> {
        // Consumes `if` or `elif`.
        self.bump();
        let mut children = vec![self.test()?];
        children.extend(self.block()?);
        if self.at_kw("elif") {
            children.push(self.if_stmt()?);
        } else if self.eat_kw("else") {
            children.extend(self.block()?);
        }
        Ok(AstNode::new(NodeKind::If, children))
    }

    fn while_stmt(&mut self) -> PResult<AstNode> {
        self.expect_kw("while")?;
        let mut children = vec![self.test()?];
        children.extend(self.block()?);
        if self.eat_kw("else") {
            children.extend(self.block()?);
        }
        Ok(AstNode::new(NodeKind::While, children))
    }

    fn for_stmt(&mut self) -> PResult<AstNode> {
        self.expect_kw("for")?;
        let mut children = vec![self.target_list()?];
        self.expect_kw("in")?;
        children.push(self.testlist()?);
        children.extend(self.block()?);
        if self.eat_kw("else") {
            children.extend(self.block()?);
        }
        Ok(AstNode::new(NodeKind::For, children))
    }

    fn try_stmt(&mut self) -> PResult<AstNode> {
        self.expect_kw("try")?;
        let mut children = self.block()?;
        let mut handlers = 0;
        while self.eat_kw("except") {
            handlers += 1;
            let mut h = Vec::new();
            if !self.at_op(":") {
                h.push(self.test()?);
                if self.eat_kw("as") {
                    h.push(self.name()?);
                }
            }
            h.extend(self.block()?);
            children.push(AstNode::new(NodeKind::ExceptHandler, h));
        }
        if handlers > 0 && self.eat_kw("else") {
            children.extend(self.block()?);
        }
        let finally = self.eat_kw("finally");
        if finally {
            children.extend(self.block()?);
        }
        if handlers == 0 && !finally {
            return self.unexpected("except or finally");
        }
        Ok(AstNode::new(NodeKind::Try, children))
    }

    fn with_stmt(&mut self) -> PResult<AstNode> {
        self.expect_kw("with")?;
        let mut children = Vec::new();
        loop {
            children.push(self.test()?);
            if self.eat_kw("as") {
                children.push(self.target()?);
            }
            if !self.eat_op(",") {
                break;
            }
        }
        children.extend(self.block()?);
        Ok(AstNode::new(NodeKind::With, children))
    }

    fn decorated(&mut self) -> PResult<AstNode> {
        let mut decorators = Vec::new();
        while self.eat_op("@") {
            let e = self.test()?;
            self.expect_kind(TokenKind::Newline)?;
            decorators.push(AstNode::new(NodeKind::ExprStmt, vec![e]));
        }
        self.eat_kw("async");
        if self.at_kw("def") {
            self.funcdef(decorators)
        } else if self.at_kw("class") {
            self.classdef(decorators)
        } else {
            self.unexpected("def or class after decorator")
        }
    }

    fn funcdef(&mut self, mut children: Vec<AstNode>) -> PResult<AstNode> {
        self.expect_kw("def")?;
        self.expect_kind(TokenKind::Name)?;
        self.expect_op("(")?;
        self.parameters(&mut children, ")", true)?;
        self.expect_op(")")?;
        if self.eat_op("->") {
            children.push(self.test()?);
        }
        children.extend(self.block()?);
        Ok(AstNode::new(NodeKind::FunctionDef, children))
    }

    /// Parameter list up to (not including) `close`.
    fn parameters(&mut self, out: &mut Vec<AstNode>, close: &str, annotated: bool) -> PResult<()> {
        while !self.at_op(close) {
            if self.eat_op("/") {
                // positional-only marker
            } else if self.eat_op("*") || self.eat_op("**") {
                if self.at_kind(TokenKind::Name) {
                    out.push(self.name()?);
                    if annotated && self.eat_op(":") {
                        out.push(self.test()?);
                    }
                }
            } else {
                out.push(self.name()?);
                if annotated && self.eat_op(":") {
                    out.push(self.test()?);
                }
                if self.eat_op("=") {
                    out.push(self.test()?);
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(())
    }

    fn classdef(&mut self, mut children: Vec<AstNode>) -> PResult<AstNode> {
        self.expect_kw("class")?;
        self.expect_kind(TokenKind::Name)?;
        if self.eat_op("(") {
            children.extend(self.arguments()?);
        }
        children.extend(self.block()?);
        Ok(AstNode::new(NodeKind::ClassDef, children))
    }

    fn small_stmt(&mut self) -> PResult<AstNode> {
        use NodeKind::*;
        let t = self.peek();
        if t.kind == TokenKind::Keyword {
            match t.text.as_str() {
                "pass" | "break" | "continue" => {
                    self.bump();
                    return Ok(AstNode::leaf(SimpleStmt));
                }
                "return" => {
                    self.bump();
                    let mut c = Vec::new();
                    if self.starts_expr() {
                        c.push(self.testlist()?);
                    }
                    return Ok(AstNode::new(Return, c));
                }
                "raise" => {
                    self.bump();
                    let mut c = Vec::new();
                    if self.starts_expr() {
                        c.push(self.test()?);
                        if self.eat_kw("from") {
                            c.push(self.test()?);
                        }
                    }
                    return Ok(AstNode::new(SimpleStmt, c));
                }
                "global" | "nonlocal" => {
                    self.bump();
                    let mut c = vec![self.name()?];
                    while self.eat_op(",") {
                        c.push(self.name()?);
                    }
                    return Ok(AstNode::new(SimpleStmt, c));
                }
                "assert" => {
                    self.bump();
                    let mut c = vec![self.test()?];
                    if self.eat_op(",") {
                        c.push(self.test()?);
                    }
                    return Ok(AstNode::new(SimpleStmt, c));
                }
                "del" => {
                    self.bump();
                    let mut c = vec![self.target()?];
                    while self.eat_op(",") && self.starts_expr() {
                        c.push(self.target()?);
                    }
                    return Ok(AstNode::new(SimpleStmt, c));
                }
                "yield" => {
                    self.bump();
                    let mut c = Vec::new();
                    if self.eat_kw("from") {
                        c.push(self.test()?);
                    } else if self.starts_expr() {
                        c.push(self.testlist()?);
                    }
                    return Ok(AstNode::new(SimpleStmt, c));
                }
                "import" => return self.import_name(),
                "from" => return self.import_from(),
                _ => {}
            }
        }
        self.expr_stmt()
    }

    fn dotted_name(&mut self) -> PResult<()> {
        self.expect_kind(TokenKind::Name)?;
        while self.eat_op(".") {
            self.expect_kind(TokenKind::Name)?;
        }
        Ok(())
    }

    /// `import a.b as c, d`: one `Name` per module plus one per alias.
    fn import_name(&mut self) -> PResult<AstNode> {
        self.expect_kw("import")?;
        let mut c = Vec::new();
        loop {
            self.dotted_name()?;
            c.push(AstNode::leaf(NodeKind::Name));
            if self.eat_kw("as") {
                c.push(self.name()?);
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(AstNode::new(NodeKind::Import, c))
    }

    /// `from m import a as b, c`: `Name` for the module (when named), each
    /// imported name and each alias. `*` produces nothing.
    fn import_from(&mut self) -> PResult<AstNode> {
        self.expect_kw("from")?;
        let mut c = Vec::new();
        while self.eat_op(".") || self.eat_op("...") {}
        if self.at_kind(TokenKind::Name) {
            self.dotted_name()?;
            c.push(AstNode::leaf(NodeKind::Name));
        }
        self.expect_kw("import")?;
        if self.eat_op("*") {
            return Ok(AstNode::new(NodeKind::Import, c));
        }
        let paren = self.eat_op("(");
        loop {
            if paren && self.at_op(")") {
                break;
            }
            c.push(self.name()?);
            if self.eat_kw("as") {
                c.push(self.name()?);
            }
            if !self.eat_op(",") {
                break;
            }
        }
        if paren {
            self.expect_op(")")?;
        }
        Ok(AstNode::new(NodeKind::Import, c))
    }

    fn expr_stmt(&mut self) -> PResult<AstNode> {
        let first = self.testlist_star()?;
        if self.at_op("=") {
            let mut c = vec![first];
            while self.eat_op("=") {
                c.push(self.testlist_star()?);
            }
            return Ok(AstNode::new(NodeKind::Assign, c));
        }
        let t = self.peek();
        if t.kind == TokenKind::Op && AUG_OPS.contains(&t.text.as_str()) {
            self.bump();
            let value = self.testlist()?;
            return Ok(AstNode::new(NodeKind::AugAssign, vec![first, value]));
        }
        if self.eat_op(":") {
            let mut c = vec![first, self.test()?];
            if self.eat_op("=") {
                c.push(self.testlist_star()?);
            }
            return Ok(AstNode::new(NodeKind::Assign, c));
        }
        Ok(AstNode::new(NodeKind::ExprStmt, vec![first]))
    }

    // ---- expressions ----

    fn starts_expr(&self) -> bool {
        let t = self.peek();
        match t.kind {
            TokenKind::Name | TokenKind::Number | TokenKind::String => true,
            TokenKind::Keyword => matches!(
                t.text.as_str(),
                "not" | "lambda" | "None" | "True" | "False" | "await"
            ),
            TokenKind::Op => matches!(t.text.as_str(), "(" | "[" | "{" | "-" | "+" | "~" | "*" | "..."),
            _ => false,
        }
    }

    fn tuple_or_single(mut items: Vec<AstNode>, comma: bool) -> AstNode {
        if comma || items.len() != 1 {
            AstNode::new(NodeKind::TupleDisplay, items)
        } else {
            items.pop().unwrap()
        }
    }

    /// Comma-separated tests with optional starred items; a comma makes a tuple.
    fn testlist_star(&mut self) -> PResult<AstNode> {
        let mut items = vec![self.test_or_star()?];
        let mut comma = false;
        while self.at_op(",") {
            self.bump();
            comma = true;
            if !self.starts_expr() {
                break;
            }
            items.push(self.test_or_star()?);
        }
        Ok(Self::tuple_or_single(items, comma))
    }

    fn testlist(&mut self) -> PResult<AstNode> {
        self.testlist_star()
    }

    fn test_or_star(&mut self) -> PResult<AstNode> {
        if self.eat_op("*") {
            self.expr()
        } else {
            self.test()
        }
    }

    /// Assignment/loop target: bitwise-or level, so `in` is not consumed.
    fn target(&mut self) -> PResult<AstNode> {
        self.eat_op("*");
        self.expr()
    }

    fn target_list(&mut self) -> PResult<AstNode> {
        let mut items = vec![self.target()?];
        let mut comma = false;
        while self.at_op(",") {
            self.bump();
            comma = true;
            if !self.starts_expr() {
                break;
            }
            items.push(self.target()?);
        }
        Ok(Self::tuple_or_single(items, comma))
    }

    fn test(&mut self) -> PResult<AstNode> {
        if self.at_kw("lambda") {
            return self.lambda();
        }
        let body = self.or_test()?;
        if self.eat_kw("if") {
            let cond = self.or_test()?;
            self.expect_kw("else")?;
            let orelse = self.test()?;
            return Ok(AstNode::new(NodeKind::If, vec![body, cond, orelse]));
        }
        Ok(body)
    }

    fn test_nocond(&mut self) -> PResult<AstNode> {
        if self.at_kw("lambda") {
            self.lambda()
        } else {
            self.or_test()
        }
    }

    fn lambda(&mut self) -> PResult<AstNode> {
        self.expect_kw("lambda")?;
        let mut c = Vec::new();
        self.parameters(&mut c, ":", false)?;
        self.expect_op(":")?;
        c.push(self.test()?);
        Ok(AstNode::new(NodeKind::Lambda, c))
    }

    fn or_test(&mut self) -> PResult<AstNode> {
        let first = self.and_test()?;
        if !self.at_kw("or") {
            return Ok(first);
        }
        let mut c = vec![first];
        while self.eat_kw("or") {
            c.push(self.and_test()?);
        }
        Ok(AstNode::new(NodeKind::BoolOp, c))
    }

    fn and_test(&mut self) -> PResult<AstNode> {
        let first = self.not_test()?;
        if !self.at_kw("and") {
            return Ok(first);
        }
        let mut c = vec![first];
        while self.eat_kw("and") {
            c.push(self.not_test()?);
        }
        Ok(AstNode::new(NodeKind::BoolOp, c))
    }

    fn not_test(&mut self) -> PResult<AstNode> {
        if self.eat_kw("not") {
            let operand = self.not_test()?;
            return Ok(AstNode::new(NodeKind::UnaryOp, vec![operand]));
        }
        self.comparison()
    }

    fn eat_comp_op(&mut self) -> bool {
        let t = self.peek();
        match (t.kind, t.text.as_str()) {
            (TokenKind::Op, "<" | ">" | "==" | ">=" | "<=" | "!=") => {
                self.bump();
                true
            }
            (TokenKind::Keyword, "in") => {
                self.bump();
                true
            }
            (TokenKind::Keyword, "is") => {
                self.bump();
                self.eat_kw("not");
                true
            }
            (TokenKind::Keyword, "not") if self.peek_at(1).text == "in" => {
                self.bump();
                self.bump();
                true
            }
            _ => false,
        }
    }

    fn comparison(&mut self) -> PResult<AstNode> {
        let first = self.expr()?;
        let mut c = vec![first];
        while self.eat_comp_op() {
            c.push(self.expr()?);
        }
        if c.len() == 1 {
            Ok(c.pop().unwrap())
        } else {
            Ok(AstNode::new(NodeKind::Compare, c))
        }
    }

    fn binary_level(&mut self, ops: &[&str], next: fn(&mut Self) -> PResult<AstNode>) -> PResult<AstNode> {
        let mut left = next(self)?;
        loop {
            let t = self.peek();
            if t.kind == TokenKind::Op && ops.contains(&t.text.as_str()) {
                self.bump();
                let right = next(self)?;
                left = AstNode::new(NodeKind::BinOp, vec![left, right]);
            } else {
                return Ok(left);
            }
        }
    }

    fn expr(&mut self) -> PResult<AstNode> {
        self.binary_level(&["|"], Self::xor_expr)
    }

    fn xor_expr(&mut self) -> PResult<AstNode> {
        self.binary_level(&["^"], Self::and_expr)
    }

    fn and_expr(&mut self) -> PResult<AstNode> {
        self.binary_level(&["&"], Self::shift_expr)
    }

    fn shift_expr(&mut self) -> PResult<AstNode> {
        self.binary_level(&["<<", ">>"], Self::arith_expr)
    }

    fn arith_expr(&mut self) -> PResult<AstNode> {
        self.binary_level(&["+", "-"], Self::term)
    }

    fn term(&mut self) -> PResult<AstNode> {
        self.binary_level(&["*", "/", "//", "%", "@"], Self::factor)
    }

    fn factor(&mut self) -> PResult<AstNode> {
        if self.eat_op("+") || self.eat_op("-") || self.eat_op("~") {
            let operand = self.factor()?;
            return Ok(AstNode::new(NodeKind::UnaryOp, vec![operand]));
        }
        self.power()
    }

    fn power(&mut self) -> PResult<AstNode> {
        let base = if self.eat_kw("await") {
            AstNode::new(NodeKind::UnaryOp, vec![self.primary()?])
        } else {
            self.primary()?
        };
        if self.eat_op("**") {
            let exp = self.factor()?;
            return Ok(AstNode::new(NodeKind::BinOp, vec![base, exp]));
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<AstNode> {
        let mut node = self.atom()?;
        loop {
            if self.eat_op("(") {
                let mut c = vec![node];
                c.extend(self.arguments()?);
                node = AstNode::new(NodeKind::Call, c);
            } else if self.eat_op("[") {
                let mut c = vec![node];
                c.extend(self.subscripts()?);
                node = AstNode::new(NodeKind::Subscript, c);
            } else if self.eat_op(".") {
                self.expect_kind(TokenKind::Name)?;
                node = AstNode::new(NodeKind::Attribute, vec![node]);
            } else {
                return Ok(node);
            }
        }
    }

    /// Call arguments after `(`, consuming the closing `)`.
    fn arguments(&mut self) -> PResult<Vec<AstNode>> {
        let mut args = Vec::new();
        while !self.at_op(")") {
            if self.eat_op("*") || self.eat_op("**") {
                args.push(self.test()?);
            } else if self.at_kind(TokenKind::Name)
                && self.peek_at(1).kind == TokenKind::Op
                && self.peek_at(1).text == "="
            {
                self.bump();
                self.bump();
                args.push(self.test()?);
            } else {
                let e = self.test()?;
                if self.at_comp_for() {
                    args.push(self.generator(e)?);
                } else {
                    args.push(e);
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op(")")?;
        Ok(args)
    }

    /// Subscript items after `[`, consuming the closing `]`. Slice bounds
    /// and steps become children directly.
    fn subscripts(&mut self) -> PResult<Vec<AstNode>> {
        let mut items = Vec::new();
        while !self.at_op("]") {
            if !self.at_op(":") {
                items.push(self.test_or_star()?);
            }
            for _ in 0..2 {
                if !self.eat_op(":") {
                    break;
                }
                if !self.at_op(":") && !self.at_op("]") && !self.at_op(",") {
                    items.push(self.test()?);
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op("]")?;
        Ok(items)
    }

    fn at_comp_for(&self) -> bool {
        self.at_kw("for") || (self.at_kw("async") && self.peek_at(1).text == "for")
    }

    /// `for`/`if` clauses of a comprehension, one node each.
    fn comp_clauses(&mut self) -> PResult<Vec<AstNode>> {
        let mut clauses = Vec::new();
        loop {
            if self.at_comp_for() {
                self.eat_kw("async");
                self.expect_kw("for")?;
                let target = self.target_list()?;
                self.expect_kw("in")?;
                let iter = self.or_test()?;
                clauses.push(AstNode::new(NodeKind::Comprehension, vec![target, iter]));
            } else if self.eat_kw("if") {
                let cond = self.test_nocond()?;
                clauses.push(AstNode::new(NodeKind::Comprehension, vec![cond]));
            } else {
                return Ok(clauses);
            }
        }
    }

    fn generator(&mut self, element: AstNode) -> PResult<AstNode> {
        let mut c = vec![element];
        c.extend(self.comp_clauses()?);
        Ok(AstNode::new(NodeKind::Comprehension, c))
    }

    /// Elements of a list/set/tuple display up to `close`, or a
    /// comprehension when the first element is followed by `for`.
    /// Returns the children and whether a comma was seen.
    fn display_items(&mut self, first: AstNode, close: &str) -> PResult<(Vec<AstNode>, bool)> {
        let mut items = vec![first];
        if self.at_comp_for() {
            items.extend(self.comp_clauses()?);
            self.expect_op(close)?;
            return Ok((items, false));
        }
        let mut comma = false;
        while self.eat_op(",") {
            comma = true;
            if self.at_op(close) {
                break;
            }
            items.push(self.test_or_star()?);
        }
        self.expect_op(close)?;
        Ok((items, comma))
    }

    fn atom(&mut self) -> PResult<AstNode> {
        use NodeKind::*;
        let t = self.peek();
        match t.kind {
            TokenKind::Name => {
                self.bump();
                Ok(AstNode::leaf(Name))
            }
            TokenKind::Number => {
                self.bump();
                Ok(AstNode::leaf(Literal))
            }
            TokenKind::String => {
                while self.at_kind(TokenKind::String) {
                    self.bump();
                }
                Ok(AstNode::leaf(Literal))
            }
            TokenKind::Keyword if matches!(t.text.as_str(), "None" | "True" | "False") => {
                self.bump();
                Ok(AstNode::leaf(Literal))
            }
            TokenKind::Op => match t.text.as_str() {
                "..." => {
                    self.bump();
                    Ok(AstNode::leaf(Literal))
                }
                "(" => {
                    self.bump();
                    if self.eat_op(")") {
                        return Ok(AstNode::leaf(TupleDisplay));
                    }
                    let first = self.test_or_star()?;
                    if self.at_comp_for() {
                        let g = self.generator(first)?;
                        self.expect_op(")")?;
                        return Ok(g);
                    }
                    let (items, comma) = self.display_items(first, ")")?;
                    Ok(Self::tuple_or_single(items, comma))
                }
                "[" => {
                    self.bump();
                    if self.eat_op("]") {
                        return Ok(AstNode::leaf(ListDisplay));
                    }
                    let first = self.test_or_star()?;
                    let (items, _) = self.display_items(first, "]")?;
                    Ok(AstNode::new(ListDisplay, items))
                }
                "{" => {
                    self.bump();
                    self.brace_display()
                }
                _ => self.unexpected("expression"),
            },
            _ => self.unexpected("expression"),
        }
    }

    /// Dict or set display after `{`.
    fn brace_display(&mut self) -> PResult<AstNode> {
        use NodeKind::*;
        if self.eat_op("}") {
            return Ok(AstNode::leaf(DictDisplay));
        }
        let mut items = Vec::new();
        if self.eat_op("**") {
            items.push(self.expr()?);
        } else {
            let first = self.test_or_star()?;
            if !self.eat_op(":") {
                let (items, _) = self.display_items(first, "}")?;
                return Ok(AstNode::new(SetDisplay, items));
            }
            items.push(first);
            items.push(self.test()?);
            if self.at_comp_for() {
                items.extend(self.comp_clauses()?);
                self.expect_op("}")?;
                return Ok(AstNode::new(DictDisplay, items));
            }
        }
        while self.eat_op(",") {
            if self.at_op("}") {
                break;
            }
            if self.eat_op("**") {
                items.push(self.expr()?);
            } else {
                items.push(self.test()?);
                self.expect_op(":")?;
                items.push(self.test()?);
            }
        }
        self.expect_op("}")?;
        Ok(AstNode::new(DictDisplay, items))
    }
}
