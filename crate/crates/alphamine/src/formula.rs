//! Token vocabulary, expression trees, RPN serialization and action masking.
//!
//! Alphas are serialized as whitespace-separated RPN: operands first, then
//! the operator, with rolling windows as bare integers ("close 10 TsMean").
//! Partial expressions are stack-machine states: every prefix of a valid RPN
//! string is a state, so each state has exactly one parent (drop the last
//! token) and each terminal expression is reached by exactly one trajectory.

use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

pub const DEFAULT_WINDOWS: &[u32] = &[1, 5, 10, 20, 30, 40, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Open,
    Close,
    High,
    Low,
    Vwap,
    Volume,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Open,
        Feature::Close,
        Feature::High,
        Feature::Low,
        Feature::Vwap,
        Feature::Volume,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Open => "open",
            Feature::Close => "close",
            Feature::High => "high",
            Feature::Low => "low",
            Feature::Vwap => "vwap",
            Feature::Volume => "volume",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Abs,
    Slog1p,
    Inv,
    Sign,
    Log,
    /// Cross-sectional rank within a day, mapped to [0, 1].
    Rank,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 6] = [
        UnaryOp::Abs,
        UnaryOp::Slog1p,
        UnaryOp::Inv,
        UnaryOp::Sign,
        UnaryOp::Log,
        UnaryOp::Rank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Abs => "Abs",
            UnaryOp::Slog1p => "Slog1p",
            UnaryOp::Inv => "Inv",
            UnaryOp::Sign => "Sign",
            UnaryOp::Log => "Log",
            UnaryOp::Rank => "Rank",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Greater,
    Less,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 7] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Pow,
        BinaryOp::Greater,
        BinaryOp::Less,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "Add",
            BinaryOp::Sub => "Sub",
            BinaryOp::Mul => "Mul",
            BinaryOp::Div => "Div",
            BinaryOp::Pow => "Pow",
            BinaryOp::Greater => "Greater",
            BinaryOp::Less => "Less",
        }
    }

    /// Add and Mul tag both children with the same relation; the rest are
    /// ordered (Greater/Less are asymmetric indicator functions).
    pub fn is_commutative(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Mul)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RollingUnaryOp {
    Ref,
    TsMean,
    TsSum,
    TsStd,
    TsIr,
    TsMinMaxDiff,
    TsMaxDiff,
    TsMinDiff,
    TsVar,
    TsSkew,
    TsKurt,
    TsMax,
    TsMin,
    TsMed,
    TsMad,
    TsRank,
    TsDelta,
    TsDiv,
    TsPctChange,
    TsWma,
    TsEma,
}

impl RollingUnaryOp {
    pub const ALL: [RollingUnaryOp; 21] = [
        RollingUnaryOp::Ref,
        RollingUnaryOp::TsMean,
        RollingUnaryOp::TsSum,
        RollingUnaryOp::TsStd,
        RollingUnaryOp::TsIr,
        RollingUnaryOp::TsMinMaxDiff,
        RollingUnaryOp::TsMaxDiff,
        RollingUnaryOp::TsMinDiff,
        RollingUnaryOp::TsVar,
        RollingUnaryOp::TsSkew,
        RollingUnaryOp::TsKurt,
        RollingUnaryOp::TsMax,
        RollingUnaryOp::TsMin,
        RollingUnaryOp::TsMed,
        RollingUnaryOp::TsMad,
        RollingUnaryOp::TsRank,
        RollingUnaryOp::TsDelta,
        RollingUnaryOp::TsDiv,
        RollingUnaryOp::TsPctChange,
        RollingUnaryOp::TsWma,
        RollingUnaryOp::TsEma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RollingUnaryOp::Ref => "Ref",
            RollingUnaryOp::TsMean => "TsMean",
            RollingUnaryOp::TsSum => "TsSum",
            RollingUnaryOp::TsStd => "TsStd",
            RollingUnaryOp::TsIr => "TsIr",
            RollingUnaryOp::TsMinMaxDiff => "TsMinMaxDiff",
            RollingUnaryOp::TsMaxDiff => "TsMaxDiff",
            RollingUnaryOp::TsMinDiff => "TsMinDiff",
            RollingUnaryOp::TsVar => "TsVar",
            RollingUnaryOp::TsSkew => "TsSkew",
            RollingUnaryOp::TsKurt => "TsKurt",
            RollingUnaryOp::TsMax => "TsMax",
            RollingUnaryOp::TsMin => "TsMin",
            RollingUnaryOp::TsMed => "TsMed",
            RollingUnaryOp::TsMad => "TsMad",
            RollingUnaryOp::TsRank => "TsRank",
            RollingUnaryOp::TsDelta => "TsDelta",
            RollingUnaryOp::TsDiv => "TsDiv",
            RollingUnaryOp::TsPctChange => "TsPctChange",
            RollingUnaryOp::TsWma => "TsWMA",
            RollingUnaryOp::TsEma => "TsEMA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RollingBinaryOp {
    TsCov,
    TsCorr,
}

impl RollingBinaryOp {
    pub const ALL: [RollingBinaryOp; 2] = [RollingBinaryOp::TsCov, RollingBinaryOp::TsCorr];

    pub fn name(self) -> &'static str {
        match self {
            RollingBinaryOp::TsCov => "TsCov",
            RollingBinaryOp::TsCorr => "TsCorr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Feature(Feature),
    Unary(UnaryOp),
    Binary(BinaryOp),
    RollingUnary(RollingUnaryOp),
    RollingBinary(RollingBinaryOp),
    Window(u32),
    Sep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Feature,
    UnaryOp,
    BinaryOp,
    RollingUnaryOp,
    RollingBinaryOp,
    TimeWindow,
    Sep,
}

impl Token {
    pub fn kind(&self) -> TokenKind {
        match self {
            Token::Feature(_) => TokenKind::Feature,
            Token::Unary(_) => TokenKind::UnaryOp,
            Token::Binary(_) => TokenKind::BinaryOp,
            Token::RollingUnary(_) => TokenKind::RollingUnaryOp,
            Token::RollingBinary(_) => TokenKind::RollingBinaryOp,
            Token::Window(_) => TokenKind::TimeWindow,
            Token::Sep => TokenKind::Sep,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Feature(x) => f.write_str(x.name()),
            Token::Unary(x) => f.write_str(x.name()),
            Token::Binary(x) => f.write_str(x.name()),
            Token::RollingUnary(x) => f.write_str(x.name()),
            Token::RollingBinary(x) => f.write_str(x.name()),
            Token::Window(w) => write!(f, "{w}"),
            Token::Sep => f.write_str("Sep"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FormulaError {
    #[error("unknown token '{0}'")]
    UnknownToken(String),
    #[error("window {0} is not in the configured window set")]
    WindowNotInVocabulary(u32),
    #[error("stack underflow applying '{0}'")]
    StackUnderflow(String),
    #[error("window token in a data position near '{0}'")]
    WindowMisplaced(String),
    #[error("'{0}' requires a window on top of the stack")]
    MissingWindow(String),
    #[error("expression left {0} operands on the stack")]
    LeftoverOperands(usize),
    #[error("empty expression")]
    EmptyExpression,
    #[error("state is not a terminal expression")]
    NotTerminal,
    #[error("Sep cannot be applied as a construction token")]
    SepNotApplicable,
}

/// The action vocabulary: a fixed, ordered token list. The Sep token is
/// always present and always last, so policy heads can treat the vocabulary
/// index space as the action space.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    by_name: HashMap<String, usize>,
    windows: Vec<u32>,
    has_binary: bool,
    has_rolling_unary: bool,
    has_rolling_binary: bool,
}

impl Vocabulary {
    pub fn new(
        features: &[Feature],
        unary: &[UnaryOp],
        binary: &[BinaryOp],
        rolling_unary: &[RollingUnaryOp],
        rolling_binary: &[RollingBinaryOp],
        windows: &[u32],
    ) -> Self {
        assert!(!features.is_empty(), "vocabulary needs at least one feature");
        assert!(windows.iter().all(|&w| w >= 1), "windows must be positive");
        let mut tokens = Vec::new();
        tokens.extend(features.iter().map(|&x| Token::Feature(x)));
        tokens.extend(unary.iter().map(|&x| Token::Unary(x)));
        tokens.extend(binary.iter().map(|&x| Token::Binary(x)));
        tokens.extend(rolling_unary.iter().map(|&x| Token::RollingUnary(x)));
        tokens.extend(rolling_binary.iter().map(|&x| Token::RollingBinary(x)));
        tokens.extend(windows.iter().map(|&w| Token::Window(w)));
        tokens.push(Token::Sep);
        let by_name = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i))
            .collect();
        Vocabulary {
            tokens,
            by_name,
            windows: windows.to_vec(),
            has_binary: !binary.is_empty(),
            has_rolling_unary: !rolling_unary.is_empty(),
            has_rolling_binary: !rolling_binary.is_empty(),
        }
    }

    /// The full Table-4 vocabulary with the default window set.
    pub fn full() -> Self {
        Self::with_windows(DEFAULT_WINDOWS)
    }

    pub fn with_windows(windows: &[u32]) -> Self {
        Self::new(
            &Feature::ALL,
            &UnaryOp::ALL,
            &BinaryOp::ALL,
            &RollingUnaryOp::ALL,
            &RollingBinaryOp::ALL,
            windows,
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, idx: usize) -> &Token {
        &self.tokens[idx]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn sep_index(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn index_of(&self, token: &Token) -> Option<usize> {
        self.by_name.get(&token.to_string()).copied()
    }

    pub fn windows(&self) -> &[u32] {
        &self.windows
    }

    pub fn lookup(&self, word: &str) -> Result<Token, FormulaError> {
        if let Some(&idx) = self.by_name.get(word) {
            return Ok(self.tokens[idx]);
        }
        if let Ok(w) = word.parse::<u32>() {
            return Err(FormulaError::WindowNotInVocabulary(w));
        }
        Err(FormulaError::UnknownToken(word.to_string()))
    }

    /// Cheapest way to merge two data operands into one: a plain binary op
    /// costs one token; a rolling binary costs two (window + op).
    fn merge_cost(&self) -> Option<usize> {
        if self.has_binary {
            Some(1)
        } else if self.has_rolling_binary && !self.windows.is_empty() {
            Some(2)
        } else {
            None
        }
    }

    /// Minimum number of tokens needed to reduce a stack of `k` data items
    /// (plus an optional window on top) to a single terminal expression.
    /// `None` means the state cannot complete under this vocabulary.
    fn min_remaining(&self, k: usize, window_on_top: bool) -> Option<usize> {
        if k == 0 {
            return if window_on_top { None } else { Some(1) };
        }
        let merges = |k: usize| -> Option<usize> {
            if k <= 1 {
                Some(0)
            } else {
                self.merge_cost().map(|c| c * (k - 1))
            }
        };
        if window_on_top {
            let via_unary = if self.has_rolling_unary {
                merges(k).map(|m| 1 + m)
            } else {
                None
            };
            let via_binary = if self.has_rolling_binary && k >= 2 {
                merges(k - 1).map(|m| 1 + m)
            } else {
                None
            };
            match (via_unary, via_binary) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            }
        } else {
            merges(k)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExprNode {
    pub token: Token,
    /// Data children first, window child (if any) last.
    pub children: Vec<usize>,
}

/// A relation-typed parent→child edge of the expression AST.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationEdge {
    pub parent: usize,
    pub child: usize,
    pub relation: Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    UnaryOperand,
    CommutativeOperand,
    NoncommutativeLeft,
    NoncommutativeRight,
    RollingFeatureOperand,
    RollingTimeOperand,
}

impl Relation {
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        match self {
            Relation::UnaryOperand => 0,
            Relation::CommutativeOperand => 1,
            Relation::NoncommutativeLeft => 2,
            Relation::NoncommutativeRight => 3,
            Relation::RollingFeatureOperand => 4,
            Relation::RollingTimeOperand => 5,
        }
    }
}

/// Relation-typed edges over a node arena (tree or forest), one edge per
/// parent→child pair, in ascending parent order.
pub fn relation_edges(nodes: &[ExprNode]) -> Vec<RelationEdge> {
    let mut edges = Vec::new();
    for (parent, node) in nodes.iter().enumerate() {
        match node.token {
            Token::Feature(_) | Token::Window(_) | Token::Sep => {}
            Token::Unary(_) => {
                edges.push(RelationEdge {
                    parent,
                    child: node.children[0],
                    relation: Relation::UnaryOperand,
                });
            }
            Token::Binary(op) => {
                if op.is_commutative() {
                    for &child in &node.children {
                        edges.push(RelationEdge {
                            parent,
                            child,
                            relation: Relation::CommutativeOperand,
                        });
                    }
                } else {
                    edges.push(RelationEdge {
                        parent,
                        child: node.children[0],
                        relation: Relation::NoncommutativeLeft,
                    });
                    edges.push(RelationEdge {
                        parent,
                        child: node.children[1],
                        relation: Relation::NoncommutativeRight,
                    });
                }
            }
            Token::RollingUnary(_) => {
                edges.push(RelationEdge {
                    parent,
                    child: node.children[0],
                    relation: Relation::RollingFeatureOperand,
                });
                edges.push(RelationEdge {
                    parent,
                    child: node.children[1],
                    relation: Relation::RollingTimeOperand,
                });
            }
            Token::RollingBinary(_) => {
                edges.push(RelationEdge {
                    parent,
                    child: node.children[0],
                    relation: Relation::RollingFeatureOperand,
                });
                edges.push(RelationEdge {
                    parent,
                    child: node.children[1],
                    relation: Relation::RollingFeatureOperand,
                });
                edges.push(RelationEdge {
                    parent,
                    child: node.children[2],
                    relation: Relation::RollingTimeOperand,
                });
            }
        }
    }
    edges
}

/// A complete expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprTree {
    pub nodes: Vec<ExprNode>,
    pub root: usize,
}

impl ExprTree {
    /// Number of tokens (nodes).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Plain post-order serialization; the exact inverse of [`parse_rpn`].
    pub fn print_rpn(&self) -> String {
        let mut out = String::new();
        self.write_rpn(self.root, &mut out);
        out
    }

    fn write_rpn(&self, idx: usize, out: &mut String) {
        for &child in &self.nodes[idx].children {
            self.write_rpn(child, out);
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&self.nodes[idx].token.to_string());
    }

    /// Canonical serialization: commutative data operands are sorted by
    /// their own canonical strings, so `close open Add` and `open close Add`
    /// collapse to the same key (used for pool dedup).
    pub fn canonical_rpn(&self) -> String {
        self.canon(self.root)
    }

    fn canon(&self, idx: usize) -> String {
        let node = &self.nodes[idx];
        match node.token {
            Token::Feature(_) | Token::Window(_) | Token::Sep => node.token.to_string(),
            Token::Unary(_) => format!("{} {}", self.canon(node.children[0]), node.token),
            Token::Binary(op) => {
                let mut a = self.canon(node.children[0]);
                let mut b = self.canon(node.children[1]);
                if op.is_commutative() && b < a {
                    std::mem::swap(&mut a, &mut b);
                }
                format!("{a} {b} {}", node.token)
            }
            Token::RollingUnary(_) => format!(
                "{} {} {}",
                self.canon(node.children[0]),
                self.nodes[node.children[1]].token,
                node.token
            ),
            Token::RollingBinary(_) => {
                let mut a = self.canon(node.children[0]);
                let mut b = self.canon(node.children[1]);
                if b < a {
                    std::mem::swap(&mut a, &mut b);
                }
                format!("{a} {b} {} {}", self.nodes[node.children[2]].token, node.token)
            }
        }
    }

    pub fn relation_edges(&self) -> Vec<RelationEdge> {
        relation_edges(&self.nodes)
    }

    /// Largest rolling window appearing anywhere in the tree.
    pub fn max_window(&self) -> u32 {
        self.nodes
            .iter()
            .filter_map(|n| match n.token {
                Token::Window(w) => Some(w),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// A partial expression under construction: a stack machine over placed
/// tokens. Tokens append in RPN order; operators reduce the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildState {
    nodes: Vec<ExprNode>,
    stack: Vec<usize>,
}

impl Default for BuildState {
    fn default() -> Self {
        Self::new()
    }
}

impl BuildState {
    pub fn new() -> Self {
        BuildState {
            nodes: Vec::new(),
            stack: Vec::new(),
        }
    }

    /// Number of tokens placed so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[ExprNode] {
        &self.nodes
    }

    fn window_on_top(&self) -> bool {
        self.stack
            .last()
            .is_some_and(|&i| matches!(self.nodes[i].token, Token::Window(_)))
    }

    fn data_count(&self) -> usize {
        self.stack.len() - usize::from(self.window_on_top())
    }

    /// A state is terminal-valid when the stack holds exactly one complete
    /// data expression.
    pub fn is_terminal_valid(&self) -> bool {
        self.stack.len() == 1 && !self.window_on_top()
    }

    /// Apply a construction token (never Sep).
    pub fn apply(&mut self, token: Token) -> Result<(), FormulaError> {
        let name = || token.to_string();
        match token {
            Token::Sep => return Err(FormulaError::SepNotApplicable),
            Token::Feature(_) | Token::Window(_) => {
                if self.window_on_top() {
                    return Err(FormulaError::WindowMisplaced(name()));
                }
                let idx = self.nodes.len();
                self.nodes.push(ExprNode {
                    token,
                    children: vec![],
                });
                self.stack.push(idx);
            }
            Token::Unary(_) => {
                if self.window_on_top() {
                    return Err(FormulaError::WindowMisplaced(name()));
                }
                let a = self.stack.pop().ok_or_else(|| FormulaError::StackUnderflow(name()))?;
                let idx = self.nodes.len();
                self.nodes.push(ExprNode {
                    token,
                    children: vec![a],
                });
                self.stack.push(idx);
            }
            Token::Binary(_) => {
                if self.window_on_top() {
                    return Err(FormulaError::WindowMisplaced(name()));
                }
                if self.stack.len() < 2 {
                    return Err(FormulaError::StackUnderflow(name()));
                }
                let b = self.stack.pop().unwrap();
                let a = self.stack.pop().unwrap();
                let idx = self.nodes.len();
                self.nodes.push(ExprNode {
                    token,
                    children: vec![a, b],
                });
                self.stack.push(idx);
            }
            Token::RollingUnary(_) => {
                if !self.window_on_top() {
                    return Err(FormulaError::MissingWindow(name()));
                }
                let w = self.stack.pop().unwrap();
                let a = self.stack.pop().ok_or_else(|| FormulaError::StackUnderflow(name()))?;
                if matches!(self.nodes[a].token, Token::Window(_)) {
                    return Err(FormulaError::WindowMisplaced(name()));
                }
                let idx = self.nodes.len();
                self.nodes.push(ExprNode {
                    token,
                    children: vec![a, w],
                });
                self.stack.push(idx);
            }
            Token::RollingBinary(_) => {
                if !self.window_on_top() {
                    return Err(FormulaError::MissingWindow(name()));
                }
                if self.stack.len() < 3 {
                    return Err(FormulaError::StackUnderflow(name()));
                }
                let w = self.stack.pop().unwrap();
                let b = self.stack.pop().unwrap();
                let a = self.stack.pop().unwrap();
                for &i in &[a, b] {
                    if matches!(self.nodes[i].token, Token::Window(_)) {
                        return Err(FormulaError::WindowMisplaced(name()));
                    }
                }
                let idx = self.nodes.len();
                self.nodes.push(ExprNode {
                    token,
                    children: vec![a, b, w],
                });
                self.stack.push(idx);
            }
        }
        Ok(())
    }

    /// Convert a terminal-valid state into its expression tree.
    pub fn to_tree(&self) -> Result<ExprTree, FormulaError> {
        if self.nodes.is_empty() {
            return Err(FormulaError::EmptyExpression);
        }
        if !self.is_terminal_valid() {
            if self.stack.len() > 1 {
                return Err(FormulaError::LeftoverOperands(self.stack.len()));
            }
            return Err(FormulaError::NotTerminal);
        }
        Ok(ExprTree {
            nodes: self.nodes.clone(),
            root: self.stack[0],
        })
    }
}

/// Boolean mask over the vocabulary (including Sep, last index): a token is
/// legal iff it is stack-applicable and the resulting state can still
/// complete within `max_len` tokens. Sep is legal iff the state is
/// terminal-valid.
pub fn legal_actions(state: &BuildState, vocab: &Vocabulary, max_len: usize) -> Vec<bool> {
    let len = state.len();
    let w_top = state.window_on_top();
    let k = state.data_count();
    let fits = |min_rem: Option<usize>| -> bool {
        match min_rem {
            Some(m) => len + 1 + m <= max_len,
            None => false,
        }
    };
    vocab
        .tokens()
        .iter()
        .map(|token| match token {
            Token::Sep => state.is_terminal_valid(),
            Token::Feature(_) => !w_top && fits(vocab.min_remaining(k + 1, false)),
            Token::Window(_) => !w_top && k >= 1 && fits(vocab.min_remaining(k, true)),
            Token::Unary(_) => !w_top && k >= 1 && fits(vocab.min_remaining(k, false)),
            Token::Binary(_) => !w_top && k >= 2 && fits(vocab.min_remaining(k - 1, false)),
            Token::RollingUnary(_) => w_top && k >= 1 && fits(vocab.min_remaining(k, false)),
            Token::RollingBinary(_) => w_top && k >= 2 && fits(vocab.min_remaining(k - 1, false)),
        })
        .collect()
}

/// Parse a whitespace-separated RPN string into its unique tree.
pub fn parse_rpn(vocab: &Vocabulary, text: &str) -> Result<ExprTree, FormulaError> {
    let mut state = BuildState::new();
    for word in text.split_whitespace() {
        let token = vocab.lookup(word)?;
        if token == Token::Sep {
            break;
        }
        state.apply(token)?;
    }
    state.to_tree()
}
