//! Agent action space and its one-line textual grammar.
//!
//! ```text
//! action    = kind "(" [ arg { "," arg } ] ")"
//! kind      = "click" | "long_press" | "type" | "scroll" | "press_back"
//!           | "press_home" | "open_app" | "wait" | "terminate" | "extra"
//! arg       = name "=" value
//! name      = lower { lower | digit | "_" }
//! value     = number | string
//! number    = [ "-" | "+" ] digits [ "." digits ] [ exponent ]
//! string    = "'" { char | escape } "'" | '"' { char | escape } '"'
//! escape    = "\\" ( "\\" | "'" | '"' | "n" | "t" | "r" )
//! ```
//!
//! Arguments per kind:
//!
//! | kind         | arguments                          |
//! |--------------|------------------------------------|
//! | `click`      | `x`, `y` (numbers, clamped to 0..1) |
//! | `long_press` | `x`, `y`                           |
//! | `type`       | `text`                             |
//! | `scroll`     | `direction` (up/down/left/right)   |
//! | `open_app`   | `app_name`                         |
//! | `terminate`  | `status` (success/failure)        |
//! | `extra`      | `kind`, `args` (JSON object text)  |
//!
//! When the raw emission spans several lines, the last non-empty line is the
//! action.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{clamp_point, deviation, NormBox, NormPoint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("empty action text")]
    Empty,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("malformed action: {0}")]
    MalformedAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
    Left,
    Right,
}

impl ScrollDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Up => "up",
            Self::Down => "down",
            Self::Left => "left",
            Self::Right => "right",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "up" => Self::Up,
            "down" => Self::Down,
            "left" => Self::Left,
            "right" => Self::Right,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Success,
    Failure,
}

impl TaskStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Failure => "failure",
        }
    }
}

/// Discriminant of [`Action`], used for type-accuracy scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    LongPress,
    TypeText,
    Scroll,
    PressBack,
    PressHome,
    OpenApp,
    Wait,
    Terminate,
    Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Click { point: NormPoint },
    LongPress { point: NormPoint },
    TypeText { text: String },
    Scroll { direction: ScrollDirection },
    PressBack,
    PressHome,
    OpenApp { app_name: String },
    Wait,
    Terminate { status: TaskStatus },
    /// Dataset actions outside the fixed inventory.
    Extra { name: String, args: serde_json::Value },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::LongPress { .. } => ActionKind::LongPress,
            Action::TypeText { .. } => ActionKind::TypeText,
            Action::Scroll { .. } => ActionKind::Scroll,
            Action::PressBack => ActionKind::PressBack,
            Action::PressHome => ActionKind::PressHome,
            Action::OpenApp { .. } => ActionKind::OpenApp,
            Action::Wait => ActionKind::Wait,
            Action::Terminate { .. } => ActionKind::Terminate,
            Action::Extra { .. } => ActionKind::Extra,
        }
    }

    /// The screen location of click-like actions.
    pub fn point(&self) -> Option<NormPoint> {
        match self {
            Action::Click { point } | Action::LongPress { point } => Some(*point),
            _ => None,
        }
    }

    pub fn is_click_like(&self) -> bool {
        self.point().is_some()
    }

    /// Same action with its location replaced; other kinds pass through.
    pub fn with_point(&self, p: NormPoint) -> Action {
        match self {
            Action::Click { .. } => Action::Click { point: p },
            Action::LongPress { .. } => Action::LongPress { point: p },
            other => other.clone(),
        }
    }
}

/// A raw action line as emitted by a model or written in ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionText(String);

impl ActionText {
    pub fn new(raw: impl Into<String>) -> Result<Self, ActionError> {
        let raw = raw.into();
        if raw.trim().is_empty() {
            return Err(ActionError::Empty);
        }
        Ok(Self(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Number(f64),
    Str(String),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn malformed(&self, what: &str) -> ActionError {
        ActionError::MalformedAction(format!("{what} at `{}`", &self.src[self.pos..]))
    }

    fn expect(&mut self, c: char) -> Result<(), ActionError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.malformed(&format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.bump();
        }
        &self.src[start..self.pos]
    }

    fn string(&mut self, quote: char) -> Result<String, ActionError> {
        let start = self.pos;
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(ActionError::MalformedAction(format!(
                        "unterminated string `{}`",
                        &self.src[start..]
                    )))
                }
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(c @ ('\\' | '\'' | '"')) => out.push(c),
                    _ => {
                        return Err(ActionError::MalformedAction(format!(
                            "bad escape in `{}`",
                            &self.src[start..self.pos]
                        )))
                    }
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn value(&mut self) -> Result<Value, ActionError> {
        self.skip_ws();
        match self.peek() {
            Some(q @ ('\'' | '"')) => self.string(q).map(Value::Str),
            Some(_) => {
                let start = self.pos;
                while self
                    .peek()
                    .is_some_and(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
                {
                    self.bump();
                }
                let text = &self.src[start..self.pos];
                text.parse::<f64>()
                    .map(Value::Number)
                    .map_err(|_| ActionError::MalformedAction(format!("bad value `{}`", &self.src[start..])))
            }
            None => Err(self.malformed("missing value")),
        }
    }

    fn args(&mut self) -> Result<Vec<(&'a str, Value)>, ActionError> {
        let mut args = Vec::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.bump();
            return Ok(args);
        }
        loop {
            self.skip_ws();
            let name = self.ident();
            if name.is_empty() {
                return Err(self.malformed("expected argument name"));
            }
            self.expect('=')?;
            let value = self.value()?;
            if args.iter().any(|(n, _)| *n == name) {
                return Err(ActionError::MalformedAction(format!("duplicate argument `{name}`")));
            }
            args.push((name, value));
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(')') => return Ok(args),
                _ => return Err(self.malformed("expected `,` or `)`")),
            }
        }
    }
}

struct Args<'a> {
    line: &'a str,
    values: Vec<(&'a str, Value)>,
}

impl<'a> Args<'a> {
    fn take(&mut self, name: &str) -> Result<Value, ActionError> {
        let idx = self
            .values
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| ActionError::MalformedAction(format!("missing `{name}` in `{}`", self.line)))?;
        Ok(self.values.remove(idx).1)
    }

    fn number(&mut self, name: &str) -> Result<f64, ActionError> {
        match self.take(name)? {
            Value::Number(v) => Ok(v),
            Value::Str(s) => Err(ActionError::MalformedAction(format!(
                "`{name}` must be a number, got '{s}' in `{}`",
                self.line
            ))),
        }
    }

    fn string(&mut self, name: &str) -> Result<String, ActionError> {
        match self.take(name)? {
            Value::Str(s) => Ok(s),
            Value::Number(v) => Err(ActionError::MalformedAction(format!(
                "`{name}` must be a string, got {v} in `{}`",
                self.line
            ))),
        }
    }

    fn point(&mut self) -> Result<NormPoint, ActionError> {
        let x = self.number("x")?;
        let y = self.number("y")?;
        clamp_point(x, y).map_err(|e| ActionError::MalformedAction(format!("{e} in `{}`", self.line)))
    }

    fn finish(self) -> Result<(), ActionError> {
        match self.values.first() {
            None => Ok(()),
            Some((name, _)) => Err(ActionError::MalformedAction(format!(
                "unexpected argument `{name}` in `{}`",
                self.line
            ))),
        }
    }
}

/// Parse a model emission into a structured action.
pub fn parse_action(raw: &ActionText) -> Result<Action, ActionError> {
    let line = raw
        .as_str()
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .ok_or(ActionError::Empty)?;

    let mut p = Parser { src: line, pos: 0 };
    let kind = p.ident();
    if kind.is_empty() {
        return Err(ActionError::MalformedAction(format!("expected action name in `{line}`")));
    }
    if !matches!(
        kind,
        "click" | "long_press" | "type" | "scroll" | "press_back" | "press_home" | "open_app" | "wait"
            | "terminate" | "extra"
    ) {
        return Err(ActionError::UnknownAction(kind.to_string()));
    }
    p.expect('(')?;
    let values = p.args()?;
    p.skip_ws();
    if p.pos != line.len() {
        return Err(p.malformed("trailing input"));
    }

    let mut args = Args { line, values };
    let action = match kind {
        "click" => Action::Click { point: args.point()? },
        "long_press" => Action::LongPress { point: args.point()? },
        "type" => Action::TypeText {
            text: args.string("text")?,
        },
        "scroll" => {
            let d = args.string("direction")?;
            let direction = ScrollDirection::parse(&d)
                .ok_or_else(|| ActionError::MalformedAction(format!("bad direction '{d}' in `{line}`")))?;
            Action::Scroll { direction }
        }
        "press_back" => Action::PressBack,
        "press_home" => Action::PressHome,
        "open_app" => Action::OpenApp {
            app_name: args.string("app_name")?,
        },
        "wait" => Action::Wait,
        "terminate" => {
            let s = args.string("status")?;
            let status = match s.as_str() {
                "success" => TaskStatus::Success,
                "failure" => TaskStatus::Failure,
                _ => return Err(ActionError::MalformedAction(format!("bad status '{s}' in `{line}`"))),
            };
            Action::Terminate { status }
        }
        "extra" => {
            let name = args.string("kind")?;
            let json = args.string("args")?;
            let args_value: serde_json::Value = serde_json::from_str(&json)
                .map_err(|e| ActionError::MalformedAction(format!("bad extra args '{json}': {e}")))?;
            Action::Extra { name, args: args_value }
        }
        _ => unreachable!("kind checked above"),
    };
    args.finish()?;
    Ok(action)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// Render an action in the canonical grammar. Coordinates use 4 decimals.
pub fn serialize_action(a: &Action) -> ActionText {
    let s = match a {
        Action::Click { point } => format!("click(x={:.4}, y={:.4})", point.x(), point.y()),
        Action::LongPress { point } => format!("long_press(x={:.4}, y={:.4})", point.x(), point.y()),
        Action::TypeText { text } => format!("type(text={})", quote(text)),
        Action::Scroll { direction } => format!("scroll(direction='{}')", direction.as_str()),
        Action::PressBack => "press_back()".to_string(),
        Action::PressHome => "press_home()".to_string(),
        Action::OpenApp { app_name } => format!("open_app(app_name={})", quote(app_name)),
        Action::Wait => "wait()".to_string(),
        Action::Terminate { status } => format!("terminate(status='{}')", status.as_str()),
        Action::Extra { name, args } => format!("extra(kind={}, args={})", quote(name), quote(&args.to_string())),
    };
    ActionText(s)
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(serialize_action(self).as_str())
    }
}

/// Argument-matching rules for step scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchRules {
    /// Normalized distance accepted for clicks whose ground truth has no box.
    pub click_radius: f64,
    pub case_insensitive_text: bool,
}

impl Default for MatchRules {
    fn default() -> Self {
        Self {
            click_radius: 0.14,
            case_insensitive_text: false,
        }
    }
}

fn normalize_text(s: &str, case_insensitive: bool) -> String {
    let joined = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if case_insensitive {
        joined.to_lowercase()
    } else {
        joined
    }
}

/// Whether a predicted click lands on the ground-truth location: inside the
/// box when one exists, else within `click_radius` of the ground-truth point.
pub fn location_matches(pred: &NormPoint, gt: &NormPoint, gt_bbox: Option<&NormBox>, rules: &MatchRules) -> bool {
    match gt_bbox {
        Some(b) => deviation(pred, b) == 0.0,
        None => pred.distance(gt) <= rules.click_radius,
    }
}

pub fn actions_match(pred: &Action, gt: &Action, gt_bbox: Option<&NormBox>, rules: &MatchRules) -> bool {
    if pred.kind() != gt.kind() {
        return false;
    }
    let text_eq = |a: &str, b: &str| {
        normalize_text(a, rules.case_insensitive_text) == normalize_text(b, rules.case_insensitive_text)
    };
    match (pred, gt) {
        (Action::Click { point: p }, Action::Click { point: g })
        | (Action::LongPress { point: p }, Action::LongPress { point: g }) => location_matches(p, g, gt_bbox, rules),
        (Action::TypeText { text: a }, Action::TypeText { text: b }) => text_eq(a, b),
        (Action::OpenApp { app_name: a }, Action::OpenApp { app_name: b }) => text_eq(a, b),
        (Action::Scroll { direction: a }, Action::Scroll { direction: b }) => a == b,
        (Action::Terminate { status: a }, Action::Terminate { status: b }) => a == b,
        (Action::Extra { name: a, args: x }, Action::Extra { name: b, args: y }) => a == b && x == y,
        _ => true,
    }
}
