//! CPLEX LP text format: writer for [`Model`] and a reader for the subset of
//! the format the writer produces (plus common spelling variants).
//!
//! Coefficients are written with [`to_decimal_string`]: exact whenever the
//! reduced denominator is a product of powers of 2 and 5, otherwise rounded to
//! [`DECIMAL_DIGITS`](crate::rational::DECIMAL_DIGITS) significant digits.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_traits::{One, Signed, Zero};

use crate::error::LpParseError;
use crate::model::{Cmp, Model, VarId, VarKind};
use crate::rational::{parse_decimal, to_decimal_string, Rational};

const LINE_WIDTH: usize = 200;

/// True if `name` is usable as a variable or row name in LP files.
pub fn is_lp_name(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else { return false };
    name.len() <= 255
        && (first.is_ascii_alphabetic() || "_!\"#$%&()/,;?@'`{}|~".contains(first))
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "_!\"#$%&()/,.;?@'`{}|~[]".contains(c))
        && !name.eq_ignore_ascii_case("free")
        && !name.eq_ignore_ascii_case("inf")
        && !name.eq_ignore_ascii_case("infinity")
}

pub fn export_lp(model: &Model) -> String {
    let mut out = String::new();
    let mut mentioned = vec![false; model.num_vars()];
    for (v, _) in model.objective() {
        mentioned[v.0] = true;
    }
    for c in model.constraints() {
        for (v, _) in &c.terms {
            mentioned[v.0] = true;
        }
    }
    // Variables that appear nowhere else still need to be declared.
    let mut objective = model.objective().to_vec();
    for (j, seen) in mentioned.iter().enumerate() {
        if !seen {
            objective.push((VarId(j), Rational::zero()));
        }
    }

    out.push_str("Minimize\n");
    write_expression(&mut out, model, " obj:", &objective, None);
    out.push_str("Subject To\n");
    for c in model.constraints() {
        let label = format!(" {}:", c.name);
        write_expression(&mut out, model, &label, &c.terms, Some((c.cmp, &c.rhs)));
    }

    out.push_str("Bounds\n");
    for var in model.vars() {
        match (var.kind, &var.upper) {
            (VarKind::Binary, _) => {}
            (_, Some(ub)) => {
                let _ = writeln!(out, " 0 <= {} <= {}", var.name, to_decimal_string(ub));
            }
            (_, None) => {
                let _ = writeln!(out, " {} >= 0", var.name);
            }
        }
    }
    for (section, kind) in [("Binary", VarKind::Binary), ("General", VarKind::Integer)] {
        let names: Vec<&str> = model
            .vars()
            .iter()
            .filter(|v| v.kind == kind)
            .map(|v| v.name.as_str())
            .collect();
        if names.is_empty() {
            continue;
        }
        out.push_str(section);
        out.push('\n');
        let mut line = String::new();
        for name in names {
            if line.len() + name.len() + 1 > LINE_WIDTH {
                out.push_str(&line);
                out.push('\n');
                line.clear();
            }
            line.push(' ');
            line.push_str(name);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("End\n");
    out
}

fn write_expression(
    out: &mut String,
    model: &Model,
    label: &str,
    terms: &[(VarId, Rational)],
    tail: Option<(Cmp, &Rational)>,
) {
    let mut line = label.to_string();
    let mut pieces: Vec<String> = Vec::with_capacity(terms.len() + 1);
    for (v, c) in terms {
        let sign = if c.is_negative() { "-" } else { "+" };
        let mag = c.abs();
        let name = &model.var(*v).name;
        if mag.is_one() {
            pieces.push(format!("{sign} {name}"));
        } else {
            pieces.push(format!("{sign} {} {name}", to_decimal_string(&mag)));
        }
    }
    if terms.is_empty() && tail.is_some() {
        // A row with no terms still needs a left-hand side.
        if let Some(v) = model.vars().first() {
            pieces.push(format!("+ 0 {}", v.name));
        }
    }
    if let Some((cmp, rhs)) = tail {
        pieces.push(format!("{} {}", cmp.symbol(), to_decimal_string(rhs)));
    }
    for piece in pieces {
        if line.len() + piece.len() + 1 > LINE_WIDTH {
            out.push_str(&line);
            out.push('\n');
            line = String::from("  ");
        }
        line.push(' ');
        line.push_str(&piece);
    }
    out.push_str(&line);
    out.push('\n');
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(Rational),
    Name(String),
    Label(String),
    Plus,
    Minus,
    Cmp(Cmp),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Objective,
    Constraints,
    Bounds,
    Binary,
    General,
    End,
}

fn section_header(line: &str) -> Option<Section> {
    let lower = line.trim().to_ascii_lowercase();
    let collapsed: String = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    match collapsed.as_str() {
        "minimize" | "minimise" | "minimum" | "min" => Some(Section::Objective),
        "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
        "bounds" | "bound" => Some(Section::Bounds),
        "binary" | "binaries" | "bin" => Some(Section::Binary),
        "general" | "generals" | "gen" => Some(Section::General),
        "end" => Some(Section::End),
        _ => None,
    }
}

fn tokenize(text: &str, line_no: usize) -> Result<Vec<(Token, usize)>, LpParseError> {
    let err = |message: String| LpParseError { line: line_no, message };
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '+' {
            tokens.push((Token::Plus, line_no));
            i += 1;
        } else if c == '-' {
            tokens.push((Token::Minus, line_no));
            i += 1;
        } else if c == '<' || c == '>' || c == '=' {
            let mut op = String::from(c);
            if i + 1 < chars.len() && "<>=".contains(chars[i + 1]) {
                op.push(chars[i + 1]);
                i += 1;
            }
            i += 1;
            let cmp = match op.as_str() {
                "<" | "<=" | "=<" => Cmp::Le,
                ">" | ">=" | "=>" => Cmp::Ge,
                "=" => Cmp::Eq,
                _ => return Err(err(format!("unknown operator `{op}`"))),
            };
            tokens.push((Token::Cmp(cmp), line_no));
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let literal: String = chars[start..i].iter().collect();
            let value = parse_decimal(&literal).ok_or_else(|| err(format!("bad number `{literal}`")))?;
            tokens.push((Token::Num(value), line_no));
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && !"+-<>=:".contains(chars[i]) {
                i += 1;
            }
            if start == i {
                return Err(err(format!("unexpected character `{c}`")));
            }
            let word: String = chars[start..i].iter().collect();
            let mut j = i;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            if j < chars.len() && chars[j] == ':' {
                tokens.push((Token::Label(word), line_no));
                i = j + 1;
            } else {
                tokens.push((Token::Name(word), line_no));
            }
        }
    }
    Ok(tokens)
}

struct Builder {
    order: Vec<String>,
    index: HashMap<String, usize>,
    kinds: Vec<VarKind>,
    upper: Vec<Option<Rational>>,
}

impl Builder {
    fn var(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        let j = self.order.len();
        self.order.push(name.to_string());
        self.index.insert(name.to_string(), j);
        self.kinds.push(VarKind::Continuous);
        self.upper.push(None);
        j
    }
}

type Row = (Option<String>, Vec<(usize, Rational)>, Option<(Cmp, Rational)>, usize);

/// Parses a linear expression, optionally followed by a comparator and a
/// constant right-hand side.
fn parse_rows(tokens: &[(Token, usize)], builder: &mut Builder, want_rhs: bool) -> Result<Vec<Row>, LpParseError> {
    let mut rows = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        let line = tokens[pos].1;
        let err = |line: usize, message: &str| LpParseError {
            line,
            message: message.to_string(),
        };
        let mut label = None;
        if let Token::Label(name) = &tokens[pos].0 {
            label = Some(name.clone());
            pos += 1;
        }
        let mut terms = Vec::new();
        let mut constant = Rational::zero();
        loop {
            let mut sign = Rational::one();
            let mut saw_sign = false;
            while pos < tokens.len() {
                match tokens[pos].0 {
                    Token::Plus => {}
                    Token::Minus => sign = -sign,
                    _ => break,
                }
                saw_sign = true;
                pos += 1;
            }
            let mut coeff = None;
            if let Some((Token::Num(n), _)) = tokens.get(pos) {
                coeff = Some(n.clone());
                pos += 1;
            }
            match tokens.get(pos) {
                Some((Token::Name(name), _)) => {
                    let j = builder.var(name);
                    terms.push((j, sign * coeff.unwrap_or_else(Rational::one)));
                    pos += 1;
                }
                _ => match coeff {
                    Some(c) => constant += sign * c,
                    None if saw_sign => return Err(err(line, "dangling sign")),
                    None => break,
                },
            }
            // Unlabeled rows: a new row begins after a completed right-hand side.
            if !matches!(tokens.get(pos), Some((Token::Plus | Token::Minus, _))) {
                break;
            }
        }
        let mut tail = None;
        if let Some((Token::Cmp(cmp), _)) = tokens.get(pos) {
            pos += 1;
            let mut sign = Rational::one();
            while let Some((Token::Plus | Token::Minus, _)) = tokens.get(pos) {
                if tokens[pos].0 == Token::Minus {
                    sign = -sign;
                }
                pos += 1;
            }
            let rhs = match tokens.get(pos) {
                Some((Token::Num(n), _)) => n.clone(),
                _ => return Err(err(line, "expected a numeric right-hand side")),
            };
            pos += 1;
            tail = Some((*cmp, sign * rhs - &constant));
        } else if want_rhs {
            return Err(err(line, "expected a comparator"));
        }
        if !constant.is_zero() && tail.is_none() {
            return Err(err(line, "constant terms in the objective are not supported"));
        }
        if terms.is_empty() && label.is_none() && tail.is_none() {
            return Err(err(line, "unexpected token"));
        }
        rows.push((label, terms, tail, line));
    }
    Ok(rows)
}

/// Reads an LP file. Only minimization, zero lower bounds and the sections
/// written by [`export_lp`] are supported.
pub fn parse_lp(text: &str) -> Result<Model, LpParseError> {
    let mut section = None;
    let mut buckets: HashMap<u8, Vec<(Token, usize)>> = HashMap::new();
    let mut bound_lines: Vec<(String, usize)> = Vec::new();
    let mut name_lists: Vec<(Section, String, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('\\').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let lower = content.trim().to_ascii_lowercase();
        if lower.starts_with("max") {
            return Err(LpParseError {
                line: line_no,
                message: "maximization is not supported".into(),
            });
        }
        if let Some(s) = section_header(content) {
            section = Some(s);
            continue;
        }
        match section {
            None => {
                return Err(LpParseError {
                    line: line_no,
                    message: "content before objective".into(),
                })
            }
            Some(Section::End) => {
                return Err(LpParseError {
                    line: line_no,
                    message: "content after End".into(),
                })
            }
            Some(Section::Objective) => buckets.entry(0).or_default().extend(tokenize(content, line_no)?),
            Some(Section::Constraints) => buckets.entry(1).or_default().extend(tokenize(content, line_no)?),
            Some(Section::Bounds) => bound_lines.push((content.to_string(), line_no)),
            Some(s) => name_lists.push((s, content.to_string(), line_no)),
        }
    }

    let mut builder = Builder {
        order: Vec::new(),
        index: HashMap::new(),
        kinds: Vec::new(),
        upper: Vec::new(),
    };
    let objective = parse_rows(buckets.get(&0).map_or(&[][..], |t| t), &mut builder, false)?;
    if objective.len() > 1 {
        return Err(LpParseError {
            line: objective[1].3,
            message: "objective has several rows".into(),
        });
    }
    let rows = parse_rows(buckets.get(&1).map_or(&[][..], |t| t), &mut builder, true)?;

    for (line, line_no) in &bound_lines {
        parse_bound(line, *line_no, &mut builder)?;
    }
    for (s, line, line_no) in &name_lists {
        for name in line.split_whitespace() {
            let j = builder.var(name);
            builder.kinds[j] = if *s == Section::Binary {
                VarKind::Binary
            } else {
                VarKind::Integer
            };
            let _ = line_no;
        }
    }

    let mut model = Model::new();
    let wrap = |e: crate::error::ModelError| LpParseError {
        line: 0,
        message: e.to_string(),
    };
    for j in 0..builder.order.len() {
        let upper = if builder.kinds[j] == VarKind::Binary {
            None
        } else {
            builder.upper[j].clone()
        };
        model
            .add_var(builder.order[j].clone(), builder.kinds[j], upper)
            .map_err(wrap)?;
    }
    if let Some((_, terms, _, _)) = objective.into_iter().next() {
        model
            .set_objective(terms.into_iter().map(|(j, c)| (VarId(j), c)).collect())
            .map_err(wrap)?;
    }
    for (k, (label, terms, tail, line)) in rows.into_iter().enumerate() {
        let (cmp, rhs) = tail.expect("rows carry a right-hand side");
        let name = label.unwrap_or_else(|| format!("R{}", k + 1));
        model
            .add_constraint(name, terms.into_iter().map(|(j, c)| (VarId(j), c)).collect(), cmp, rhs)
            .map_err(|e| LpParseError {
                line,
                message: e.to_string(),
            })?;
    }
    Ok(model)
}

fn parse_bound(line: &str, line_no: usize, builder: &mut Builder) -> Result<(), LpParseError> {
    let err = |message: String| LpParseError { line: line_no, message };
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.len() == 2 && words[1].eq_ignore_ascii_case("free") {
        return Err(err(format!("free variable `{}` is not supported", words[0])));
    }
    let tokens = tokenize(line, line_no)?;
    let mut items: Vec<Token> = Vec::new();
    let mut negate = false;
    for (t, _) in tokens {
        match t {
            Token::Minus => negate = !negate,
            Token::Plus => {}
            Token::Num(n) => {
                items.push(Token::Num(if negate { -n } else { n }));
                negate = false;
            }
            Token::Name(ref n) if n.eq_ignore_ascii_case("inf") || n.eq_ignore_ascii_case("infinity") => {
                items.push(Token::Name(if negate { "-inf".into() } else { "inf".into() }));
                negate = false;
            }
            other => items.push(other),
        }
    }
    let is_inf = |t: &Token| matches!(t, Token::Name(n) if n == "inf");
    let is_neg_inf = |t: &Token| matches!(t, Token::Name(n) if n == "-inf");
    let check_lower = |lo: &Token| -> Result<(), LpParseError> {
        match lo {
            Token::Num(n) if n.is_zero() => Ok(()),
            _ => Err(err("only zero lower bounds are supported".into())),
        }
    };
    let mut set_upper = |name: &str, hi: &Token| -> Result<(), LpParseError> {
        let j = builder.var(name);
        match hi {
            Token::Num(n) => builder.upper[j] = Some(n.clone()),
            t if is_inf(t) => builder.upper[j] = None,
            _ => return Err(err("bad upper bound".into())),
        }
        Ok(())
    };
    match items.as_slice() {
        [lo, Token::Cmp(Cmp::Le), Token::Name(v), Token::Cmp(Cmp::Le), hi] => {
            check_lower(lo)?;
            set_upper(v, hi)
        }
        [Token::Name(v), Token::Cmp(Cmp::Le), hi] => set_upper(v, hi),
        [hi, Token::Cmp(Cmp::Ge), Token::Name(v)] => set_upper(v, hi),
        [Token::Name(v), Token::Cmp(Cmp::Ge), lo] | [lo, Token::Cmp(Cmp::Le), Token::Name(v)] => {
            if is_neg_inf(lo) {
                return Err(err(format!("negative variable `{v}` is not supported")));
            }
            check_lower(lo)?;
            builder.var(v);
            Ok(())
        }
        [Token::Name(v), Token::Cmp(Cmp::Eq), Token::Num(n)] if n.is_zero() => {
            let j = builder.var(v);
            builder.upper[j] = Some(Rational::zero());
            Ok(())
        }
        _ => Err(err(format!("unsupported bound `{}`", line.trim()))),
    }
}
