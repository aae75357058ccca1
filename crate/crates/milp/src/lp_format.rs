//! CPLEX-style LP files and a plain-text result file.
//!
//! Numbers are written in fixed-point decimal with 12 significant digits so
//! that files are stable across platforms and readable by common solvers.
//! Ranged rows are split into a `_lo` and a `_hi` row.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::{SolveError, SolveOutcome, SolveRequest, SolveStatus};

/// Fixed-point rendering with 12 significant digits and trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (11 - mag).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

fn write_expr(out: &mut String, terms: &[(usize, f64)], names: &[String]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names[0]);
        return;
    }
    for (k, &(j, v)) in terms.iter().enumerate() {
        let sign = if v < 0.0 { '-' } else { '+' };
        if k == 0 && sign == '+' {
            let _ = write!(out, " {} {}", fmt_num(v.abs()), names[j]);
        } else {
            let _ = write!(out, " {sign} {} {}", fmt_num(v.abs()), names[j]);
        }
    }
}

fn sanitize(names: &[String]) -> Vec<String> {
    names
        .iter()
        .map(|n| {
            n.chars()
                .map(|c| if c.is_ascii_alphanumeric() || "_.".contains(c) { c } else { '_' })
                .collect()
        })
        .collect()
}

/// Write `req` in LP format.
pub fn write_lp<W: Write>(req: &SolveRequest, mut w: W) -> Result<(), SolveError> {
    req.validate()?;
    if req.num_cols == 0 {
        return Err(SolveError::Format("cannot write a request without columns".into()));
    }
    let cols = sanitize(&req.col_names);
    let rows = sanitize(&req.row_names);
    let mut rows_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); req.num_rows];
    let mut merged: HashMap<(usize, usize), f64> = HashMap::new();
    for &(i, j, v) in &req.triplets {
        *merged.entry((i, j)).or_default() += v;
    }
    let mut keys: Vec<_> = merged.into_iter().filter(|(_, v)| *v != 0.0).collect();
    keys.sort_by_key(|((i, j), _)| (*i, *j));
    for ((i, j), v) in keys {
        rows_terms[i].push((j, v));
    }
    let mut out = String::new();
    out.push_str("\\ written by tpath-milp\nMinimize\n obj:");
    // Zero terms included so readers see the columns in their original order.
    let obj: Vec<(usize, f64)> = req.objective.iter().copied().enumerate().collect();
    write_expr(&mut out, &obj, &cols);
    out.push_str("\nSubject To\n");
    for i in 0..req.num_rows {
        let (lo, hi) = (req.row_lower[i], req.row_upper[i]);
        let mut emit = |suffix: &str, rel: &str, rhs: f64| {
            let _ = write!(out, " {}{suffix}:", rows[i]);
            write_expr(&mut out, &rows_terms[i], &cols);
            let _ = writeln!(out, " {rel} {}", fmt_num(rhs));
        };
        if lo == hi {
            emit("", "=", lo);
        } else if lo.is_finite() && hi.is_finite() {
            emit("_lo", ">=", lo);
            emit("_hi", "<=", hi);
        } else if lo.is_finite() {
            emit("", ">=", lo);
        } else if hi.is_finite() {
            emit("", "<=", hi);
        } else {
            // Free row: keep it so row indices survive a round trip.
            emit("_free", ">=", -1e30);
        }
    }
    out.push_str("Bounds\n");
    for j in 0..req.num_cols {
        let (lo, hi) = (req.col_lower[j], req.col_upper[j]);
        let name = &cols[j];
        if lo == hi {
            let _ = writeln!(out, " {name} = {}", fmt_num(lo));
        } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            let _ = writeln!(out, " {name} free");
        } else {
            let l = if lo == f64::NEG_INFINITY { "-inf".to_string() } else { fmt_num(lo) };
            let h = if hi == f64::INFINITY { "+inf".to_string() } else { fmt_num(hi) };
            let _ = writeln!(out, " {l} <= {name} <= {h}");
        }
    }
    let generals: Vec<&String> = (0..req.num_cols).filter(|&j| req.integrality[j]).map(|j| &cols[j]).collect();
    if !generals.is_empty() {
        out.push_str("Generals\n");
        for g in generals {
            let _ = writeln!(out, " {g}");
        }
    }
    out.push_str("End\n");
    w.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(PartialEq, Clone, Copy)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Generals,
    Binaries,
}

fn parse_num(tok: &str) -> Result<f64, SolveError> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().map_err(|_| SolveError::Format(format!("bad number '{tok}'"))),
    }
}

fn is_number(tok: &str) -> bool {
    parse_num(tok).is_ok()
}

struct Parser {
    cols: Vec<String>,
    col_index: HashMap<String, usize>,
}

impl Parser {
    fn col(&mut self, name: &str) -> usize {
        if let Some(&j) = self.col_index.get(name) {
            return j;
        }
        let j = self.cols.len();
        self.cols.push(name.to_string());
        self.col_index.insert(name.to_string(), j);
        j
    }

    /// Parse `[+|-] [coef] name ...` into terms.
    fn expr(&mut self, toks: &[&str]) -> Result<Vec<(usize, f64)>, SolveError> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        let mut coef: Option<f64> = None;
        for &t in toks {
            match t {
                "+" => sign = 1.0,
                "-" => sign = -1.0,
                _ if is_number(t) => coef = Some(parse_num(t)?),
                _ => {
                    let j = self.col(t);
                    terms.push((j, sign * coef.unwrap_or(1.0)));
                    sign = 1.0;
                    coef = None;
                }
            }
        }
        Ok(terms)
    }
}

fn tokenize(line: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(line.len() + 8);
    let chars: Vec<char> = line.chars().collect();
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        let prev_is_exp = k > 0 && (chars[k - 1] == 'e' || chars[k - 1] == 'E') && k >= 2 && chars[k - 2].is_ascii_digit();
        if (c == '+' || c == '-') && !prev_is_exp {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else if c == '<' || c == '>' || c == '=' {
            spaced.push(' ');
            spaced.push(c);
            if k + 1 < chars.len() && chars[k + 1] == '=' {
                spaced.push('=');
                k += 1;
            }
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
        k += 1;
    }
    // Re-attach signs to numbers such as "- inf" in bounds.
    let raw: Vec<&str> = spaced.split_whitespace().collect();
    let mut toks: Vec<String> = Vec::new();
    let mut k = 0;
    while k < raw.len() {
        let t = raw[k];
        let starts_bound = toks.is_empty() || matches!(toks.last().map(String::as_str), Some("<=" | ">=" | "=" | "<" | ">"));
        if (t == "-" || t == "+") && k + 1 < raw.len() && is_number(raw[k + 1]) && starts_bound {
            toks.push(format!("{t}{}", raw[k + 1]));
            k += 2;
            continue;
        }
        toks.push(t.to_string());
        k += 1;
    }
    toks
}

/// Read an LP file written by [`write_lp`] (or a compatible subset of the
/// CPLEX LP format). Split `_lo`/`_hi` rows stay as two rows.
pub fn read_lp<R: BufRead>(r: R) -> Result<SolveRequest, SolveError> {
    let mut p = Parser { cols: Vec::new(), col_index: HashMap::new() };
    let mut section = Section::None;
    let mut obj_terms: Vec<(usize, f64)> = Vec::new();
    let mut rows: Vec<(String, Vec<(usize, f64)>, f64, f64)> = Vec::new();
    let mut bounds: Vec<(String, f64, f64)> = Vec::new();
    let mut integers: Vec<String> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    let mut pending = String::new();

    for line in r.lines() {
        let line = line?;
        let line = match line.find('\\') {
            Some(k) => &line[..k],
            None => &line[..],
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lower = trimmed.to_ascii_lowercase();
        let new_section = match lower.as_str() {
            "minimize" | "minimise" | "min" => Some(Section::Objective),
            "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
            "bounds" | "bound" => Some(Section::Bounds),
            "generals" | "general" | "gen" | "integers" => Some(Section::Generals),
            "binaries" | "binary" | "bin" => Some(Section::Binaries),
            "end" => Some(Section::None),
            "maximize" | "maximise" | "max" => {
                return Err(SolveError::Format("only minimization is supported".into()));
            }
            _ => None,
        };
        if let Some(s) = new_section {
            section = s;
            continue;
        }
        match section {
            Section::Objective => {
                let body = trimmed.split_once(':').map(|(_, b)| b).unwrap_or(trimmed);
                let toks = tokenize(body);
                let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
                obj_terms.extend(p.expr(&toks)?);
            }
            Section::Constraints => {
                pending.push(' ');
                pending.push_str(trimmed);
                let has_rel = ["<=", ">=", "=", "<", ">"].iter().any(|r| pending.contains(r));
                let ends_with_rhs = pending.split_whitespace().last().map(is_number).unwrap_or(false);
                if !(has_rel && ends_with_rhs) {
                    continue;
                }
                let text = std::mem::take(&mut pending);
                let (name, body) = match text.split_once(':') {
                    Some((n, b)) => (n.trim().to_string(), b.to_string()),
                    None => (format!("r{}", rows.len()), text.clone()),
                };
                let toks = tokenize(&body);
                let rel_at = toks
                    .iter()
                    .position(|t| matches!(t.as_str(), "<=" | ">=" | "=" | "<" | ">"))
                    .ok_or_else(|| SolveError::Format(format!("row {name} has no relation")))?;
                let lhs: Vec<&str> = toks[..rel_at].iter().map(String::as_str).collect();
                let rhs = parse_num(toks.get(rel_at + 1).ok_or_else(|| SolveError::Format(format!("row {name} has no rhs")))?)?;
                let terms = p.expr(&lhs)?;
                let (lo, hi) = match toks[rel_at].as_str() {
                    "<=" | "<" => (f64::NEG_INFINITY, rhs),
                    ">=" | ">" => (rhs, f64::INFINITY),
                    _ => (rhs, rhs),
                };
                let (lo, hi) = if name.ends_with("_free") { (f64::NEG_INFINITY, f64::INFINITY) } else { (lo, hi) };
                rows.push((name, terms, lo, hi));
            }
            Section::Bounds => {
                let toks = tokenize(trimmed);
                let t: Vec<&str> = toks.iter().map(String::as_str).collect();
                match t.as_slice() {
                    [name, free] if free.eq_ignore_ascii_case("free") => {
                        p.col(name);
                        bounds.push((name.to_string(), f64::NEG_INFINITY, f64::INFINITY));
                    }
                    [l, "<=", name, "<=", h] => {
                        p.col(name);
                        bounds.push((name.to_string(), parse_num(l)?, parse_num(h)?));
                    }
                    [name, "=", v] => {
                        p.col(name);
                        let v = parse_num(v)?;
                        bounds.push((name.to_string(), v, v));
                    }
                    [name, ">=", v] => {
                        p.col(name);
                        bounds.push((name.to_string(), parse_num(v)?, f64::NAN));
                    }
                    [name, "<=", v] => {
                        p.col(name);
                        bounds.push((name.to_string(), f64::NAN, parse_num(v)?));
                    }
                    _ => return Err(SolveError::Format(format!("unrecognized bound '{trimmed}'"))),
                }
            }
            Section::Generals => {
                for name in trimmed.split_whitespace() {
                    p.col(name);
                    integers.push(name.to_string());
                }
            }
            Section::Binaries => {
                for name in trimmed.split_whitespace() {
                    p.col(name);
                    binaries.push(name.to_string());
                }
            }
            Section::None => {}
        }
    }
    if !pending.trim().is_empty() {
        return Err(SolveError::Format(format!("unterminated row '{}'", pending.trim())));
    }

    let n = p.cols.len();
    let mut req = SolveRequest::new(n);
    req.col_names = p.cols.clone();
    for (j, v) in obj_terms {
        req.objective[j] += v;
    }
    for (name, terms, lo, hi) in rows {
        req.add_row(name, &terms, lo, hi);
    }
    for (name, lo, hi) in bounds {
        let j = p.col_index[&name];
        if !lo.is_nan() {
            req.col_lower[j] = lo;
        }
        if !hi.is_nan() {
            req.col_upper[j] = hi;
        }
    }
    for name in integers {
        req.integrality[p.col_index[&name]] = true;
    }
    for name in binaries {
        let j = p.col_index[&name];
        req.integrality[j] = true;
        req.col_lower[j] = req.col_lower[j].max(0.0);
        req.col_upper[j] = req.col_upper[j].min(1.0);
    }
    Ok(req)
}

/// Write a result file: `status`, `objective`, `bound`, then one `name value` per column.
pub fn write_solution<W: Write>(out: &SolveOutcome, names: &[String], mut w: W) -> Result<(), SolveError> {
    let names = sanitize(names);
    let mut s = String::new();
    let _ = writeln!(s, "status {}", out.status.as_str());
    let _ = writeln!(s, "objective {}", fmt_or_nan(out.objective));
    let _ = writeln!(s, "bound {}", fmt_or_nan(out.bound));
    for (name, v) in names.iter().zip(&out.primal) {
        let _ = writeln!(s, "{name} {}", fmt_num(*v));
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn fmt_or_nan(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        fmt_num(v)
    }
}

/// Read a result file against the column names of the originating request.
pub fn read_solution<R: BufRead>(r: R, names: &[String]) -> Result<SolveOutcome, SolveError> {
    let names = sanitize(names);
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();
    let mut status = None;
    let mut objective = f64::NAN;
    let mut bound = f64::NAN;
    let mut primal = vec![f64::NAN; names.len()];
    for line in r.lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        let (Some(key), Some(val)) = (it.next(), it.next()) else { continue };
        let num = |v: &str| if v == "nan" { Ok(f64::NAN) } else { parse_num(v) };
        match key {
            "status" => {
                status = Some(SolveStatus::parse(val).ok_or_else(|| SolveError::Format(format!("unknown status '{val}'")))?)
            }
            "objective" => objective = num(val)?,
            "bound" => bound = num(val)?,
            name => {
                let j = *index.get(name).ok_or_else(|| SolveError::Format(format!("unknown column '{name}'")))?;
                primal[j] = num(val)?;
            }
        }
    }
    let status = status.ok_or_else(|| SolveError::Format("result file has no status".into()))?;
    if status.has_solution() && primal.iter().any(|v| v.is_nan()) {
        return Err(SolveError::Format("result file misses column values".into()));
    }
    if !status.has_solution() {
        primal.clear();
    }
    Ok(SolveOutcome {
        status,
        primal,
        objective,
        bound,
        wall_time: std::time::Duration::ZERO,
        nodes: 0,
        lp_iterations: 0,
    })
}
