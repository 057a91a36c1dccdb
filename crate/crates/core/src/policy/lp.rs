//! CPLEX LP text export and a reader for the files this module writes.

use std::fmt::Write as _;
use std::path::Path;

use super::milp::{Domain, MilpProgram, Sense};
use crate::error::{Error, Result};

/// A row as it appears in an LP file.
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub name: String,
    pub terms: Vec<(String, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Name-based view of an LP file.
#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    pub objective: Vec<(String, f64)>,
    pub constant: f64,
    pub rows: Vec<LpRow>,
    pub bounds: Vec<(String, f64, f64)>,
    pub binaries: Vec<String>,
}

impl LpModel {
    pub fn from_program(program: &MilpProgram) -> Self {
        let name = |j: usize| program.variables[j].name.clone();
        LpModel {
            objective: program.objective.iter().map(|&(j, c)| (name(j), c)).collect(),
            constant: program.objective_constant,
            rows: program
                .constraints
                .iter()
                .map(|r| LpRow {
                    name: r.name.clone(),
                    terms: r.terms.iter().map(|&(j, c)| (name(j), c)).collect(),
                    sense: r.sense,
                    rhs: r.rhs,
                })
                .collect(),
            bounds: program
                .variables
                .iter()
                .filter_map(|v| match v.domain {
                    Domain::Continuous { lo, hi } => Some((v.name.clone(), lo, hi)),
                    Domain::Binary => None,
                })
                .collect(),
            binaries: program
                .variables
                .iter()
                .filter(|v| v.domain == Domain::Binary)
                .map(|v| v.name.clone())
                .collect(),
        }
    }
}

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Terms per output line; long expressions continue on lines starting with a sign.
const TERMS_PER_LINE: usize = 8;

fn write_terms(out: &mut String, terms: &[(String, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0");
    }
    for (k, (name, c)) in terms.iter().enumerate() {
        let sign = if c.is_sign_negative() { '-' } else { '+' };
        if k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n  ");
        }
        if k == 0 && sign == '+' {
            let _ = write!(out, " {} {name}", num(*c));
        } else {
            let _ = write!(out, " {sign} {} {name}", num(c.abs()));
        }
    }
}

/// LP text of a program.
pub fn write_lp(program: &MilpProgram) -> String {
    let model = LpModel::from_program(program);
    let mut out = String::from("\\ welfare maximization program\nMaximize\n obj:");
    write_terms(&mut out, &model.objective);
    let c = model.constant;
    let _ = writeln!(out, " {} {}", if c.is_sign_negative() { '-' } else { '+' }, num(c.abs()));
    out.push_str("Subject To\n");
    for row in &model.rows {
        let _ = write!(out, " {}:", row.name);
        write_terms(&mut out, &row.terms);
        let op = match row.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", num(row.rhs));
    }
    if !model.bounds.is_empty() {
        out.push_str("Bounds\n");
        for (name, lo, hi) in &model.bounds {
            let _ = writeln!(out, " {} <= {name} <= {}", num(*lo), num(*hi));
        }
    }
    out.push_str("Binary\n");
    for chunk in model.binaries.chunks(10) {
        let _ = writeln!(out, " {}", chunk.join(" "));
    }
    out.push_str("End\n");
    out
}

pub fn export_lp(program: &MilpProgram, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_lp(program))?;
    Ok(())
}

fn parse_num(tok: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Input(format!("LP: bad number `{tok}`")))
}

/// Parses `[+|-] coef name ...` sequences. A trailing bare number is returned
/// separately (objective constant).
fn parse_terms(tokens: &[&str]) -> Result<(Vec<(String, f64)>, f64)> {
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut i = 0;
    let mut sign = 1.0;
    while i < tokens.len() {
        match tokens[i] {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            tok => {
                let c = parse_num(tok)?;
                match tokens.get(i + 1) {
                    Some(name) if *name != "+" && *name != "-" => {
                        terms.push((name.to_string(), sign * c));
                        i += 1;
                    }
                    _ => constant += sign * c,
                }
                sign = 1.0;
            }
        }
        i += 1;
    }
    Ok((terms, constant))
}

/// Reads an LP file in the dialect produced by [`write_lp`].
pub fn parse_lp(text: &str) -> Result<LpModel> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Objective,
        Rows,
        Bounds,
        Binary,
    }
    let mut model = LpModel { objective: vec![], constant: 0.0, rows: vec![], bounds: vec![], binaries: vec![] };
    let mut section = Section::None;
    // join continuation lines onto the statement they extend
    let mut statements: Vec<String> = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        let continues = line.starts_with("+ ") || line.starts_with("- ");
        match statements.last_mut() {
            Some(last) if continues => {
                last.push(' ');
                last.push_str(line);
            }
            _ => statements.push(line.to_string()),
        }
    }
    for line in &statements {
        let line = line.as_str();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line {
            "Maximize" => {
                section = Section::Objective;
                continue;
            }
            "Subject To" => {
                section = Section::Rows;
                continue;
            }
            "Bounds" => {
                section = Section::Bounds;
                continue;
            }
            "Binary" => {
                section = Section::Binary;
                continue;
            }
            "End" => break,
            _ => {}
        }
        match section {
            Section::Objective => {
                let body = line.split_once(':').map(|(_, b)| b).unwrap_or(line);
                let tokens: Vec<&str> = body.split_whitespace().collect();
                let (terms, constant) = parse_terms(&tokens)?;
                model.objective = terms;
                model.constant = constant;
            }
            Section::Rows => {
                let (name, body) = line.split_once(':').ok_or_else(|| Error::Input(format!("LP: unnamed row `{line}`")))?;
                let tokens: Vec<&str> = body.split_whitespace().collect();
                let op = tokens
                    .iter()
                    .position(|t| matches!(*t, "<=" | ">=" | "="))
                    .ok_or_else(|| Error::Input(format!("LP: row `{name}` has no relation")))?;
                let sense = match tokens[op] {
                    "<=" => Sense::Le,
                    ">=" => Sense::Ge,
                    _ => Sense::Eq,
                };
                let rhs = parse_num(tokens.get(op + 1).copied().unwrap_or(""))?;
                let (terms, _) = parse_terms(&tokens[..op])?;
                model.rows.push(LpRow { name: name.trim().to_string(), terms, sense, rhs });
            }
            Section::Bounds => {
                let t: Vec<&str> = line.split_whitespace().collect();
                match t.as_slice() {
                    [lo, "<=", name, "<=", hi] => model.bounds.push((name.to_string(), parse_num(lo)?, parse_num(hi)?)),
                    _ => return Err(Error::Input(format!("LP: unsupported bound `{line}`"))),
                }
            }
            Section::Binary => model.binaries.extend(line.split_whitespace().map(String::from)),
            Section::None => return Err(Error::Input(format!("LP: text before the objective: `{line}`"))),
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::Neighborhood;
    use crate::policy::{encode_milp, PolicyClass};
    use crate::welfare::EffectTable;

    #[test]
    fn round_trip_two_nodes() {
        let hoods = vec![
            Neighborhood { unit: 0, first: vec![1], second: vec![] },
            Neighborhood { unit: 1, first: vec![0], second: vec![] },
        ];
        let t = EffectTable::from_fn(2, hoods, |u, e| 0.1 * u as f64 - 0.37 * e.s1 as f64 + f64::from(u8::from(e.d)) / 3.0);
        let x = vec![vec![0.25], vec![-1.5]];
        let prog = encode_milp(&t, &x, &PolicyClass::linear(1, &Default::default()).unwrap(), Some(0.5)).unwrap();
        let parsed = parse_lp(&write_lp(&prog)).unwrap();
        assert_eq!(parsed, LpModel::from_program(&prog));
        assert_eq!(parsed.binaries.len(), prog.n_binaries());
        assert_eq!(parsed.rows.len(), prog.constraints.len());
    }

    #[test]
    fn capacity_row_text() {
        let hoods = (0..4).map(Neighborhood::isolated).collect();
        let t = EffectTable::from_fn(4, hoods, |_, _| 1.0);
        let prog = encode_milp(&t, &[], &PolicyClass::explicit(), Some(0.5)).unwrap();
        let text = write_lp(&prog);
        assert!(text.contains(" capacity: 1.0 p_0 + 1.0 p_1 + 1.0 p_2 + 1.0 p_3 <= 2.0\n"), "{text}");
    }

    #[test]
    fn long_rows_wrap_and_round_trip() {
        let n = 30;
        let hoods = (0..n).map(|i| Neighborhood { unit: i, first: vec![(i + 1) % n, (i + 2) % n], second: vec![] }).collect();
        let t = EffectTable::from_fn(n, hoods, |u, e| (u as f64 * 0.7).sin() - 0.2 * e.s1 as f64);
        let prog = encode_milp(&t, &[], &PolicyClass::explicit(), Some(0.4)).unwrap();
        let text = write_lp(&prog);
        assert!(text.lines().all(|l| l.len() < 560), "line too long");
        assert_eq!(parse_lp(&text).unwrap(), LpModel::from_program(&prog));
    }
}
