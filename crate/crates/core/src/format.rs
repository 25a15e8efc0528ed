//! Text formats for instances and scenarios.
//!
//! Deterministic instance:
//!
//! ```text
//! n m
//! <n lines of m durations>
//! <n lines of m machine indices>
//! ```
//!
//! Stochastic instance: header `n m stochastic`, then `n` lines of `m`
//! triples `min mode max`, then the machine matrix. Scenario files are `n`
//! lines of `m` decimals. Numbers are written in their shortest exact form,
//! so writing and reading back is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::instance::{DurationKind, DurationModel, Instance, InstanceError, Scenario};

fn parse_err(line: usize, message: impl Into<String>) -> InstanceError {
    InstanceError::Parse {
        line,
        message: message.into(),
    }
}

/// Non-empty lines paired with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_numbers(line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>, InstanceError> {
    let values = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("not a number: {tok:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(parse_err(
            line_no,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(parse_err(line_no, format!("non-finite value {v}")));
    }
    Ok(values)
}

pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let stochastic = match fields.as_slice() {
        [_, _] => false,
        [_, _, "stochastic"] => true,
        _ => {
            return Err(parse_err(
                hline,
                "malformed header: expected \"n m\" or \"n m stochastic\"",
            ))
        }
    };
    let dim = |tok: &str| {
        tok.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| parse_err(hline, format!("malformed header: bad dimension {tok:?}")))
    };
    let (n, m) = (dim(fields[0])?, dim(fields[1])?);

    let mut durations = Vec::with_capacity(n);
    for job in 0..n {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(hline, format!("missing duration row for job {job}")))?;
        let width = if stochastic { 3 * m } else { m };
        let vals = parse_numbers(no, line, width)?;
        let row = if stochastic {
            vals.chunks(3)
                .map(|t| DurationModel::triangular(t[0], t[1], t[2]))
                .collect::<Result<Vec<_>, _>>()
        } else {
            vals.iter()
                .map(|&d| DurationModel::deterministic(d))
                .collect::<Result<Vec<_>, _>>()
        }
        .map_err(|e| parse_err(no, e.to_string()))?;
        durations.push(row);
    }

    let mut machines = Vec::with_capacity(n);
    for job in 0..n {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(hline, format!("missing machine row for job {job}")))?;
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| parse_err(no, format!("not a machine index: {tok:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut seen = vec![false; m];
        let is_perm = row.len() == m
            && row
                .iter()
                .all(|&k| k < m && !std::mem::replace(&mut seen[k], true));
        if !is_perm {
            return Err(parse_err(
                no,
                format!("machine row {row:?} is not a permutation of 0..{m}"),
            ));
        }
        machines.push(row);
    }
    if let Some((no, _)) = lines.next() {
        return Err(parse_err(no, "unexpected trailing content"));
    }
    Instance::new(machines, durations)
}

pub fn format_instance(instance: &Instance) -> String {
    let stochastic = instance
        .ops()
        .iter()
        .any(|o| o.duration.kind() == DurationKind::Triangular);
    let mut out = String::new();
    let (n, m) = (instance.n_jobs(), instance.n_machines());
    if stochastic {
        writeln!(out, "{n} {m} stochastic").unwrap();
    } else {
        writeln!(out, "{n} {m}").unwrap();
    }
    for row in instance.ops().chunks(m) {
        let cells: Vec<String> = row
            .iter()
            .map(|o| {
                let d = o.duration;
                if stochastic {
                    format!("{} {} {}", d.min(), d.mode(), d.max())
                } else {
                    format!("{}", d.mode())
                }
            })
            .collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    for row in instance.machine_rows() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    out
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    parse_instance(&std::fs::read_to_string(path)?)
}

pub fn write_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    std::fs::write(path, format_instance(instance))?;
    Ok(())
}

pub fn format_scenario(instance: &Instance, scenario: &Scenario) -> String {
    let mut out = String::new();
    for row in scenario.durations.chunks(instance.n_machines()) {
        let cells: Vec<String> = row.iter().map(|d| d.to_string()).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    out
}

pub fn parse_scenario(instance: &Instance, text: &str) -> Result<Scenario, InstanceError> {
    let m = instance.n_machines();
    let mut durations = Vec::with_capacity(instance.n_ops());
    let mut rows = 0;
    for (no, line) in content_lines(text) {
        if rows == instance.n_jobs() {
            return Err(parse_err(no, "unexpected trailing content"));
        }
        let vals = parse_numbers(no, line, m)?;
        for (rank, &d) in vals.iter().enumerate() {
            let model = instance.op(instance.op_id(rows, rank)).duration;
            if !(d > 0.0 && d >= model.min() && d <= model.max()) {
                return Err(parse_err(
                    no,
                    format!(
                        "duration {d} outside [{}, {}] for job {rows} rank {rank}",
                        model.min(),
                        model.max()
                    ),
                ));
            }
        }
        durations.extend(vals);
        rows += 1;
    }
    if rows != instance.n_jobs() {
        return Err(parse_err(
            text.lines().count().max(1),
            format!("expected {} rows, found {rows}", instance.n_jobs()),
        ));
    }
    Ok(Scenario { durations })
}

pub fn read_scenario(instance: &Instance, path: impl AsRef<Path>) -> Result<Scenario, InstanceError> {
    parse_scenario(instance, &std::fs::read_to_string(path)?)
}

pub fn write_scenario(
    instance: &Instance,
    scenario: &Scenario,
    path: impl AsRef<Path>,
) -> Result<(), InstanceError> {
    std::fs::write(path, format_scenario(instance, scenario))?;
    Ok(())
}
