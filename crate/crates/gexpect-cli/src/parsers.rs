//! Parsers for the compact spec strings the CLI takes on the command
//! line: drivers, terminals, time lists, volatility rows.

use std::collections::BTreeMap;

use gexpect::{
    builtin_generator, BuiltinGenerator, Generator, GeneratorMeta, MatrixZ, RTerminal, ZModulus,
};

use crate::config::{CliError, CliResult};

/// Splits `key=val,key=val` into a map, rejecting duplicates and junk.
pub fn parse_kv(spec: &str, what: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for part in spec.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("{what}: expected key=value, got '{part}'")))?;
        if map
            .insert(k.trim().to_string(), v.trim().to_string())
            .is_some()
        {
            return Err(CliError::usage(format!("{what}: duplicate key '{k}'")));
        }
    }
    Ok(map)
}

pub fn parse_f64(s: &str, what: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::usage(format!("{what}: '{s}' is not a number")))
}

pub fn parse_usize(s: &str, what: &str) -> CliResult<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| CliError::usage(format!("{what}: '{s}' is not a count")))
}

/// Comma-separated list of numbers.
pub fn parse_f64_list(spec: &str, what: &str) -> CliResult<Vec<f64>> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_f64(p, what))
        .collect()
}

/// Bar-separated row vector, e.g. `1|0.5` (a single number is scalar).
pub fn parse_z_row(spec: &str, what: &str) -> CliResult<MatrixZ> {
    let entries: Vec<f64> = spec
        .split('|')
        .map(|p| parse_f64(p, what))
        .collect::<CliResult<_>>()?;
    if entries.is_empty() {
        return Err(CliError::usage(format!("{what}: empty volatility row")));
    }
    let d = entries.len();
    MatrixZ::new(1, d, entries).map_err(CliError::from)
}

fn take_kv(map: &mut BTreeMap<String, String>, key: &str, what: &str) -> CliResult<Option<f64>> {
    map.remove(key).map(|v| parse_f64(&v, what)).transpose()
}

fn reject_leftovers(map: &BTreeMap<String, String>, what: &str) -> CliResult<()> {
    if let Some(key) = map.keys().next() {
        return Err(CliError::usage(format!("{what}: unknown key '{key}'")));
    }
    Ok(())
}

/// Driver specs: `zero`, `linear:mu=0.5`, `negative:mu=0.5`,
/// `quadratic:nu=0.5`, `linear-y:rate=1`; all but `linear-y` accept `d=…`.
pub fn parse_generator(spec: &str) -> CliResult<Generator> {
    let what = "--gen";
    let (kind, rest) = match spec.split_once(':') {
        Some((k, r)) => (k, r),
        None => (spec, ""),
    };
    let mut kv = parse_kv(rest, what)?;
    let d = match take_kv(&mut kv, "d", what)? {
        Some(v) if v.fract() == 0.0 && v >= 1.0 => v as usize,
        Some(v) => {
            return Err(CliError::usage(format!(
                "{what}: d must be a count, got {v}"
            )))
        }
        None => 1,
    };
    let gen = match kind {
        "zero" => builtin_generator(BuiltinGenerator::Zero { n: 1, d })?,
        "linear" => {
            let mu = take_kv(&mut kv, "mu", what)?
                .ok_or_else(|| CliError::usage(format!("{what}: linear needs mu=…")))?;
            builtin_generator(BuiltinGenerator::LinearDrift { mu, d })?
        }
        "negative" => {
            let mu = take_kv(&mut kv, "mu", what)?
                .ok_or_else(|| CliError::usage(format!("{what}: negative needs mu=…")))?;
            builtin_generator(BuiltinGenerator::NegativeDrift { mu, d })?
        }
        "quadratic" => {
            let nu = take_kv(&mut kv, "nu", what)?
                .ok_or_else(|| CliError::usage(format!("{what}: quadratic needs nu=…")))?;
            builtin_generator(BuiltinGenerator::Quadratic { nu, gamma: None, d })?
        }
        "linear-y" => {
            let rate = take_kv(&mut kv, "rate", what)?
                .ok_or_else(|| CliError::usage(format!("{what}: linear-y needs rate=…")))?;
            let meta = GeneratorMeta {
                lipschitz_y: rate.abs(),
                deterministic: true,
                y_independent: false,
                zero_at_zero: false,
                z_modulus: Some(ZModulus::constant(0.0)),
            };
            Generator::custom(format!("{rate}·y"), 1, d, meta, vec![], move |_, y, _| {
                vec![rate * y[0]]
            })?
        }
        other => {
            return Err(CliError::usage(format!(
                "{what}: unknown driver kind '{other}' \
                 (zero | linear | negative | quadratic | linear-y)"
            )))
        }
    };
    reject_leftovers(&kv, what)?;
    Ok(gen)
}

/// The driver's natural modulus on a radius-`k` class, scaled: constant μ
/// for the drift kinds, `2ν·r` for the quadratic, zero for the zero driver.
pub fn natural_modulus(spec: &str, scale: f64) -> CliResult<ZModulus> {
    let what = "--gen";
    let (kind, rest) = match spec.split_once(':') {
        Some((k, r)) => (k, r),
        None => (spec, ""),
    };
    let kv = parse_kv(rest, what)?;
    let param = |key: &str| -> CliResult<f64> {
        kv.get(key)
            .map(|v| parse_f64(v, what))
            .transpose()?
            .ok_or_else(|| CliError::usage(format!("{what}: {kind} needs {key}=…")))
    };
    match kind {
        "zero" => Ok(ZModulus::constant(0.0)),
        "linear" | "negative" => Ok(ZModulus::constant(scale * param("mu")?)),
        "quadratic" => Ok(ZModulus::linear(scale * 2.0 * param("nu")?)),
        other => Err(CliError::usage(format!(
            "no natural modulus for driver kind '{other}'"
        ))),
    }
}

/// Terminal specs `y=1,z=2,u=0.2,v=0.8`; `u`, `v` default to `0`, `T`;
/// `z` accepts bar-separated rows.
pub fn parse_terminal(spec: &str, horizon: f64) -> CliResult<RTerminal> {
    let what = "--terminal";
    let mut kv = parse_kv(spec, what)?;
    let y = take_kv(&mut kv, "y", what)?
        .ok_or_else(|| CliError::usage(format!("{what}: needs y=…")))?;
    let z = match kv.remove("z") {
        Some(v) => parse_z_row(&v, what)?,
        None => MatrixZ::zeros(1, 1),
    };
    let u = take_kv(&mut kv, "u", what)?.unwrap_or(0.0);
    let v = take_kv(&mut kv, "v", what)?.unwrap_or(horizon);
    reject_leftovers(&kv, what)?;
    RTerminal::new(vec![y], z, u, v).map_err(CliError::from)
}

/// Reads `t,psi` CSV samples (header row mandatory) into sorted columns.
pub fn parse_psi_csv(text: &str) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "psi" {
        return Err(CliError::usage(format!(
            "psi csv: expected header 't,psi', got '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        if record.len() != 2 {
            return Err(CliError::usage(format!(
                "psi csv line {line}: expected 2 fields, got {}",
                record.len()
            )));
        }
        let t = parse_f64(&record[0], &format!("psi csv line {line}, column t"))?;
        let psi = parse_f64(&record[1], &format!("psi csv line {line}, column psi"))?;
        rows.push((t, psi));
    }
    if rows.len() < 2 {
        return Err(CliError::usage("psi csv: need at least 2 rows"));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rows.into_iter().unzip())
}
