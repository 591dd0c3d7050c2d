use std::collections::HashMap;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::io::Table;

/// One generated-column operation.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Square(String),
    Interact(String, String),
    /// Every pairwise product of the listed columns.
    InteractAll(Vec<String>),
    Power(String, u32),
    /// Products of a column with the panel trend and, for degree 2, its
    /// square.
    TrendInteract(String, u32),
    /// The panel trend itself, up to the given degree.
    Trend(u32),
    /// Value at the first period of each panel unit.
    Initial(String),
    /// Running sum over periods within each panel unit.
    Cumulative(String),
    /// Indicators for every level except the first.
    Dummies(String),
    /// Within transformation of the outcome, regressors and controls.
    GroupDemean(String),
}

/// An ordered list of transforms plus the panel layout used by the
/// time-dependent ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformSpec {
    /// `(unit column, period column)`.
    pub panel: Option<(String, String)>,
    pub steps: Vec<Transform>,
}

/// `None` for the `panel` declaration, which the caller handles.
fn parse_line(line: &str, lineno: usize) -> Result<Option<Transform>> {
    let err = |m: String| CliError::Config(format!("transform spec line {lineno}: {m}"));
    let open = line
        .find('(')
        .ok_or_else(|| err(format!("expected name(args), found '{line}'")))?;
    if !line.ends_with(')') {
        return Err(err("missing closing parenthesis".into()));
    }
    let name = line[..open].trim();
    let args: Vec<String> = line[open + 1..line.len() - 1]
        .split(',')
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    let arity = |k: usize| -> Result<()> {
        if args.len() == k {
            Ok(())
        } else {
            Err(err(format!(
                "{name} takes {k} argument(s), found {}",
                args.len()
            )))
        }
    };
    let degree = |s: &str, max: u32| -> Result<u32> {
        match s.parse::<u32>() {
            Ok(p) if (1..=max).contains(&p) => Ok(p),
            _ => Err(err(format!(
                "{name}: degree '{s}' must be an integer in 1..={max}"
            ))),
        }
    };
    let t = match name {
        "panel" => return Ok(None),
        "square" => {
            arity(1)?;
            Transform::Square(args[0].clone())
        }
        "interact" => {
            arity(2)?;
            Transform::Interact(args[0].clone(), args[1].clone())
        }
        "interact_all" => {
            if args.len() < 2 {
                return Err(err("interact_all needs at least two columns".into()));
            }
            Transform::InteractAll(args)
        }
        "power" => {
            arity(2)?;
            let p = degree(&args[1], 5)?;
            if p < 2 {
                return Err(err("power: exponent must be 2..=5".into()));
            }
            Transform::Power(args[0].clone(), p)
        }
        "trend_interact" => {
            arity(2)?;
            Transform::TrendInteract(args[0].clone(), degree(&args[1], 2)?)
        }
        "trend" => {
            arity(1)?;
            Transform::Trend(degree(&args[0], 2)?)
        }
        "initial" => {
            arity(1)?;
            Transform::Initial(args[0].clone())
        }
        "cumulative" => {
            arity(1)?;
            Transform::Cumulative(args[0].clone())
        }
        "dummies" => {
            arity(1)?;
            Transform::Dummies(args[0].clone())
        }
        "group_demean" => {
            arity(1)?;
            Transform::GroupDemean(args[0].clone())
        }
        other => return Err(err(format!("unknown transform '{other}'"))),
    };
    Ok(Some(t))
}

impl TransformSpec {
    /// Parses one transform per line; `#` starts a comment. `panel(unit,
    /// period)` declares the layout for `initial`, `cumulative` and the trend
    /// transforms.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = TransformSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match parse_line(line, i + 1)? {
                Some(t) => spec.steps.push(t),
                None => {
                    let inner = &line[line.find('(').expect("checked") + 1..line.len() - 1];
                    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
                    let [unit, period] = parts[..] else {
                        return Err(CliError::Config(format!(
                            "transform spec line {}: panel takes (unit, period)",
                            i + 1
                        )));
                    };
                    spec.panel = Some((unit.to_string(), period.to_string()));
                }
            }
        }
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!(
                "cannot read transform spec '{}': {e}",
                path.display()
            ))
        })?;
        Self::parse(&text)
    }

    /// Columns absorbed by `group_demean` steps, in order.
    pub fn absorbed(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter_map(|t| match t {
                Transform::GroupDemean(by) => Some(by.clone()),
                _ => None,
            })
            .collect()
    }
}

struct Panel {
    /// Observation indices of each unit, sorted by period.
    units: Vec<Vec<usize>>,
    /// Period minus the earliest period in the sample.
    trend: Vec<f64>,
}

fn panel_layout(table: &Table, spec: &TransformSpec) -> Result<Option<Panel>> {
    let Some((unit, period)) = &spec.panel else {
        return Ok(None);
    };
    let codes = table.categorical(unit)?;
    let time = table.numeric(period)?;
    let mut units: Vec<Vec<usize>> = Vec::new();
    for (i, &c) in codes.iter().enumerate() {
        let c = c as usize;
        if c == units.len() {
            units.push(Vec::new());
        }
        units[c].push(i);
    }
    for members in &mut units {
        members.sort_by(|&a, &b| time[a].total_cmp(&time[b]).then(a.cmp(&b)));
    }
    let t0 = time.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Some(Panel {
        units,
        trend: time.iter().map(|t| t - t0).collect(),
    }))
}

fn need_panel<'a>(panel: &'a Option<Panel>, op: &str) -> Result<&'a Panel> {
    panel
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{op} requires a panel(unit, period) declaration")))
}

/// Applies the column-generating steps, adding each new column to `table`.
/// Returns the generated names in spec order. `group_demean` steps are
/// skipped here; see [`TransformSpec::absorbed`].
pub fn apply_transforms(table: &mut Table, spec: &TransformSpec) -> Result<Vec<String>> {
    let panel = panel_layout(table, spec)?;
    let mut generated: Vec<String> = Vec::new();
    let mut add = |table: &mut Table, name: String, values: Vec<f64>| -> Result<()> {
        if table.has(&name) {
            return Err(CliError::Config(format!(
                "generated column '{name}' already exists"
            )));
        }
        table.set_numeric(&name, values);
        generated.push(name);
        Ok(())
    };
    for step in &spec.steps {
        match step {
            Transform::Square(c) => {
                let v = table.numeric(c)?;
                add(table, format!("{c}^2"), v.iter().map(|x| x * x).collect())?;
            }
            Transform::Power(c, p) => {
                let v = table.numeric(c)?;
                add(
                    table,
                    format!("{c}^{p}"),
                    v.iter().map(|x| x.powi(*p as i32)).collect(),
                )?;
            }
            Transform::Interact(a, b) => {
                let (va, vb) = (table.numeric(a)?, table.numeric(b)?);
                add(
                    table,
                    format!("{a}*{b}"),
                    va.iter().zip(&vb).map(|(x, y)| x * y).collect(),
                )?;
            }
            Transform::InteractAll(cols) => {
                for (i, a) in cols.iter().enumerate() {
                    for b in &cols[i + 1..] {
                        let (va, vb) = (table.numeric(a)?, table.numeric(b)?);
                        add(
                            table,
                            format!("{a}*{b}"),
                            va.iter().zip(&vb).map(|(x, y)| x * y).collect(),
                        )?;
                    }
                }
            }
            Transform::Trend(degree) => {
                let p = need_panel(&panel, "trend")?;
                add(table, "trend".into(), p.trend.clone())?;
                if *degree == 2 {
                    add(
                        table,
                        "trend^2".into(),
                        p.trend.iter().map(|t| t * t).collect(),
                    )?;
                }
            }
            Transform::TrendInteract(c, degree) => {
                let p = need_panel(&panel, "trend_interact")?;
                let v = table.numeric(c)?;
                add(
                    table,
                    format!("{c}*trend"),
                    v.iter().zip(&p.trend).map(|(x, t)| x * t).collect(),
                )?;
                if *degree == 2 {
                    add(
                        table,
                        format!("{c}*trend^2"),
                        v.iter().zip(&p.trend).map(|(x, t)| x * t * t).collect(),
                    )?;
                }
            }
            Transform::Initial(c) => {
                let p = need_panel(&panel, "initial")?;
                let v = table.numeric(c)?;
                let mut out = vec![0.0; v.len()];
                for members in &p.units {
                    let first = v[members[0]];
                    members.iter().for_each(|&i| out[i] = first);
                }
                add(table, format!("init({c})"), out)?;
            }
            Transform::Cumulative(c) => {
                let p = need_panel(&panel, "cumulative")?;
                let v = table.numeric(c)?;
                let mut out = vec![0.0; v.len()];
                for members in &p.units {
                    let mut acc = 0.0;
                    for &i in members {
                        acc += v[i];
                        out[i] = acc;
                    }
                }
                add(table, format!("cum({c})"), out)?;
            }
            Transform::Dummies(c) => {
                let codes = table.categorical(c)?;
                let levels = codes.iter().copied().max().map_or(0, |m| m + 1);
                for level in 1..levels {
                    let values = codes
                        .iter()
                        .map(|&k| f64::from(u8::from(k == level)))
                        .collect();
                    add(table, format!("{c}={level}"), values)?;
                }
            }
            Transform::GroupDemean(_) => {}
        }
    }
    Ok(generated)
}

/// Removes the fixed effects of one or more categorical variables from
/// every column. One variable is exact; several use alternating projections
/// until the largest change falls below `1e-13` of the column scale.
pub fn absorb(columns: &mut [Vec<f64>], groups: &[Vec<i64>]) -> Result<()> {
    if groups.is_empty() {
        return Ok(());
    }
    let maps: Vec<(Vec<usize>, Vec<f64>)> = groups
        .iter()
        .map(|codes| {
            let mut index = HashMap::new();
            let ids: Vec<usize> = codes
                .iter()
                .map(|c| {
                    let next = index.len();
                    *index.entry(*c).or_insert(next)
                })
                .collect();
            let mut counts = vec![0.0; index.len()];
            ids.iter().for_each(|&g| counts[g] += 1.0);
            (ids, counts)
        })
        .collect();
    let sweep = |col: &mut [f64], ids: &[usize], counts: &[f64]| -> f64 {
        let mut sums = vec![0.0; counts.len()];
        for (v, &g) in col.iter().zip(ids) {
            sums[g] += v;
        }
        let mut change = 0.0f64;
        for (v, &g) in col.iter_mut().zip(ids) {
            let m = sums[g] / counts[g];
            *v -= m;
            change = change.max(m.abs());
        }
        change
    };
    for col in columns.iter_mut() {
        let scale = col
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut converged = false;
        for _ in 0..10_000 {
            let change = maps
                .iter()
                .map(|(ids, counts)| sweep(col, ids, counts))
                .fold(0.0, f64::max);
            if maps.len() == 1 || change <= 1e-13 * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(CliError::Data(
                "fixed-effect absorption did not converge".into(),
            ));
        }
    }
    Ok(())
}
