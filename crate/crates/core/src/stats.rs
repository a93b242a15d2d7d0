//! Correlation of per-model score series, with two-sided t-test p-values.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("duplicate model name `{0}` in score series")]
    DuplicateModel(String),
    #[error("non-finite score {value} for model `{model}`")]
    NonFinite { model: String, value: f64 },
    #[error("need at least 3 models in common, found {0}")]
    InsufficientOverlap(usize),
    #[error("series `{0}` has zero variance over the common models")]
    ZeroVariance(&'static str),
    #[error("failed to read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Per-model scores. Model names are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    entries: Vec<(String, f64)>,
}

impl ScoreSeries {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self, StatsError> {
        let entries: Vec<(String, f64)> = entries.into_iter().collect();
        let mut seen = HashSet::new();
        for (name, value) in &entries {
            if !value.is_finite() {
                return Err(StatsError::NonFinite {
                    model: name.clone(),
                    value: *value,
                });
            }
            if !seen.insert(name.as_str()) {
                return Err(StatsError::DuplicateModel(name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Two-column text: `model_name,value` or `model_name<TAB>value`, split
    /// at the last separator so names may contain commas. Blank lines and
    /// `#` comments are skipped; a first line whose value is not numeric is
    /// taken as a header.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, StatsError> {
        let mut entries = Vec::new();
        let mut first_record = true;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| StatsError::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                message,
            };
            let Some(split) = line.rfind([',', '\t']) else {
                return Err(parse_err("expected `model_name,value`".into()));
            };
            let name = line[..split].trim();
            let value = line[split + 1..].trim();
            let is_first = std::mem::replace(&mut first_record, false);
            match value.parse::<f64>() {
                Ok(v) if !name.is_empty() => entries.push((name.to_string(), v)),
                Ok(_) => return Err(parse_err("empty model name".into())),
                Err(_) if is_first => continue,
                Err(e) => return Err(parse_err(format!("bad value `{value}`: {e}"))),
            }
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, StatsError> {
        let text = fs::read_to_string(path).map_err(|e| StatsError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }
}

/// Inner join of two series on model name, sorted by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Joined {
    pub models: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Models present in only one of the series.
    pub dropped: Vec<String>,
}

pub fn join(x: &ScoreSeries, y: &ScoreSeries) -> Joined {
    let xm: BTreeMap<&str, f64> = x.entries.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let ym: BTreeMap<&str, f64> = y.entries.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let mut joined = Joined {
        models: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        dropped: Vec::new(),
    };
    for (name, xv) in &xm {
        match ym.get(name) {
            Some(yv) => {
                joined.models.push(name.to_string());
                joined.x.push(*xv);
                joined.y.push(*yv);
            }
            None => joined.dropped.push(name.to_string()),
        }
    }
    joined.dropped.extend(
        ym.keys()
            .filter(|n| !xm.contains_key(*n))
            .map(|n| n.to_string()),
    );
    joined.dropped.sort();
    joined
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Sample Pearson correlation of two equal-length slices.
pub fn pearson_slices(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len();
    if n < 3 {
        return Err(StatsError::InsufficientOverlap(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y"));
    }
    // sqrt of the product (not the product of roots) keeps r = 1 exact for x = y
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation {
        r,
        p: correlation_p_value(r, n),
        n,
    })
}

/// Average ranks, 1-based; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman_slices(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    pearson_slices(&average_ranks(x), &average_ranks(y))
}

pub fn pearson(x: &ScoreSeries, y: &ScoreSeries) -> Result<Correlation, StatsError> {
    let j = join(x, y);
    pearson_slices(&j.x, &j.y)
}

/// Spearman's rho: Pearson on average ranks of the joined values.
pub fn rank_pearson(x: &ScoreSeries, y: &ScoreSeries) -> Result<Correlation, StatsError> {
    let j = join(x, y);
    spearman_slices(&j.x, &j.y)
}

/// Two-sided p-value of `t = r sqrt((n - 2) / (1 - r^2))` on `n - 2` degrees
/// of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    student_t_two_sided(t, df)
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom, via
/// `I_{df / (df + t^2)}(df / 2, 1 / 2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "shape parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // the fraction converges fast for x < (a + 1) / (a + b + 2); use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// One row of the correlation table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub raw: Correlation,
    pub rank: Correlation,
    pub dropped: Vec<String>,
}

pub fn compare(
    label: impl Into<String>,
    x: &ScoreSeries,
    y: &ScoreSeries,
) -> Result<ComparisonRow, StatsError> {
    let j = join(x, y);
    Ok(ComparisonRow {
        label: label.into(),
        raw: pearson_slices(&j.x, &j.y)?,
        rank: spearman_slices(&j.x, &j.y)?,
        dropped: j.dropped,
    })
}

pub const TABLE_HEADER: &str = "Comparison,Raw Pearson corr,p-value,Rank Pearson corr,p-value";

impl ComparisonRow {
    /// `label,r,p,rank r,rank p` with four decimals.
    pub fn to_table_line(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4}",
            self.label, self.raw.r, self.raw.p, self.rank.r, self.rank.p
        )
    }
}

pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_table_line());
        out.push('\n');
    }
    out
}
