use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::ValueEnum;
use medmus_core::stats::{bonferroni, mann_whitney_u, wilcoxon_signed_rank, Alternative, PMethod};
use serde::{Deserialize, Serialize};

use super::{require_exists, write_text};
use crate::provenance::{sidecar, Context};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    /// Paired signed-rank test.
    Wilcoxon,
    /// Unpaired rank-sum test.
    Mannwhitney,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum)]
    test: TestKind,
    /// CSV table, one row per case; a header row is optional.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Rows of the two tables are paired; required by wilcoxon.
    #[arg(long)]
    paired: bool,
    #[arg(long, value_enum, default_value_t = AlternativeArg::TwoSided)]
    alternative: AlternativeArg,
    /// Number of comparisons; defaults to the number of columns tested.
    #[arg(long)]
    bonferroni: Option<usize>,
    /// Restrict to these columns (default: every numeric column in both tables).
    #[arg(long)]
    column: Vec<String>,
    /// Write the result document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnResult {
    pub column: String,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub method: PMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub test: TestKind,
    pub alternative: Alternative,
    pub comparisons: usize,
    pub results: Vec<ColumnResult>,
}

/// Named columns of a CSV table; `None` for empty fields. Columns with any
/// non-numeric field are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<(String, Vec<Option<f64>>)>,
    pub rows: usize,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
        let Some(first) = records.first() else {
            anyhow::bail!("table is empty");
        };
        let numeric = |f: &str| f.is_empty() || f.parse::<f64>().is_ok();
        let has_header = !first.iter().all(numeric);
        let names: Vec<String> = if has_header {
            first.iter().map(str::to_owned).collect()
        } else {
            (0..first.len()).map(|i| format!("column{i}")).collect()
        };
        let body = &records[usize::from(has_header)..];
        let mut columns = Vec::new();
        for (c, name) in names.iter().enumerate() {
            let fields: Vec<&str> = body.iter().map(|r| r.get(c).unwrap_or("")).collect();
            if fields.iter().all(|f| numeric(f)) {
                let values = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
                columns.push((name.clone(), values));
            }
        }
        Ok(Table {
            columns,
            rows: body.len(),
        })
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

fn read_table(path: &Path) -> Result<Table> {
    require_exists(path, "table")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Table::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn compare(
    test: TestKind,
    a: &Table,
    b: &Table,
    alternative: Alternative,
    columns: &[String],
    comparisons: Option<usize>,
) -> Result<StatsReport> {
    let names: Vec<String> = if columns.is_empty() {
        a.columns
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| b.column(n).is_some())
            .collect()
    } else {
        columns.to_vec()
    };
    if names.is_empty() {
        anyhow::bail!("the tables share no numeric column");
    }
    if test == TestKind::Wilcoxon && a.rows != b.rows {
        anyhow::bail!("paired tables differ in row count: {} vs {}", a.rows, b.rows);
    }
    let mut raw = Vec::with_capacity(names.len());
    for name in &names {
        let (Some(x), Some(y)) = (a.column(name), b.column(name)) else {
            anyhow::bail!("column {name:?} is missing or not numeric in one of the tables");
        };
        let r = match test {
            TestKind::Wilcoxon => {
                let (p, q): (Vec<f64>, Vec<f64>) = x
                    .iter()
                    .zip(y)
                    .filter_map(|(u, v)| Some(((*u)?, (*v)?)))
                    .unzip();
                wilcoxon_signed_rank(&p, &q, alternative)
            }
            TestKind::Mannwhitney => {
                let p: Vec<f64> = x.iter().flatten().copied().collect();
                let q: Vec<f64> = y.iter().flatten().copied().collect();
                mann_whitney_u(&p, &q, alternative)
            }
        }
        .with_context(|| format!("column {name:?}"))?;
        raw.push(r);
    }
    let m = comparisons.unwrap_or(names.len());
    let p: Vec<f64> = raw.iter().map(|r| r.p_value).collect();
    let adjusted = bonferroni(&p, m)?;
    Ok(StatsReport {
        test,
        alternative,
        comparisons: m,
        results: names
            .into_iter()
            .zip(raw)
            .zip(adjusted)
            .map(|((column, r), p_adjusted)| ColumnResult {
                column,
                n: r.n,
                statistic: r.statistic,
                p_value: r.p_value,
                p_adjusted,
                method: r.method,
            })
            .collect(),
    })
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    match (args.test, args.paired) {
        (TestKind::Wilcoxon, false) => return Err(usage("wilcoxon is a paired test; pass --paired")),
        (TestKind::Mannwhitney, true) => return Err(usage("mannwhitney compares unpaired samples; drop --paired")),
        _ => {}
    }
    if args.bonferroni == Some(0) {
        return Err(usage("--bonferroni must be at least 1"));
    }
    let alternative = match args.alternative {
        AlternativeArg::TwoSided => Alternative::TwoSided,
        AlternativeArg::Greater => Alternative::Greater,
        AlternativeArg::Less => Alternative::Less,
    };
    let a = read_table(&args.a)?;
    let b = read_table(&args.b)?;
    let report = compare(args.test, &a, &b, alternative, &args.column, args.bonferroni)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    let config = serde_json::json!({
        "test": args.test,
        "alternative": alternative,
        "columns": args.column,
        "bonferroni": report.comparisons,
    });
    match &args.out {
        Some(out) => {
            write_text(out, &text)?;
            ctx.record("stats", None, config, &[&args.a, &args.b], &[out])?.write(&sidecar(out))?;
        }
        None => {
            let prov = ctx.record("stats", None, config, &[&args.a, &args.b], &[])?;
            let doc = serde_json::json!({ "report": report, "provenance": prov });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(())
}
