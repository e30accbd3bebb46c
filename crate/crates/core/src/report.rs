//! Result CSVs and the method-by-C comparison table.
//!
//! A results file starts with one fingerprint comment, then a CSV with
//! the columns `dataset,method,metric,relation_module,C,K,Q,seed,accuracy`:
//!
//! ```text
//! # fingerprint: dataset=liu K=5 Q=5 episodes=600 shot_mode=resampled config=3f9c0a1b2d4e5f60
//! dataset,method,metric,relation_module,C,K,Q,seed,accuracy
//! liu,proto,euclidean,n/a,5,5,5,1,0.918
//! ```
//!
//! Datasets named `family:task` (the binary review tasks) are averaged
//! over tasks into one `family` column block when rendered.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::heads::{Method, RelationModule};
use crate::metric::MetricKind;

pub const COLUMNS: [&str; 9] = [
    "dataset",
    "method",
    "metric",
    "relation_module",
    "C",
    "K",
    "Q",
    "seed",
    "accuracy",
];
const NA: &str = "n/a";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub method: Method,
    pub metric: Option<MetricKind>,
    pub relation_module: Option<RelationModule>,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub seed: u64,
    pub accuracy: f64,
}

impl ResultRow {
    /// Dataset family: the part before `:`.
    pub fn family(&self) -> &str {
        self.dataset.split(':').next().unwrap_or(&self.dataset)
    }

    fn config_key(&self) -> ConfigKey {
        (self.method, self.metric, self.relation_module)
    }
}

type ConfigKey = (Method, Option<MetricKind>, Option<RelationModule>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fingerprint {
    pub dataset: String,
    pub shots: usize,
    pub queries: usize,
    pub episodes: usize,
    pub shot_mode: String,
    /// Hash of the full run configuration.
    pub config: String,
}

impl Fingerprint {
    pub fn to_line(&self) -> String {
        format!(
            "# fingerprint: dataset={} K={} Q={} episodes={} shot_mode={} config={}",
            self.dataset, self.shots, self.queries, self.episodes, self.shot_mode, self.config
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let body = line.strip_prefix("# fingerprint:")?;
        let mut m = BTreeMap::new();
        for kv in body.split_whitespace() {
            let (k, v) = kv.split_once('=')?;
            m.insert(k, v);
        }
        Some(Self {
            dataset: m.get("dataset")?.to_string(),
            shots: m.get("K")?.parse().ok()?,
            queries: m.get("Q")?.parse().ok()?,
            episodes: m.get("episodes")?.parse().ok()?,
            shot_mode: m.get("shot_mode")?.to_string(),
            config: m.get("config")?.to_string(),
        })
    }

    fn compatible(&self, o: &Fingerprint) -> bool {
        (self.dataset.as_str(), self.shots, self.queries)
            == (o.dataset.as_str(), o.shots, o.queries)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub fingerprint: Fingerprint,
    pub rows: Vec<ResultRow>,
}

/// Mean over seeds for one (dataset, method, metric, relation module, C).
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub dataset: String,
    pub method: Method,
    pub metric: Option<MetricKind>,
    pub relation_module: Option<RelationModule>,
    pub ways: usize,
    pub mean: f64,
    pub per_seed: Vec<(u64, f64)>,
}

impl EvalReport {
    pub fn summaries(&self) -> Vec<Summary> {
        let mut groups: BTreeMap<(String, ConfigKey, usize), Vec<(u64, f64)>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.dataset.clone(), r.config_key(), r.ways))
                .or_default()
                .push((r.seed, r.accuracy));
        }
        groups
            .into_iter()
            .map(
                |((dataset, (method, metric, relation_module), ways), mut per_seed)| {
                    per_seed.sort_by_key(|(s, _)| *s);
                    let mean = per_seed.iter().map(|(_, a)| a).sum::<f64>() / per_seed.len() as f64;
                    Summary {
                        dataset,
                        method,
                        metric,
                        relation_module,
                        ways,
                        mean,
                        per_seed,
                    }
                },
            )
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.fingerprint.to_line()).map_err(|e| Error::io("<csv>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.dataset.clone(),
                r.method.as_str().to_string(),
                r.metric.map_or(NA.to_string(), |m| m.as_str().to_string()),
                r.relation_module
                    .map_or(NA.to_string(), |m| m.as_str().to_string()),
                r.ways.to_string(),
                r.shots.to_string(),
                r.queries.to_string(),
                r.seed.to_string(),
                format!("{}", r.accuracy),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Format {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let fingerprint = Fingerprint::parse(first.trim_end())
            .ok_or_else(|| bad(1, "missing `# fingerprint:` line".into()))?;
        let mut rdr = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != COLUMNS {
            return Err(bad(
                2,
                format!(
                    "expected columns {}, found {}",
                    COLUMNS.join(","),
                    header.join(",")
                ),
            ));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 3;
            let rec = rec?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let num = |j: usize| -> Result<u64> {
                field(j).parse().map_err(|_| {
                    bad(
                        line,
                        format!("column `{}` is not an integer: `{}`", COLUMNS[j], field(j)),
                    )
                })
            };
            let opt = |j: usize| if field(j) == NA { None } else { Some(field(j)) };
            let method: Method = field(1)
                .parse()
                .map_err(|e: Error| bad(line, e.to_string()))?;
            let metric = opt(2)
                .map(str::parse::<MetricKind>)
                .transpose()
                .map_err(|e| bad(line, e.to_string()))?;
            let relation_module = opt(3)
                .map(str::parse::<RelationModule>)
                .transpose()
                .map_err(|e| bad(line, e.to_string()))?;
            let accuracy: f64 = field(8)
                .parse()
                .ok()
                .filter(|a: &f64| (0.0..=1.0).contains(a))
                .ok_or_else(|| bad(line, format!("accuracy `{}` is not in [0, 1]", field(8))))?;
            rows.push(ResultRow {
                dataset: field(0).to_string(),
                method,
                metric,
                relation_module,
                ways: num(4)? as usize,
                shots: num(5)? as usize,
                queries: num(6)? as usize,
                seed: num(7)?,
                accuracy,
            });
        }
        Ok(Self { fingerprint, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Pools reports that share (dataset, K, Q). Repeated
/// (dataset, configuration, C, seed) cells are rejected.
pub fn merge(reports: &[(PathBuf, EvalReport)]) -> Result<EvalReport> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::Argument("no reports to merge".into()));
    };
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for (path, r) in reports {
        if !r.fingerprint.compatible(&first.fingerprint) {
            return Err(Error::Protocol(format!(
                "{} was run on dataset={} K={} Q={}, expected dataset={} K={} Q={}",
                path.display(),
                r.fingerprint.dataset,
                r.fingerprint.shots,
                r.fingerprint.queries,
                first.fingerprint.dataset,
                first.fingerprint.shots,
                first.fingerprint.queries
            )));
        }
        for row in &r.rows {
            if !seen.insert((row.dataset.clone(), row.config_key(), row.ways, row.seed)) {
                return Err(Error::Protocol(format!(
                    "{} repeats {} {} at C={} seed {}",
                    path.display(),
                    row.dataset,
                    row.method,
                    row.ways,
                    row.seed
                )));
            }
            rows.push(row.clone());
        }
    }
    let configs: BTreeSet<&str> = reports
        .iter()
        .map(|(_, r)| r.fingerprint.config.as_str())
        .collect();
    let mut fingerprint = first.fingerprint.clone();
    if configs.len() > 1 {
        fingerprint.config = "merged".into();
    }
    Ok(EvalReport { fingerprint, rows })
}

/// One rendered table cell: the family mean of per-dataset seed means.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub best: bool,
}

/// `row label -> (family, C) -> cell`, rows in canonical method order.
pub type Pivot = Vec<(ConfigKey, BTreeMap<(String, usize), Cell>)>;

pub fn pivot(report: &EvalReport) -> Pivot {
    let mut acc: BTreeMap<ConfigKey, BTreeMap<(String, usize), Vec<f64>>> = BTreeMap::new();
    for s in report.summaries() {
        let family = s
            .dataset
            .split(':')
            .next()
            .unwrap_or(&s.dataset)
            .to_string();
        acc.entry((s.method, s.metric, s.relation_module))
            .or_default()
            .entry((family, s.ways))
            .or_default()
            .push(s.mean);
    }
    let mut rows: Pivot = acc
        .into_iter()
        .map(|(k, cells)| {
            let cells = cells
                .into_iter()
                .map(|(col, v)| {
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    (col, Cell { mean, best: false })
                })
                .collect();
            (k, cells)
        })
        .collect();
    let columns: BTreeSet<(String, usize)> =
        rows.iter().flat_map(|(_, c)| c.keys().cloned()).collect();
    for col in columns {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, cells)) in rows.iter().enumerate() {
            if let Some(c) = cells.get(&col) {
                if best.is_none_or(|(_, b)| c.mean > b) {
                    best = Some((i, c.mean));
                }
            }
        }
        if let Some((i, _)) = best {
            rows[i].1.get_mut(&col).expect("best cell").best = true;
        }
    }
    rows
}

/// Accuracy as a percentage with one decimal, e.g. `0.918 -> "91.8"`.
pub fn percent(acc: f64) -> String {
    format!("{:.1}", acc * 100.0)
}

/// Plain-text table: one block of rows per method (one row per metric or
/// relation module), one column per (dataset, C). The best cell of each
/// column is marked with `*`.
pub fn render_table(report: &EvalReport) -> String {
    let rows = pivot(report);
    let columns: Vec<(String, usize)> = rows
        .iter()
        .flat_map(|(_, c)| c.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec![
        "Method".to_string(),
        "Metric".to_string(),
        "Relation".to_string(),
    ];
    header.extend(columns.iter().map(|(d, c)| format!("{d} C={c}")));
    let mut lines: Vec<Vec<String>> = vec![header];
    let mut last_method = None;
    for ((method, metric, rm), cells) in &rows {
        let label = if last_method == Some(method.label()) {
            ""
        } else {
            method.label()
        };
        last_method = Some(method.label());
        let mut line = vec![
            label.to_string(),
            metric.map_or("N/A".to_string(), |m| m.short().to_string()),
            rm.map_or("N/A".to_string(), |m| m.as_str().to_string()),
        ];
        for col in &columns {
            line.push(match cells.get(col) {
                Some(c) => format!("{}{}", percent(c.mean), if c.best { "*" } else { "" }),
                None => "-".to_string(),
            });
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|j| {
            lines
                .iter()
                .map(|l| l[j].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = format!(
        "Mean accuracy (%) over seeds; K={} Q={}, {} episodes per seed, {} shots; * marks the best per column\n",
        report.fingerprint.shots, report.fingerprint.queries, report.fingerprint.episodes, report.fingerprint.shot_mode
    );
    for (i, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if j < 3 {
                    format!("{s:<w$}", w = widths[j])
                } else {
                    format!("{s:>w$}", w = widths[j])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp() -> Fingerprint {
        Fingerprint {
            dataset: "liu".into(),
            shots: 5,
            queries: 5,
            episodes: 600,
            shot_mode: "resampled".into(),
            config: "abc".into(),
        }
    }

    fn row(
        method: Method,
        metric: Option<MetricKind>,
        ways: usize,
        seed: u64,
        acc: f64,
    ) -> ResultRow {
        ResultRow {
            dataset: "liu".into(),
            method,
            metric,
            relation_module: method.relation_module(),
            ways,
            shots: 5,
            queries: 5,
            seed,
            accuracy: acc,
        }
    }

    #[test]
    fn percent_format() {
        assert_eq!(percent(0.918), "91.8");
        assert_eq!(percent(1.0), "100.0");
        assert_eq!(percent(0.2), "20.0");
    }

    #[test]
    fn csv_round_trip() {
        let r = EvalReport {
            fingerprint: fp(),
            rows: vec![
                row(Method::Proto, Some(MetricKind::Euclidean), 5, 1, 0.918),
                row(Method::Induction, None, 2, 1, 1.0 / 3.0),
            ],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# fingerprint: dataset=liu K=5 Q=5"));
        assert!(text.contains("liu,proto,euclidean,n/a,5,5,5,1,0.918\n"));
        assert!(text.contains("liu,induction,n/a,ntl,2,5,5,1,"));
        assert_eq!(EvalReport::parse(&text, Path::new("m")).unwrap(), r);
    }

    #[test]
    fn schema_mismatch_names_file() {
        let text =
            "# fingerprint: dataset=x K=5 Q=5 episodes=1 shot_mode=fixed config=a\na,b\n1,2\n";
        let err = EvalReport::parse(text, Path::new("bad.csv"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad.csv"), "{err}");
    }

    #[test]
    fn mean_is_over_seeds() {
        let r = EvalReport {
            fingerprint: fp(),
            rows: vec![
                row(Method::Proto, Some(MetricKind::Euclidean), 5, 1, 0.9),
                row(Method::Proto, Some(MetricKind::Euclidean), 5, 2, 0.8),
                row(Method::Proto, Some(MetricKind::Euclidean), 5, 3, 0.4),
            ],
        };
        let s = r.summaries();
        assert_eq!(s.len(), 1);
        assert!((s[0].mean - 0.7).abs() < 1e-12);
    }

    #[test]
    fn merge_pools_disjoint_seeds_and_rejects_conflicts() {
        let a = EvalReport {
            fingerprint: fp(),
            rows: vec![row(Method::Proto, Some(MetricKind::Euclidean), 2, 1, 0.5)],
        };
        let b = EvalReport {
            fingerprint: fp(),
            rows: vec![
                row(Method::Proto, Some(MetricKind::Euclidean), 2, 2, 0.7),
                row(Method::Proto, Some(MetricKind::Euclidean), 2, 3, 0.9),
            ],
        };
        let m = merge(&[("a".into(), a.clone()), ("b".into(), b)]).unwrap();
        assert!((m.summaries()[0].mean - 0.7).abs() < 1e-12);
        let mut c = a.clone();
        c.fingerprint.shots = 1;
        let err = merge(&[("a".into(), a.clone()), ("c.csv".into(), c)]).unwrap_err();
        assert!(matches!(&err, Error::Protocol(m) if m.contains("c.csv")));
        assert!(merge(&[("a".into(), a.clone()), ("a2".into(), a)]).is_err());
    }

    #[test]
    fn best_flag_goes_to_max_and_ties_to_first_listed() {
        let r = EvalReport {
            fingerprint: fp(),
            rows: vec![
                row(Method::Matching, Some(MetricKind::Cosine), 2, 1, 0.8),
                row(Method::Proto, Some(MetricKind::Euclidean), 2, 1, 0.8),
                row(Method::Matching, Some(MetricKind::Cosine), 3, 1, 0.6),
                row(Method::Proto, Some(MetricKind::Euclidean), 3, 1, 0.7),
            ],
        };
        let p = pivot(&r);
        let (k0, c0) = &p[0];
        assert_eq!(k0.0, Method::Matching);
        assert!(c0[&("liu".to_string(), 2)].best);
        assert!(!c0[&("liu".to_string(), 3)].best);
        assert!(p[1].1[&("liu".to_string(), 3)].best);
        let t = render_table(&r);
        assert!(t.contains("80.0*"), "{t}");
        assert!(t.contains("70.0*"), "{t}");
    }

    #[test]
    fn table_has_method_blocks() {
        let mut rows = Vec::new();
        for (m, metric) in [
            (Method::Matching, Some(MetricKind::Cosine)),
            (Method::Matching, Some(MetricKind::Euclidean)),
            (Method::Proto, Some(MetricKind::Euclidean)),
            (Method::RelationBase, None),
            (Method::RelationNtl, None),
        ] {
            rows.push(row(m, metric, 5, 1, 0.918));
        }
        let t = render_table(&EvalReport {
            fingerprint: fp(),
            rows,
        });
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[3].starts_with("Matching"));
        assert!(lines[4].starts_with(' '));
        assert!(lines[5].starts_with("Proto"));
        assert!(lines[6].starts_with("Relation") && lines[6].contains("base"));
        assert!(lines[7].starts_with(' ') && lines[7].contains("ntl"));
        assert!(t.contains("91.8"));
    }

    #[test]
    fn families_average_tasks() {
        let mut a = row(Method::Proto, Some(MetricKind::Cosine), 2, 1, 0.6);
        a.dataset = "arsc:books.t2".into();
        let mut b = a.clone();
        b.dataset = "arsc:dvd.t4".into();
        b.accuracy = 0.8;
        let p = pivot(&EvalReport {
            fingerprint: fp(),
            rows: vec![a, b],
        });
        assert!((p[0].1[&("arsc".to_string(), 2)].mean - 0.7).abs() < 1e-12);
    }
}
