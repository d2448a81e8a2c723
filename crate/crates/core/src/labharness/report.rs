//! Experiment reports and their CSV, JSON and SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archzoo::ArchId;
use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::Domain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Clean,
    ArchTransfer,
    DomainTransfer,
    Blackbox,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Clean => "clean",
            ExperimentKind::ArchTransfer => "arch_transfer",
            ExperimentKind::DomainTransfer => "domain_transfer",
            ExperimentKind::Blackbox => "blackbox",
        }
    }
}

/// Accuracy of one victim on perturbations crafted on one source at one PNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub attack: AttackKind,
    pub source: String,
    pub victim: String,
    pub pnr_db: f64,
    /// Budget `P_T` in the source domain.
    pub power: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Samples whose gradient vanished and were left unperturbed.
    pub degenerate: usize,
}

/// Accuracy of a victim on the unperturbed test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanCell {
    pub victim: String,
    pub domain: Domain,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRecord {
    pub attack: AttackKind,
    pub source: String,
    pub victim: String,
    pub pnr_db: f64,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub label: String,
    pub arch: ArchId,
    pub domain: Domain,
    pub hash: String,
    pub seed: u64,
}

/// Attack settings shared by every cell of one kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub kind: AttackKind,
    /// `alpha / P_T` for the iterative attack.
    pub alpha_fraction: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_hash: String,
    pub master_seed: u64,
    pub snr_db: f64,
    /// Mean clean test power per domain, the PNR reference.
    pub received_power: BTreeMap<String, f64>,
    pub models: Vec<ModelRecord>,
    pub attacks: Vec<AttackRecord>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub class_names: Vec<String>,
    pub pnr_grid: Vec<f64>,
    pub cells: Vec<Cell>,
    pub clean: Vec<CleanCell>,
    pub confusions: Vec<ConfusionRecord>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn cell(&self, attack: AttackKind, source: &str, victim: &str, pnr_db: f64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.attack == attack && c.source == source && c.victim == victim && c.pnr_db == pnr_db)
    }

    pub fn clean_cell(&self, victim: &str) -> Option<&CleanCell> {
        self.clean.iter().find(|c| c.victim == victim)
    }

    /// Distinct values of a cell field, in first-appearance order.
    fn distinct<'a>(&'a self, f: impl Fn(&'a Cell) -> &'a str) -> Vec<&'a str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.cells {
            let v = f(c);
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    pub fn sources(&self) -> Vec<&str> {
        self.distinct(|c| c.source.as_str())
    }

    pub fn attacks(&self) -> Vec<AttackKind> {
        let mut out = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.attack) {
                out.push(c.attack);
            }
        }
        out
    }

    /// Victims attacked from `source`, in report order.
    pub fn victims_of(&self, source: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in self.cells.iter().filter(|c| c.source == source) {
            if !out.contains(&c.victim.as_str()) {
                out.push(&c.victim);
            }
        }
        out
    }

    /// Accuracy curve over the grid for one (attack, source, victim).
    pub fn curve(&self, attack: AttackKind, source: &str, victim: &str) -> Vec<f64> {
        self.pnr_grid
            .iter()
            .filter_map(|&p| self.cell(attack, source, victim, p).map(|c| c.accuracy))
            .collect()
    }

    /// Checks the structural invariants: complete grid, accuracy equal to
    /// correct/total, confusion rows summing to class counts.
    pub fn validate(&self) -> Result<()> {
        let classes = self.class_names.len();
        for attack in self.attacks() {
            for source in self.sources() {
                for victim in self.victims_of(source) {
                    for &p in &self.pnr_grid {
                        if self.cell(attack, source, victim, p).is_none() {
                            return Err(Error::Format(format!(
                                "missing cell {attack} {source} -> {victim} at {p} dB"
                            )));
                        }
                    }
                }
            }
        }
        for c in &self.cells {
            if c.total == 0 || c.correct > c.total || c.accuracy != c.correct as f64 / c.total as f64 {
                return Err(Error::Format(format!("inconsistent cell {} -> {}", c.source, c.victim)));
            }
        }
        let mut class_counts: Option<Vec<usize>> = None;
        let mut check = |confusion: &[Vec<usize>], accuracy: Option<f64>| -> Result<()> {
            if confusion.len() != classes || confusion.iter().any(|r| r.len() != classes) {
                return Err(Error::Format("confusion matrix is not C×C".into()));
            }
            let rows: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
            match &class_counts {
                Some(expected) if *expected != rows => {
                    return Err(Error::Format("confusion rows disagree on class counts".into()))
                }
                None => class_counts = Some(rows.clone()),
                _ => {}
            }
            if let Some(acc) = accuracy {
                let trace: usize = (0..classes).map(|k| confusion[k][k]).sum();
                if acc != trace as f64 / rows.iter().sum::<usize>() as f64 {
                    return Err(Error::Format("accuracy differs from the confusion trace".into()));
                }
            }
            Ok(())
        };
        for c in &self.clean {
            check(&c.confusion, Some(c.accuracy))?;
        }
        for r in &self.confusions {
            let acc = self.cell(r.attack, &r.source, &r.victim, r.pnr_db).map(|c| c.accuracy);
            check(&r.confusion, acc)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    experiment: &'static str,
    attack: &'static str,
    source: &'a str,
    victim: &'a str,
    pnr_db: Option<f64>,
    power: Option<f64>,
    accuracy: f64,
    correct: usize,
    total: usize,
    degenerate: Option<usize>,
}

/// One row per clean victim (attack `none`, empty PNR) followed by one row
/// per grid cell.
pub fn to_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &report.clean {
        w.serialize(CsvRow {
            experiment: report.kind.name(),
            attack: "none",
            source: "",
            victim: &c.victim,
            pnr_db: None,
            power: None,
            accuracy: c.accuracy,
            correct: c.correct,
            total: c.total,
            degenerate: None,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    for c in &report.cells {
        w.serialize(CsvRow {
            experiment: report.kind.name(),
            attack: c.attack.name(),
            source: &c.source,
            victim: &c.victim,
            pnr_db: Some(c.pnr_db),
            power: Some(c.power),
            accuracy: c.accuracy,
            correct: c.correct,
            total: c.total,
            degenerate: Some(c.degenerate),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn to_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json(text: &str) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(text)?)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Accuracy-vs-PNR line plot for one (attack, source) panel with one
/// polyline per victim.
pub fn panel_svg(report: &ExperimentReport, attack: AttackKind, source: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 170.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    let grid = &report.pnr_grid;
    let (lo, hi) = match (grid.first(), grid.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 1.0, a + 1.0),
        _ => (0.0, 1.0),
    };
    let px = |p: f64| LEFT + (p - lo) / (hi - lo) * (W - LEFT - RIGHT);
    let py = |a: f64| TOP + (1.0 - a) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{} {} from {}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        report.kind.name(),
        attack.name(),
        escape(source)
    );
    let (x0, x1, y0, y1) = (px(lo), px(hi), py(0.0), py(1.0));
    let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y0:.1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}" stroke="black"/>"#);
    for k in 0..=5 {
        let a = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{a:.1}</text>"#,
            x0 - 6.0,
            py(a) + 4.0
        );
    }
    for &p in grid {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{p}</text>"#,
            px(p),
            y0 + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">PNR (dB)</text>"#,
        (x0 + x1) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (i, victim) in report.victims_of(source).into_iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = grid
            .iter()
            .filter_map(|&p| report.cell(attack, source, victim, p))
            .map(|c| format!("{:.2},{:.2}", px(c.pnr_db), py(c.accuracy)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(victim)
        );
        let ly = TOP + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/>"#,
            x1 + 12.0,
            x1 + 32.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x1 + 38.0, ly + 4.0, escape(victim));
    }
    s.push_str("</svg>\n");
    s
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

/// Writes the requested renderings under `dir` and returns their paths.
/// SVGs are written one per (attack, source) panel.
pub fn emit_report(report: &ExperimentReport, dir: &Path, stem: &str, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Csv => {
                let path = dir.join(format!("{stem}.csv"));
                fs::write(&path, to_csv(report)?)?;
                written.push(path);
            }
            ReportFormat::Json => {
                let path = dir.join(format!("{stem}.json"));
                fs::write(&path, to_json(report)?)?;
                written.push(path);
            }
            ReportFormat::Svg => {
                for attack in report.attacks() {
                    for source in report.sources() {
                        let path = dir.join(format!("{stem}_{}_{}.svg", attack.name(), file_safe(source)));
                        fs::write(&path, panel_svg(report, attack, source))?;
                        written.push(path);
                    }
                }
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentReport {
        let grid = vec![-4.0, -2.0, 0.0];
        let mut cells = Vec::new();
        for source in ["a", "b"] {
            for victim in ["a", "b"] {
                for (i, &p) in grid.iter().enumerate() {
                    let correct = 10 - i - usize::from(source == victim);
                    cells.push(Cell {
                        attack: AttackKind::Fgsm,
                        source: source.into(),
                        victim: victim.into(),
                        pnr_db: p,
                        power: 0.1,
                        accuracy: correct as f64 / 10.0,
                        correct,
                        total: 10,
                        degenerate: 0,
                    });
                }
            }
        }
        ExperimentReport {
            kind: ExperimentKind::ArchTransfer,
            class_names: vec!["x".into(), "y".into()],
            pnr_grid: grid,
            cells,
            clean: vec![CleanCell {
                victim: "a".into(),
                domain: Domain::Time,
                accuracy: 0.9,
                correct: 9,
                total: 10,
                confusion: vec![vec![5, 0], vec![1, 4]],
            }],
            confusions: vec![],
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn sample_is_valid_and_queries_work() {
        let r = sample();
        r.validate().unwrap();
        assert_eq!(r.sources(), vec!["a", "b"]);
        assert_eq!(r.victims_of("a"), vec!["a", "b"]);
        assert_eq!(r.curve(AttackKind::Fgsm, "a", "b"), vec![1.0, 0.9, 0.8]);
    }

    #[test]
    fn holes_and_bad_confusions_are_caught() {
        let mut r = sample();
        r.cells.remove(3);
        assert!(r.validate().is_err());
        let mut r = sample();
        r.clean[0].accuracy = 0.5;
        assert!(r.validate().is_err());
    }

    #[test]
    fn svg_is_deterministic() {
        let r = sample();
        assert_eq!(panel_svg(&r, AttackKind::Fgsm, "a"), panel_svg(&r, AttackKind::Fgsm, "a"));
        assert_eq!(panel_svg(&r, AttackKind::Fgsm, "a").matches("<polyline").count(), 2);
    }

    #[test]
    fn csv_has_header_plus_clean_and_cells() {
        let r = sample();
        assert_eq!(to_csv(&r).unwrap().lines().count(), 1 + r.clean.len() + r.cells.len());
    }
}
