//! Architecture sweeps laid out like the published comparison tables.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::ingest::{load_mnist, LabeledDataset};

use super::config::{DatasetVariant, ExperimentConfig, Pipeline, Scale};
use super::experiment::run_experiment_on;

/// `100 * (dbn - ours) / dbn`.
pub fn relative_improvement(dbn_error: f64, ours_error: f64) -> f64 {
    100.0 * (dbn_error - ours_error) / dbn_error
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Done {
        test_error_percent: f64,
        leaf_count: Option<usize>,
    },
    Failed(String),
}

impl Cell {
    pub fn error(&self) -> Option<f64> {
        match self {
            Cell::Done { test_error_percent, .. } => Some(*test_error_percent),
            Cell::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TableReport {
    pub scale: Scale,
    pub architectures: Vec<Vec<usize>>,
    pub datasets: Vec<DatasetVariant>,
    pub cells: HashMap<(DatasetVariant, usize, Pipeline), Cell>,
}

fn arch_label(arch: &[usize]) -> String {
    arch.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn fmt_cell(cell: Option<&Cell>) -> String {
    match cell.and_then(Cell::error) {
        Some(e) => format!("{e:.2}"),
        None => "failed".to_string(),
    }
}

impl TableReport {
    pub fn cell(&self, dataset: DatasetVariant, arch_index: usize, pipeline: Pipeline) -> Option<&Cell> {
        self.cells.get(&(dataset, arch_index, pipeline))
    }

    /// Lowest test error over architectures, if any cell succeeded.
    pub fn best(&self, dataset: DatasetVariant, pipeline: Pipeline) -> Option<f64> {
        (0..self.architectures.len())
            .filter_map(|a| self.cell(dataset, a, pipeline).and_then(Cell::error))
            .reduce(f64::min)
    }

    pub fn all_done(&self) -> bool {
        self.cells.values().all(|c| matches!(c, Cell::Done { .. }))
            && self.cells.len() == self.datasets.len() * self.architectures.len() * 2
    }

    /// Plain-text tables, two datasets per table, followed by the
    /// best-versus-best relative improvements and quadtree leaf counts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scale={}", self.scale.name());
        for (t, pair) in self.datasets.chunks(2).enumerate() {
            let _ = writeln!(out);
            let titles: Vec<&str> = pair.iter().map(|d| d.title()).collect();
            let _ = writeln!(out, "Table {}: test error (%) on {}", t + 1, titles.join(" / "));
            let mut header = format!("{:<14}", "Architecture");
            for d in pair {
                let _ = write!(header, " | {:>10} {:>10}", format!("DBN:{}", short(*d)), format!("Ours:{}", short(*d)));
            }
            let _ = writeln!(out, "{header}");
            let _ = writeln!(out, "{}", "-".repeat(header.len()));
            for (a, arch) in self.architectures.iter().enumerate() {
                let mut line = format!("{:<14}", arch_label(arch));
                for d in pair {
                    let _ = write!(
                        line,
                        " | {:>10} {:>10}",
                        fmt_cell(self.cell(*d, a, Pipeline::RawDbn)),
                        fmt_cell(self.cell(*d, a, Pipeline::QuadtreeDbn))
                    );
                }
                let _ = writeln!(out, "{line}");
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Relative improvement of best quadtree DBN over best DBN");
        for d in &self.datasets {
            match (self.best(*d, Pipeline::RawDbn), self.best(*d, Pipeline::QuadtreeDbn)) {
                (Some(dbn), Some(ours)) => {
                    let _ = writeln!(
                        out,
                        "{:<22} dbn={dbn:.2} ours={ours:.2} improvement={:.1}%",
                        d.name(),
                        relative_improvement(dbn, ours)
                    );
                }
                _ => {
                    let _ = writeln!(out, "{:<22} incomplete", d.name());
                }
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Quadtree leaf counts");
        for d in &self.datasets {
            let counts: Vec<String> = (0..self.architectures.len())
                .map(|a| match self.cell(*d, a, Pipeline::QuadtreeDbn) {
                    Some(Cell::Done {
                        leaf_count: Some(n), ..
                    }) => n.to_string(),
                    _ => "-".to_string(),
                })
                .collect();
            let _ = writeln!(out, "{:<22} {}", d.name(), counts.join(" "));
        }
        let failures: Vec<String> = self
            .cells
            .iter()
            .filter_map(|((d, a, p), c)| match c {
                Cell::Failed(msg) => Some(format!(
                    "{} {} {}: {msg}",
                    d.name(),
                    arch_label(&self.architectures[*a]),
                    p.name()
                )),
                Cell::Done { .. } => None,
            })
            .collect();
        if !failures.is_empty() {
            let mut failures = failures;
            failures.sort();
            let _ = writeln!(out);
            let _ = writeln!(out, "Failed cells");
            for f in failures {
                let _ = writeln!(out, "{f}");
            }
        }
        out
    }
}

fn short(d: DatasetVariant) -> &'static str {
    match d {
        DatasetVariant::Mnist => "mnist",
        DatasetVariant::NmnistAwgn => "awgn",
        DatasetVariant::NmnistBlur => "blur",
        DatasetVariant::NmnistAwgnContrast => "awgn+c",
    }
}

/// Runs the sweep for `scale` on all four datasets and both pipelines.
///
/// `base` supplies everything except dataset, pipeline and architecture.
/// Failing cells are recorded and the sweep continues.
pub fn reproduce_tables_on(
    scale: Scale,
    base: &ExperimentConfig,
    clean_train: &LabeledDataset,
    clean_test: &LabeledDataset,
    mut progress: impl FnMut(&ExperimentConfig, &Cell),
) -> TableReport {
    let architectures = scale.architectures();
    let datasets = DatasetVariant::ALL.to_vec();
    let mut cells = HashMap::new();
    for &dataset in &datasets {
        for (a, arch) in architectures.iter().enumerate() {
            for pipeline in [Pipeline::RawDbn, Pipeline::QuadtreeDbn] {
                let mut config = base.clone();
                config.dataset = dataset;
                config.pipeline = pipeline;
                config.hidden_layers = arch.clone();
                config.output_dir = None;
                let cell = match run_experiment_on(&config, clean_train, clean_test) {
                    Ok(r) => Cell::Done {
                        test_error_percent: r.test_error_percent,
                        leaf_count: r.leaf_count,
                    },
                    Err(e) => Cell::Failed(e.to_string()),
                };
                progress(&config, &cell);
                cells.insert((dataset, a, pipeline), cell);
            }
        }
    }
    TableReport {
        scale,
        architectures,
        datasets,
        cells,
    }
}

pub fn reproduce_tables(scale: Scale, base: &ExperimentConfig) -> Result<TableReport> {
    let (train, test) = load_mnist(&base.mnist_dir).map_err(|e| e.in_stage("load"))?;
    Ok(reproduce_tables_on(scale, base, &train, &test, |_, _| {}))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_improvement_examples() {
        assert!((relative_improvement(1.86, 1.43) - 23.118).abs() < 1e-3);
        assert!((relative_improvement(1.86, 1.38) - 25.806).abs() < 1e-3);
    }

    fn report(scale: Scale) -> TableReport {
        let architectures = scale.architectures();
        let mut cells = HashMap::new();
        for d in DatasetVariant::ALL {
            for a in 0..architectures.len() {
                cells.insert((d, a, Pipeline::RawDbn), Cell::Done { test_error_percent: 2.0 + a as f64, leaf_count: None });
                cells.insert((d, a, Pipeline::QuadtreeDbn), Cell::Done { test_error_percent: 1.5, leaf_count: Some(700) });
            }
        }
        TableReport { scale, architectures, datasets: DatasetVariant::ALL.to_vec(), cells }
    }

    fn schema(text: &str) -> Vec<String> {
        text.lines()
            .filter(|l| l.starts_with("Table") || l.starts_with("Architecture") || l.starts_with("Relative"))
            .map(str::to_string)
            .collect()
    }

    #[test]
    fn desk_and_full_share_schema() {
        let desk = report(Scale::Desk);
        let full = report(Scale::Full);
        assert!(desk.all_done());
        assert_eq!(schema(&desk.render()), schema(&full.render()));
        assert_eq!(desk.best(DatasetVariant::Mnist, Pipeline::RawDbn), Some(2.0));
        assert!(desk.render().contains("improvement=25.0%"));
    }

    #[test]
    fn failed_cells_are_marked() {
        let mut r = report(Scale::Desk);
        r.cells.insert((DatasetVariant::NmnistBlur, 1, Pipeline::RawDbn), Cell::Failed("boom".into()));
        assert!(!r.all_done());
        let text = r.render();
        assert!(text.contains("failed"));
        assert!(text.contains("nmnist_blur 200-200 raw_dbn: boom"));
    }
}
