//! Plot-ready tables built from aggregate results.
//!
//! Epoch 0 of an aggregate carries the bootstrap values; MPS tables use it as
//! the per-group reference column, UMPS tables keep it as the first row.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::Typology;
use crate::error::{Error, Result};
use crate::io::{fmt_real, Table};
use crate::simulation::{AggregateRow, Metric};

type Cell = (Option<f64>, Option<f64>);

fn index(rows: &[AggregateRow], metric: Metric) -> BTreeMap<(usize, Typology), Cell> {
    rows.iter()
        .filter(|r| r.metric == metric)
        .map(|r| ((r.epoch, r.group), (r.mean, r.std)))
        .collect()
}

fn epochs(rows: &[AggregateRow]) -> BTreeSet<usize> {
    rows.iter().map(|r| r.epoch).collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn reference(cells: &BTreeMap<(usize, Typology), Cell>, group: Typology) -> String {
    opt(cells.get(&(0, group)).and_then(|c| c.0))
}

/// `epoch, <group>_mean, <group>_std, <group>_bootstrap, ...` over live epochs.
pub fn figure_mps(rows: &[AggregateRow]) -> Table {
    let cells = index(rows, Metric::Mps);
    let mut header = vec!["epoch".to_string()];
    for g in Typology::ALL {
        header.extend([format!("{g}_mean"), format!("{g}_std"), format!("{g}_bootstrap")]);
    }
    let table_rows = epochs(rows)
        .into_iter()
        .filter(|&e| e > 0)
        .map(|e| {
            let mut row = vec![e.to_string()];
            for g in Typology::ALL {
                let (m, s) = cells.get(&(e, g)).copied().unwrap_or((None, None));
                row.extend([opt(m), opt(s), reference(&cells, g)]);
            }
            row
        })
        .collect();
    Table {
        header,
        rows: table_rows,
    }
}

/// `epoch, <group>_mean, <group>_std, ...` including epoch 0.
pub fn figure_umps(rows: &[AggregateRow]) -> Table {
    let cells = index(rows, Metric::Umps);
    let mut header = vec!["epoch".to_string()];
    for g in Typology::ALL {
        header.extend([format!("{g}_mean"), format!("{g}_std")]);
    }
    let table_rows = epochs(rows)
        .into_iter()
        .map(|e| {
            let mut row = vec![e.to_string()];
            for g in Typology::ALL {
                let (m, s) = cells.get(&(e, g)).copied().unwrap_or((None, None));
                row.extend([opt(m), opt(s)]);
            }
            row
        })
        .collect();
    Table {
        header,
        rows: table_rows,
    }
}

/// Baseline and calibrated MPS side by side per group, with the baseline's
/// bootstrap reference.
pub fn figure_calibration(baseline: &[AggregateRow], calibrated: &[AggregateRow]) -> Result<Table> {
    let (eb, ec) = (epochs(baseline), epochs(calibrated));
    if eb != ec {
        return Err(Error::Config(format!(
            "aggregates cover different epochs: {}..={} vs {}..={}",
            eb.first().unwrap_or(&0),
            eb.last().unwrap_or(&0),
            ec.first().unwrap_or(&0),
            ec.last().unwrap_or(&0)
        )));
    }
    let (b, c) = (index(baseline, Metric::Mps), index(calibrated, Metric::Mps));
    let mut header = vec!["epoch".to_string()];
    for g in Typology::ALL {
        header.extend([
            format!("{g}_baseline_mean"),
            format!("{g}_baseline_std"),
            format!("{g}_calibrated_mean"),
            format!("{g}_calibrated_std"),
            format!("{g}_bootstrap"),
        ]);
    }
    let rows = eb
        .into_iter()
        .filter(|&e| e > 0)
        .map(|e| {
            let mut row = vec![e.to_string()];
            for g in Typology::ALL {
                let (bm, bs) = b.get(&(e, g)).copied().unwrap_or((None, None));
                let (cm, cs) = c.get(&(e, g)).copied().unwrap_or((None, None));
                row.extend([opt(bm), opt(bs), opt(cm), opt(cs), reference(&b, g)]);
            }
            row
        })
        .collect();
    Ok(Table { header, rows })
}

/// Checks that every aggregate spans the same epochs.
pub fn check_epoch_ranges(aggregates: &[Vec<AggregateRow>]) -> Result<()> {
    let mut it = aggregates.iter().map(|a| epochs(a));
    if let Some(first) = it.next() {
        if it.any(|e| e != first) {
            return Err(Error::Config("aggregates cover different epoch ranges".into()));
        }
    }
    Ok(())
}
