//! Time-series record of one simulation run and its CSV serialization.
//!
//! The CSV layout is fixed so downstream tooling can rely on it: a `t`
//! column, the four true states, the clean and attacked measurements, then
//! one eight-column block per filter in the order `ekf, ckf, sckf` (estimate,
//! χ² statistic `g`, Euclidean statistic `d`, and the two alarm flags).
//! Blocks for filters that were not part of the run are left empty, as are
//! the detector cells of the initial row, where no measurement update has
//! happened yet. Floats are written in shortest round-trip form, so a
//! write/read cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::machine::StateVector;

/// Per-filter columns of a run: estimates plus detector outputs, one entry
/// per trace row. The detector statistics of the initial row are `NaN`
/// (no update has produced a residual yet) and serialize as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub kind: FilterKind,
    pub estimates: Vec<StateVector>,
    pub g_chi2: Vec<f64>,
    pub d_euclid: Vec<f64>,
    pub chi2_alarm: Vec<bool>,
    pub euclid_alarm: Vec<bool>,
}

impl FilterTrace {
    pub fn new(kind: FilterKind) -> Self {
        Self {
            kind,
            estimates: Vec::new(),
            g_chi2: Vec::new(),
            d_euclid: Vec::new(),
            chi2_alarm: Vec::new(),
            euclid_alarm: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

/// Complete record of one run: truth, measurements, and one [`FilterTrace`]
/// per selected filter (always kept in `ekf, ckf, sckf` order).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub t: Vec<f64>,
    pub true_states: Vec<StateVector>,
    pub y_clean: Vec<f64>,
    pub y_attacked: Vec<f64>,
    pub filters: Vec<FilterTrace>,
}

impl ScenarioTrace {
    /// An empty trace carrying blocks for the given filters. Duplicates are
    /// dropped and the canonical filter order is enforced.
    pub fn new(kinds: &[FilterKind]) -> Self {
        let filters = FilterKind::ALL
            .into_iter()
            .filter(|k| kinds.contains(k))
            .map(FilterTrace::new)
            .collect();
        Self {
            t: Vec::new(),
            true_states: Vec::new(),
            y_clean: Vec::new(),
            y_attacked: Vec::new(),
            filters,
        }
    }

    /// Number of recorded rows.
    pub fn rows(&self) -> usize {
        self.t.len()
    }

    /// The block for one filter, if it was part of the run.
    pub fn filter(&self, kind: FilterKind) -> Option<&FilterTrace> {
        self.filters.iter().find(|f| f.kind == kind)
    }

    /// Check internal consistency: equal column lengths everywhere and
    /// strictly increasing time stamps.
    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if self.true_states.len() != n || self.y_clean.len() != n || self.y_attacked.len() != n {
            return Err(Error::config(format!(
                "trace column lengths disagree (t has {n} rows)"
            )));
        }
        for f in &self.filters {
            if f.estimates.len() != n
                || f.g_chi2.len() != n
                || f.d_euclid.len() != n
                || f.chi2_alarm.len() != n
                || f.euclid_alarm.len() != n
            {
                return Err(Error::config(format!(
                    "{} trace columns disagree with the {n} time stamps",
                    f.kind
                )));
            }
        }
        if self.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config(
                "trace time stamps are not strictly increasing".to_string(),
            ));
        }
        Ok(())
    }

    /// Serialize to the fixed CSV layout.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&csv_header());
        out.push('\n');
        for row in 0..self.rows() {
            let mut line = String::new();
            let x = self.true_states[row];
            write!(
                line,
                "{},{},{},{},{},{},{}",
                self.t[row],
                x.delta,
                x.domega,
                x.eq_prime,
                x.ed_prime,
                self.y_clean[row],
                self.y_attacked[row]
            )
            .expect("writing to a String cannot fail");
            for kind in FilterKind::ALL {
                match self.filter(kind) {
                    Some(f) => {
                        let e = f.estimates[row];
                        write!(
                            line,
                            ",{},{},{},{}",
                            e.delta, e.domega, e.eq_prime, e.ed_prime
                        )
                        .expect("writing to a String cannot fail");
                        // A NaN statistic means "no verdict for this row";
                        // the whole detector block stays empty then.
                        if f.g_chi2[row].is_nan() {
                            line.push_str(",,,,");
                        } else {
                            write!(
                                line,
                                ",{},{},{},{}",
                                f.g_chi2[row],
                                f.d_euclid[row],
                                u8::from(f.chi2_alarm[row]),
                                u8::from(f.euclid_alarm[row])
                            )
                            .expect("writing to a String cannot fail");
                        }
                    }
                    None => line.push_str(",,,,,,,,"),
                }
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Write the CSV to a file.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    /// Parse a trace back from its CSV form. A filter block counts as
    /// present when its estimate cells are populated; empty detector cells
    /// come back as `NaN` statistics with unset alarms.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::config("trace CSV is empty".to_string()))?;
        if header != csv_header() {
            return Err(Error::config(format!(
                "unrecognized trace header: {header:?}"
            )));
        }
        let mut trace = ScenarioTrace::new(&FilterKind::ALL);
        let mut present = [false; 3];
        for (idx, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != column_count() {
                return Err(Error::config(format!(
                    "trace row {idx} has {} cells, expected {}",
                    cells.len(),
                    column_count()
                )));
            }
            trace.t.push(parse_cell(cells[0], idx)?);
            trace.true_states.push(StateVector::new(
                parse_cell(cells[1], idx)?,
                parse_cell(cells[2], idx)?,
                parse_cell(cells[3], idx)?,
                parse_cell(cells[4], idx)?,
            ));
            trace.y_clean.push(parse_cell(cells[5], idx)?);
            trace.y_attacked.push(parse_cell(cells[6], idx)?);
            for (slot, f) in trace.filters.iter_mut().enumerate() {
                let base = 7 + slot * 8;
                if !cells[base].is_empty() {
                    present[slot] = true;
                }
                f.estimates.push(StateVector::new(
                    parse_cell(cells[base], idx)?,
                    parse_cell(cells[base + 1], idx)?,
                    parse_cell(cells[base + 2], idx)?,
                    parse_cell(cells[base + 3], idx)?,
                ));
                f.g_chi2.push(parse_cell(cells[base + 4], idx)?);
                f.d_euclid.push(parse_cell(cells[base + 5], idx)?);
                f.chi2_alarm.push(parse_flag(cells[base + 6], idx)?);
                f.euclid_alarm.push(parse_flag(cells[base + 7], idx)?);
            }
        }
        let mut keep = present.iter();
        trace.filters.retain(|_| *keep.next().expect("three slots"));
        trace.validate()?;
        Ok(trace)
    }

    /// Read a trace CSV from a file.
    pub fn import_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }
}

/// Number of CSV columns: time, four true states, two measurement columns,
/// and eight columns per filter.
pub fn column_count() -> usize {
    7 + FilterKind::ALL.len() * 8
}

/// The fixed CSV header line (without trailing newline).
pub fn csv_header() -> String {
    let mut header = String::from("t,x1_true,x2_true,x3_true,x4_true,y_clean,y_attacked");
    for kind in FilterKind::ALL {
        let f = kind.name();
        write!(
            header,
            ",{f}_x1,{f}_x2,{f}_x3,{f}_x4,{f}_g,{f}_d,{f}_chi2_alarm,{f}_euclid_alarm"
        )
        .expect("writing to a String cannot fail");
    }
    header
}

fn parse_cell(cell: &str, row: usize) -> Result<f64> {
    if cell.is_empty() {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>()
        .map_err(|_| Error::config(format!("trace row {row}: bad number {cell:?}")))
}

fn parse_flag(cell: &str, row: usize) -> Result<bool> {
    match cell {
        "" | "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::config(format!(
            "trace row {row}: bad alarm flag {other:?}"
        ))),
    }
}
