//! Typed study inputs: the treatment table, the long-format observation
//! panel, the regular date grid it lives on, and the facts the decision path
//! reads off them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of rows allowed off the inferred grid before the panel is rejected.
pub const MAX_OFF_GRID_SHARE: f64 = 0.05;

/// Parse a strict `YYYY-MM-DD` date.
pub fn parse_iso_date(s: &str) -> Result<NaiveDate> {
    let t = s.trim();
    let b = t.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return Err(Error::InvalidDate(t.to_string()));
    }
    NaiveDate::parse_from_str(t, "%Y-%m-%d").map_err(|_| Error::InvalidDate(t.to_string()))
}

/// Sampling frequency of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Daily,
    Weekly,
    Monthly,
    Yearly,
}

impl Period {
    /// `from` advanced by `k` periods (k may be negative).
    pub fn advance(self, from: NaiveDate, k: i64) -> Option<NaiveDate> {
        match self {
            Period::Daily => from.checked_add_signed(chrono::TimeDelta::days(k)),
            Period::Weekly => from.checked_add_signed(chrono::TimeDelta::weeks(k)),
            Period::Monthly => shift_months(from, k),
            Period::Yearly => shift_months(from, k.checked_mul(12)?),
        }
    }

    /// Whole periods from `anchor` to `date`, or `None` when `date` is off the grid.
    pub fn steps_from(self, anchor: NaiveDate, date: NaiveDate) -> Option<i64> {
        let k = match self {
            Period::Daily => (date - anchor).num_days(),
            Period::Weekly => {
                let d = (date - anchor).num_days();
                if d % 7 != 0 {
                    return None;
                }
                d / 7
            }
            Period::Monthly => month_index(date) - month_index(anchor),
            Period::Yearly => (date.year() - anchor.year()) as i64,
        };
        (self.advance(anchor, k)? == date).then_some(k)
    }

    /// Grid periods making up roughly one calendar month; the default upper
    /// bound on treatment times merged into one cohort.
    pub fn periods_per_month(self) -> usize {
        match self {
            Period::Daily => 30,
            Period::Weekly => 4,
            Period::Monthly | Period::Yearly => 1,
        }
    }

    fn single_step(a: NaiveDate, b: NaiveDate) -> Option<Period> {
        [Period::Yearly, Period::Monthly, Period::Weekly, Period::Daily]
            .into_iter()
            .find(|p| p.steps_from(a, b) == Some(1))
    }
}

fn month_index(d: NaiveDate) -> i64 {
    d.year() as i64 * 12 + d.month0() as i64
}

fn shift_months(from: NaiveDate, k: i64) -> Option<NaiveDate> {
    let m = u32::try_from(k.unsigned_abs()).ok()?;
    if k >= 0 {
        from.checked_add_months(Months::new(m))
    } else {
        from.checked_sub_months(Months::new(m))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentRow {
    pub unit_id: String,
    pub treatment_date: NaiveDate,
}

/// One treatment event per treated unit.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct TreatmentTable {
    rows: Vec<TreatmentRow>,
    #[serde(skip)]
    index: BTreeMap<String, NaiveDate>,
}

impl TreatmentTable {
    pub fn new(rows: Vec<TreatmentRow>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for r in &rows {
            if index.insert(r.unit_id.clone(), r.treatment_date).is_some() {
                return Err(Error::DuplicateTreatedUnit(r.unit_id.clone()));
            }
        }
        Ok(Self { rows, index })
    }

    pub fn rows(&self) -> &[TreatmentRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn date_of(&self, unit: &str) -> Option<NaiveDate> {
        self.index.get(unit).copied()
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.index.contains_key(unit)
    }

    /// Distinct treatment dates, ascending, with the number of units treated on each.
    pub fn times(&self) -> Vec<(NaiveDate, usize)> {
        let mut counts: BTreeMap<NaiveDate, usize> = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.treatment_date).or_default() += 1;
        }
        counts.into_iter().collect()
    }

    /// Units treated on `date`, sorted.
    pub fn units_on(&self, date: NaiveDate) -> Vec<String> {
        let mut v: Vec<String> = self
            .rows
            .iter()
            .filter(|r| r.treatment_date == date)
            .map(|r| r.unit_id.clone())
            .collect();
        v.sort();
        v
    }
}

/// One observation row; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub unit_id: String,
    pub date: NaiveDate,
    pub outcome: Option<f64>,
    pub covariates: Vec<Option<f64>>,
}

/// A row that was dropped while building the panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedRow {
    pub unit_id: String,
    pub date: NaiveDate,
    pub reason: String,
}

/// Long-format observations: unit × date × outcome × covariates.
///
/// Rows are kept sorted by `(unit_id, date)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub outcome_column: String,
    pub covariate_columns: Vec<String>,
    /// `None` when no unit has two dates (cross-sectional data).
    pub period: Option<Period>,
    pub rows: Vec<Observation>,
}

impl PanelDataset {
    /// Validate and normalise raw rows.
    ///
    /// Rejects duplicate `(unit, date)` pairs, infers the period from the
    /// modal single-step gap and drops rows off that grid (failing with
    /// [`Error::IrregularGrid`] when more than 5% of rows are off it).
    pub fn new(
        outcome_column: impl Into<String>,
        covariate_columns: Vec<String>,
        mut rows: Vec<Observation>,
    ) -> Result<(Self, Vec<DroppedRow>)> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let width = covariate_columns.len();
        if let Some(r) = rows.iter().find(|r| r.covariates.len() != width) {
            return Err(Error::DimensionMismatch(format!(
                "row for `{}` has {} covariates, expected {width}",
                r.unit_id,
                r.covariates.len()
            )));
        }
        rows.sort_by(|a, b| a.unit_id.cmp(&b.unit_id).then(a.date.cmp(&b.date)));
        for w in rows.windows(2) {
            if w[0].unit_id == w[1].unit_id && w[0].date == w[1].date {
                return Err(Error::DuplicateObservation {
                    unit: w[0].unit_id.clone(),
                    date: w[0].date.to_string(),
                });
            }
        }
        let period = infer_period(&rows);
        let mut dropped = Vec::new();
        if let Some(p) = period {
            let anchor = rows.iter().map(|r| r.date).min().expect("non-empty");
            let total = rows.len();
            let (on, off): (Vec<_>, Vec<_>) = rows
                .into_iter()
                .partition(|r| p.steps_from(anchor, r.date).is_some());
            if off.len() as f64 > MAX_OFF_GRID_SHARE * total as f64 {
                return Err(Error::IrregularGrid(format!(
                    "{} of {total} rows are not on the {p:?} grid starting {anchor}",
                    off.len()
                )));
            }
            dropped = off
                .into_iter()
                .map(|r| DroppedRow {
                    unit_id: r.unit_id,
                    date: r.date,
                    reason: format!("off the {p:?} grid"),
                })
                .collect();
            rows = on;
        }
        Ok((
            Self {
                outcome_column: outcome_column.into(),
                covariate_columns,
                period,
                rows,
            },
            dropped,
        ))
    }

    /// Distinct unit ids, sorted.
    pub fn units(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.unit_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_columns.iter().position(|c| c == name)
    }

    /// The regular grid spanning the earliest to the latest date.
    pub fn grid(&self) -> Option<DateGrid> {
        let period = self.period?;
        let start = self.rows.iter().map(|r| r.date).min()?;
        let end = self.rows.iter().map(|r| r.date).max()?;
        let len = period.steps_from(start, end)? as usize + 1;
        Some(DateGrid { period, start, len })
    }

    /// Row ranges per unit, in unit order (rows are sorted by unit).
    pub fn unit_slices(&self) -> Vec<(&str, &[Observation])> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].unit_id != self.rows[start].unit_id {
                out.push((self.rows[start].unit_id.as_str(), &self.rows[start..i]));
                start = i;
            }
        }
        out
    }

    pub fn shape(&self) -> DataShape {
        detect_shape(self)
    }
}

fn infer_period(rows: &[Observation]) -> Option<Period> {
    let mut counts: BTreeMap<Period, usize> = BTreeMap::new();
    for w in rows.windows(2) {
        if w[0].unit_id == w[1].unit_id {
            if let Some(p) = Period::single_step(w[0].date, w[1].date) {
                *counts.entry(p).or_default() += 1;
            }
        }
    }
    let has_repeat = rows.windows(2).any(|w| w[0].unit_id == w[1].unit_id);
    if !has_repeat {
        return None;
    }
    // ties resolve to the finer period
    counts
        .into_iter()
        .fold(None, |best: Option<(Period, usize)>, (p, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((p, c)),
        })
        .map(|(p, _)| p)
        .or(Some(Period::Daily))
}

/// The regular date grid a panel lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DateGrid {
    pub period: Period,
    pub start: NaiveDate,
    pub len: usize,
}

impl DateGrid {
    pub fn date(&self, index: i64) -> Option<NaiveDate> {
        self.period.advance(self.start, index)
    }

    /// Position of `date` relative to the grid start; may be negative or
    /// beyond the end. `None` when `date` is between grid points.
    pub fn offset_of(&self, date: NaiveDate) -> Option<i64> {
        self.period.steps_from(self.start, date)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let k = self.offset_of(date)?;
        (0..self.len as i64).contains(&k).then_some(k as usize)
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.len as i64)
            .map(|k| self.date(k).expect("grid dates are representable"))
            .collect()
    }

    /// Offset of the first grid point on or after `date` (may lie outside
    /// `0..len`).
    pub fn ceil_offset(&self, date: NaiveDate) -> i64 {
        let approx_days = match self.period {
            Period::Daily => 1.0,
            Period::Weekly => 7.0,
            Period::Monthly => 30.436875,
            Period::Yearly => 365.2425,
        };
        let mut k = ((date - self.start).num_days() as f64 / approx_days) as i64;
        let at = |k: i64| self.date(k).expect("grid offsets stay representable");
        while at(k) < date {
            k += 1;
        }
        while at(k - 1) >= date {
            k -= 1;
        }
        k
    }

    /// Move each treatment date onto the first grid date on or after it, so
    /// the treatment period is the first period observed under treatment.
    pub fn snap_treatment(&self, treatment: &TreatmentTable) -> TreatmentTable {
        let rows = treatment
            .rows()
            .iter()
            .map(|r| TreatmentRow {
                unit_id: r.unit_id.clone(),
                treatment_date: self.date(self.ceil_offset(r.treatment_date)).expect("representable"),
            })
            .collect();
        TreatmentTable::new(rows).expect("snapping keeps unit ids unique")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataShape {
    Panel,
    CrossSectional,
}

/// Panel iff at least one unit is observed on two or more distinct dates.
pub fn detect_shape(panel: &PanelDataset) -> DataShape {
    let mut first: BTreeMap<&str, NaiveDate> = BTreeMap::new();
    for r in &panel.rows {
        match first.get(r.unit_id.as_str()) {
            Some(d) if *d != r.date => return DataShape::Panel,
            Some(_) => {}
            None => {
                first.insert(&r.unit_id, r.date);
            }
        }
    }
    DataShape::CrossSectional
}

/// Cross-checks between the two tables: every treated unit is observed and
/// at least one observed unit is never treated.
pub fn check_study_inputs(panel: &PanelDataset, treatment: &TreatmentTable) -> Result<()> {
    if treatment.is_empty() {
        return Err(Error::NoTreatedUnits);
    }
    let units: BTreeSet<&str> = panel.rows.iter().map(|r| r.unit_id.as_str()).collect();
    for r in treatment.rows() {
        if !units.contains(r.unit_id.as_str()) {
            return Err(Error::UnknownTreatedUnit(r.unit_id.clone()));
        }
    }
    if units.iter().all(|u| treatment.contains(u)) {
        return Err(Error::NoControlUnits);
    }
    Ok(())
}

/// Facts the first decision stage reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFacts {
    pub total_events: usize,
    pub shape: DataShape,
    pub n_treated_units: usize,
    pub max_treated_per_cohort: usize,
    pub n_control_units: usize,
    pub n_covariates: usize,
    pub pre_periods: usize,
    pub post_periods: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn d(s: &str) -> NaiveDate {
        parse_iso_date(s).unwrap()
    }

    fn obs(unit: &str, date: &str, y: f64) -> Observation {
        Observation {
            unit_id: unit.into(),
            date: d(date),
            outcome: Some(y),
            covariates: vec![],
        }
    }

    #[test]
    fn iso_dates_only() {
        assert!(parse_iso_date("2022-07-23").is_ok());
        assert!(matches!(parse_iso_date("07/23/2022"), Err(Error::InvalidDate(_))));
        assert!(matches!(parse_iso_date("2022-7-23"), Err(Error::InvalidDate(_))));
        assert!(matches!(parse_iso_date("2022-02-30"), Err(Error::InvalidDate(_))));
    }

    #[test]
    fn duplicate_treated_unit_rejected() {
        let rows = vec![
            TreatmentRow { unit_id: "A".into(), treatment_date: d("2022-07-23") },
            TreatmentRow { unit_id: "A".into(), treatment_date: d("2022-08-23") },
        ];
        assert!(matches!(TreatmentTable::new(rows), Err(Error::DuplicateTreatedUnit(u)) if u == "A"));
    }

    #[test]
    fn weekly_period_inferred() {
        let rows = vec![
            obs("A", "2022-07-01", 1.0),
            obs("A", "2022-07-08", 1.0),
            obs("A", "2022-07-15", 1.0),
            obs("Z", "2022-07-01", 1.0),
            obs("Z", "2022-07-08", 1.0),
        ];
        let (p, dropped) = PanelDataset::new("y", vec![], rows).unwrap();
        assert_eq!(p.period, Some(Period::Weekly));
        assert!(dropped.is_empty());
        assert_eq!(p.grid().unwrap().len, 3);
    }

    #[test]
    fn monthly_and_yearly_periods() {
        let rows: Vec<_> = (0..6)
            .map(|m| obs("A", &alloc::format!("2020-{:02}-01", m + 1), 0.0))
            .collect();
        assert_eq!(PanelDataset::new("y", vec![], rows).unwrap().0.period, Some(Period::Monthly));
        let rows: Vec<_> = (1970..1975).map(|y| obs("A", &alloc::format!("{y}-01-01"), 0.0)).collect();
        assert_eq!(PanelDataset::new("y", vec![], rows).unwrap().0.period, Some(Period::Yearly));
    }

    #[test]
    fn duplicate_observation_rejected() {
        let rows = vec![obs("A", "2022-07-01", 1.0), obs("A", "2022-07-01", 2.0)];
        assert!(matches!(
            PanelDataset::new("y", vec![], rows),
            Err(Error::DuplicateObservation { .. })
        ));
    }

    #[test]
    fn off_grid_rows_dropped_or_rejected() {
        let mut rows: Vec<_> = (0..40)
            .map(|k| obs("A", &d("2022-01-03").checked_add_signed(chrono::TimeDelta::weeks(k)).unwrap().to_string(), 0.0))
            .collect();
        rows.push(obs("B", "2022-01-05", 0.0));
        let (p, dropped) = PanelDataset::new("y", vec![], rows.clone()).unwrap();
        assert_eq!(dropped.len(), 1);
        assert_eq!(p.rows.len(), 40);
        for k in 0..5 {
            rows.push(obs("C", &alloc::format!("2022-02-{:02}", 2 + k * 3), 0.0));
        }
        assert!(matches!(PanelDataset::new("y", vec![], rows), Err(Error::IrregularGrid(_))));
    }

    #[test]
    fn shape_detection() {
        let cross: Vec<_> = (0..5000).map(|i| obs(&alloc::format!("u{i}"), "2020-01-01", 0.0)).collect();
        assert_eq!(PanelDataset::new("y", vec![], cross).unwrap().0.shape(), DataShape::CrossSectional);
        let single = vec![obs("A", "2020-01-01", 0.0)];
        assert_eq!(PanelDataset::new("y", vec![], single).unwrap().0.shape(), DataShape::CrossSectional);
        let mut panel = Vec::new();
        for i in 0..1000 {
            for t in 0..52 {
                panel.push(obs(&alloc::format!("u{i}"), &d("2020-01-06").checked_add_signed(chrono::TimeDelta::weeks(t)).unwrap().to_string(), 0.0));
            }
        }
        assert_eq!(PanelDataset::new("y", vec![], panel).unwrap().0.shape(), DataShape::Panel);
    }

    #[test]
    fn off_grid_treatment_snaps_forward() {
        let g = DateGrid { period: Period::Weekly, start: d("2022-07-01"), len: 10 };
        assert_eq!(g.ceil_offset(d("2022-07-23")), 4);
        assert_eq!(g.ceil_offset(d("2022-07-22")), 3);
        assert_eq!(g.ceil_offset(d("2022-06-01")), -4);
        let m = DateGrid { period: Period::Monthly, start: d("2019-01-01"), len: 52 };
        assert_eq!(m.ceil_offset(d("2020-03-01")), 14);
        assert_eq!(m.ceil_offset(d("2020-03-02")), 15);
        let t = TreatmentTable::new(vec![TreatmentRow { unit_id: "A".into(), treatment_date: d("2022-07-23") }]).unwrap();
        assert_eq!(g.snap_treatment(&t).date_of("A"), Some(d("2022-07-29")));
    }

    #[test]
    fn study_input_cross_checks() {
        let (p, _) = PanelDataset::new("y", vec![], vec![obs("A", "2022-07-01", 1.0), obs("Z", "2022-07-01", 1.0)]).unwrap();
        let t = TreatmentTable::new(vec![TreatmentRow { unit_id: "Q".into(), treatment_date: d("2022-07-01") }]).unwrap();
        assert!(matches!(check_study_inputs(&p, &t), Err(Error::UnknownTreatedUnit(_))));
        let t = TreatmentTable::new(vec![
            TreatmentRow { unit_id: "A".into(), treatment_date: d("2022-07-01") },
            TreatmentRow { unit_id: "Z".into(), treatment_date: d("2022-07-01") },
        ])
        .unwrap();
        assert!(matches!(check_study_inputs(&p, &t), Err(Error::NoControlUnits)));
    }
}
