//! Mean years of schooling by migrant status, selectivity ratios,
//! cross-country fits and duration-of-residence analyses.
//!
//! "Stayer" throughout means non-migrant at the major scale: movers
//! within a major region count as stayers here. Records with unknown
//! years of schooling are excluded from means only, never from
//! classification counts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microdata::{
    classify_migrant_status, classify_settlement_flow, scale_status, Accumulate, Education,
    FieldPresence, MigrantStatus, PersonRecord, Scale, SettlementFlow,
};
use crate::stats::{self, KahanSum, LinearFit, PowerFit, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum SelectivityError {
    #[error("years of schooling unavailable")]
    YearsSchoolingUnavailable,
    #[error("duration of residence unavailable")]
    DurationUnavailable,
    #[error("urban status of previous residence unavailable")]
    UrbanPrevUnavailable,
    #[error("no {0} cell in the table")]
    MissingCell(MigrantStatus),
    #[error("stayer cell has zero mean years of schooling")]
    ZeroStayerMean,
    #[error("no records in any status cell")]
    EmptyTable,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Age restriction for the schooling tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeFilter {
    FifteenPlus,
    TwentyToTwentyFour,
}

impl AgeFilter {
    pub fn contains(self, age: u32) -> bool {
        match self {
            AgeFilter::FifteenPlus => age >= 15,
            AgeFilter::TwentyToTwentyFour => (20..=24).contains(&age),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeFilter::FifteenPlus => "15plus",
            AgeFilter::TwentyToTwentyFour => "20-24",
        }
    }
}

impl std::str::FromStr for AgeFilter {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "15plus" | "15+" => Ok(AgeFilter::FifteenPlus),
            "20-24" | "20_24" => Ok(AgeFilter::TwentyToTwentyFour),
            other => Err(format!("unknown age filter '{other}' (expected 15plus|20-24)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MysCell {
    pub mean: f64,
    pub weight: f64,
}

/// Weighted mean years of schooling per migrant status. Cells with no
/// observations are absent, not zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MysTable {
    pub age_filter: AgeFilter,
    pub cells: BTreeMap<MigrantStatus, MysCell>,
}

impl MysTable {
    pub fn mean(&self, status: MigrantStatus) -> Option<f64> {
        self.cells.get(&status).map(|c| c.mean)
    }

    /// Build a table from known cell means, weight 1 each. Used for
    /// published reference rows and hand-made corpora.
    pub fn from_means(
        age_filter: AgeFilter,
        means: &[(MigrantStatus, f64)],
    ) -> Self {
        MysTable {
            age_filter,
            cells: means
                .iter()
                .map(|&(s, m)| (s, MysCell { mean: m, weight: 1.0 }))
                .collect(),
        }
    }
}

#[derive(Clone)]
pub struct MysAccumulator {
    age_filter: AgeFilter,
    unweighted: bool,
    sums: BTreeMap<MigrantStatus, (KahanSum, KahanSum)>,
}

impl MysAccumulator {
    pub fn new(age_filter: AgeFilter, unweighted: bool) -> Self {
        MysAccumulator {
            age_filter,
            unweighted,
            sums: BTreeMap::new(),
        }
    }

    pub fn finish(self) -> Result<MysTable, SelectivityError> {
        let mut cells = BTreeMap::new();
        for (status, (sum, weight)) in self.sums {
            let w = weight.value();
            if w > 0.0 {
                cells.insert(
                    status,
                    MysCell {
                        mean: sum.value() / w,
                        weight: w,
                    },
                );
            }
        }
        if cells.is_empty() {
            return Err(SelectivityError::EmptyTable);
        }
        Ok(MysTable {
            age_filter: self.age_filter,
            cells,
        })
    }
}

impl Accumulate for MysAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        if !self.age_filter.contains(rec.age as u32) {
            return;
        }
        let Some(years) = rec.years_schooling else {
            return;
        };
        let status = classify_migrant_status(rec);
        if status == MigrantStatus::Unclassifiable {
            return;
        }
        let w = if self.unweighted { 1.0 } else { rec.weight };
        if w <= 0.0 {
            return;
        }
        let (sum, weight) = self
            .sums
            .entry(status)
            .or_insert_with(|| (KahanSum::new(), KahanSum::new()));
        sum.add(w * years);
        weight.add(w);
    }

    fn merge(&mut self, other: Self) {
        for (status, (s, w)) in other.sums {
            let (sum, weight) = self
                .sums
                .entry(status)
                .or_insert_with(|| (KahanSum::new(), KahanSum::new()));
            sum.merge(s);
            weight.merge(w);
        }
    }
}

/// Weighted mean years of schooling by migrant status.
pub fn mys_by_status<'a, I>(
    records: I,
    presence: &FieldPresence,
    age_filter: AgeFilter,
) -> Result<MysTable, SelectivityError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    if !presence.years_schooling {
        return Err(SelectivityError::YearsSchoolingUnavailable);
    }
    let mut acc = MysAccumulator::new(age_filter, false);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

/// Schooling of urban in-migrants relative to each stayer group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectivityRatios {
    pub age_filter: AgeFilter,
    pub to_urban_stayers: f64,
    pub to_rural_stayers: f64,
}

pub fn selectivity_ratios(table: &MysTable) -> Result<SelectivityRatios, SelectivityError> {
    let get = |status: MigrantStatus| -> Result<f64, SelectivityError> {
        table
            .mean(status)
            .ok_or(SelectivityError::MissingCell(status))
    };
    let urban_in = get(MigrantStatus::UrbanInMigrant)?;
    let urban_stay = get(MigrantStatus::UrbanStayer)?;
    let rural_stay = get(MigrantStatus::RuralStayer)?;
    if urban_stay <= 0.0 || rural_stay <= 0.0 {
        return Err(SelectivityError::ZeroStayerMean);
    }
    Ok(SelectivityRatios {
        age_filter: table.age_filter,
        to_urban_stayers: urban_in / urban_stay,
        to_rural_stayers: urban_in / rural_stay,
    })
}

/// Both cross-country fits of the selectivity ratio against national
/// mean years of schooling: a power fit over every positive point, and
/// a linear fit excluding the requested countries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossCountryFit {
    pub power: PowerFit,
    pub linear: LinearFit,
    pub excluded: Vec<String>,
    pub n_linear: usize,
}

/// `points` are (country, national mean years of schooling, ratio of
/// urban in-migrant schooling to rural stayers).
pub fn cross_country_fit(
    points: &[(String, f64, f64)],
    exclusions: &BTreeSet<String>,
) -> Result<CrossCountryFit, SelectivityError> {
    let all: Vec<(f64, f64)> = points.iter().map(|(_, x, y)| (*x, *y)).collect();
    let power = stats::power_fit(&all)?;
    let linear_pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(c, _, _)| !exclusions.contains(c))
        .map(|(_, x, y)| (*x, *y))
        .collect();
    let linear = stats::ols(&linear_pts)?;
    Ok(CrossCountryFit {
        power,
        linear,
        excluded: exclusions.iter().cloned().collect(),
        n_linear: linear_pts.len(),
    })
}

/// Percentage with at least secondary education among migrants of one
/// settlement-flow type, by duration of residence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DurationAttainment {
    pub flow: SettlementFlow,
    pub rows: Vec<DurationAttainmentRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DurationAttainmentRow {
    pub duration_years: u8,
    pub secondary_plus_pct: f64,
    pub known_weight: f64,
    /// The duration value is a top-coded "this many or more" bucket.
    pub top_coded: bool,
}

#[derive(Clone)]
pub struct DurationAttainmentAccumulator {
    flow: SettlementFlow,
    max_duration: u32,
    unweighted: bool,
    // duration -> (secondary-plus, known-education, saw top-code flag)
    cells: BTreeMap<u8, (KahanSum, KahanSum, bool)>,
}

impl DurationAttainmentAccumulator {
    pub fn new(flow: SettlementFlow, max_duration: u32, unweighted: bool) -> Self {
        DurationAttainmentAccumulator {
            flow,
            max_duration,
            unweighted,
            cells: BTreeMap::new(),
        }
    }

    pub fn finish(self) -> Result<DurationAttainment, SelectivityError> {
        let rows: Vec<DurationAttainmentRow> = self
            .cells
            .into_iter()
            .filter(|(_, (_, known, _))| known.value() > 0.0)
            .map(|(duration, (sec, known, top))| DurationAttainmentRow {
                duration_years: duration,
                secondary_plus_pct: 100.0 * sec.value() / known.value(),
                known_weight: known.value(),
                top_coded: top,
            })
            .collect();
        if rows.is_empty() {
            return Err(SelectivityError::EmptyTable);
        }
        Ok(DurationAttainment {
            flow: self.flow,
            rows,
        })
    }
}

impl Accumulate for DurationAttainmentAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        if scale_status(rec, Scale::Major) != Some(true) {
            return;
        }
        if classify_settlement_flow(rec) != self.flow {
            return;
        }
        let Some(duration) = rec.duration_years else {
            return;
        };
        if duration as u32 > self.max_duration {
            return;
        }
        if rec.education == Education::Unknown {
            return;
        }
        let w = if self.unweighted { 1.0 } else { rec.weight };
        let cell = self
            .cells
            .entry(duration)
            .or_insert_with(|| (KahanSum::new(), KahanSum::new(), false));
        cell.1.add(w);
        cell.2 |= rec.duration_top_coded;
        if rec.education.is_secondary_plus() {
            cell.0.add(w);
        }
    }

    fn merge(&mut self, other: Self) {
        for (d, (s, k, t)) in other.cells {
            let cell = self
                .cells
                .entry(d)
                .or_insert_with(|| (KahanSum::new(), KahanSum::new(), false));
            cell.0.merge(s);
            cell.1.merge(k);
            cell.2 |= t;
        }
    }
}

/// Attainment series over durations 0..interval for one flow type,
/// respecting top-coding carried on the records.
pub fn attainment_by_duration<'a, I>(
    records: I,
    presence: &FieldPresence,
    flow: SettlementFlow,
    interval_years: u32,
) -> Result<DurationAttainment, SelectivityError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    if !presence.duration {
        return Err(SelectivityError::DurationUnavailable);
    }
    if !presence.urban_prev {
        return Err(SelectivityError::UrbanPrevUnavailable);
    }
    let mut acc = DurationAttainmentAccumulator::new(flow, interval_years.saturating_sub(1), false);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

/// Weighted mean years of schooling per (duration, flow type).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MysByDuration {
    pub rows: Vec<MysByDurationRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MysByDurationRow {
    pub duration_years: u8,
    pub flow: SettlementFlow,
    pub mean: f64,
    pub weight: f64,
}

#[derive(Clone, Default)]
pub struct MysByDurationAccumulator {
    unweighted: bool,
    cells: BTreeMap<(u8, SettlementFlow), (KahanSum, KahanSum)>,
}

impl MysByDurationAccumulator {
    pub fn new(unweighted: bool) -> Self {
        MysByDurationAccumulator {
            unweighted,
            cells: BTreeMap::new(),
        }
    }

    pub fn finish(self) -> Result<MysByDuration, SelectivityError> {
        let rows: Vec<MysByDurationRow> = self
            .cells
            .into_iter()
            .filter(|(_, (_, w))| w.value() > 0.0)
            .map(|((d, flow), (sum, w))| MysByDurationRow {
                duration_years: d,
                flow,
                mean: sum.value() / w.value(),
                weight: w.value(),
            })
            .collect();
        if rows.is_empty() {
            return Err(SelectivityError::EmptyTable);
        }
        Ok(MysByDuration { rows })
    }
}

impl Accumulate for MysByDurationAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        if scale_status(rec, Scale::Major) != Some(true) {
            return;
        }
        let flow = classify_settlement_flow(rec);
        if flow == SettlementFlow::Unknown {
            return;
        }
        let (Some(duration), Some(years)) = (rec.duration_years, rec.years_schooling) else {
            return;
        };
        let w = if self.unweighted { 1.0 } else { rec.weight };
        let cell = self
            .cells
            .entry((duration, flow))
            .or_insert_with(|| (KahanSum::new(), KahanSum::new()));
        cell.0.add(w * years);
        cell.1.add(w);
    }

    fn merge(&mut self, other: Self) {
        for (k, (s, w)) in other.cells {
            let cell = self
                .cells
                .entry(k)
                .or_insert_with(|| (KahanSum::new(), KahanSum::new()));
            cell.0.merge(s);
            cell.1.merge(w);
        }
    }
}

pub fn mys_by_duration<'a, I>(
    records: I,
    presence: &FieldPresence,
) -> Result<MysByDuration, SelectivityError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    if !presence.duration {
        return Err(SelectivityError::DurationUnavailable);
    }
    if !presence.urban_prev {
        return Err(SelectivityError::UrbanPrevUnavailable);
    }
    if !presence.years_schooling {
        return Err(SelectivityError::YearsSchoolingUnavailable);
    }
    let mut acc = MysByDurationAccumulator::new(false);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdata::{RegionId, UrbanStatus};

    fn person(
        status: MigrantStatus,
        age: u16,
        years: f64,
    ) -> PersonRecord {
        let (moved, urban) = match status {
            MigrantStatus::UrbanInMigrant => (true, UrbanStatus::Urban),
            MigrantStatus::RuralInMigrant => (true, UrbanStatus::Rural),
            MigrantStatus::UrbanStayer => (false, UrbanStatus::Urban),
            MigrantStatus::RuralStayer => (false, UrbanStatus::Rural),
            MigrantStatus::Unclassifiable => (false, UrbanStatus::Unknown),
        };
        let mut r = PersonRecord::stayer(age, RegionId(0), RegionId(10));
        if moved {
            r.major_prev = Some(RegionId(11));
            r.minor_prev = Some(RegionId(1));
        }
        r.urban_now = urban;
        r.years_schooling = Some(years);
        r
    }

    #[test]
    fn constant_schooling_constant_cells() {
        let mut recs = Vec::new();
        for status in MigrantStatus::REPORTED {
            for _ in 0..5 {
                recs.push(person(status, 30, 6.0));
            }
        }
        let t = mys_by_status(&recs, &FieldPresence::all(), AgeFilter::FifteenPlus).unwrap();
        for status in MigrantStatus::REPORTED {
            assert_eq!(t.mean(status), Some(6.0));
        }
    }

    #[test]
    fn reproduces_published_style_means_exactly() {
        // Group means 7.93 / 4.97 / 6.61 / 3.27 from a constructed
        // micro-corpus: two records per cell, symmetric around the mean.
        let cells = [
            (MigrantStatus::UrbanInMigrant, 7.93),
            (MigrantStatus::RuralInMigrant, 4.97),
            (MigrantStatus::UrbanStayer, 6.61),
            (MigrantStatus::RuralStayer, 3.27),
        ];
        let mut recs = Vec::new();
        for (status, mean) in cells {
            recs.push(person(status, 40, mean + 1.0));
            recs.push(person(status, 40, mean - 1.0));
        }
        let t = mys_by_status(&recs, &FieldPresence::all(), AgeFilter::FifteenPlus).unwrap();
        for (status, mean) in cells {
            assert!((t.mean(status).unwrap() - mean).abs() < 1e-12);
        }
        let ratios = selectivity_ratios(&t).unwrap();
        assert!((ratios.to_urban_stayers - 7.93 / 6.61).abs() < 1e-12);
        assert!((ratios.to_rural_stayers - 7.93 / 3.27).abs() < 1e-12);
        // Published rounding: 1.20 and 2.43.
        assert!((ratios.to_urban_stayers - 1.20).abs() < 0.005);
        assert!((ratios.to_rural_stayers - 2.43).abs() < 0.005);
    }

    #[test]
    fn age_filters_respected() {
        let recs = vec![
            person(MigrantStatus::UrbanInMigrant, 22, 12.0),
            person(MigrantStatus::UrbanInMigrant, 40, 4.0),
            person(MigrantStatus::UrbanInMigrant, 12, 1.0),
        ];
        let adults = mys_by_status(&recs, &FieldPresence::all(), AgeFilter::FifteenPlus).unwrap();
        assert_eq!(adults.mean(MigrantStatus::UrbanInMigrant), Some(8.0));
        let young = mys_by_status(&recs, &FieldPresence::all(), AgeFilter::TwentyToTwentyFour).unwrap();
        assert_eq!(young.mean(MigrantStatus::UrbanInMigrant), Some(12.0));
    }

    #[test]
    fn unknown_years_excluded_from_means_only() {
        let mut with_missing = person(MigrantStatus::UrbanStayer, 30, 0.0);
        with_missing.years_schooling = None;
        let recs = vec![person(MigrantStatus::UrbanStayer, 30, 9.0), with_missing];
        let t = mys_by_status(&recs, &FieldPresence::all(), AgeFilter::FifteenPlus).unwrap();
        let cell = t.cells.get(&MigrantStatus::UrbanStayer).unwrap();
        assert_eq!(cell.mean, 9.0);
        assert_eq!(cell.weight, 1.0);
    }

    #[test]
    fn ratios_scale_free() {
        let mut recs = Vec::new();
        for (status, mean) in [
            (MigrantStatus::UrbanInMigrant, 9.9),
            (MigrantStatus::UrbanStayer, 8.1),
            (MigrantStatus::RuralStayer, 4.4),
        ] {
            recs.push(person(status, 30, mean));
        }
        let base = selectivity_ratios(
            &mys_by_status(&recs, &FieldPresence::all(), AgeFilter::FifteenPlus).unwrap(),
        )
        .unwrap();
        for r in &mut recs {
            *r.years_schooling.as_mut().unwrap() *= 3.7;
        }
        let scaled = selectivity_ratios(
            &mys_by_status(&recs, &FieldPresence::all(), AgeFilter::FifteenPlus).unwrap(),
        )
        .unwrap();
        assert!((base.to_urban_stayers - scaled.to_urban_stayers).abs() < 1e-12);
        assert!((base.to_rural_stayers - scaled.to_rural_stayers).abs() < 1e-12);
    }

    #[test]
    fn missing_stayer_cell_is_error() {
        let recs = vec![person(MigrantStatus::UrbanInMigrant, 30, 9.0)];
        let t = mys_by_status(&recs, &FieldPresence::all(), AgeFilter::FifteenPlus).unwrap();
        assert!(matches!(
            selectivity_ratios(&t),
            Err(SelectivityError::MissingCell(_))
        ));
    }

    #[test]
    fn cross_country_exact_line() {
        let pts: Vec<(String, f64, f64)> = (1..=10)
            .map(|i| {
                let x = i as f64;
                (format!("c{i}"), x, -0.15 * x + 2.71)
            })
            .collect();
        let fit = cross_country_fit(&pts, &BTreeSet::new()).unwrap();
        assert!((fit.linear.slope + 0.15).abs() < 1e-12);
        assert!((fit.linear.intercept - 2.71).abs() < 1e-12);
        assert!((fit.linear.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_country_constant_ratio_power_exponent_zero() {
        let pts: Vec<(String, f64, f64)> = (1..=6)
            .map(|i| (format!("c{i}"), i as f64, 1.4))
            .collect();
        let fit = cross_country_fit(&pts, &BTreeSet::new()).unwrap();
        assert!(fit.power.exponent.abs() < 1e-12);
    }

    fn duration_migrant(flow: SettlementFlow, duration: u8, edu: Education, years: f64) -> PersonRecord {
        let (prev, now) = match flow {
            SettlementFlow::RuralRural => (UrbanStatus::Rural, UrbanStatus::Rural),
            SettlementFlow::RuralUrban => (UrbanStatus::Rural, UrbanStatus::Urban),
            SettlementFlow::UrbanRural => (UrbanStatus::Urban, UrbanStatus::Rural),
            SettlementFlow::UrbanUrban => (UrbanStatus::Urban, UrbanStatus::Urban),
            SettlementFlow::Unknown => (UrbanStatus::Unknown, UrbanStatus::Unknown),
        };
        let mut r = person(MigrantStatus::UrbanInMigrant, 30, years);
        r.urban_prev = prev;
        r.urban_now = now;
        r.education = edu;
        r.duration_years = Some(duration);
        r
    }

    #[test]
    fn all_tertiary_duration_series_is_hundred() {
        let mut recs = Vec::new();
        for d in 0..5u8 {
            recs.push(duration_migrant(SettlementFlow::RuralUrban, d, Education::Tertiary, 12.0));
        }
        let series = attainment_by_duration(
            &recs,
            &FieldPresence::all(),
            SettlementFlow::RuralUrban,
            5,
        )
        .unwrap();
        assert_eq!(series.rows.len(), 5);
        for row in &series.rows {
            assert_eq!(row.secondary_plus_pct, 100.0);
            assert!(row.secondary_plus_pct >= 0.0 && row.secondary_plus_pct <= 100.0);
        }
    }

    #[test]
    fn top_coded_duration_series_has_five_bins() {
        let mut recs = Vec::new();
        for d in 0..=4u8 {
            let mut r = duration_migrant(SettlementFlow::RuralUrban, d, Education::Secondary, 9.0);
            r.duration_top_coded = d == 4;
            recs.push(r);
        }
        let series = attainment_by_duration(
            &recs,
            &FieldPresence::all(),
            SettlementFlow::RuralUrban,
            5,
        )
        .unwrap();
        assert_eq!(series.rows.len(), 5);
        assert!(series.rows.iter().any(|r| r.top_coded));
        assert_eq!(
            series.rows.iter().map(|r| r.duration_years).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn duration_requires_bindings() {
        let recs = vec![duration_migrant(SettlementFlow::RuralUrban, 1, Education::Primary, 5.0)];
        let mut presence = FieldPresence::all();
        presence.duration = false;
        assert_eq!(
            attainment_by_duration(&recs, &presence, SettlementFlow::RuralUrban, 5).unwrap_err(),
            SelectivityError::DurationUnavailable
        );
    }

    #[test]
    fn mys_by_duration_constant() {
        let mut recs = Vec::new();
        for d in 0..3u8 {
            for flow in [SettlementFlow::RuralUrban, SettlementFlow::UrbanUrban] {
                recs.push(duration_migrant(flow, d, Education::Primary, 8.0));
            }
        }
        let t = mys_by_duration(&recs, &FieldPresence::all()).unwrap();
        assert_eq!(t.rows.len(), 6);
        for row in &t.rows {
            assert_eq!(row.mean, 8.0);
        }
    }
}
