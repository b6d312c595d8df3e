//! Flow matrices, migrant composition, settlement-flow shares and
//! reason-for-move analyses.
//!
//! Shares are computed over known-value bases (known reason, known
//! education, known urban pair); the unknown mass is reported alongside
//! rather than silently dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::age_profile::{self, ProfileError};
use crate::intensity::{AgeProfile, AsmiAccumulator, CountOptions};
use crate::microdata::{
    classify_settlement_flow, scale_status, Accumulate, Education, FieldPresence, PersonRecord,
    Reason, RegionId, Scale, SettlementFlow, Sex,
};
use crate::stats::KahanSum;

#[derive(Debug, Error, PartialEq)]
pub enum FlowsError {
    #[error("urban status of previous residence unavailable")]
    UrbanPrevUnavailable,
    #[error("reason for moving unavailable")]
    ReasonUnavailable,
    #[error("no migrants with classifiable settlement flow")]
    NoClassifiableMigrants,
    #[error("no known-education migrants")]
    NoKnownEducationMigrants,
    #[error("no migrants with known reason")]
    NoKnownReasonMigrants,
    #[error("empty reason stratum")]
    EmptyReasonStratum,
    #[error("sex-specific shares need both sexes present")]
    MissingSex,
    #[error("table was not computed by sex")]
    NotBySex,
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Weighted origin-by-destination counts at one scale. Diagonal cells
/// hold stayers; every off-diagonal cell is a migrant flow. Keys are
/// region arena indices; resolve codes through the hierarchy when
/// emitting.
#[derive(Debug, Clone)]
pub struct FlowMatrix {
    pub scale: Scale,
    /// Stratum label when the matrix is one slice of a stratified set.
    pub stratum: Option<String>,
    pub cells: BTreeMap<(u32, u32), f64>,
}

impl FlowMatrix {
    fn new(scale: Scale, stratum: Option<String>) -> Self {
        FlowMatrix {
            scale,
            stratum,
            cells: BTreeMap::new(),
        }
    }

    fn add(&mut self, origin: RegionId, dest: RegionId, w: f64) {
        *self.cells.entry((origin.0, dest.0)).or_insert(0.0) += w;
    }

    /// Total weighted migrants: sum of off-diagonal cells.
    pub fn total_migrants(&self) -> f64 {
        self.cells
            .iter()
            .filter(|((o, d), _)| o != d)
            .map(|(_, w)| *w)
            .collect::<KahanSum>()
            .value()
    }

    /// Weighted out-migrants per origin region (off-diagonal row sums).
    pub fn out_migrants(&self) -> BTreeMap<u32, f64> {
        let mut out = BTreeMap::new();
        for (&(o, d), &w) in &self.cells {
            if o != d {
                *out.entry(o).or_insert(0.0) += w;
            }
        }
        out
    }

    /// Weighted in-migrants per destination region.
    pub fn in_migrants(&self) -> BTreeMap<u32, f64> {
        let mut inm = BTreeMap::new();
        for (&(o, d), &w) in &self.cells {
            if o != d {
                *inm.entry(d).or_insert(0.0) += w;
            }
        }
        inm
    }

    fn merge_from(&mut self, other: FlowMatrix) {
        for (k, w) in other.cells {
            *self.cells.entry(k).or_insert(0.0) += w;
        }
    }
}

/// Stratification dimension for flow matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStratifier {
    Education,
    AgeGroup,
    Sex,
}

impl FlowStratifier {
    fn label(&self, rec: &PersonRecord) -> String {
        match self {
            FlowStratifier::Education => rec.education.as_str().to_string(),
            FlowStratifier::AgeGroup => match age_group_5y(rec.age as u32) {
                Some(g) => g.to_string(),
                None => "other_ages".to_string(),
            },
            FlowStratifier::Sex => rec.sex.as_str().to_string(),
        }
    }
}

/// Five-year age group label within the prime working ages 15-44.
pub fn age_group_5y(age: u32) -> Option<&'static str> {
    match age {
        15..=19 => Some("15-19"),
        20..=24 => Some("20-24"),
        25..=29 => Some("25-29"),
        30..=34 => Some("30-34"),
        35..=39 => Some("35-39"),
        40..=44 => Some("40-44"),
        _ => None,
    }
}

pub const AGE_GROUPS_5Y: [&str; 6] = ["15-19", "20-24", "25-29", "30-34", "35-39", "40-44"];

#[derive(Clone)]
pub struct FlowAccumulator {
    scale: Scale,
    opts: CountOptions,
    strat: Option<FlowStratifier>,
    unstratified: FlowMatrix,
    strata: BTreeMap<String, FlowMatrix>,
}

impl FlowAccumulator {
    pub fn new(scale: Scale, strat: Option<FlowStratifier>, opts: CountOptions) -> Self {
        FlowAccumulator {
            scale,
            opts,
            strat,
            unstratified: FlowMatrix::new(scale, None),
            strata: BTreeMap::new(),
        }
    }

    pub fn finish(self) -> (FlowMatrix, BTreeMap<String, FlowMatrix>) {
        (self.unstratified, self.strata)
    }
}

impl Accumulate for FlowAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        if scale_status(rec, self.scale).is_none() {
            return;
        }
        let (origin, dest) = match self.scale {
            Scale::Major => (rec.major_prev, rec.major_now),
            Scale::Minor => (rec.minor_prev, rec.minor_now),
        };
        let (Some(origin), Some(dest)) = (origin, dest) else {
            return;
        };
        let w = if self.opts.unweighted { 1.0 } else { rec.weight };
        self.unstratified.add(origin, dest, w);
        if let Some(strat) = self.strat {
            let label = strat.label(rec);
            self.strata
                .entry(label)
                .or_insert_with(|| FlowMatrix::new(self.scale, None))
                .add(origin, dest, w);
        }
    }

    fn merge(&mut self, other: Self) {
        self.unstratified.merge_from(other.unstratified);
        for (label, m) in other.strata {
            self.strata
                .entry(label)
                .or_insert_with(|| FlowMatrix::new(self.scale, None))
                .merge_from(m);
        }
    }
}

/// Origin-destination matrix over classifiable records at a scale.
pub fn flow_matrix<'a, I>(records: I, scale: Scale, opts: CountOptions) -> FlowMatrix
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    let mut acc = FlowAccumulator::new(scale, None, opts);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish().0
}

/// One matrix per stratum value, labels filled into each matrix.
pub fn flow_matrix_by<'a, I>(
    records: I,
    scale: Scale,
    strat: FlowStratifier,
    opts: CountOptions,
) -> BTreeMap<String, FlowMatrix>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    let mut acc = FlowAccumulator::new(scale, Some(strat), opts);
    for rec in records {
        acc.absorb(rec);
    }
    let (_, mut strata) = acc.finish();
    for (label, m) in strata.iter_mut() {
        m.stratum = Some(label.clone());
    }
    strata
}

/// Percentage distribution of migrants over education levels within
/// five-year age groups 15-19 through 40-44 (known-education base).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionTable {
    pub scale: Scale,
    pub rows: Vec<CompositionRow>,
    /// Age groups with no migrants at all.
    pub empty_age_groups: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionRow {
    pub age_group: String,
    pub education: Education,
    pub share_pct: f64,
    pub migrants: f64,
}

#[derive(Clone, Default)]
pub struct CompositionAccumulator {
    scale: Option<Scale>,
    opts: CountOptions,
    // [age group][education] weighted migrants.
    cells: BTreeMap<&'static str, BTreeMap<Education, KahanSum>>,
    unknown_edu: BTreeMap<&'static str, KahanSum>,
}

impl CompositionAccumulator {
    pub fn new(scale: Scale, opts: CountOptions) -> Self {
        CompositionAccumulator {
            scale: Some(scale),
            opts,
            ..Default::default()
        }
    }

    pub fn finish(self) -> CompositionTable {
        let mut rows = Vec::new();
        let mut empty = Vec::new();
        for group in AGE_GROUPS_5Y {
            let Some(per_edu) = self.cells.get(group) else {
                if self.unknown_edu.get(group).map_or(true, |k| k.value() == 0.0) {
                    empty.push(group.to_string());
                }
                continue;
            };
            let known: f64 = per_edu.values().map(|k| k.value()).collect::<KahanSum>().value();
            if known <= 0.0 {
                empty.push(group.to_string());
                continue;
            }
            for (edu, k) in per_edu {
                rows.push(CompositionRow {
                    age_group: group.to_string(),
                    education: *edu,
                    share_pct: 100.0 * k.value() / known,
                    migrants: k.value(),
                });
            }
        }
        CompositionTable {
            scale: self.scale.unwrap_or(Scale::Major),
            rows,
            empty_age_groups: empty,
        }
    }
}

impl Accumulate for CompositionAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        let Some(scale) = self.scale else { return };
        if scale_status(rec, scale) != Some(true) {
            return;
        }
        let Some(group) = age_group_5y(rec.age as u32) else {
            return;
        };
        let w = if self.opts.unweighted { 1.0 } else { rec.weight };
        if rec.education == Education::Unknown {
            self.unknown_edu.entry(group).or_default().add(w);
        } else {
            self.cells
                .entry(group)
                .or_default()
                .entry(rec.education)
                .or_default()
                .add(w);
        }
    }

    fn merge(&mut self, other: Self) {
        for (g, per_edu) in other.cells {
            let mine = self.cells.entry(g).or_default();
            for (edu, k) in per_edu {
                mine.entry(edu).or_default().merge(k);
            }
        }
        for (g, k) in other.unknown_edu {
            self.unknown_edu.entry(g).or_default().merge(k);
        }
    }
}

pub fn composition_by_education_age<'a, I>(
    records: I,
    scale: Scale,
    opts: CountOptions,
) -> CompositionTable
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    let mut acc = CompositionAccumulator::new(scale, opts);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

/// Shares of migration between rural and urban areas, over migrants
/// whose both urban statuses are known. The four shares sum to 100.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettlementShares {
    pub scale: Scale,
    pub rr_pct: f64,
    pub ru_pct: f64,
    pub ur_pct: f64,
    pub uu_pct: f64,
    pub known_weight: f64,
    pub unknown_weight: f64,
}

#[derive(Clone)]
pub struct SettlementAccumulator {
    scale: Scale,
    opts: CountOptions,
    counts: [KahanSum; 4],
    unknown: KahanSum,
}

impl SettlementAccumulator {
    pub fn new(scale: Scale, opts: CountOptions) -> Self {
        SettlementAccumulator {
            scale,
            opts,
            counts: [KahanSum::new(); 4],
            unknown: KahanSum::new(),
        }
    }

    pub fn finish(self) -> Result<SettlementShares, FlowsError> {
        let known: f64 = self
            .counts
            .iter()
            .map(|k| k.value())
            .collect::<KahanSum>()
            .value();
        if known <= 0.0 {
            return Err(FlowsError::NoClassifiableMigrants);
        }
        let pct = |i: usize| 100.0 * self.counts[i].value() / known;
        Ok(SettlementShares {
            scale: self.scale,
            rr_pct: pct(0),
            ru_pct: pct(1),
            ur_pct: pct(2),
            uu_pct: pct(3),
            known_weight: known,
            unknown_weight: self.unknown.value(),
        })
    }
}

fn flow_index(flow: SettlementFlow) -> Option<usize> {
    match flow {
        SettlementFlow::RuralRural => Some(0),
        SettlementFlow::RuralUrban => Some(1),
        SettlementFlow::UrbanRural => Some(2),
        SettlementFlow::UrbanUrban => Some(3),
        SettlementFlow::Unknown => None,
    }
}

impl Accumulate for SettlementAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        if scale_status(rec, self.scale) != Some(true) {
            return;
        }
        let w = if self.opts.unweighted { 1.0 } else { rec.weight };
        match flow_index(classify_settlement_flow(rec)) {
            Some(i) => self.counts[i].add(w),
            None => self.unknown.add(w),
        }
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            a.merge(b);
        }
        self.unknown.merge(other.unknown);
    }
}

pub fn settlement_shares<'a, I>(
    records: I,
    presence: &FieldPresence,
    scale: Scale,
    opts: CountOptions,
) -> Result<SettlementShares, FlowsError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    if !presence.urban_prev {
        return Err(FlowsError::UrbanPrevUnavailable);
    }
    let mut acc = SettlementAccumulator::new(scale, opts);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

/// Per settlement-flow type, the percentage of migrants who completed
/// at least secondary education (known-education base).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowEducationShares {
    pub scale: Scale,
    pub rows: Vec<FlowEducationRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowEducationRow {
    pub flow: SettlementFlow,
    pub secondary_plus_pct: f64,
    pub known_weight: f64,
}

#[derive(Clone)]
pub struct FlowEducationAccumulator {
    scale: Scale,
    opts: CountOptions,
    // Per flow type: (secondary-plus, known-education total).
    cells: [(KahanSum, KahanSum); 4],
}

impl FlowEducationAccumulator {
    pub fn new(scale: Scale, opts: CountOptions) -> Self {
        FlowEducationAccumulator {
            scale,
            opts,
            cells: [(KahanSum::new(), KahanSum::new()); 4],
        }
    }

    pub fn finish(self) -> Result<FlowEducationShares, FlowsError> {
        let mut rows = Vec::new();
        for (i, flow) in SettlementFlow::KNOWN.iter().enumerate() {
            let known = self.cells[i].1.value();
            if known > 0.0 {
                rows.push(FlowEducationRow {
                    flow: *flow,
                    secondary_plus_pct: 100.0 * self.cells[i].0.value() / known,
                    known_weight: known,
                });
            }
        }
        if rows.is_empty() {
            return Err(FlowsError::NoKnownEducationMigrants);
        }
        Ok(FlowEducationShares {
            scale: self.scale,
            rows,
        })
    }
}

impl Accumulate for FlowEducationAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        if scale_status(rec, self.scale) != Some(true) {
            return;
        }
        let Some(i) = flow_index(classify_settlement_flow(rec)) else {
            return;
        };
        if rec.education == Education::Unknown {
            return;
        }
        let w = if self.opts.unweighted { 1.0 } else { rec.weight };
        self.cells[i].1.add(w);
        if rec.education.is_secondary_plus() {
            self.cells[i].0.add(w);
        }
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.cells.iter_mut().zip(other.cells) {
            a.0.merge(b.0);
            a.1.merge(b.1);
        }
    }
}

pub fn secondary_plus_share_by_flow<'a, I>(
    records: I,
    presence: &FieldPresence,
    scale: Scale,
    opts: CountOptions,
) -> Result<FlowEducationShares, FlowsError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    if !presence.urban_prev {
        return Err(FlowsError::UrbanPrevUnavailable);
    }
    let mut acc = FlowEducationAccumulator::new(scale, opts);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

/// Distribution of migrants aged 15-24 by main reason for moving.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonShareTable {
    pub scale: Scale,
    pub by_sex: bool,
    pub rows: Vec<ReasonShareRow>,
    pub unknown_reason_weight: f64,
    /// Weight of known-reason migrants whose sex is unknown; only
    /// tallied when shares are split by sex.
    pub unknown_sex_weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonShareRow {
    pub sex: Option<Sex>,
    pub reason: Reason,
    pub share_pct: f64,
    pub weight: f64,
}

impl ReasonShareTable {
    pub fn share(&self, sex: Option<Sex>, reason: Reason) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.sex == sex && r.reason == reason)
            .map(|r| r.share_pct)
    }
}

pub const REASON_AGE_MIN: u32 = 15;
pub const REASON_AGE_MAX: u32 = 24;

#[derive(Clone)]
pub struct ReasonShareAccumulator {
    scale: Scale,
    by_sex: bool,
    opts: CountOptions,
    // Indexed [sex bucket][reason]: buckets 0=male, 1=female, 2=combined.
    counts: [[KahanSum; 5]; 3],
    unknown_reason: KahanSum,
    unknown_sex: KahanSum,
}

fn reason_index(reason: Reason) -> Option<usize> {
    Reason::KNOWN.iter().position(|r| *r == reason)
}

impl ReasonShareAccumulator {
    pub fn new(scale: Scale, by_sex: bool, opts: CountOptions) -> Self {
        ReasonShareAccumulator {
            scale,
            by_sex,
            opts,
            counts: [[KahanSum::new(); 5]; 3],
            unknown_reason: KahanSum::new(),
            unknown_sex: KahanSum::new(),
        }
    }

    pub fn finish(self) -> Result<ReasonShareTable, FlowsError> {
        let total = |bucket: &[KahanSum; 5]| -> f64 {
            bucket.iter().map(|k| k.value()).collect::<KahanSum>().value()
        };
        let mut rows = Vec::new();
        let buckets: Vec<(Option<Sex>, usize)> = if self.by_sex {
            vec![(Some(Sex::Male), 0), (Some(Sex::Female), 1)]
        } else {
            vec![(None, 2)]
        };
        let mut any = false;
        for (sex, b) in buckets {
            let t = total(&self.counts[b]);
            if t <= 0.0 {
                continue;
            }
            any = true;
            for (i, reason) in Reason::KNOWN.iter().enumerate() {
                rows.push(ReasonShareRow {
                    sex,
                    reason: *reason,
                    share_pct: 100.0 * self.counts[b][i].value() / t,
                    weight: self.counts[b][i].value(),
                });
            }
        }
        if !any {
            return Err(FlowsError::NoKnownReasonMigrants);
        }
        Ok(ReasonShareTable {
            scale: self.scale,
            by_sex: self.by_sex,
            rows,
            unknown_reason_weight: self.unknown_reason.value(),
            unknown_sex_weight: self.unknown_sex.value(),
        })
    }
}

impl Accumulate for ReasonShareAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        if scale_status(rec, self.scale) != Some(true) {
            return;
        }
        let age = rec.age as u32;
        if !(REASON_AGE_MIN..=REASON_AGE_MAX).contains(&age) {
            return;
        }
        let w = if self.opts.unweighted { 1.0 } else { rec.weight };
        let Some(idx) = rec.reason.and_then(reason_index) else {
            self.unknown_reason.add(w);
            return;
        };
        if self.by_sex {
            match rec.sex {
                Sex::Male => self.counts[0][idx].add(w),
                Sex::Female => self.counts[1][idx].add(w),
                Sex::Unknown => self.unknown_sex.add(w),
            }
        } else {
            self.counts[2][idx].add(w);
        }
    }

    fn merge(&mut self, other: Self) {
        for (mine, theirs) in self.counts.iter_mut().zip(other.counts) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
        self.unknown_reason.merge(other.unknown_reason);
        self.unknown_sex.merge(other.unknown_sex);
    }
}

pub fn reason_shares<'a, I>(
    records: I,
    presence: &FieldPresence,
    scale: Scale,
    by_sex: bool,
    opts: CountOptions,
) -> Result<ReasonShareTable, FlowsError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    if !presence.reason {
        return Err(FlowsError::ReasonUnavailable);
    }
    let mut acc = ReasonShareAccumulator::new(scale, by_sex, opts);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

/// Men-to-women ratio of reason shares.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonSexRatioTable {
    pub scale: Scale,
    pub rows: Vec<ReasonSexRatioRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonSexRatioRow {
    pub reason: Reason,
    pub men_share_pct: f64,
    pub women_share_pct: f64,
    /// `None` marks an infinite ratio (zero share among women).
    pub ratio: Option<f64>,
}

pub fn reason_sex_ratio(table: &ReasonShareTable) -> Result<ReasonSexRatioTable, FlowsError> {
    if !table.by_sex {
        return Err(FlowsError::NotBySex);
    }
    let men: BTreeMap<Reason, f64> = table
        .rows
        .iter()
        .filter(|r| r.sex == Some(Sex::Male))
        .map(|r| (r.reason, r.share_pct))
        .collect();
    let women: BTreeMap<Reason, f64> = table
        .rows
        .iter()
        .filter(|r| r.sex == Some(Sex::Female))
        .map(|r| (r.reason, r.share_pct))
        .collect();
    if men.is_empty() || women.is_empty() {
        return Err(FlowsError::MissingSex);
    }
    let rows = Reason::KNOWN
        .iter()
        .map(|&reason| {
            let m = men.get(&reason).copied().unwrap_or(0.0);
            let w = women.get(&reason).copied().unwrap_or(0.0);
            ReasonSexRatioRow {
                reason,
                men_share_pct: m,
                women_share_pct: w,
                ratio: if w > 0.0 { Some(m / w) } else { None },
            }
        })
        .collect();
    Ok(ReasonSexRatioTable {
        scale: table.scale,
        rows,
    })
}

/// Smoothed, normalised age schedule of migration for one reason.
///
/// The numerator counts migrants citing the reason; the denominator is
/// the full population at risk of each age, so profiles for different
/// reasons are comparable after normalisation.
pub fn reason_age_profile<'a, I>(
    records: I,
    presence: &FieldPresence,
    reason: Reason,
    scale: Scale,
    bandwidth: f64,
    opts: CountOptions,
) -> Result<AgeProfile, FlowsError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    if !presence.reason {
        return Err(FlowsError::ReasonUnavailable);
    }
    let mut acc = AsmiAccumulator::for_reason(scale, opts, Some(reason));
    for rec in records {
        acc.absorb(rec);
    }
    let raw = acc.finish().map_err(|_| FlowsError::EmptyReasonStratum)?;
    if raw.sum() <= 0.0 {
        return Err(FlowsError::EmptyReasonStratum);
    }
    Ok(age_profile::prepare(&raw, bandwidth)?)
}
