//! Migration intensities: crude rates, education stratification,
//! age-specific schedules and the multi-scale extrapolation of the
//! all-address intensity.
//!
//! The population at risk (PAR) is measured at the end of the interval
//! and, by default, excludes records whose prior residence cannot be
//! classified at the requested scale; `include_unknown_par` keeps them
//! in the denominator instead. All counting runs through compensated
//! sums so chunked parallel passes agree with sequential ones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microdata::{scale_status, Accumulate, Education, PersonRecord, Reason, Scale, Sex};
use crate::stats::KahanSum;

/// Age schedules cover single years of age 5 through 65.
pub const PROFILE_MIN_AGE: u32 = 5;
pub const PROFILE_MAX_AGE: u32 = 65;
pub const PROFILE_AGES: usize = (PROFILE_MAX_AGE - PROFILE_MIN_AGE + 1) as usize;

#[derive(Debug, Error, PartialEq)]
pub enum IntensityError {
    #[error("empty population at risk")]
    EmptyPar,
    #[error("reference stratum has zero intensity")]
    ZeroReference,
    #[error("reference stratum absent")]
    MissingReference,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("need at least one observed scale")]
    NoObservedScales,
    #[error("scale with {0} regions cannot identify migration (need n >= 2)")]
    ScaleTooCoarse(u64),
    #[error("non-positive intensity {0} cannot enter the log-linear fit")]
    NonPositiveCmi(f64),
    #[error("address count {addresses} below the finest observed scale ({max_n} regions)")]
    AddressesBelowScale { addresses: u64, max_n: u64 },
}

/// Counting options shared by the intensity estimators.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CountOptions {
    /// Keep records with unclassifiable prior residence in the PAR.
    pub include_unknown_par: bool,
    /// Ignore person weights (every record counts 1).
    pub unweighted: bool,
}

impl CountOptions {
    #[inline]
    fn weight_of(&self, rec: &PersonRecord) -> f64 {
        if self.unweighted {
            1.0
        } else {
            rec.weight
        }
    }
}

/// Predicate over age, sex and education used to restrict a count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub min_age: Option<u32>,
    pub max_age: Option<u32>,
    pub sex: Option<Sex>,
    pub education: Option<Education>,
}

impl RecordFilter {
    /// Population aged 15 and over, the default base for the
    /// education-stratified tables.
    pub fn adults() -> Self {
        RecordFilter {
            min_age: Some(15),
            ..Default::default()
        }
    }

    pub fn ages(min: u32, max: u32) -> Self {
        RecordFilter {
            min_age: Some(min),
            max_age: Some(max),
            ..Default::default()
        }
    }

    #[inline]
    pub fn matches(&self, rec: &PersonRecord) -> bool {
        let age = rec.age as u32;
        if let Some(lo) = self.min_age {
            if age < lo {
                return false;
            }
        }
        if let Some(hi) = self.max_age {
            if age > hi {
                return false;
            }
        }
        if let Some(sex) = self.sex {
            if rec.sex != sex {
                return false;
            }
        }
        if let Some(edu) = self.education {
            if rec.education != edu {
                return false;
            }
        }
        true
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        match (self.min_age, self.max_age) {
            (Some(lo), Some(hi)) => parts.push(format!("ages {lo}-{hi}")),
            (Some(lo), None) => parts.push(format!("ages {lo}+")),
            (None, Some(hi)) => parts.push(format!("ages <={hi}")),
            (None, None) => {}
        }
        if let Some(sex) = self.sex {
            parts.push(sex.as_str().to_string());
        }
        if let Some(edu) = self.education {
            parts.push(edu.as_str().to_string());
        }
        if parts.is_empty() {
            "all".to_string()
        } else {
            parts.join(", ")
        }
    }
}

/// A crude migration intensity: migrants per hundred at risk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Intensity {
    pub migrants: f64,
    pub par: f64,
    /// 100 * migrants / par.
    pub value: f64,
    pub scale: Scale,
    pub filter: String,
}

/// Accumulator behind [`cmi`]; usable directly in streaming passes.
#[derive(Clone)]
pub struct CmiAccumulator {
    scale: Scale,
    filter: RecordFilter,
    opts: CountOptions,
    migrants: KahanSum,
    par: KahanSum,
}

impl CmiAccumulator {
    pub fn new(scale: Scale, filter: RecordFilter, opts: CountOptions) -> Self {
        CmiAccumulator {
            scale,
            filter,
            opts,
            migrants: KahanSum::new(),
            par: KahanSum::new(),
        }
    }

    pub fn finish(self) -> Result<Intensity, IntensityError> {
        let par = self.par.value();
        if par <= 0.0 {
            return Err(IntensityError::EmptyPar);
        }
        let migrants = self.migrants.value();
        Ok(Intensity {
            migrants,
            par,
            value: 100.0 * migrants / par,
            scale: self.scale,
            filter: self.filter.describe(),
        })
    }
}

impl Accumulate for CmiAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        if !self.filter.matches(rec) {
            return;
        }
        let w = self.opts.weight_of(rec);
        match scale_status(rec, self.scale) {
            Some(moved) => {
                self.par.add(w);
                if moved {
                    self.migrants.add(w);
                }
            }
            None => {
                if self.opts.include_unknown_par {
                    self.par.add(w);
                }
            }
        }
    }

    fn merge(&mut self, other: Self) {
        self.migrants.merge(other.migrants);
        self.par.merge(other.par);
    }
}

/// Crude migration intensity at a scale, under a filter.
pub fn cmi<'a, I>(
    records: I,
    scale: Scale,
    filter: RecordFilter,
    opts: CountOptions,
) -> Result<Intensity, IntensityError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    let mut acc = CmiAccumulator::new(scale, filter, opts);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

/// Education-stratified intensities plus the all-education total.
///
/// Unknown education is excluded from the strata but contributes to the
/// total row. Strata whose PAR is empty are listed as absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EducationCmiTable {
    pub scale: Scale,
    pub total: Intensity,
    pub levels: Vec<(Education, Intensity)>,
    pub absent: Vec<Education>,
}

impl EducationCmiTable {
    pub fn level(&self, edu: Education) -> Option<&Intensity> {
        self.levels.iter().find(|(e, _)| *e == edu).map(|(_, i)| i)
    }
}

#[derive(Clone)]
pub struct EducationCmiAccumulator {
    total: CmiAccumulator,
    strata: Vec<CmiAccumulator>,
}

impl EducationCmiAccumulator {
    /// `filter.education` is overridden per stratum; the rest of the
    /// filter (typically ages 15+) applies everywhere.
    pub fn new(scale: Scale, filter: RecordFilter, opts: CountOptions) -> Self {
        let strata = Education::KNOWN
            .iter()
            .map(|&edu| {
                let mut f = filter.clone();
                f.education = Some(edu);
                CmiAccumulator::new(scale, f, opts)
            })
            .collect();
        let mut total_filter = filter;
        total_filter.education = None;
        EducationCmiAccumulator {
            total: CmiAccumulator::new(scale, total_filter, opts),
            strata,
        }
    }

    pub fn finish(self) -> Result<EducationCmiTable, IntensityError> {
        let scale = self.total.scale;
        let total = self.total.finish()?;
        let mut levels = Vec::new();
        let mut absent = Vec::new();
        for (edu, acc) in Education::KNOWN.iter().zip(self.strata) {
            match acc.finish() {
                Ok(intensity) => levels.push((*edu, intensity)),
                Err(IntensityError::EmptyPar) => absent.push(*edu),
                Err(e) => return Err(e),
            }
        }
        Ok(EducationCmiTable {
            scale,
            total,
            levels,
            absent,
        })
    }
}

impl Accumulate for EducationCmiAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        self.total.absorb(rec);
        for acc in &mut self.strata {
            acc.absorb(rec);
        }
    }

    fn merge(&mut self, other: Self) {
        self.total.merge(other.total);
        for (a, b) in self.strata.iter_mut().zip(other.strata) {
            a.merge(b);
        }
    }
}

pub fn cmi_by_education<'a, I>(
    records: I,
    scale: Scale,
    filter: RecordFilter,
    opts: CountOptions,
) -> Result<EducationCmiTable, IntensityError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    let mut acc = EducationCmiAccumulator::new(scale, filter, opts);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}

/// Intensities expressed relative to the less-than-primary stratum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EducationRatioTable {
    pub scale: Scale,
    /// (level, cmi / cmi(lt_primary)); the reference row is exactly 1.
    pub ratios: Vec<(Education, f64)>,
}

pub fn education_ratios(table: &EducationCmiTable) -> Result<EducationRatioTable, IntensityError> {
    let reference = table
        .level(Education::LtPrimary)
        .ok_or(IntensityError::MissingReference)?;
    if reference.value <= 0.0 {
        return Err(IntensityError::ZeroReference);
    }
    let ratios = table
        .levels
        .iter()
        .map(|(edu, intensity)| {
            let r = if *edu == Education::LtPrimary {
                1.0
            } else {
                intensity.value / reference.value
            };
            (*edu, r)
        })
        .collect();
    Ok(EducationRatioTable {
        scale: table.scale,
        ratios,
    })
}

/// One observed (number of regions, intensity) point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObservedScale {
    pub n_regions: u64,
    pub cmi: f64,
}

/// Extrapolation of the all-address migration intensity from
/// intensities observed at coarser spatial scales.
///
/// Fits `CMI_j = k * ln(n_j^2)` through the origin by least squares
/// and evaluates the line at the number of addresses. The slope is the
/// scale-dependence constant of the log-linear law relating intensity
/// to the squared count of spatial units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcmiEstimate {
    pub courgeau_k: f64,
    pub observed: Vec<ObservedScale>,
    pub n_addresses: u64,
    /// Estimated percentage changing address, capped at 100.
    pub acmi_value: f64,
}

pub fn acmi_estimate(
    observed: &[ObservedScale],
    n_addresses: u64,
) -> Result<AcmiEstimate, IntensityError> {
    if observed.is_empty() {
        return Err(IntensityError::NoObservedScales);
    }
    let mut max_n = 0u64;
    for obs in observed {
        if obs.n_regions <= 1 {
            return Err(IntensityError::ScaleTooCoarse(obs.n_regions));
        }
        if obs.cmi <= 0.0 {
            return Err(IntensityError::NonPositiveCmi(obs.cmi));
        }
        max_n = max_n.max(obs.n_regions);
    }
    if n_addresses < max_n {
        return Err(IntensityError::AddressesBelowScale {
            addresses: n_addresses,
            max_n,
        });
    }
    let mut xy = KahanSum::new();
    let mut xx = KahanSum::new();
    for obs in observed {
        let x = (obs.n_regions as f64).powi(2).ln();
        xy.add(x * obs.cmi);
        xx.add(x * x);
    }
    let k = xy.value() / xx.value();
    let acmi_value = (k * (n_addresses as f64).powi(2).ln()).min(100.0);
    Ok(AcmiEstimate {
        courgeau_k: k,
        observed: observed.to_vec(),
        n_addresses,
        acmi_value,
    })
}

/// An age schedule over single years (raw) or the half-year grid
/// (after smoothing). `values` are proportions, never percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeProfile {
    pub ages: Vec<f64>,
    pub values: Vec<f64>,
    /// Single-year ages in 5..=65 whose PAR was empty.
    pub missing_ages: Vec<u32>,
    pub normalized: bool,
    pub smoothed: bool,
}

impl AgeProfile {
    pub fn sum(&self) -> f64 {
        self.values.iter().copied().collect::<KahanSum>().value()
    }

    pub fn from_values(ages: Vec<f64>, values: Vec<f64>) -> Self {
        AgeProfile {
            ages,
            values,
            missing_ages: Vec::new(),
            normalized: false,
            smoothed: false,
        }
    }
}

/// Accumulator for age-specific migration intensities: per single year
/// of age, migrants of that age over population of that age.
#[derive(Clone)]
pub struct AsmiAccumulator {
    scale: Scale,
    opts: CountOptions,
    /// Numerator counts only migrants citing this reason when set.
    reason: Option<Reason>,
    migrants: Vec<KahanSum>,
    par: Vec<KahanSum>,
}

impl AsmiAccumulator {
    pub fn new(scale: Scale, opts: CountOptions) -> Self {
        Self::for_reason(scale, opts, None)
    }

    pub fn for_reason(scale: Scale, opts: CountOptions, reason: Option<Reason>) -> Self {
        AsmiAccumulator {
            scale,
            opts,
            reason,
            migrants: vec![KahanSum::new(); PROFILE_AGES],
            par: vec![KahanSum::new(); PROFILE_AGES],
        }
    }

    pub fn finish(self) -> Result<AgeProfile, IntensityError> {
        let mut ages = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        let mut any = false;
        for (i, (m, p)) in self.migrants.iter().zip(&self.par).enumerate() {
            let age = PROFILE_MIN_AGE + i as u32;
            let par = p.value();
            if par > 0.0 {
                any = true;
                ages.push(age as f64);
                values.push(m.value() / par);
            } else {
                missing.push(age);
            }
        }
        if !any {
            return Err(IntensityError::EmptyCorpus);
        }
        Ok(AgeProfile {
            ages,
            values,
            missing_ages: missing,
            normalized: false,
            smoothed: false,
        })
    }
}

impl Accumulate for AsmiAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        let age = rec.age as u32;
        if !(PROFILE_MIN_AGE..=PROFILE_MAX_AGE).contains(&age) {
            return;
        }
        let idx = (age - PROFILE_MIN_AGE) as usize;
        let w = self.opts.weight_of(rec);
        match scale_status(rec, self.scale) {
            Some(moved) => {
                self.par[idx].add(w);
                if moved {
                    let counted = match self.reason {
                        None => true,
                        Some(r) => rec.reason == Some(r),
                    };
                    if counted {
                        self.migrants[idx].add(w);
                    }
                }
            }
            None => {
                if self.opts.include_unknown_par {
                    self.par[idx].add(w);
                }
            }
        }
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.migrants.iter_mut().zip(other.migrants) {
            a.merge(b);
        }
        for (a, b) in self.par.iter_mut().zip(other.par) {
            a.merge(b);
        }
    }
}

/// Raw age-specific migration intensities over ages 5..=65.
pub fn asmi<'a, I>(records: I, scale: Scale, opts: CountOptions) -> Result<AgeProfile, IntensityError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    let mut acc = AsmiAccumulator::new(scale, opts);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish()
}
