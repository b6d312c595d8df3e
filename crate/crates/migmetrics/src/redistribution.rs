//! Per-region net migration rates and their regression against log
//! population density.
//!
//! Density is a fixed regional attribute from the hierarchy (supplied,
//! or population/area). The regression uses the natural logarithm by
//! default; changing the base rescales the slope by a positive
//! constant and leaves its sign and r-squared untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microdata::{
    scale_status, Accumulate, Education, PersonRecord, RegionHierarchy, RegionId, Scale,
};
use crate::stats::{self, KahanSum, LinearFit, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum RedistributionError {
    #[error("no regions with positive population at risk")]
    EmptyTable,
    #[error("need at least two regions with distinct positive densities")]
    NoDensityVariation,
    #[error("log base must be positive and not 1")]
    BadLogBase,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Which weights enter the density regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWeighting {
    /// Weight each region by the PAR of the analysed stratum.
    #[default]
    StratumPar,
    /// Weight by the region's all-education PAR.
    TotalPar,
    /// Unweighted.
    Equal,
}

impl std::str::FromStr for FitWeighting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "par" | "stratum" => Ok(FitWeighting::StratumPar),
            "total" => Ok(FitWeighting::TotalPar),
            "equal" | "none" => Ok(FitWeighting::Equal),
            other => Err(format!("unknown weighting '{other}' (expected par|total|equal)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmrRow {
    pub region: String,
    pub inflow: f64,
    pub outflow: f64,
    /// PAR of the analysed stratum residing in the region at census.
    pub par: f64,
    /// All-education PAR of the region (same age filter).
    pub total_par: f64,
    /// 100 * (inflow - outflow) / par.
    pub nmr: f64,
    pub density: Option<f64>,
}

/// Net migration rates per region at one scale, optionally restricted
/// to one education level (then ages 15+).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmrTable {
    pub scale: Scale,
    pub stratum: Option<Education>,
    pub rows: Vec<NmrRow>,
}

impl NmrTable {
    /// Sum of nmr_i * par_i, relative to gross flows; zero for a
    /// closed system.
    pub fn closed_system_residual(&self) -> f64 {
        let mut net = KahanSum::new();
        let mut gross = KahanSum::new();
        for row in &self.rows {
            net.add(row.nmr * row.par);
            gross.add(row.inflow.abs() + row.outflow.abs());
        }
        let scale = 100.0 * gross.value();
        if scale > 0.0 {
            net.value().abs() / scale
        } else {
            0.0
        }
    }
}

#[derive(Clone)]
pub struct NmrAccumulator {
    scale: Scale,
    stratum: Option<Education>,
    unweighted: bool,
    // Indexed by region arena id: inflow, outflow, par, total par.
    inflow: Vec<KahanSum>,
    outflow: Vec<KahanSum>,
    par: Vec<KahanSum>,
    total_par: Vec<KahanSum>,
}

impl NmrAccumulator {
    pub fn new(n_regions_total: usize, scale: Scale, stratum: Option<Education>, unweighted: bool) -> Self {
        NmrAccumulator {
            scale,
            stratum,
            unweighted,
            inflow: vec![KahanSum::new(); n_regions_total],
            outflow: vec![KahanSum::new(); n_regions_total],
            par: vec![KahanSum::new(); n_regions_total],
            total_par: vec![KahanSum::new(); n_regions_total],
        }
    }

    #[inline]
    fn in_stratum(&self, rec: &PersonRecord) -> bool {
        match self.stratum {
            None => true,
            Some(edu) => rec.education == edu && rec.age >= 15,
        }
    }

    pub fn finish(self, hierarchy: &RegionHierarchy) -> Result<NmrTable, RedistributionError> {
        let mut rows = Vec::new();
        for &rid in hierarchy.at_level(self.scale) {
            let i = rid.0 as usize;
            let par = self.par[i].value();
            if par <= 0.0 {
                continue;
            }
            let inflow = self.inflow[i].value();
            let outflow = self.outflow[i].value();
            rows.push(NmrRow {
                region: hierarchy.region(rid).code.clone(),
                inflow,
                outflow,
                par,
                total_par: self.total_par[i].value(),
                nmr: 100.0 * (inflow - outflow) / par,
                density: hierarchy.region(rid).density(),
            });
        }
        if rows.is_empty() {
            return Err(RedistributionError::EmptyTable);
        }
        Ok(NmrTable {
            scale: self.scale,
            stratum: self.stratum,
            rows,
        })
    }
}

impl Accumulate for NmrAccumulator {
    fn absorb(&mut self, rec: &PersonRecord) {
        let Some(moved) = scale_status(rec, self.scale) else {
            return;
        };
        let (origin, dest) = match self.scale {
            Scale::Major => (rec.major_prev, rec.major_now),
            Scale::Minor => (rec.minor_prev, rec.minor_now),
        };
        let Some(dest) = dest else { return };
        let w = if self.unweighted { 1.0 } else { rec.weight };
        let stratum_age_ok = self.stratum.is_none() || rec.age >= 15;
        if stratum_age_ok {
            self.total_par[dest.0 as usize].add(w);
        }
        if !self.in_stratum(rec) {
            return;
        }
        self.par[dest.0 as usize].add(w);
        if moved {
            self.inflow[dest.0 as usize].add(w);
            if let Some(origin) = origin {
                self.outflow[origin.0 as usize].add(w);
            }
        }
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.inflow.iter_mut().zip(other.inflow) {
            a.merge(b);
        }
        for (a, b) in self.outflow.iter_mut().zip(other.outflow) {
            a.merge(b);
        }
        for (a, b) in self.par.iter_mut().zip(other.par) {
            a.merge(b);
        }
        for (a, b) in self.total_par.iter_mut().zip(other.total_par) {
            a.merge(b);
        }
    }
}

/// Inflows, outflows and net rates per region of the hierarchy.
pub fn nmr_by_region<'a, I>(
    records: I,
    hierarchy: &RegionHierarchy,
    scale: Scale,
    stratum: Option<Education>,
) -> Result<NmrTable, RedistributionError>
where
    I: IntoIterator<Item = &'a PersonRecord>,
{
    let mut acc = NmrAccumulator::new(hierarchy.len(), scale, stratum, false);
    for rec in records {
        acc.absorb(rec);
    }
    acc.finish(hierarchy)
}

/// Slope of net migration rate against log density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySlope {
    pub fit: LinearFit,
    pub stratum: Option<Education>,
    pub scale: Scale,
    pub log_base: f64,
    pub weighting: FitWeighting,
    pub n_regions: usize,
}

/// Regress regional net migration rates on the logarithm of regional
/// population density. A positive slope means net gains in dense
/// regions (urbanising); a negative slope the reverse.
pub fn density_slope(
    table: &NmrTable,
    log_base: f64,
    weighting: FitWeighting,
) -> Result<DensitySlope, RedistributionError> {
    if !(log_base > 0.0) || log_base == 1.0 || !log_base.is_finite() {
        return Err(RedistributionError::BadLogBase);
    }
    let ln_base = log_base.ln();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for row in &table.rows {
        let Some(d) = row.density else { continue };
        if d <= 0.0 {
            continue;
        }
        points.push((d.ln() / ln_base, row.nmr));
        weights.push(match weighting {
            FitWeighting::StratumPar => row.par,
            FitWeighting::TotalPar => row.total_par,
            FitWeighting::Equal => 1.0,
        });
    }
    if points.len() < 2 {
        return Err(RedistributionError::NoDensityVariation);
    }
    let fit = stats::weighted_ols(&points, &weights).map_err(|e| match e {
        StatsError::NoXVariation => RedistributionError::NoDensityVariation,
        other => RedistributionError::Stats(other),
    })?;
    Ok(DensitySlope {
        fit,
        stratum: table.stratum,
        scale: table.scale,
        log_base,
        weighting,
        n_regions: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdata::RegionHierarchy;
    use std::io::Cursor;

    fn hierarchy(densities: &[f64]) -> RegionHierarchy {
        let mut csv = String::from("region_id,level,parent_id,area_km2,population\n");
        for (i, d) in densities.iter().enumerate() {
            // Area 100, population chosen to hit the density.
            csv.push_str(&format!("{},major,,100,{}\n", i + 1, d * 100.0));
        }
        RegionHierarchy::from_reader(Cursor::new(csv)).unwrap()
    }

    fn mover(h: &RegionHierarchy, from: &str, to: &str, age: u16) -> PersonRecord {
        let origin = h.lookup(Scale::Major, from).unwrap();
        let dest = h.lookup(Scale::Major, to).unwrap();
        let mut r = PersonRecord::stayer(age, RegionId(u32::MAX - 1), dest);
        r.minor_now = None;
        r.minor_prev = None;
        r.major_prev = Some(origin);
        r
    }

    fn stayer(h: &RegionHierarchy, at: &str, age: u16) -> PersonRecord {
        let dest = h.lookup(Scale::Major, at).unwrap();
        let mut r = PersonRecord::stayer(age, RegionId(u32::MAX - 1), dest);
        r.minor_now = None;
        r.minor_prev = None;
        r.major_prev = Some(dest);
        r
    }

    #[test]
    fn balanced_flows_zero_nmr() {
        let h = hierarchy(&[10.0, 100.0]);
        let mut recs = Vec::new();
        for _ in 0..5 {
            recs.push(mover(&h, "1", "2", 30));
            recs.push(mover(&h, "2", "1", 30));
        }
        for _ in 0..20 {
            recs.push(stayer(&h, "1", 30));
            recs.push(stayer(&h, "2", 30));
        }
        let t = nmr_by_region(&recs, &h, Scale::Major, None).unwrap();
        for row in &t.rows {
            assert_eq!(row.nmr, 0.0);
        }
        assert!(t.closed_system_residual() < 1e-12);
    }

    #[test]
    fn nmr_from_definition() {
        // Region 2: inflow 30, outflow 10, par 1000 -> nmr 2.0.
        let h = hierarchy(&[10.0, 100.0]);
        let mut recs = Vec::new();
        for _ in 0..30 {
            recs.push(mover(&h, "1", "2", 30));
        }
        for _ in 0..10 {
            recs.push(mover(&h, "2", "1", 30));
        }
        // Fill region 2 PAR up to 1000 (movers into 2 count toward it).
        for _ in 0..970 {
            recs.push(stayer(&h, "2", 30));
        }
        let t = nmr_by_region(&recs, &h, Scale::Major, None).unwrap();
        let row2 = t.rows.iter().find(|r| r.region == "2").unwrap();
        assert_eq!(row2.inflow, 30.0);
        assert_eq!(row2.outflow, 10.0);
        assert_eq!(row2.par, 1000.0);
        assert!((row2.nmr - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_system_identity() {
        let h = hierarchy(&[5.0, 50.0, 500.0]);
        let mut recs = Vec::new();
        for (from, to, n) in [("1", "2", 17), ("2", "3", 9), ("3", "1", 31), ("1", "3", 4)] {
            for _ in 0..n {
                recs.push(mover(&h, from, to, 25));
            }
        }
        for region in ["1", "2", "3"] {
            for _ in 0..50 {
                recs.push(stayer(&h, region, 25));
            }
        }
        let t = nmr_by_region(&recs, &h, Scale::Major, None).unwrap();
        assert!(t.closed_system_residual() < 1e-12);
        let total_in: f64 = t.rows.iter().map(|r| r.inflow).sum();
        let total_out: f64 = t.rows.iter().map(|r| r.outflow).sum();
        assert_eq!(total_in, total_out);
    }

    #[test]
    fn exact_log_line_recovered() {
        let h = hierarchy(&[1.0, 10.0, 100.0, 1000.0]);
        // Construct per-region NMR = 2.5 * ln(density) by planting flows.
        let mut table = nmr_by_region(
            &{
                let mut recs = Vec::new();
                for region in ["1", "2", "3", "4"] {
                    for _ in 0..10 {
                        recs.push(stayer(&h, region, 30));
                    }
                }
                recs
            },
            &h,
            Scale::Major,
            None,
        )
        .unwrap();
        for row in &mut table.rows {
            row.nmr = 2.5 * row.density.unwrap().ln();
        }
        let slope = density_slope(&table, std::f64::consts::E, FitWeighting::StratumPar).unwrap();
        assert!((slope.fit.slope - 2.5).abs() < 1e-9);
        assert!((slope.fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_base_rescales_slope_only() {
        let h = hierarchy(&[2.0, 20.0, 200.0]);
        let mut recs = Vec::new();
        for _ in 0..25 {
            recs.push(mover(&h, "1", "3", 30));
        }
        for _ in 0..5 {
            recs.push(mover(&h, "3", "1", 30));
        }
        for region in ["1", "2", "3"] {
            for _ in 0..100 {
                recs.push(stayer(&h, region, 30));
            }
        }
        let t = nmr_by_region(&recs, &h, Scale::Major, None).unwrap();
        let e = density_slope(&t, std::f64::consts::E, FitWeighting::StratumPar).unwrap();
        let ten = density_slope(&t, 10.0, FitWeighting::StratumPar).unwrap();
        assert!((ten.fit.slope - e.fit.slope * 10.0f64.ln()).abs() < 1e-9 * ten.fit.slope.abs());
        assert_eq!(e.fit.slope.signum(), ten.fit.slope.signum());
        assert!((e.fit.r_squared - ten.fit.r_squared).abs() < 1e-12);
    }

    #[test]
    fn equal_par_weights_match_unweighted() {
        let h = hierarchy(&[3.0, 30.0, 300.0, 3000.0]);
        let mut recs = Vec::new();
        for (from, to, n) in [("1", "4", 12), ("2", "4", 8), ("4", "1", 3)] {
            for _ in 0..n {
                recs.push(mover(&h, from, to, 30));
            }
        }
        // Top regions up to equal PAR so stratum weights are uniform.
        let mut all = recs.clone();
        for region in ["1", "2", "3", "4"] {
            let already: usize = all
                .iter()
                .filter(|r| {
                    r.major_now == h.lookup(Scale::Major, region)
                })
                .count();
            for _ in already..60 {
                all.push(stayer(&h, region, 30));
            }
        }
        let t = nmr_by_region(&all, &h, Scale::Major, None).unwrap();
        for row in &t.rows {
            assert_eq!(row.par, 60.0);
        }
        let weighted = density_slope(&t, std::f64::consts::E, FitWeighting::StratumPar).unwrap();
        let equal = density_slope(&t, std::f64::consts::E, FitWeighting::Equal).unwrap();
        assert!((weighted.fit.slope - equal.fit.slope).abs() < 1e-9);
        assert!((weighted.fit.intercept - equal.fit.intercept).abs() < 1e-9);
    }

    #[test]
    fn identical_densities_rejected() {
        let h = hierarchy(&[10.0, 10.0]);
        let mut recs = Vec::new();
        for region in ["1", "2"] {
            for _ in 0..10 {
                recs.push(stayer(&h, region, 30));
            }
        }
        recs.push(mover(&h, "1", "2", 30));
        let t = nmr_by_region(&recs, &h, Scale::Major, None).unwrap();
        assert_eq!(
            density_slope(&t, std::f64::consts::E, FitWeighting::StratumPar).unwrap_err(),
            RedistributionError::NoDensityVariation
        );
    }

    #[test]
    fn education_stratification_sums_bounded() {
        let h = hierarchy(&[10.0, 100.0]);
        let mut recs = Vec::new();
        for (edu, n) in [
            (Education::LtPrimary, 4),
            (Education::Primary, 6),
            (Education::Unknown, 5),
        ] {
            for _ in 0..n {
                let mut r = mover(&h, "1", "2", 30);
                r.education = edu;
                recs.push(r);
            }
        }
        for region in ["1", "2"] {
            for _ in 0..30 {
                recs.push(stayer(&h, region, 30));
            }
        }
        let total = nmr_by_region(&recs, &h, Scale::Major, None).unwrap();
        let mut strata_inflow = 0.0;
        for edu in Education::KNOWN {
            if let Ok(t) = nmr_by_region(&recs, &h, Scale::Major, Some(edu)) {
                strata_inflow += t.rows.iter().map(|r| r.inflow).sum::<f64>();
            }
        }
        let total_inflow: f64 = total.rows.iter().map(|r| r.inflow).sum();
        assert!(strata_inflow <= total_inflow);
        assert_eq!(total_inflow, 15.0);
        assert_eq!(strata_inflow, 10.0);
    }
}
