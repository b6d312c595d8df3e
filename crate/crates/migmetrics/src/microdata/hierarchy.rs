//! Region hierarchy: minor regions nested in major regions, with
//! per-region area, population and derived density.
//!
//! Loaded from CSV with columns
//! `region_id,level,parent_id,area_km2,population` and optionally
//! `density` and `urban`. Region ids must be unique per level; ids may
//! repeat across levels.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Scale, UrbanStatus};

/// Index into the hierarchy's region arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub u32);

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("hierarchy i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("hierarchy line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("duplicate {level} region id '{id}'")]
    DuplicateRegion { level: Scale, id: String },
    #[error("minor region '{id}' has no parent major region")]
    MissingParent { id: String },
    #[error("minor region '{id}' references unknown major region '{parent}'")]
    UnknownParent { id: String, parent: String },
    #[error("region '{id}': supplied density {supplied} deviates from population/area {derived}")]
    DensityMismatch { id: String, supplied: f64, derived: f64 },
    #[error("hierarchy has no regions")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct RegionInfo {
    pub code: String,
    pub level: Scale,
    pub parent: Option<RegionId>,
    pub area_km2: Option<f64>,
    pub population: Option<f64>,
    supplied_density: Option<f64>,
    pub urban: Option<UrbanStatus>,
}

impl RegionInfo {
    /// Persons per square kilometre: supplied, or population/area.
    pub fn density(&self) -> Option<f64> {
        self.supplied_density.or(match (self.population, self.area_km2) {
            (Some(p), Some(a)) if a > 0.0 => Some(p / a),
            _ => None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RegionHierarchy {
    regions: Vec<RegionInfo>,
    minors: Vec<RegionId>,
    majors: Vec<RegionId>,
    minor_by_code: HashMap<String, RegionId>,
    major_by_code: HashMap<String, RegionId>,
    // Dense lookup tables for hierarchies with small numeric codes.
    minor_numeric: Vec<Option<RegionId>>,
    major_numeric: Vec<Option<RegionId>>,
}

const NUMERIC_LUT_MAX: u64 = 4_000_000;

impl RegionHierarchy {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, HierarchyError> {
        let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
        let mut header: Option<Vec<String>> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
            if header.is_none() {
                header = Some(fields);
            } else {
                rows.push((i + 1, fields));
            }
        }
        let header = header.ok_or(HierarchyError::Empty)?;
        let col = |name: &str| header.iter().position(|h| h == name);
        let id_col = col("region_id").ok_or_else(|| HierarchyError::Malformed {
            line: 1,
            msg: "missing region_id column".into(),
        })?;
        let level_col = col("level").ok_or_else(|| HierarchyError::Malformed {
            line: 1,
            msg: "missing level column".into(),
        })?;
        let parent_col = col("parent_id");
        let area_col = col("area_km2");
        let pop_col = col("population");
        let density_col = col("density");
        let urban_col = col("urban");

        let mut builder = HierarchyBuilder::default();
        let mut pending_parents: Vec<(RegionId, String, usize)> = Vec::new();
        for (line_no, fields) in &rows {
            let get = |c: Option<usize>| -> Option<&str> {
                c.and_then(|c| fields.get(c)).map(String::as_str).filter(|s| !s.is_empty())
            };
            let id = fields.get(id_col).cloned().filter(|s| !s.is_empty()).ok_or(
                HierarchyError::Malformed {
                    line: *line_no,
                    msg: "empty region_id".into(),
                },
            )?;
            let level = match get(Some(level_col)) {
                Some("minor") => Scale::Minor,
                Some("major") => Scale::Major,
                other => {
                    return Err(HierarchyError::Malformed {
                        line: *line_no,
                        msg: format!("level must be minor|major, got {other:?}"),
                    })
                }
            };
            let parse_f64 = |s: Option<&str>, what: &str| -> Result<Option<f64>, HierarchyError> {
                match s {
                    None => Ok(None),
                    Some(v) => v.parse::<f64>().map(Some).map_err(|_| HierarchyError::Malformed {
                        line: *line_no,
                        msg: format!("bad {what} '{v}'"),
                    }),
                }
            };
            let info = RegionInfo {
                code: id.clone(),
                level,
                parent: None,
                area_km2: parse_f64(get(area_col), "area_km2")?,
                population: parse_f64(get(pop_col), "population")?,
                supplied_density: parse_f64(get(density_col), "density")?,
                urban: match get(urban_col) {
                    Some("urban") => Some(UrbanStatus::Urban),
                    Some("rural") => Some(UrbanStatus::Rural),
                    _ => None,
                },
            };
            if let (Some(d), Some(p), Some(a)) = (info.supplied_density, info.population, info.area_km2) {
                if a > 0.0 {
                    let derived = p / a;
                    if (d - derived).abs() > 1e-9 * derived.abs().max(d.abs()) {
                        return Err(HierarchyError::DensityMismatch {
                            id,
                            supplied: d,
                            derived,
                        });
                    }
                }
            }
            let rid = builder.insert(info)?;
            if level == Scale::Minor {
                match get(parent_col) {
                    Some(parent) => pending_parents.push((rid, parent.to_string(), *line_no)),
                    None => return Err(HierarchyError::MissingParent { id }),
                }
            }
        }
        builder.resolve_parents(pending_parents)?;
        builder.finish()
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self, HierarchyError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn region(&self, id: RegionId) -> &RegionInfo {
        &self.regions[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Region ids at one level, in file order.
    pub fn at_level(&self, level: Scale) -> &[RegionId] {
        match level {
            Scale::Minor => &self.minors,
            Scale::Major => &self.majors,
        }
    }

    pub fn n_regions(&self, level: Scale) -> usize {
        self.at_level(level).len()
    }

    pub fn has_minor_level(&self) -> bool {
        !self.minors.is_empty()
    }

    /// Major parent of a minor region; identity for major regions.
    pub fn major_of(&self, id: RegionId) -> Option<RegionId> {
        let info = self.region(id);
        match info.level {
            Scale::Major => Some(id),
            Scale::Minor => info.parent,
        }
    }

    /// Resolve a code at a level. The fast path handles numeric codes
    /// through a dense table; anything else goes through the hash map.
    #[inline]
    pub fn lookup(&self, level: Scale, code: &str) -> Option<RegionId> {
        let (lut, map) = match level {
            Scale::Minor => (&self.minor_numeric, &self.minor_by_code),
            Scale::Major => (&self.major_numeric, &self.major_by_code),
        };
        if !lut.is_empty() {
            if let Some(n) = parse_small_u64(code.as_bytes()) {
                return lut.get(n as usize).copied().flatten();
            }
            return None;
        }
        map.get(code).copied()
    }
}

fn parse_small_u64(bytes: &[u8]) -> Option<u64> {
    if bytes.is_empty() || bytes.len() > 7 {
        return None;
    }
    let mut n: u64 = 0;
    for &b in bytes {
        if !b.is_ascii_digit() {
            return None;
        }
        n = n * 10 + (b - b'0') as u64;
    }
    Some(n)
}

#[derive(Default)]
struct HierarchyBuilder {
    regions: Vec<RegionInfo>,
    minor_by_code: HashMap<String, RegionId>,
    major_by_code: HashMap<String, RegionId>,
}

impl HierarchyBuilder {
    fn insert(&mut self, info: RegionInfo) -> Result<RegionId, HierarchyError> {
        let rid = RegionId(self.regions.len() as u32);
        let map = match info.level {
            Scale::Minor => &mut self.minor_by_code,
            Scale::Major => &mut self.major_by_code,
        };
        if map.insert(info.code.clone(), rid).is_some() {
            return Err(HierarchyError::DuplicateRegion {
                level: info.level,
                id: info.code,
            });
        }
        self.regions.push(info);
        Ok(rid)
    }

    fn resolve_parents(
        &mut self,
        pending: Vec<(RegionId, String, usize)>,
    ) -> Result<(), HierarchyError> {
        for (rid, parent_code, _line) in pending {
            let parent = self.major_by_code.get(&parent_code).copied().ok_or_else(|| {
                HierarchyError::UnknownParent {
                    id: self.regions[rid.0 as usize].code.clone(),
                    parent: parent_code.clone(),
                }
            })?;
            self.regions[rid.0 as usize].parent = Some(parent);
        }
        Ok(())
    }

    fn finish(self) -> Result<RegionHierarchy, HierarchyError> {
        if self.regions.is_empty() {
            return Err(HierarchyError::Empty);
        }
        let minors: Vec<RegionId> = self
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.level == Scale::Minor)
            .map(|(i, _)| RegionId(i as u32))
            .collect();
        let majors: Vec<RegionId> = self
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.level == Scale::Major)
            .map(|(i, _)| RegionId(i as u32))
            .collect();
        let build_lut = |map: &HashMap<String, RegionId>| -> Vec<Option<RegionId>> {
            let mut max = 0u64;
            for code in map.keys() {
                match parse_small_u64(code.as_bytes()) {
                    Some(n) if n <= NUMERIC_LUT_MAX => max = max.max(n),
                    _ => return Vec::new(),
                }
            }
            let mut lut = vec![None; (max + 1) as usize];
            for (code, &rid) in map {
                let n = parse_small_u64(code.as_bytes()).unwrap();
                lut[n as usize] = Some(rid);
            }
            lut
        };
        let minor_numeric = build_lut(&self.minor_by_code);
        let major_numeric = build_lut(&self.major_by_code);
        Ok(RegionHierarchy {
            regions: self.regions,
            minors,
            majors,
            minor_by_code: self.minor_by_code,
            major_by_code: self.major_by_code,
            minor_numeric,
            major_numeric,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const SAMPLE: &str = "\
region_id,level,parent_id,area_km2,population
100,major,,5000,200000
101,major,,12000,60000
1,minor,100,2000,150000
2,minor,100,3000,50000
3,minor,101,12000,60000
";

    #[test]
    fn loads_nested_hierarchy() {
        let h = RegionHierarchy::from_reader(Cursor::new(SAMPLE)).unwrap();
        assert_eq!(h.n_regions(Scale::Major), 2);
        assert_eq!(h.n_regions(Scale::Minor), 3);
        let minor = h.lookup(Scale::Minor, "2").unwrap();
        let major = h.lookup(Scale::Major, "100").unwrap();
        assert_eq!(h.major_of(minor), Some(major));
        assert!((h.region(minor).density().unwrap() - 50.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_id_per_level_rejected() {
        let bad = "region_id,level,parent_id,area_km2,population\n100,major,,1,1\n100,major,,2,2\n";
        assert!(matches!(
            RegionHierarchy::from_reader(Cursor::new(bad)),
            Err(HierarchyError::DuplicateRegion { .. })
        ));
    }

    #[test]
    fn same_id_across_levels_allowed() {
        let ok = "region_id,level,parent_id,area_km2,population\n1,major,,1,1\n1,minor,1,1,1\n";
        let h = RegionHierarchy::from_reader(Cursor::new(ok)).unwrap();
        assert_ne!(h.lookup(Scale::Minor, "1"), h.lookup(Scale::Major, "1"));
    }

    #[test]
    fn orphan_minor_rejected() {
        let bad = "region_id,level,parent_id,area_km2,population\n1,minor,9,1,1\n";
        assert!(matches!(
            RegionHierarchy::from_reader(Cursor::new(bad)),
            Err(HierarchyError::UnknownParent { .. })
        ));
    }

    #[test]
    fn density_consistency_enforced() {
        let bad = "region_id,level,parent_id,area_km2,population,density\n100,major,,100,1000,25\n";
        assert!(matches!(
            RegionHierarchy::from_reader(Cursor::new(bad)),
            Err(HierarchyError::DensityMismatch { .. })
        ));
        let ok = "region_id,level,parent_id,area_km2,population,density\n100,major,,100,1000,10\n";
        assert!(RegionHierarchy::from_reader(Cursor::new(ok)).is_ok());
    }
}
