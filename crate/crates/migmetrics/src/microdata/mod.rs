//! Schema-driven ingestion, validation and record-level classification
//! of census microdata.
//!
//! A [`PersonRecord`] is one weighted census respondent. Records are
//! normalised at ingest time: when a minor region is known its major
//! parent is filled in from the hierarchy, so classification functions
//! work off the record alone.

pub mod hierarchy;
pub mod ingest;
pub mod schema;

pub use hierarchy::{HierarchyError, RegionHierarchy, RegionId, RegionInfo};
pub use ingest::{
    collect_records, stream_pass, Accumulate, FieldPresence, IngestError, IngestReport,
    RecordStream,
};
pub use schema::{load_schema, Schema, SchemaError};

use serde::{Deserialize, Serialize};

/// Spatial scale at which migration is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Minor,
    Major,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Minor => "minor",
            Scale::Major => "major",
        }
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minor" => Ok(Scale::Minor),
            "major" => Ok(Scale::Major),
            other => Err(format!("unknown scale '{other}' (expected minor|major)")),
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Education {
    LtPrimary,
    Primary,
    Secondary,
    Tertiary,
    #[default]
    Unknown,
}

impl Education {
    pub const KNOWN: [Education; 4] = [
        Education::LtPrimary,
        Education::Primary,
        Education::Secondary,
        Education::Tertiary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Education::LtPrimary => "lt_primary",
            Education::Primary => "primary",
            Education::Secondary => "secondary",
            Education::Tertiary => "tertiary",
            Education::Unknown => "unknown",
        }
    }

    /// Completed at least secondary education.
    pub fn is_secondary_plus(self) -> bool {
        matches!(self, Education::Secondary | Education::Tertiary)
    }
}

impl std::fmt::Display for Education {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Education {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lt_primary" => Ok(Education::LtPrimary),
            "primary" => Ok(Education::Primary),
            "secondary" => Ok(Education::Secondary),
            "tertiary" => Ok(Education::Tertiary),
            "unknown" => Ok(Education::Unknown),
            other => Err(format!("unknown education level '{other}'")),
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
    #[default]
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for Sex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum UrbanStatus {
    Urban,
    Rural,
    #[default]
    Unknown,
}

impl UrbanStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            UrbanStatus::Urban => "urban",
            UrbanStatus::Rural => "rural",
            UrbanStatus::Unknown => "unknown",
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Employment,
    Education,
    Family,
    Marriage,
    Other,
    #[default]
    Unknown,
}

impl Reason {
    pub const KNOWN: [Reason; 5] = [
        Reason::Employment,
        Reason::Education,
        Reason::Family,
        Reason::Marriage,
        Reason::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Employment => "employment",
            Reason::Education => "education",
            Reason::Family => "family",
            Reason::Marriage => "marriage",
            Reason::Other => "other",
            Reason::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for Reason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Reason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "employment" => Ok(Reason::Employment),
            "education" => Ok(Reason::Education),
            "family" => Ok(Reason::Family),
            "marriage" => Ok(Reason::Marriage),
            "other" => Ok(Reason::Other),
            "unknown" => Ok(Reason::Unknown),
            other => Err(format!("unknown reason '{other}'")),
        }
    }
}

/// Exhaustive, mutually exclusive move classification of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveClass {
    Stayer,
    IntraMajorMove,
    InterMajorMove,
    Unclassifiable,
}

/// Migrant status at the major scale, split by current urban status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrantStatus {
    UrbanInMigrant,
    RuralInMigrant,
    UrbanStayer,
    RuralStayer,
    Unclassifiable,
}

impl MigrantStatus {
    pub const REPORTED: [MigrantStatus; 4] = [
        MigrantStatus::UrbanInMigrant,
        MigrantStatus::RuralInMigrant,
        MigrantStatus::UrbanStayer,
        MigrantStatus::RuralStayer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MigrantStatus::UrbanInMigrant => "urban_in_migrant",
            MigrantStatus::RuralInMigrant => "rural_in_migrant",
            MigrantStatus::UrbanStayer => "urban_stayer",
            MigrantStatus::RuralStayer => "rural_stayer",
            MigrantStatus::Unclassifiable => "unclassifiable",
        }
    }
}

impl std::fmt::Display for MigrantStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Direction of a move across the rural/urban divide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementFlow {
    RuralRural,
    RuralUrban,
    UrbanRural,
    UrbanUrban,
    Unknown,
}

impl SettlementFlow {
    pub const KNOWN: [SettlementFlow; 4] = [
        SettlementFlow::RuralRural,
        SettlementFlow::RuralUrban,
        SettlementFlow::UrbanRural,
        SettlementFlow::UrbanUrban,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SettlementFlow::RuralRural => "rr",
            SettlementFlow::RuralUrban => "ru",
            SettlementFlow::UrbanRural => "ur",
            SettlementFlow::UrbanUrban => "uu",
            SettlementFlow::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for SettlementFlow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SettlementFlow {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rr" => Ok(SettlementFlow::RuralRural),
            "ru" => Ok(SettlementFlow::RuralUrban),
            "ur" => Ok(SettlementFlow::UrbanRural),
            "uu" => Ok(SettlementFlow::UrbanUrban),
            other => Err(format!("unknown flow type '{other}' (expected rr|ru|ur|uu)")),
        }
    }
}

/// One weighted census respondent.
///
/// Region ids are indices into the [`RegionHierarchy`] the record was
/// ingested against. `major_*` fields are filled from the hierarchy
/// parent when only the minor region was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub weight: f64,
    pub age: u16,
    pub sex: Sex,
    pub education: Education,
    pub years_schooling: Option<f64>,
    pub minor_now: Option<RegionId>,
    pub major_now: Option<RegionId>,
    pub minor_prev: Option<RegionId>,
    pub major_prev: Option<RegionId>,
    pub urban_now: UrbanStatus,
    pub urban_prev: UrbanStatus,
    pub duration_years: Option<u8>,
    pub duration_top_coded: bool,
    pub reason: Option<Reason>,
}

impl PersonRecord {
    /// A stayer template for building corpora by hand in tests.
    pub fn stayer(age: u16, region_minor: RegionId, region_major: RegionId) -> Self {
        PersonRecord {
            weight: 1.0,
            age,
            sex: Sex::Unknown,
            education: Education::Unknown,
            years_schooling: None,
            minor_now: Some(region_minor),
            major_now: Some(region_major),
            minor_prev: Some(region_minor),
            major_prev: Some(region_major),
            urban_now: UrbanStatus::Unknown,
            urban_prev: UrbanStatus::Unknown,
            duration_years: None,
            duration_top_coded: false,
            reason: None,
        }
    }
}

/// Whether the record is a migrant at `scale`; `None` when prior
/// residence is not classifiable at that scale.
///
/// In a nested hierarchy a change of major region implies a change of
/// minor region, so a record with differing major regions is a minor
/// migrant even when its minor regions were not observed.
pub fn scale_status(rec: &PersonRecord, scale: Scale) -> Option<bool> {
    match scale {
        Scale::Major => match (rec.major_prev, rec.major_now) {
            (Some(p), Some(n)) => Some(p != n),
            _ => None,
        },
        Scale::Minor => match (rec.minor_prev, rec.minor_now) {
            (Some(p), Some(n)) => Some(p != n),
            _ => match (rec.major_prev, rec.major_now) {
                (Some(p), Some(n)) if p != n => Some(true),
                _ => None,
            },
        },
    }
}

/// Full move classification. In major-only corpora (minor regions not
/// collected), "stayer" means stayer at the major scale.
pub fn classify_move(rec: &PersonRecord) -> MoveClass {
    match (rec.major_prev, rec.major_now) {
        (Some(p), Some(n)) if p != n => MoveClass::InterMajorMove,
        (Some(_), Some(_)) => match (rec.minor_prev, rec.minor_now) {
            (Some(mp), Some(mn)) if mp != mn => MoveClass::IntraMajorMove,
            (Some(_), Some(_)) => MoveClass::Stayer,
            _ => MoveClass::Stayer,
        },
        _ => MoveClass::Unclassifiable,
    }
}

/// Cross of previous by current urban status. Only meaningful for
/// records that are migrants at the chosen scale.
pub fn classify_settlement_flow(rec: &PersonRecord) -> SettlementFlow {
    match (rec.urban_prev, rec.urban_now) {
        (UrbanStatus::Rural, UrbanStatus::Rural) => SettlementFlow::RuralRural,
        (UrbanStatus::Rural, UrbanStatus::Urban) => SettlementFlow::RuralUrban,
        (UrbanStatus::Urban, UrbanStatus::Rural) => SettlementFlow::UrbanRural,
        (UrbanStatus::Urban, UrbanStatus::Urban) => SettlementFlow::UrbanUrban,
        _ => SettlementFlow::Unknown,
    }
}

/// Major-scale migrant/stayer split by current urban status. Migrants
/// into urban areas count as urban in-migrants irrespective of origin.
pub fn classify_migrant_status(rec: &PersonRecord) -> MigrantStatus {
    match scale_status(rec, Scale::Major) {
        Some(true) => match rec.urban_now {
            UrbanStatus::Urban => MigrantStatus::UrbanInMigrant,
            UrbanStatus::Rural => MigrantStatus::RuralInMigrant,
            UrbanStatus::Unknown => MigrantStatus::Unclassifiable,
        },
        Some(false) => match rec.urban_now {
            UrbanStatus::Urban => MigrantStatus::UrbanStayer,
            UrbanStatus::Rural => MigrantStatus::RuralStayer,
            UrbanStatus::Unknown => MigrantStatus::Unclassifiable,
        },
        None => MigrantStatus::Unclassifiable,
    }
}
