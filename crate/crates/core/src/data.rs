//! Trial records, the principal-strata lattice and CSV ingestion.
//!
//! Censoring follows the convention `delta = 1{T >= C}`: a unit with
//! `censored == true` contributes a survival term to the likelihood, and a
//! unit with `censored == false` contributes a density term. CSV files must
//! say which convention their status column uses (see [`StatusRole`]).

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal stratum `(D(0), D(1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    NeverTaker,
    Complier,
    AlwaysTaker,
    Defier,
}

impl Stratum {
    pub const ALL: [Stratum; 4] = [
        Stratum::NeverTaker,
        Stratum::Complier,
        Stratum::AlwaysTaker,
        Stratum::Defier,
    ];

    /// `(D(0), D(1))`.
    pub fn code(self) -> (u8, u8) {
        match self {
            Stratum::NeverTaker => (0, 0),
            Stratum::Complier => (0, 1),
            Stratum::AlwaysTaker => (1, 1),
            Stratum::Defier => (1, 0),
        }
    }

    /// Treatment received under assignment `z`.
    pub fn d_at(self, z: u8) -> u8 {
        let (d0, d1) = self.code();
        if z == 0 {
            d0
        } else {
            d1
        }
    }

    /// Receipt does not depend on assignment, so the exclusion restriction applies.
    pub fn is_unaffected(self) -> bool {
        let (d0, d1) = self.code();
        d0 == d1
    }

    pub fn name(self) -> &'static str {
        match self {
            Stratum::NeverTaker => "never_taker",
            Stratum::Complier => "complier",
            Stratum::AlwaysTaker => "always_taker",
            Stratum::Defier => "defier",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Stratum::NeverTaker => "n",
            Stratum::Complier => "c",
            Stratum::AlwaysTaker => "a",
            Stratum::Defier => "d",
        }
    }

    pub fn parse(s: &str) -> Option<Stratum> {
        Stratum::ALL
            .into_iter()
            .find(|st| st.name() == s || st.short() == s)
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Strata present in an observed `(z, d)` cell when all four strata exist.
pub fn table_cell(z: u8, d: u8) -> [Stratum; 2] {
    match (z, d) {
        (0, 0) => [Stratum::NeverTaker, Stratum::Complier],
        (0, _) => [Stratum::AlwaysTaker, Stratum::Defier],
        (_, 0) => [Stratum::NeverTaker, Stratum::Defier],
        (_, _) => [Stratum::AlwaysTaker, Stratum::Complier],
    }
}

/// Members of `strata` (in their given order) compatible with cell `(z, d)`.
pub fn compatible_among(z: u8, d: u8, strata: &[Stratum]) -> Vec<Stratum> {
    strata.iter().copied().filter(|s| s.d_at(z) == d).collect()
}

/// Which strata exist and which structural assumptions are imposed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataConfig {
    active: Vec<Stratum>,
    reference: Stratum,
    exclusion_restriction: bool,
    monotonicity: bool,
}

impl StrataConfig {
    pub fn new(
        active: Vec<Stratum>,
        reference: Stratum,
        exclusion_restriction: bool,
        monotonicity: bool,
    ) -> Result<Self> {
        let unique: BTreeSet<_> = active.iter().collect();
        if unique.len() != active.len() {
            return Err(Error::Config("duplicate stratum in active set".into()));
        }
        if active.len() < 2 {
            return Err(Error::Config("at least two strata must be active".into()));
        }
        if monotonicity && active.contains(&Stratum::Defier) {
            return Err(Error::Config("monotonicity excludes the defier stratum".into()));
        }
        if !active.contains(&reference) {
            return Err(Error::Config(format!("reference stratum {reference} is not active")));
        }
        Ok(Self {
            active,
            reference,
            exclusion_restriction,
            monotonicity,
        })
    }

    /// Never-takers, compliers, always-takers (plus defiers without
    /// monotonicity), with never-takers as the reference.
    pub fn standard(monotonicity: bool, exclusion_restriction: bool) -> Self {
        let mut active = vec![Stratum::NeverTaker, Stratum::Complier, Stratum::AlwaysTaker];
        if !monotonicity {
            active.push(Stratum::Defier);
        }
        Self::new(active, Stratum::NeverTaker, exclusion_restriction, monotonicity)
            .expect("standard configuration is valid")
    }

    pub fn active(&self) -> &[Stratum] {
        &self.active
    }

    pub fn reference(&self) -> Stratum {
        self.reference
    }

    pub fn exclusion_restriction(&self) -> bool {
        self.exclusion_restriction
    }

    pub fn monotonicity(&self) -> bool {
        self.monotonicity
    }

    pub fn index_of(&self, s: Stratum) -> Option<usize> {
        self.active.iter().position(|&a| a == s)
    }

    /// `S(z, d)` intersected with the active strata, in configuration order.
    pub fn compatible_strata(&self, z: u8, d: u8) -> Result<Vec<Stratum>> {
        if z > 1 || d > 1 {
            return Err(Error::Domain(format!("z and d must be binary, got z={z} d={d}")));
        }
        let out = compatible_among(z, d, &self.active);
        if out.is_empty() {
            return Err(Error::EmptyCell { z, d });
        }
        Ok(out)
    }
}

/// One trial record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedUnit {
    pub id: String,
    pub x: Vec<f64>,
    pub z: u8,
    pub d: u8,
    pub y: f64,
    /// `delta = 1{T >= C}`; true means the failure time was not observed.
    pub censored: bool,
}

impl ObservedUnit {
    pub fn delta(&self) -> u8 {
        self.censored as u8
    }
}

/// Affine transform applied to one covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    units: Vec<ObservedUnit>,
    covariate_names: Vec<String>,
    /// `None` for columns left on their original scale.
    standardization: Vec<Option<Standardization>>,
}

impl Dataset {
    pub fn new(units: Vec<ObservedUnit>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        let names: BTreeSet<_> = covariate_names.iter().collect();
        if names.len() != p {
            return Err(Error::InvalidData("duplicate covariate name".into()));
        }
        for (i, u) in units.iter().enumerate() {
            if u.x.len() != p {
                return Err(Error::InvalidData(format!(
                    "unit {} has {} covariates, expected {p}",
                    i + 1,
                    u.x.len()
                )));
            }
            if u.z > 1 || u.d > 1 {
                return Err(Error::InvalidData(format!("unit {}: z and d must be 0 or 1", i + 1)));
            }
            if !(u.y > 0.0) || !u.y.is_finite() {
                return Err(Error::InvalidData(format!(
                    "unit {}: observed time must be positive and finite, got {}",
                    i + 1,
                    u.y
                )));
            }
            if u.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("unit {}: non-finite covariate", i + 1)));
            }
        }
        Ok(Self {
            units,
            covariate_names,
            standardization: vec![None; p],
        })
    }

    pub fn units(&self) -> &[ObservedUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn standardization(&self) -> &[Option<Standardization>] {
        &self.standardization
    }

    pub fn max_time(&self) -> f64 {
        self.units.iter().map(|u| u.y).fold(0.0, f64::max)
    }

    /// Center and scale every column with more than two distinct values.
    ///
    /// Two-valued columns are treated as binary and constant columns are left
    /// alone. Returns `self` with the transform recorded.
    pub fn standardized(mut self) -> Self {
        let n = self.units.len();
        for j in 0..self.covariate_names.len() {
            let distinct: BTreeSet<u64> = self.units.iter().map(|u| u.x[j].to_bits()).collect();
            if distinct.len() <= 2 || n < 2 {
                if distinct.len() == 1 {
                    log::warn!("covariate `{}` is constant", self.covariate_names[j]);
                }
                continue;
            }
            let mean = self.units.iter().map(|u| u.x[j]).sum::<f64>() / n as f64;
            let var = self
                .units
                .iter()
                .map(|u| (u.x[j] - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            let sd = var.sqrt();
            for u in &mut self.units {
                u.x[j] = (u.x[j] - mean) / sd;
            }
            self.standardization[j] = Some(Standardization { mean, sd });
        }
        self
    }

    pub fn arm_count(&self, z: u8) -> usize {
        self.units.iter().filter(|u| u.z == z).count()
    }

    /// Counts of units in each `(z, d)` cell, indexed `[z][d]`.
    pub fn cell_counts(&self) -> [[usize; 2]; 2] {
        let mut c = [[0; 2]; 2];
        for u in &self.units {
            c[u.z as usize][u.d as usize] += 1;
        }
        c
    }
}

/// How the status column encodes censoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StatusRole {
    /// 1 = failure observed.
    Event,
    /// 1 = censored (`delta = 1{T >= C}`).
    #[default]
    Censored,
}

/// Column-name mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Optional id column; row numbers are used when it is absent.
    pub id: Option<String>,
    pub z: String,
    pub d: String,
    pub y: String,
    pub status: String,
    pub status_role: StatusRole,
    pub covariates: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: Some("id".into()),
            z: "z".into(),
            d: "d".into(),
            y: "y".into(),
            status: "censored".into(),
            status_role: StatusRole::Censored,
            covariates: Vec::new(),
        }
    }
}

/// Read and validate a trial CSV. Lines starting with `#` are metadata.
pub fn load_csv(path: &Path, schema: &CsvSchema, standardize: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let iz = col(&schema.z)?;
    let id_ = col(&schema.d)?;
    let iy = col(&schema.y)?;
    let is = col(&schema.status)?;
    let iid = match &schema.id {
        Some(name) => headers.iter().position(|h| h == name),
        None => None,
    };
    let ix: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    let mut used: BTreeSet<usize> = [iz, id_, iy, is].into_iter().collect();
    used.extend(iid);
    used.extend(ix.iter().copied());
    for (i, h) in headers.iter().enumerate() {
        if !used.contains(&i) {
            log::warn!("{}: ignoring unused column `{h}`", path.display());
        }
    }

    let mut units = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Row {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let err = |message: String| Error::Row {
            path: path.to_path_buf(),
            row,
            message,
        };
        let field = |i: usize| record.get(i).unwrap_or("");
        let binary = |i: usize, what: &str| -> Result<u8> {
            match field(i) {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(err(format!("{what} must be 0 or 1, got `{other}`"))),
            }
        };
        let z = binary(iz, &schema.z)?;
        let d = binary(id_, &schema.d)?;
        let status = binary(is, &schema.status)?;
        let y: f64 = field(iy)
            .parse()
            .map_err(|_| err(format!("cannot parse time `{}`", field(iy))))?;
        if !y.is_finite() || y < 0.0 {
            return Err(err(format!("time must be a nonnegative finite number, got {y}")));
        }
        if y == 0.0 {
            return Err(err("time of exactly 0 is not supported".into()));
        }
        let x = ix
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, name)| {
                field(i)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("cannot parse covariate `{name}` = `{}`", field(i))))
            })
            .collect::<Result<Vec<_>>>()?;
        let censored = match schema.status_role {
            StatusRole::Censored => status == 1,
            StatusRole::Event => status == 0,
        };
        let id = iid.map(|i| field(i).to_string()).unwrap_or_else(|| row.to_string());
        units.push(ObservedUnit {
            id,
            x,
            z,
            d,
            y,
            censored,
        });
    }
    let data = Dataset::new(units, schema.covariates.clone())?;
    Ok(if standardize { data.standardized() } else { data })
}

/// Write the dataset in the layout read by [`load_csv`] with the default schema
/// (plus the given covariate names). `header` lines are emitted as `#` comments.
pub fn write_csv(data: &Dataset, path: &Path, header: &[String]) -> Result<()> {
    let mut out = Vec::new();
    for line in header {
        writeln!(out, "# {line}").expect("write to Vec");
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut head = vec!["id", "z", "d", "y", "censored"];
        head.extend(data.covariate_names.iter().map(String::as_str));
        w.write_record(&head)
            .map_err(|e| Error::Format(e.to_string()))?;
        for u in &data.units {
            let mut rec = vec![
                u.id.clone(),
                u.z.to_string(),
                u.d.to_string(),
                u.y.to_string(),
                u.delta().to_string(),
            ];
            rec.extend(u.x.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
    /// Offending `(z, d)` cell when the diagnostic concerns one.
    pub cell: Option<(u8, u8)>,
    pub count: usize,
}

/// Check a dataset against a strata configuration.
///
/// Contradictions (units in a cell with no compatible stratum) are errors;
/// empty arms and strata without any supporting cell are warnings.
pub fn validate_consistency(data: &Dataset, config: &StrataConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let counts = data.cell_counts();
    for z in 0..2u8 {
        for d in 0..2u8 {
            let n = counts[z as usize][d as usize];
            if n > 0 && compatible_among(z, d, config.active()).is_empty() {
                out.push(Diagnostic {
                    severity: Severity::Error,
                    message: format!(
                        "{n} unit(s) in cell (z={z}, d={d}) but none of the active strata can produce it"
                    ),
                    cell: Some((z, d)),
                    count: n,
                });
            }
        }
    }
    for z in 0..2u8 {
        if counts[z as usize][0] + counts[z as usize][1] == 0 {
            out.push(Diagnostic {
                severity: Severity::Warning,
                message: format!("arm empty: no units assigned to z={z}"),
                cell: None,
                count: 0,
            });
        }
    }
    if !data.is_empty() {
        for &s in config.active() {
            let supported = (0..2u8).any(|z| counts[z as usize][s.d_at(z) as usize] > 0);
            if !supported {
                out.push(Diagnostic {
                    severity: Severity::Warning,
                    message: format!("stratum {s} is not compatible with any observed unit"),
                    cell: None,
                    count: 0,
                });
            }
        }
    }
    out
}
