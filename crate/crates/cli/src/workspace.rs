//! Input tables and their validation.
//!
//! | file              | columns                                                        |
//! |-------------------|----------------------------------------------------------------|
//! | `occupations.csv` | `id,name,omega_cog,omega_man,omega_int,z_automation,z_ai`      |
//! | `shares.csv`      | `group,period,occ_id,share`                                    |
//! | `transitions.csv` | `period,origin_id,dest_id,prob`                                |
//! | `wages.csv`       | `period,occ_id,wage`                                           |
//! | `employment.csv`  | `period,occ_id,employment` (period `-1`: employment before the first transition) |
//!
//! Only `occupations.csv` is required. Occupations are ordered by id and
//! every other table is keyed by id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use dides_core::GroupPanel;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Rows whose sum is off by more than this are rejected.
pub const SIMPLEX_REJECT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupation {
    pub id: String,
    pub name: String,
    pub omega_cog: f64,
    pub omega_man: f64,
    pub omega_int: f64,
    pub z_automation: f64,
    pub z_ai: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ShareRow {
    group: String,
    period: i64,
    occ_id: String,
    share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TransitionRow {
    period: i64,
    origin_id: String,
    dest_id: String,
    prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WageRow {
    period: i64,
    occ_id: String,
    wage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmploymentRow {
    period: i64,
    occ_id: String,
    employment: f64,
}

/// Group shares by period, each `G × O` in occupation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareTable {
    pub groups: Vec<String>,
    pub periods: Vec<i64>,
    pub shares: Vec<DMatrix<f64>>,
}

impl ShareTable {
    pub fn panel(&self) -> Result<GroupPanel, CliError> {
        Ok(GroupPanel::new(
            self.groups.clone(),
            self.periods.iter().map(|p| p.to_string()).collect(),
            self.shares.clone(),
        )?)
    }

    pub fn period_index(&self, period: i64) -> Result<usize, CliError> {
        self.periods
            .iter()
            .position(|p| *p == period)
            .ok_or_else(|| CliError::Input(format!("shares.csv has no period {period}")))
    }

    pub fn group_index(&self, group: &str) -> Result<usize, CliError> {
        self.groups
            .iter()
            .position(|g| g == group)
            .ok_or_else(|| CliError::Input(format!("shares.csv has no group '{group}'")))
    }
}

/// Period-indexed vectors (wages or employment).
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodTable {
    pub periods: Vec<i64>,
    pub values: Vec<DVector<f64>>,
}

impl PeriodTable {
    pub fn get(&self, period: i64) -> Option<&DVector<f64>> {
        self.periods.iter().position(|p| *p == period).map(|i| &self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub periods: Vec<i64>,
    pub mu: Vec<DMatrix<f64>>,
}

/// A hashed input file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Workspace {
    pub occupations: Vec<Occupation>,
    pub shares: Option<ShareTable>,
    pub transitions: Option<TransitionTable>,
    pub wages: Option<PeriodTable>,
    pub employment: Option<PeriodTable>,
    /// Adjustments made while loading (e.g. renormalized rows).
    pub notes: Vec<String>,
    pub inputs: Vec<InputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Vec<(usize, T)>, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let hash = sha256_hex(&bytes);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<T>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| CliError::Input(format!("{}:{line}: {e}", path.display())))?;
        rows.push((line, row));
    }
    Ok((rows, hash))
}

fn check_finite(path: &Path, line: usize, column: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{}:{line}: column '{column}' is not a finite number", path.display())))
    }
}

/// Normalizes a probability row: rejects sums off by more than
/// [`SIMPLEX_REJECT`], rescales smaller deviations and records a note.
fn normalize_row(row: &mut [f64], what: &str, notes: &mut Vec<String>) -> Result<(), CliError> {
    if let Some(v) = row.iter().find(|v| **v < 0.0) {
        return Err(CliError::Input(format!("{what} contains a negative value {v}")));
    }
    let sum: f64 = row.iter().sum();
    let gap = (sum - 1.0).abs();
    if gap > SIMPLEX_REJECT {
        return Err(CliError::Input(format!("{what} sums to {sum}, not 1 (tolerance {SIMPLEX_REJECT:e})")));
    }
    if gap > 1e-12 {
        let note = format!("{what} summed to {sum}; renormalized");
        log::info!("{note}");
        notes.push(note);
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(())
}

impl Workspace {
    pub fn n_occupations(&self) -> usize {
        self.occupations.len()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.occupations.iter().map(|o| o.id.as_str()).collect()
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.occupations.iter().enumerate().map(|(i, o)| (o.id.as_str(), i)).collect()
    }

    /// `O × 3` skill intensities.
    pub fn omega(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_occupations(), 3, |o, s| {
            let occ = &self.occupations[o];
            [occ.omega_cog, occ.omega_man, occ.omega_int][s]
        })
    }

    pub fn exposure(&self, kind: crate::config::ExposureKind) -> DVector<f64> {
        DVector::from_iterator(
            self.n_occupations(),
            self.occupations.iter().map(|o| match kind {
                crate::config::ExposureKind::Ai => o.z_ai,
                crate::config::ExposureKind::Automation => o.z_automation,
            }),
        )
    }

    /// Loads every table present in `dir`; `occupations.csv` is required.
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let mut ws = Workspace::default();
        let occ_path = dir.join("occupations.csv");
        if !occ_path.exists() {
            return Err(CliError::Input(format!("{} not found", occ_path.display())));
        }
        ws.load_occupations(&occ_path)?;
        let optional = |name: &str| -> Option<PathBuf> {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        if let Some(p) = optional("shares.csv") {
            ws.load_shares(&p)?;
        }
        if let Some(p) = optional("transitions.csv") {
            ws.load_transitions(&p)?;
        }
        if let Some(p) = optional("wages.csv") {
            ws.wages = Some(ws.load_period_table::<WageRow>(&p, "wage", |r| (r.period, r.occ_id.clone(), r.wage))?);
        }
        if let Some(p) = optional("employment.csv") {
            ws.employment = Some(ws.load_period_table::<EmploymentRow>(&p, "employment", |r| {
                (r.period, r.occ_id.clone(), r.employment)
            })?);
        }
        Ok(ws)
    }

    fn record(&mut self, path: &Path, hash: String) {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.push(InputFile { path: name, sha256: hash });
    }

    fn load_occupations(&mut self, path: &Path) -> Result<(), CliError> {
        let (rows, hash) = read_rows::<Occupation>(path)?;
        let mut seen = BTreeSet::new();
        let mut occs = Vec::with_capacity(rows.len());
        for (line, mut occ) in rows {
            if occ.id.is_empty() {
                return Err(CliError::Input(format!("{}:{line}: empty occupation id", path.display())));
            }
            if !seen.insert(occ.id.clone()) {
                return Err(CliError::Input(format!("{}:{line}: duplicate occupation id '{}'", path.display(), occ.id)));
            }
            for (col, v) in [
                ("omega_cog", occ.omega_cog),
                ("omega_man", occ.omega_man),
                ("omega_int", occ.omega_int),
                ("z_automation", occ.z_automation),
                ("z_ai", occ.z_ai),
            ] {
                check_finite(path, line, col, v)?;
            }
            let mut omega = [occ.omega_cog, occ.omega_man, occ.omega_int];
            normalize_row(
                &mut omega,
                &format!("{}:{line}: skill intensities of '{}'", path.display(), occ.id),
                &mut self.notes,
            )?;
            [occ.omega_cog, occ.omega_man, occ.omega_int] = omega;
            occs.push(occ);
        }
        if occs.is_empty() {
            return Err(CliError::Input(format!("{} has no occupations", path.display())));
        }
        occs.sort_by(|a, b| a.id.cmp(&b.id));
        self.occupations = occs;
        self.record(path, hash);
        Ok(())
    }

    fn lookup(&self, index: &HashMap<&str, usize>, path: &Path, line: usize, id: &str) -> Result<usize, CliError> {
        index
            .get(id)
            .copied()
            .ok_or_else(|| CliError::Input(format!("{}:{line}: unknown occupation id '{id}'", path.display())))
    }

    fn load_shares(&mut self, path: &Path) -> Result<(), CliError> {
        let (rows, hash) = read_rows::<ShareRow>(path)?;
        let index = self.index();
        let n = self.n_occupations();
        let mut cells: BTreeMap<(i64, String), Vec<Option<f64>>> = BTreeMap::new();
        let mut group_order: Vec<String> = Vec::new();
        for (line, r) in &rows {
            check_finite(path, *line, "share", r.share)?;
            let o = self.lookup(&index, path, *line, &r.occ_id)?;
            if !group_order.contains(&r.group) {
                group_order.push(r.group.clone());
            }
            let slot = cells.entry((r.period, r.group.clone())).or_insert_with(|| vec![None; n]);
            if slot[o].replace(r.share).is_some() {
                return Err(CliError::Input(format!(
                    "{}:{line}: duplicate share for group '{}', period {}, occupation '{}'",
                    path.display(),
                    r.group,
                    r.period,
                    r.occ_id
                )));
            }
        }
        group_order.sort();
        let periods: Vec<i64> = cells.keys().map(|(p, _)| *p).collect::<BTreeSet<_>>().into_iter().collect();
        let mut shares = Vec::with_capacity(periods.len());
        let ids = self.ids().iter().map(|s| s.to_string()).collect::<Vec<_>>();
        for p in &periods {
            let mut m = DMatrix::zeros(group_order.len(), n);
            for (g, group) in group_order.iter().enumerate() {
                let slot = cells.get(&(*p, group.clone())).ok_or_else(|| {
                    CliError::Input(format!("{}: group '{group}' has no shares in period {p}", path.display()))
                })?;
                let mut row = Vec::with_capacity(n);
                for (o, v) in slot.iter().enumerate() {
                    row.push(v.ok_or_else(|| {
                        CliError::Input(format!(
                            "{}: group '{group}', period {p} is missing occupation '{}'",
                            path.display(),
                            ids[o]
                        ))
                    })?);
                }
                normalize_row(&mut row, &format!("shares of group '{group}' in period {p}"), &mut self.notes)?;
                for o in 0..n {
                    m[(g, o)] = row[o];
                }
            }
            shares.push(m);
        }
        self.shares = Some(ShareTable { groups: group_order, periods, shares });
        self.record(path, hash);
        Ok(())
    }

    fn load_transitions(&mut self, path: &Path) -> Result<(), CliError> {
        let (rows, hash) = read_rows::<TransitionRow>(path)?;
        let index = self.index();
        let n = self.n_occupations();
        let mut by_period: BTreeMap<i64, Vec<Vec<Option<f64>>>> = BTreeMap::new();
        for (line, r) in &rows {
            check_finite(path, *line, "prob", r.prob)?;
            let o = self.lookup(&index, path, *line, &r.origin_id)?;
            let d = self.lookup(&index, path, *line, &r.dest_id)?;
            let m = by_period.entry(r.period).or_insert_with(|| vec![vec![None; n]; n]);
            if m[o][d].replace(r.prob).is_some() {
                return Err(CliError::Input(format!("{}:{line}: duplicate transition", path.display())));
            }
        }
        let ids: Vec<String> = self.ids().iter().map(|s| s.to_string()).collect();
        let mut periods = Vec::new();
        let mut mus = Vec::new();
        for (p, m) in by_period {
            let mut mu = DMatrix::zeros(n, n);
            for o in 0..n {
                let mut row = Vec::with_capacity(n);
                for d in 0..n {
                    row.push(m[o][d].ok_or_else(|| {
                        CliError::Input(format!(
                            "{}: period {p} is missing the transition '{}' -> '{}'",
                            path.display(),
                            ids[o],
                            ids[d]
                        ))
                    })?);
                }
                normalize_row(&mut row, &format!("transitions out of '{}' in period {p}", ids[o]), &mut self.notes)?;
                for d in 0..n {
                    mu[(o, d)] = row[d];
                }
            }
            periods.push(p);
            mus.push(mu);
        }
        self.transitions = Some(TransitionTable { periods, mu: mus });
        self.record(path, hash);
        Ok(())
    }

    fn load_period_table<T: for<'de> Deserialize<'de>>(
        &mut self,
        path: &Path,
        column: &str,
        split: impl Fn(&T) -> (i64, String, f64),
    ) -> Result<PeriodTable, CliError> {
        let (rows, hash) = read_rows::<T>(path)?;
        let index = self.index();
        let n = self.n_occupations();
        let mut by_period: BTreeMap<i64, Vec<Option<f64>>> = BTreeMap::new();
        for (line, r) in &rows {
            let (p, id, v) = split(r);
            check_finite(path, *line, column, v)?;
            if v <= 0.0 {
                return Err(CliError::Input(format!("{}:{line}: {column} must be positive", path.display())));
            }
            let o = self.lookup(&index, path, *line, &id)?;
            if by_period.entry(p).or_insert_with(|| vec![None; n])[o].replace(v).is_some() {
                return Err(CliError::Input(format!("{}:{line}: duplicate {column} entry", path.display())));
            }
        }
        let ids: Vec<String> = self.ids().iter().map(|s| s.to_string()).collect();
        let mut periods = Vec::new();
        let mut values = Vec::new();
        for (p, v) in by_period {
            let mut out = DVector::zeros(n);
            for o in 0..n {
                out[o] = v[o].ok_or_else(|| {
                    CliError::Input(format!("{}: period {p} is missing occupation '{}'", path.display(), ids[o]))
                })?;
            }
            periods.push(p);
            values.push(out);
        }
        self.record(path, hash);
        Ok(PeriodTable { periods, values })
    }

    /// Writes every table present in canonical form.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut written = Vec::new();
        let occ_path = dir.join("occupations.csv");
        write_serialized(&occ_path, self.occupations.iter().cloned())?;
        written.push(occ_path);
        let ids = self.ids();
        if let Some(t) = &self.shares {
            let mut rows = Vec::new();
            for (pi, p) in t.periods.iter().enumerate() {
                for (g, group) in t.groups.iter().enumerate() {
                    for (o, id) in ids.iter().enumerate() {
                        rows.push(ShareRow {
                            group: group.clone(),
                            period: *p,
                            occ_id: id.to_string(),
                            share: t.shares[pi][(g, o)],
                        });
                    }
                }
            }
            let path = dir.join("shares.csv");
            write_serialized(&path, rows)?;
            written.push(path);
        }
        if let Some(t) = &self.transitions {
            let path = dir.join("transitions.csv");
            write_serialized(&path, transition_rows(&ids, &t.periods, &t.mu))?;
            written.push(path);
        }
        if let Some(t) = &self.wages {
            let path = dir.join("wages.csv");
            let rows = period_rows(&ids, t).map(|(period, occ_id, wage)| WageRow { period, occ_id, wage });
            write_serialized(&path, rows)?;
            written.push(path);
        }
        if let Some(t) = &self.employment {
            let path = dir.join("employment.csv");
            let rows = period_rows(&ids, t).map(|(period, occ_id, employment)| EmploymentRow { period, occ_id, employment });
            write_serialized(&path, rows)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn period_rows<'a>(ids: &'a [&str], t: &'a PeriodTable) -> impl Iterator<Item = (i64, String, f64)> + 'a {
    t.periods
        .iter()
        .enumerate()
        .flat_map(move |(i, p)| ids.iter().enumerate().map(move |(o, id)| (*p, id.to_string(), t.values[i][o])))
}

fn transition_rows(ids: &[&str], periods: &[i64], mu: &[DMatrix<f64>]) -> Vec<TransitionRow> {
    let mut rows = Vec::new();
    for (i, p) in periods.iter().enumerate() {
        for (o, origin) in ids.iter().enumerate() {
            for (d, dest) in ids.iter().enumerate() {
                rows.push(TransitionRow {
                    period: *p,
                    origin_id: origin.to_string(),
                    dest_id: dest.to_string(),
                    prob: mu[i][(o, d)],
                });
            }
        }
    }
    rows
}

fn write_serialized<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}
