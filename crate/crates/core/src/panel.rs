//! Panel container, CSV ingestion and the state transforms W0(X), W1(X).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub path_id: i64,
    pub t: i64,
    pub y: u8,
    pub x: Vec<f64>,
}

/// How a path ends. A terminal path stops for good after its last row, so
/// forward sums past the end are zero rather than missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalPolicy {
    None,
    All,
    AllButLast,
}

impl TerminalPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "all" => Ok(Self::All),
            "all_but_last" => Ok(Self::AllButLast),
            other => Err(Error::Config(format!("panel.terminal must be none, all or all_but_last, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathInfo {
    pub id: i64,
    pub start: usize,
    pub len: usize,
    pub terminal: bool,
}

/// Observations sorted by (path_id, t) with contiguous periods per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSample {
    obs: Vec<Observation>,
    k: usize,
    paths: Vec<PathInfo>,
}

impl PanelSample {
    pub fn new(mut obs: Vec<Observation>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Empty);
        }
        let k = obs[0].x.len();
        for (i, o) in obs.iter().enumerate() {
            if o.x.len() != k {
                return Err(Error::Validation(format!("observation {i} has {} states, expected {k}", o.x.len())));
            }
            if o.y > 1 {
                return Err(Error::Validation(format!("observation {i} has y={}", o.y)));
            }
            if o.t < 0 {
                return Err(Error::Validation(format!("observation {i} has negative t={}", o.t)));
            }
            if let Some(j) = o.x.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("observation {i} has non-finite x{}", j + 1)));
            }
        }
        obs.sort_by_key(|o| (o.path_id, o.t));
        let mut paths: Vec<PathInfo> = Vec::new();
        for (i, o) in obs.iter().enumerate() {
            match paths.last_mut() {
                Some(p) if p.id == o.path_id => {
                    let prev = &obs[i - 1];
                    if o.t == prev.t {
                        return Err(Error::Integrity(format!("duplicate (path_id, t) = ({}, {})", o.path_id, o.t)));
                    }
                    if o.t != prev.t + 1 {
                        return Err(Error::Integrity(format!(
                            "path {} jumps from t={} to t={}",
                            o.path_id, prev.t, o.t
                        )));
                    }
                    p.len += 1;
                }
                _ => paths.push(PathInfo { id: o.path_id, start: i, len: 1, terminal: false }),
            }
        }
        Ok(Self { obs, k, paths })
    }

    pub fn with_terminal(mut self, policy: TerminalPolicy) -> Self {
        self.set_terminal(policy);
        self
    }

    pub fn set_terminal(&mut self, policy: TerminalPolicy) {
        let n = self.paths.len();
        for (i, p) in self.paths.iter_mut().enumerate() {
            p.terminal = match policy {
                TerminalPolicy::None => false,
                TerminalPolicy::All => true,
                TerminalPolicy::AllButLast => i + 1 < n,
            };
        }
    }

    pub fn set_path_terminal(&mut self, flags: &[bool]) {
        assert_eq!(flags.len(), self.paths.len());
        for (p, f) in self.paths.iter_mut().zip(flags) {
            p.terminal = *f;
        }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn paths(&self) -> &[PathInfo] {
        &self.paths
    }

    pub fn y(&self) -> Vec<u8> {
        self.obs.iter().map(|o| o.y).collect()
    }

    pub fn x_matrix(&self) -> RowMatrix {
        let mut m = RowMatrix::zeros(self.obs.len(), self.k);
        for (i, o) in self.obs.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&o.x);
        }
        m
    }

    /// Path index for every observation.
    pub fn path_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.obs.len()];
        for (pi, p) in self.paths.iter().enumerate() {
            for slot in &mut out[p.start..p.start + p.len] {
                *slot = pi;
            }
        }
        out
    }

    /// Both choices must appear before anything can be conditioned on Y.
    pub fn require_both_choices(&self) -> Result<()> {
        let ones = self.obs.iter().filter(|o| o.y == 1).count();
        if ones == 0 || ones == self.obs.len() {
            return Err(Error::Validation(format!(
                "sample needs both choices; found {ones} of {} with y=1",
                self.obs.len()
            )));
        }
        Ok(())
    }

    /// Build a sample from whole paths, relabelling them 0..n in the given
    /// order. Used by the path bootstrap.
    pub fn from_paths(&self, picks: &[usize]) -> Result<Self> {
        let mut obs = Vec::new();
        let mut flags = Vec::with_capacity(picks.len());
        for (new_id, &pi) in picks.iter().enumerate() {
            let p = &self.paths[pi];
            for o in &self.obs[p.start..p.start + p.len] {
                obs.push(Observation { path_id: new_id as i64, ..o.clone() });
            }
            flags.push(p.terminal);
        }
        let mut s = Self::new(obs)?;
        s.set_path_terminal(&flags);
        Ok(s)
    }
}

/// Column names for `load_panel`. The default is `path_id,t,y,x1..xk` with k
/// taken from the header.
#[derive(Debug, Clone, Default)]
pub struct PanelSchema {
    pub path_id: Option<String>,
    pub t: Option<String>,
    pub y: Option<String>,
    pub x: Option<Vec<String>>,
}

fn find(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column `{name}`") })
}

pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<PanelSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Empty);
    }
    let ip = find(&headers, schema.path_id.as_deref().unwrap_or("path_id"))?;
    let it = find(&headers, schema.t.as_deref().unwrap_or("t"))?;
    let iy = find(&headers, schema.y.as_deref().unwrap_or("y"))?;
    let ix: Vec<usize> = match &schema.x {
        Some(names) => names.iter().map(|n| find(&headers, n)).collect::<Result<_>>()?,
        None => {
            let mut cols = Vec::new();
            for j in 1.. {
                match headers.iter().position(|h| h.trim() == format!("x{j}")) {
                    Some(c) => cols.push(c),
                    None => break,
                }
            }
            if cols.is_empty() {
                return Err(Error::Parse { line: 1, msg: "no state columns x1..xk".into() });
            }
            cols
        }
    };
    let mut obs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let int = |c: usize, what: &str| -> Result<i64> {
            field(c).parse::<i64>().map_err(|_| Error::Parse { line, msg: format!("{what} `{}` is not an integer", field(c)) })
        };
        let path_id = int(ip, "path_id")?;
        let t = int(it, "t")?;
        if t < 0 {
            return Err(Error::Parse { line, msg: format!("t={t} is negative") });
        }
        let y = match field(iy) {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Parse { line, msg: format!("y must be 0 or 1, got `{other}`") }),
        };
        let mut x = Vec::with_capacity(ix.len());
        for (j, &c) in ix.iter().enumerate() {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("x{} `{}` is not a number", j + 1, field(c)) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("x{} is not finite", j + 1) });
            }
            x.push(v);
        }
        obs.push(Observation { path_id, t, y, x });
    }
    PanelSample::new(obs)
}

pub fn write_panel(path: &Path, sample: &PanelSample) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["path_id".to_string(), "t".into(), "y".into()];
    header.extend((1..=sample.k()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for o in sample.observations() {
        let mut rec = vec![o.path_id.to_string(), o.t.to_string(), o.y.to_string()];
        rec.extend(o.x.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripRecord {
    pub shift_id: i64,
    pub revenue: f64,
    pub minutes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shift {
    pub id: i64,
    pub trips: Vec<(f64, f64)>,
}

pub fn load_trips(path: &Path) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let is = find(&headers, "shift_id")?;
    let ir = find(&headers, "trip_revenue")?;
    let im = find(&headers, "trip_minutes")?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let get = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let shift_id = get(is)
            .parse::<i64>()
            .map_err(|_| Error::Parse { line, msg: format!("shift_id `{}` is not an integer", get(is)) })?;
        let num = |c: usize, what: &str| -> Result<f64> {
            let v: f64 = get(c).parse().map_err(|_| Error::Parse { line, msg: format!("{what} `{}` is not a number", get(c)) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("{what} is not finite") });
            }
            Ok(v)
        };
        out.push(TripRecord { shift_id, revenue: num(ir, "trip_revenue")?, minutes: num(im, "trip_minutes")? });
    }
    if out.is_empty() {
        return Err(Error::Empty);
    }
    Ok(out)
}

pub fn write_trips(path: &Path, trips: &[TripRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["shift_id", "trip_revenue", "trip_minutes"])?;
    for t in trips {
        w.write_record([t.shift_id.to_string(), t.revenue.to_string(), t.minutes.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Group trip rows by shift, keeping trip order and first-appearance order of shifts.
pub fn group_trips(trips: &[TripRecord]) -> Vec<Shift> {
    let mut order: Vec<i64> = Vec::new();
    let mut map: HashMap<i64, Vec<(f64, f64)>> = HashMap::new();
    for t in trips {
        map.entry(t.shift_id)
            .or_insert_with(|| {
                order.push(t.shift_id);
                Vec::new()
            })
            .push((t.revenue, t.minutes));
    }
    order.into_iter().map(|id| Shift { id, trips: map.remove(&id).unwrap_or_default() }).collect()
}

/// One observation per trip with x = (cumulative revenue, cumulative time in
/// `time_unit` minutes); the last trip of each shift is the quit (y=1).
/// Every path is terminal.
pub fn build_taxi_states(shifts: &[Shift], time_unit: f64) -> Result<PanelSample> {
    if !(time_unit.is_finite() && time_unit > 0.0) {
        return Err(Error::Config(format!("taxi.time_unit must be positive, got {time_unit}")));
    }
    let mut obs = Vec::new();
    let mut seen = BTreeMap::new();
    for s in shifts {
        if s.trips.is_empty() {
            warn!("shift {} has no trips; skipped", s.id);
            continue;
        }
        if seen.insert(s.id, ()).is_some() {
            return Err(Error::Integrity(format!("shift {} appears twice", s.id)));
        }
        let (mut rev, mut min) = (0.0, 0.0);
        let n = s.trips.len();
        for (t, &(r, m)) in s.trips.iter().enumerate() {
            if r < 0.0 || m < 0.0 {
                return Err(Error::Validation(format!(
                    "shift {} trip {t}: revenue {r} and minutes {m} must be nonnegative",
                    s.id
                )));
            }
            rev += r;
            min += m;
            obs.push(Observation { path_id: s.id, t: t as i64, y: u8::from(t + 1 == n), x: vec![rev, min / time_unit] });
        }
    }
    Ok(PanelSample::new(obs)?.with_terminal(TerminalPolicy::All))
}

pub type Transform = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Per-period utility: u(X, 1) = W1(X)ᵀθ1 + ε1, u(X, 0) = W0(X)ᵀθ0 + ε0.
#[derive(Clone)]
pub struct UtilitySpec {
    pub name: String,
    pub k: usize,
    pub k0: usize,
    pub k1: usize,
    pub beta: f64,
    w0: Transform,
    w1: Transform,
    pub param_names: Vec<String>,
}

impl fmt::Debug for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UtilitySpec")
            .field("name", &self.name)
            .field("k", &self.k)
            .field("k0", &self.k0)
            .field("k1", &self.k1)
            .field("beta", &self.beta)
            .finish()
    }
}

impl UtilitySpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        k: usize,
        k0: usize,
        k1: usize,
        beta: f64,
        w0: Transform,
        w1: Transform,
        param_names: Vec<String>,
    ) -> Result<Self> {
        // β = 0 is allowed so the myopic limit can be checked directly
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Config(format!("beta must lie in [0,1), got {beta}")));
        }
        if k0 + k1 == 0 {
            return Err(Error::Config("utility spec has no index components".into()));
        }
        if param_names.len() != k0 + k1 {
            return Err(Error::Config("one parameter name per index component".into()));
        }
        Ok(Self { name: name.into(), k, k0, k1, beta, w0, w1, param_names })
    }

    /// W0 = () with the constant absorbed, W1 = (x1, x2).
    pub fn monte_carlo(beta: f64) -> Result<Self> {
        Self::new(
            "mc",
            2,
            0,
            2,
            beta,
            Arc::new(|_| Vec::new()),
            Arc::new(|x| vec![x[0], x[1]]),
            vec!["theta1".into(), "theta2".into()],
        )
    }

    /// W1 = (1, x1, x2): the constant-regressor check.
    pub fn monte_carlo_with_constant(beta: f64) -> Result<Self> {
        Self::new(
            "mc_const",
            2,
            0,
            3,
            beta,
            Arc::new(|_| Vec::new()),
            Arc::new(|x| vec![1.0, x[0], x[1]]),
            vec!["const".into(), "theta1".into(), "theta2".into()],
        )
    }

    /// W1 = (s), W0 = (h, h²) on x = (s, h).
    pub fn taxi(beta: f64) -> Result<Self> {
        Self::new(
            "taxi",
            2,
            2,
            1,
            beta,
            Arc::new(|x| vec![x[1], x[1] * x[1]]),
            Arc::new(|x| vec![x[0]]),
            vec!["theta_c01".into(), "theta_c02".into(), "theta_u".into()],
        )
    }

    pub fn preset(name: &str, beta: f64) -> Result<Self> {
        match name {
            "mc" => Self::monte_carlo(beta),
            "mc_const" => Self::monte_carlo_with_constant(beta),
            "taxi" => Self::taxi(beta),
            other => Err(Error::Config(format!("unknown spec `{other}` (mc, mc_const, taxi)"))),
        }
    }

    pub fn k_theta(&self) -> usize {
        self.k0 + self.k1
    }

    pub fn w0(&self, x: &[f64]) -> Vec<f64> {
        (self.w0)(x)
    }

    pub fn w1(&self, x: &[f64]) -> Vec<f64> {
        (self.w1)(x)
    }

    /// Stacked (W0(x), W1(x)).
    pub fn stacked(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.w0(x);
        v.extend(self.w1(x));
        v
    }
}

/// Stacked (W0, W1) per observation, T × k_θ.
pub fn apply_transforms(sample: &PanelSample, spec: &UtilitySpec) -> Result<RowMatrix> {
    if sample.k() != spec.k {
        return Err(Error::Contract(format!("spec `{}` expects {} states, sample has {}", spec.name, spec.k, sample.k())));
    }
    let kt = spec.k_theta();
    let mut out = RowMatrix::zeros(sample.len(), kt);
    for (i, o) in sample.observations().iter().enumerate() {
        let w0 = spec.w0(&o.x);
        let w1 = spec.w1(&o.x);
        if w0.len() != spec.k0 || w1.len() != spec.k1 {
            return Err(Error::Contract(format!("transform output dimension changed at observation {i}")));
        }
        let row = out.row_mut(i);
        row[..spec.k0].copy_from_slice(&w0);
        row[spec.k0..].copy_from_slice(&w1);
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "transform component {j} is not finite at observation {i} (path {}, t {})",
                o.path_id, o.t
            )));
        }
    }
    Ok(out)
}
