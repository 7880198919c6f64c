use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{explicit_inexactness_margin, explicit_margins, ClassError, ClassSpec, ExplicitRecord};
use crate::methods::{
    check_cycle_prefix, simulate, ExplicitOracle, MethodError, MethodKind, MethodSpec, OracleFamily, Realm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CycleFound,
    NoCycleAtThisK,
    Inconclusive,
}

#[derive(Debug, Error, PartialEq)]
pub enum CertificateError {
    #[error("certificate is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error(transparent)]
    Class(#[from] ClassError),
}

/// Residuals recomputed from explicit coordinates. Violations are `>= 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CertificateResiduals {
    /// Largest interpolation violation per oracle family.
    pub interpolation: BTreeMap<OracleFamily, f64>,
    /// Largest violation of `|d - g| <= eps |g|`; zero for exact methods.
    pub inexactness: f64,
    /// Largest `|x_n - update(x_{n-l..n}, outputs)|` over stored updates.
    pub method: f64,
    /// Largest `|w - x - alpha u|` over resolvent calls.
    pub resolvent: f64,
    /// `sum_{t<l} |x_t - x_{t+K}|^2` on the stored points.
    pub score: f64,
    /// `|x_1 - x_0|^2` on the stored points.
    pub normalization: f64,
    /// `max_{t<l} |x_t - x_{t+K}|` after replaying the method against the
    /// certificate's oracle table.
    pub replay_gap: f64,
    /// Largest distance between a replayed state and the stored one.
    pub replay_drift: f64,
}

impl CertificateResiduals {
    pub fn max_interpolation(&self) -> f64 {
        self.interpolation.values().copied().fold(0.0, f64::max)
    }
}

/// An explicit trajectory claimed to cycle, with everything needed to check
/// it without the Gram lifting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleCertificate {
    pub method: MethodKind,
    pub classes: BTreeMap<OracleFamily, ClassSpec>,
    pub k: usize,
    pub order: usize,
    pub dimension: usize,
    /// `x_0 .. x_{K+l-1}`.
    pub points: Vec<Vec<f64>>,
    /// Oracle-stage outputs at `x_0 .. x_{K+l-2}`, in the method's slot order.
    pub oracle_values: Vec<Vec<Vec<f64>>>,
    /// Function values per family, in evaluation order.
    pub function_values: BTreeMap<OracleFamily, Vec<f64>>,
    pub score: f64,
    pub normalization: f64,
    pub residuals: CertificateResiduals,
    pub verdict: Verdict,
}

impl CycleCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn point(&self, t: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.points[t])
    }

    fn outputs(&self) -> Vec<Vec<DVector<f64>>> {
        self.oracle_values
            .iter()
            .map(|stage| stage.iter().map(|v| DVector::from_column_slice(v)).collect())
            .collect()
    }
}

/// Outcome of [`verify_certificate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub residuals: CertificateResiduals,
    /// One line per failed check; empty iff the certificate verifies.
    pub failures: Vec<String>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Replays the oracle stages against the stored outputs, recording what each
/// class sees and how well the stored values satisfy the stage relations.
struct CheckRealm<'a> {
    outputs: &'a [Vec<DVector<f64>>],
    values: &'a BTreeMap<OracleFamily, Vec<f64>>,
    state: usize,
    slot: usize,
    records: BTreeMap<OracleFamily, Vec<ExplicitRecord>>,
    directions: Vec<(DVector<f64>, DVector<f64>, DVector<f64>, f64)>,
    resolvent_residual: f64,
}

impl CheckRealm<'_> {
    fn take(&mut self) -> Result<DVector<f64>, CertificateError> {
        let v = self
            .outputs
            .get(self.state)
            .and_then(|s| s.get(self.slot))
            .cloned()
            .ok_or_else(|| CertificateError::Malformed(format!("missing output {} at state {}", self.slot, self.state)))?;
        self.slot += 1;
        Ok(v)
    }
}

impl Realm for CheckRealm<'_> {
    type Vector = DVector<f64>;
    type Error = CertificateError;

    fn begin_state(&mut self, t: usize) {
        self.state = t;
        self.slot = 0;
    }

    fn combine(&self, terms: &[(f64, &DVector<f64>)]) -> DVector<f64> {
        let mut out = DVector::zeros(terms[0].1.len());
        for (a, v) in terms {
            out.axpy(*a, v, 1.0);
        }
        out
    }

    fn gradient(&mut self, family: OracleFamily, x: &DVector<f64>) -> Result<DVector<f64>, CertificateError> {
        let g = self.take()?;
        let list = self.records.entry(family).or_default();
        let value = self
            .values
            .get(&family)
            .and_then(|v| v.get(list.len()))
            .copied()
            .ok_or_else(|| CertificateError::Malformed(format!("missing value {family}{}", list.len())))?;
        list.push(ExplicitRecord {
            point: x.clone(),
            oracle: g.clone(),
            value: Some(value),
        });
        Ok(g)
    }

    fn inexact_direction(
        &mut self,
        x: &DVector<f64>,
        g: &DVector<f64>,
        eps: f64,
    ) -> Result<DVector<f64>, CertificateError> {
        let d = self.take()?;
        self.directions.push((x.clone(), g.clone(), d.clone(), eps));
        Ok(d)
    }

    fn resolvent(
        &mut self,
        family: OracleFamily,
        alpha: f64,
        w: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), CertificateError> {
        let x = self.take()?;
        let u = self.take()?;
        let r = (w - &x - &u * alpha).norm();
        self.resolvent_residual = self.resolvent_residual.max(r);
        self.records.entry(family).or_default().push(ExplicitRecord {
            point: x.clone(),
            oracle: u.clone(),
            value: None,
        });
        Ok((x, u))
    }
}

/// Oracles answered from a finite table by nearest key: the query point for
/// gradients and directions, `w = x + alpha u` for resolvents.
pub struct TableOracle {
    gradients: BTreeMap<OracleFamily, Vec<(DVector<f64>, DVector<f64>, f64)>>,
    resolvents: BTreeMap<OracleFamily, Vec<(DVector<f64>, DVector<f64>)>>,
    directions: Vec<(DVector<f64>, DVector<f64>)>,
}

fn nearest<'a, T>(table: &'a [(DVector<f64>, T)], key: &DVector<f64>) -> Option<&'a T> {
    table
        .iter()
        .filter(|(k, _)| k.len() == key.len())
        .min_by(|a, b| (&a.0 - key).norm().total_cmp(&(&b.0 - key).norm()))
        .map(|(_, v)| v)
}

impl ExplicitOracle for TableOracle {
    fn gradient(&self, family: OracleFamily, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        self.gradients
            .get(&family)?
            .iter()
            .filter(|(k, ..)| k.len() == x.len())
            .min_by(|a, b| (&a.0 - x).norm().total_cmp(&(&b.0 - x).norm()))
            .map(|(_, g, v)| (g.clone(), *v))
    }

    fn direction(&self, x: &DVector<f64>, _g: &DVector<f64>, _eps: f64) -> Option<DVector<f64>> {
        nearest(&self.directions, x).cloned()
    }

    fn resolvent(&self, family: OracleFamily, _alpha: f64, w: &DVector<f64>) -> Option<DVector<f64>> {
        nearest(self.resolvents.get(&family)?, w).cloned()
    }
}

fn resolvent_alpha(kind: &MethodKind) -> f64 {
    match *kind {
        MethodKind::ThreeOperatorSplitting { alpha, .. } => alpha,
        _ => 1.0,
    }
}

/// What the oracle stages of a certificate record, replayed against its
/// stored outputs.
struct Stages {
    method: MethodSpec,
    points: Vec<DVector<f64>>,
    records: BTreeMap<OracleFamily, Vec<ExplicitRecord>>,
    directions: Vec<(DVector<f64>, DVector<f64>, DVector<f64>, f64)>,
    resolvent_residual: f64,
    method_residual: f64,
}

fn replay_stages(cert: &CycleCertificate) -> Result<Stages, CertificateError> {
    let method = MethodSpec::from_kind(cert.method)?;
    let order = method.order;
    if cert.order != order {
        return Err(CertificateError::Malformed(format!(
            "order {} does not match the method's {order}",
            cert.order
        )));
    }
    let n_states = cert.k + order;
    if cert.points.len() != n_states || cert.oracle_values.len() + 1 != n_states {
        return Err(CertificateError::Malformed(format!(
            "need {n_states} points and {} oracle stages",
            n_states - 1
        )));
    }
    if cert.points.iter().any(|p| p.len() != cert.dimension)
        || cert
            .oracle_values
            .iter()
            .flatten()
            .any(|v| v.len() != cert.dimension)
    {
        return Err(CertificateError::Malformed("inconsistent dimension".into()));
    }
    let points: Vec<DVector<f64>> = (0..n_states).map(|t| cert.point(t)).collect();
    let outputs = cert.outputs();
    let mut realm = CheckRealm {
        outputs: &outputs,
        values: &cert.function_values,
        state: 0,
        slot: 0,
        records: BTreeMap::new(),
        directions: Vec::new(),
        resolvent_residual: 0.0,
    };
    for t in 0..n_states - 1 {
        realm.begin_state(t);
        method.oracle(&mut realm, &points[t])?;
        if realm.slot != outputs[t].len() {
            return Err(CertificateError::Malformed(format!("state {t} has extra oracle outputs")));
        }
    }
    let mut method_residual: f64 = 0.0;
    for n in order..n_states {
        let next = method.update(&realm, &points[n - order..n], &outputs[n - order..n]);
        method_residual = method_residual.max((next - &points[n]).norm());
    }
    let CheckRealm {
        records,
        directions,
        resolvent_residual,
        ..
    } = realm;
    Ok(Stages {
        method,
        points,
        records,
        directions,
        resolvent_residual,
        method_residual,
    })
}

impl TableOracle {
    fn from_stages(stages: &Stages, kind: &MethodKind) -> Self {
        let alpha = resolvent_alpha(kind);
        let mut table = TableOracle {
            gradients: BTreeMap::new(),
            resolvents: BTreeMap::new(),
            directions: stages.directions.iter().map(|(x, _, d, _)| (x.clone(), d.clone())).collect(),
        };
        for (family, records) in &stages.records {
            for r in records {
                match r.value {
                    Some(v) => table
                        .gradients
                        .entry(*family)
                        .or_default()
                        .push((r.point.clone(), r.oracle.clone(), v)),
                    None => table
                        .resolvents
                        .entry(*family)
                        .or_default()
                        .push((&r.point + &r.oracle * alpha, r.point.clone())),
                }
            }
        }
        table
    }

    /// The oracle table recorded by `cert`.
    pub fn from_certificate(cert: &CycleCertificate) -> Result<Self, CertificateError> {
        Ok(Self::from_stages(&replay_stages(cert)?, &cert.method))
    }
}

/// Recomputes every residual of `cert` from its coordinates alone and checks
/// it against `tol` (interpolation, method relations, replay) and
/// `delta_cycle` (score). Does not read `cert.residuals` or `cert.verdict`.
pub fn verify_certificate(cert: &CycleCertificate, tol: f64, delta_cycle: f64) -> Result<Verification, CertificateError> {
    let stages = replay_stages(cert)?;
    let order = stages.method.order;
    let points = &stages.points;
    let mut res = CertificateResiduals {
        method: stages.method_residual,
        resolvent: stages.resolvent_residual,
        ..Default::default()
    };
    for (family, records) in &stages.records {
        let class = cert
            .classes
            .get(family)
            .ok_or_else(|| CertificateError::Malformed(format!("no class for family {family}")))?;
        let worst = explicit_margins(class, records)?
            .into_iter()
            .fold(0.0, |acc: f64, m| acc.max(-m));
        res.interpolation.insert(*family, worst);
    }
    res.inexactness = stages
        .directions
        .iter()
        .map(|(_, g, d, eps)| -explicit_inexactness_margin(g, d, *eps))
        .fold(0.0, f64::max);
    res.score = (0..order).map(|t| (&points[t] - &points[t + cert.k]).norm_squared()).sum();
    res.normalization = (&points[1] - &points[0]).norm_squared();

    let table = TableOracle::from_stages(&stages, &cert.method);
    let mut failures = Vec::new();
    match simulate(&stages.method, &table, &points[..order], cert.k) {
        Ok(replay) => {
            res.replay_gap = (0..order)
                .map(|t| (&replay.points[t] - &replay.points[t + cert.k]).norm())
                .fold(0.0, f64::max);
            res.replay_drift = replay
                .points
                .iter()
                .zip(points)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if !check_cycle_prefix(&replay, cert.k, order, tol)? {
                failures.push(format!("replay does not close: gap {:.3e}", res.replay_gap));
            }
        }
        Err(e) => failures.push(format!("replay failed: {e}")),
    }

    let mut check = |name: &str, value: f64, limit: f64| {
        if !(value <= limit) {
            failures.push(format!("{name} {value:.3e} exceeds {limit:.1e}"));
        }
    };
    check("score", res.score, delta_cycle);
    check("method residual", res.method, tol);
    check("resolvent residual", res.resolvent, tol);
    check("inexactness violation", res.inexactness, tol);
    for (family, v) in &res.interpolation {
        check(&format!("interpolation violation [{family}]"), *v, tol);
    }
    if !(res.normalization >= 1.0 - 1e-6) {
        failures.push(format!("normalization {:.6} below 1", res.normalization));
    }
    Ok(Verification { residuals: res, failures })
}
