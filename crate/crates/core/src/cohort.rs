//! Observed SMART data: subject records, validation, CSV I/O and the
//! counting-process views used by the estimators.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::regime::{History, SmartDesign, Treatment, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    /// Number of decision points reached.
    pub kappa: usize,
    /// Decision times, first entry 0, length `kappa`.
    pub decision_times: Vec<f64>,
    /// Treatments received, length `kappa`.
    pub treatments: Vec<Treatment>,
    pub covariates: BTreeMap<String, f64>,
    pub u: f64,
    pub delta: bool,
}

impl SubjectRecord {
    /// Time of decision `k` (1-based); infinite if never reached.
    pub fn decision_time(&self, k: usize) -> f64 {
        self.decision_times.get(k - 1).copied().unwrap_or(f64::INFINITY)
    }

    pub fn treatment(&self, k: usize) -> Treatment {
        self.treatments[k - 1]
    }

    /// History available at decision `k`.
    pub fn history(&self, k: usize) -> StageHistory<'_> {
        StageHistory {
            subject: self,
            stage: k,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StageHistory<'a> {
    pub subject: &'a SubjectRecord,
    pub stage: usize,
}

impl History for StageHistory<'_> {
    fn lookup(&self, var: &Var) -> Option<f64> {
        let s = self.subject;
        match var {
            Var::Treatment(j) => s.treatments.get(j - 1).map(|&a| a as f64),
            Var::DecisionTime(j) => s.decision_times.get(j - 1).copied(),
            Var::Kappa => Some(s.kappa as f64),
            Var::Covariate(name) => s.covariates.get(name).copied(),
        }
    }

    fn event_before_stage(&self, k: usize) -> bool {
        self.subject.kappa < k
    }
}

/// (dN_i(u), Y_i(u)) with dN = I(U = u, delta = 1) and Y = I(U >= u).
pub fn counting_views(subject: &SubjectRecord, u: f64) -> (f64, f64) {
    let dn = if subject.delta && subject.u == u { 1.0 } else { 0.0 };
    let y = if subject.u >= u { 1.0 } else { 0.0 };
    (dn, y)
}

/// Checks one subject against the design and returns the matched stratum
/// index at each reached stage.
pub fn validate_subject(design: &SmartDesign, s: &SubjectRecord) -> std::result::Result<Vec<usize>, String> {
    let k_max = design.stages();
    if s.kappa == 0 || s.kappa > k_max {
        return Err(format!("kappa = {} outside 1..={k_max}", s.kappa));
    }
    if s.decision_times.len() != s.kappa || s.treatments.len() != s.kappa {
        return Err(format!(
            "expected {} decision times and treatments for kappa = {}",
            s.kappa, s.kappa
        ));
    }
    if !(s.u.is_finite() && s.u > 0.0) {
        return Err(format!("u = {} violates u > 0", s.u));
    }
    if s.decision_times[0] != 0.0 {
        return Err("first decision time must be 0".into());
    }
    for k in 2..=s.kappa {
        let (prev, cur) = (s.decision_times[k - 2], s.decision_times[k - 1]);
        if !cur.is_finite() || cur <= prev {
            return Err(format!("t{k} = {cur} violates t{} < t{k}", k - 1));
        }
    }
    let last = s.decision_times[s.kappa - 1];
    if last > s.u {
        return Err(format!("t{} = {last} > u = {} violates t_kappa <= u", s.kappa, s.u));
    }
    for c in design.covariates() {
        match (s.covariates.get(&c.name), c.stage <= s.kappa) {
            (Some(v), true) if v.is_finite() => {}
            (Some(_), true) => return Err(format!("covariate {} is not finite", c.name)),
            (None, true) => return Err(format!("missing covariate {}", c.name)),
            (Some(_), false) => {
                return Err(format!(
                    "covariate {} belongs to stage {} but kappa = {}",
                    c.name, c.stage, s.kappa
                ))
            }
            (None, false) => {}
        }
    }
    if let Some(extra) = s.covariates.keys().find(|k| design.covariate_stage(k).is_none()) {
        return Err(format!("undeclared covariate {extra}"));
    }
    let mut strata = Vec::with_capacity(s.kappa);
    for k in 1..=s.kappa {
        let idx = design.unique_stratum(k, &s.history(k))?;
        let st = &design.strata(k)[idx];
        if !st.options.contains(&s.treatment(k)) {
            return Err(format!(
                "a{k} = {} is not feasible in stratum {}",
                s.treatment(k),
                st.name
            ));
        }
        strata.push(idx);
    }
    Ok(strata)
}

/// Immutable validated collection of subjects sharing one design.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    design: SmartDesign,
    subjects: Vec<SubjectRecord>,
    strata: Vec<Vec<usize>>,
}

impl Cohort {
    pub fn new(design: SmartDesign, subjects: Vec<SubjectRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(subjects.len());
        let mut strata = Vec::with_capacity(subjects.len());
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            strata.push(validate_subject(&design, s).map_err(|message| Error::InvalidSubject {
                id: s.id.clone(),
                message,
            })?);
        }
        Ok(Cohort {
            design,
            subjects,
            strata,
        })
    }

    pub fn design(&self) -> &SmartDesign {
        &self.design
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Stratum index matched by subject `i` at stage `k`, if reached.
    pub fn stratum(&self, i: usize, k: usize) -> Option<usize> {
        self.strata[i].get(k - 1).copied()
    }

    /// The cohort stacked `times` times, ids suffixed with the copy index.
    pub fn replicate(&self, times: usize) -> Result<Cohort> {
        let mut subjects = Vec::with_capacity(self.len() * times);
        for c in 0..times {
            for s in &self.subjects {
                let mut s = s.clone();
                s.id = format!("{}#{c}", s.id);
                subjects.push(s);
            }
        }
        Cohort::new(self.design.clone(), subjects)
    }
}

/// Distinct event times at or before `l`, ascending.
pub fn event_grid(cohort: &Cohort, l: f64) -> Result<Vec<f64>> {
    let mut times: Vec<f64> = cohort
        .subjects()
        .iter()
        .filter(|s| s.delta && s.u <= l)
        .map(|s| s.u)
        .collect();
    if times.is_empty() {
        return Err(Error::EmptyGrid(l));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    Ok(times)
}

/// Smallest observed time at which at most `ceil(fraction * n)` subjects
/// remain at risk.
pub fn truncation_time(cohort: &Cohort, fraction: f64) -> f64 {
    let n = cohort.len();
    if n == 0 {
        return 0.0;
    }
    let m = (fraction * n as f64).ceil().max(0.0) as usize;
    let mut times: Vec<f64> = cohort.subjects().iter().map(|s| s.u).collect();
    times.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        // times[i..] are exactly the subjects with U >= times[i]
        if n - i <= m {
            return times[i];
        }
        let t = times[i];
        while i < n && times[i] == t {
            i += 1;
        }
    }
    times[n - 1]
}

fn header(design: &SmartDesign) -> Vec<String> {
    let k_max = design.stages();
    let mut h: Vec<String> = ["subject_id", "kappa", "u", "delta"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=k_max).map(|k| format!("a{k}")));
    h.extend((2..=k_max).map(|k| format!("t{k}")));
    h.extend(design.covariates().iter().map(|c| c.name.clone()));
    h
}

pub fn write_cohort_to<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let design = cohort.design();
    let k_max = design.stages();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(design))?;
    for s in cohort.subjects() {
        let mut row = vec![
            s.id.clone(),
            s.kappa.to_string(),
            s.u.to_string(),
            (s.delta as u8).to_string(),
        ];
        row.extend((1..=k_max).map(|k| s.treatments.get(k - 1).map(|a| a.to_string()).unwrap_or_default()));
        row.extend((2..=k_max).map(|k| s.decision_times.get(k - 1).map(|t| t.to_string()).unwrap_or_default()));
        row.extend(
            design
                .covariates()
                .iter()
                .map(|c| s.covariates.get(&c.name).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_cohort_to(cohort, std::io::BufWriter::new(f))
}

pub fn read_cohort_from<R: Read>(reader: R, design: &SmartDesign) -> Result<Cohort> {
    let k_max = design.stages();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = header(design);
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut index = BTreeMap::new();
    for name in &expected {
        let i = col(name).ok_or_else(|| Error::MalformedRow {
            row: 1,
            message: format!("missing column {name}"),
        })?;
        index.insert(name.clone(), i);
    }
    if let Some(extra) = headers.iter().find(|h| !expected.iter().any(|e| e == h)) {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!("undeclared column {extra}"),
        });
    }

    let mut subjects = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::MalformedRow { row, message };
        let field = |name: &str| rec.get(index[name]).unwrap_or("");
        let num = |name: &str| -> Result<Option<f64>> {
            let f = field(name);
            if f.is_empty() {
                return Ok(None);
            }
            f.parse::<f64>()
                .map(Some)
                .map_err(|_| bad(format!("column {name}: cannot parse {f:?} as a number")))
        };
        let id = field("subject_id").to_string();
        if id.is_empty() {
            return Err(bad("empty subject_id".into()));
        }
        let kappa: usize = field("kappa")
            .parse()
            .map_err(|_| bad(format!("kappa: cannot parse {:?}", field("kappa"))))?;
        if kappa == 0 || kappa > k_max {
            return Err(bad(format!("kappa = {kappa} outside 1..={k_max}")));
        }
        let u = num("u")?.ok_or_else(|| bad("missing u".into()))?;
        let delta = match field("delta") {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("delta = {other:?} not in {{0,1}}"))),
        };
        let mut treatments = Vec::with_capacity(kappa);
        let mut decision_times = vec![0.0];
        for k in 1..=k_max {
            let a = field(&format!("a{k}"));
            let t = if k >= 2 { num(&format!("t{k}"))? } else { None };
            if k <= kappa {
                let code: Treatment = a
                    .parse()
                    .map_err(|_| bad(format!("a{k}: expected a treatment code, found {a:?}")))?;
                treatments.push(code);
                if k >= 2 {
                    decision_times.push(t.ok_or_else(|| bad(format!("missing t{k} with kappa = {kappa}")))?);
                }
            } else if !a.is_empty() || t.is_some() {
                return Err(bad(format!("stage {k} fields must be empty when kappa = {kappa}")));
            }
        }
        let mut covariates = BTreeMap::new();
        for c in design.covariates() {
            if let Some(v) = num(&c.name)? {
                covariates.insert(c.name.clone(), v);
            }
        }
        let s = SubjectRecord {
            id,
            kappa,
            decision_times,
            treatments,
            covariates,
            u,
            delta,
        };
        validate_subject(design, &s).map_err(bad)?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateId(s.id));
        }
        subjects.push(s);
    }
    Cohort::new(design.clone(), subjects)
}

pub fn load_cohort(path: &Path, design: &SmartDesign) -> Result<Cohort> {
    let f = std::fs::File::open(path)?;
    read_cohort_from(std::io::BufReader::new(f), design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::CovariateColumn;

    fn design() -> SmartDesign {
        SmartDesign::new(
            vec![vec![0, 1], vec![0, 1]],
            vec![
                CovariateColumn { name: "x1".into(), stage: 1 },
                CovariateColumn { name: "x2".into(), stage: 2 },
            ],
        )
        .unwrap()
    }

    const GOOD: &str = "subject_id,kappa,u,delta,a1,a2,t2,x1,x2\n\
                        s1,1,3.5,1,0,,,0.2,\n\
                        s2,2,7,0,1,1,2.5,-1,1\n\
                        s3,2,4,1,0,0,4,0.75,0\n";

    #[test]
    fn loads_three_rows() {
        let c = read_cohort_from(GOOD.as_bytes(), &design()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.subjects()[1].decision_times, vec![0.0, 2.5]);
        assert_eq!(c.subjects()[2].treatments, vec![0, 0]);
    }

    #[test]
    fn decision_after_u_rejected() {
        let bad = "subject_id,kappa,u,delta,a1,a2,t2,x1,x2\ns1,2,3,1,0,1,5,0.1,1\n";
        let e = read_cohort_from(bad.as_bytes(), &design()).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("row 2") && msg.contains("t_kappa <= u"), "{msg}");
    }

    #[test]
    fn duplicate_and_missing() {
        let dup = "subject_id,kappa,u,delta,a1,a2,t2,x1,x2\ns1,1,3,1,0,,,0.1,\ns1,1,4,1,0,,,0.1,\n";
        assert!(matches!(
            read_cohort_from(dup.as_bytes(), &design()),
            Err(Error::DuplicateId(_))
        ));
        let miss = "subject_id,kappa,u,delta,a1,a2,t2,x1,x2\ns1,2,3,1,0,1,1,0.1,\n";
        assert!(read_cohort_from(miss.as_bytes(), &design()).is_err());
        let stray = "subject_id,kappa,u,delta,a1,a2,t2,x1,x2\ns1,1,3,1,0,1,,0.1,\n";
        assert!(read_cohort_from(stray.as_bytes(), &design()).is_err());
        let infeasible = "subject_id,kappa,u,delta,a1,a2,t2,x1,x2\ns1,1,3,1,4,,,0.1,\n";
        assert!(read_cohort_from(infeasible.as_bytes(), &design()).is_err());
    }

    #[test]
    fn round_trip() {
        let c = read_cohort_from(GOOD.as_bytes(), &design()).unwrap();
        let mut buf = Vec::new();
        write_cohort_to(&c, &mut buf).unwrap();
        let back = read_cohort_from(buf.as_slice(), &design()).unwrap();
        assert_eq!(back, c);
    }

    fn simple(events: &[(f64, bool)]) -> Cohort {
        let d = SmartDesign::new(vec![vec![0, 1]], vec![]).unwrap();
        let subjects = events
            .iter()
            .enumerate()
            .map(|(i, &(u, delta))| SubjectRecord {
                id: format!("s{i}"),
                kappa: 1,
                decision_times: vec![0.0],
                treatments: vec![0],
                covariates: BTreeMap::new(),
                u,
                delta,
            })
            .collect();
        Cohort::new(d, subjects).unwrap()
    }

    #[test]
    fn grid_dedup_and_truncation() {
        let c = simple(&[(2.0, true), (2.0, true), (5.0, true), (9.0, true), (4.0, false)]);
        assert_eq!(event_grid(&c, 6.0).unwrap(), vec![2.0, 5.0]);
        let c = simple(&[(2.0, false), (3.0, false)]);
        assert!(matches!(event_grid(&c, 10.0), Err(Error::EmptyGrid(_))));
    }

    #[test]
    fn at_risk_truncation() {
        let events: Vec<(f64, bool)> = (1..=100).map(|i| (i as f64, true)).collect();
        let c = simple(&events);
        // ceil(0.02 * 100) = 2 subjects at risk at t = 99
        assert_eq!(truncation_time(&c, 0.02), 99.0);
        let events: Vec<(f64, bool)> = (1..=101).map(|i| (i as f64, true)).collect();
        // ceil(2.02) = 3
        assert_eq!(truncation_time(&simple(&events), 0.02), 99.0);
    }

    #[test]
    fn counting_process_views() {
        let mk = |u, delta| SubjectRecord {
            id: "x".into(),
            kappa: 1,
            decision_times: vec![0.0],
            treatments: vec![0],
            covariates: BTreeMap::new(),
            u,
            delta,
        };
        assert_eq!(counting_views(&mk(5.0, true), 5.0), (1.0, 1.0));
        assert_eq!(counting_views(&mk(3.0, false), 5.0), (0.0, 0.0));
        assert_eq!(counting_views(&mk(9.0, true), 5.0), (0.0, 1.0));
    }
}
