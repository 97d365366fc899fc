//! File formats: TOML configuration, long-format cohort CSV, pseudo-outcome
//! and curve CSV, JSON hazard models and a binary value-table format.
//!
//! Every parser has an in-memory entry point (`parse_*`) and a file wrapper.
//! Parse errors carry the file name and line.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::HazardModel;
use crate::pseudo::{PseudoOutcome, Variant};
use crate::sim::{observe, FullTrajectory, Jump, ObservedSubject, State};
use crate::smooth::SmootherFit;
use crate::truth::{TableGrid, ValueTables};

fn memory() -> PathBuf {
    PathBuf::from("<memory>")
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| with_path(path, e))
}

/// TOML document into `T`, with the line of the first error.
pub fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| {
            text[..s.start.min(text.len())].matches('\n').count() + 1
        });
        parse_err(path, line, e.message().to_string())
    })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_toml(&read_text(path)?, path)
}

pub fn read_scenario(path: &Path) -> Result<crate::sim::ScenarioConfig> {
    let cfg: crate::sim::ScenarioConfig = read_toml(path)?;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------- cohorts

/// Event labels of the long cohort format.
fn event_label(from: State, to: State) -> String {
    format!("{}->{}", from.number(), to.number())
}

#[derive(Debug, Serialize, Deserialize)]
struct CohortRow {
    id: usize,
    w: f64,
    time: f64,
    event: String,
}

fn path_rows(id: usize, w: f64, jumps: &[Jump]) -> Vec<CohortRow> {
    jumps
        .windows(2)
        .map(|p| CohortRow {
            id,
            w,
            time: p[1].time,
            event: event_label(p[0].state, p[1].state),
        })
        .collect()
}

/// Observed data: one row per observed jump, then `censored` at `c` or
/// `end` at the horizon.
pub fn write_observed_cohort(
    out: impl Write,
    subjects: &[ObservedSubject],
    eta: f64,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for s in subjects {
        for row in path_rows(s.id, s.w, &s.jumps) {
            wtr.serialize(row)?;
        }
        let (time, event) = if s.censored {
            (s.c, "censored")
        } else {
            (eta, "end")
        };
        wtr.serialize(CohortRow {
            id: s.id,
            w: s.w,
            time,
            event: event.into(),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Full data: every jump on `[0, eta]`, a `censored` row at `C` when
/// `C < eta`, and a closing `end` row.
pub fn write_full_cohort(out: impl Write, cohort: &[FullTrajectory], eta: f64) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for f in cohort {
        let mut rows = path_rows(f.id, f.w, &f.jumps);
        if f.censor_time < eta {
            let pos = rows.partition_point(|r| r.time <= f.censor_time);
            rows.insert(
                pos,
                CohortRow {
                    id: f.id,
                    w: f.w,
                    time: f.censor_time,
                    event: "censored".into(),
                },
            );
        }
        rows.push(CohortRow {
            id: f.id,
            w: f.w,
            time: eta,
            event: "end".into(),
        });
        for r in rows {
            wtr.serialize(r)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Default)]
struct SubjectRows {
    w: f64,
    jumps: Vec<Jump>,
    censor: Option<f64>,
    end: Option<f64>,
    first_line: usize,
}

fn parse_cohort_rows(text: &str, path: &Path) -> Result<Vec<(usize, SubjectRows)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "w", "time", "event"] {
        return Err(parse_err(path, 1, "expected header id,w,time,event"));
    }
    let mut order = Vec::new();
    let mut by_id: HashMap<usize, SubjectRows> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: CohortRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        if !row.w.is_finite() || !row.time.is_finite() || row.time < 0.0 {
            return Err(parse_err(
                path,
                line,
                "w and time must be finite, time >= 0",
            ));
        }
        let entry = by_id.entry(row.id).or_insert_with(|| {
            order.push(row.id);
            SubjectRows {
                w: row.w,
                jumps: vec![Jump {
                    time: 0.0,
                    state: State::Healthy,
                }],
                first_line: line,
                ..SubjectRows::default()
            }
        });
        if entry.w != row.w {
            return Err(parse_err(
                path,
                line,
                format!("covariate changes within subject {}", row.id),
            ));
        }
        if entry.end.is_some() {
            return Err(parse_err(
                path,
                line,
                format!("row after the end of subject {}", row.id),
            ));
        }
        match row.event.as_str() {
            "censored" => {
                if entry.censor.replace(row.time).is_some() {
                    return Err(parse_err(path, line, "subject censored twice"));
                }
            }
            "end" => entry.end = Some(row.time),
            label => {
                let parsed = label.split_once("->").and_then(|(a, b)| {
                    let a = State::from_number(a.parse().ok()?)?;
                    let b = State::from_number(b.parse().ok()?)?;
                    Some((a, b))
                });
                let Some((from, to)) = parsed else {
                    return Err(parse_err(path, line, format!("unknown event {label:?}")));
                };
                let last = *entry.jumps.last().expect("initial state");
                if last.state != from || !from.can_jump_to(to) || !(row.time > last.time) {
                    return Err(parse_err(
                        path,
                        line,
                        format!(
                            "transition {label} at {} does not continue the path",
                            row.time
                        ),
                    ));
                }
                entry.jumps.push(Jump {
                    time: row.time,
                    state: to,
                });
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let rows = by_id.remove(&id).expect("recorded id");
            (id, rows)
        })
        .collect())
}

/// Full trajectories from a full-data cohort file.
pub fn parse_full_cohort(text: &str, eta: f64, path: &Path) -> Result<Vec<FullTrajectory>> {
    parse_cohort_rows(text, path)?
        .into_iter()
        .map(|(id, r)| {
            if r.end != Some(eta) {
                return Err(parse_err(
                    path,
                    r.first_line,
                    format!("subject {id} has no end row at {eta}"),
                ));
            }
            let f = FullTrajectory {
                id,
                w: r.w,
                jumps: r.jumps,
                censor_time: r.censor.unwrap_or(f64::INFINITY),
            };
            f.validate(eta)
                .map_err(|e| parse_err(path, r.first_line, e.to_string()))?;
            Ok(f)
        })
        .collect()
}

/// Observed subjects from either an observed or a full-data cohort file;
/// full data is stopped at the censoring time.
pub fn parse_observed_cohort(text: &str, eta: f64, path: &Path) -> Result<Vec<ObservedSubject>> {
    parse_cohort_rows(text, path)?
        .into_iter()
        .map(|(id, r)| {
            let end = match (r.censor, r.end) {
                (Some(c), _) if c < eta && c > 0.0 => c,
                (Some(c), _) => {
                    return Err(parse_err(
                        path,
                        r.first_line,
                        format!("censoring time {c} outside (0, {eta})"),
                    ))
                }
                (None, Some(e)) if e == eta => f64::INFINITY,
                _ => {
                    return Err(parse_err(
                        path,
                        r.first_line,
                        format!("subject {id} needs a censored row or an end row at {eta}"),
                    ))
                }
            };
            let full = FullTrajectory {
                id,
                w: r.w,
                jumps: r.jumps,
                censor_time: end,
            };
            if full.jumps.last().is_some_and(|j| j.time > eta) {
                return Err(parse_err(path, r.first_line, "jump after the horizon"));
            }
            let obs = observe(&full, eta);
            obs.validate(eta)
                .map_err(|e| parse_err(path, r.first_line, e.to_string()))?;
            Ok(obs)
        })
        .collect()
}

pub fn read_observed_cohort(path: &Path, eta: f64) -> Result<Vec<ObservedSubject>> {
    parse_observed_cohort(&read_text(path)?, eta, path)
}

pub fn read_full_cohort(path: &Path, eta: f64) -> Result<Vec<FullTrajectory>> {
    parse_full_cohort(&read_text(path)?, eta, path)
}

// ------------------------------------------------------- pseudo-outcomes

pub fn write_pseudo(out: impl Write, rows: &[PseudoOutcome]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "id",
        "w",
        "variant",
        "value",
        "censoring_kind",
        "outcome_kind",
    ])?;
    for r in rows {
        wtr.write_record([
            r.id.to_string(),
            format!("{}", r.w),
            r.variant.label().to_string(),
            format!("{}", r.value),
            r.censoring_kind.clone(),
            r.outcome_kind.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn parse_pseudo(text: &str, path: &Path) -> Result<Vec<PseudoOutcome>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>()
        != [
            "id",
            "w",
            "variant",
            "value",
            "censoring_kind",
            "outcome_kind",
        ]
    {
        return Err(parse_err(
            path,
            1,
            "expected header id,w,variant,value,censoring_kind,outcome_kind",
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            parse_err(
                path,
                e.position().map_or(0, |p| p.line() as usize),
                e.to_string(),
            )
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = field(i).parse().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("{name} is not a number: {:?}", field(i)),
                )
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(path, line, format!("{name} must be finite")))
            }
        };
        let id = field(0)
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad id {:?}", field(0))))?;
        let variant: Variant = field(2)
            .parse()
            .map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        out.push(PseudoOutcome {
            id,
            w: num(1, "w")?,
            variant,
            value: num(3, "value")?,
            censoring_kind: field(4).to_string(),
            outcome_kind: field(5).to_string(),
        });
    }
    Ok(out)
}

pub fn read_pseudo(path: &Path) -> Result<Vec<PseudoOutcome>> {
    parse_pseudo(&read_text(path)?, path)
}

// ---------------------------------------------------------------- curves

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub w: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl CurveRow {
    pub fn new(w: f64, estimate: f64, se: f64, level: f64) -> Self {
        let z = crate::stats::normal_critical(level);
        CurveRow {
            w,
            estimate,
            se,
            ci_lo: estimate - z * se,
            ci_hi: estimate + z * se,
        }
    }

    pub fn from_fit(fit: &SmootherFit, level: f64) -> Self {
        CurveRow::new(fit.w0, fit.estimate, fit.se, level)
    }
}

pub fn write_curve(out: impl Write, rows: &[CurveRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

// ------------------------------------------------------------ JSON models

pub fn parse_hazard_model(text: &str, path: &Path) -> Result<HazardModel> {
    let m: HazardModel =
        serde_json::from_str(text).map_err(|e| parse_err(path, e.line(), e.to_string()))?;
    m.validate().map_err(|e| parse_err(path, 1, e))?;
    Ok(m)
}

pub fn read_hazard_model(path: &Path) -> Result<HazardModel> {
    parse_hazard_model(&read_text(path)?, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

// ---------------------------------------------------------- value tables

const TABLE_MAGIC: &[u8; 8] = b"DRCUTVT1";
const MAX_LABEL: usize = 1 << 12;

/// Little-endian layout: magic, label length (u32) and UTF-8 label, eta,
/// t_step, s_step (f64), node count (u64) and nodes, then four length-prefixed
/// f64 arrays: V1, dV1, V2, dV2.
pub fn encode_tables(t: &ValueTables) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TABLE_MAGIC);
    out.extend_from_slice(&(t.label.len() as u32).to_le_bytes());
    out.extend_from_slice(t.label.as_bytes());
    for x in [t.grid.eta, t.grid.t_step, t.grid.s_step] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let put = |out: &mut Vec<u8>, xs: &[f64]| {
        out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    put(&mut out, &t.grid.w_nodes);
    for part in t.parts() {
        put(&mut out, part);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn array(&mut self) -> std::result::Result<Vec<f64>, String> {
        let n = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        let remaining = (self.bytes.len() - self.pos) / 8;
        if n > remaining as u64 {
            return Err(format!("array length {n} exceeds the remaining data"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode_tables(bytes: &[u8], path: &Path) -> Result<ValueTables> {
    let err = |m: String| parse_err(path, 0, m);
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8).map_err(err)? != TABLE_MAGIC {
        return Err(parse_err(path, 0, "not a value-table file"));
    }
    let len = u32::from_le_bytes(c.take(4).map_err(err)?.try_into().expect("4 bytes")) as usize;
    if len > MAX_LABEL {
        return Err(parse_err(path, 0, "label too long"));
    }
    let label = std::str::from_utf8(c.take(len).map_err(err)?)
        .map_err(|e| parse_err(path, 0, e.to_string()))?
        .to_string();
    let eta = c.f64().map_err(err)?;
    let t_step = c.f64().map_err(err)?;
    let s_step = c.f64().map_err(err)?;
    let w_nodes = c.array().map_err(err)?;
    let grid = TableGrid {
        eta,
        t_step,
        s_step,
        w_nodes,
    };
    grid.validate()
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut parts = Vec::with_capacity(4);
    for _ in 0..4 {
        parts.push(c.array().map_err(err)?);
    }
    if c.pos != bytes.len() {
        return Err(parse_err(path, 0, "trailing bytes after value tables"));
    }
    let [v1, dv1, v2, dv2]: [Vec<f64>; 4] = parts.try_into().expect("four arrays");
    if v1
        .iter()
        .chain(&dv1)
        .chain(&v2)
        .chain(&dv2)
        .any(|x| !x.is_finite())
    {
        return Err(parse_err(path, 0, "non-finite table entry"));
    }
    ValueTables::from_parts(grid, label, v1, dv1, v2, dv2)
        .map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn write_tables(path: &Path, t: &ValueTables) -> Result<()> {
    fs::write(path, encode_tables(t))?;
    Ok(())
}

pub fn read_tables(path: &Path) -> Result<ValueTables> {
    let bytes = fs::read(path).map_err(|e| with_path(path, e))?;
    decode_tables(&bytes, path)
}

/// Long `table,t,s,w,value` rows on the jump grid for plotting; `s` is
/// empty for V1.
pub fn write_tables_csv(out: impl Write, t: &ValueTables) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["table", "t", "s", "w", "value"])?;
    let m = t.grid.n_coarse();
    let step = t.grid.eta / m as f64;
    for &w in &t.grid.w_nodes {
        let view = t.at_w(w)?;
        for k in 0..=m {
            let tt = k as f64 * step;
            wtr.write_record([
                "v1".into(),
                tt.to_string(),
                String::new(),
                w.to_string(),
                view.v1(tt)?.to_string(),
            ])?;
            for j in 0..=k {
                let s = j as f64 * step;
                wtr.write_record([
                    "v2".into(),
                    tt.to_string(),
                    s.to_string(),
                    w.to_string(),
                    view.v2(tt, s)?.to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// In-memory parse helpers with a placeholder file name.
pub mod mem {
    use super::*;

    pub fn observed_cohort(text: &str, eta: f64) -> Result<Vec<ObservedSubject>> {
        parse_observed_cohort(text, eta, &memory())
    }

    pub fn full_cohort(text: &str, eta: f64) -> Result<Vec<FullTrajectory>> {
        parse_full_cohort(text, eta, &memory())
    }

    pub fn pseudo(text: &str) -> Result<Vec<PseudoOutcome>> {
        parse_pseudo(text, &memory())
    }

    pub fn hazard_model(text: &str) -> Result<HazardModel> {
        parse_hazard_model(text, &memory())
    }

    pub fn tables(bytes: &[u8]) -> Result<ValueTables> {
        decode_tables(bytes, &memory())
    }

    pub fn toml<T: DeserializeOwned>(text: &str) -> Result<T> {
        parse_toml(text, &memory())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{observe_all, simulate_cohort, ScenarioConfig};
    use crate::truth::{solve_value_tables, TransitionHazards};

    #[test]
    fn cohort_round_trip() {
        let cfg = ScenarioConfig::default();
        let full = simulate_cohort(&cfg, 300).unwrap();
        let mut buf = Vec::new();
        write_full_cohort(&mut buf, &full, 5.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(mem::full_cohort(&text, 5.0).unwrap(), full);
        assert_eq!(
            mem::observed_cohort(&text, 5.0).unwrap(),
            observe_all(&full, 5.0)
        );
        let obs = observe_all(&full, 5.0);
        let mut buf = Vec::new();
        write_observed_cohort(&mut buf, &obs, 5.0).unwrap();
        assert_eq!(
            mem::observed_cohort(std::str::from_utf8(&buf).unwrap(), 5.0).unwrap(),
            obs
        );
    }

    #[test]
    fn cohort_errors_name_the_line() {
        let text = "id,w,time,event\n0,0.5,1.0,1->2\n0,0.5,0.5,2->3\n0,0.5,5,end\n";
        match mem::observed_cohort(text, 5.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "id,w,time,event\n0,0.5,1.0,1->9\n";
        assert!(matches!(
            mem::observed_cohort(text, 5.0),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "id,w,time,event\n0,0.5,1.0,1->2\n";
        assert!(mem::observed_cohort(text, 5.0).is_err());
    }

    #[test]
    fn pseudo_round_trip() {
        let rows = vec![PseudoOutcome {
            id: 3,
            w: -0.25,
            variant: Variant::Dr,
            value: 1.0 / 3.0,
            censoring_kind: "oracle".into(),
            outcome_kind: "hal-lite".into(),
        }];
        let mut buf = Vec::new();
        write_pseudo(&mut buf, &rows).unwrap();
        assert_eq!(
            mem::pseudo(std::str::from_utf8(&buf).unwrap()).unwrap(),
            rows
        );
        assert!(
            mem::pseudo("id,w,variant,value,censoring_kind,outcome_kind\n1,0,dr,NaN,a,b\n")
                .is_err()
        );
    }

    #[test]
    fn tables_round_trip() {
        let grid = TableGrid::uniform(5.0, 0.05, 0.25, -1.0, 1.0, 1.0);
        let t = solve_value_tables(
            &TransitionHazards::oracle(&ScenarioConfig::default()),
            &grid,
        )
        .unwrap();
        let bytes = encode_tables(&t);
        assert_eq!(mem::tables(&bytes).unwrap(), t);
        assert!(mem::tables(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(mem::tables(&bad).is_err());
    }

    #[test]
    fn toml_errors_have_lines() {
        let r: Result<ScenarioConfig> = mem::toml("eta = 5.0\nbogus = 1\n");
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })), "{r:?}");
    }
}
