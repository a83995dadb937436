//! Analytic memory usage of the table-space designs.
//!
//! Per tabled predicate `P` with `NC` completed calls, `NT` threads:
//!
//! ```text
//! CS : TE + ST + Σj (SF + AT_j)
//! NS : TE + BA + NT·(ST + Σj (SF + AT_j))
//! SS : TE + ST + Σj (BA + NT·(SF + AT_j))
//! FS : TE + ST + Σj (SE_FS + BA + NT·(SF_FS + BP) + AT_j)
//! PAS: TE + ST + Σj NT_j·(SF + AT_j)        NT_j ≤ NT frames kept for call j
//! PAC: as FS (the per-thread answer chains are gone once a call completes)
//! ```
//!
//! All arithmetic is exact integer arithmetic on bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pagealloc::HeapStats;
use crate::tablespace::{Census, Design, StructSizes, SIZES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamError {
    #[error("NT must be at least 1")]
    NoThreads,
    #[error("SE_FS + SF_FS must equal SF ({se_fs} + {sf_fs} != {sf})")]
    SplitFrame { se_fs: u64, sf_fs: u64, sf: u64 },
    #[error("NT(P.{call}) = {nt_j} exceeds NT = {nt}")]
    PasThreads { call: usize, nt_j: u64, nt: u64 },
    #[error("a theorem check needs at least one call")]
    NoCalls,
    #[error("arithmetic overflow")]
    Overflow,
}

/// Fixed structure sizes in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub te: u64,
    pub ba: u64,
    pub sf: u64,
    pub se_fs: u64,
    pub sf_fs: u64,
    pub bp: u64,
}

impl Sizes {
    /// Sizes of this implementation with `nt` threads (bucket arrays grow
    /// past eight threads).
    pub fn implementation(nt: u64) -> Self {
        from_struct_sizes(&SIZES, nt)
    }
}

fn from_struct_sizes(s: &StructSizes, nt: u64) -> Sizes {
    Sizes {
        te: s.te,
        ba: s.ba_for(nt),
        sf: s.sf,
        se_fs: s.se_fs,
        sf_fs: s.sf_fs,
        bp: s.bp,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallParams {
    /// Answer trie bytes of the call.
    pub at: u64,
    /// PAS: frames kept for the call.
    pub nt_pas: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredParams {
    /// Subgoal trie bytes.
    pub st: u64,
    pub calls: Vec<CallParams>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemParams {
    pub sizes: Sizes,
    pub nt: u64,
    pub preds: Vec<PredParams>,
}

impl MemParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.nt == 0 {
            return Err(ParamError::NoThreads);
        }
        let s = &self.sizes;
        if s.se_fs.checked_add(s.sf_fs) != Some(s.sf) {
            return Err(ParamError::SplitFrame {
                se_fs: s.se_fs,
                sf_fs: s.sf_fs,
                sf: s.sf,
            });
        }
        for p in &self.preds {
            for (j, c) in p.calls.iter().enumerate() {
                if c.nt_pas > self.nt {
                    return Err(ParamError::PasThreads {
                        call: j + 1,
                        nt_j: c.nt_pas,
                        nt: self.nt,
                    });
                }
            }
        }
        Ok(())
    }
}

struct Acc(Option<u64>);

impl Acc {
    fn add(self, x: Option<u64>) -> Acc {
        Acc(self.0.and_then(|a| x.and_then(|x| a.checked_add(x))))
    }
}

fn mul(a: u64, b: u64) -> Option<u64> {
    a.checked_mul(b)
}

fn sum_calls(calls: &[CallParams], f: impl Fn(&CallParams) -> Option<u64>) -> Option<u64> {
    calls
        .iter()
        .try_fold(0u64, |acc, c| f(c).and_then(|v| acc.checked_add(v)))
}

/// Memory usage of one predicate under `design`.
pub fn predict_pred(design: Design, s: &Sizes, nt: u64, p: &PredParams) -> Result<u64, ParamError> {
    let c = &p.calls;
    let base = Acc(Some(s.te)).add(Some(p.st));
    let r = match design {
        Design::Cs => base.add(sum_calls(c, |x| s.sf.checked_add(x.at))).0,
        Design::Ns => {
            let inner = sum_calls(c, |x| s.sf.checked_add(x.at)).and_then(|v| v.checked_add(p.st));
            Acc(Some(s.te))
                .add(Some(s.ba))
                .add(inner.and_then(|v| mul(nt, v)))
                .0
        }
        Design::Ss => base
            .add(sum_calls(c, |x| {
                s.sf.checked_add(x.at)
                    .and_then(|v| mul(nt, v))
                    .and_then(|v| v.checked_add(s.ba))
            }))
            .0,
        Design::Fs | Design::Pac => base
            .add(sum_calls(c, |x| {
                s.sf_fs
                    .checked_add(s.bp)
                    .and_then(|v| mul(nt, v))
                    .and_then(|v| v.checked_add(s.se_fs))
                    .and_then(|v| v.checked_add(s.ba))
                    .and_then(|v| v.checked_add(x.at))
            }))
            .0,
        Design::Pas => base
            .add(sum_calls(c, |x| s.sf.checked_add(x.at).and_then(|v| mul(x.nt_pas, v))))
            .0,
    };
    r.ok_or(ParamError::Overflow)
}

/// Total memory usage over all predicates.
pub fn predict(design: Design, params: &MemParams) -> Result<u64, ParamError> {
    params.validate()?;
    params.preds.iter().try_fold(0u64, |acc, p| {
        predict_pred(design, &params.sizes, params.nt, p)?
            .checked_add(acc)
            .ok_or(ParamError::Overflow)
    })
}

/// `MU_SS − MU_NS = (NC − 1)·BA − (NT − 1)·ST`.
pub fn ss_minus_ns(s: &Sizes, nt: u64, p: &PredParams) -> i128 {
    (p.calls.len() as i128 - 1) * s.ba as i128 - (nt as i128 - 1) * p.st as i128
}

/// `MU_FS − MU_SS = Σj [(NT − 1)·(SF_FS + BP − SF − AT_j) + BP]`, using
/// `SE_FS = SF − SF_FS`.
pub fn fs_minus_ss(s: &Sizes, nt: u64, p: &PredParams) -> i128 {
    let k = nt as i128 - 1;
    p.calls
        .iter()
        .map(|c| k * (s.sf_fs as i128 + s.bp as i128 - s.sf as i128 - c.at as i128) + s.bp as i128)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Theorem1 {
    pub mu_ss: u64,
    pub mu_ns: u64,
    /// `MU_SS ≤ MU_NS`.
    pub holds_lhs: bool,
    /// `(NC − 1)·BA ≤ (NT − 1)·ST`.
    pub condition: bool,
    /// The two agree.
    pub holds_iff: bool,
}

pub fn check_theorem1(s: &Sizes, nt: u64, p: &PredParams) -> Result<Theorem1, ParamError> {
    if nt == 0 {
        return Err(ParamError::NoThreads);
    }
    if p.calls.is_empty() {
        return Err(ParamError::NoCalls);
    }
    let mu_ss = predict_pred(Design::Ss, s, nt, p)?;
    let mu_ns = predict_pred(Design::Ns, s, nt, p)?;
    let holds_lhs = mu_ss <= mu_ns;
    let condition =
        (p.calls.len() as u128 - 1) * s.ba as u128 <= (nt as u128 - 1) * p.st as u128;
    Ok(Theorem1 {
        mu_ss,
        mu_ns,
        holds_lhs,
        condition,
        holds_iff: holds_lhs == condition,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Theorem2 {
    /// NT > 1 and MU_FS < MU_SS, or NT = 1 and MU_FS > MU_SS.
    Holds { mu_fs: u64, mu_ss: u64 },
    Fails { mu_fs: u64, mu_ss: u64 },
    PremiseViolated(String),
}

/// The comparison needs `SF_FS + BP < SF`, and for the strict bound to
/// survive small answer tries also `(NT − 1)·(SF_FS + BP − SF) + BP < 0`
/// when NT > 1; for NT = 1 it needs `BP > 0`.
pub fn theorem2_premise(s: &Sizes, nt: u64) -> Result<(), String> {
    if s.sf_fs + s.bp >= s.sf {
        return Err(format!(
            "SF_FS + BP = {} is not below SF = {}",
            s.sf_fs + s.bp,
            s.sf
        ));
    }
    if nt > 1 {
        let bound = (nt as i128 - 1) * (s.sf_fs as i128 + s.bp as i128 - s.sf as i128) + s.bp as i128;
        if bound >= 0 {
            return Err(format!(
                "(NT-1)(SF_FS+BP-SF)+BP = {bound} is not negative"
            ));
        }
    } else if s.bp == 0 {
        return Err("BP must be positive for NT = 1".into());
    }
    Ok(())
}

pub fn check_theorem2(s: &Sizes, nt: u64, p: &PredParams) -> Result<Theorem2, ParamError> {
    if nt == 0 {
        return Err(ParamError::NoThreads);
    }
    if p.calls.is_empty() {
        return Err(ParamError::NoCalls);
    }
    if let Err(m) = theorem2_premise(s, nt) {
        return Ok(Theorem2::PremiseViolated(m));
    }
    let mu_fs = predict_pred(Design::Fs, s, nt, p)?;
    let mu_ss = predict_pred(Design::Ss, s, nt, p)?;
    let ok = if nt > 1 { mu_fs < mu_ss } else { mu_fs > mu_ss };
    Ok(if ok {
        Theorem2::Holds { mu_fs, mu_ss }
    } else {
        Theorem2::Fails { mu_fs, mu_ss }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PredReport {
    pub pred: String,
    pub predicted: u64,
    pub calls: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MemReport {
    pub design: Design,
    pub nt: u64,
    pub params: MemParams,
    pub predicted: u64,
    /// Live bytes reported by the allocator.
    pub measured: u64,
    /// Bytes found by walking the tables.
    pub census_bytes: u64,
    pub delta: i128,
    pub per_pred: Vec<PredReport>,
    /// What every design would use for the same tables.
    pub predicted_by_design: BTreeMap<Design, u64>,
    /// Census/allocator disagreements and non-uniform instances.
    pub notes: Vec<String>,
}

/// Derives model parameters from a quiescent census (one representative
/// instance per structure) and compares the prediction with the allocator.
pub fn reconcile(census: &Census, heap: &HeapStats, nt: u64) -> Result<MemReport, ParamError> {
    let sizes = Sizes::implementation(nt);
    let mut notes = census.cross_check(heap);
    let mut preds = Vec::new();
    for p in &census.preds {
        let st = p.subgoal_tries.first().copied().unwrap_or(0);
        if p.subgoal_tries.iter().any(|&b| b != st) {
            notes.push(format!("{}: subgoal trie instances differ {:?}", p.pred, p.subgoal_tries));
        }
        let calls = p
            .subgoals
            .values()
            .map(|sc| {
                let at = sc.answer_tries.first().copied().unwrap_or(0);
                if sc.answer_tries.iter().any(|&b| b != at) {
                    notes.push(format!("{}: answer trie instances differ", p.pred));
                }
                CallParams {
                    at,
                    nt_pas: sc.frames,
                }
            })
            .collect();
        preds.push(PredParams { st, calls });
    }
    let params = MemParams {
        sizes,
        nt,
        preds,
    };
    let predicted = predict(census.design, &params)?;
    let per_pred = census
        .preds
        .iter()
        .zip(&params.preds)
        .map(|(c, p)| {
            Ok(PredReport {
                pred: c.pred.clone(),
                predicted: predict_pred(census.design, &sizes, nt, p)?,
                calls: p.calls.len(),
            })
        })
        .collect::<Result<Vec<_>, ParamError>>()?;
    let mut predicted_by_design = BTreeMap::new();
    for d in [Design::Cs, Design::Ns, Design::Ss, Design::Fs, Design::Pas, Design::Pac] {
        predicted_by_design.insert(d, predict(d, &params)?);
    }
    let measured = heap.live_bytes();
    Ok(MemReport {
        design: census.design,
        nt,
        params,
        predicted,
        measured,
        census_bytes: census.total_bytes(),
        delta: predicted as i128 - measured as i128,
        per_pred,
        predicted_by_design,
        notes,
    })
}

/// Grid of parameter values for a sweep.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SweepSpec {
    #[serde(default)]
    pub sizes: Option<Sizes>,
    pub nt: Vec<u64>,
    pub nc: Vec<u64>,
    pub st: Vec<u64>,
    pub at: Vec<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub nt: u64,
    pub nc: u64,
    pub st: u64,
    pub at: u64,
    pub cs: u64,
    pub ns: u64,
    pub ss: u64,
    pub fs: u64,
    /// PAS with every thread keeping its frame (upper bound).
    pub pas: u64,
    pub pac: u64,
    pub theorem1_iff: bool,
    pub theorem2: String,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "nt,nc,st,at,cs,ns,ss,fs,pas,pac,theorem1_iff,theorem2";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.nt,
            self.nc,
            self.st,
            self.at,
            self.cs,
            self.ns,
            self.ss,
            self.fs,
            self.pas,
            self.pac,
            self.theorem1_iff,
            self.theorem2
        )
    }
}

pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, ParamError> {
    let mut rows = Vec::new();
    for &nt in &spec.nt {
        let sizes = spec.sizes.unwrap_or_else(|| Sizes::implementation(nt));
        for &nc in &spec.nc {
            for &st in &spec.st {
                for &at in &spec.at {
                    let p = PredParams {
                        st,
                        calls: vec![CallParams { at, nt_pas: nt }; nc as usize],
                    };
                    let params = MemParams {
                        sizes,
                        nt,
                        preds: vec![p.clone()],
                    };
                    let t1 = if nc > 0 {
                        check_theorem1(&sizes, nt, &p)?.holds_iff
                    } else {
                        true
                    };
                    let t2 = if nc > 0 {
                        match check_theorem2(&sizes, nt, &p)? {
                            Theorem2::Holds { .. } => "holds".to_string(),
                            Theorem2::Fails { .. } => "fails".to_string(),
                            Theorem2::PremiseViolated(_) => "premise-violated".to_string(),
                        }
                    } else {
                        "no-calls".to_string()
                    };
                    rows.push(SweepRow {
                        nt,
                        nc,
                        st,
                        at,
                        cs: predict(Design::Cs, &params)?,
                        ns: predict(Design::Ns, &params)?,
                        ss: predict(Design::Ss, &params)?,
                        fs: predict(Design::Fs, &params)?,
                        pas: predict(Design::Pas, &params)?,
                        pac: predict(Design::Pac, &params)?,
                        theorem1_iff: t1,
                        theorem2: t2,
                    });
                }
            }
        }
    }
    Ok(rows)
}
