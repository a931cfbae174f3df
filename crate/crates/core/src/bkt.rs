//! Bayesian knowledge tracing: one two-state HMM per knowledge tag, with
//! guess/slip emissions and a learn transition (no forgetting), fitted by EM.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataio::{Corpus, ResponseLog};
use crate::error::{Error, Result};
use crate::evalkit::ScoredEvents;

pub const PROB_MIN: f64 = 0.001;
pub const PROB_MAX: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BktTagParams {
    pub p_init: f64,
    pub p_learn: f64,
    pub p_guess: f64,
    pub p_slip: f64,
}

impl Default for BktTagParams {
    fn default() -> Self {
        BktTagParams {
            p_init: 0.5,
            p_learn: 0.1,
            p_guess: 0.2,
            p_slip: 0.1,
        }
    }
}

impl BktTagParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_init", self.p_init),
            ("p_learn", self.p_learn),
            ("p_guess", self.p_guess),
            ("p_slip", self.p_slip),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.p_guess + self.p_slip >= 1.0 {
            return Err(Error::InvalidArgument("p_guess + p_slip must be < 1".into()));
        }
        Ok(())
    }

    fn clamped(self) -> Self {
        let c = |v: f64| v.clamp(PROB_MIN, PROB_MAX);
        BktTagParams {
            p_init: c(self.p_init),
            p_learn: c(self.p_learn),
            p_guess: c(self.p_guess),
            p_slip: c(self.p_slip),
        }
    }

    fn emit(&self, mastered: bool, r: u8) -> f64 {
        let p1 = if mastered { 1.0 - self.p_slip } else { self.p_guess };
        if r == 1 {
            p1
        } else {
            1.0 - p1
        }
    }
}

/// Predict the next answer from `p_mastery`, then condition on the observed
/// `r` and apply the learn transition. Returns `(p_correct, p_mastery_next)`.
pub fn bkt_predict_update(p: &BktTagParams, p_mastery: f64, r: u8) -> (f64, f64) {
    let pl = p_mastery;
    let p_correct = pl * (1.0 - p.p_slip) + (1.0 - pl) * p.p_guess;
    let post = if r == 1 {
        let num = pl * (1.0 - p.p_slip);
        if p_correct > 0.0 {
            num / p_correct
        } else {
            pl
        }
    } else {
        let num = pl * p.p_slip;
        let den = 1.0 - p_correct;
        if den > 0.0 {
            num / den
        } else {
            pl
        }
    };
    let next = post + (1.0 - post) * p.p_learn;
    (p_correct, next.clamp(0.0, 1.0))
}

/// Fitted parameters keyed by tag. Tags never seen in training use `fallback`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BktParams {
    pub tags: BTreeMap<usize, BktTagParams>,
    pub fallback: BktTagParams,
}

impl BktParams {
    pub fn for_tag(&self, tag: usize) -> &BktTagParams {
        self.tags.get(&tag).unwrap_or(&self.fallback)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagFit {
    pub iterations: usize,
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    /// False when no sequence has two or more steps, so `p_learn` kept its
    /// initial value.
    pub learn_identified: bool,
    pub sequences: usize,
    pub events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BktFit {
    pub params: BktParams,
    pub tags: BTreeMap<usize, TagFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub init: BktTagParams,
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            init: BktTagParams::default(),
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

/// Exercise id → knowledge tag, from corpus labels.
pub fn tag_map(corpus: &Corpus) -> Result<HashMap<String, usize>> {
    corpus
        .records()
        .iter()
        .map(|r| {
            r.knowledge_tag
                .map(|t| (r.exercise_id.clone(), t))
                .ok_or_else(|| Error::format("bkt", format!("exercise '{}' has no knowledge tag", r.exercise_id)))
        })
        .collect()
}

/// Per student, per tag: the ordered answers on that tag.
pub fn group_by_tag(logs: &[ResponseLog], tags: &HashMap<String, usize>) -> Result<BTreeMap<usize, Vec<Vec<u8>>>> {
    let mut out: BTreeMap<usize, Vec<Vec<u8>>> = BTreeMap::new();
    for log in logs {
        let mut per: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
        for e in &log.events {
            let t = *tags
                .get(&e.exercise_id)
                .ok_or_else(|| Error::format("bkt", format!("exercise '{}' has no tag", e.exercise_id)))?;
            per.entry(t).or_default().push(e.correct);
        }
        for (t, seq) in per {
            out.entry(t).or_default().push(seq);
        }
    }
    Ok(out)
}

struct Stats {
    ll: f64,
    init1: f64,
    learn_num: f64,
    learn_den: f64,
    guess_num: f64,
    in0: f64,
    slip_num: f64,
    in1: f64,
}

/// Scaled forward-backward over every sequence; expected counts for the M-step.
fn e_step(p: &BktTagParams, seqs: &[Vec<u8>]) -> Stats {
    let mut s = Stats {
        ll: 0.0,
        init1: 0.0,
        learn_num: 0.0,
        learn_den: 0.0,
        guess_num: 0.0,
        in0: 0.0,
        slip_num: 0.0,
        in1: 0.0,
    };
    let l = p.p_learn;
    // transition[from][to]
    let a = [[1.0 - l, l], [0.0, 1.0]];
    let mut alpha: Vec<[f64; 2]> = Vec::new();
    let mut beta: Vec<[f64; 2]> = Vec::new();
    let mut scale: Vec<f64> = Vec::new();
    for seq in seqs {
        let n = seq.len();
        alpha.clear();
        scale.clear();
        let mut prior = [1.0 - p.p_init, p.p_init];
        for &r in seq {
            let mut al = [prior[0] * p.emit(false, r), prior[1] * p.emit(true, r)];
            let c = al[0] + al[1];
            al[0] /= c;
            al[1] /= c;
            s.ll += c.ln();
            scale.push(c);
            alpha.push(al);
            prior = [al[0] * a[0][0], al[0] * a[0][1] + al[1]];
        }
        beta.clear();
        beta.resize(n, [1.0, 1.0]);
        for t in (0..n.saturating_sub(1)).rev() {
            let r = seq[t + 1];
            let e = [p.emit(false, r), p.emit(true, r)];
            let c = scale[t + 1];
            for i in 0..2 {
                beta[t][i] = (a[i][0] * e[0] * beta[t + 1][0] + a[i][1] * e[1] * beta[t + 1][1]) / c;
            }
        }
        for t in 0..n {
            let g0 = alpha[t][0] * beta[t][0];
            let g1 = alpha[t][1] * beta[t][1];
            let z = g0 + g1;
            let (g0, g1) = (g0 / z, g1 / z);
            if t == 0 {
                s.init1 += g1;
            }
            s.in0 += g0;
            s.in1 += g1;
            if seq[t] == 1 {
                s.guess_num += g0;
            } else {
                s.slip_num += g1;
            }
            if t + 1 < n {
                let r = seq[t + 1];
                let xi01 = alpha[t][0] * a[0][1] * p.emit(true, r) * beta[t + 1][1] / scale[t + 1];
                s.learn_num += xi01;
                s.learn_den += g0;
            }
        }
    }
    s
}

/// Log-likelihood of the sequences under `p`.
pub fn log_likelihood(p: &BktTagParams, seqs: &[Vec<u8>]) -> f64 {
    e_step(p, seqs).ll
}

/// EM for a single tag's sequences.
pub fn fit_tag(seqs: &[Vec<u8>], cfg: &EmConfig) -> (BktTagParams, TagFit) {
    let mut p = cfg.init.clamped();
    let learn_identified = seqs.iter().any(|s| s.len() >= 2);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let nseq = seqs.len() as f64;
    for _ in 0..cfg.max_iters {
        let st = e_step(&p, seqs);
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (st.ll - prev).abs() <= cfg.tol * prev.abs() {
                trace.push(st.ll);
                converged = true;
                break;
            }
        }
        trace.push(st.ll);
        iterations += 1;
        let ratio = |num: f64, den: f64, keep: f64| if den > 0.0 { num / den } else { keep };
        p = BktTagParams {
            p_init: ratio(st.init1, nseq, p.p_init),
            p_learn: if learn_identified { ratio(st.learn_num, st.learn_den, p.p_learn) } else { p.p_learn },
            p_guess: ratio(st.guess_num, st.in0, p.p_guess),
            p_slip: ratio(st.slip_num, st.in1, p.p_slip),
        }
        .clamped();
    }
    if !converged {
        trace.push(log_likelihood(&p, seqs));
    }
    let events = seqs.iter().map(Vec::len).sum();
    (
        p,
        TagFit {
            iterations,
            log_likelihood: trace,
            converged,
            learn_identified,
            sequences: seqs.len(),
            events,
        },
    )
}

/// Fit every tag that has data. Empty tag groups are skipped with a warning.
pub fn bkt_em_fit(grouped: &BTreeMap<usize, Vec<Vec<u8>>>, num_tags: usize, cfg: &EmConfig) -> Result<BktFit> {
    cfg.init.validate()?;
    let mut params = BktParams {
        tags: BTreeMap::new(),
        fallback: cfg.init,
    };
    let mut fits = BTreeMap::new();
    for tag in 0..num_tags.max(grouped.keys().next_back().map_or(0, |k| k + 1)) {
        match grouped.get(&tag).filter(|s| !s.is_empty()) {
            None => log::warn!("bkt: tag {tag} has no training events, using initial parameters"),
            Some(seqs) => {
                let (p, fit) = fit_tag(seqs, cfg);
                if !fit.learn_identified {
                    log::warn!("bkt: tag {tag} has only one-step sequences; p_learn left at its initial value");
                }
                params.tags.insert(tag, p);
                fits.insert(tag, fit);
            }
        }
    }
    Ok(BktFit { params, tags: fits })
}

/// Score every event after each student's first, carrying per-tag mastery.
pub fn bkt_evaluate(params: &BktParams, logs: &[ResponseLog], tags: &HashMap<String, usize>) -> Result<ScoredEvents> {
    let mut out = ScoredEvents::default();
    for log in logs {
        out.begin_student();
        let mut mastery: HashMap<usize, f64> = HashMap::new();
        for (t, e) in log.events.iter().enumerate() {
            let tag = *tags
                .get(&e.exercise_id)
                .ok_or_else(|| Error::format("bkt", format!("exercise '{}' has no tag", e.exercise_id)))?;
            let p = params.for_tag(tag);
            let pl = mastery.entry(tag).or_insert(p.p_init);
            let (pc, next) = bkt_predict_update(p, *pl, e.correct);
            *pl = next;
            if t >= 1 {
                out.push(pc, e.correct);
            }
        }
    }
    Ok(out)
}
