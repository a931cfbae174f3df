//! Synthetic exercise corpora and student logs with known ground truth.
//!
//! Exercises live on `C` cluster centers drawn uniformly on the unit sphere;
//! each token is its center plus isotropic Gaussian noise. Clusters map onto
//! knowledge tags many-to-one. Difficulties are drawn uniformly from
//! [0.1, 0.9] and clusters are difficulty strata: exercises are sorted by
//! difficulty and cut into `C` contiguous bands, so exercises sharing a
//! cluster share tag, direction and (approximately) difficulty.
//!
//! Students follow classic BKT per tag (no forgetting) with difficulty entering
//! as a logit shift on the emission probability:
//! `P(correct) = σ(logit(base) − w·(difficulty − 0.5))`, where `base` is
//! `1 − slip` when mastered and `guess` otherwise. Students practice in short
//! sessions on one tag at a time; session lengths are uniform with mean
//! `session_len`.

use serde::{Deserialize, Serialize};

use crate::dataio::{Corpus, ExerciseRecord, ResponseEvent, ResponseLog};
use crate::error::{Error, Result};
use crate::numkit::{sigmoid_scalar, Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagParams {
    pub p_init: f64,
    pub p_learn: f64,
    pub p_guess: f64,
    pub p_slip: f64,
}

impl Default for TagParams {
    fn default() -> Self {
        TagParams {
            p_init: 0.3,
            p_learn: 0.15,
            p_guess: 0.2,
            p_slip: 0.1,
        }
    }
}

impl TagParams {
    fn validate(&self, tag: usize) -> Result<()> {
        let all = [self.p_init, self.p_learn, self.p_guess, self.p_slip];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("tag {tag}: BKT probabilities must lie in [0, 1]")));
        }
        if self.p_guess + self.p_slip >= 1.0 {
            return Err(Error::Config(format!(
                "tag {tag}: p_guess + p_slip must be < 1 (got {})",
                self.p_guess + self.p_slip
            )));
        }
        Ok(())
    }
}

/// Either one parameter set shared by every tag or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagParamSpec {
    Shared(TagParams),
    PerTag(Vec<TagParams>),
}

impl Default for TagParamSpec {
    fn default() -> Self {
        TagParamSpec::Shared(TagParams::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub num_tags: usize,
    pub num_clusters: usize,
    pub dim: usize,
    pub tokens_per_exercise: usize,
    pub num_exercises: usize,
    pub num_students: usize,
    pub seq_len: usize,
    pub tag_params: TagParamSpec,
    pub difficulty_weight: f64,
    pub noise_scale: f64,
    pub session_len: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    /// The desk-scale benchmark: E=2000, M=2000, T=50, K=10, C=40, w=4.
    fn default() -> Self {
        GenConfig {
            num_tags: 10,
            num_clusters: 40,
            dim: 16,
            tokens_per_exercise: 8,
            num_exercises: 2000,
            num_students: 2000,
            seq_len: 50,
            tag_params: TagParamSpec::default(),
            difficulty_weight: 4.0,
            noise_scale: 0.05,
            session_len: 5,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_tags", self.num_tags),
            ("num_clusters", self.num_clusters),
            ("dim", self.dim),
            ("tokens_per_exercise", self.tokens_per_exercise),
            ("num_exercises", self.num_exercises),
            ("num_students", self.num_students),
            ("seq_len", self.seq_len),
            ("session_len", self.session_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("gen.{name} must be >= 1")));
            }
        }
        if self.num_clusters < self.num_tags {
            return Err(Error::Config(format!(
                "gen.num_clusters ({}) must be >= gen.num_tags ({})",
                self.num_clusters, self.num_tags
            )));
        }
        if self.num_exercises < self.num_clusters {
            return Err(Error::Config("gen.num_exercises must be >= gen.num_clusters".into()));
        }
        if !(self.difficulty_weight >= 0.0) || !self.difficulty_weight.is_finite() {
            return Err(Error::Config("gen.difficulty_weight must be finite and >= 0".into()));
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config("gen.noise_scale must be finite and > 0".into()));
        }
        if let TagParamSpec::PerTag(v) = &self.tag_params {
            if v.len() != self.num_tags {
                return Err(Error::Config(format!(
                    "gen.tag_params lists {} tags, num_tags is {}",
                    v.len(),
                    self.num_tags
                )));
            }
        }
        for k in 0..self.num_tags {
            self.params_for(k).validate(k)?;
        }
        Ok(())
    }

    pub fn params_for(&self, tag: usize) -> TagParams {
        match &self.tag_params {
            TagParamSpec::Shared(p) => *p,
            TagParamSpec::PerTag(v) => v[tag],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExerciseTruth {
    pub exercise_id: String,
    pub tag: usize,
    pub cluster: usize,
    pub difficulty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentTruth {
    pub student_id: String,
    /// Mastery bit of the practiced tag at each attempt, before the answer.
    pub mastery: Vec<u8>,
}

/// One line of the truth JSONL: either an exercise or a student record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TruthLine {
    Exercise(ExerciseTruth),
    Student(StudentTruth),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub exercises: Vec<ExerciseTruth>,
    pub students: Vec<StudentTruth>,
}

impl GroundTruth {
    pub fn to_lines(&self) -> Vec<TruthLine> {
        self.exercises
            .iter()
            .cloned()
            .map(TruthLine::Exercise)
            .chain(self.students.iter().cloned().map(TruthLine::Student))
            .collect()
    }

    pub fn from_lines(lines: Vec<TruthLine>) -> Self {
        let mut t = GroundTruth::default();
        for l in lines {
            match l {
                TruthLine::Exercise(e) => t.exercises.push(e),
                TruthLine::Student(s) => t.students.push(s),
            }
        }
        t
    }

    pub fn clusters(&self) -> Vec<usize> {
        self.exercises.iter().map(|e| e.cluster).collect()
    }
}

pub fn exercise_id(i: usize) -> String {
    format!("E{i:05}")
}

pub fn student_id(i: usize) -> String {
    format!("S{i:05}")
}

/// `C` directions drawn uniformly on the unit sphere.
pub fn sphere_centers(rng: &mut RngState, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

pub fn gen_corpus(cfg: &GenConfig) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    let mut rng = RngState::derived(cfg.seed, "syngen/centers");
    let centers = sphere_centers(&mut rng, cfg.num_clusters, cfg.dim);
    gen_corpus_with_centers(cfg, &centers)
}

/// Same as [`gen_corpus`] with caller-chosen cluster centers.
pub fn gen_corpus_with_centers(cfg: &GenConfig, centers: &[Vec<f64>]) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    if centers.len() != cfg.num_clusters || centers.iter().any(|c| c.len() != cfg.dim) {
        return Err(Error::Config(format!(
            "need {} centers of dimension {}",
            cfg.num_clusters, cfg.dim
        )));
    }
    let mut rng = RngState::derived(cfg.seed, "syngen/corpus");
    let (k, c, e) = (cfg.num_tags, cfg.num_clusters, cfg.num_exercises);

    // surjective cluster -> tag map
    let mut perm: Vec<usize> = (0..c).collect();
    rng.shuffle(&mut perm);
    let mut cluster_tag = vec![0; c];
    for (i, &cl) in perm.iter().enumerate() {
        cluster_tag[cl] = i % k;
    }

    let difficulty: Vec<f64> = (0..e).map(|_| rng.uniform_range(0.1, 0.9)).collect();
    let mut by_difficulty: Vec<usize> = (0..e).collect();
    by_difficulty.sort_by(|&a, &b| difficulty[a].total_cmp(&difficulty[b]).then(a.cmp(&b)));
    let mut band_cluster: Vec<usize> = (0..c).collect();
    rng.shuffle(&mut band_cluster);
    let mut cluster_of = vec![0; e];
    for (rank, &ex) in by_difficulty.iter().enumerate() {
        cluster_of[ex] = band_cluster[rank * c / e];
    }

    let mut records = Vec::with_capacity(e);
    let mut truth = GroundTruth::default();
    for ex in 0..e {
        let cl = cluster_of[ex];
        let mut data = Vec::with_capacity(cfg.tokens_per_exercise * cfg.dim);
        for _ in 0..cfg.tokens_per_exercise {
            for &mu in &centers[cl] {
                data.push(mu + cfg.noise_scale * rng.normal());
            }
        }
        let id = exercise_id(ex);
        records.push(ExerciseRecord {
            exercise_id: id.clone(),
            tokens: Matrix::new(cfg.tokens_per_exercise, cfg.dim, data)?,
            knowledge_tag: Some(cluster_tag[cl]),
            text: None,
        });
        truth.exercises.push(ExerciseTruth {
            exercise_id: id,
            tag: cluster_tag[cl],
            cluster: cl,
            difficulty: difficulty[ex],
        });
    }
    Ok((Corpus::new(records)?, truth))
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Probability of a correct answer given mastery and item difficulty.
pub fn p_correct(params: &TagParams, mastered: bool, difficulty: f64, weight: f64) -> f64 {
    let base = if mastered { 1.0 - params.p_slip } else { params.p_guess };
    if base <= 0.0 {
        return 0.0;
    }
    if base >= 1.0 {
        return 1.0;
    }
    sigmoid_scalar(logit(base) - weight * (difficulty - 0.5))
}

/// Simulate every student. Fills `truth.students` with the per-attempt mastery bits.
pub fn gen_responses(cfg: &GenConfig, corpus: &Corpus, truth: &mut GroundTruth) -> Result<Vec<ResponseLog>> {
    cfg.validate()?;
    if truth.exercises.len() != corpus.len() {
        return Err(Error::InvalidArgument("ground truth does not match corpus".into()));
    }
    let mut by_tag: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_tags];
    for (i, t) in truth.exercises.iter().enumerate() {
        by_tag[t.tag].push(i);
    }
    let populated: Vec<usize> = (0..cfg.num_tags).filter(|&k| !by_tag[k].is_empty()).collect();
    let mut logs = Vec::with_capacity(cfg.num_students);
    truth.students.clear();
    for s in 0..cfg.num_students {
        let (log, st) = simulate_student(cfg, truth, &by_tag, &populated, s);
        logs.push(log);
        truth.students.push(st);
    }
    Ok(logs)
}

fn simulate_student(
    cfg: &GenConfig,
    truth: &GroundTruth,
    by_tag: &[Vec<usize>],
    populated: &[usize],
    s: usize,
) -> (ResponseLog, StudentTruth) {
    // Per-student stream: serial and parallel generation agree.
    let mut rng = RngState::derived(cfg.seed, &format!("syngen/student/{s}"));
    let mut mastered: Vec<bool> = (0..cfg.num_tags)
        .map(|k| rng.bernoulli(cfg.params_for(k).p_init))
        .collect();
    let mut events = Vec::with_capacity(cfg.seq_len);
    let mut bits = Vec::with_capacity(cfg.seq_len);
    while events.len() < cfg.seq_len {
        let tag = populated[rng.below(populated.len())];
        let params = cfg.params_for(tag);
        let session = 1 + rng.below(2 * cfg.session_len - 1);
        for _ in 0..session {
            if events.len() == cfg.seq_len {
                break;
            }
            let pool = &by_tag[tag];
            let ex = pool[rng.below(pool.len())];
            let m = mastered[tag];
            let p = p_correct(&params, m, truth.exercises[ex].difficulty, cfg.difficulty_weight);
            let correct = rng.bernoulli(p);
            events.push(ResponseEvent {
                exercise_id: truth.exercises[ex].exercise_id.clone(),
                correct: correct as u8,
                step: events.len() as u64,
            });
            bits.push(m as u8);
            if !m && rng.bernoulli(params.p_learn) {
                mastered[tag] = true;
            }
        }
    }
    (
        ResponseLog {
            student_id: student_id(s),
            events,
        },
        StudentTruth {
            student_id: student_id(s),
            mastery: bits,
        },
    )
}
