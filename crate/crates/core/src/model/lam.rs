use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::codebook::{Codebooks, SpanBoundary, TimeToken};
use super::KnowledgeModel;
use crate::error::{Error, Result};
use crate::questions::{StructuredQuery, TimeRef};
use crate::rng::sha256_hex;
use crate::temporal_kb::{TemporalFact, Year, YearRange};

/// Below this top cosine a decoded span is flagged as unreliable.
pub const SPAN_CONFIDENCE_THRESHOLD: f64 = 0.3;
pub const MIN_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub seed: u64,
    /// Ridge regularizer for initialization and the floor of `C`.
    pub lambda: f64,
    /// Bonus for candidates whose decoded span contains the asked year.
    pub alpha: f64,
    pub horizon_range: YearRange,
}

impl ModelConfig {
    pub fn with_dim(d: usize) -> Self {
        Self { d, seed: 0, lambda: 0.1 * d as f64, alpha: 0.25, horizon_range: YearRange::default() }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<()> {
        if self.d < MIN_DIM {
            return Err(Error::Config(format!("dimension {} below minimum {MIN_DIM}", self.d)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_dim(256)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub object: String,
    pub score: f64,
    pub runner_up_margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: Year,
    pub end: Year,
    pub start_score: f64,
    pub end_score: f64,
    pub swapped: bool,
    pub low_confidence: bool,
}

impl SpanPrediction {
    pub fn contains(&self, year: Year) -> bool {
        self.start <= year && year <= self.end
    }
}

// ---------------------------------------------------------------------------
// Key covariance
// ---------------------------------------------------------------------------

/// `C = ridge·I + F·Fᵀ`, kept factored while `F` is thin so solves can use
/// the Woodbury identity instead of a dense factorization.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    ridge: f64,
    repr: CovRepr,
}

#[derive(Clone, Debug, PartialEq)]
enum CovRepr {
    Factored(DMatrix<f64>),
    Dense(DMatrix<f64>),
}

impl Covariance {
    pub fn isotropic(d: usize, ridge: f64) -> Self {
        Self { ridge, repr: CovRepr::Factored(DMatrix::zeros(d, 0)) }
    }

    pub fn from_dense(c: DMatrix<f64>, ridge: f64) -> Self {
        Self { ridge, repr: CovRepr::Dense(c) }
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            CovRepr::Factored(f) => f.nrows(),
            CovRepr::Dense(c) => c.nrows(),
        }
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn is_factored(&self) -> bool {
        matches!(self.repr, CovRepr::Factored(_))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            CovRepr::Factored(f) => {
                let mut c = f * f.transpose();
                for i in 0..c.nrows() {
                    c[(i, i)] += self.ridge;
                }
                c
            }
            CovRepr::Dense(c) => c.clone(),
        }
    }

    /// `C ← C + K·Kᵀ` for key columns `K`.
    pub fn add_keys(&mut self, keys: &DMatrix<f64>) {
        if keys.ncols() == 0 {
            return;
        }
        let d = self.dim();
        match &mut self.repr {
            CovRepr::Factored(f) if f.ncols() + keys.ncols() <= d / 2 => {
                let mut grown = DMatrix::zeros(d, f.ncols() + keys.ncols());
                grown.columns_mut(0, f.ncols()).copy_from(f);
                grown.columns_mut(f.ncols(), keys.ncols()).copy_from(keys);
                *f = grown;
            }
            CovRepr::Factored(_) => {
                let mut c = self.to_dense();
                c.gemm(1.0, keys, &keys.transpose(), 1.0);
                self.repr = CovRepr::Dense(c);
            }
            CovRepr::Dense(c) => c.gemm(1.0, keys, &keys.transpose(), 1.0),
        }
    }

    /// Solve `(weight·C + E·Eᵀ + shift·I)·X = B`, with `E` optional.
    pub fn solve(
        &self,
        weight: f64,
        extra: Option<&DMatrix<f64>>,
        shift: f64,
        rhs: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let diag = weight * self.ridge + shift;
        if let CovRepr::Factored(f) = &self.repr {
            if diag > 1e-10 && weight >= 0.0 {
                let p_extra = extra.map_or(0, |e| e.ncols());
                let mut u = DMatrix::zeros(d, f.ncols() + p_extra);
                u.columns_mut(0, f.ncols()).copy_from(&(f * weight.sqrt()));
                if let Some(e) = extra {
                    u.columns_mut(f.ncols(), p_extra).copy_from(e);
                }
                return woodbury_solve(diag, &u, rhs);
            }
        }
        let mut m = self.to_dense() * weight;
        if let Some(e) = extra {
            m.gemm(1.0, e, &e.transpose(), 1.0);
        }
        for i in 0..d {
            m[(i, i)] += shift;
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Numerical("system matrix is not positive definite".into()))?;
        Ok(chol.solve(rhs))
    }
}

/// `(s·I + U·Uᵀ)⁻¹·B = (B − U·(s·I + Uᵀ·U)⁻¹·Uᵀ·B) / s`.
fn woodbury_solve(s: f64, u: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.ncols() == 0 {
        return Ok(rhs / s);
    }
    let mut small = u.tr_mul(u);
    for i in 0..small.nrows() {
        small[(i, i)] += s;
    }
    let chol = small
        .cholesky()
        .ok_or_else(|| Error::Numerical("capacitance matrix is not positive definite".into()))?;
    let inner = chol.solve(&u.tr_mul(rhs));
    let mut out = rhs.clone();
    out.gemm(-1.0, u, &inner, 1.0);
    Ok(out / s)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Linear associative memory: `W` maps keys to value vectors, read back by
/// nearest-codebook decoding.
#[derive(Clone, Debug)]
pub struct LamModel {
    config: ModelConfig,
    books: Arc<Codebooks>,
    w: DMatrix<f64>,
    cov: Covariance,
}

impl LamModel {
    pub fn new<E, R>(config: ModelConfig, entities: E, relations: R) -> Result<Self>
    where
        E: IntoIterator,
        E::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        config.check()?;
        let books = Codebooks::new(config.seed, config.d, entities, relations, config.horizon_range);
        Self::with_codebooks(config, Arc::new(books))
    }

    /// Fresh model reusing already generated codebooks.
    pub fn with_codebooks(config: ModelConfig, books: Arc<Codebooks>) -> Result<Self> {
        config.check()?;
        if books.dim() != config.d || books.seed != config.seed || books.year_range != config.horizon_range {
            return Err(Error::Config("codebooks were generated for a different configuration".into()));
        }
        Ok(Self {
            w: DMatrix::zeros(config.d, config.d),
            cov: Covariance::isotropic(config.d, config.lambda),
            config,
            books,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, books: Arc<Codebooks>, w: DMatrix<f64>, cov: Covariance) -> Self {
        Self { config, books, w, cov }
    }

    /// Replace the memory and covariance, e.g. to start editing from a known state.
    pub fn with_state(mut self, w: DMatrix<f64>, cov: Covariance) -> Result<Self> {
        let d = self.config.d;
        if w.shape() != (d, d) || cov.dim() != d {
            return Err(Error::Config(format!("state must be {d}x{d}")));
        }
        if !w.iter().all(|x| x.is_finite()) {
            return Err(Error::Config("weights must be finite".into()));
        }
        self.w = w;
        self.cov = cov;
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn codebooks(&self) -> &Arc<Codebooks> {
        &self.books
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.config.alpha = alpha;
    }

    pub(crate) fn weights_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.w
    }

    pub(crate) fn covariance_mut(&mut self) -> &mut Covariance {
        &mut self.cov
    }

    pub fn horizon(&self) -> Year {
        self.config.horizon_range.horizon()
    }

    pub fn encode_obj_key(&self, subject: &str, relation: &str, time: TimeToken) -> Result<DVector<f64>> {
        self.books.obj_key(subject, relation, time)
    }

    pub fn encode_span_key(
        &self,
        subject: &str,
        relation: &str,
        object: &str,
        boundary: SpanBoundary,
    ) -> Result<DVector<f64>> {
        self.books.span_key(subject, relation, object, boundary)
    }

    /// Key/value pairs that store `fact` as the model's current knowledge.
    pub fn fact_associations(
        &self,
        fact: &TemporalFact,
        previous: Option<&str>,
    ) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
        let (s, r, o) = (fact.subject.as_str(), fact.relation.as_str(), fact.object.as_str());
        let end = fact.effective_end(self.horizon());
        let value = self.books.entities.vector(o)?.into_owned();
        let mut pairs = Vec::new();
        for y in fact.t_start..=end {
            pairs.push((self.encode_obj_key(s, r, TimeToken::Year(y))?, value.clone()));
        }
        pairs.push((self.encode_obj_key(s, r, TimeToken::Current)?, value));
        if let Some(prev) = previous {
            pairs.push((
                self.encode_obj_key(s, r, TimeToken::Previous)?,
                self.books.entities.vector(prev)?.into_owned(),
            ));
        }
        pairs.push((
            self.encode_span_key(s, r, o, SpanBoundary::Start)?,
            self.books.year_vector(fact.t_start)?.into_owned(),
        ));
        pairs.push((self.encode_span_key(s, r, o, SpanBoundary::End)?, self.books.year_vector(end)?.into_owned()));
        Ok(pairs)
    }

    /// Replace the memory with the ridge solution over the facts' associations.
    pub fn initialize_from_facts(&mut self, facts: &[(TemporalFact, Option<String>)]) -> Result<()> {
        let mut pairs = Vec::new();
        for (fact, prev) in facts {
            pairs.extend(self.fact_associations(fact, prev.as_deref())?);
        }
        let d = self.config.d;
        let n = pairs.len();
        let keys = DMatrix::from_fn(d, n, |i, j| pairs[j].0[i]);
        let values = DMatrix::from_fn(d, n, |i, j| pairs[j].1[i]);
        // W = V (KᵀK + λI)⁻¹ Kᵀ, the dual form of the ridge solution.
        let mut gram = keys.tr_mul(&keys);
        for i in 0..n {
            gram[(i, i)] += self.config.lambda;
        }
        let chol = gram.cholesky().ok_or_else(|| Error::Numerical("ridge system not positive definite".into()))?;
        let coeff = chol.solve(&keys.transpose());
        self.w = &values * coeff;
        self.cov = Covariance::isotropic(d, self.config.lambda);
        self.cov.add_keys(&keys);
        Ok(())
    }

    fn cosine_scores(&self, key: &DVector<f64>, book: &DMatrix<f64>) -> DVector<f64> {
        let h = &self.w * key;
        let norm = h.norm();
        if norm > 0.0 {
            book.tr_mul(&h) / norm
        } else {
            DVector::zeros(book.ncols())
        }
    }

    pub fn predict_span(&self, subject: &str, relation: &str, object: &str) -> Result<SpanPrediction> {
        let decode = |boundary| -> Result<(Year, f64)> {
            let key = self.encode_span_key(subject, relation, object, boundary)?;
            let scores = self.cosine_scores(&key, self.books.years.vectors());
            let (j, score) = argmax(&scores);
            Ok((self.books.year_at(j), score))
        };
        let (mut start, mut start_score) = decode(SpanBoundary::Start)?;
        let (mut end, mut end_score) = decode(SpanBoundary::End)?;
        let swapped = start > end;
        if swapped {
            std::mem::swap(&mut start, &mut end);
            std::mem::swap(&mut start_score, &mut end_score);
        }
        Ok(SpanPrediction {
            start,
            end,
            start_score,
            end_score,
            swapped,
            low_confidence: start_score.max(end_score) < SPAN_CONFIDENCE_THRESHOLD,
        })
    }

    pub fn query(&self, q: &StructuredQuery) -> Result<Answer> {
        let token = match q.time_ref {
            TimeRef::Year(y) => TimeToken::Year(y),
            TimeRef::Current => TimeToken::Current,
            TimeRef::Previous => TimeToken::Previous,
        };
        let key = self.encode_obj_key(&q.subject, &q.relation, token)?;
        let entities = &self.books.entities;
        let mut scores = self.cosine_scores(&key, entities.vectors());
        if let (TimeRef::Year(year), alpha) = (q.time_ref, self.config.alpha) {
            if alpha > 0.0 && !scores.is_empty() {
                // Only candidates within alpha of the leader can change the argmax.
                let (_, top) = argmax(&scores);
                let contenders: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= top - alpha).collect();
                for j in contenders {
                    let span = self.predict_span(&q.subject, &q.relation, &entities.ids()[j])?;
                    if span.contains(year) {
                        scores[j] += alpha;
                    }
                }
            }
        }
        if scores.is_empty() {
            return Err(Error::Precondition("entity codebook is empty".into()));
        }
        let (best, score) = argmax(&scores);
        let runner_up = scores
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != best)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Answer {
            object: entities.ids()[best].clone(),
            score,
            runner_up_margin: if runner_up.is_finite() { score - runner_up } else { 0.0 },
        })
    }

    /// SHA-256 over the little-endian bytes of `W` and `C`.
    pub fn state_hash(&self) -> String {
        let c = self.cov.to_dense();
        let mut bytes = Vec::with_capacity(16 * self.w.len());
        for m in [&self.w, &c] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
                }
            }
        }
        sha256_hex(&bytes)
    }
}

impl KnowledgeModel for LamModel {
    fn query(&self, q: &StructuredQuery) -> Result<Answer> {
        LamModel::query(self, q)
    }
}

/// First index of the maximum; NaN entries never win.
fn argmax(v: &DVector<f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &x) in v.iter().enumerate() {
        if x > best.1 {
            best = (j, x);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn presidents_model() -> LamModel {
        LamModel::new(
            ModelConfig::with_dim(64).seed(3),
            ["United_States", "Barack_Obama", "Donald_Trump"],
            ["head_of_government"],
        )
        .unwrap()
    }

    #[test]
    fn config_checks() {
        assert!(matches!(LamModel::new(ModelConfig::with_dim(16), ["a"], ["r"]), Err(Error::Config(_))));
        let mut cfg = ModelConfig::with_dim(32);
        cfg.lambda = 0.0;
        assert!(LamModel::new(cfg, ["a"], ["r"]).is_err());
    }

    #[test]
    fn fresh_model_has_zero_memory() {
        let m = presidents_model();
        assert_eq!(m.weights().norm(), 0.0);
        let c = m.covariance().to_dense();
        assert_eq!(c, DMatrix::identity(64, 64) * 6.4);
        let a = m.query(&StructuredQuery::new("United_States", "head_of_government", TimeRef::Current)).unwrap();
        assert_eq!(a.score, 0.0);
    }

    #[test]
    fn woodbury_matches_dense_solve() {
        let d = 40;
        let f = DMatrix::from_fn(d, 7, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let mut cov = Covariance::isotropic(d, 2.5);
        cov.add_keys(&f);
        assert!(cov.is_factored());
        let extra = DMatrix::from_fn(d, 3, |i, j| ((i + 5 * j) % 7) as f64 / 7.0 - 0.5);
        let rhs = DMatrix::from_fn(d, 3, |i, j| (i as f64 - j as f64).sin());
        let fast = cov.solve(0.3, Some(&extra), 0.01, &rhs).unwrap();
        let dense = Covariance::from_dense(cov.to_dense(), 2.5).solve(0.3, Some(&extra), 0.01, &rhs).unwrap();
        assert!((fast - dense).amax() < 1e-10);
    }

    #[test]
    fn wide_factor_switches_to_dense() {
        let mut cov = Covariance::isotropic(32, 1.0);
        cov.add_keys(&DMatrix::identity(32, 20));
        assert!(!cov.is_factored());
        assert_eq!(cov.to_dense()[(0, 0)], 2.0);
        assert_eq!(cov.to_dense()[(25, 25)], 1.0);
    }

    #[test]
    fn initialized_fact_is_recalled() {
        let mut m = presidents_model();
        let obama = TemporalFact::new("United_States", "head_of_government", "Barack_Obama", 2009, Some(2017)).unwrap();
        m.initialize_from_facts(&[(obama, None)]).unwrap();
        let q = |t| StructuredQuery::new("United_States", "head_of_government", t);
        assert_eq!(m.query(&q(TimeRef::Year(2013))).unwrap().object, "Barack_Obama");
        assert_eq!(m.query(&q(TimeRef::Current)).unwrap().object, "Barack_Obama");
    }

    #[test]
    fn alpha_zero_leaves_raw_scores() {
        let mut m = presidents_model();
        let fact = TemporalFact::new("United_States", "head_of_government", "Donald_Trump", 2017, Some(2021)).unwrap();
        m.initialize_from_facts(&[(fact, None)]).unwrap();
        let q = StructuredQuery::new("United_States", "head_of_government", TimeRef::Year(2019));
        let blended = m.query(&q).unwrap();
        m.set_alpha(0.0);
        let raw = m.query(&q).unwrap();
        assert!((blended.score - raw.score - 0.25).abs() < 1e-12);
    }
}
