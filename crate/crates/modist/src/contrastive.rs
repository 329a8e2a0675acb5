//! InfoNCE objectives and the dual momentum memory banks.
//!
//! Three losses drive pretraining: a visual-only InfoNCE, a motion-only
//! InfoNCE, and a cross-modal pair of terms that distills motion structure
//! into the visual embedding. Negatives come from per-modality FIFO banks of
//! past keys; each bank entry carries its source video index so negatives
//! from the query's own video are never sampled.

use crate::encoders::{Embedding, Modality, Role};
use crate::error::{Error, Result};
use crate::tensor::dot;

// ── Configuration ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    /// Softmax temperature.
    pub tau: f64,
    /// Bank capacity per modality.
    pub bank_capacity: usize,
    pub w_v: f64,
    pub w_m: f64,
    pub w_mv: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { tau: 0.1, bank_capacity: 512, w_v: 1.0, w_m: 1.0, w_mv: 1.0 }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("temperature {} must be > 0", self.tau)));
        }
        if self.bank_capacity < 1 {
            return Err(Error::Config("bank capacity must be >= 1".into()));
        }
        if self.w_v < 0.0 || self.w_m < 0.0 || self.w_mv < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

// ── Memory bank ─────────────────────────────────────────────────────────────

/// Fixed-capacity FIFO ring of (unit embedding, video index) pairs.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    pub modality: Modality,
    pub capacity: usize,
    pub dim: usize,
    entries: Vec<(Vec<f64>, u64)>,
    cursor: usize,
}

impl MemoryBank {
    pub fn new(modality: Modality, capacity: usize, dim: usize) -> Self {
        Self { modality, capacity, dim, entries: Vec::new(), cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// FIFO append; evicts the oldest entry once at capacity.
    pub fn push(&mut self, e: &Embedding) -> Result<()> {
        if e.modality != self.modality {
            return Err(Error::Contract(format!(
                "cannot push {:?} embedding into {:?} bank",
                e.modality, self.modality
            )));
        }
        if e.vector.len() != self.dim {
            return Err(Error::Contract(format!(
                "bank dim {} but embedding has {}",
                self.dim,
                e.vector.len()
            )));
        }
        let norm = crate::tensor::l2_norm(&e.vector);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("bank entries must be unit norm, got {norm}")));
        }
        if self.entries.len() < self.capacity {
            self.entries.push((e.vector.clone(), e.video_index));
        } else {
            self.entries[self.cursor] = (e.vector.clone(), e.video_index);
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Borrowed view of all entries whose video index differs from `exclude`.
    pub fn negatives_ref(&self, exclude: u64) -> Vec<&[f64]> {
        self.entries
            .iter()
            .filter(|(_, idx)| *idx != exclude)
            .map(|(v, _)| v.as_slice())
            .collect()
    }

    /// Stored entries with a different video index, as tagged embeddings.
    pub fn negatives(&self, exclude: u64) -> Vec<Embedding> {
        self.entries
            .iter()
            .filter(|(_, idx)| *idx != exclude)
            .map(|(v, idx)| Embedding {
                vector: v.clone(),
                modality: self.modality,
                role: Role::Negative,
                video_index: *idx,
            })
            .collect()
    }

    /// Entries oldest-to-newest (push order).
    pub fn entries_in_push_order(&self) -> Vec<(&[f64], u64)> {
        let n = self.entries.len();
        let mut out = Vec::with_capacity(n);
        let start = if self.is_full() { self.cursor } else { 0 };
        for i in 0..n {
            let (v, idx) = &self.entries[(start + i) % n];
            out.push((v.as_slice(), *idx));
        }
        out
    }

    /// Raw state for checkpointing: (entries in storage order, cursor).
    pub fn raw_state(&self) -> (&[(Vec<f64>, u64)], usize) {
        (&self.entries, self.cursor)
    }

    pub fn restore(
        modality: Modality,
        capacity: usize,
        dim: usize,
        entries: Vec<(Vec<f64>, u64)>,
        cursor: usize,
    ) -> Result<Self> {
        if entries.len() > capacity || cursor > capacity {
            return Err(Error::Format("inconsistent bank state".into()));
        }
        Ok(Self { modality, capacity, dim, entries, cursor })
    }
}

/// FIFO append of a batch of (embedding, index) pairs.
pub fn bank_push(bank: &mut MemoryBank, embeddings: &[Embedding]) -> Result<()> {
    for e in embeddings {
        bank.push(e)?;
    }
    Ok(())
}

/// All stored entries whose video_index differs from `exclude_video_index`.
pub fn bank_negatives(bank: &MemoryBank, exclude_video_index: u64) -> Vec<Embedding> {
    bank.negatives(exclude_video_index)
}

// ── InfoNCE ─────────────────────────────────────────────────────────────────

/// Core computation on raw unit vectors; returns (loss, optional dq).
/// An empty negative set contributes exactly zero loss and zero gradient.
fn nce_core(
    q: &[f64],
    k: &[f64],
    negs: &[&[f64]],
    tau: f64,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    if negs.is_empty() {
        return (0.0, if want_grad { Some(vec![0.0; q.len()]) } else { None });
    }
    let s0 = dot(q, k) / tau;
    let mut logits = Vec::with_capacity(negs.len() + 1);
    logits.push(s0);
    for n in negs {
        logits.push(dot(q, n) / tau);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    // loss = logsumexp(logits) - s0, arranged so the symmetric case is exact
    let loss = z.ln() + (max - s0);
    if !want_grad {
        return (loss, None);
    }
    let mut dq = vec![0.0; q.len()];
    let p0 = exps[0] / z;
    crate::tensor::axpy((p0 - 1.0) / tau, k, &mut dq);
    for (i, n) in negs.iter().enumerate() {
        crate::tensor::axpy(exps[i + 1] / z / tau, n, &mut dq);
    }
    (loss, Some(dq))
}

fn check_dims(q: &Embedding, k: &Embedding, negs: &[Embedding]) -> Result<()> {
    if q.vector.len() != k.vector.len() || negs.iter().any(|n| n.vector.len() != q.vector.len()) {
        return Err(Error::Config("info_nce embedding dimension mismatch".into()));
    }
    Ok(())
}

/// InfoNCE: softmax cross-entropy with the key as the positive logit.
pub fn info_nce(q: &Embedding, k: &Embedding, negatives: &[Embedding], tau: f64) -> Result<f64> {
    check_dims(q, k, negatives)?;
    let negs: Vec<&[f64]> = negatives.iter().map(|n| n.vector.as_slice()).collect();
    Ok(nce_core(&q.vector, &k.vector, &negs, tau, false).0)
}

/// InfoNCE loss and its gradient with respect to the query.
pub fn info_nce_grad(
    q: &Embedding,
    k: &Embedding,
    negatives: &[Embedding],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    check_dims(q, k, negatives)?;
    let negs: Vec<&[f64]> = negatives.iter().map(|n| n.vector.as_slice()).collect();
    let (loss, dq) = nce_core(&q.vector, &k.vector, &negs, tau, true);
    Ok((loss, dq.unwrap()))
}

fn require_modality(e: &Embedding, m: Modality, what: &str) -> Result<()> {
    if e.modality != m {
        return Err(Error::Contract(format!("{what} must be {m:?}, got {:?}", e.modality)));
    }
    Ok(())
}

/// Cross-modal distillation: IN(v_q, m_k, v_negs) + IN(m_q, v_k, m_negs).
pub fn cross_modal_loss(
    v_q: &Embedding,
    m_k: &Embedding,
    v_negs: &[Embedding],
    m_q: &Embedding,
    v_k: &Embedding,
    m_negs: &[Embedding],
    tau: f64,
) -> Result<f64> {
    require_modality(v_q, Modality::Visual, "cross-modal visual query")?;
    require_modality(m_k, Modality::Motion, "cross-modal motion key")?;
    require_modality(m_q, Modality::Motion, "cross-modal motion query")?;
    require_modality(v_k, Modality::Visual, "cross-modal visual key")?;
    for n in v_negs {
        require_modality(n, Modality::Visual, "visual negative")?;
    }
    for n in m_negs {
        require_modality(n, Modality::Motion, "motion negative")?;
    }
    Ok(info_nce(v_q, m_k, v_negs, tau)? + info_nce(m_q, v_k, m_negs, tau)?)
}

// ── Batched total loss ──────────────────────────────────────────────────────

/// Embeddings of one clip pair; motion entries are absent in RGB-only mode.
#[derive(Debug, Clone)]
pub struct PairEmbeddings {
    pub v_q: Embedding,
    pub v_k: Embedding,
    pub m_q: Option<Embedding>,
    pub m_k: Option<Embedding>,
    pub video_index: u64,
}

impl PairEmbeddings {
    pub fn validate(&self) -> Result<()> {
        let mut indices = vec![self.v_q.video_index, self.v_k.video_index];
        if let Some(m) = &self.m_q {
            indices.push(m.video_index);
        }
        if let Some(m) = &self.m_k {
            indices.push(m.video_index);
        }
        if indices.iter().any(|&i| i != self.video_index) {
            return Err(Error::Contract(format!(
                "pair integrity violated: indices {indices:?} vs pair index {}",
                self.video_index
            )));
        }
        Ok(())
    }
}

/// The three loss terms and their weighted sum, batch-averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_v: f64,
    pub l_m: f64,
    pub l_mv: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_v.is_finite()
            && self.l_m.is_finite()
            && self.l_mv.is_finite()
            && self.total.is_finite()
    }
}

/// Per-sample loss terms plus gradients w.r.t. the two query embeddings.
/// Gradients carry the loss weights but not the 1/batch factor.
pub struct PairGrads {
    pub l_v: f64,
    pub l_m: f64,
    pub l_mv: f64,
    pub d_v_q: Vec<f64>,
    pub d_m_q: Option<Vec<f64>>,
}

fn pair_terms(
    pair: &PairEmbeddings,
    bank_v: &MemoryBank,
    bank_m: &MemoryBank,
    cfg: &ContrastiveConfig,
    want_grad: bool,
) -> Result<PairGrads> {
    pair.validate()?;
    let v_negs = bank_v.negatives_ref(pair.video_index);
    let (l_v, d_v1) = nce_core(&pair.v_q.vector, &pair.v_k.vector, &v_negs, cfg.tau, want_grad);
    let mut l_m = 0.0;
    let mut l_mv = 0.0;
    let mut d_v_q = vec![0.0; pair.v_q.vector.len()];
    if let Some(d) = &d_v1 {
        crate::tensor::axpy(cfg.w_v, d, &mut d_v_q);
    }
    let mut d_m_q = None;
    if let (Some(m_q), Some(m_k)) = (&pair.m_q, &pair.m_k) {
        require_modality(m_q, Modality::Motion, "motion query")?;
        require_modality(m_k, Modality::Motion, "motion key")?;
        let m_negs = bank_m.negatives_ref(pair.video_index);
        let (lm, d_m1) = nce_core(&m_q.vector, &m_k.vector, &m_negs, cfg.tau, want_grad);
        // distillation: visual query against motion key over visual negatives,
        // and motion query against visual key over motion negatives
        let (lmv_a, d_v2) = nce_core(&pair.v_q.vector, &m_k.vector, &v_negs, cfg.tau, want_grad);
        let (lmv_b, d_m2) = nce_core(&m_q.vector, &pair.v_k.vector, &m_negs, cfg.tau, want_grad);
        l_m = lm;
        l_mv = lmv_a + lmv_b;
        if want_grad {
            if let Some(d) = &d_v2 {
                crate::tensor::axpy(cfg.w_mv, d, &mut d_v_q);
            }
            let mut dm = vec![0.0; m_q.vector.len()];
            if let Some(d) = &d_m1 {
                crate::tensor::axpy(cfg.w_m, d, &mut dm);
            }
            if let Some(d) = &d_m2 {
                crate::tensor::axpy(cfg.w_mv, d, &mut dm);
            }
            d_m_q = Some(dm);
        }
    }
    Ok(PairGrads { l_v, l_m, l_mv, d_v_q, d_m_q })
}

/// Batch-averaged loss over a minibatch of pair embeddings.
pub fn total_loss(
    pairs: &[PairEmbeddings],
    bank_v: &MemoryBank,
    bank_m: &MemoryBank,
    cfg: &ContrastiveConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("total_loss needs a non-empty batch".into()));
    }
    let mut l_v = 0.0;
    let mut l_m = 0.0;
    let mut l_mv = 0.0;
    for pair in pairs {
        let t = pair_terms(pair, bank_v, bank_m, cfg, false)?;
        l_v += t.l_v;
        l_m += t.l_m;
        l_mv += t.l_mv;
    }
    let b = pairs.len() as f64;
    l_v /= b;
    l_m /= b;
    l_mv /= b;
    let total = cfg.w_v * l_v + cfg.w_m * l_m + cfg.w_mv * l_mv;
    Ok(LossBreakdown { l_v, l_m, l_mv, total })
}

/// Loss terms and query-embedding gradients for one pair (used by the
/// training step; the caller applies the 1/batch factor).
pub fn pair_loss_grads(
    pair: &PairEmbeddings,
    bank_v: &MemoryBank,
    bank_m: &MemoryBank,
    cfg: &ContrastiveConfig,
) -> Result<PairGrads> {
    pair_terms(pair, bank_v, bank_m, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = crate::tensor::l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn emb(vector: Vec<f64>, modality: Modality, role: Role, idx: u64) -> Embedding {
        Embedding { vector, modality, role, video_index: idx }
    }

    fn random_unit(dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if crate::tensor::l2_norm(&v) > 1e-3 {
                return unit(v);
            }
        }
    }

    /// Scalar brute-force oracle with no log-sum-exp shift.
    fn nce_oracle(q: &[f64], k: &[f64], negs: &[Vec<f64>], tau: f64) -> f64 {
        if negs.is_empty() {
            return 0.0;
        }
        let pos = (dot(q, k) / tau).exp();
        let mut denom = pos;
        for n in negs {
            denom += (dot(q, n) / tau).exp();
        }
        -(pos / denom).ln()
    }

    #[test]
    fn all_orthogonal_symmetric_case_is_ln4() {
        // q.k = 0 and q.n_i = 0 for 3 negatives at tau = 1 -> ln 4
        let q = emb(vec![1.0, 0.0, 0.0, 0.0, 0.0], Modality::Visual, Role::Query, 0);
        let k = emb(vec![0.0, 1.0, 0.0, 0.0, 0.0], Modality::Visual, Role::Key, 0);
        let negs: Vec<Embedding> = (2..5)
            .map(|i| {
                let mut v = vec![0.0; 5];
                v[i] = 1.0;
                emb(v, Modality::Visual, Role::Negative, 9)
            })
            .collect();
        let l = info_nce(&q, &k, &negs, 1.0).unwrap();
        assert!((l - 4.0f64.ln()).abs() < 1e-12, "got {l}");
    }

    #[test]
    fn antipodal_negative_case() {
        // q = k, single negative n = -q, tau = 1 -> ln(1 + e^-2)
        let q = emb(unit(vec![0.6, 0.8]), Modality::Visual, Role::Query, 0);
        let k = emb(q.vector.clone(), Modality::Visual, Role::Key, 0);
        let n = emb(q.vector.iter().map(|v| -v).collect(), Modality::Visual, Role::Negative, 1);
        let l = info_nce(&q, &k, &[n], 1.0).unwrap();
        let expect = (1.0 + (-2.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12, "got {l} want {expect}");
    }

    #[test]
    fn empty_negatives_is_exactly_zero() {
        let q = emb(unit(vec![0.3, -0.4, 0.5]), Modality::Motion, Role::Query, 0);
        let k = emb(unit(vec![1.0, 1.0, 0.2]), Modality::Motion, Role::Key, 0);
        assert_eq!(info_nce(&q, &k, &[], 0.1).unwrap(), 0.0);
        let (l, g) = info_nce_grad(&q, &k, &[], 0.1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_configuration_error() {
        let q = emb(vec![1.0, 0.0], Modality::Visual, Role::Query, 0);
        let k = emb(vec![1.0, 0.0, 0.0], Modality::Visual, Role::Key, 0);
        assert!(matches!(info_nce(&q, &k, &[], 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn loss_shrinks_as_temperature_drops_when_positive_dominates() {
        let mut rng = stream(21, &[0]);
        let q = emb(random_unit(16, &mut rng), Modality::Visual, Role::Query, 0);
        let k = emb(q.vector.clone(), Modality::Visual, Role::Key, 0);
        let negs: Vec<Embedding> = (0..8)
            .map(|i| emb(random_unit(16, &mut rng), Modality::Visual, Role::Negative, 10 + i))
            .collect();
        // q.k = 1 > max q.n for random negatives
        let l1 = info_nce(&q, &k, &negs, 1.0).unwrap();
        let l01 = info_nce(&q, &k, &negs, 0.1).unwrap();
        let l001 = info_nce(&q, &k, &negs, 0.01).unwrap();
        assert!(l1 > l01 && l01 > l001, "{l1} > {l01} > {l001} expected");
        assert!(l001 < 1e-6, "loss should approach 0, got {l001}");
    }

    #[test]
    fn loss_is_never_negative() {
        let mut rng = stream(22, &[0]);
        for _ in 0..200 {
            let q = emb(random_unit(8, &mut rng), Modality::Visual, Role::Query, 0);
            let k = emb(random_unit(8, &mut rng), Modality::Visual, Role::Key, 0);
            let n_count = rng.gen_range(0..12);
            let negs: Vec<Embedding> = (0..n_count)
                .map(|i| emb(random_unit(8, &mut rng), Modality::Visual, Role::Negative, 1 + i))
                .collect();
            let l = info_nce(&q, &k, &negs, rng.gen_range(0.05..2.0)).unwrap();
            assert!(l >= 0.0, "negative loss {l}");
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = stream(23, &[0]);
        for _ in 0..50 {
            let dim = rng.gen_range(2..24);
            let q = random_unit(dim, &mut rng);
            let k = random_unit(dim, &mut rng);
            let negs: Vec<Vec<f64>> =
                (0..rng.gen_range(1..32)).map(|_| random_unit(dim, &mut rng)).collect();
            let tau = rng.gen_range(0.05..1.5);
            let qe = emb(q.clone(), Modality::Visual, Role::Query, 0);
            let ke = emb(k.clone(), Modality::Visual, Role::Key, 0);
            let ne: Vec<Embedding> =
                negs.iter().map(|v| emb(v.clone(), Modality::Visual, Role::Negative, 1)).collect();
            let got = info_nce(&qe, &ke, &ne, tau).unwrap();
            let want = nce_oracle(&q, &k, &negs, tau);
            assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(24, &[0]);
        let dim = 10;
        let q = random_unit(dim, &mut rng);
        let k = random_unit(dim, &mut rng);
        let negs: Vec<Vec<f64>> = (0..6).map(|_| random_unit(dim, &mut rng)).collect();
        let tau = 0.2;
        let qe = emb(q.clone(), Modality::Visual, Role::Query, 0);
        let ke = emb(k.clone(), Modality::Visual, Role::Key, 0);
        let ne: Vec<Embedding> =
            negs.iter().map(|v| emb(v.clone(), Modality::Visual, Role::Negative, 1)).collect();
        let (_, dq) = info_nce_grad(&qe, &ke, &ne, tau).unwrap();
        let eps = 1e-7;
        for i in 0..dim {
            let mut qp = q.clone();
            qp[i] += eps;
            let fp = nce_oracle(&qp, &k, &negs, tau);
            qp[i] -= 2.0 * eps;
            let fm = nce_oracle(&qp, &k, &negs, tau);
            let num = (fp - fm) / (2.0 * eps);
            assert!((dq[i] - num).abs() < 1e-6, "dq[{i}]: {} vs {num}", dq[i]);
        }
    }

    #[test]
    fn cross_modal_symmetric_case_and_contract() {
        // both terms in the all-orthogonal case with 3 negatives -> 2 ln 4
        let basis = |i: usize, m: Modality, r: Role, idx: u64| {
            let mut v = vec![0.0; 12];
            v[i] = 1.0;
            emb(v, m, r, idx)
        };
        let v_q = basis(0, Modality::Visual, Role::Query, 0);
        let m_k = basis(1, Modality::Motion, Role::Key, 0);
        let m_q = basis(2, Modality::Motion, Role::Query, 0);
        let v_k = basis(3, Modality::Visual, Role::Key, 0);
        let v_negs: Vec<Embedding> =
            (4..7).map(|i| basis(i, Modality::Visual, Role::Negative, 5)).collect();
        let m_negs: Vec<Embedding> =
            (7..10).map(|i| basis(i, Modality::Motion, Role::Negative, 5)).collect();
        let l = cross_modal_loss(&v_q, &m_k, &v_negs, &m_q, &v_k, &m_negs, 1.0).unwrap();
        assert!((l - 2.0 * 4.0f64.ln()).abs() < 1e-12, "got {l}");

        // passing a motion embedding as the visual query is a contract error
        let bad = cross_modal_loss(&m_q, &m_k, &v_negs, &m_q, &v_k, &m_negs, 1.0);
        assert!(matches!(bad, Err(Error::Contract(_))));
    }

    #[test]
    fn cross_modal_identical_key_case_matches_oracle() {
        // m_k = v_q as vectors, all negatives orthogonal, tau = 1, one negative
        let mut v = vec![0.0; 6];
        v[0] = 1.0;
        let v_q = emb(v.clone(), Modality::Visual, Role::Query, 0);
        let m_k = emb(v.clone(), Modality::Motion, Role::Key, 0);
        let mut n1 = vec![0.0; 6];
        n1[1] = 1.0;
        let v_negs = vec![emb(n1.clone(), Modality::Visual, Role::Negative, 3)];
        let mut mq = vec![0.0; 6];
        mq[2] = 1.0;
        let m_q = emb(mq.clone(), Modality::Motion, Role::Query, 0);
        let mut vk = vec![0.0; 6];
        vk[3] = 1.0;
        let v_k = emb(vk.clone(), Modality::Visual, Role::Key, 0);
        let mut n2 = vec![0.0; 6];
        n2[4] = 1.0;
        let m_negs = vec![emb(n2.clone(), Modality::Motion, Role::Negative, 3)];
        let got = cross_modal_loss(&v_q, &m_k, &v_negs, &m_q, &v_k, &m_negs, 1.0).unwrap();
        let want = nce_oracle(&v, &v, &[n1.clone()], 1.0) + nce_oracle(&mq, &vk, &[n2], 1.0);
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        // first term is ln(1 + e^{0 - 1}) = ln(1 + e^-1)
        let first = (1.0 + (-1.0f64).exp()).ln();
        assert!((nce_oracle(&v, &v, &[n1], 1.0) - first).abs() < 1e-12);
    }

    #[test]
    fn bank_fifo_eviction_and_readback() {
        let mut bank = MemoryBank::new(Modality::Visual, 4, 3);
        for i in 0..5u64 {
            let mut v = vec![0.0; 3];
            v[(i % 3) as usize] = 1.0;
            bank.push(&emb(v, Modality::Visual, Role::Key, i)).unwrap();
        }
        assert_eq!(bank.len(), 4);
        let order: Vec<u64> = bank.entries_in_push_order().iter().map(|(_, i)| *i).collect();
        assert_eq!(order, vec![1, 2, 3, 4], "first entry evicted, push order kept");

        let mut bank = MemoryBank::new(Modality::Motion, 8, 4);
        let e = emb(unit(vec![0.1, 0.2, -0.3, 0.4]), Modality::Motion, Role::Key, 7);
        bank.push(&e).unwrap();
        let got = bank.negatives(999);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].vector, e.vector, "read-back must be identical");
    }

    #[test]
    fn bank_modality_mismatch_is_contract_error() {
        let mut bank = MemoryBank::new(Modality::Visual, 4, 2);
        let e = emb(vec![1.0, 0.0], Modality::Motion, Role::Key, 0);
        assert!(matches!(bank.push(&e), Err(Error::Contract(_))));
    }

    #[test]
    fn bank_negatives_exclude_same_video() {
        let mut bank = MemoryBank::new(Modality::Visual, 8, 2);
        for idx in [1u64, 1, 2] {
            bank.push(&emb(vec![1.0, 0.0], Modality::Visual, Role::Key, idx)).unwrap();
        }
        let negs = bank.negatives(1);
        assert_eq!(negs.len(), 1);
        assert_eq!(negs[0].video_index, 2);
        assert_eq!(bank.negatives(42).len(), 3, "absent index excludes nothing");
        let empty = MemoryBank::new(Modality::Visual, 8, 2);
        assert!(empty.negatives(1).is_empty());
    }

    #[test]
    fn exclusion_soundness_random_sequences() {
        let mut rng = stream(25, &[0]);
        for _ in 0..100 {
            let mut bank = MemoryBank::new(Modality::Motion, 16, 4);
            for _ in 0..rng.gen_range(0..40) {
                let idx = rng.gen_range(0..6u64);
                bank.push(&emb(random_unit(4, &mut rng), Modality::Motion, Role::Key, idx))
                    .unwrap();
            }
            for exclude in 0..6u64 {
                assert!(bank.negatives(exclude).iter().all(|n| n.video_index != exclude));
            }
        }
    }

    #[test]
    fn total_loss_matches_per_sample_oracle() {
        let mut rng = stream(26, &[0]);
        let dim = 8;
        let cfg = ContrastiveConfig { tau: 0.3, bank_capacity: 64, w_v: 1.0, w_m: 1.0, w_mv: 1.0 };
        let mut bank_v = MemoryBank::new(Modality::Visual, 64, dim);
        let mut bank_m = MemoryBank::new(Modality::Motion, 64, dim);
        for _ in 0..40 {
            let idx = rng.gen_range(0..10u64);
            bank_v
                .push(&emb(random_unit(dim, &mut rng), Modality::Visual, Role::Key, idx))
                .unwrap();
            bank_m
                .push(&emb(random_unit(dim, &mut rng), Modality::Motion, Role::Key, idx))
                .unwrap();
        }
        let pairs: Vec<PairEmbeddings> = (0..6)
            .map(|i| {
                let idx = i as u64;
                PairEmbeddings {
                    v_q: emb(random_unit(dim, &mut rng), Modality::Visual, Role::Query, idx),
                    v_k: emb(random_unit(dim, &mut rng), Modality::Visual, Role::Key, idx),
                    m_q: Some(emb(random_unit(dim, &mut rng), Modality::Motion, Role::Query, idx)),
                    m_k: Some(emb(random_unit(dim, &mut rng), Modality::Motion, Role::Key, idx)),
                    video_index: idx,
                }
            })
            .collect();
        let got = total_loss(&pairs, &bank_v, &bank_m, &cfg).unwrap();

        // scalar loop oracle over every negative
        let mut l_v = 0.0;
        let mut l_m = 0.0;
        let mut l_mv = 0.0;
        for p in &pairs {
            let vn: Vec<Vec<f64>> =
                bank_v.negatives(p.video_index).into_iter().map(|e| e.vector).collect();
            let mn: Vec<Vec<f64>> =
                bank_m.negatives(p.video_index).into_iter().map(|e| e.vector).collect();
            l_v += nce_oracle(&p.v_q.vector, &p.v_k.vector, &vn, cfg.tau);
            let mq = p.m_q.as_ref().unwrap();
            let mk = p.m_k.as_ref().unwrap();
            l_m += nce_oracle(&mq.vector, &mk.vector, &mn, cfg.tau);
            l_mv += nce_oracle(&p.v_q.vector, &mk.vector, &vn, cfg.tau)
                + nce_oracle(&mq.vector, &p.v_k.vector, &mn, cfg.tau);
        }
        let b = pairs.len() as f64;
        assert!((got.l_v - l_v / b).abs() < 1e-9, "l_v {} vs {}", got.l_v, l_v / b);
        assert!((got.l_m - l_m / b).abs() < 1e-9);
        assert!((got.l_mv - l_mv / b).abs() < 1e-9);
        assert!((got.total - (got.l_v + got.l_m + got.l_mv)).abs() < 1e-12);
    }

    #[test]
    fn rgb_only_weights_reduce_total_to_visual_term() {
        let mut rng = stream(27, &[0]);
        let dim = 6;
        let cfg = ContrastiveConfig { tau: 0.1, bank_capacity: 8, w_v: 1.0, w_m: 0.0, w_mv: 0.0 };
        let mut bank_v = MemoryBank::new(Modality::Visual, 8, dim);
        for i in 0..4u64 {
            bank_v
                .push(&emb(random_unit(dim, &mut rng), Modality::Visual, Role::Key, 100 + i))
                .unwrap();
        }
        let bank_m = MemoryBank::new(Modality::Motion, 8, dim);
        let pairs = vec![PairEmbeddings {
            v_q: emb(random_unit(dim, &mut rng), Modality::Visual, Role::Query, 0),
            v_k: emb(random_unit(dim, &mut rng), Modality::Visual, Role::Key, 0),
            m_q: None,
            m_k: None,
            video_index: 0,
        }];
        let out = total_loss(&pairs, &bank_v, &bank_m, &cfg).unwrap();
        assert_eq!(out.l_m, 0.0);
        assert_eq!(out.l_mv, 0.0);
        assert!((out.total - out.l_v).abs() < 1e-15);
        assert!(out.l_v > 0.0);
    }

    #[test]
    fn pair_integrity_is_enforced() {
        let cfg = ContrastiveConfig::default();
        let bank_v = MemoryBank::new(Modality::Visual, 8, 2);
        let bank_m = MemoryBank::new(Modality::Motion, 8, 2);
        let pairs = vec![PairEmbeddings {
            v_q: emb(vec![1.0, 0.0], Modality::Visual, Role::Query, 0),
            v_k: emb(vec![1.0, 0.0], Modality::Visual, Role::Key, 1), // wrong video
            m_q: None,
            m_k: None,
            video_index: 0,
        }];
        assert!(matches!(total_loss(&pairs, &bank_v, &bank_m, &cfg), Err(Error::Contract(_))));
    }
}
