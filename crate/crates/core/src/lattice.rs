//! Linear-chain CRF lattice with discounted alternative labels.
//!
//! A sequence `y` over a length-`T` lattice has log-potential
//!
//! ```text
//! Σ_t [ tr(y[t-1], y[t]) + em(t, y[t]) + log mask_t(y[t]) ] + tr(y[T-1], STOP)
//! ```
//!
//! where `y[-1]` is START and `mask_t(ℓ)` is the discount factor when `ℓ` is
//! an alternative label at position `t` and 1 otherwise. The gold energy sums
//! this (with factor `M`) over sequences whose every position is a valid
//! label; the partition sums it (with factor `M'`) over all sequences. Both
//! are one forward pass with the mask folded into the emission column as an
//! additive log term.
//!
//! Everything is in log-space. A zero factor is `-inf`; `logsumexp` of
//! nothing but `-inf` is `-inf`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tagspace::{LabelId, Step, TagSpace};

pub mod oracle;

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log(factor)` with `log 0 = -inf`.
pub fn log_factor(factor: f64) -> f64 {
    if factor == 0.0 {
        f64::NEG_INFINITY
    } else {
        factor.ln()
    }
}

/// Emission and transition log-scores for one sentence.
///
/// Transitions are an `(L+1) × (L+1)` row-major matrix: row `L` is START,
/// column `L` is STOP. Structurally forbidden transitions are `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    num_labels: usize,
    len: usize,
    emissions: Vec<f64>,
    transitions: Vec<f64>,
}

impl Lattice {
    pub fn new(num_labels: usize, emissions: Vec<f64>, transitions: Vec<f64>) -> Result<Self> {
        if num_labels == 0 || emissions.is_empty() || emissions.len() % num_labels != 0 {
            return Err(Error::LengthMismatch {
                expected: num_labels.max(1),
                found: emissions.len(),
            });
        }
        let side = num_labels + 1;
        if transitions.len() != side * side {
            return Err(Error::LengthMismatch {
                expected: side * side,
                found: transitions.len(),
            });
        }
        Ok(Lattice {
            num_labels,
            len: emissions.len() / num_labels,
            emissions,
            transitions,
        })
    }

    /// Builds a lattice over `space`, pinning BIO-forbidden transitions of the
    /// trainable scores `transition_params` to `-inf`.
    pub fn with_bio(space: &TagSpace, emissions: Vec<f64>, transition_params: &[f64]) -> Result<Self> {
        let l = space.num_labels();
        let mut transitions = transition_params.to_vec();
        for (from, row) in transitions.chunks_mut(l + 1).enumerate() {
            let from = if from == l { Step::Boundary } else { Step::Label(from) };
            for (to, score) in row.iter_mut().enumerate() {
                let to = if to == l { Step::Boundary } else { Step::Label(to) };
                if !space.bio_transition_allowed(from, to) {
                    *score = f64::NEG_INFINITY;
                }
            }
        }
        Lattice::new(l, emissions, transitions)
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn start(&self) -> usize {
        self.num_labels
    }

    pub fn stop(&self) -> usize {
        self.num_labels
    }

    #[inline]
    pub fn emission(&self, t: usize, label: LabelId) -> f64 {
        self.emissions[t * self.num_labels + label]
    }

    /// Transition score; `from == L` is START, `to == L` is STOP.
    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * (self.num_labels + 1) + to]
    }

    pub fn emissions(&self) -> &[f64] {
        &self.emissions
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Text rendering for debugging failed property cases.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lattice T={} L={}", self.len, self.num_labels);
        for t in 0..self.len {
            let row: Vec<String> = (0..self.num_labels)
                .map(|l| format!("{:>10.5}", self.emission(t, l)))
                .collect();
            let _ = writeln!(out, "em[{t}] {}", row.join(" "));
        }
        for from in 0..=self.num_labels {
            let row: Vec<String> = (0..=self.num_labels)
                .map(|to| format!("{:>10.5}", self.transition(from, to)))
                .collect();
            let name = if from == self.num_labels { "START".to_string() } else { from.to_string() };
            let _ = writeln!(out, "tr[{name:>5}] {}", row.join(" "));
        }
        out
    }
}

/// Gold labels plus per-position alternative sets for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialAnnotation {
    pub num_labels: usize,
    pub gold: Vec<LabelId>,
    /// Row-major `T × L`; `alternative[t*L + ℓ]` marks ℓ as an alternative at `t`.
    pub alternative: Vec<bool>,
}

impl PartialAnnotation {
    /// Fully annotated: no alternatives anywhere.
    pub fn exact(num_labels: usize, gold: Vec<LabelId>) -> Self {
        PartialAnnotation {
            alternative: vec![false; gold.len() * num_labels],
            num_labels,
            gold,
        }
    }

    /// Alternatives from a schema: wherever gold is `O`, every label of a type
    /// with `annotated[type] == false`.
    pub fn from_schema(space: &TagSpace, gold: Vec<LabelId>, annotated: &[bool]) -> Result<Self> {
        let l = space.num_labels();
        let mut alternative = Vec::with_capacity(gold.len() * l);
        for &g in &gold {
            if g >= l {
                return Err(Error::LabelOutOfRange(g));
            }
            alternative.extend(space.alternative_mask(g, annotated));
        }
        Ok(PartialAnnotation {
            num_labels: l,
            gold,
            alternative,
        })
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    #[inline]
    pub fn is_alternative(&self, t: usize, label: LabelId) -> bool {
        self.alternative[t * self.num_labels + label]
    }

    #[inline]
    pub fn is_valid(&self, t: usize, label: LabelId) -> bool {
        self.gold[t] == label || self.is_alternative(t, label)
    }

    pub fn has_alternatives(&self) -> bool {
        self.alternative.iter().any(|&a| a)
    }
}

/// Discount factors together with the sentence's annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskConfig {
    /// Gold-energy discount.
    pub m: f64,
    /// Partition discount.
    pub m_prime: f64,
    pub annotation: PartialAnnotation,
}

impl MaskConfig {
    pub fn new(m: f64, m_prime: f64, annotation: PartialAnnotation) -> Result<Self> {
        for (name, v) in [("M", m), ("M'", m_prime)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(MaskConfig {
            m,
            m_prime,
            annotation,
        })
    }

    fn check(&self, lattice: &Lattice) -> Result<()> {
        let a = &self.annotation;
        if a.len() != lattice.len() || a.num_labels != lattice.num_labels() {
            return Err(Error::LengthMismatch {
                expected: lattice.len(),
                found: a.len(),
            });
        }
        if let Some(&g) = a.gold.iter().find(|&&g| g >= lattice.num_labels()) {
            return Err(Error::LabelOutOfRange(g));
        }
        Ok(())
    }

    /// Additive log terms used by the partition: `log M'` at alternatives.
    fn partition_terms(&self) -> Vec<f64> {
        let discount = log_factor(self.m_prime);
        self.annotation
            .alternative
            .iter()
            .map(|&alt| if alt { discount } else { 0.0 })
            .collect()
    }

    /// Additive log terms used by the gold energy: `-inf` outside the valid
    /// set, `log M` at alternatives, 0 at gold.
    fn gold_terms(&self) -> Vec<f64> {
        let a = &self.annotation;
        let discount = log_factor(self.m);
        let l = a.num_labels;
        (0..a.len() * l)
            .map(|i| {
                let (t, label) = (i / l, i % l);
                if a.gold[t] == label {
                    0.0
                } else if a.alternative[i] {
                    discount
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }
}

/// Log-potential of `y` with discount `mask_value` on alternative labels.
pub fn log_sequence_potential(
    lattice: &Lattice,
    y: &[LabelId],
    mask_value: f64,
    annotation: Option<&PartialAnnotation>,
) -> Result<f64> {
    if y.len() != lattice.len() {
        return Err(Error::LengthMismatch {
            expected: lattice.len(),
            found: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= lattice.num_labels()) {
        return Err(Error::LabelOutOfRange(bad));
    }
    let discount = log_factor(mask_value);
    let mut prev = lattice.start();
    let mut total = 0.0;
    for (t, &label) in y.iter().enumerate() {
        total += lattice.transition(prev, label) + lattice.emission(t, label);
        if annotation.is_some_and(|a| a.is_alternative(t, label)) {
            total += discount;
        }
        prev = label;
    }
    Ok(total + lattice.transition(prev, lattice.stop()))
}

/// Forward–backward tables for one set of additive per-position terms.
struct ForwardBackward {
    log_z: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

fn forward_backward(lattice: &Lattice, terms: &[f64], want_beta: bool) -> ForwardBackward {
    let (n, l) = (lattice.len(), lattice.num_labels());
    let score = |t: usize, k: usize| lattice.emission(t, k) + terms[t * l + k];
    let mut alpha = vec![f64::NEG_INFINITY; n * l];
    for k in 0..l {
        alpha[k] = lattice.transition(lattice.start(), k) + score(0, k);
    }
    let mut buf = vec![0.0; l];
    for t in 1..n {
        for k in 0..l {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = alpha[(t - 1) * l + j] + lattice.transition(j, k);
            }
            alpha[t * l + k] = logsumexp(&buf) + score(t, k);
        }
    }
    for (j, b) in buf.iter_mut().enumerate() {
        *b = alpha[(n - 1) * l + j] + lattice.transition(j, lattice.stop());
    }
    let log_z = logsumexp(&buf);

    let mut beta = Vec::new();
    if want_beta {
        beta = vec![f64::NEG_INFINITY; n * l];
        for k in 0..l {
            beta[(n - 1) * l + k] = lattice.transition(k, lattice.stop());
        }
        for t in (0..n - 1).rev() {
            for j in 0..l {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = lattice.transition(j, k) + score(t + 1, k) + beta[(t + 1) * l + k];
                }
                beta[t * l + j] = logsumexp(&buf);
            }
        }
    }
    ForwardBackward { log_z, alpha, beta }
}

/// Adds `sign ×` the unary and pairwise marginals of the distribution behind
/// `fb` into the gradient buffers.
fn accumulate_marginals(
    lattice: &Lattice,
    terms: &[f64],
    fb: &ForwardBackward,
    sign: f64,
    d_em: &mut [f64],
    d_tr: &mut [f64],
) {
    let (n, l) = (lattice.len(), lattice.num_labels());
    let side = l + 1;
    for t in 0..n {
        for k in 0..l {
            let p = (fb.alpha[t * l + k] + fb.beta[t * l + k] - fb.log_z).exp();
            d_em[t * l + k] += sign * p;
            if t == 0 {
                d_tr[lattice.start() * side + k] += sign * p;
            }
            if t == n - 1 {
                d_tr[k * side + lattice.stop()] += sign * p;
            }
        }
    }
    for t in 1..n {
        for k in 0..l {
            let tail = lattice.emission(t, k) + terms[t * l + k] + fb.beta[t * l + k] - fb.log_z;
            if tail == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..l {
                let p = (fb.alpha[(t - 1) * l + j] + lattice.transition(j, k) + tail).exp();
                d_tr[j * side + k] += sign * p;
            }
        }
    }
}

/// Log of the discounted partition: every sequence, alternatives weighted by `M'`.
pub fn log_partition(lattice: &Lattice, mask: &MaskConfig) -> Result<f64> {
    mask.check(lattice)?;
    let log_z = forward_backward(lattice, &mask.partition_terms(), false).log_z;
    if log_z == f64::NEG_INFINITY {
        return Err(Error::EmptyLattice);
    }
    Ok(log_z)
}

/// Log of the discounted gold energy: sequences through valid labels only,
/// alternatives weighted by `M`.
pub fn log_gold_energy(lattice: &Lattice, mask: &MaskConfig) -> Result<f64> {
    mask.check(lattice)?;
    let log_g = forward_backward(lattice, &mask.gold_terms(), false).log_z;
    if log_g == f64::NEG_INFINITY {
        return Err(Error::ImpossibleGold);
    }
    Ok(log_g)
}

/// `log_partition(M') - log_gold_energy(M)`.
pub fn neg_log_likelihood(lattice: &Lattice, mask: &MaskConfig) -> Result<f64> {
    Ok(log_partition(lattice, mask)? - log_gold_energy(lattice, mask)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGradients {
    pub nll: f64,
    /// `T × L`, same layout as the lattice emissions.
    pub emissions: Vec<f64>,
    /// `(L+1) × (L+1)`; forbidden transitions always get 0.
    pub transitions: Vec<f64>,
}

/// NLL and its exact gradient: partition marginals minus gold-energy marginals.
pub fn nll_gradients(lattice: &Lattice, mask: &MaskConfig) -> Result<LatticeGradients> {
    mask.check(lattice)?;
    let p_terms = mask.partition_terms();
    let q_terms = mask.gold_terms();
    let p = forward_backward(lattice, &p_terms, true);
    if p.log_z == f64::NEG_INFINITY {
        return Err(Error::EmptyLattice);
    }
    let q = forward_backward(lattice, &q_terms, true);
    if q.log_z == f64::NEG_INFINITY {
        return Err(Error::ImpossibleGold);
    }
    let mut emissions = vec![0.0; lattice.emissions.len()];
    let mut transitions = vec![0.0; lattice.transitions.len()];
    accumulate_marginals(lattice, &p_terms, &p, 1.0, &mut emissions, &mut transitions);
    accumulate_marginals(lattice, &q_terms, &q, -1.0, &mut emissions, &mut transitions);
    Ok(LatticeGradients {
        nll: p.log_z - q.log_z,
        emissions,
        transitions,
    })
}

/// Unmasked max-product decoding. Ties go to the smallest label index.
pub fn viterbi(lattice: &Lattice) -> (Vec<LabelId>, f64) {
    let (n, l) = (lattice.len(), lattice.num_labels());
    let mut delta = vec![f64::NEG_INFINITY; n * l];
    let mut back = vec![0usize; n * l];
    for k in 0..l {
        delta[k] = lattice.transition(lattice.start(), k) + lattice.emission(0, k);
    }
    for t in 1..n {
        for k in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for j in 0..l {
                let s = delta[(t - 1) * l + j] + lattice.transition(j, k);
                if s > best {
                    best = s;
                    arg = j;
                }
            }
            delta[t * l + k] = best + lattice.emission(t, k);
            back[t * l + k] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for k in 0..l {
        let s = delta[(n - 1) * l + k] + lattice.transition(k, lattice.stop());
        if s > best {
            best = s;
            last = k;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t * l + path[t]];
    }
    (path, best)
}
