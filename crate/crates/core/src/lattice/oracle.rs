//! Exhaustive enumeration over all label sequences.
//!
//! Shares no dynamic-programming code with the parent module: every quantity
//! is a sum or max of [`log_sequence_potential`] over explicitly enumerated
//! sequences.

use super::{log_sequence_potential, logsumexp, Lattice, MaskConfig};
use crate::error::{Error, Result};
use crate::tagspace::LabelId;

/// Largest number of sequences the oracle will enumerate.
pub const ENUMERATION_CAP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    /// Discounted with `M'` when a mask is given, plain otherwise.
    pub log_partition: f64,
    pub log_gold_energy: Option<f64>,
    pub nll: Option<f64>,
    /// Lexicographically first maximizer of the unmasked potential.
    pub argmax: Vec<LabelId>,
    pub max_score: f64,
    /// Log-potential of every sequence, in odometer order, under `M'`.
    pub log_potentials: Vec<f64>,
}

/// All sequences of length `len` over `num_labels` labels, odometer order.
pub fn sequences(num_labels: usize, len: usize) -> impl Iterator<Item = Vec<LabelId>> {
    let total = (num_labels as u64).pow(len as u32);
    (0..total).map(move |mut code| {
        let mut y = vec![0; len];
        for slot in y.iter_mut().rev() {
            *slot = (code % num_labels as u64) as usize;
            code /= num_labels as u64;
        }
        y
    })
}

pub fn brute_force(lattice: &Lattice, mask: Option<&MaskConfig>) -> Result<OracleResult> {
    let count = (lattice.num_labels() as f64).powi(lattice.len() as i32);
    if count > ENUMERATION_CAP {
        return Err(Error::EnumerationCap(count));
    }
    let annotation = mask.map(|m| &m.annotation);
    let m_prime = mask.map_or(1.0, |m| m.m_prime);

    let mut log_potentials = Vec::with_capacity(count as usize);
    let mut gold_terms = Vec::new();
    let mut argmax = Vec::new();
    let mut max_score = f64::NEG_INFINITY;
    for y in sequences(lattice.num_labels(), lattice.len()) {
        log_potentials.push(log_sequence_potential(lattice, &y, m_prime, annotation)?);
        if let Some(mask) = mask {
            let a = &mask.annotation;
            let valid = y.iter().enumerate().all(|(t, &l)| a.gold[t] == l || a.is_alternative(t, l));
            if valid {
                gold_terms.push(log_sequence_potential(lattice, &y, mask.m, annotation)?);
            }
        }
        let plain = log_sequence_potential(lattice, &y, 1.0, None)?;
        if plain > max_score {
            max_score = plain;
            argmax = y;
        }
    }
    let log_partition = logsumexp(&log_potentials);
    let log_gold_energy = mask.map(|_| logsumexp(&gold_terms));
    Ok(OracleResult {
        log_partition,
        nll: log_gold_energy.map(|g| log_partition - g),
        log_gold_energy,
        argmax,
        max_score,
        log_potentials,
    })
}
