//! Character- and word-level BiLSTM encoder with a linear emission head.
//!
//! The character stream of a sentence is its words joined by single spaces,
//! with one boundary space added at each end: `" w1 w2 ... wn "`. A word's
//! character representation is the forward hidden state at the space after
//! it concatenated with the backward hidden state at the space before it.
//! The word-level BiLSTM reads `[embedding ; char representation]`.
//!
//! All forward passes keep the activations needed for exact reverse-mode
//! gradients; nothing here allocates shared mutable state, so different
//! sentences can be encoded concurrently against the same parameters.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CHAR_UNK: usize = 0;
pub const CHAR_SPACE: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    chars: Vec<char>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
}

impl Vocab {
    /// Words are lowercased; characters keep their case.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut ws = BTreeSet::new();
        let mut cs = BTreeSet::new();
        for w in words {
            ws.insert(w.to_lowercase());
            cs.extend(w.chars());
        }
        cs.remove(&' ');
        let mut all_words = vec!["<pad>".to_string(), "<unk>".to_string()];
        all_words.extend(ws);
        let mut all_chars = vec!['\u{fffd}', ' '];
        all_chars.extend(cs);
        Vocab::from_tables(all_words, all_chars)
    }

    pub fn from_tables(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let char_index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Vocab {
            words,
            chars,
            word_index,
            char_index,
        }
    }

    /// Rebuilds the lookup maps after deserialization.
    pub fn reindex(self) -> Self {
        Vocab::from_tables(self.words, self.chars)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(&word.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    pub fn prepare<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> SentenceInput {
        let mut word_ids = Vec::new();
        let mut chars = Vec::new();
        for w in words {
            word_ids.push(self.word_id(w));
            chars.push(w.chars().map(|c| self.char_id(c)).collect());
        }
        SentenceInput { word_ids, chars }
    }
}

/// Vocabulary indices for one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceInput {
    pub word_ids: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
}

impl SentenceInput {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    /// Character stream with boundary spaces, and the stream index of the
    /// space that precedes each word (the last entry is the final space).
    fn char_stream(&self) -> (Vec<usize>, Vec<usize>) {
        let mut stream = vec![CHAR_SPACE];
        let mut spaces = vec![0];
        for w in &self.chars {
            stream.extend(w);
            stream.push(CHAR_SPACE);
            spaces.push(stream.len() - 1);
        }
        (stream, spaces)
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Tensor {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-scale..=scale)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self · x`
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · d`
    fn mul_t_add(&self, d: &[f64], out: &mut [f64]) {
        for (&dv, row) in d.iter().zip(self.data.chunks_exact(self.cols)) {
            if dv != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += dv * w;
                }
            }
        }
    }

    /// `self += d ⊗ x`
    fn outer_add(&mut self, d: &[f64], x: &[f64]) {
        for (&dv, row) in d.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if dv != 0.0 {
                for (w, xv) in row.iter_mut().zip(x) {
                    *w += dv * xv;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gradient rows of an embedding table; untouched rows are absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub cols: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        SparseRows {
            cols,
            rows: BTreeMap::new(),
        }
    }

    pub fn row_mut(&mut self, r: usize) -> &mut Vec<f64> {
        let cols = self.cols;
        self.rows.entry(r).or_insert_with(|| vec![0.0; cols])
    }

    pub fn add(&mut self, other: &SparseRows) {
        for (&r, v) in &other.rows {
            for (a, b) in self.row_mut(r).iter_mut().zip(v) {
                *a += b;
            }
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows.get(&r).map_or(0.0, |v| v[c])
    }
}

/// An LSTM with input, forget, candidate and output gates (in that order in
/// the stacked weight matrix).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    /// `4h × (input + h)`, acting on `[x ; h_prev]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

struct LstmStep {
    xh: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct LstmTrace {
    steps: Vec<LstmStep>,
    hidden: Vec<Vec<f64>>,
}

impl LstmParams {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let mut bias = Tensor::zeros(4 * hidden, 1);
        bias.data[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        LstmParams {
            input,
            hidden,
            weight: Tensor::uniform(4 * hidden, input + hidden, scale, rng),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            input,
            hidden,
            weight: Tensor::zeros(4 * hidden, input + hidden),
            bias: Tensor::zeros(4 * hidden, 1),
        }
    }

    fn forward(&self, inputs: &[&[f64]]) -> LstmTrace {
        let h = self.hidden;
        let mut hprev = vec![0.0; h];
        let mut cprev = vec![0.0; h];
        let mut steps = Vec::with_capacity(inputs.len());
        let mut hidden = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut xh = Vec::with_capacity(self.input + h);
            xh.extend_from_slice(x);
            xh.extend_from_slice(&hprev);
            let mut z = self.bias.data.clone();
            self.weight.mul_add(&xh, &mut z);
            for k in 0..h {
                z[k] = sigmoid(z[k]);
                z[h + k] = sigmoid(z[h + k]);
                z[2 * h + k] = z[2 * h + k].tanh();
                z[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            let mut c = vec![0.0; h];
            let mut tanh_c = vec![0.0; h];
            let mut hnew = vec![0.0; h];
            for k in 0..h {
                c[k] = z[h + k] * cprev[k] + z[k] * z[2 * h + k];
                tanh_c[k] = c[k].tanh();
                hnew[k] = z[3 * h + k] * tanh_c[k];
            }
            steps.push(LstmStep {
                xh,
                gates: z,
                c_prev: std::mem::replace(&mut cprev, c),
                tanh_c,
            });
            hidden.push(hnew.clone());
            hprev = hnew;
        }
        LstmTrace { steps, hidden }
    }

    /// Backpropagates `d_hidden` (one vector per step) through the trace,
    /// accumulating into `grads`; returns the input gradients.
    fn backward(&self, trace: &LstmTrace, d_hidden: &[Vec<f64>], grads: &mut LstmParams) -> Vec<Vec<f64>> {
        let h = self.hidden;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut d_inputs = vec![Vec::new(); trace.steps.len()];
        let mut dz = vec![0.0; 4 * h];
        for (t, step) in trace.steps.iter().enumerate().rev() {
            let g = &step.gates;
            for k in 0..h {
                let dh = d_hidden[t][k] + dh_next[k];
                let (i, f, cand, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = step.tanh_c[k];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * cand * i * (1.0 - i);
                dz[h + k] = dc * step.c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - cand * cand);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            grads.weight.outer_add(&dz, &step.xh);
            for (b, d) in grads.bias.data.iter_mut().zip(&dz) {
                *b += d;
            }
            let mut dxh = vec![0.0; self.input + h];
            self.weight.mul_t_add(&dz, &mut dxh);
            dh_next.copy_from_slice(&dxh[self.input..]);
            dxh.truncate(self.input);
            d_inputs[t] = dxh;
        }
        d_inputs
    }

    fn add(&mut self, other: &LstmParams) {
        for (a, b) in self.weight.data.iter_mut().zip(&other.weight.data) {
            *a += b;
        }
        for (a, b) in self.bias.data.iter_mut().zip(&other.bias.data) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
}

impl Default for EncoderDims {
    /// Desk-scale profile.
    fn default() -> Self {
        EncoderDims {
            word_dim: 32,
            char_dim: 16,
            char_hidden: 16,
            word_hidden: 32,
        }
    }
}

impl EncoderDims {
    /// Hidden sizes 100 (characters) and 300 (words).
    pub fn full() -> Self {
        EncoderDims {
            word_dim: 100,
            char_dim: 30,
            char_hidden: 100,
            word_hidden: 300,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.word_hidden
    }
}

/// Shared representation layers (everything below the emission projection).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub word_emb: Tensor,
    pub char_emb: Tensor,
    pub char_fwd: LstmParams,
    pub char_bwd: LstmParams,
    pub word_fwd: LstmParams,
    pub word_bwd: LstmParams,
}

/// Activations of one encoder pass.
pub struct EncoderTrace {
    stream: Vec<usize>,
    spaces: Vec<usize>,
    char_fwd: LstmTrace,
    char_bwd: LstmTrace,
    word_inputs: Vec<Vec<f64>>,
    word_fwd: LstmTrace,
    word_bwd: LstmTrace,
    /// `[→h_i ; ←h_i]` per word.
    pub hidden: Vec<Vec<f64>>,
}

impl EncoderTrace {
    pub fn char_reprs(&self) -> Vec<Vec<f64>> {
        let n = self.spaces.len() - 1;
        let last = self.stream.len() - 1;
        (0..n)
            .map(|i| {
                let mut v = self.char_fwd.hidden[self.spaces[i + 1]].clone();
                v.extend_from_slice(&self.char_bwd.hidden[last - self.spaces[i]]);
                v
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub word_emb: SparseRows,
    pub char_emb: SparseRows,
    pub char_fwd: LstmParams,
    pub char_bwd: LstmParams,
    pub word_fwd: LstmParams,
    pub word_bwd: LstmParams,
}

impl EncoderGrads {
    pub fn add(&mut self, other: &EncoderGrads) {
        self.word_emb.add(&other.word_emb);
        self.char_emb.add(&other.char_emb);
        self.char_fwd.add(&other.char_fwd);
        self.char_bwd.add(&other.char_bwd);
        self.word_fwd.add(&other.word_fwd);
        self.word_bwd.add(&other.word_bwd);
    }
}

impl EncoderParams {
    pub fn new<R: Rng>(dims: EncoderDims, vocab: &Vocab, rng: &mut R) -> Self {
        let word_in = dims.word_dim + 2 * dims.char_hidden;
        let mut word_emb = Tensor::uniform(vocab.num_words(), dims.word_dim, 0.1, rng);
        word_emb.row_mut(PAD).iter_mut().for_each(|x| *x = 0.0);
        EncoderParams {
            dims,
            word_emb,
            char_emb: Tensor::uniform(vocab.num_chars(), dims.char_dim, 0.1, rng),
            char_fwd: LstmParams::new(dims.char_dim, dims.char_hidden, rng),
            char_bwd: LstmParams::new(dims.char_dim, dims.char_hidden, rng),
            word_fwd: LstmParams::new(word_in, dims.word_hidden, rng),
            word_bwd: LstmParams::new(word_in, dims.word_hidden, rng),
        }
    }

    pub fn zeros(dims: EncoderDims, num_words: usize, num_chars: usize) -> Self {
        let word_in = dims.word_dim + 2 * dims.char_hidden;
        EncoderParams {
            dims,
            word_emb: Tensor::zeros(num_words, dims.word_dim),
            char_emb: Tensor::zeros(num_chars, dims.char_dim),
            char_fwd: LstmParams::zeros(dims.char_dim, dims.char_hidden),
            char_bwd: LstmParams::zeros(dims.char_dim, dims.char_hidden),
            word_fwd: LstmParams::zeros(word_in, dims.word_hidden),
            word_bwd: LstmParams::zeros(word_in, dims.word_hidden),
        }
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        let d = self.dims;
        let word_in = d.word_dim + 2 * d.char_hidden;
        EncoderGrads {
            word_emb: SparseRows::new(d.word_dim),
            char_emb: SparseRows::new(d.char_dim),
            char_fwd: LstmParams::zeros(d.char_dim, d.char_hidden),
            char_bwd: LstmParams::zeros(d.char_dim, d.char_hidden),
            word_fwd: LstmParams::zeros(word_in, d.word_hidden),
            word_bwd: LstmParams::zeros(word_in, d.word_hidden),
        }
    }

    /// Tensors in a fixed order (used by serialization and the optimizer).
    pub fn tensors(&self) -> [(&'static str, &Tensor); 10] {
        [
            ("word_emb", &self.word_emb),
            ("char_emb", &self.char_emb),
            ("char_fwd.weight", &self.char_fwd.weight),
            ("char_fwd.bias", &self.char_fwd.bias),
            ("char_bwd.weight", &self.char_bwd.weight),
            ("char_bwd.bias", &self.char_bwd.bias),
            ("word_fwd.weight", &self.word_fwd.weight),
            ("word_fwd.bias", &self.word_fwd.bias),
            ("word_bwd.weight", &self.word_bwd.weight),
            ("word_bwd.bias", &self.word_bwd.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        [
            &mut self.word_emb,
            &mut self.char_emb,
            &mut self.char_fwd.weight,
            &mut self.char_fwd.bias,
            &mut self.char_bwd.weight,
            &mut self.char_bwd.bias,
            &mut self.word_fwd.weight,
            &mut self.word_fwd.bias,
            &mut self.word_bwd.weight,
            &mut self.word_bwd.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    fn check_input(&self, input: &SentenceInput) -> Result<()> {
        if input.is_empty() {
            return Err(Error::Empty("sentence"));
        }
        if input.chars.len() != input.word_ids.len() {
            return Err(Error::LengthMismatch {
                expected: input.word_ids.len(),
                found: input.chars.len(),
            });
        }
        let bad_word = input.word_ids.iter().any(|&w| w >= self.word_emb.rows);
        let bad_char = input.chars.iter().flatten().any(|&c| c >= self.char_emb.rows);
        if bad_word || bad_char {
            return Err(Error::Config("input index outside the vocabulary".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &SentenceInput) -> Result<EncoderTrace> {
        self.check_input(input)?;
        let (stream, spaces) = input.char_stream();
        let chars: Vec<&[f64]> = stream.iter().map(|&c| self.char_emb.row(c)).collect();
        let char_fwd = self.char_fwd.forward(&chars);
        let rev: Vec<&[f64]> = chars.iter().rev().copied().collect();
        let char_bwd = self.char_bwd.forward(&rev);

        let mut trace = EncoderTrace {
            stream,
            spaces,
            char_fwd,
            char_bwd,
            word_inputs: Vec::new(),
            word_fwd: LstmTrace { steps: Vec::new(), hidden: Vec::new() },
            word_bwd: LstmTrace { steps: Vec::new(), hidden: Vec::new() },
            hidden: Vec::new(),
        };
        let char_reprs = trace.char_reprs();
        trace.word_inputs = self.word_inputs(input, &char_reprs)?;
        let xs: Vec<&[f64]> = trace.word_inputs.iter().map(Vec::as_slice).collect();
        trace.word_fwd = self.word_fwd.forward(&xs);
        let rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
        trace.word_bwd = self.word_bwd.forward(&rev);
        let n = input.len();
        trace.hidden = (0..n)
            .map(|i| {
                let mut v = trace.word_fwd.hidden[i].clone();
                v.extend_from_slice(&trace.word_bwd.hidden[n - 1 - i]);
                v
            })
            .collect();
        Ok(trace)
    }

    fn word_inputs(&self, input: &SentenceInput, char_reprs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if char_reprs.len() != input.len() {
            return Err(Error::LengthMismatch {
                expected: input.len(),
                found: char_reprs.len(),
            });
        }
        let width = 2 * self.dims.char_hidden;
        input
            .word_ids
            .iter()
            .zip(char_reprs)
            .map(|(&w, c)| {
                if c.len() != width {
                    return Err(Error::LengthMismatch {
                        expected: width,
                        found: c.len(),
                    });
                }
                let mut x = self.word_emb.row(w).to_vec();
                x.extend_from_slice(c);
                Ok(x)
            })
            .collect()
    }

    /// Exact gradients of `Σ_i ⟨d_hidden[i], hidden[i]⟩` w.r.t. every parameter.
    pub fn backward(&self, input: &SentenceInput, trace: &EncoderTrace, d_hidden: &[Vec<f64>], grads: &mut EncoderGrads) {
        let n = input.len();
        let hw = self.dims.word_hidden;
        let d_fwd: Vec<Vec<f64>> = d_hidden.iter().map(|d| d[..hw].to_vec()).collect();
        let d_bwd: Vec<Vec<f64>> = (0..n).map(|j| d_hidden[n - 1 - j][hw..].to_vec()).collect();
        let dx_fwd = self.word_fwd.backward(&trace.word_fwd, &d_fwd, &mut grads.word_fwd);
        let dx_bwd = self.word_bwd.backward(&trace.word_bwd, &d_bwd, &mut grads.word_bwd);

        let dw = self.dims.word_dim;
        let hc = self.dims.char_hidden;
        let len = trace.stream.len();
        let mut dchar_fwd = vec![vec![0.0; hc]; len];
        let mut dchar_bwd = vec![vec![0.0; hc]; len];
        for i in 0..n {
            let dx: Vec<f64> = dx_fwd[i].iter().zip(&dx_bwd[n - 1 - i]).map(|(a, b)| a + b).collect();
            for (g, d) in grads.word_emb.row_mut(input.word_ids[i]).iter_mut().zip(&dx[..dw]) {
                *g += d;
            }
            for (g, d) in dchar_fwd[trace.spaces[i + 1]].iter_mut().zip(&dx[dw..dw + hc]) {
                *g += d;
            }
            for (g, d) in dchar_bwd[len - 1 - trace.spaces[i]].iter_mut().zip(&dx[dw + hc..]) {
                *g += d;
            }
        }
        let dc_fwd = self.char_fwd.backward(&trace.char_fwd, &dchar_fwd, &mut grads.char_fwd);
        let dc_bwd = self.char_bwd.backward(&trace.char_bwd, &dchar_bwd, &mut grads.char_bwd);
        for p in 0..len {
            let row = grads.char_emb.row_mut(trace.stream[p]);
            for ((g, a), b) in row.iter_mut().zip(&dc_fwd[p]).zip(&dc_bwd[len - 1 - p]) {
                *g += a + b;
            }
        }
    }
}

/// Emission projection plus CRF transition scores over one tag space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `L × 2h_w`
    pub weight: Tensor,
    pub bias: Tensor,
    /// `(L+1) × (L+1)`, START row and STOP column last.
    pub transitions: Tensor,
}

impl HeadParams {
    pub fn new<R: Rng>(input: usize, num_labels: usize, rng: &mut R) -> Self {
        let scale = (6.0 / (input + num_labels) as f64).sqrt();
        HeadParams {
            weight: Tensor::uniform(num_labels, input, scale, rng),
            bias: Tensor::zeros(num_labels, 1),
            transitions: Tensor::zeros(num_labels + 1, num_labels + 1),
        }
    }

    pub fn zeros(input: usize, num_labels: usize) -> Self {
        HeadParams {
            weight: Tensor::zeros(num_labels, input),
            bias: Tensor::zeros(num_labels, 1),
            transitions: Tensor::zeros(num_labels + 1, num_labels + 1),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.weight.rows
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 3] {
        [
            ("weight", &self.weight),
            ("bias", &self.bias),
            ("transitions", &self.transitions),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.weight, &mut self.bias, &mut self.transitions]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// `scores[t] = W · h̃_t + b`, flattened `T × L`.
    pub fn emissions(&self, hidden: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(hidden.len() * self.num_labels());
        for h in hidden {
            if h.len() != self.weight.cols {
                return Err(Error::LengthMismatch {
                    expected: self.weight.cols,
                    found: h.len(),
                });
            }
            let mut row = self.bias.data.clone();
            self.weight.mul_add(h, &mut row);
            out.extend(row);
        }
        Ok(out)
    }

    /// Backpropagates emission gradients into `grads.weight`/`grads.bias`;
    /// returns gradients w.r.t. the hidden vectors.
    pub fn backward(&self, hidden: &[Vec<f64>], d_emissions: &[f64], grads: &mut HeadParams) -> Vec<Vec<f64>> {
        let l = self.num_labels();
        hidden
            .iter()
            .zip(d_emissions.chunks_exact(l))
            .map(|(h, d)| {
                grads.weight.outer_add(d, h);
                for (b, dv) in grads.bias.data.iter_mut().zip(d) {
                    *b += dv;
                }
                let mut dh = vec![0.0; h.len()];
                self.weight.mul_t_add(d, &mut dh);
                dh
            })
            .collect()
    }

    pub fn add(&mut self, other: &HeadParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.1.data) {
                *x += y;
            }
        }
    }
}

/// Per-word character representations `[→h^c ; ←h^c]`.
pub fn encode_chars(input: &SentenceInput, params: &EncoderParams) -> Result<Vec<Vec<f64>>> {
    params.check_input(input)?;
    let (stream, spaces) = input.char_stream();
    let chars: Vec<&[f64]> = stream.iter().map(|&c| params.char_emb.row(c)).collect();
    let fwd = params.char_fwd.forward(&chars);
    let rev: Vec<&[f64]> = chars.iter().rev().copied().collect();
    let bwd = params.char_bwd.forward(&rev);
    let last = stream.len() - 1;
    Ok((0..input.len())
        .map(|i| {
            let mut v = fwd.hidden[spaces[i + 1]].clone();
            v.extend_from_slice(&bwd.hidden[last - spaces[i]]);
            v
        })
        .collect())
}

/// Word-level BiLSTM over `[embedding ; char representation]`.
pub fn encode_words(input: &SentenceInput, char_reprs: &[Vec<f64>], params: &EncoderParams) -> Result<Vec<Vec<f64>>> {
    let xs = params.word_inputs(input, char_reprs)?;
    let xs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let fwd = params.word_fwd.forward(&xs);
    let rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
    let bwd = params.word_bwd.forward(&rev);
    let n = xs.len();
    Ok((0..n)
        .map(|i| {
            let mut v = fwd.hidden[i].clone();
            v.extend_from_slice(&bwd.hidden[n - 1 - i]);
            v
        })
        .collect())
}

/// Gradients of `⟨upstream, emissions⟩` w.r.t. encoder and projection.
pub fn encoder_backward(
    input: &SentenceInput,
    upstream: &[f64],
    encoder: &EncoderParams,
    head: &HeadParams,
) -> Result<(EncoderGrads, HeadParams)> {
    let trace = encoder.forward(input)?;
    let l = head.num_labels();
    if upstream.len() != input.len() * l {
        return Err(Error::LengthMismatch {
            expected: input.len() * l,
            found: upstream.len(),
        });
    }
    let mut head_grads = HeadParams::zeros(head.weight.cols, l);
    let d_hidden = head.backward(&trace.hidden, upstream, &mut head_grads);
    let mut grads = encoder.zero_grads();
    encoder.backward(input, &trace, &d_hidden, &mut grads);
    Ok((grads, head_grads))
}
