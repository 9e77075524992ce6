//! 2-D intensity co-occurrence histograms and the entropy-based metrics
//! built on them (joint entropy, mutual information, NMI).

use super::RegistrationError;
use crate::camera::Image;

/// B x B co-occurrence counts with cached marginals. Bin `i` covers the
/// intensity interval `[i*256/B, (i+1)*256/B)`.
#[derive(Debug, Clone)]
pub struct JointHistogram {
    bins: usize,
    counts: Vec<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    total: f64,
}

impl JointHistogram {
    pub fn new(bins: usize) -> Result<Self, RegistrationError> {
        if bins < 2 {
            return Err(RegistrationError::BadBinCount(bins));
        }
        Ok(JointHistogram {
            bins,
            counts: vec![0.0; bins * bins],
            row_marginal: vec![0.0; bins],
            col_marginal: vec![0.0; bins],
            total: 0.0,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn count(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.bins + j]
    }

    #[inline]
    pub fn bin_of(&self, intensity: u8) -> usize {
        intensity as usize * self.bins / 256
    }

    /// Adds one co-occurrence of intensities (a, b).
    pub fn add(&mut self, a: u8, b: u8) {
        self.add_binned(self.bin_of(a), self.bin_of(b));
    }

    /// Adds one count directly at bin pair (i, j).
    pub fn add_binned(&mut self, i: usize, j: usize) {
        self.counts[i * self.bins + j] += 1.0;
        self.row_marginal[i] += 1.0;
        self.col_marginal[j] += 1.0;
        self.total += 1.0;
    }

    /// Builds a histogram from raw cell counts (row-major B x B).
    pub fn from_counts(bins: usize, cells: &[f64]) -> Result<Self, RegistrationError> {
        if bins < 2 || cells.len() != bins * bins {
            return Err(RegistrationError::BadBinCount(bins));
        }
        let mut h = JointHistogram::new(bins)?;
        for i in 0..bins {
            for j in 0..bins {
                let c = cells[i * bins + j];
                h.counts[i * bins + j] = c;
                h.row_marginal[i] += c;
                h.col_marginal[j] += c;
                h.total += c;
            }
        }
        Ok(h)
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }
}

/// Per-pixel co-occurrence histogram of two equally sized images.
pub fn joint_histogram(
    a: &Image,
    b: &Image,
    bins: usize,
) -> Result<JointHistogram, RegistrationError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(RegistrationError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let mut h = JointHistogram::new(bins)?;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        h.add(x, y);
    }
    Ok(h)
}

fn entropy_bits(values: impl Iterator<Item = f64>, total: f64) -> f64 {
    let mut h = 0.0;
    for v in values {
        if v > 0.0 {
            let p = v / total;
            h -= p * p.log2();
        }
    }
    h
}

/// H(A,B) in bits; 0 log 0 is taken as 0.
pub fn joint_entropy(h: &JointHistogram) -> Result<f64, RegistrationError> {
    if h.total <= 0.0 {
        return Err(RegistrationError::EmptyHistogram);
    }
    Ok(entropy_bits(h.counts.iter().copied(), h.total))
}

/// Marginal entropies (H(A), H(B)) in bits.
pub fn marginal_entropies(h: &JointHistogram) -> Result<(f64, f64), RegistrationError> {
    if h.total <= 0.0 {
        return Err(RegistrationError::EmptyHistogram);
    }
    Ok((
        entropy_bits(h.row_marginal.iter().copied(), h.total),
        entropy_bits(h.col_marginal.iter().copied(), h.total),
    ))
}

/// I(A,B) = sum p(a,b) log2 [ p(a,b) / (p(a) p(b)) ], in bits.
pub fn mutual_information(h: &JointHistogram) -> Result<f64, RegistrationError> {
    if h.total <= 0.0 {
        return Err(RegistrationError::EmptyHistogram);
    }
    let mut mi = 0.0;
    for i in 0..h.bins {
        for j in 0..h.bins {
            let c = h.counts[i * h.bins + j];
            if c > 0.0 {
                let p = c / h.total;
                let pa = h.row_marginal[i] / h.total;
                let pb = h.col_marginal[j] / h.total;
                mi += p * (p / (pa * pb)).log2();
            }
        }
    }
    Ok(mi)
}

/// NMI = (H(A) + H(B)) / H(A,B); >= 1, equal to 2 for identical images.
pub fn normalized_mutual_information(h: &JointHistogram) -> Result<f64, RegistrationError> {
    let hab = joint_entropy(h)?;
    if hab <= 0.0 {
        return Err(RegistrationError::DegenerateEntropy);
    }
    let (ha, hb) = marginal_entropies(h)?;
    Ok((ha + hb) / hab)
}
