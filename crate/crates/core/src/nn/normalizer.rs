use serde::{Deserialize, Serialize};

const VAR_EPS: f64 = 1e-8;
const CLIP: f64 = 10.0;

/// Running per-feature mean and variance, merged batch by batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl Normalizer {
    /// Identity normalization (mean 0, variance 1) until the first update.
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s2))| ((v - m) / (s2 + VAR_EPS).sqrt()).clamp(-CLIP, CLIP))
            .collect()
    }

    /// Merge the moments of a batch of rows (parallel-variance combination).
    pub fn update<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) {
        let dim = self.dim();
        let mut n = 0.0;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            n += 1.0;
            for i in 0..dim {
                let d = row[i] - mean[i];
                mean[i] += d / n;
                m2[i] += d * (row[i] - mean[i]);
            }
        }
        if n == 0.0 {
            return;
        }
        if self.count == 0.0 {
            self.mean = mean;
            self.var = m2.iter().map(|s| s / n).collect();
            self.count = n;
            return;
        }
        let total = self.count + n;
        for i in 0..dim {
            let delta = mean[i] - self.mean[i];
            let m_a = self.var[i] * self.count;
            let m_b = m2[i];
            let m = m_a + m_b + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m / total;
        }
        self.count = total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merged_moments_match_direct_computation() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i as f64 * 0.7).sin()]).collect();
        let mut a = Normalizer::new(2);
        a.update(rows[..13].iter().map(Vec::as_slice));
        a.update(rows[13..].iter().map(Vec::as_slice));
        let mut b = Normalizer::new(2);
        b.update(rows.iter().map(Vec::as_slice));
        for i in 0..2 {
            let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let m = col.iter().sum::<f64>() / 50.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 50.0;
            assert!((a.mean[i] - m).abs() < 1e-12 && (b.mean[i] - m).abs() < 1e-12);
            assert!((a.var[i] - v).abs() < 1e-9 && (b.var[i] - v).abs() < 1e-9);
        }
    }

    #[test]
    fn fresh_normalizer_is_identity() {
        let z = Normalizer::new(3).normalize(&[1.0, -2.0, 0.5]);
        for (a, b) in z.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
