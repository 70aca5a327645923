//! Running mean/variance observation scaling.

#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    /// Sum of squared deviations (Welford).
    pub m2: Vec<f64>,
    pub frozen: bool,
}

const CLIP: f64 = 5.0;

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            frozen: false,
        }
    }

    pub fn observe(&mut self, x: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1.0;
        for (i, &v) in x.iter().enumerate() {
            let d = v - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (v - self.mean[i]);
        }
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![1.0; self.mean.len()];
        }
        self.m2.iter().map(|m| m / (self.count - 1.0)).collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let var = self.variance();
        x.iter()
            .zip(&self.mean)
            .zip(&var)
            .map(|((v, m), s2)| ((v - m) / (s2 + 1e-8).sqrt()).clamp(-CLIP, CLIP))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_batch_statistics() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0];
        let mut n = Normalizer::new(1);
        for x in xs {
            n.observe(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((n.mean[0] - mean).abs() < 1e-12);
        assert!((n.variance()[0] - var).abs() < 1e-12);
        n.frozen = true;
        n.observe(&[100.0]);
        assert!((n.mean[0] - mean).abs() < 1e-12);
        assert!(n.normalize(&[1e9])[0] <= 5.0);
    }
}
