use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_w_beta: f64,
    pub mae: f64,
}

impl SampleMetrics {
    pub const PERFECT: SampleMetrics = SampleMetrics {
        s_alpha: 1.0,
        e_phi: 1.0,
        f_w_beta: 1.0,
        mae: 0.0,
    };
}

/// Dataset-level means of the four metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_w_beta: f64,
    pub mae: f64,
    pub n_samples: usize,
    pub run_id: String,
}

impl MetricReport {
    pub fn metrics(&self) -> SampleMetrics {
        SampleMetrics {
            s_alpha: self.s_alpha,
            e_phi: self.e_phi,
            f_w_beta: self.f_w_beta,
            mae: self.mae,
        }
    }

    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<16} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>6}",
            self.s_alpha, self.e_phi, self.f_w_beta, self.mae, self.n_samples
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<16} {:>7} {:>7} {:>7} {:>7} {:>6}",
            "run", "S_a", "E_phi", "Fw_b", "MAE", "n"
        )
    }
}

/// Running mean over samples. Sums are compensated, so the aggregate does
/// not depend on the order samples arrive in beyond rounding noise.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    sums: [KahanSum; 4],
    n: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: &SampleMetrics) {
        for (sum, v) in self
            .sums
            .iter_mut()
            .zip([m.s_alpha, m.e_phi, m.f_w_beta, m.mae])
        {
            sum.add(v);
        }
        self.n += 1;
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        for (a, b) in self.sums.iter_mut().zip(other.sums.iter()) {
            a.add(b.value());
        }
        self.n += other.n;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn finish(&self, run_id: impl Into<String>) -> MetricReport {
        let n = self.n.max(1) as f64;
        let mean = |i: usize| self.sums[i].value() / n;
        MetricReport {
            s_alpha: mean(0),
            e_phi: mean(1),
            f_w_beta: mean(2),
            mae: mean(3),
            n_samples: self.n,
            run_id: run_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_is_order_independent() {
        let samples: Vec<SampleMetrics> = (0..97)
            .map(|i| {
                let x = ((i * 7919) % 1000) as f64 / 1000.0;
                SampleMetrics {
                    s_alpha: x,
                    e_phi: 1.0 - x / 3.0,
                    f_w_beta: x * x,
                    mae: x / 10.0,
                }
            })
            .collect();
        let mut fwd = MetricAccumulator::new();
        samples.iter().for_each(|s| fwd.push(s));
        let mut rev = MetricAccumulator::new();
        samples.iter().rev().for_each(|s| rev.push(s));
        let (a, b) = (fwd.finish("a"), rev.finish("b"));
        assert!((a.s_alpha - b.s_alpha).abs() < 1e-12);
        assert!((a.f_w_beta - b.f_w_beta).abs() < 1e-12);
        assert_eq!(a.n_samples, 97);
    }
}
