//! Numerically stable scalar kernels shared by inference and learning.

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-300;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if libm::fabs(self.sum) >= libm::fabs(x) {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = Accumulator::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// `ln Σ exp(v)`, shifted by the maximum. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    scaled_log_sum_exp(values, 1.0)
}

/// `t · ln Σ exp(v / t)` for a temperature `t > 0`.
pub fn scaled_log_sum_exp(values: &[f64], t: f64) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|&v| libm::exp((v - m) / t)).sum();
    m + t * libm::log(s)
}

/// Writes `softmax(v / t)` into `out`.
pub fn softmax_into(values: &[f64], t: f64, out: &mut [f64]) {
    debug_assert_eq!(values.len(), out.len());
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = libm::exp((v - m) / t);
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Shannon entropy (nats) with the probability floor applied inside the log.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&q| q * libm::log(q.max(PROB_FLOOR))).sum::<f64>()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}
