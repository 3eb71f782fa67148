//! The statistical decision layer: attack success rate, Student-t quantiles,
//! the one-sided rejection rule, and the ASR threshold solver.
//!
//! The decision rule treats each trigger-stamped query as a Bernoulli trial
//! with unknown success probability `q`. Under the null hypothesis the target
//! behaves like a clean model, `q <= beta` with `beta = 1/K` (random chance).
//! With `m >= 30` queries the empirical success rate `alpha` is close enough
//! to normal for a t-test, and the null is rejected exactly when
//!
//! ```text
//! sqrt(m - 1) * (alpha - beta) - sqrt(alpha - alpha^2) * t_tau > 0
//! ```
//!
//! where `t_tau` is the `tau` quantile of the t distribution with `m - 1`
//! degrees of freedom.

mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of one black-box query: the predicted label, and whether it hit
/// the owner's target label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub predicted_label: usize,
    pub success: bool,
}

impl QueryOutcome {
    /// Builds an outcome from a prediction; `success` is the comparison
    /// against `target_label`, so the two fields cannot disagree.
    pub fn from_prediction(predicted_label: usize, target_label: usize) -> Self {
        QueryOutcome {
            predicted_label,
            success: predicted_label == target_label,
        }
    }
}

/// Parameters of the hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTestConfig {
    /// Number of queries `m` issued against the target.
    pub num_queries: usize,
    /// Confidence `tau` of the test, in (0, 1). Defaults to 0.95.
    pub confidence: f64,
    /// Number of classes `K` of the task; fixes chance level `beta = 1/K`.
    pub num_classes: usize,
    /// Research override: accept `m < 30` even though the normal
    /// approximation behind the test is then not guaranteed. Results carry
    /// `clt_satisfied = false`.
    #[serde(default)]
    pub allow_small_sample: bool,
}

impl HypothesisTestConfig {
    pub fn new(num_queries: usize, confidence: f64, num_classes: usize) -> Self {
        HypothesisTestConfig {
            num_queries,
            confidence,
            num_classes,
            allow_small_sample: false,
        }
    }

    /// Chance-level success probability `beta = 1/K`.
    pub fn beta(&self) -> f64 {
        1.0 / self.num_classes as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_queries < 30 && !self.allow_small_sample {
            return Err(Error::invalid(format!(
                "m = {} queries, but at least 30 are required for the normal \
                 approximation to hold (set allow_small_sample to override)",
                self.num_queries
            )));
        }
        if self.num_queries < 2 {
            return Err(Error::invalid("m must be at least 2"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid(format!(
                "confidence must lie strictly in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("the task needs at least 2 classes"));
        }
        Ok(())
    }
}

/// Full audit trail of one hypothesis test.
///
/// Every input and intermediate is retained so a verdict can be re-derived
/// (and disputed) from the serialized report alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub num_queries: usize,
    pub num_classes: usize,
    pub confidence: f64,
    /// Measured attack success rate `alpha`.
    pub asr: f64,
    /// Chance level `beta = 1/K`.
    pub beta: f64,
    /// Sample standard deviation `s` recomputed from `alpha` and `m`.
    pub sample_std: f64,
    /// t statistic `sqrt(m) * (alpha - beta) / s`; +/-infinity when `s = 0`
    /// (serialized as the strings "inf" / "-inf").
    #[serde(with = "extended_f64")]
    pub t_statistic: f64,
    /// `tau` quantile of the t distribution with `m - 1` degrees of freedom.
    pub t_quantile: f64,
    /// Smallest ASR at which this configuration rejects.
    pub threshold: f64,
    pub reject_null: bool,
    /// False when the `m >= 30` condition was overridden.
    pub clt_satisfied: bool,
}

/// Attack success rate: the fraction of successful outcomes.
pub fn asr(outcomes: &[QueryOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("query outcomes"));
    }
    let hits = outcomes.iter().filter(|o| o.success).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// Sample standard deviation of `m` Bernoulli outcomes with mean `alpha`,
/// in closed form: `s = sqrt(m * alpha * (1 - alpha) / (m - 1))`.
///
/// Equals the usual `sum((r_i - alpha)^2) / (m - 1)` computed from the raw
/// 0/1 outcomes.
pub fn sample_std(alpha: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::invalid("sample standard deviation needs m >= 2"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let m_f = m as f64;
    Ok((m_f * alpha * (1.0 - alpha) / (m_f - 1.0)).sqrt())
}

/// Quantile of Student's t distribution: the `t` with `CDF(t; dof) = prob`.
///
/// The CDF is expressed through the regularized incomplete beta function and
/// inverted by bracketed bisection; absolute error is below 1e-8 for the
/// quantiles that occur in audits.
pub fn student_t_quantile(prob: f64, dof: usize) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::invalid(format!(
            "quantile probability must lie strictly in (0, 1), got {prob}"
        )));
    }
    if dof == 0 {
        return Err(Error::invalid("degrees of freedom must be positive"));
    }
    if prob == 0.5 {
        return Ok(0.0);
    }
    if prob < 0.5 {
        return Ok(-student_t_quantile(1.0 - prob, dof)?);
    }

    let nu = dof as f64;
    let cdf = |t: f64| special::student_t_cdf(t, nu);

    // expand the bracket until it contains the quantile
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while cdf(hi) < prob {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::invalid("quantile out of representable range"));
        }
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-12 || (hi - lo) < mid.abs() * 1e-15 {
            break;
        }
        if cdf(mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Evaluates the rejection rule for a measured ASR `alpha` under `config`.
///
/// The inequality is applied exactly as stated (strictly greater than zero),
/// so `alpha = beta` never rejects. The t statistic is reported with the
/// degenerate `s = 0` cases taken as limits: `+inf` when `alpha > beta`,
/// `-inf` when `alpha < beta`.
pub fn reject_null(alpha: f64, config: &HypothesisTestConfig) -> Result<TestResult> {
    config.validate()?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }

    let m = config.num_queries;
    let m_f = m as f64;
    let beta = config.beta();
    let t_quantile = student_t_quantile(config.confidence, m - 1)?;

    let variance_term = (alpha - alpha * alpha).max(0.0);
    let lhs = (m_f - 1.0).sqrt() * (alpha - beta) - variance_term.sqrt() * t_quantile;
    let reject = lhs > 0.0;

    let s = sample_std(alpha, m)?;
    let t_statistic = if alpha == beta {
        0.0
    } else if s == 0.0 {
        if alpha > beta {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        m_f.sqrt() * (alpha - beta) / s
    };

    let threshold = asr_threshold(m, config.num_classes, config.confidence)?;

    Ok(TestResult {
        num_queries: m,
        num_classes: config.num_classes,
        confidence: config.confidence,
        asr: alpha,
        beta,
        sample_std: s,
        t_statistic,
        t_quantile,
        threshold,
        reject_null: reject,
        clt_satisfied: m >= 30,
    })
}

/// Smallest ASR at which the rejection rule holds, i.e. the infimum
/// `alpha*` in `(beta, 1]` such that the rule holds for every
/// `alpha > alpha*`. Found by bisection to well below 1e-6 absolute error.
///
/// For `confidence <= 0.5` the t quantile is non-positive and every
/// `alpha > beta` rejects, so the threshold degenerates to `beta`.
pub fn asr_threshold(m: usize, num_classes: usize, confidence: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::invalid("m must be at least 2"));
    }
    if num_classes < 2 {
        return Err(Error::invalid("the task needs at least 2 classes"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!(
            "confidence must lie strictly in (0, 1), got {confidence}"
        )));
    }

    let beta = 1.0 / num_classes as f64;
    if confidence <= 0.5 {
        return Ok(beta);
    }

    let m_f = m as f64;
    let t_quantile = student_t_quantile(confidence, m - 1)?;
    let rule = |alpha: f64| {
        (m_f - 1.0).sqrt() * (alpha - beta) - (alpha - alpha * alpha).max(0.0).sqrt() * t_quantile
    };

    if rule(1.0) <= 0.0 {
        return Err(Error::NoThreshold { beta });
    }

    // Walk down from alpha = 1 until the rule fails; the rule is monotone
    // increasing right of its last root, which the scan asserts.
    const STEP: f64 = 1e-3;
    let mut upper = 1.0;
    let mut upper_value = rule(upper);
    let mut lower = upper;
    loop {
        let candidate = (lower - STEP).max(beta);
        let value = rule(candidate);
        if value <= 0.0 {
            lower = candidate;
            break;
        }
        if value > upper_value + 1e-9 {
            return Err(Error::invalid(
                "rejection statistic is not monotone above its root; cannot bisect",
            ));
        }
        upper = candidate;
        upper_value = value;
        if candidate <= beta {
            // rule positive all the way down to beta: threshold is beta itself
            return Ok(beta);
        }
        lower = candidate;
    }

    let mut lo = lower;
    let mut hi = upper;
    for _ in 0..100 {
        if hi - lo < 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if rule(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Probability that two owners independently draw the same `trigger_bits`-bit
/// trigger pattern: `2^-trigger_bits`.
pub fn collision_probability(trigger_bits: u32) -> Result<f64> {
    if trigger_bits == 0 {
        return Err(Error::invalid("a trigger needs at least 1 bit"));
    }
    Ok(2.0_f64.powi(-(trigger_bits as i32)))
}

/// Maximum number of owners that can each mark at least `min_ratio` of the
/// training data: `floor(1 / min_ratio)`.
pub fn max_owner_count(min_ratio: f64) -> Result<usize> {
    if !(min_ratio > 0.0 && min_ratio <= 1.0) {
        return Err(Error::invalid(format!(
            "marking ratio must lie in (0, 1], got {min_ratio}"
        )));
    }
    // guard against representation error, e.g. 1/0.001 landing just below 1000
    Ok((1.0 / min_ratio + 1e-9).floor() as usize)
}

/// Serializes f64 keeping +/-infinity readable in JSON (as "inf" / "-inf").
mod extended_f64 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            ser.serialize_f64(*value)
        } else if *value > 0.0 {
            ser.serialize_str("inf")
        } else {
            ser.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Number(v) => Ok(v),
            Raw::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(D::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force t quantile: integrate the density by Simpson quadrature
    /// (through the substitution t = tan(theta), which maps the half line to
    /// [0, pi/2)) and invert the CDF by bisection. Shares no code with the
    /// incomplete-beta route it checks.
    mod oracle {
        fn density_transformed(theta: f64, nu: f64) -> f64 {
            let t = theta.tan();
            (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0) * (1.0 + t * t)
        }

        fn simpson(nu: f64, a: f64, b: f64, panels: usize) -> f64 {
            let h = (b - a) / panels as f64;
            let mut sum = density_transformed(a, nu) + density_transformed(b, nu);
            for i in 1..panels {
                let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
                sum += weight * density_transformed(a + i as f64 * h, nu);
            }
            sum * h / 3.0
        }

        fn cdf(x: f64, nu: f64) -> f64 {
            let half_mass = simpson(nu, 0.0, std::f64::consts::FRAC_PI_2 - 1e-13, 4000);
            let partial = simpson(nu, 0.0, x.abs().atan(), 4000);
            if x >= 0.0 {
                0.5 + partial / (2.0 * half_mass)
            } else {
                0.5 - partial / (2.0 * half_mass)
            }
        }

        pub fn quantile(prob: f64, dof: usize) -> f64 {
            assert!(prob > 0.5, "oracle covers the upper half only");
            let nu = dof as f64;
            let (mut lo, mut hi) = (0.0, 1.0);
            while cdf(hi, nu) < prob {
                lo = hi;
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid, nu) < prob {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }

    /// Independent route to the threshold: squaring the rejection rule turns
    /// it into a quadratic in alpha whose larger root is the threshold.
    fn threshold_by_quadratic(m: usize, k: usize, confidence: f64) -> f64 {
        let m_f = m as f64;
        let beta = 1.0 / k as f64;
        let t = student_t_quantile(confidence, m - 1).unwrap();
        let t2 = t * t;
        let a = m_f - 1.0 + t2;
        let b = 2.0 * beta * (m_f - 1.0) + t2;
        let c = beta * beta * (m_f - 1.0);
        (b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
    }

    #[test]
    fn asr_counts_successes() {
        let outcomes: Vec<QueryOutcome> = (0..30)
            .map(|i| QueryOutcome::from_prediction(if i < 12 { 1 } else { 0 }, 1))
            .collect();
        assert_eq!(asr(&outcomes).unwrap(), 0.4);

        let none: Vec<QueryOutcome> = (0..30)
            .map(|_| QueryOutcome::from_prediction(0, 1))
            .collect();
        assert_eq!(asr(&none).unwrap(), 0.0);

        let all: Vec<QueryOutcome> = (0..30)
            .map(|_| QueryOutcome::from_prediction(1, 1))
            .collect();
        assert_eq!(asr(&all).unwrap(), 1.0);

        assert!(matches!(asr(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn sample_std_matches_closed_form() {
        assert_eq!(sample_std(0.0, 30).unwrap(), 0.0);
        assert_eq!(sample_std(1.0, 30).unwrap(), 0.0);
        let expected = (30.0 * 0.25 / 29.0_f64).sqrt();
        assert!((sample_std(0.5, 30).unwrap() - expected).abs() < 1e-15);
        assert!((sample_std(0.5, 30).unwrap() - 0.50855).abs() < 1e-5);
        assert!(sample_std(0.5, 1).is_err());
    }

    #[test]
    fn quantile_reference_values() {
        // 0.5 quantile is 0 by symmetry
        for dof in [1, 5, 29, 1000] {
            assert_eq!(student_t_quantile(0.5, dof).unwrap(), 0.0);
        }
        // dof = 1 is Cauchy: quantile = tan(pi * (p - 1/2))
        let cauchy = (std::f64::consts::PI * 0.475).tan();
        assert!((student_t_quantile(0.975, 1).unwrap() - cauchy).abs() < 1e-9);
        assert!((student_t_quantile(0.975, 1).unwrap() - 12.7062).abs() < 1e-3);
        // the audit's workhorse quantile
        assert!((student_t_quantile(0.95, 29).unwrap() - 1.699127).abs() < 1e-4);
        // dof = 2 closed form: t = sqrt(2) * (2p - 1) / sqrt(4p(1-p)) at p = 0.8
        assert!((student_t_quantile(0.8, 2).unwrap() - 1.0606601717798214).abs() < 1e-9);
        // lower tail mirrors the upper tail
        assert!(
            (student_t_quantile(0.05, 29).unwrap() + student_t_quantile(0.95, 29).unwrap()).abs()
                < 1e-12
        );
    }

    #[test]
    fn quantile_matches_brute_force_oracle() {
        for &(prob, dof) in &[
            (0.95, 29),
            (0.975, 1),
            (0.9, 5),
            (0.99, 100),
            (0.75, 2),
            (0.6, 3),
            (0.999, 12),
        ] {
            let ours = student_t_quantile(prob, dof).unwrap();
            let reference = oracle::quantile(prob, dof);
            assert!(
                (ours - reference).abs() < 1e-7,
                "p={prob} dof={dof}: {ours} vs oracle {reference}"
            );
        }
    }

    #[test]
    fn quantile_approaches_normal_for_large_dof() {
        let z95 = 1.6448536269514722;
        assert!((student_t_quantile(0.95, 1_000_000).unwrap() - z95).abs() < 1e-3);
    }

    #[test]
    fn threshold_reference_values() {
        // frozen from the quadratic closed form
        let t10 = asr_threshold(30, 10, 0.95).unwrap();
        let t30 = asr_threshold(30, 30, 0.95).unwrap();
        let t100 = asr_threshold(30, 100, 0.95).unwrap();
        assert!((t10 - 0.233).abs() < 1e-3, "K=10: {t10}");
        assert!((t30 - 0.14416).abs() < 1e-3, "K=30: {t30}");
        assert!((t100 - 0.107886).abs() < 1e-3, "K=100: {t100}");

        for &(m, k, conf) in &[
            (30, 10, 0.95),
            (30, 30, 0.95),
            (30, 100, 0.95),
            (30, 2, 0.95),
            (50, 7, 0.99),
            (200, 1000, 0.9),
        ] {
            let solver = asr_threshold(m, k, conf).unwrap();
            let quadratic = threshold_by_quadratic(m, k, conf);
            assert!(
                (solver - quadratic).abs() < 1e-6,
                "m={m} k={k} conf={conf}: {solver} vs {quadratic}"
            );
        }
    }

    #[test]
    fn reject_null_reference_cases() {
        let config = HypothesisTestConfig::new(30, 0.95, 10);
        // well above the K=10 threshold
        let result = reject_null(0.396, &config).unwrap();
        assert!(result.reject_null);
        assert!(result.clt_satisfied);
        // clean-model ASR below it
        let result = reject_null(0.099, &config).unwrap();
        assert!(!result.reject_null);
        // equality with chance never rejects
        let result = reject_null(0.1, &config).unwrap();
        assert!(!result.reject_null);
        assert_eq!(result.t_statistic, 0.0);
    }

    #[test]
    fn reject_null_degenerate_asr() {
        let config = HypothesisTestConfig::new(30, 0.95, 10);
        let result = reject_null(1.0, &config).unwrap();
        assert!(result.reject_null);
        assert!(result.t_statistic.is_infinite() && result.t_statistic > 0.0);
        let result = reject_null(0.0, &config).unwrap();
        assert!(!result.reject_null);
        assert!(result.t_statistic.is_infinite() && result.t_statistic < 0.0);
    }

    #[test]
    fn small_m_needs_override() {
        let config = HypothesisTestConfig::new(10, 0.95, 10);
        assert!(matches!(
            reject_null(0.9, &config),
            Err(Error::InvalidConfig(_))
        ));
        let mut config = config;
        config.allow_small_sample = true;
        let result = reject_null(0.9, &config).unwrap();
        assert!(!result.clt_satisfied);
        assert!(result.reject_null);
    }

    #[test]
    fn test_result_json_round_trip() {
        let config = HypothesisTestConfig::new(30, 0.95, 30);
        for alpha in [0.0, 0.4, 1.0] {
            let result = reject_null(alpha, &config).unwrap();
            let json = serde_json::to_string(&result).unwrap();
            let back: TestResult = serde_json::from_str(&json).unwrap();
            assert_eq!(result, back);
        }
        // the degenerate t statistic stays readable
        let result = reject_null(1.0, &config).unwrap();
        let json = serde_json::to_string(&result).unwrap();
        assert!(json.contains("\"t_statistic\":\"inf\""));
    }

    #[test]
    fn collision_probability_values() {
        assert!((collision_probability(20).unwrap() - 1.0 / (1 << 20) as f64).abs() < 1e-18);
        assert!(collision_probability(20).unwrap() < 1e-6);
        assert_eq!(collision_probability(1).unwrap(), 0.5);
        assert!(collision_probability(0).is_err());
    }

    #[test]
    fn max_owner_count_values() {
        assert_eq!(max_owner_count(0.001).unwrap(), 1000);
        assert_eq!(max_owner_count(1.0).unwrap(), 1);
        assert_eq!(max_owner_count(0.25).unwrap(), 4);
        assert_eq!(max_owner_count(0.3).unwrap(), 3);
        assert!(max_owner_count(0.0).is_err());
        assert!(max_owner_count(1.5).is_err());
    }

    #[test]
    fn threshold_monotone_in_classes_and_confidence() {
        let mut previous = f64::INFINITY;
        for k in [2, 5, 10, 30, 100, 500] {
            let threshold = asr_threshold(30, k, 0.95).unwrap();
            assert!(threshold <= previous + 1e-12, "K={k}");
            previous = threshold;
        }
        let mut previous = 0.0;
        for conf in [0.6, 0.75, 0.9, 0.95, 0.99, 0.999] {
            let threshold = asr_threshold(30, 30, conf).unwrap();
            assert!(threshold >= previous - 1e-12, "conf={conf}");
            previous = threshold;
        }
    }

    proptest! {
        #[test]
        fn closed_form_std_equals_raw_summation(
            successes in proptest::collection::vec(any::<bool>(), 30..200)
        ) {
            let m = successes.len();
            let hits = successes.iter().filter(|&&s| s).count();
            let alpha = hits as f64 / m as f64;

            let closed = sample_std(alpha, m).unwrap();
            let summed: f64 = successes
                .iter()
                .map(|&s| {
                    let r = if s { 1.0 } else { 0.0 };
                    (r - alpha) * (r - alpha)
                })
                .sum::<f64>();
            let direct = (summed / (m as f64 - 1.0)).sqrt();
            prop_assert!((closed - direct).abs() < 1e-12);
        }

        #[test]
        fn threshold_is_the_rejection_boundary(
            m in 30usize..200,
            k in 2usize..200,
            confidence in 0.55f64..0.995,
        ) {
            let threshold = asr_threshold(m, k, confidence).unwrap();
            let config = HypothesisTestConfig { num_queries: m, confidence, num_classes: k, allow_small_sample: false };
            if threshold + 1e-3 <= 1.0 {
                let above = reject_null(threshold + 1e-3, &config).unwrap();
                prop_assert!(above.reject_null);
            }
            let below = reject_null((threshold - 1e-3).max(0.0), &config).unwrap();
            prop_assert!(!below.reject_null);
        }

        #[test]
        fn never_rejects_at_or_below_chance(
            m in 30usize..100,
            k in 2usize..50,
            confidence in 0.5f64..0.999,
            chance_scale in 0.0f64..=1.0,
        ) {
            let beta = 1.0 / k as f64;
            let alpha = beta * chance_scale;
            let config = HypothesisTestConfig { num_queries: m, confidence, num_classes: k, allow_small_sample: false };
            let result = reject_null(alpha, &config).unwrap();
            prop_assert!(!result.reject_null);
        }
    }
}
