//! Quality metrics, aggregate statistics and rank correlation.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::record::EvaluationRecord;

/// Peak value of the 8-bit scale.
pub const PEAK: f64 = 255.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
pub const SSIM_C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

pub fn mse(reference: &Image, test: &Image) -> Result<f64> {
    reference.check_same_dimensions(test)?;
    let sum: f64 = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10 log10(255^2 / MSE)`; `f64::INFINITY` when the images are identical.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    let m = mse(reference, test)?;
    if m == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (PEAK * PEAK / m).log10())
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable 'valid' filtering: output is `(w - k + 1) x (h - k + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut tmp = vec![0.0; ow * h];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            tmp[r * ow + c] = kernel.iter().zip(&row[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows (std 1.5).
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    reference.check_same_dimensions(test)?;
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: SSIM_WINDOW,
        });
    }
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let x = reference.pixels();
    let y = test.pixels();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(x, w, h, &kernel);
    let mu_y = filter_valid(y, w, h, &kernel);
    let e_xx = filter_valid(&xx, w, h, &kernel);
    let e_yy = filter_valid(&yy, w, h, &kernel);
    let e_xy = filter_valid(&xy, w, h, &kernel);

    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    pub p25: f64,
    pub p75: f64,
    pub p90: f64,
}

/// Linear-interpolation percentile (type 7) of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn aggregate(values: &[f64]) -> Result<AggregateStats> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite value {v} in aggregate input"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // summing in sorted order keeps the mean permutation-invariant
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(AggregateStats {
        count: sorted.len(),
        mean,
        median: percentile_sorted(&sorted, 0.5),
        p10: percentile_sorted(&sorted, 0.10),
        p25: percentile_sorted(&sorted, 0.25),
        p75: percentile_sorted(&sorted, 0.75),
        p90: percentile_sorted(&sorted, 0.90),
    })
}

/// Methods of one noise regime ordered best-first by mean PSNR.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRanking {
    pub noise_regime: String,
    pub ordered_methods: Vec<String>,
    /// Mean PSNR, aligned with `ordered_methods`.
    pub scores: Vec<f64>,
}

impl MethodRanking {
    /// Sorts by descending score, ties broken by method name.
    pub fn from_scores(noise_regime: impl Into<String>, scores: impl IntoIterator<Item = (String, f64)>) -> Self {
        let mut pairs: Vec<(String, f64)> = scores.into_iter().collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (ordered_methods, scores) = pairs.into_iter().unzip();
        Self {
            noise_regime: noise_regime.into(),
            ordered_methods,
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.ordered_methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_methods.is_empty()
    }

    pub fn score_of(&self, method: &str) -> Option<f64> {
        self.ordered_methods
            .iter()
            .position(|m| m == method)
            .map(|i| self.scores[i])
    }
}

/// Mean PSNR per method for one regime (dataset); infinite PSNRs are left out
/// of the mean. A method whose every PSNR is infinite scores `+inf`.
pub fn rank_methods(records: &[EvaluationRecord], regime: &str) -> Result<MethodRanking> {
    let mut per_method: BTreeMap<&str, (f64, usize, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.dataset == regime) {
        let Some(p) = r.psnr_db else { continue };
        let e = per_method.entry(&r.method).or_default();
        if p.is_finite() {
            e.0 += p;
            e.1 += 1;
        } else {
            e.2 += 1;
        }
    }
    if per_method.is_empty() {
        return Err(Error::Empty);
    }
    Ok(MethodRanking::from_scores(
        regime,
        per_method.into_iter().map(|(m, (sum, n, _))| {
            let score = if n == 0 { f64::INFINITY } else { sum / n as f64 };
            (m.to_owned(), score)
        }),
    ))
}

/// Kendall tau-b between two rankings of the same method set, comparing
/// methods by their scores (equal scores are ties).
///
/// A single method is perfect agreement (1.0). When every method is tied in
/// one ranking the statistic is undefined and an error is returned.
pub fn kendall_tau(a: &MethodRanking, b: &MethodRanking) -> Result<f64> {
    let set_a: BTreeSet<&String> = a.ordered_methods.iter().collect();
    let set_b: BTreeSet<&String> = b.ordered_methods.iter().collect();
    if set_a != set_b || set_a.len() != a.len() || set_b.len() != b.len() {
        let only_a: Vec<_> = set_a.difference(&set_b).collect();
        let only_b: Vec<_> = set_b.difference(&set_a).collect();
        return Err(Error::MethodSetMismatch(format!(
            "{} has {:?}, {} has {:?}",
            a.noise_regime, only_a, b.noise_regime, only_b
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty);
    }
    if a.len() == 1 {
        return Ok(1.0);
    }
    let pairs: Vec<(f64, f64)> = a
        .ordered_methods
        .iter()
        .zip(&a.scores)
        .map(|(m, &s)| (s, b.score_of(m).expect("same method set")))
        .collect();
    tau_b(pairs).ok_or_else(|| {
        Error::DegenerateRanking(format!(
            "all methods tied in {} or {}",
            a.noise_regime, b.noise_regime
        ))
    })
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort on `ys`, returning the number of inversions (swaps).
fn count_inversions(ys: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = ys.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut ys[..mid], &mut buf[..mid]);
    swaps += count_inversions(&mut ys[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if ys[j] < ys[i] {
            buf[k] = ys[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = ys[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&ys[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&ys[j..n]);
    ys.copy_from_slice(&buf[..n]);
    swaps
}

/// Knight's O(n log n) tau-b. `None` when a tie correction zeroes the
/// denominator.
fn tau_b(mut pairs: Vec<(f64, f64)>) -> Option<f64> {
    let n = pairs.len() as u64;
    let n0 = n * (n - 1) / 2;
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs);
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = count_inversions(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys);

    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
    let numer = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    Some(numer / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(method: &str, dataset: &str, id: &str, psnr: f64) -> EvaluationRecord {
        EvaluationRecord {
            method: method.into(),
            dataset: dataset.into(),
            image_id: id.into(),
            psnr_db: Some(psnr),
            ssim: None,
            wall_time_s: 0.0,
            output_path: Default::default(),
        }
    }

    fn ranking(regime: &str, order: &[&str]) -> MethodRanking {
        let n = order.len();
        MethodRanking::from_scores(
            regime,
            order.iter().enumerate().map(|(i, m)| (m.to_string(), (n - i) as f64)),
        )
    }

    /// Independent O(n^2) tau-b by explicit pair enumeration.
    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let sx = (x[i] - x[j]).signum() as i64 * (x[i] != x[j]) as i64;
                let sy = (y[i] - y[j]).signum() as i64 * (y[i] != y[j]) as i64;
                match (sx, sy) {
                    (0, 0) => {}
                    (0, _) => tx += 1,
                    (_, 0) => ty += 1,
                    _ if sx == sy => c += 1,
                    _ => d += 1,
                }
            }
        }
        (c - d) as f64 / (((c + d + tx) * (c + d + ty)) as f64).sqrt()
    }

    #[test]
    fn psnr_hand_cases() {
        let a = Image::constant(8, 8, 0.0);
        let b = Image::constant(8, 8, 255.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr(&a, &b).unwrap() - 0.0).abs() < 1e-12);
        let c = Image::constant(8, 8, 50.0);
        // MSE 2500 -> 10 log10(65025 / 2500) = 14.1514
        assert!((psnr(&a, &c).unwrap() - 14.151).abs() < 0.01);
    }

    #[test]
    fn psnr_dimension_mismatch() {
        assert!(matches!(
            psnr(&Image::constant(3, 3, 0.0), &Image::constant(3, 4, 0.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psnr_strictly_decreasing_in_mse() {
        let a = Image::constant(10, 10, 100.0);
        let mut last = f64::INFINITY;
        for d in 1..60 {
            let p = psnr(&a, &Image::constant(10, 10, 100.0 + d as f64)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_constant_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Image::from_fn(32, 24, |_, _| rng.gen_range(0..256) as f64);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);

        let a = Image::constant(20, 20, 100.0);
        let b = Image::constant(20, 20, 150.0);
        let closed = (2.0 * 100.0 * 150.0 + SSIM_C1) / (100.0f64.powi(2) + 150.0f64.powi(2) + SSIM_C1);
        assert!((SSIM_C1 - 6.5025).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - closed).abs() < 1e-9);
    }

    #[test]
    fn ssim_errors() {
        let small = Image::constant(10, 20, 1.0);
        assert!(matches!(ssim(&small, &small), Err(Error::TooSmall { .. })));
        assert!(ssim(&Image::constant(12, 12, 1.0), &Image::constant(13, 12, 1.0)).is_err());
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let w = rng.gen_range(11..24);
            let h = rng.gen_range(11..24);
            let a = Image::from_fn(w, h, |_, _| rng.gen_range(0..256) as f64);
            let b = Image::from_fn(w, h, |_, _| rng.gen_range(0..256) as f64);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!(ab > -1.0 && ab < 1.0);
        }
    }

    #[test]
    fn aggregate_cases() {
        let s = aggregate(&[5.0]).unwrap();
        assert_eq!(
            (s.mean, s.median, s.p10, s.p25, s.p75, s.p90, s.count),
            (5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 1)
        );
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = aggregate(&v).unwrap();
        assert!((s.p10 - 10.9).abs() < 1e-12);
        assert!((s.median - 50.5).abs() < 1e-12);
        assert!((s.p90 - 90.1).abs() < 1e-12);
        assert!((s.mean - 50.5).abs() < 1e-12);
        assert!(matches!(aggregate(&[]), Err(Error::Empty)));
        assert!(aggregate(&[1.0, f64::INFINITY]).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_monotone_and_permutation_invariant(
            mut v in prop::collection::vec(-1e6f64..1e6, 1..60),
            seed in any::<u64>(),
        ) {
            let s = aggregate(&v).unwrap();
            prop_assert!(s.p10 <= s.p25 && s.p25 <= s.median && s.median <= s.p75 && s.p75 <= s.p90);
            use rand::seq::SliceRandom;
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate(&v).unwrap(), s);
        }

        #[test]
        fn tau_b_matches_brute_force_with_ties(
            pairs in prop::collection::vec((0u8..5, 0u8..5), 2..40),
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
            let brute = brute_tau_b(&x, &y);
            let fast = tau_b(x.iter().copied().zip(y.iter().copied()).collect());
            match fast {
                Some(t) => {
                    prop_assert!((t - brute).abs() < 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&t));
                }
                None => prop_assert!(brute.is_nan()),
            }
        }
    }

    #[test]
    fn tau_examples() {
        let methods = ["a", "b", "c", "d", "e", "f", "g"];
        let fwd = ranking("g", &methods);
        let rev: Vec<&str> = methods.iter().rev().copied().collect();
        assert_eq!(kendall_tau(&fwd, &fwd).unwrap(), 1.0);
        assert_eq!(kendall_tau(&fwd, &ranking("i", &rev)).unwrap(), -1.0);
        let t = kendall_tau(&ranking("x", &["A", "B", "C"]), &ranking("y", &["A", "C", "B"])).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tau_errors_and_degenerate_cases() {
        let a = ranking("x", &["A", "B"]);
        let b = ranking("y", &["A", "C"]);
        assert!(matches!(kendall_tau(&a, &b), Err(Error::MethodSetMismatch(_))));
        let single = ranking("x", &["A"]);
        assert_eq!(kendall_tau(&single, &single).unwrap(), 1.0);
        let tied = MethodRanking::from_scores("t", [("A".to_string(), 1.0), ("B".to_string(), 1.0)]);
        assert!(matches!(kendall_tau(&tied, &a), Err(Error::DegenerateRanking(_))));
    }

    #[test]
    fn rank_methods_orders_and_skips_infinite() {
        let records = vec![
            rec("bm3d", "gauss", "1", 23.90),
            rec("red30", "gauss", "1", 25.82),
            rec("identity", "gauss", "1", 14.0),
            rec("identity", "gauss", "2", f64::INFINITY),
            rec("identity", "other", "1", 99.0),
        ];
        let r = rank_methods(&records, "gauss").unwrap();
        assert_eq!(r.ordered_methods, ["red30", "bm3d", "identity"]);
        assert_eq!(r.scores, [25.82, 23.90, 14.0]);

        let single = rank_methods(&records, "other").unwrap();
        assert_eq!(single.ordered_methods, ["identity"]);
        assert!(rank_methods(&records, "none").is_err());
    }

    #[test]
    fn rank_ties_break_by_name() {
        let r = MethodRanking::from_scores("d", [("zeta".into(), 3.0), ("alpha".into(), 3.0), ("mid".into(), 4.0)]);
        assert_eq!(r.ordered_methods, ["mid", "alpha", "zeta"]);
    }

    proptest! {
        #[test]
        fn ranking_invariant_under_shift(
            quarters in prop::collection::vec(0u32..240, 1..8),
            shift_quarters in -40i32..40,
        ) {
            // quarter-dB grid keeps every sum exact, so no ties appear or vanish
            let shift = f64::from(shift_quarters) / 4.0;
            let records: Vec<_> = quarters.iter().enumerate()
                .map(|(i, &q)| rec(&format!("m{i}"), "d", "x", f64::from(q) / 4.0)).collect();
            let shifted: Vec<_> = records.iter().cloned()
                .map(|mut r| { r.psnr_db = r.psnr_db.map(|p| p + shift); r }).collect();
            prop_assert_eq!(
                rank_methods(&records, "d").unwrap().ordered_methods,
                rank_methods(&shifted, "d").unwrap().ordered_methods
            );
        }
    }
}
