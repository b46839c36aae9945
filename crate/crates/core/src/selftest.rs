//! Randomized equivalence and gradient suites, runnable outside `cargo test`.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::cost_volume::{build_correlation_volume, build_pyramid, CostVolume, LocalCostVolume};
use crate::eval::evaluate;
use crate::features::FeatureMap;
use crate::imagery::{decode_pfm, encode_pfm, DisparityMap};
use crate::lookup::{multi_peak_lookup, CascadeSchedule, HypothesisSet, LookupSource};
use crate::oracle;
use crate::tensor::Tensor3;
use crate::updater::{
    conv_gru_step, regress_disparity_gradient, sequence_loss_gradient, sequence_loss_raw, soft_argmax, GruWeights,
};
use crate::weights::ConvLayer;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed deviation (suite-specific units), for the report.
    pub worst: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

pub fn run_selftest(seed: u64) -> SelfTestReport {
    let mut rng = SplitMix64::seed_from_u64(seed);
    SelfTestReport {
        suites: vec![
            correlation_suite(&mut rng, 50),
            lookup_suite(&mut rng, 200),
            regression_gradient_suite(&mut rng, 50),
            loss_gradient_suite(&mut rng, 50),
            gru_suite(&mut rng, 20),
            metric_suite(&mut rng, 100),
            pfm_suite(&mut rng, 100),
            schedule_suite(),
        ],
    }
}

fn uniform(rng: &mut SplitMix64, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Relative error with a floor on the denominator so near-zero gradients
/// compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_volume(rng: &mut SplitMix64, depth: usize, h: usize, w: usize) -> CostVolume {
    CostVolume {
        scale: 4,
        costs: Tensor3::from_vec(depth, h, w, uniform(rng, depth * h * w, -2.0, 2.0)).expect("sized"),
    }
}

fn correlation_suite(rng: &mut SplitMix64, cases: usize) -> SuiteResult {
    let mut failures = 0;
    for _ in 0..cases {
        let (c, h, w) = (rng.random_range(1..6), rng.random_range(1..9), rng.random_range(1..9));
        let depth = rng.random_range(2..17usize);
        let lf = uniform(rng, c * h * w, -1.0, 1.0);
        let rf = uniform(rng, c * h * w, -1.0, 1.0);
        let fm = |data: Vec<f32>| FeatureMap {
            scale: 4,
            tensor: Tensor3::from_vec(c, h, w, data).expect("sized"),
        };
        let vol = build_correlation_volume(&fm(lf.clone()), &fm(rf.clone()), (depth - 1) * 4).expect("valid");
        let pyr = build_pyramid(&vol);
        let want = oracle::correlation(&lf, &rf, c, h, w, depth);
        let pooled = oracle::pool_pairs(&want, depth, h * w);
        if vol.costs.data != want || pyr.levels()[1].costs.data != pooled {
            failures += 1;
        }
    }
    SuiteResult {
        name: "correlation volume and pyramid",
        cases,
        failures,
        worst: 0.0,
    }
}

fn lookup_suite(rng: &mut SplitMix64, cases: usize) -> SuiteResult {
    let mut failures = 0;
    let mut worst = 0.0f64;
    for case in 0..cases {
        let depth = rng.random_range(3..17usize);
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let k = rng.random_range(1..4usize).min(depth);
        let r = rng.random_range(0..3usize);
        let mut vol = random_volume(rng, depth, h, w);
        // coarse costs make ties common enough to exercise the tie rules
        if case % 3 == 0 {
            vol.costs.data.iter_mut().for_each(|v| *v = (*v * 2.0).round() / 2.0);
        }
        let pyr = build_pyramid(&vol);
        let max_d = (depth - 1) as f32;
        let refined = case % 2 == 1;
        let prev = if refined {
            let n = rng.random_range(k..k + 6);
            let values = uniform(rng, h * w * n, 0.0, max_d);
            let costs = Tensor3::from_vec(2 * n, h, w, uniform(rng, 2 * n * h * w, -1.0, 1.0)).expect("sized");
            Some((
                HypothesisSet {
                    k,
                    radius: 0,
                    per_pixel: n,
                    height: h,
                    width: w,
                    values,
                },
                LocalCostVolume {
                    levels: 2,
                    per_level: n,
                    costs,
                },
            ))
        } else {
            None
        };
        let source = match &prev {
            Some((hyps, costs)) => LookupSource::Refined {
                hypotheses: hyps,
                costs,
            },
            None => LookupSource::Initial(&vol),
        };
        let (hyps, local) = multi_peak_lookup(source, k, r, &pyr).expect("valid instance");
        let plane = h * w;
        for p in 0..plane {
            let (cand_values, cand_costs): (Vec<f32>, Vec<f32>) = match &prev {
                Some((ph, pc)) => (
                    ph.pixel(p).to_vec(),
                    (0..ph.per_pixel).map(|j| pc.costs.data[j * plane + p]).collect(),
                ),
                None => (
                    (0..depth).map(|d| d as f32).collect(),
                    (0..depth).map(|d| vol.costs.data[d * plane + p]).collect(),
                ),
            };
            let levels: Vec<Vec<f32>> = pyr
                .levels()
                .iter()
                .map(|l| (0..l.depth()).map(|d| l.costs.data[d * plane + p]).collect())
                .collect();
            let (omega, costs) = oracle::lookup_pixel(&cand_values, &cand_costs, k, r, max_d, &levels);
            if hyps.pixel(p) != omega.as_slice() {
                failures += 1;
                continue;
            }
            let n = hyps.per_pixel;
            for (c, want) in costs.iter().enumerate() {
                let got = local.costs.data[c * plane + p] as f64;
                let err = (got - want).abs();
                worst = worst.max(err);
                if err > 1e-6 {
                    failures += 1;
                }
            }
            debug_assert_eq!(costs.len(), 2 * n);
        }
    }
    SuiteResult {
        name: "multi-peak lookup vs brute force",
        cases,
        failures,
        worst,
    }
}

fn regression_gradient_suite(rng: &mut SplitMix64, cases: usize) -> SuiteResult {
    let mut failures = 0;
    let mut worst = 0.0f64;
    let step = 1e-4;
    for _ in 0..cases {
        let n = rng.random_range(2..10usize);
        let (h, w) = (rng.random_range(1..4), rng.random_range(1..4));
        let plane = h * w;
        let costs = uniform(rng, n * plane, -2.0, 2.0);
        let values = uniform(rng, n * plane, 0.0, 20.0);
        let upstream: Vec<f64> = (0..plane).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hyps = HypothesisSet {
            k: 1,
            radius: 0,
            per_pixel: n,
            height: h,
            width: w,
            values: values.clone(),
        };
        let local = LocalCostVolume {
            levels: 1,
            per_level: n,
            costs: Tensor3::from_vec(n, h, w, costs.clone()).expect("sized"),
        };
        let grad = regress_disparity_gradient(&local, &hyps, &upstream).expect("shapes agree");
        for p in 0..plane {
            let c: Vec<f64> = (0..n).map(|j| costs[j * plane + p] as f64).collect();
            let m: Vec<f64> = values[p * n..(p + 1) * n].iter().map(|&v| v as f64).collect();
            for j in 0..n {
                let (mut hi, mut lo) = (c.clone(), c.clone());
                hi[j] += step;
                lo[j] -= step;
                let fd = upstream[p] * (soft_argmax(&hi, &m) - soft_argmax(&lo, &m)) / (2.0 * step);
                let err = relative_error(grad[j * plane + p], fd);
                worst = worst.max(err);
                if err > 1e-4 {
                    failures += 1;
                }
            }
        }
    }
    SuiteResult {
        name: "regression gradient vs finite differences",
        cases,
        failures,
        worst,
    }
}

fn loss_gradient_suite(rng: &mut SplitMix64, cases: usize) -> SuiteResult {
    let mut failures = 0;
    let mut worst = 0.0f64;
    let step = 1e-4;
    let gamma = 0.9;
    for _ in 0..cases {
        let (iters, pixels) = (rng.random_range(1..6usize), rng.random_range(1..12usize));
        let gt: Vec<f64> = (0..pixels).map(|_| rng.random_range(0.0..30.0)).collect();
        let valid: Vec<bool> = (0..pixels).map(|i| i == 0 || rng.random_bool(0.8)).collect();
        let preds: Vec<Vec<f64>> = (0..iters)
            .map(|_| gt.iter().map(|g| g + rng.random_range(-3.0..3.0)).collect())
            .collect();
        let grad = sequence_loss_gradient(&preds, &gt, &valid, gamma).expect("support");
        for i in 0..iters {
            for p in 0..pixels {
                if (preds[i][p] - gt[p]).abs() < 1e-3 {
                    continue;
                }
                let mut hi = preds.clone();
                let mut lo = preds.clone();
                hi[i][p] += step;
                lo[i][p] -= step;
                let fd = (sequence_loss_raw(&hi, &gt, &valid, gamma).expect("support")
                    - sequence_loss_raw(&lo, &gt, &valid, gamma).expect("support"))
                    / (2.0 * step);
                let err = relative_error(grad[i][p], fd);
                worst = worst.max(err);
                if err > 1e-4 {
                    failures += 1;
                }
            }
        }
    }
    SuiteResult {
        name: "sequence loss gradient vs finite differences",
        cases,
        failures,
        worst,
    }
}

fn gru_suite(rng: &mut SplitMix64, cases: usize) -> SuiteResult {
    let mut failures = 0;
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (hc, ic, oc) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..5));
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let weights = GruWeights::random(hc, ic, oc, case as u64 ^ 0xfeed, 1.5);
        let hidden = uniform(rng, hc * h * w, -0.9, 0.9);
        let input = uniform(rng, ic * h * w, -2.0, 2.0);
        let (next, delta) = conv_gru_step(
            &Tensor3::from_vec(hc, h, w, hidden.clone()).expect("sized"),
            &Tensor3::from_vec(ic, h, w, input.clone()).expect("sized"),
            &weights,
        )
        .expect("shapes agree");
        let (want_h, want_d) = oracle::gru_step(
            &hidden,
            hc,
            &input,
            ic,
            h,
            w,
            &dense(&weights.update),
            &dense(&weights.reset),
            &dense(&weights.candidate),
            &dense(&weights.head),
        );
        let bounded = next.data.iter().all(|v| v.abs() < 1.0);
        let mut err = 0.0f64;
        for (a, b) in next.data.iter().zip(&want_h).chain(delta.data.iter().zip(&want_d)) {
            err = err.max((*a as f64 - b).abs());
        }
        worst = worst.max(err);
        if err > 1e-4 || !bounded {
            failures += 1;
        }
    }
    SuiteResult {
        name: "conv GRU step vs scalar reference",
        cases,
        failures,
        worst,
    }
}

fn dense(l: &ConvLayer) -> oracle::DenseConv<'_> {
    oracle::DenseConv {
        out_channels: l.out_channels,
        kh: l.kh,
        kw: l.kw,
        kernel: &l.kernel,
        bias: &l.bias,
    }
}

fn random_map(rng: &mut SplitMix64, w: usize, h: usize, scale: usize) -> DisparityMap {
    let values = uniform(rng, w * h, 0.0, 64.0);
    let valid = (0..w * h).map(|_| rng.random_bool(0.85)).collect();
    DisparityMap::from_values(w, h, scale, values)
        .and_then(|m| m.with_validity(valid))
        .expect("sized")
}

fn metric_suite(rng: &mut SplitMix64, cases: usize) -> SuiteResult {
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (w, h) = (rng.random_range(1..9), rng.random_range(1..9));
        let gt = random_map(rng, w, h, 1);
        let noise = uniform(rng, w * h, -6.0, 6.0);
        let pred_vals: Vec<f32> = gt.values().iter().zip(&noise).map(|(g, e)| (g + e).max(0.0)).collect();
        let pred = DisparityMap::from_values(w, h, 1, pred_vals).expect("sized");
        let occ: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.2)).collect();
        let mask = rng.random_bool(0.5).then_some(occ.as_slice());
        match (evaluate(&pred, &gt, mask), oracle::metrics(&pred, &gt, mask)) {
            (Ok(r), Some((epe, bad, d1, n))) => {
                let err = (r.epe - epe).abs();
                worst = worst.max(err);
                let monotone = r.bad.windows(2).all(|p| p[0] >= p[1]);
                if err > 1e-9 || r.bad != bad || r.d1 != d1 || r.evaluated != n || !monotone {
                    failures += 1;
                }
            }
            (Err(crate::Error::EmptySupport), None) => {}
            _ => failures += 1,
        }
    }
    SuiteResult {
        name: "metrics vs scalar reference",
        cases,
        failures,
        worst,
    }
}

fn pfm_suite(rng: &mut SplitMix64, cases: usize) -> SuiteResult {
    let mut failures = 0;
    for _ in 0..cases {
        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let scale = if rng.random_bool(0.5) { 1 } else { 4 };
        let map = random_map(rng, w, h, scale);
        let back = decode_pfm(&encode_pfm(&map), scale);
        let exact = back.as_ref().is_ok_and(|b| {
            b.validity() == map.validity()
                && b.values()
                    .iter()
                    .zip(map.values())
                    .zip(map.validity())
                    .all(|((x, y), ok)| !ok || x.to_bits() == y.to_bits())
        });
        if !exact {
            failures += 1;
        }
    }
    SuiteResult {
        name: "PFM round trip",
        cases,
        failures,
        worst: 0.0,
    }
}

fn schedule_suite() -> SuiteResult {
    let good = ["12x6,4x10,2x16", "4x32", "3x1,2x1,1x1,0x1"];
    let bad = ["4x10,4x10", "2x5,4x5", "12x0", "12", "", "ax3"];
    let mut failures = 0;
    for s in good {
        match s.parse::<CascadeSchedule>() {
            Ok(sch) if sch.to_string() == s => {}
            _ => failures += 1,
        }
    }
    for s in bad {
        if s.parse::<CascadeSchedule>().is_ok() {
            failures += 1;
        }
    }
    SuiteResult {
        name: "schedule grammar",
        cases: good.len() + bad.len(),
        failures,
        worst: 0.0,
    }
}
