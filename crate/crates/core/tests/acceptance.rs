//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mfake_core::biosim::{geometric_grid, sample_population, sweep_eer, EerEstimate};
use mfake_core::group::ToyScalar;
use mfake_core::harness::scenario::{genuine_reading, random_tampers, tamper_matrix, Deployment};
use mfake_core::harness::wire::{encode_payload, FieldWidths};
use mfake_core::harness::Interceptor;
use mfake_core::mffe::universal_hash;
use mfake_core::par::stream_rng;
use mfake_core::protocol::{SpSession, UserSession, WireMessage};
use mfake_core::{
    Bls12G1, Execution, LatticeBasis, MffeParams, PrimeOrderGroup, SecretBinding, Toy101, UhSeed,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// 1. closest vector vs exhaustive search

/// Solves `B u = x` for the upper-triangular basis by back substitution.
fn solve_upper(b: &LatticeBasis, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut u = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = (i + 1..n).map(|j| b.entry(i, j) * u[j]).sum();
        u[i] = (x[i] - tail) / b.entry(i, i);
    }
    u
}

fn dist_sq(b: &LatticeBasis, x: &[f64], v: &[i64]) -> f64 {
    let n = x.len();
    (0..n)
        .map(|i| {
            let bv: f64 = (0..n).map(|j| b.entry(i, j) * v[j] as f64).sum();
            (x[i] - bv).powi(2)
        })
        .sum()
}

fn cv_oracle() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for n in [2usize, 3, 4] {
        for d in [0.5, 1.0, 2.0] {
            let b = LatticeBasis::triangular(n, d).map_err(|e| e.to_string())?;
            // The basis must realise the triangular Gram matrix d^2/2 (I + J).
            for i in 0..n {
                for k in 0..n {
                    let g: f64 = (0..n).map(|r| b.entry(r, i) * b.entry(r, k)).sum();
                    let want = if i == k { d * d } else { d * d / 2.0 };
                    ensure((g - want).abs() < 1e-9, || {
                        format!("Gram mismatch n={n} d={d} ({i},{k}): {g} vs {want}")
                    })?;
                }
            }
            let mut rng = ChaCha20Rng::seed_from_u64(1000 + n as u64 * 10 + (d * 2.0) as u64);
            for trial in 0..500 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0) * d).collect();
                let u = solve_upper(&b, &x);
                let got = b
                    .closest_vector(&b.to_basis_coords(&x).map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?;
                let got_d = dist_sq(&b, &x, &got.0);

                let base: Vec<i64> = u.iter().map(|v| v.floor() as i64).collect();
                let mut best = f64::INFINITY;
                for code in 0..5usize.pow(n as u32) {
                    let mut c = code;
                    let cand: Vec<i64> = base
                        .iter()
                        .map(|f| {
                            let off = (c % 5) as i64 - 2;
                            c /= 5;
                            f + off
                        })
                        .collect();
                    best = best.min(dist_sq(&b, &x, &cand));
                }
                ensure((got_d - best).abs() <= 1e-9 * (1.0 + best), || {
                    format!("n={n} d={d} trial {trial}: got {got_d}, oracle {best}")
                })?;
                checked += 1;
            }
        }
    }
    let el = start.elapsed();
    ensure(el < Duration::from_secs(30), || {
        format!("took {}", secs(el))
    })?;
    Ok(format!("{checked} points, 0 violations, {}", secs(el)))
}

// ---------------------------------------------------------------------------
// 2. MFFE round trip inside the acceptance region

fn mffe_round_trip() -> Outcome {
    let mut notes = Vec::new();
    for n in [2usize, 16, 1024] {
        let d = 0.25;
        let params = MffeParams::<Bls12G1>::setup(n, d).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let failures: usize = Execution::default()
            .map(1000, |i| {
                let mut rng = stream_rng(2000 + n as u64, i as u64);
                let x0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let x1 = if n == 2 && i % 2 == 0 {
                    // anywhere in the Voronoi cell, not just the inscribed ball
                    loop {
                        let cand: Vec<f64> = x0.iter().map(|v| v + rng.gen_range(-d..d)).collect();
                        if params.basis().in_acceptance_region(&x0, &cand).unwrap() {
                            break cand;
                        }
                    }
                } else {
                    genuine_reading(&x0, d, &mut rng)
                };
                let secret = SecretBinding::<Bls12G1>::random(&mut rng);
                let (beta, sketch) = params.gen(&x0, &secret.z, &mut rng).unwrap();
                let again = params.rep(&x1, &secret.alpha, &sketch).unwrap();
                usize::from(again != beta)
            })
            .into_iter()
            .sum();
        let el = start.elapsed();
        ensure(failures == 0, || {
            format!("n={n}: {failures}/1000 mismatches")
        })?;
        if n == 1024 {
            ensure(el < Duration::from_secs(120), || {
                format!("n=1024 took {}", secs(el))
            })?;
        }
        notes.push(format!("n={n} 1000/1000 ({})", secs(el)));
    }
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------------------
// 3. wrong factors never reproduce the key

fn wrong_factor_divergence() -> Outcome {
    let n = 16;
    let d = 0.25;
    let params = MffeParams::<Bls12G1>::setup(n, d).map_err(|e| e.to_string())?;
    let collisions: usize = Execution::default()
        .map(10_000, |i| {
            let mut rng = stream_rng(3000, i as u64);
            let x0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let secret = SecretBinding::<Bls12G1>::random(&mut rng);
            let (beta, sketch) = params.gen(&x0, &secret.z, &mut rng).unwrap();
            let got = if i % 2 == 0 {
                let wrong = loop {
                    let a = Bls12G1::random_scalar(&mut rng);
                    if a != secret.alpha {
                        break a;
                    }
                };
                params
                    .rep(&genuine_reading(&x0, d, &mut rng), &wrong, &sketch)
                    .unwrap()
            } else {
                let outside = loop {
                    let cand: Vec<f64> = x0
                        .iter()
                        .map(|v| {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            v + 2.0 * d * e
                        })
                        .collect();
                    if !params.basis().in_acceptance_region(&x0, &cand).unwrap() {
                        break cand;
                    }
                };
                params.rep(&outside, &secret.alpha, &sketch).unwrap()
            };
            usize::from(got == beta)
        })
        .into_iter()
        .sum();
    ensure(collisions == 0, || format!("{collisions} collisions"))?;
    Ok("10000 trials (5000 wrong alpha, 5000 out-of-region), 0 collisions".into())
}

// ---------------------------------------------------------------------------
// 4. honest sessions agree, with k_u = k_s = g^(r_u r_s)

fn key_agreement() -> Outcome {
    let mut ok = 0;
    for dep_idx in 0..5u64 {
        let dep = Deployment::provision(64, 0.25, &mut ChaCha20Rng::seed_from_u64(4000 + dep_idx))
            .map_err(|e| e.to_string())?;
        let params = dep.rc.params();
        let results = Execution::default().map(100, |i| -> Result<(), String> {
            let mut rng = stream_rng(4100 + dep_idx, i as u64);
            let reading = dep.genuine_reading(&mut rng);
            let wire = |m: WireMessage| {
                mfake_core::harness::decode(&mfake_core::harness::encode(&m)).unwrap()
            };
            let (mut user, mu1) = UserSession::start(params, &dep.device);
            let mut sp = SpSession::new(params, &dep.sp);
            let WireMessage::Mu1(mu1) = wire(WireMessage::Mu1(mu1)) else {
                unreachable!()
            };
            let ms1 = sp
                .on_mu1(&mu1, &dep.revocations, &mut rng)
                .map_err(|e| e.to_string())?;
            let WireMessage::Ms1(ms1) = wire(WireMessage::Ms1(ms1)) else {
                unreachable!()
            };
            let mu2 = user
                .on_ms1(
                    &ms1,
                    &reading,
                    &dep.device.alpha,
                    &dep.revocations,
                    &mut rng,
                )
                .map_err(|e| e.to_string())?;
            let WireMessage::Mu2(mu2) = wire(WireMessage::Mu2(mu2)) else {
                unreachable!()
            };
            let ms2 = sp.on_mu2(&mu2).map_err(|e| format!("sp: {e}"))?;
            let WireMessage::Ms2(ms2) = wire(WireMessage::Ms2(ms2)) else {
                unreachable!()
            };
            user.on_ms2(&ms2).map_err(|e| format!("user: {e}"))?;

            let (ku, kp) = (user.session_key(), sp.session_key());
            ensure(ku.is_some() && ku == kp, || "session keys differ".into())?;
            let (r_u, k_u) = user.debug_dh().ok_or("no user dh")?;
            let (r_s, k_s) = sp.debug_dh().ok_or("no sp dh")?;
            ensure(k_u == k_s && k_u == params.g() * (r_u * r_s), || {
                "k_u, k_s, g^(r_u r_s) disagree".into()
            })
        });
        for (i, r) in results.into_iter().enumerate() {
            r.map_err(|e| format!("deployment {dep_idx} session {i}: {e}"))?;
            ok += 1;
        }
    }
    Ok(format!(
        "{ok}/500 sessions accepted with equal 32-byte keys and k_u = k_s = g^(r_u r_s)"
    ))
}

// ---------------------------------------------------------------------------
// 5. tampering is always detected

fn tamper_robustness() -> Outcome {
    let start = Instant::now();
    let dep = Deployment::provision(64, 0.25, &mut ChaCha20Rng::seed_from_u64(5000))
        .map_err(|e| e.to_string())?;
    let honest = dep.honest_session(5001);
    ensure(honest.both_accepted(), || {
        "reference session did not accept".into()
    })?;

    let matrix = tamper_matrix(&dep, 5001, 0xFF, Execution::default());
    ensure(matrix.len() == 448, || {
        format!("{} positions", matrix.len())
    })?;
    if let Some(c) = matrix.iter().find(|c| !c.rejected()) {
        return Err(format!(
            "flip of message {} offset {} not rejected: {:?}",
            c.message, c.offset, c.outcome
        ));
    }
    let random = random_tampers(&dep, 5002, 1000, Execution::default());
    if let Some(c) = random.iter().find(|c| !c.rejected()) {
        return Err(format!(
            "random flip message {} offset {} mask {:#04x} not rejected: {:?}",
            c.message, c.offset, c.mask, c.outcome
        ));
    }
    let el = start.elapsed();
    ensure(el < Duration::from_secs(300), || {
        format!("took {}", secs(el))
    })?;
    Ok(format!(
        "448/448 exhaustive byte flips and 1000/1000 random bit flips rejected, {}",
        secs(el)
    ))
}

// ---------------------------------------------------------------------------
// 6. message sizes

fn communication_size() -> Outcome {
    let dep = Deployment::provision(8, 0.5, &mut ChaCha20Rng::seed_from_u64(6000))
        .map_err(|e| e.to_string())?;
    let params = dep.rc.params();
    let mut rng = ChaCha20Rng::seed_from_u64(6001);
    let reading = dep.genuine_reading(&mut rng);
    let (mut user, mu1) = UserSession::start(params, &dep.device);
    let mut sp = SpSession::new(params, &dep.sp);
    let ms1 = sp
        .on_mu1(&mu1, &dep.revocations, &mut rng)
        .map_err(|e| e.to_string())?;
    let mu2 = user
        .on_ms1(
            &ms1,
            &reading,
            &dep.device.alpha,
            &dep.revocations,
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
    let ms2 = sp.on_mu2(&mu2).map_err(|e| e.to_string())?;
    let sizes = [
        encode_payload(&WireMessage::Mu1(mu1)).len(),
        encode_payload(&WireMessage::Ms1(ms1)).len(),
        encode_payload(&WireMessage::Mu2(mu2)).len(),
        encode_payload(&WireMessage::Ms2(ms2)).len(),
    ];
    ensure(sizes == [120, 216, 80, 32], || {
        format!("payloads {sizes:?}")
    })?;
    let total: usize = sizes.iter().sum();
    ensure(total == 448, || format!("total {total}"))?;
    let w = FieldWidths::DEPLOYED;
    ensure(
        w == FieldWidths {
            l_i: 64,
            l_e: 384,
            l_q: 256,
            l_s: 512,
        },
        || "widths".into(),
    )?;
    ensure(w.mutual_message_bytes() == sizes, || {
        "formula per message".into()
    })?;
    ensure(w.mutual_total_bytes() == 448, || "mutual formula".into())?;
    ensure(w.unilateral_total_bytes() == 344, || {
        "unilateral formula".into()
    })?;
    Ok(format!(
        "payloads {sizes:?} = {total} bytes; unilateral accounting 344 bytes"
    ))
}

// ---------------------------------------------------------------------------
// 7. FMR/FNMR tradeoff over d

fn rate_tradeoff() -> Outcome {
    // n = 64, inter_sigma = 1, noise_sigma = 0.02, 10^4 genuine and 10^4
    // impostor pairs per point, 10 geometrically spaced d in [0.01, 100].
    let pop = sample_population(64, 1000, 1.0, 0.02, &mut ChaCha20Rng::seed_from_u64(7000))
        .map_err(|e| e.to_string())?;
    let grid = geometric_grid(0.01, 100.0, 10);
    let sweep = sweep_eer(
        &pop,
        &grid,
        10_000,
        &mut ChaCha20Rng::seed_from_u64(7001),
        Execution::default(),
    )
    .map_err(|e| e.to_string())?;
    for w in sweep.reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let fmr_tol = 2.0 * (a.fmr_sigma().powi(2) + b.fmr_sigma().powi(2)).sqrt();
        let fnmr_tol = 2.0 * (a.fnmr_sigma().powi(2) + b.fnmr_sigma().powi(2)).sqrt();
        ensure(b.fmr + fmr_tol >= a.fmr, || {
            format!("FMR drops at d={}", b.d)
        })?;
        ensure(b.fnmr <= a.fnmr + fnmr_tol, || {
            format!("FNMR rises at d={}", b.d)
        })?;
    }
    let first = &sweep.reports[0];
    let last = &sweep.reports[sweep.reports.len() - 1];
    ensure(first.fnmr > 0.5 && last.fmr > 0.5, || {
        format!("grid does not span the tradeoff: {first:?} .. {last:?}")
    })?;
    let curve: Vec<String> = sweep
        .reports
        .iter()
        .map(|r| format!("d={:.3}:{:.4}/{:.4}", r.d, r.fmr, r.fnmr))
        .collect();
    match sweep.eer {
        EerEstimate::Crossing { d, rate } => Ok(format!(
            "monotone; EER {rate:.4} at d={d:.3}; fmr/fnmr {}",
            curve.join(" ")
        )),
        EerEstimate::NoCrossing => Err(format!("no crossing: {}", curve.join(" "))),
    }
}

// ---------------------------------------------------------------------------
// 8. universal hash at q = 101

fn universal_hash_quality() -> Outcome {
    const Q: f64 = 101.0;
    let trials = 100_000u32;
    let mut rng = ChaCha20Rng::seed_from_u64(8000);
    let mut collisions = 0u32;
    for _ in 0..trials {
        let seed = UhSeed::<Toy101>::random(2, &mut rng);
        let c: Vec<ToyScalar> = (0..2).map(|_| Toy101::random_scalar(&mut rng)).collect();
        let c2 = loop {
            let v: Vec<ToyScalar> = (0..2).map(|_| Toy101::random_scalar(&mut rng)).collect();
            if v != c {
                break v;
            }
        };
        let h1 = universal_hash(&seed, &c).map_err(|e| e.to_string())?;
        let h2 = universal_hash(&seed, &c2).map_err(|e| e.to_string())?;
        collisions += u32::from(h1 == h2);
    }
    let p = 1.0 / Q;
    let rate = collisions as f64 / trials as f64;
    let bound = p + 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    ensure(rate <= bound, || format!("collision rate {rate} > {bound}"))?;

    let params = MffeParams::<Toy101>::setup(2, 1.0).map_err(|e| e.to_string())?;
    let samples = 100_000usize;
    let mut hist = vec![0u32; 101];
    for _ in 0..samples {
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let secret = SecretBinding::<Toy101>::random(&mut rng);
        let (beta, _) = params
            .gen(&x, &secret.z, &mut rng)
            .map_err(|e| e.to_string())?;
        hist[beta.0.value() as usize] += 1;
    }
    let sd: f64 = 0.5
        * hist
            .iter()
            .map(|&c| (c as f64 / samples as f64 - p).abs())
            .sum::<f64>();
    ensure(sd <= 0.02, || format!("statistical distance {sd}"))?;
    Ok(format!(
        "n=1 collision rate {rate:.5} <= {bound:.5}; n=2 statistical distance {sd:.4} <= 0.02"
    ))
}

// ---------------------------------------------------------------------------
// 9. timing at n = 1024

fn timing_sanity() -> Outcome {
    let dep = Deployment::provision(1024, 0.25, &mut ChaCha20Rng::seed_from_u64(9000))
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = dep.session(9001, &Interceptor::passthrough());
    let el = start.elapsed();
    ensure(out.both_accepted(), || format!("session failed: {out:?}"))?;
    ensure(el < Duration::from_secs(10), || {
        format!("took {}", secs(el))
    })?;
    Ok(format!(
        "full exchange {} (user compute {}, sp compute {})",
        secs(el),
        secs(out.timings.user_total()),
        secs(out.timings.sp_total())
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("cv-oracle-equivalence", cv_oracle),
        ("mffe-round-trip", mffe_round_trip),
        ("wrong-factor-divergence", wrong_factor_divergence),
        ("end-to-end-key-agreement", key_agreement),
        ("mutual-auth-robustness", tamper_robustness),
        ("communication-size", communication_size),
        ("rate-tradeoff", rate_tradeoff),
        ("universal-hash-quality", universal_hash_quality),
        ("timing-sanity", timing_sanity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let el = secs(start.elapsed());
        match result {
            Ok(detail) => println!("PASS [{}] {name} ({el}): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name} ({el}): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
