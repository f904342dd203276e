//! The strongest realistic adversary: workers pooling their masked tensors
//! and running a least-squares reconstruction with full knowledge of the
//! coordinator's secret coefficients. Up to `m` colluders the noise wins;
//! the `m+1`-th capture lets the ring cancel the noise outright — the
//! threshold the scheme is sized for.
//!
//! Run with: cargo run --example collusion_attack

use veilnn::attack::{
    leakage_report, reconstruct_least_squares, AttackConfig, DEFAULT_RIDGE,
};
use veilnn::coding::{CodingScheme, VirtualBatch, DEFAULT_C_MIN};
use veilnn::privacy::{mi_bound_colluding, PrivacyParams};
use veilnn::protocol::worker::{AssumedKnowledge, CollusionLog};
use veilnn::tensor::Tensor;

fn main() -> veilnn::Result<()> {
    // -- Part 1: the clean dichotomy at k = 1, m = 1 ------------------------
    // One input masked by one noise tensor: two masked payloads total. A lone
    // colluder faces one equation in two unknowns drowned in sigma^2 = 1e6
    // noise; two colluders hold a full-rank system and recover the input to
    // float precision.
    let (dim, sigma2) = (64usize, 1e6);
    let scheme = CodingScheme::generate(1, 1, 0, DEFAULT_C_MIN, 2024)?;
    let mut rng = veilnn::rng::chacha(5, 0);
    let input = Tensor::randn(&[dim], 0.0, 1.0, &mut rng);
    let batch = VirtualBatch::draw(vec![input.clone()], 1, 0.0, sigma2, &mut rng)?;
    let encoded = scheme.encode(&batch)?;

    let capture = |slots: &[usize]| CollusionLog {
        ring: 0,
        group_id: 0,
        payloads: slots.iter().map(|&s| (s, encoded.base()[s].clone())).collect(),
        assumed_knowledge: AssumedKnowledge::CoefficientsKnown,
    };

    println!("== k = 1 input, m = 1 noise, sigma^2 = 1e6 ==");
    println!("input variance is 1.0, so MSE >= 1.0 means \"learned nothing\"");
    for slots in [&[0usize][..], &[0, 1]] {
        let rec = reconstruct_least_squares(
            &capture(slots),
            Some(&scheme),
            std::slice::from_ref(&input),
            DEFAULT_RIDGE,
        )?;
        let label = if slots.len() <= 1 { "m colluders: masked" } else { "m+1 colluders: EXACT" };
        println!(
            "  {} slot(s) captured | input MSE {:>12.3e} | {label}",
            slots.len(),
            rec.mse_per_input[0]
        );
    }

    // Without the coefficients even both payloads together are pure noise to
    // the attacker; the best answer is the prior mean.
    let blind = CollusionLog { assumed_knowledge: AssumedKnowledge::None, ..capture(&[0, 1]) };
    let rec = reconstruct_least_squares(&blind, Some(&scheme), std::slice::from_ref(&input), DEFAULT_RIDGE)?;
    println!(
        "  2 slots, coefficients unknown | input MSE {:>12.3e} | prior only",
        rec.mse_per_input[0]
    );

    // -- Part 2: what m+1 buys when k > 1 -----------------------------------
    // With k = 2 inputs and m = 1 noise there are three sources, so even two
    // captures cannot pin down the individual inputs — per-input MSE stays
    // huge. But two captures are one more than the noise dimension: the ring
    // can weight them to cancel the noise exactly, exposing a *noise-free
    // linear combination* of the inputs. That is the leak the m-colluder
    // bound refuses to cover.
    let scheme2 = CodingScheme::generate(2, 1, 0, DEFAULT_C_MIN, 4048)?;
    let xs: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[dim], 0.0, 1.0, &mut rng)).collect();
    let batch2 = VirtualBatch::draw(xs.clone(), 1, 0.0, sigma2, &mut rng)?;
    let enc2 = scheme2.encode(&batch2)?;
    let a = scheme2.mixing_rows(); // a[i][j]: weight of source i in payload j

    println!("\n== k = 2, m = 1: two captures leak a combination, not the inputs ==");
    let rec = reconstruct_least_squares(
        &CollusionLog {
            ring: 0,
            group_id: 0,
            payloads: vec![(0, enc2.base()[0].clone()), (1, enc2.base()[1].clone())],
            assumed_knowledge: AssumedKnowledge::CoefficientsKnown,
        },
        Some(&scheme2),
        &xs,
        DEFAULT_RIDGE,
    )?;
    println!(
        "  per-input MSE from 2 of 3 slots: {:.3e}, {:.3e}  (still masked)",
        rec.mse_per_input[0], rec.mse_per_input[1]
    );

    // Noise row is source index k = 2. Weight the payloads to cancel it:
    // a[2][1] * payload_0 - a[2][0] * payload_1 has zero noise coefficient.
    let (w0, w1) = (a[2][1], -a[2][0]);
    let mut combo = enc2.base()[0].scale(w0);
    combo.axpy(w1, &enc2.base()[1])?;
    let mut truth = xs[0].scale(a[0][0] * w0 + a[0][1] * w1);
    truth.axpy(a[1][0] * w0 + a[1][1] * w1, &xs[1])?;
    let err = combo
        .data()
        .iter()
        .zip(truth.data())
        .map(|(c, t)| (c - t).abs())
        .fold(0.0f64, f64::max);
    println!("  noise-cancelling combo vs its true value: max |err| = {err:.3e}");
    println!("  (an exact function of the secret inputs, recovered through 1e6 noise)");

    // -- Part 3: the dichotomy statistically ---------------------------------
    // 30 seeded trials per cell at k = 1, m = 1, fresh scheme and noise each
    // time; the noise draw for trial t is shared across the sigma^2 sweep, so
    // the trend across rows is not sampling luck.
    println!("\n== 30-trial means, k = 1, m = 1 ==");
    println!(
        "{:>10} | {:>13} | {:>15} | {:>12}",
        "sigma^2", "MSE, 1 coll.", "MSE, 2 coll.", "bound (nats)"
    );
    let trials = 30;
    for exp in [2, 4, 6, 8] {
        let s2 = 10f64.powi(exp);
        let p = PrivacyParams::default_for(1, 1, s2);
        let mean = |colluders: usize| -> veilnn::Result<f64> {
            let atk = AttackConfig { dim, ..AttackConfig::new(colluders, 7) };
            let rows = leakage_report(trials, &p, &atk)?;
            Ok(rows.iter().map(|r| r.mse).sum::<f64>() / trials as f64)
        };
        println!(
            "{:>10.0e} | {:>13.4e} | {:>15.4e} | {:>12.3e}",
            s2,
            mean(1)?,
            mean(2)?,
            mi_bound_colluding(&p),
        );
    }
    println!("\nwith m colluders the error *grows* with the noise the attacker must");
    println!("swallow; at m+1 it sits at float/ridge error regardless of noise power.");
    println!("the closed-form bound only ever promised the left column.");
    Ok(())
}
