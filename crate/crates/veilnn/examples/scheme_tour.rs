//! A guided walk through one masking scheme: what the coordinator keeps
//! secret, what a worker actually sees, and why decoding is exact.
//!
//! Run with: cargo run --example scheme_tour

use veilnn::coding::{CodingScheme, VirtualBatch, DEFAULT_C_MIN};
use veilnn::tensor::{rel_linf, Tensor};

fn main() -> veilnn::Result<()> {
    // Two real samples per virtual batch, one noise tensor, one redundant
    // column for integrity checks. Workers needed: k + m + ext = 4.
    let (k, m, e) = (2usize, 1usize, 1usize);
    let scheme = CodingScheme::generate(k, m, e, DEFAULT_C_MIN, 42)?;
    let p = scheme.p();

    println!("== the secret the coordinator holds ==");
    println!("mixing matrix (row i = source i's coefficient in each masked tensor):");
    for (i, row) in scheme.mixing_rows().iter().enumerate() {
        let kind = if i < k { "input" } else { "noise" };
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.3}")).collect();
        println!("  {kind} {i}: [{}]", cells.join(", "));
    }
    let gammas: Vec<String> = scheme.gamma().iter().map(|g| format!("{g:+.3}")).collect();
    println!("gradient-decode weights gamma: [{}]", gammas.join(", "));
    println!("redundant column: {:?}", scheme.ext_column(0).iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>());
    println!(
        "inverse-consistency residual: {:.2e} (how exactly decode inverts encode)",
        scheme.constraint_residual()
    );

    // Mask two tiny "images" with heavy noise (sigma^2 = 1e8, the default
    // training setting).
    let inputs = vec![
        Tensor::new(vec![4], vec![0.5, -1.25, 2.0, 0.75])?,
        Tensor::new(vec![4], vec![-0.25, 1.5, -0.125, 1.0])?,
    ];
    let mut rng = veilnn::rng::chacha(7, 0);
    let batch = VirtualBatch::draw(inputs.clone(), m, 0.0, 1e8, &mut rng)?;
    let encoded = scheme.encode(&batch)?;

    println!("\n== what a worker sees ==");
    println!("input 0 (secret):      {:?}", inputs[0].data());
    println!("masked tensor 0 (sent): {:?}", encoded.base()[0].data().iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>());
    println!("the noise term is ~1e4x larger than any input entry; the masked");
    println!("tensor is statistically dominated by noise the worker cannot remove.");

    // Workers apply some linear map to their masked tensor. Identity is the
    // simplest linear map, so decoding the payloads themselves must recover
    // the inputs.
    println!("\n== exact decoding ==");
    let decoded = scheme.decode_forward(&encoded.all()[..p])?;
    for (i, (dec, x)) in decoded.iter().zip(&inputs).enumerate() {
        let err = rel_linf(dec, x, 1e-30);
        println!("input {i}: relative reconstruction error {err:.2e}");
        assert!(err < 1e-9, "decode should be exact to float mixing error");
    }

    // The same masked tensors serve the gradient pass: the coordinator mixes
    // the per-sample gradient partners with the decode-transpose rows, each
    // worker evaluates one bilinear product, and the weighted sum of replies
    // is the exact summed gradient. Here the "bilinear product" is a scalar
    // dot product to keep the printout small.
    println!("\n== gradient equations reuse the same masked tensors ==");
    let deltas = vec![
        Tensor::new(vec![4], vec![0.1, 0.0, -0.2, 0.05])?,
        Tensor::new(vec![4], vec![-0.3, 0.15, 0.0, 0.1])?,
    ];
    let partners = scheme.combine_deltas(&deltas)?;
    let eqs: Vec<Tensor> = encoded.all()[..p]
        .iter()
        .zip(&partners)
        .map(|(xbar, d)| {
            let dot: f64 = xbar.data().iter().zip(d.data()).map(|(a, b)| a * b).sum();
            Tensor::new(vec![1], vec![dot])
        })
        .collect::<veilnn::Result<_>>()?;
    let got = scheme.decode_grad(&eqs)?;
    let want: f64 = inputs
        .iter()
        .zip(&deltas)
        .map(|(x, d)| x.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    println!("decoded summed gradient: {:+.12}", got.data()[0]);
    println!("direct summed gradient:  {want:+.12}");
    assert!((got.data()[0] - want).abs() / want.abs() < 1e-6);

    // Integrity: the redundant tensor is a known combination of the others,
    // so any single tampered reply breaks the predicted relation.
    println!("\n== the redundant column catches tampering ==");
    let verdict = scheme.verify_forward(encoded.all(), 1e-6)?;
    println!("clean replies:    residual {:.2e}, pass = {}", verdict.max_residual, verdict.pass);
    let mut tampered = encoded.all().to_vec();
    let bump = tampered[1].scale(1e-4); // a 0.01% nudge on one reply
    tampered[1].axpy(1.0, &bump)?;
    let verdict = scheme.verify_forward(&tampered, 1e-6)?;
    println!("one reply nudged: residual {:.2e}, pass = {}", verdict.max_residual, verdict.pass);
    assert!(!verdict.pass);

    println!("\nscheme tour complete");
    Ok(())
}
